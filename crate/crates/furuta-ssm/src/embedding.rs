//! Delay-coordinate embedding of scalar observables.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSeries {
    pub m_delays: usize,
    pub stride: usize,
    /// m × n; column j is [s_j, s_{j+stride}, …, s_{j+(m−1)stride}].
    pub vectors: DMatrix<f64>,
    pub timestamps: Vec<f64>,
}

impl EmbeddedSeries {
    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.ncols() == 0
    }

    /// One embedded point per row (n × m).
    pub fn points(&self) -> DMatrix<f64> {
        self.vectors.transpose()
    }

    /// Timestamps for a series starting at `t0` with sample spacing `dt`.
    pub fn with_time(mut self, t0: f64, dt: f64) -> Self {
        self.timestamps = (0..self.len()).map(|j| t0 + j as f64 * dt).collect();
        self
    }
}

pub fn embed(series: &[f64], m: usize, stride: usize) -> Result<EmbeddedSeries> {
    if m == 0 || stride == 0 {
        return Err(Error::InvalidParameter("m and stride must be positive".into()));
    }
    let span = (m - 1) * stride;
    if series.len() < span + 1 {
        return Err(Error::InsufficientSamples);
    }
    let n = series.len() - span;
    let vectors = DMatrix::from_fn(m, n, |k, j| series[j + k * stride]);
    Ok(EmbeddedSeries { m_delays: m, stride, vectors, timestamps: (0..n).map(|j| j as f64).collect() })
}

/// Takens bound 2d + 1.
pub fn estimate_min_embedding(d_ssm: usize) -> usize {
    2 * d_ssm + 1
}

/// Default delay count 5d.
pub fn default_embedding(d_ssm: usize) -> usize {
    5 * d_ssm
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub series: Vec<(EmbeddedSeries, Split)>,
    /// Embedded image of the equilibrium; already subtracted from every series.
    pub anchor: DVector<f64>,
}

impl Dataset {
    /// Embeds each series after subtracting the equilibrium observable value.
    pub fn from_series(
        series: &[(Vec<f64>, Split)],
        equilibrium: f64,
        m: usize,
        stride: usize,
    ) -> Result<Self> {
        if series.is_empty() {
            return Err(Error::Empty);
        }
        let mut out = Vec::with_capacity(series.len());
        for (s, split) in series {
            let shifted: Vec<f64> = s.iter().map(|v| v - equilibrium).collect();
            out.push((embed(&shifted, m, stride)?, *split));
        }
        Ok(Self { series: out, anchor: DVector::from_element(m, equilibrium) })
    }

    pub fn m_delays(&self) -> usize {
        self.anchor.len()
    }

    pub fn split(&self, which: Split) -> impl Iterator<Item = &EmbeddedSeries> {
        self.series.iter().filter(move |(_, s)| *s == which).map(|(e, _)| e)
    }

    /// All training points stacked row-wise.
    pub fn train_points(&self) -> DMatrix<f64> {
        stack_rows(self.split(Split::Train).map(|e| e.points()).collect::<Vec<_>>().as_slice())
    }
}

pub fn stack_rows(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(b);
        r += b.nrows();
    }
    out
}
