//! Polynomial graph-style parametrisation of the SSM in delay coordinates.

use crate::embedding::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{leading_left_singular, lstsq};
use crate::poly::{self, Exponent};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldModel {
    pub d: usize,
    pub order: u32,
    /// m × d, orthonormal columns.
    pub v1: DMatrix<f64>,
    /// m × p, one column per monomial in `exponents` (degrees 2..=order).
    pub v_nl: DMatrix<f64>,
    pub exponents: Vec<Exponent>,
    /// Largest ‖η‖ seen during fitting.
    pub eta_radius: f64,
    /// Mean squared reconstruction error after each accepted iteration.
    pub residual_history: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryOptions {
    pub refine_iters: usize,
    pub refine_tol: f64,
}

impl Default for GeometryOptions {
    fn default() -> Self {
        Self { refine_iters: 10, refine_tol: 1e-9 }
    }
}

impl ManifoldModel {
    pub fn m(&self) -> usize {
        self.v1.nrows()
    }

    pub fn residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&f64::NAN)
    }

    pub fn project(&self, y: &DVector<f64>) -> DVector<f64> {
        self.v1.transpose() * y
    }

    /// Row-wise projection of an n × m point matrix.
    pub fn project_rows(&self, y: &DMatrix<f64>) -> DMatrix<f64> {
        y * &self.v1
    }

    pub fn lift(&self, eta: &DVector<f64>) -> DVector<f64> {
        let phi = DVector::from_vec(poly::eval_all(&self.exponents, eta.as_slice()));
        &self.v1 * eta + &self.v_nl * phi
    }

    /// Lift plus a flag that is false outside the fitted amplitude range.
    pub fn lift_checked(&self, eta: &DVector<f64>) -> (DVector<f64>, bool) {
        (self.lift(eta), eta.norm() <= self.eta_radius * (1.0 + 1e-12))
    }

    pub fn to_record(&self) -> ManifoldRecord {
        ManifoldRecord {
            d: self.d,
            m: self.m(),
            order: self.order,
            v1: (0..self.m()).map(|i| self.v1.row(i).iter().cloned().collect()).collect(),
            terms: self
                .exponents
                .iter()
                .enumerate()
                .map(|(j, e)| MonomialColumn { exponent: e.clone(), coeff: self.v_nl.column(j).iter().cloned().collect() })
                .collect(),
            eta_radius: self.eta_radius,
            residual_history: self.residual_history.clone(),
        }
    }

    pub fn from_record(r: &ManifoldRecord) -> Result<Self> {
        let bad = || Error::InvalidParameter("malformed manifold record".into());
        if r.v1.len() != r.m || r.v1.iter().any(|row| row.len() != r.d) {
            return Err(bad());
        }
        let v1 = DMatrix::from_fn(r.m, r.d, |i, j| r.v1[i][j]);
        let mut v_nl = DMatrix::zeros(r.m, r.terms.len());
        for (j, t) in r.terms.iter().enumerate() {
            if t.coeff.len() != r.m || t.exponent.len() != r.d {
                return Err(bad());
            }
            v_nl.set_column(j, &DVector::from_column_slice(&t.coeff));
        }
        Ok(Self {
            d: r.d,
            order: r.order,
            v1,
            v_nl,
            exponents: r.terms.iter().map(|t| t.exponent.clone()).collect(),
            eta_radius: r.eta_radius,
            residual_history: r.residual_history.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonomialColumn {
    pub exponent: Vec<u32>,
    pub coeff: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifoldRecord {
    pub d: usize,
    pub m: usize,
    pub order: u32,
    /// Row-major m × d.
    pub v1: Vec<Vec<f64>>,
    pub terms: Vec<MonomialColumn>,
    pub eta_radius: f64,
    pub residual_history: Vec<f64>,
}

pub fn fit_geometry(data: &Dataset, d: usize, order: u32) -> Result<ManifoldModel> {
    fit_geometry_opts(data, d, order, &GeometryOptions::default())
}

pub fn fit_geometry_opts(data: &Dataset, d: usize, order: u32, opts: &GeometryOptions) -> Result<ManifoldModel> {
    fit_points(&data.train_points(), d, order, opts)
}

/// Fits the manifold to an n × m matrix of embedded points (one per row).
pub fn fit_points(y: &DMatrix<f64>, d: usize, order: u32, opts: &GeometryOptions) -> Result<ManifoldModel> {
    let m = y.ncols();
    if d == 0 || d > m {
        return Err(Error::InvalidParameter("need 0 < d ≤ m".into()));
    }
    let exponents = if order >= 2 { poly::monomials(d, 2, order) } else { Vec::new() };
    if y.nrows() < exponents.len().max(d + 1) {
        return Err(Error::Degenerate);
    }
    let (v1, _) = leading_left_singular(&y.transpose(), d)?;
    let v_nl = solve_nonlinear(y, &v1, &exponents)?;
    let mut best = (v1, v_nl);
    let mut hist = vec![residual(y, &best.0, &best.1, &exponents)];
    for _ in 0..opts.refine_iters {
        if exponents.is_empty() {
            break;
        }
        let Some(cand) = refine_step(y, &best.0, &exponents) else { break };
        let r = residual(y, &cand.0, &cand.1, &exponents);
        let prev = *hist.last().unwrap();
        if !(r < prev) {
            break;
        }
        best = cand;
        hist.push(r);
        if prev - r < opts.refine_tol * prev.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    let eta = y * &best.0;
    let eta_radius = (0..eta.nrows()).map(|i| eta.row(i).norm()).fold(0.0, f64::max);
    Ok(ManifoldModel { d, order, v1: best.0, v_nl: best.1, exponents, eta_radius, residual_history: hist })
}

fn solve_nonlinear(y: &DMatrix<f64>, v1: &DMatrix<f64>, exps: &[Exponent]) -> Result<DMatrix<f64>> {
    let m = y.ncols();
    if exps.is_empty() {
        return Ok(DMatrix::zeros(m, 0));
    }
    let eta = y * v1;
    let res = y - &eta * v1.transpose();
    let phi = poly::features(exps, &eta);
    let c = lstsq(&phi, &res)?; // p × m
    let vk = c.transpose();
    Ok(&vk - v1 * (v1.transpose() * &vk))
}

fn residual(y: &DMatrix<f64>, v1: &DMatrix<f64>, vk: &DMatrix<f64>, exps: &[Exponent]) -> f64 {
    let eta = y * v1;
    let mut rec = &eta * v1.transpose();
    if !exps.is_empty() {
        rec += poly::features(exps, &eta) * vk.transpose();
    }
    (y - rec).norm_squared() / y.nrows() as f64
}

/// One alternating pass: joint linear solve for [V1 | V_k] at fixed η, polar
/// re-orthonormalisation of V1, then the constrained V_k solve.
fn refine_step(y: &DMatrix<f64>, v1: &DMatrix<f64>, exps: &[Exponent]) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let d = v1.ncols();
    let eta = y * v1;
    let phi = poly::features(exps, &eta);
    let mut feats = DMatrix::zeros(y.nrows(), d + exps.len());
    feats.columns_mut(0, d).copy_from(&eta);
    feats.columns_mut(d, exps.len()).copy_from(&phi);
    let sol = lstsq(&feats, y).ok()?; // (d+p) × m
    let a = sol.rows(0, d).transpose(); // m × d
    let svd = a.svd(true, true);
    let v1n = svd.u? * svd.v_t?;
    let vkn = solve_nonlinear(y, &v1n, exps).ok()?;
    Some((v1n, vkn))
}
