//! Chaos and validation statistics.

use crate::dynamics::Advect;
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionEstimate {
    pub dimension: f64,
    pub stderr: f64,
    /// Scaling region [ε_lo, ε_hi] used for the fit.
    pub eps_lo: f64,
    pub eps_hi: f64,
    pub r_squared: f64,
    pub reliable: bool,
    pub n_points: usize,
    pub warning: Option<String>,
    pub eps: Vec<f64>,
    pub corr_sum: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpOptions {
    pub n_eps: usize,
    /// Minimum fit window width in decades.
    pub min_decades: f64,
    /// Smallest ε is the distance quantile giving at least this many pairs.
    pub min_pairs: usize,
}

impl Default for GpOptions {
    fn default() -> Self {
        Self { n_eps: 40, min_decades: 1.0, min_pairs: 200 }
    }
}

fn linfit(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let icpt = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let se = if x.len() > 2 { (sse / (n - 2.0) / sxx).sqrt() } else { f64::INFINITY };
    (slope, icpt, r2, se)
}

/// Sorted pairwise distances with |i − j| > theiler.
fn pair_distances(points: &DMatrix<f64>, theiler: usize) -> Vec<f64> {
    let n = points.nrows();
    let m = points.ncols();
    let rows: Vec<Vec<f64>> = (0..n).map(|i| points.row(i).iter().cloned().collect()).collect();
    let mut d = Vec::with_capacity(n * n / 2);
    for i in 0..n {
        for j in i + theiler + 1..n {
            let mut s = 0.0;
            for k in 0..m {
                let t = rows[i][k] - rows[j][k];
                s += t * t;
            }
            d.push(s.sqrt());
        }
    }
    d.sort_by(f64::total_cmp);
    d
}

/// Grassberger–Procaccia correlation dimension of a point set (one point per row).
pub fn correlation_dimension(points: &DMatrix<f64>, theiler: usize) -> Result<DimensionEstimate> {
    correlation_dimension_opts(points, theiler, &GpOptions::default())
}

pub fn correlation_dimension_opts(points: &DMatrix<f64>, theiler: usize, opts: &GpOptions) -> Result<DimensionEstimate> {
    let n = points.nrows();
    let dist = pair_distances(points, theiler);
    let warning = (n < 2000).then(|| format!("only {n} points; at least 2000 recommended"));
    let unreliable = |msg: &str| DimensionEstimate {
        dimension: f64::NAN,
        stderr: f64::NAN,
        eps_lo: f64::NAN,
        eps_hi: f64::NAN,
        r_squared: 0.0,
        reliable: false,
        n_points: n,
        warning: Some(msg.to_string()),
        eps: Vec::new(),
        corr_sum: Vec::new(),
    };
    if dist.len() < 2 * opts.min_pairs {
        return Ok(unreliable("too few pairs"));
    }
    let total = dist.len() as f64;
    let lo = dist[opts.min_pairs].max(f64::MIN_POSITIVE);
    let hi = dist[dist.len() - 1];
    if !(hi > lo) {
        return Ok(unreliable("no distance spread"));
    }
    let (l0, l1) = (lo.ln(), hi.ln());
    let eps: Vec<f64> = (0..opts.n_eps).map(|k| (l0 + (l1 - l0) * k as f64 / (opts.n_eps - 1) as f64).exp()).collect();
    let corr_sum: Vec<f64> = eps.iter().map(|e| dist.partition_point(|d| d < e) as f64 / total).collect();
    let lx: Vec<f64> = eps.iter().map(|e| e.log10()).collect();
    let ly: Vec<f64> = corr_sum.iter().map(|c| c.log10()).collect();
    let mut best: Option<(f64, usize, usize, f64, f64)> = None;
    for a in 0..eps.len() {
        if corr_sum[a] <= 0.0 {
            continue;
        }
        for b in a + 2..eps.len() {
            if lx[b] - lx[a] < opts.min_decades {
                continue;
            }
            // stay below saturation
            if corr_sum[b] > 0.5 {
                break;
            }
            let (s, _, r2, se) = linfit(&lx[a..=b], &ly[a..=b]);
            if best.map_or(true, |bb| r2 > bb.0) {
                best = Some((r2, a, b, s, se));
            }
            break;
        }
    }
    let Some((r2, a, b, s, se)) = best else {
        let mut u = unreliable("no scaling region spanning the minimum width");
        u.eps = eps;
        u.corr_sum = corr_sum;
        return Ok(u);
    };
    Ok(DimensionEstimate {
        dimension: s,
        stderr: se,
        eps_lo: eps[a],
        eps_hi: eps[b],
        r_squared: r2,
        reliable: r2 >= 0.98,
        n_points: n,
        warning,
        eps,
        corr_sum,
    })
}

/// Mean oscillation period in samples from mean-crossings of a scalar series.
pub fn mean_period_samples(series: &[f64]) -> usize {
    let n = series.len();
    if n < 3 {
        return 1;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let ups = series.windows(2).filter(|w| w[0] < mean && w[1] >= mean).count();
    if ups == 0 {
        n
    } else {
        (n / ups).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub per_time: f64,
    pub per_step: f64,
    pub steps: usize,
}

/// Benettin estimate for an explicit map with time step `step`.
///
/// The perturbation has relative size 1e-8 and is renormalised every step.
pub fn lyapunov_map<F: Fn(&[f64]) -> Vec<f64>>(
    f: F,
    x0: &[f64],
    n_steps: usize,
    transient: usize,
    step: f64,
    bound: f64,
) -> Result<LyapunovEstimate> {
    let d = x0.len();
    let mut x = x0.to_vec();
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let check = |v: &[f64]| -> Result<()> {
        let nv = norm(v);
        if !nv.is_finite() || nv > bound {
            Err(Error::Unbounded)
        } else {
            Ok(())
        }
    };
    for _ in 0..transient {
        x = f(&x);
        check(&x)?;
    }
    let eps = 1e-8 * norm(&x).max(1e-8);
    let mut dir: Vec<f64> = (0..d).map(|k| 1.0 / (d as f64).sqrt() * if k % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let mut sum = 0.0;
    for _ in 0..n_steps {
        let xp: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
        let y = f(&xp);
        x = f(&x);
        check(&x)?;
        let v: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
        let nv = norm(&v);
        if nv == 0.0 || !nv.is_finite() {
            return Err(Error::Unbounded);
        }
        sum += (nv / eps).ln();
        dir = v.iter().map(|a| a / nv).collect();
    }
    let per_step = sum / n_steps as f64;
    Ok(LyapunovEstimate { per_time: per_step / step, per_step, steps: n_steps })
}

/// Leading exponent of a reduced model, renormalised once per output step.
pub fn lyapunov_model<A: Advect + ?Sized>(model: &A, eta0: &[f64], t_span: f64) -> Result<LyapunovEstimate> {
    let step = model.output_step();
    let n = (t_span / step).round() as usize;
    let inner = model.inner_steps().max(1);
    let bound = 10.0 * model.radius();
    let f = |x: &[f64]| {
        let mut y = x.to_vec();
        for _ in 0..inner {
            y = model.advance(&y);
        }
        y
    };
    lyapunov_map(f, eta0, n, n / 10, step, if bound > 0.0 { bound } else { f64::INFINITY })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RosensteinOptions {
    pub theiler: usize,
    /// Divergence curve length in samples.
    pub k_max: usize,
    /// Fit window [lo, hi) in samples.
    pub fit: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataLyapunov {
    pub per_time: f64,
    pub per_step: f64,
    pub divergence: Vec<f64>,
    pub pairs: usize,
    pub reliable: bool,
}

/// Rosenstein nearest-neighbour divergence on embedded points (one per row).
pub fn lyapunov_data(points: &DMatrix<f64>, dt: f64, opts: &RosensteinOptions) -> Result<DataLyapunov> {
    let n = points.nrows();
    if n <= opts.k_max + opts.theiler + 2 || opts.fit.1 > opts.k_max || opts.fit.1 < opts.fit.0 + 2 {
        return Err(Error::InsufficientSamples);
    }
    let m = points.ncols();
    let usable = n - opts.k_max;
    let rows: Vec<Vec<f64>> = (0..n).map(|i| points.row(i).iter().cloned().collect()).collect();
    let mut order: Vec<usize> = (0..usable).collect();
    order.sort_by(|&a, &b| rows[a][0].total_cmp(&rows[b][0]));
    let mut pos = vec![0usize; usable];
    for (p, &i) in order.iter().enumerate() {
        pos[i] = p;
    }
    let dist2 = |a: usize, b: usize, cap: f64| {
        let mut s = 0.0;
        for k in 0..m {
            let t = rows[a][k] - rows[b][k];
            s += t * t;
            if s >= cap {
                break;
            }
        }
        s
    };
    let mut nn = vec![usize::MAX; usable];
    for i in 0..usable {
        let p = pos[i];
        let mut best = f64::INFINITY;
        let mut arg = usize::MAX;
        for dirn in [-1i64, 1] {
            let mut q = p as i64 + dirn;
            while q >= 0 && (q as usize) < usable {
                let j = order[q as usize];
                let dx = rows[j][0] - rows[i][0];
                if dx * dx >= best {
                    break;
                }
                if j.abs_diff(i) > opts.theiler {
                    let d = dist2(i, j, best);
                    if d < best && d > 0.0 {
                        best = d;
                        arg = j;
                    }
                }
                q += dirn;
            }
        }
        nn[i] = arg;
    }
    let pairs: Vec<(usize, usize)> = (0..usable).filter(|&i| nn[i] != usize::MAX).map(|i| (i, nn[i])).collect();
    if pairs.len() < 10 {
        return Err(Error::InsufficientSamples);
    }
    let divergence: Vec<f64> = (0..opts.k_max)
        .map(|k| {
            let mut s = 0.0;
            let mut c = 0usize;
            for &(i, j) in &pairs {
                let d = dist2(i + k, j + k, f64::INFINITY).sqrt();
                if d > 0.0 {
                    s += d.ln();
                    c += 1;
                }
            }
            s / c.max(1) as f64
        })
        .collect();
    let ks: Vec<f64> = (opts.fit.0..opts.fit.1).map(|k| k as f64).collect();
    let (slope, _, _, _) = linfit(&ks, &divergence[opts.fit.0..opts.fit.1]);
    Ok(DataLyapunov {
        per_time: slope / dt,
        per_step: slope,
        divergence,
        pairs: pairs.len(),
        reliable: pairs.len() * 10 >= usable,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub density: Vec<f64>,
}

impl Histogram {
    pub fn mass(&self) -> f64 {
        self.density.iter().zip(self.edges.windows(2)).map(|(p, w)| p * (w[1] - w[0])).sum()
    }

    fn cdf(&self) -> Vec<f64> {
        let mut c = 0.0;
        self.density
            .iter()
            .zip(self.edges.windows(2))
            .map(|(p, w)| {
                c += p * (w[1] - w[0]);
                c
            })
            .collect()
    }
}

/// Normalised histograms per column over [−a_k, a_k], a_k = max |x_k|.
pub fn pdf_histograms(etas: &DMatrix<f64>, bins: usize) -> Result<Vec<Histogram>> {
    let half: Vec<f64> = (0..etas.ncols()).map(|k| etas.column(k).amax()).collect();
    pdf_histograms_in(etas, bins, &half)
}

/// Histograms over the given symmetric half-widths, so two sets can share bins.
pub fn pdf_histograms_in(etas: &DMatrix<f64>, bins: usize, half: &[f64]) -> Result<Vec<Histogram>> {
    if bins < 10 {
        return Err(Error::InvalidParameter("at least 10 bins".into()));
    }
    if etas.nrows() == 0 {
        return Err(Error::Empty);
    }
    Ok((0..etas.ncols())
        .map(|k| {
            let a = if half[k] > 0.0 { half[k] } else { 1.0 };
            let w = 2.0 * a / bins as f64;
            let edges: Vec<f64> = (0..=bins).map(|b| -a + b as f64 * w).collect();
            let mut counts = vec![0usize; bins];
            let mut used = 0usize;
            for v in etas.column(k).iter() {
                if v.abs() > a {
                    continue;
                }
                let b = (((v + a) / w).floor() as usize).min(bins - 1);
                counts[b] += 1;
                used += 1;
            }
            let total = used.max(1) as f64 * w;
            Histogram { density: counts.iter().map(|c| *c as f64 / total).collect(), edges }
        })
        .collect())
}

/// Two histogram sets on shared bins plus per-coordinate KS statistics.
pub fn compare_pdfs(a: &DMatrix<f64>, b: &DMatrix<f64>, bins: usize) -> Result<(Vec<Histogram>, Vec<Histogram>, Vec<f64>)> {
    if a.ncols() != b.ncols() {
        return Err(Error::InvalidParameter("column mismatch".into()));
    }
    let half: Vec<f64> = (0..a.ncols()).map(|k| a.column(k).amax().max(b.column(k).amax())).collect();
    let ha = pdf_histograms_in(a, bins, &half)?;
    let hb = pdf_histograms_in(b, bins, &half)?;
    let ks = ha.iter().zip(&hb).map(|(x, y)| ks_statistic(x, y)).collect();
    Ok((ha, hb, ks))
}

/// Largest CDF difference at the shared bin edges.
pub fn ks_statistic(a: &Histogram, b: &Histogram) -> f64 {
    a.cdf().iter().zip(b.cdf()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub amps: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub freq: f64,
    pub amp: f64,
    pub prominence: f64,
    pub bin: usize,
}

/// Hann-windowed one-sided amplitude spectrum (mean removed).
pub fn fft_spectrum(series: &[f64], dt: f64) -> Result<Spectrum> {
    let n = series.len();
    if n < 256 {
        return Err(Error::InsufficientSamples);
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let w: Vec<f64> = (0..n).map(|k| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64).cos()).collect();
    let wsum: f64 = w.iter().sum();
    let mut buf: Vec<Complex<f64>> = series.iter().zip(&w).map(|(x, wk)| Complex::new((x - mean) * wk, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2 + 1;
    let amps = (0..half).map(|k| buf[k].norm() * if k == 0 { 1.0 } else { 2.0 } / wsum).collect();
    let freqs = (0..half).map(|k| k as f64 / (n as f64 * dt)).collect();
    Ok(Spectrum { freqs, amps })
}

/// Local maxima ranked by amplitude, keeping those whose topographic
/// prominence is at least `min_prominence` × the largest amplitude and that
/// lie more than `min_sep_bins` bins from an already accepted peak.
pub fn spectral_peaks(s: &Spectrum, k: usize, min_prominence: f64, min_sep_bins: usize) -> Vec<Peak> {
    let a = &s.amps;
    let n = a.len();
    let top = a.iter().skip(1).cloned().fold(0.0, f64::max);
    let mut cands = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if !(a[i] > a[i - 1] && a[i] >= a[i + 1]) {
            continue;
        }
        let mut lmin = a[i];
        let mut j = i;
        while j > 1 {
            j -= 1;
            if a[j] > a[i] {
                break;
            }
            lmin = lmin.min(a[j]);
        }
        let mut rmin = a[i];
        let mut j = i;
        while j + 1 < n {
            j += 1;
            if a[j] > a[i] {
                break;
            }
            rmin = rmin.min(a[j]);
        }
        let prom = a[i] - lmin.max(rmin);
        if prom >= min_prominence * top {
            cands.push(Peak { freq: s.freqs[i], amp: a[i], prominence: prom, bin: i });
        }
    }
    cands.sort_by(|x, y| y.amp.total_cmp(&x.amp));
    let mut out: Vec<Peak> = Vec::new();
    for c in cands {
        if out.iter().all(|p| p.bin.abs_diff(c.bin) > min_sep_bins) {
            out.push(c);
        }
        if out.len() == k {
            break;
        }
    }
    out
}

fn row_dist(a: &DMatrix<f64>, i: usize, b: &DMatrix<f64>, j: usize) -> f64 {
    (0..a.ncols()).map(|k| (a[(i, k)] - b[(j, k)]).powi(2)).sum::<f64>().sqrt()
}

/// DTW with steps (1,0), (0,1), (1,1) and Euclidean local cost.
/// Returns the total cost and the optimal path from (0,0) to (n−1,m−1).
pub fn dtw(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(f64, Vec<(usize, usize)>)> {
    let (n, m) = (a.nrows(), b.nrows());
    if n == 0 || m == 0 {
        return Err(Error::Empty);
    }
    if a.ncols() != b.ncols() {
        return Err(Error::InvalidParameter("channel mismatch".into()));
    }
    let mut acc = vec![f64::INFINITY; n * m];
    for i in 0..n {
        for j in 0..m {
            let c = row_dist(a, i, b, j);
            let prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut p = f64::INFINITY;
                if i > 0 {
                    p = p.min(acc[(i - 1) * m + j]);
                }
                if j > 0 {
                    p = p.min(acc[i * m + j - 1]);
                }
                if i > 0 && j > 0 {
                    p = p.min(acc[(i - 1) * m + j - 1]);
                }
                p
            };
            acc[i * m + j] = c + prev;
        }
    }
    let mut path = vec![(n - 1, m - 1)];
    let (mut i, mut j) = (n - 1, m - 1);
    while i > 0 || j > 0 {
        let mut best = (f64::INFINITY, (0, 0));
        if i > 0 && j > 0 {
            best = (acc[(i - 1) * m + j - 1], (i - 1, j - 1));
        }
        if i > 0 && acc[(i - 1) * m + j] < best.0 {
            best = (acc[(i - 1) * m + j], (i - 1, j));
        }
        if j > 0 && acc[i * m + j - 1] < best.0 {
            best = (acc[i * m + j - 1], (i, j - 1));
        }
        (i, j) = best.1;
        path.push((i, j));
    }
    path.reverse();
    Ok((acc[n * m - 1], path))
}

/// (NMTE, DTW-aligned NMTE), both normalised by the largest reference norm.
pub fn dtw_nmte(reference: &DMatrix<f64>, prediction: &DMatrix<f64>) -> Result<(f64, f64)> {
    let (n, m) = (reference.nrows(), prediction.nrows());
    if n == 0 || m == 0 {
        return Err(Error::Empty);
    }
    let scale = (0..n).map(|i| reference.row(i).norm()).fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let len = n.min(m);
    let raw = (0..len).map(|i| row_dist(reference, i, prediction, i)).sum::<f64>() / len as f64 / scale;
    let (_, path) = dtw(reference, prediction)?;
    let aligned = path.iter().map(|&(i, j)| row_dist(reference, i, prediction, j)).sum::<f64>() / path.len() as f64 / scale;
    Ok((raw, aligned))
}
