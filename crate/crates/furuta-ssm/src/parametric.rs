//! Parameter-dependent normal forms and analysis of the (ρ1, ρ2) amplitude plane.

use crate::dynamics::NormalFormModel;
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::manifold::ManifoldModel;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InterpMode {
    Linear,
    /// Natural cubic spline.
    Spline,
}

#[derive(Debug, Clone)]
pub struct ParamNode {
    pub mu: f64,
    pub manifold: Option<ManifoldModel>,
    pub normal_form: NormalFormModel,
}

#[derive(Debug, Clone)]
pub struct ParametricModel {
    pub nodes: Vec<ParamNode>,
    pub mode: InterpMode,
}

impl ParametricModel {
    pub fn new(mut nodes: Vec<ParamNode>, mode: InterpMode) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidParameter("at least two nodes required".into()));
        }
        nodes.sort_by(|a, b| a.mu.total_cmp(&b.mu));
        if nodes.windows(2).any(|w| !(w[1].mu > w[0].mu)) {
            return Err(Error::InvalidParameter("node parameters must be strictly increasing".into()));
        }
        let f = &nodes[0].normal_form;
        for n in &nodes {
            let g = &n.normal_form;
            if g.basis != f.basis || g.w.shape() != f.w.shape() {
                return Err(Error::InvalidParameter("nodes must share the monomial basis".into()));
            }
        }
        Ok(Self { nodes, mode })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.nodes[0].mu, self.nodes[self.nodes.len() - 1].mu)
    }

    fn mus(&self) -> Vec<f64> {
        self.nodes.iter().map(|n| n.mu).collect()
    }
}

/// Interpolation weights w_j(μ) such that f(μ) = Σ w_j f_j.
fn weights(xs: &[f64], mu: f64, mode: InterpMode) -> Vec<f64> {
    let n = xs.len();
    let mut w = vec![0.0; n];
    if let Some(j) = xs.iter().position(|x| *x == mu) {
        w[j] = 1.0;
        return w;
    }
    match mode {
        InterpMode::Linear => {
            let k = xs.windows(2).position(|p| mu >= p[0] && mu <= p[1]).unwrap_or(n - 2);
            let t = (mu - xs[k]) / (xs[k + 1] - xs[k]);
            w[k] = 1.0 - t;
            w[k + 1] = t;
        }
        InterpMode::Spline => {
            // the spline is linear in the data, so interpolate unit vectors
            for (j, wj) in w.iter_mut().enumerate() {
                let ys: Vec<f64> = (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect();
                *wj = natural_spline(xs, &ys, mu);
            }
        }
    }
    w
}

fn natural_spline(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if n == 2 {
        let t = (x - xs[0]) / (xs[1] - xs[0]);
        return ys[0] * (1.0 - t) + ys[1] * t;
    }
    // second derivatives via the tridiagonal system, M_0 = M_{n-1} = 0
    let mut a = DMatrix::zeros(n, n);
    let mut rhs = DMatrix::zeros(n, 1);
    a[(0, 0)] = 1.0;
    a[(n - 1, n - 1)] = 1.0;
    for i in 1..n - 1 {
        let h0 = xs[i] - xs[i - 1];
        let h1 = xs[i + 1] - xs[i];
        a[(i, i - 1)] = h0 / 6.0;
        a[(i, i)] = (h0 + h1) / 3.0;
        a[(i, i + 1)] = h1 / 6.0;
        rhs[i] = (ys[i + 1] - ys[i]) / h1 - (ys[i] - ys[i - 1]) / h0;
    }
    let m = a.lu().solve(&rhs).expect("spline system is diagonally dominant");
    let k = xs.windows(2).position(|p| x >= p[0] && x <= p[1]).unwrap_or(n - 2);
    let h = xs[k + 1] - xs[k];
    let t0 = xs[k + 1] - x;
    let t1 = x - xs[k];
    m[k] * t0.powi(3) / (6.0 * h)
        + m[k + 1] * t1.powi(3) / (6.0 * h)
        + (ys[k] / h - m[k] * h / 6.0) * t0
        + (ys[k + 1] / h - m[k + 1] * h / 6.0) * t1
}

pub fn interpolate(model: &ParametricModel, mu: f64) -> Result<NormalFormModel> {
    let (lo, hi) = model.range();
    if !(mu >= lo && mu <= hi) {
        return Err(Error::Extrapolation);
    }
    let xs = model.mus();
    let w = weights(&xs, mu, model.mode);
    if let Some(j) = w.iter().position(|v| *v == 1.0) {
        if w.iter().filter(|v| **v != 0.0).count() == 1 {
            return Ok(model.nodes[j].normal_form.clone());
        }
    }
    let nf = |j: usize| &model.nodes[j].normal_form;
    let mix = |get: &dyn Fn(&NormalFormModel) -> f64| -> f64 {
        w.iter().enumerate().filter(|(_, wj)| **wj != 0.0).map(|(j, wj)| wj * get(nf(j))).sum()
    };
    let base = nf(0);
    let modes = base.modes();
    let nb = base.basis.len();
    let (r, c) = base.w.shape();
    Ok(NormalFormModel {
        eigenvalues: (0..modes)
            .map(|i| C64::new(mix(&|m| m.eigenvalues[i].re), mix(&|m| m.eigenvalues[i].im)))
            .collect(),
        w: DMatrix::from_fn(r, c, |a, b| C64::new(mix(&|m| m.w[(a, b)].re), mix(&|m| m.w[(a, b)].im))),
        basis: base.basis.clone(),
        amp_coeffs: (0..modes).map(|i| (0..nb).map(|k| mix(&|m| m.amp_coeffs[i][k])).collect()).collect(),
        phase_coeffs: (0..modes).map(|i| (0..nb).map(|k| mix(&|m| m.phase_coeffs[i][k])).collect()).collect(),
        resonances: Vec::new(),
        rho_max: (0..modes).map(|i| mix(&|m| m.rho_max[i])).collect(),
        sample_step: mix(&|m| m.sample_step),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixedPointKind {
    Origin,
    /// Root on the ρ_axis axis, a limit cycle of the full reduced model.
    LimitCycle { axis: usize },
    /// Interior root, a 2-torus.
    Torus2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Stable,
    Unstable,
    Saddle,
    NonHyperbolic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPoint {
    pub rho: Vec<f64>,
    pub eigenvalues: Vec<[f64; 2]>,
    pub kind: FixedPointKind,
    pub stability: Stability,
    pub residual: f64,
}

impl FixedPoint {
    pub fn max_real(&self) -> f64 {
        self.eigenvalues.iter().map(|e| e[0]).fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedOrbit {
    /// Crossing of the orbit with the outer section ray.
    pub rho: Vec<f64>,
    /// Derivative of the return map at the crossing (> 1 means repelling).
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortraitAnalysis {
    pub fixed_points: Vec<FixedPoint>,
    pub closed_orbits: Vec<ClosedOrbit>,
    /// Signed heteroclinic gap; `None` when the saddle pair is absent.
    pub heteroclinic_gap: Option<f64>,
    pub rho_max: Vec<f64>,
    pub diagnostic: Option<String>,
}

impl PortraitAnalysis {
    pub fn interior(&self) -> impl Iterator<Item = &FixedPoint> {
        self.fixed_points.iter().filter(|f| f.kind == FixedPointKind::Torus2)
    }

    pub fn saddles(&self) -> impl Iterator<Item = &FixedPoint> {
        self.fixed_points
            .iter()
            .filter(|f| f.stability == Stability::Saddle && f.kind != FixedPointKind::Origin)
    }
}

/// Grid extent: 1.5× the largest training amplitude per mode.
pub fn default_rho_max(model: &NormalFormModel) -> Vec<f64> {
    model.rho_max.iter().map(|r| 1.5 * r).collect()
}

fn eig2(j: &DMatrix<f64>) -> Vec<C64> {
    let tr = j[(0, 0)] + j[(1, 1)];
    let det = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)];
    let disc = C64::new(tr * tr / 4.0 - det, 0.0).sqrt();
    vec![C64::new(tr / 2.0, 0.0) + disc, C64::new(tr / 2.0, 0.0) - disc]
}

fn eigs(j: &DMatrix<f64>) -> Vec<C64> {
    if j.nrows() == 2 {
        eig2(j)
    } else {
        j.complex_eigenvalues().iter().cloned().collect()
    }
}

fn classify(ev: &[C64]) -> Stability {
    let scale = ev.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
    let tol = 1e-9 * scale;
    if ev.iter().any(|v| v.re.abs() <= tol) {
        Stability::NonHyperbolic
    } else if ev.iter().all(|v| v.re < 0.0) {
        Stability::Stable
    } else if ev.iter().all(|v| v.re > 0.0) {
        Stability::Unstable
    } else {
        Stability::Saddle
    }
}

fn newton(model: &NormalFormModel, seed: &[f64]) -> Option<Vec<f64>> {
    let n = seed.len();
    let mut x = seed.to_vec();
    for _ in 0..100 {
        let f = model.amplitude_rhs(&x);
        let fn_: f64 = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        if fn_ < 1e-15 {
            return Some(x);
        }
        let j = model.amplitude_jacobian(&x);
        let rhs = DMatrix::from_fn(n, 1, |i, _| -f[i]);
        let dx = j.lu().solve(&rhs)?;
        let step: f64 = dx.norm();
        for i in 0..n {
            x[i] += dx[i];
        }
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
        if step < 1e-15 * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            break;
        }
    }
    let r: f64 = model.amplitude_rhs(&x).iter().map(|v| v * v).sum::<f64>().sqrt();
    (r < 1e-12).then_some(x)
}

/// Newton roots of the amplitude system seeded from a `grid × grid` lattice
/// over [0, ρ_max]; non-negative, deduplicated, classified by the Jacobian.
pub fn find_fixed_points(model: &NormalFormModel, grid: usize) -> PortraitAnalysis {
    let rho_max = default_rho_max(model);
    find_fixed_points_in(model, grid, &rho_max)
}

pub fn find_fixed_points_in(model: &NormalFormModel, grid: usize, rho_max: &[f64]) -> PortraitAnalysis {
    let n = model.modes();
    let grid = grid.max(2);
    let mut roots: Vec<Vec<f64>> = Vec::new();
    let mut seeds: Vec<Vec<f64>> = vec![vec![0.0; n]];
    let total = grid.pow(n as u32);
    for k in 0..total {
        let mut idx = k;
        let mut s = vec![0.0; n];
        for (i, si) in s.iter_mut().enumerate() {
            *si = rho_max[i] * (idx % grid) as f64 / (grid - 1) as f64;
            idx /= grid;
        }
        seeds.push(s);
    }
    for s in &seeds {
        let Some(mut x) = newton(model, s) else { continue };
        if x.iter().any(|v| *v < -1e-9) {
            continue;
        }
        if x.iter().zip(rho_max).any(|(v, m)| *v > 3.0 * m) {
            continue;
        }
        // snap to the invariant axes and polish on the remaining coordinates
        for v in x.iter_mut() {
            if v.abs() < 1e-9 {
                *v = 0.0;
            }
        }
        let x = polish(model, x);
        let tol = 1e-7 * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max));
        if roots.iter().any(|r| r.iter().zip(&x).all(|(a, b)| (a - b).abs() < tol)) {
            continue;
        }
        roots.push(x);
    }
    roots.sort_by(|a, b| a.iter().zip(b).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    let fixed_points: Vec<FixedPoint> = roots
        .into_iter()
        .filter_map(|x| {
            let residual = model.amplitude_rhs(&x).iter().map(|v| v * v).sum::<f64>().sqrt();
            if residual >= 1e-10 {
                return None;
            }
            let ev = eigs(&model.amplitude_jacobian(&x));
            let nz: Vec<usize> = (0..n).filter(|&i| x[i] > 0.0).collect();
            let kind = match nz.len() {
                0 => FixedPointKind::Origin,
                1 => FixedPointKind::LimitCycle { axis: nz[0] },
                _ => FixedPointKind::Torus2,
            };
            Some(FixedPoint {
                stability: classify(&ev),
                eigenvalues: ev.iter().map(|v| [v.re, v.im]).collect(),
                rho: x,
                kind,
                residual,
            })
        })
        .collect();
    let diagnostic = fixed_points.is_empty().then(|| "Newton did not converge from any seed".to_string());
    let mut pa = PortraitAnalysis {
        fixed_points,
        closed_orbits: Vec::new(),
        heteroclinic_gap: None,
        rho_max: rho_max.to_vec(),
        diagnostic,
    };
    if n == 2 {
        pa.heteroclinic_gap = heteroclinic_gap(model, &pa).ok();
        pa.closed_orbits = closed_orbits(model, &pa);
    }
    pa
}

fn polish(model: &NormalFormModel, mut x: Vec<f64>) -> Vec<f64> {
    let active: Vec<usize> = (0..x.len()).filter(|&i| x[i] != 0.0).collect();
    if active.is_empty() {
        return x;
    }
    for _ in 0..20 {
        let f = model.amplitude_rhs(&x);
        let j = model.amplitude_jacobian(&x);
        let k = active.len();
        let js = DMatrix::from_fn(k, k, |a, b| j[(active[a], active[b])]);
        let rhs = DMatrix::from_fn(k, 1, |a, _| -f[active[a]]);
        let Some(dx) = js.lu().solve(&rhs) else { break };
        for (a, &i) in active.iter().enumerate() {
            x[i] += dx[a];
        }
        if dx.norm() < 1e-16 {
            break;
        }
    }
    x
}

/// Central-difference Jacobian, used to cross-check classifications.
pub fn fd_jacobian(model: &NormalFormModel, rho: &[f64], h: f64) -> DMatrix<f64> {
    let n = rho.len();
    DMatrix::from_fn(n, n, |i, k| {
        let mut p = rho.to_vec();
        let mut m = rho.to_vec();
        p[k] += h;
        m[k] -= h;
        (model.amplitude_rhs(&p)[i] - model.amplitude_rhs(&m)[i]) / (2.0 * h)
    })
}

fn rk4_2(model: &NormalFormModel, x: [f64; 2], h: f64) -> [f64; 2] {
    let f = |p: [f64; 2]| {
        let v = model.amplitude_rhs(&p);
        [v[0], v[1]]
    };
    let k1 = f(x);
    let k2 = f([x[0] + h / 2.0 * k1[0], x[1] + h / 2.0 * k1[1]]);
    let k3 = f([x[0] + h / 2.0 * k2[0], x[1] + h / 2.0 * k2[1]]);
    let k4 = f([x[0] + h * k3[0], x[1] + h * k3[1]]);
    [
        x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// Settings for manifold and return-map integration in the amplitude plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    pub step: f64,
    pub t_max: f64,
    pub offset: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { step: 0.02, t_max: 4000.0, offset: 1e-6 }
    }
}

/// Ray from the origin used as the section for gaps and return maps.
struct Ray {
    dir: [f64; 2],
    r_min: f64,
}

impl Ray {
    fn side(&self, p: [f64; 2]) -> f64 {
        self.dir[0] * p[1] - self.dir[1] * p[0]
    }

    fn along(&self, p: [f64; 2]) -> f64 {
        self.dir[0] * p[0] + self.dir[1] * p[1]
    }
}

/// Follows the flow (time direction `sign`) from `start` until it crosses the
/// outer part of `ray` in the given rotational direction (or either when `dir_req` is 0).
fn first_crossing(
    model: &NormalFormModel,
    start: [f64; 2],
    sign: f64,
    ray: &Ray,
    dir_req: f64,
    opts: &FlowOptions,
    limit: f64,
    skip: f64,
) -> Option<f64> {
    let mut x = start;
    let mut s0 = ray.side(x);
    let steps = (opts.t_max / opts.step) as usize;
    let mut t = 0.0;
    for _ in 0..steps {
        let y = rk4_2(model, x, sign * opts.step);
        t += opts.step;
        if !y[0].is_finite() || !y[1].is_finite() || y[0].hypot(y[1]) > limit {
            return None;
        }
        let s1 = ray.side(y);
        if t > skip && s0 != 0.0 && s0 * s1 <= 0.0 && s0 != s1 {
            let f = s0 / (s0 - s1);
            let q = [x[0] + f * (y[0] - x[0]), x[1] + f * (y[1] - x[1])];
            let r = ray.along(q);
            let dir_ok = dir_req == 0.0 || (s1 - s0) * dir_req > 0.0;
            if r > ray.r_min && dir_ok {
                return Some(r);
            }
        }
        s0 = s1;
        x = y;
    }
    None
}

fn real_eigvec(j: &DMatrix<f64>, lam: f64) -> [f64; 2] {
    let a = [j[(0, 1)], lam - j[(0, 0)]];
    let b = [lam - j[(1, 1)], j[(1, 0)]];
    let v = if a[0].hypot(a[1]) >= b[0].hypot(b[1]) { a } else { b };
    let n = v[0].hypot(v[1]);
    [v[0] / n, v[1] / n]
}

fn section_ray(pa: &PortraitAnalysis, s1: &FixedPoint, s2: &FixedPoint) -> Ray {
    match pa.interior().next() {
        Some(p) => {
            let n = p.rho[0].hypot(p.rho[1]);
            Ray { dir: [p.rho[0] / n, p.rho[1] / n], r_min: n }
        }
        None => {
            let v = [s1.rho[0], s2.rho[1]];
            let n = v[0].hypot(v[1]);
            Ray { dir: [v[0] / n, v[1] / n], r_min: 0.0 }
        }
    }
}

fn saddle_pair(pa: &PortraitAnalysis) -> Result<(FixedPoint, FixedPoint)> {
    let on_axis = |axis: usize| {
        pa.saddles()
            .filter(|f| f.kind == FixedPointKind::LimitCycle { axis })
            .min_by(|a, b| a.rho[axis].total_cmp(&b.rho[axis]))
            .cloned()
    };
    match (on_axis(0), on_axis(1)) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(Error::NoSaddlePair),
    }
}

fn heteroclinic_gap(model: &NormalFormModel, pa: &PortraitAnalysis) -> Result<f64> {
    heteroclinic_gap_opts(model, pa, &FlowOptions::default())
}

fn heteroclinic_gap_opts(model: &NormalFormModel, pa: &PortraitAnalysis, opts: &FlowOptions) -> Result<f64> {
    let (s1, s2) = saddle_pair(pa)?;
    let ray = section_ray(pa, &s1, &s2);
    let limit = 10.0 * pa.rho_max.iter().cloned().fold(0.0, f64::max).max(s1.rho[0]).max(s2.rho[1]);
    // unstable branch of the ρ2-axis saddle, pointing into ρ1 > 0
    let j2 = model.amplitude_jacobian(&s2.rho);
    let lu = eig2(&j2).iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
    let mut vu = real_eigvec(&j2, lu);
    if vu[0] < 0.0 {
        vu = [-vu[0], -vu[1]];
    }
    // stable branch of the ρ1-axis saddle, pointing into ρ2 > 0
    let j1 = model.amplitude_jacobian(&s1.rho);
    let ls = eig2(&j1).iter().map(|v| v.re).fold(f64::INFINITY, f64::min);
    let mut vs = real_eigvec(&j1, ls);
    if vs[1] < 0.0 {
        vs = [-vs[0], -vs[1]];
    }
    let su = [s2.rho[0] + opts.offset * vu[0], s2.rho[1] + opts.offset * vu[1]];
    let ss = [s1.rho[0] + opts.offset * vs[0], s1.rho[1] + opts.offset * vs[1]];
    let ru = first_crossing(model, su, 1.0, &ray, 0.0, opts, limit, 0.0).ok_or(Error::NoSaddlePair)?;
    let rs = first_crossing(model, ss, -1.0, &ray, 0.0, opts, limit, 0.0).ok_or(Error::NoSaddlePair)?;
    Ok(ru - rs)
}

/// Signed gap between the unstable branch of the ρ2-axis saddle and the
/// stable branch of the ρ1-axis saddle, measured along the ray through the
/// interior fixed point. A sign change between parameter values marks a
/// heteroclinic connection.
pub fn detect_heteroclinic(model: &NormalFormModel) -> Result<f64> {
    let pa = find_fixed_points(model, 30);
    heteroclinic_gap(model, &pa)
}

pub fn detect_heteroclinic_in(model: &NormalFormModel, grid: usize, rho_max: &[f64]) -> Result<f64> {
    let pa = find_fixed_points_in(model, grid, rho_max);
    heteroclinic_gap(model, &pa)
}

/// Return map on the outer ray through the interior fixed point:
/// r ↦ radius of the next same-direction crossing.
fn return_map(model: &NormalFormModel, ray: &Ray, r: f64, opts: &FlowOptions, limit: f64) -> Option<f64> {
    let start = [ray.dir[0] * r, ray.dir[1] * r];
    // rotation sense from the local flow
    let f = model.amplitude_rhs(&start);
    let dir = ray.side([start[0] + f[0], start[1] + f[1]]).signum();
    if dir == 0.0 {
        return None;
    }
    first_crossing(model, start, 1.0, ray, dir, opts, limit, 10.0 * opts.step)
}

fn closed_orbits(model: &NormalFormModel, pa: &PortraitAnalysis) -> Vec<ClosedOrbit> {
    let Some(p) = pa.interior().next() else { return Vec::new() };
    let rp = p.rho[0].hypot(p.rho[1]);
    let ray = Ray { dir: [p.rho[0] / rp, p.rho[1] / rp], r_min: rp };
    let opts = FlowOptions { t_max: 1500.0, ..FlowOptions::default() };
    let r_far = pa.rho_max.iter().map(|v| v * v).sum::<f64>().sqrt().max(2.0 * rp);
    let limit = 10.0 * r_far;
    let n = 24;
    let rs: Vec<f64> = (1..=n).map(|k| rp + (r_far - rp) * k as f64 / (n + 1) as f64).collect();
    let g: Vec<Option<f64>> = rs.iter().map(|&r| return_map(model, &ray, r, &opts, limit).map(|v| v - r)).collect();
    let mut out = Vec::new();
    for k in 0..n - 1 {
        let (Some(a), Some(b)) = (g[k], g[k + 1]) else { continue };
        if a == 0.0 || a.signum() == b.signum() {
            continue;
        }
        let (mut lo, mut hi, mut ga) = (rs[k], rs[k + 1], a);
        let mut ok = true;
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            let Some(gm) = return_map(model, &ray, mid, &opts, limit).map(|v| v - mid) else {
                ok = false;
                break;
            };
            if gm.signum() == ga.signum() {
                lo = mid;
                ga = gm;
            } else {
                hi = mid;
            }
        }
        if !ok {
            continue;
        }
        let r = 0.5 * (lo + hi);
        let h = 1e-6 * r;
        let (Some(rp_), Some(rm_)) =
            (return_map(model, &ray, r + h, &opts, limit), return_map(model, &ray, r - h, &opts, limit))
        else {
            continue;
        };
        let Some(gr) = return_map(model, &ray, r, &opts, limit) else { continue };
        // a genuine closed orbit has a continuous return map through the root
        if (gr - r).abs() > 1e-6 * r {
            continue;
        }
        out.push(ClosedOrbit { rho: vec![ray.dir[0] * r, ray.dir[1] * r], multiplier: (rp_ - rm_) / (2.0 * h) });
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    /// Heteroclinic gap changes sign.
    Heteroclinic,
    /// Interior fixed point changes stability.
    Hopf,
    ClosedOrbitAppears,
    ClosedOrbitDisappears,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub mu: f64,
    pub kind: EventKind,
    pub location: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOptions {
    /// Bisection tolerance on μ.
    pub mu_tol: f64,
    pub grid: usize,
}

impl Default for ScanOptions {
    fn default() -> Self {
        // 1e-3 ms when μ is a sampling time in seconds
        Self { mu_tol: 1e-6, grid: 20 }
    }
}

#[derive(Debug, Clone)]
struct Probe {
    gap: Option<f64>,
    interior: Option<(Vec<f64>, f64)>,
    orbit: Option<Vec<f64>>,
}

fn probe(pm: &ParametricModel, mu: f64, rho_max: &[f64], grid: usize) -> Result<Probe> {
    let nf = interpolate(pm, mu)?;
    let pa = find_fixed_points_in(&nf, grid, rho_max);
    let interior = pa
        .interior()
        .min_by(|a, b| a.rho[0].hypot(a.rho[1]).total_cmp(&b.rho[0].hypot(b.rho[1])))
        .map(|p| (p.rho.clone(), p.max_real()));
    Ok(Probe { gap: pa.heteroclinic_gap, interior, orbit: pa.closed_orbits.first().map(|o| o.rho.clone()) })
}

/// Sweeps μ over `mu_range` with `steps` intervals and bisects every change in
/// the heteroclinic gap sign, interior stability and closed-orbit presence.
pub fn scan_bifurcations(pm: &ParametricModel, mu_range: (f64, f64), steps: usize) -> Result<Vec<Event>> {
    scan_bifurcations_opts(pm, mu_range, steps, &ScanOptions::default())
}

pub fn scan_bifurcations_opts(
    pm: &ParametricModel,
    mu_range: (f64, f64),
    steps: usize,
    opts: &ScanOptions,
) -> Result<Vec<Event>> {
    let (lo, hi) = pm.range();
    if mu_range.0 < lo || mu_range.1 > hi || !(mu_range.1 > mu_range.0) || steps == 0 {
        return Err(Error::Extrapolation);
    }
    let modes = pm.nodes[0].normal_form.modes();
    let rho_max: Vec<f64> = (0..modes)
        .map(|i| 1.5 * pm.nodes.iter().map(|n| n.normal_form.rho_max[i]).fold(0.0, f64::max))
        .collect();
    let mus: Vec<f64> = (0..=steps).map(|k| mu_range.0 + (mu_range.1 - mu_range.0) * k as f64 / steps as f64).collect();
    let probes: Vec<Probe> = mus.iter().map(|&m| probe(pm, m, &rho_max, opts.grid)).collect::<Result<_>>()?;
    type Key = fn(&Probe) -> Option<bool>;
    let gap_key: Key = |p| p.gap.map(|g| g > 0.0);
    let hopf_key: Key = |p| p.interior.as_ref().map(|(_, re)| *re < 0.0);
    let orbit_key: Key = |p| Some(p.orbit.is_some());
    let mut events = Vec::new();
    for k in 0..steps {
        for (key, kind) in [(gap_key, EventKind::Heteroclinic), (hopf_key, EventKind::Hopf), (orbit_key, EventKind::ClosedOrbitAppears)] {
            let (Some(a), Some(b)) = (key(&probes[k]), key(&probes[k + 1])) else { continue };
            if a == b {
                continue;
            }
            let (mut l, mut h) = (mus[k], mus[k + 1]);
            let mut pl = probes[k].clone();
            let mut ph = probes[k + 1].clone();
            while h - l > opts.mu_tol {
                let m = 0.5 * (l + h);
                let pm_ = probe(pm, m, &rho_max, opts.grid)?;
                match key(&pm_) {
                    Some(v) if v == a => {
                        l = m;
                        pl = pm_;
                    }
                    Some(_) => {
                        h = m;
                        ph = pm_;
                    }
                    None => break,
                }
            }
            let kind = match kind {
                EventKind::ClosedOrbitAppears if a => EventKind::ClosedOrbitDisappears,
                other => other,
            };
            let location = match kind {
                EventKind::Hopf => pl.interior.or(ph.interior).map(|v| v.0).unwrap_or_default(),
                EventKind::ClosedOrbitAppears => ph.orbit.unwrap_or_default(),
                EventKind::ClosedOrbitDisappears => pl.orbit.unwrap_or_default(),
                EventKind::Heteroclinic => pl.interior.map(|v| v.0).unwrap_or_default(),
            };
            events.push(Event { mu: 0.5 * (l + h), kind, location });
        }
    }
    events.sort_by(|a, b| a.mu.total_cmp(&b.mu));
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::amplitude_basis;

    pub(crate) fn amp_model(c1: [f64; 6], c2: [f64; 6], rho_max: [f64; 2]) -> NormalFormModel {
        NormalFormModel {
            eigenvalues: vec![C64::new(c1[0], 2.8), C64::new(c2[0], 53.6)],
            w: DMatrix::identity(4, 4),
            basis: amplitude_basis(2, 5),
            amp_coeffs: vec![c1.to_vec(), c2.to_vec()],
            phase_coeffs: vec![vec![2.8, 0.0, 0.0, 0.0, 0.0, 0.0], vec![53.6, 0.0, 0.0, 0.0, 0.0, 0.0]],
            resonances: Vec::new(),
            rho_max: rho_max.to_vec(),
            sample_step: 0.03,
        }
    }

    #[test]
    fn linear_stable_model_has_only_origin() {
        let m = amp_model([-0.1, 0.0, 0.0, 0.0, 0.0, 0.0], [-0.2, 0.0, 0.0, 0.0, 0.0, 0.0], [1.0, 1.0]);
        let pa = find_fixed_points(&m, 10);
        assert_eq!(pa.fixed_points.len(), 1);
        assert_eq!(pa.fixed_points[0].kind, FixedPointKind::Origin);
        assert_eq!(pa.fixed_points[0].stability, Stability::Stable);
    }

    #[test]
    fn spline_reproduces_nodes_and_lines() {
        let xs = [0.0, 1.0, 2.5, 4.0];
        let ys = [1.0, 3.0, 6.0, 9.0];
        for (x, y) in xs.iter().zip(ys) {
            assert!((natural_spline(&xs, &ys, *x) - y).abs() < 1e-12);
        }
        let lin: Vec<f64> = xs.iter().map(|x| 2.0 * x - 1.0).collect();
        assert!((natural_spline(&xs, &lin, 3.3) - 5.6).abs() < 1e-12);
    }
}
