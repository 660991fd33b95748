//! Reduced dynamics on the SSM: polynomial fields and maps, polar normal
//! forms and linear-kernel RBF maps.

use crate::embedding::stack_rows;
use crate::error::{Error, Result};
use crate::linalg::{eig, lstsq, C64};
use crate::poly::{self, Exponent};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TimeKind {
    /// η̇ = f(η).
    Continuous,
    /// η_{n+1} = f(η_n) with the given step.
    Discrete { step: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyReducedModel {
    pub d: usize,
    pub order: u32,
    /// Degrees 1..=order, graded lexicographic; the first d are the linear terms.
    pub exponents: Vec<Exponent>,
    /// d × p; column j multiplies monomial j.
    pub coeffs: DMatrix<f64>,
    pub time: TimeKind,
    /// Sampling step of the training data.
    pub sample_step: f64,
    pub eta_radius: f64,
}

impl PolyReducedModel {
    pub fn linear_part(&self) -> DMatrix<f64> {
        self.coeffs.columns(0, self.d).clone_owned()
    }

    pub fn eval(&self, eta: &[f64]) -> DVector<f64> {
        let phi = DVector::from_vec(poly::eval_all(&self.exponents, eta));
        &self.coeffs * phi
    }

    /// Continuous-time eigenvalues of the linear part; for maps λ = log(μ)/step.
    pub fn eigenvalues(&self) -> Vec<C64> {
        let (vals, _) = eig(&self.linear_part());
        match self.time {
            TimeKind::Continuous => vals,
            TimeKind::Discrete { step } => vals.iter().map(|m| m.ln() / step).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivativeScheme {
    /// 4th-order central differences, two samples dropped at each end.
    CentralFd4,
}

fn check_trajectories(etas: &[DMatrix<f64>]) -> Result<usize> {
    let d = etas.first().ok_or(Error::Empty)?.ncols();
    if d == 0 || etas.iter().any(|e| e.ncols() != d) {
        return Err(Error::InvalidParameter("reduced trajectories must share dimension".into()));
    }
    Ok(d)
}

fn radius(x: &DMatrix<f64>) -> f64 {
    (0..x.nrows()).map(|i| x.row(i).norm()).fold(0.0, f64::max)
}

fn regress(x: &DMatrix<f64>, target: &DMatrix<f64>, exps: &[Exponent]) -> Result<DMatrix<f64>> {
    if x.iter().all(|v| *v == 0.0) {
        return Err(Error::Degenerate);
    }
    let phi = poly::features(exps, x);
    match lstsq(&phi, target) {
        Ok(c) => Ok(c.transpose()),
        Err(Error::Degenerate) => Err(Error::IllConditioned),
        Err(e) => Err(e),
    }
}

/// Derivative estimates paired with the points they belong to.
pub fn derivatives(etas: &[DMatrix<f64>], dt: f64, scheme: DerivativeScheme) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut xs = Vec::new();
    let mut ds = Vec::new();
    match scheme {
        DerivativeScheme::CentralFd4 => {
            for e in etas.iter().filter(|e| e.nrows() >= 5) {
                let n = e.nrows();
                let c = |k: usize| e.row(k).clone_owned();
                let mut dd = DMatrix::zeros(n - 4, e.ncols());
                for k in 2..n - 2 {
                    let v = (-c(k + 2) + c(k + 1) * 8.0 - c(k - 1) * 8.0 + c(k - 2)) / (12.0 * dt);
                    dd.set_row(k - 2, &v);
                }
                xs.push(e.rows(2, n - 4).clone_owned());
                ds.push(dd);
            }
        }
    }
    (stack_rows(&xs), stack_rows(&ds))
}

/// Least-squares polynomial vector field from uniformly sampled trajectories.
pub fn fit_poly_dynamics(etas: &[DMatrix<f64>], dt: f64, order: u32) -> Result<PolyReducedModel> {
    let d = check_trajectories(etas)?;
    let (x, dx) = derivatives(etas, dt, DerivativeScheme::CentralFd4);
    let exps = poly::monomials(d, 1, order);
    if x.nrows() <= exps.len() {
        return Err(Error::Degenerate);
    }
    let coeffs = regress(&x, &dx, &exps)?;
    Ok(PolyReducedModel {
        d,
        order,
        exponents: exps,
        coeffs,
        time: TimeKind::Continuous,
        sample_step: dt,
        eta_radius: radius(&x),
    })
}

/// Least-squares polynomial flow map η_{n+1} = f(η_n).
pub fn fit_poly_map(etas: &[DMatrix<f64>], step: f64, order: u32) -> Result<PolyReducedModel> {
    let d = check_trajectories(etas)?;
    let (x, x1) = transitions(etas);
    let exps = poly::monomials(d, 1, order);
    if x.nrows() <= exps.len() {
        return Err(Error::Degenerate);
    }
    let coeffs = regress(&x, &x1, &exps)?;
    Ok(PolyReducedModel {
        d,
        order,
        exponents: exps,
        coeffs,
        time: TimeKind::Discrete { step },
        sample_step: step,
        eta_radius: radius(&x),
    })
}

fn transitions(etas: &[DMatrix<f64>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let use_: Vec<&DMatrix<f64>> = etas.iter().filter(|e| e.nrows() >= 2).collect();
    let x: Vec<_> = use_.iter().map(|e| e.rows(0, e.nrows() - 1).clone_owned()).collect();
    let x1: Vec<_> = use_.iter().map(|e| e.rows(1, e.nrows() - 1).clone_owned()).collect();
    (stack_rows(&x), stack_rows(&x1))
}

/// Polar amplitude/phase equations for d/2 oscillatory modes:
/// ρ̇_i = ρ_i Σ_e a_{i,e} ρ^e and θ̇_i = Σ_e b_{i,e} ρ^e, e over even tuples.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalFormModel {
    /// One continuous eigenvalue per mode (positive imaginary part), by increasing frequency.
    pub eigenvalues: Vec<C64>,
    /// d × d eigenvectors, columns ordered [v1, v̄1, v2, v̄2, …].
    pub w: DMatrix<C64>,
    /// Even exponent tuples over the amplitudes; the first is all zeros.
    pub basis: Vec<Exponent>,
    pub amp_coeffs: Vec<Vec<f64>>,
    pub phase_coeffs: Vec<Vec<f64>>,
    /// Low-order resonances p·ω_i ≈ q·ω_j detected within the tolerance.
    pub resonances: Vec<Resonance>,
    pub rho_max: Vec<f64>,
    pub sample_step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Resonance {
    pub modes: (usize, usize),
    pub ratio: (u32, u32),
    pub mismatch: f64,
}

impl NormalFormModel {
    pub fn modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn amplitude_rhs(&self, rho: &[f64]) -> Vec<f64> {
        let phi = poly::eval_all(&self.basis, rho);
        (0..self.modes())
            .map(|i| rho[i] * self.amp_coeffs[i].iter().zip(&phi).map(|(c, p)| c * p).sum::<f64>())
            .collect()
    }

    pub fn amplitude_jacobian(&self, rho: &[f64]) -> DMatrix<f64> {
        let n = self.modes();
        let phi = poly::eval_all(&self.basis, rho);
        DMatrix::from_fn(n, n, |i, k| {
            let c = &self.amp_coeffs[i];
            let mut v: f64 = c.iter().zip(&self.basis).map(|(c, e)| c * poly::deriv(e, k, rho)).sum::<f64>() * rho[i];
            if i == k {
                v += c.iter().zip(&phi).map(|(c, p)| c * p).sum::<f64>();
            }
            v
        })
    }

    pub fn phase_rhs(&self, rho: &[f64]) -> Vec<f64> {
        let phi = poly::eval_all(&self.basis, rho);
        (0..self.modes()).map(|i| self.phase_coeffs[i].iter().zip(&phi).map(|(c, p)| c * p).sum()).collect()
    }

    /// Modal amplitudes and phases of a reduced point.
    pub fn to_polar(&self, eta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let z = self.modal(eta)?;
        Ok((z.iter().map(|v| v.norm()).collect(), z.iter().map(|v| v.arg()).collect()))
    }

    fn modal(&self, eta: &[f64]) -> Result<Vec<C64>> {
        let winv = self.w.clone().try_inverse().ok_or(Error::Degenerate)?;
        let e = DVector::from_iterator(eta.len(), eta.iter().map(|v| C64::new(*v, 0.0)));
        let z = winv * e;
        Ok((0..self.modes()).map(|i| z[2 * i]).collect())
    }

    pub fn from_polar(&self, rho: &[f64], theta: &[f64]) -> Vec<f64> {
        let d = self.w.nrows();
        let mut z = DVector::zeros(d);
        for i in 0..self.modes() {
            let v = C64::from_polar(rho[i], theta[i]);
            z[2 * i] = v;
            z[2 * i + 1] = v.conj();
        }
        (&self.w * z).iter().map(|v| v.re).collect()
    }

    /// Coefficient of the full monomial ρ^e in ρ̇_mode (ρ1ρ2² in ρ̇1 is [1, 2]).
    pub fn amp_coeff(&self, mode: usize, e: &[u32]) -> Option<f64> {
        if e.get(mode).copied().unwrap_or(0) == 0 {
            return None;
        }
        let mut b = e.to_vec();
        b[mode] -= 1;
        self.basis.iter().position(|x| *x == b).map(|j| self.amp_coeffs[mode][j])
    }

    pub fn to_record(&self) -> NormalFormRecord {
        let key = |i: usize, e: &Exponent| {
            let mut k = e.clone();
            k[i] += 1;
            k
        };
        NormalFormRecord {
            eigenvalues: self.eigenvalues.iter().map(|v| [v.re, v.im]).collect(),
            w_re: rows(&self.w.map(|v| v.re)),
            w_im: rows(&self.w.map(|v| v.im)),
            amplitude: (0..self.modes())
                .flat_map(|i| {
                    self.basis.iter().enumerate().map(move |(j, e)| (i, j, e.clone()))
                })
                .map(|(i, j, e)| PolarTerm { mode: i + 1, exponent: key(i, &e), coeff: self.amp_coeffs[i][j] })
                .collect(),
            phase: (0..self.modes())
                .flat_map(|i| self.basis.iter().enumerate().map(move |(j, e)| (i, j, e.clone())))
                .map(|(i, j, e)| PolarTerm { mode: i + 1, exponent: e, coeff: self.phase_coeffs[i][j] })
                .collect(),
            resonances: self.resonances.clone(),
            rho_max: self.rho_max.clone(),
            sample_step: self.sample_step,
        }
    }

    pub fn from_record(r: &NormalFormRecord) -> Result<Self> {
        let bad = || Error::InvalidParameter("malformed normal-form record".into());
        let n = r.eigenvalues.len();
        let d = r.w_re.len();
        if d != 2 * n || r.w_im.len() != d || r.w_re.iter().chain(&r.w_im).any(|row| row.len() != d) {
            return Err(bad());
        }
        let mut basis: Vec<Exponent> = Vec::new();
        let mut amp = vec![Vec::new(); n];
        for t in &r.amplitude {
            let i = t.mode.checked_sub(1).filter(|i| *i < n).ok_or_else(bad)?;
            let mut b = t.exponent.clone();
            if b.len() != n || b[i] == 0 {
                return Err(bad());
            }
            b[i] -= 1;
            if i == 0 {
                basis.push(b);
            }
            amp[i].push(t.coeff);
        }
        let mut phase = vec![Vec::new(); n];
        for t in &r.phase {
            let i = t.mode.checked_sub(1).filter(|i| *i < n).ok_or_else(bad)?;
            phase[i].push(t.coeff);
        }
        if amp.iter().chain(&phase).any(|c| c.len() != basis.len()) {
            return Err(bad());
        }
        Ok(Self {
            eigenvalues: r.eigenvalues.iter().map(|v| C64::new(v[0], v[1])).collect(),
            w: DMatrix::from_fn(d, d, |i, j| C64::new(r.w_re[i][j], r.w_im[i][j])),
            basis,
            amp_coeffs: amp,
            phase_coeffs: phase,
            resonances: r.resonances.clone(),
            rho_max: r.rho_max.clone(),
            sample_step: r.sample_step,
        })
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().cloned().collect()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarTerm {
    /// 1-based mode index of the equation.
    pub mode: usize,
    pub exponent: Vec<u32>,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalFormRecord {
    pub eigenvalues: Vec<[f64; 2]>,
    pub w_re: Vec<Vec<f64>>,
    pub w_im: Vec<Vec<f64>>,
    pub amplitude: Vec<PolarTerm>,
    pub phase: Vec<PolarTerm>,
    pub resonances: Vec<Resonance>,
    pub rho_max: Vec<f64>,
    pub sample_step: f64,
}

/// Even tuples 2k over `pairs` amplitudes with total degree ≤ order − 1.
pub fn amplitude_basis(pairs: usize, order: u32) -> Vec<Exponent> {
    let half = order.saturating_sub(1) / 2;
    poly::monomials(pairs, 0, half).into_iter().map(|e| e.into_iter().map(|k| 2 * k).collect()).collect()
}

struct Modal {
    eigenvalues: Vec<C64>,
    w: DMatrix<C64>,
    winv: DMatrix<C64>,
}

fn modal_decomposition(model: &PolyReducedModel) -> Result<Modal> {
    let d = model.d;
    if d % 2 != 0 {
        return Err(Error::MixedMode);
    }
    let (vals, vecs) = eig(&model.linear_part());
    let scale = vals.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut pos: Vec<usize> = (0..d).filter(|&i| vals[i].im > 1e-9 * scale).collect();
    if pos.len() * 2 != d {
        return Err(Error::MixedMode);
    }
    for &i in &pos {
        let partner = vals.iter().any(|v| (v - vals[i].conj()).norm() < 1e-8 * scale);
        if !partner {
            return Err(Error::MixedMode);
        }
    }
    let cont = |v: C64| match model.time {
        TimeKind::Continuous => v,
        TimeKind::Discrete { step } => v.ln() / step,
    };
    pos.sort_by(|&a, &b| cont(vals[a]).im.abs().total_cmp(&cont(vals[b]).im.abs()));
    let mut w = DMatrix::zeros(d, d);
    for (k, &i) in pos.iter().enumerate() {
        let v = vecs.column(i).clone_owned();
        w.set_column(2 * k, &v);
        w.set_column(2 * k + 1, &v.map(|z| z.conj()));
    }
    let winv = w.clone().try_inverse().ok_or(Error::MixedMode)?;
    Ok(Modal { eigenvalues: pos.iter().map(|&i| cont(vals[i])).collect(), w, winv })
}

fn detect_resonances(eigs: &[C64], order: u32, tol: f64) -> Vec<Resonance> {
    let mut out = Vec::new();
    for i in 0..eigs.len() {
        for j in i + 1..eigs.len() {
            let (wi, wj) = (eigs[i].im.abs(), eigs[j].im.abs());
            for p in 1..order {
                for q in 1..order {
                    if p + q > order {
                        continue;
                    }
                    let mis = (p as f64 * wi - q as f64 * wj).abs() / wi.max(wj);
                    if mis < tol {
                        out.push(Resonance { modes: (i, j), ratio: (p, q), mismatch: mis });
                    }
                }
            }
        }
    }
    out
}

/// Polar normal form of a fitted model.
///
/// Continuous models are evaluated on the supplied points (ρ̇ and θ̇ from the
/// modal vector field). Discrete maps use the supplied trajectories, which
/// must be sampled at the map step: amplitude growth rates log(ρ_{n+1}/ρ_n)/Δt
/// and phase advances are regressed at the midpoint amplitudes with the
/// constant terms fixed to the linear eigenvalue.
pub fn to_normal_form(
    model: &PolyReducedModel,
    etas: &[DMatrix<f64>],
    order: u32,
    resonance_tol: f64,
) -> Result<NormalFormModel> {
    check_trajectories(etas)?;
    let md = modal_decomposition(model)?;
    let n = md.eigenvalues.len();
    let basis = amplitude_basis(n, order);
    let modal = |x: &DMatrix<f64>| -> DMatrix<C64> {
        let xc = x.map(|v| C64::new(v, 0.0));
        let z = xc * md.winv.transpose();
        DMatrix::from_fn(z.nrows(), n, |r, i| z[(r, 2 * i)])
    };
    let mut amp_coeffs = Vec::with_capacity(n);
    let mut phase_coeffs = Vec::with_capacity(n);
    let mut rho_max = vec![0.0; n];
    match model.time {
        TimeKind::Continuous => {
            let x = stack_rows(etas);
            let mut fx = DMatrix::zeros(x.nrows(), model.d);
            for r in 0..x.nrows() {
                let row: Vec<f64> = x.row(r).iter().cloned().collect();
                fx.set_row(r, &model.eval(&row).transpose());
            }
            let z = modal(&x);
            let zd = modal(&fx);
            let rho = z.map(|v| v.norm());
            for i in 0..n {
                rho_max[i] = rho.column(i).max();
            }
            for i in 0..n {
                let keep: Vec<usize> =
                    (0..x.nrows()).filter(|&r| rho[(r, i)] > 1e-9 * rho_max[i].max(f64::MIN_POSITIVE)).collect();
                let pts = DMatrix::from_fn(keep.len(), n, |k, j| rho[(keep[k], j)]);
                let mut ta = DMatrix::zeros(keep.len(), 1);
                let mut tp = DMatrix::zeros(keep.len(), 1);
                for (k, &r) in keep.iter().enumerate() {
                    let p = z[(r, i)].conj() * zd[(r, i)];
                    let rr = rho[(r, i)] * rho[(r, i)];
                    ta[k] = p.re / rr;
                    tp[k] = p.im / rr;
                }
                amp_coeffs.push(regress_basis(&pts, &ta, &basis)?);
                phase_coeffs.push(regress_basis(&pts, &tp, &basis)?);
            }
        }
        TimeKind::Discrete { step } => {
            let (x0, x1) = transitions(etas);
            let z0 = modal(&x0);
            let z1 = modal(&x1);
            for i in 0..n {
                rho_max[i] = z0.column(i).iter().map(|v| v.norm()).fold(0.0, f64::max);
            }
            let rows: Vec<usize> = (0..x0.nrows())
                .filter(|&r| (0..n).all(|i| z0[(r, i)].norm() > 0.0 && z1[(r, i)].norm() > 0.0))
                .collect();
            let mid = DMatrix::from_fn(rows.len(), n, |k, i| 0.5 * (z0[(rows[k], i)].norm() + z1[(rows[k], i)].norm()));
            let nonconst = &basis[1..];
            for i in 0..n {
                let lam = md.eigenvalues[i];
                let ta = DMatrix::from_fn(rows.len(), 1, |k, _| {
                    let r = rows[k];
                    (z1[(r, i)].norm() / z0[(r, i)].norm()).ln() / step - lam.re
                });
                let tp = DMatrix::from_fn(rows.len(), 1, |k, _| {
                    let r = rows[k];
                    (z1[(r, i)] * z0[(r, i)].conj()).arg() / step - lam.im
                });
                let mut a = vec![lam.re];
                let mut p = vec![lam.im];
                if !nonconst.is_empty() {
                    a.extend(regress_basis(&mid, &ta, nonconst)?);
                    p.extend(regress_basis(&mid, &tp, nonconst)?);
                }
                amp_coeffs.push(a);
                phase_coeffs.push(p);
            }
        }
    }
    Ok(NormalFormModel {
        resonances: detect_resonances(&md.eigenvalues, order, resonance_tol),
        eigenvalues: md.eigenvalues,
        w: md.w,
        basis,
        amp_coeffs,
        phase_coeffs,
        rho_max,
        sample_step: model.sample_step,
    })
}

fn regress_basis(pts: &DMatrix<f64>, target: &DMatrix<f64>, basis: &[Exponent]) -> Result<Vec<f64>> {
    let phi = poly::features(basis, pts);
    let c = lstsq(&phi, target).map_err(|_| Error::IllConditioned)?;
    Ok(c.column(0).iter().cloned().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbfModel {
    /// n × d centers.
    pub centers: DMatrix<f64>,
    /// n × d weights.
    pub weights: DMatrix<f64>,
    pub step: f64,
    pub ridge: f64,
    pub eta_radius: f64,
    /// Centers dropped as duplicates.
    pub duplicates_removed: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfOptions {
    pub ridge: f64,
    /// Keep every k-th transition as a center when the data exceed this count.
    pub max_centers: Option<usize>,
}

impl Default for RbfOptions {
    fn default() -> Self {
        Self { ridge: 1e-10, max_centers: None }
    }
}

impl RbfModel {
    pub fn eval(&self, eta: &[f64]) -> DVector<f64> {
        let d = self.centers.ncols();
        let mut out = DVector::zeros(d);
        for i in 0..self.centers.nrows() {
            let mut r2 = 0.0;
            for k in 0..d {
                let t = eta[k] - self.centers[(i, k)];
                r2 += t * t;
            }
            let r = r2.sqrt();
            for k in 0..d {
                out[k] += self.weights[(i, k)] * r;
            }
        }
        out
    }
}

pub fn fit_rbf_map(etas: &[DMatrix<f64>], step: f64) -> Result<RbfModel> {
    fit_rbf_map_opts(etas, step, &RbfOptions::default())
}

/// Linear-kernel interpolation of the one-step map, k(r) = r.
pub fn fit_rbf_map_opts(etas: &[DMatrix<f64>], step: f64, opts: &RbfOptions) -> Result<RbfModel> {
    check_trajectories(etas)?;
    let (x, x1) = transitions(etas);
    let stride = match opts.max_centers {
        Some(mc) if mc > 0 && x.nrows() > mc => x.nrows().div_ceil(mc),
        _ => 1,
    };
    let mut keep: Vec<usize> = Vec::new();
    let mut dups = 0;
    'outer: for r in (0..x.nrows()).step_by(stride) {
        for &k in &keep {
            if (x.row(r) - x.row(k)).norm() <= 1e-14 * (1.0 + x.row(k).norm()) {
                dups += 1;
                continue 'outer;
            }
        }
        keep.push(r);
    }
    let n = keep.len();
    if n < 2 {
        return Err(Error::Degenerate);
    }
    let d = x.ncols();
    let c = DMatrix::from_fn(n, d, |i, k| x[(keep[i], k)]);
    let y = DMatrix::from_fn(n, d, |i, k| x1[(keep[i], k)]);
    let mut kmat = DMatrix::from_fn(n, n, |i, j| (c.row(i) - c.row(j)).norm());
    for i in 0..n {
        kmat[(i, i)] += opts.ridge;
    }
    let weights = kmat.lu().solve(&y).ok_or(Error::Degenerate)?;
    if weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate);
    }
    Ok(RbfModel {
        eta_radius: radius(&c),
        centers: c,
        weights,
        step,
        ridge: opts.ridge,
        duplicates_removed: dups,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Advected {
    pub times: Vec<f64>,
    /// One reduced state per row.
    pub etas: DMatrix<f64>,
    /// True when the run stopped because ‖η‖ exceeded 10× the training radius.
    pub truncated: bool,
}

pub trait Advect {
    fn dim(&self) -> usize;
    fn radius(&self) -> f64;
    /// Output spacing.
    fn output_step(&self) -> f64;
    fn advance(&self, eta: &[f64]) -> Vec<f64>;
    /// Internal steps per output step.
    fn inner_steps(&self) -> usize {
        1
    }
}

fn rk4(f: &dyn Fn(&[f64]) -> Vec<f64>, x: &[f64], h: f64) -> Vec<f64> {
    let n = x.len();
    let add = |a: &[f64], b: &[f64], s: f64| -> Vec<f64> { (0..n).map(|k| a[k] + s * b[k]).collect() };
    let k1 = f(x);
    let k2 = f(&add(x, &k1, h / 2.0));
    let k3 = f(&add(x, &k2, h / 2.0));
    let k4 = f(&add(x, &k3, h));
    (0..n).map(|k| x[k] + h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])).collect()
}

/// Continuous models use RK4 with step `sample_step / inner`; maps are iterated.
pub struct PolyAdvector<'a> {
    pub model: &'a PolyReducedModel,
    pub inner: usize,
}

impl Advect for PolyAdvector<'_> {
    fn dim(&self) -> usize {
        self.model.d
    }
    fn radius(&self) -> f64 {
        self.model.eta_radius
    }
    fn output_step(&self) -> f64 {
        self.model.sample_step
    }
    fn inner_steps(&self) -> usize {
        match self.model.time {
            TimeKind::Continuous => self.inner,
            TimeKind::Discrete { .. } => 1,
        }
    }
    fn advance(&self, eta: &[f64]) -> Vec<f64> {
        match self.model.time {
            TimeKind::Continuous => {
                let h = self.model.sample_step / self.inner as f64;
                rk4(&|x| self.model.eval(x).iter().cloned().collect(), eta, h)
            }
            TimeKind::Discrete { .. } => self.model.eval(eta).iter().cloned().collect(),
        }
    }
}

impl Advect for RbfModel {
    fn dim(&self) -> usize {
        self.centers.ncols()
    }
    fn radius(&self) -> f64 {
        self.eta_radius
    }
    fn output_step(&self) -> f64 {
        self.step
    }
    fn advance(&self, eta: &[f64]) -> Vec<f64> {
        self.eval(eta).iter().cloned().collect()
    }
}

/// Integrates the polar equations and maps back through W.
pub struct NormalFormAdvector<'a> {
    pub model: &'a NormalFormModel,
    pub inner: usize,
}

impl Advect for NormalFormAdvector<'_> {
    fn dim(&self) -> usize {
        self.model.w.nrows()
    }
    fn radius(&self) -> f64 {
        let r: f64 = self.model.rho_max.iter().map(|v| v * v).sum::<f64>().sqrt();
        r * self.model.w.iter().map(|v| v.norm()).fold(0.0, f64::max) * 2.0 * (self.model.modes() as f64).sqrt()
    }
    fn output_step(&self) -> f64 {
        self.model.sample_step
    }
    fn inner_steps(&self) -> usize {
        self.inner
    }
    fn advance(&self, eta: &[f64]) -> Vec<f64> {
        let Ok((rho, th)) = self.model.to_polar(eta) else {
            return vec![f64::NAN; eta.len()];
        };
        let n = rho.len();
        let mut x: Vec<f64> = rho.iter().chain(&th).cloned().collect();
        let f = |s: &[f64]| -> Vec<f64> {
            let mut o = self.model.amplitude_rhs(&s[..n]);
            o.extend(self.model.phase_rhs(&s[..n]));
            o
        };
        x = rk4(&f, &x, self.model.sample_step / self.inner as f64);
        self.model.from_polar(&x[..n], &x[n..])
    }
}

/// Advances `eta0` to `t_end` (rounded to whole output steps).
pub fn advect<A: Advect + ?Sized>(model: &A, eta0: &[f64], t_end: f64) -> Result<Advected> {
    if eta0.len() != model.dim() {
        return Err(Error::InvalidParameter("dimension mismatch".into()));
    }
    let h = model.output_step();
    let steps = (t_end / h).round().max(0.0) as usize;
    let limit = 10.0 * model.radius();
    let inner = model.inner_steps().max(1);
    let mut rows = vec![eta0.to_vec()];
    let mut truncated = false;
    let mut x = eta0.to_vec();
    'outer: for _ in 0..steps {
        for _ in 0..inner {
            x = model.advance(&x);
            let nrm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !nrm.is_finite() || (limit > 0.0 && nrm > limit) {
                truncated = true;
                break 'outer;
            }
        }
        rows.push(x.clone());
    }
    let n = rows.len();
    let etas = DMatrix::from_fn(n, model.dim(), |i, k| rows[i][k]);
    Ok(Advected { times: (0..n).map(|i| i as f64 * h).collect(), etas, truncated })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spiral(a: f64, w: f64, r0: f64, dt: f64, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(n, 2, |k, j| {
            let t = k as f64 * dt;
            let r = r0 * (a * t).exp();
            if j == 0 {
                r * (w * t).cos()
            } else {
                r * (w * t).sin()
            }
        })
    }

    #[test]
    fn linear_field_recovered() {
        let tr = vec![spiral(-0.2, 3.0, 1.0, 0.005, 2000), spiral(-0.2, 3.0, 0.5, 0.005, 2000)];
        let m = fit_poly_dynamics(&tr, 0.005, 3).unwrap();
        let r1 = m.linear_part();
        let want = DMatrix::from_row_slice(2, 2, &[-0.2, -3.0, 3.0, -0.2]);
        assert!((r1 - want).amax() < 1e-6);
        assert!(m.coeffs.columns(2, m.coeffs.ncols() - 2).amax() < 1e-6);
    }

    #[test]
    fn zero_trajectories_rejected() {
        let tr = vec![DMatrix::zeros(100, 2)];
        assert_eq!(fit_poly_dynamics(&tr, 0.01, 3).unwrap_err(), Error::Degenerate);
    }

    #[test]
    fn linear_normal_form() {
        let tr = vec![spiral(-0.2, 3.0, 1.0, 0.005, 2000)];
        let m = fit_poly_dynamics(&tr, 0.005, 3).unwrap();
        let nf = to_normal_form(&m, &tr, 3, 0.1).unwrap();
        assert!((nf.amp_coeffs[0][0] + 0.2).abs() < 1e-6);
        assert!((nf.phase_coeffs[0][0] - 3.0).abs() < 1e-6);
        assert!(nf.amp_coeffs[0][1].abs() < 1e-5);
    }

    #[test]
    fn real_eigenvalues_rejected() {
        let tr = vec![DMatrix::from_fn(500, 2, |k, j| {
            let t = k as f64 * 0.01;
            if j == 0 {
                (-t).exp()
            } else {
                0.5 * (-2.0 * t).exp()
            }
        })];
        let m = fit_poly_dynamics(&tr, 0.01, 1).unwrap();
        assert_eq!(to_normal_form(&m, &tr, 3, 0.1).unwrap_err(), Error::MixedMode);
    }

    #[test]
    fn rbf_interpolates_centers() {
        let tr = vec![spiral(-0.01, 0.7, 1.0, 1.0, 60)];
        let r = fit_rbf_map(&tr, 1.0).unwrap();
        for i in 0..59 {
            let p: Vec<f64> = tr[0].row(i).iter().cloned().collect();
            let v = r.eval(&p);
            assert!((v.transpose() - tr[0].row(i + 1)).amax() < 1e-6);
        }
    }

    #[test]
    fn rbf_single_pair_rejected() {
        let tr = vec![DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])];
        assert_eq!(fit_rbf_map(&tr, 1.0).unwrap_err(), Error::Degenerate);
    }

    #[test]
    fn advect_origin_stays() {
        let tr = vec![spiral(-0.2, 3.0, 1.0, 0.01, 500)];
        let m = fit_poly_dynamics(&tr, 0.01, 3).unwrap();
        let a = advect(&PolyAdvector { model: &m, inner: 10 }, &[0.0, 0.0], 1.0).unwrap();
        assert!(a.etas.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn basis_layout() {
        let b = amplitude_basis(2, 5);
        assert_eq!(b, vec![vec![0, 0], vec![2, 0], vec![0, 2], vec![4, 0], vec![2, 2], vec![0, 4]]);
    }
}
