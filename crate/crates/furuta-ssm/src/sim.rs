//! Furuta pendulum under sampled, delayed and optionally quantized feedback.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub m: f64,
    pub l: f64,
    pub r_arm: f64,
    pub g: f64,
    pub j_p: f64,
    pub j_a: f64,
    pub b1: f64,
    pub b2: f64,
    pub n_motor: f64,
    pub k_emf: f64,
}

/// Relative threshold on Δ(θ)/(J_p J_a) below which the mass matrix is treated as singular.
pub const DELTA_EPS: f64 = 1e-9;

impl PendulumParams {
    pub fn nominal() -> Self {
        Self {
            m: 0.191,
            l: 0.15,
            r_arm: 0.094,
            g: 9.81,
            j_p: 5.73e-3,
            j_a: 1.34e-3,
            b1: 0.039,
            b2: 0.02094,
            n_motor: 1.05,
            k_emf: 1.12706,
        }
    }

    /// Same inertias, no damping and no back-EMF.
    pub fn conservative(&self) -> Self {
        Self { b1: 0.0, b2: 0.0, k_emf: 0.0, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("m", self.m),
            ("l", self.l),
            ("r_arm", self.r_arm),
            ("J_p", self.j_p),
            ("J_a", self.j_a),
        ];
        for (name, v) in pos {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive")));
            }
        }
        for (name, v) in [("g", self.g), ("b1", self.b1), ("b2", self.b2), ("N", self.n_motor), ("K", self.k_emf)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be finite")));
            }
        }
        if self.min_delta() <= DELTA_EPS * self.j_p * self.j_a {
            return Err(Error::SingularMassMatrix);
        }
        Ok(())
    }

    pub fn delta(&self, theta: f64) -> f64 {
        let (s, c) = theta.sin_cos();
        let mrl = self.m * self.r_arm * self.l;
        self.j_p * (self.j_a + self.j_p * s * s) - mrl * mrl * c * c
    }

    /// Minimum of Δ over a uniform grid of 3601 angles in [−π, π].
    pub fn min_delta(&self) -> f64 {
        (0..=3600)
            .map(|k| self.delta(-std::f64::consts::PI + k as f64 * std::f64::consts::PI / 1800.0))
            .fold(f64::INFINITY, f64::min)
    }

    /// Kinetic plus potential energy, zero potential at the horizontal.
    pub fn energy(&self, s: &SimState) -> f64 {
        let (sn, c) = s.theta.sin_cos();
        let ja = self.j_a + self.j_p * sn * sn;
        0.5 * self.j_p * s.omega_theta * s.omega_theta + 0.5 * ja * s.omega_phi * s.omega_phi
            - self.m * self.r_arm * self.l * c * s.omega_theta * s.omega_phi
            + self.m * self.g * self.l * c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Observable {
    #[default]
    Theta,
    OmegaTheta,
    Phi,
    OmegaPhi,
}

impl Observable {
    pub fn name(&self) -> &'static str {
        match self {
            Observable::Theta => "theta",
            Observable::OmegaTheta => "omega_theta",
            Observable::Phi => "phi",
            Observable::OmegaPhi => "omega_phi",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "theta" => Some(Observable::Theta),
            "omega_theta" => Some(Observable::OmegaTheta),
            "phi" => Some(Observable::Phi),
            "omega_phi" => Some(Observable::OmegaPhi),
            _ => None,
        }
    }

    pub fn of(&self, s: &SimState) -> f64 {
        match self {
            Observable::Theta => s.theta,
            Observable::OmegaTheta => s.omega_theta,
            Observable::Phi => s.phi,
            Observable::OmegaPhi => s.omega_phi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub k_p: f64,
    pub k_d: f64,
    pub k_phi_d: f64,
    pub k_i: f64,
    pub dt_sample: f64,
    pub r_delay: usize,
    pub h_quant: Option<f64>,
    pub observable: Observable,
}

impl ControllerConfig {
    pub fn nominal(dt_sample: f64) -> Self {
        Self {
            k_p: 15.5,
            k_d: 5.45,
            k_phi_d: 1.5,
            k_i: 0.0,
            dt_sample,
            r_delay: 1,
            h_quant: None,
            observable: Observable::Theta,
        }
    }

    pub fn uncontrolled(dt_sample: f64) -> Self {
        Self { k_p: 0.0, k_d: 0.0, k_phi_d: 0.0, ..Self::nominal(dt_sample) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt_sample > 0.0) || !self.dt_sample.is_finite() {
            return Err(Error::InvalidParameter("dt_sample must be positive".into()));
        }
        if self.r_delay > 1 {
            return Err(Error::InvalidParameter("r_delay must be 0 or 1".into()));
        }
        if let Some(h) = self.h_quant {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::InvalidParameter("h_quant must be positive".into()));
            }
        }
        for v in [self.k_p, self.k_d, self.k_phi_d, self.k_i] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter("gains must be finite".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimState {
    pub theta: f64,
    pub omega_theta: f64,
    pub phi: f64,
    pub omega_phi: f64,
    /// Integral state; stays 0 unless K_I ≠ 0.
    pub x_i: f64,
}

impl SimState {
    pub fn new(theta: f64, omega_theta: f64, phi: f64, omega_phi: f64) -> Self {
        Self { theta, omega_theta, phi, omega_phi, x_i: 0.0 }
    }

    fn to_array(self) -> [f64; 5] {
        [self.theta, self.omega_theta, self.phi, self.omega_phi, self.x_i]
    }

    fn from_array(a: [f64; 5]) -> Self {
        Self { theta: a[0], omega_theta: a[1], phi: a[2], omega_phi: a[3], x_i: a[4] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Samples taken at t_i = iΔt. Negative indices read the prehistory.
#[derive(Debug, Clone)]
pub struct SampleBuffer {
    xi: Vec<f64>,
    phi: Vec<f64>,
    x_i: Vec<f64>,
    pre: (f64, f64, f64),
}

impl SampleBuffer {
    pub fn new(prehistory: &SimState, observable: Observable) -> Self {
        Self {
            xi: Vec::new(),
            phi: Vec::new(),
            x_i: Vec::new(),
            pre: (observable.of(prehistory), prehistory.phi, prehistory.x_i),
        }
    }

    pub fn push(&mut self, xi: f64, phi: f64, x_i: f64) {
        self.xi.push(xi);
        self.phi.push(phi);
        self.x_i.push(x_i);
    }

    pub fn len(&self) -> usize {
        self.xi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xi.is_empty()
    }

    /// (ξ, φ, x_I) at sampling index `i`.
    pub fn get(&self, i: i64) -> Option<(f64, f64, f64)> {
        if i < 0 {
            return Some(self.pre);
        }
        let i = i as usize;
        (i < self.xi.len()).then(|| (self.xi[i], self.phi[i], self.x_i[i]))
    }

    /// Overwrite a stored sample; used to probe the delay structure.
    pub fn set(&mut self, i: usize, xi: f64, phi: f64) {
        self.xi[i] = xi;
        self.phi[i] = phi;
    }
}

pub fn rho(t: f64, dt_sample: f64, r_delay: usize) -> f64 {
    t + r_delay as f64 * dt_sample - dt_sample * (t / dt_sample).floor()
}

pub fn average_delay(dt_sample: f64, r_delay: usize) -> f64 {
    (r_delay as f64 + 0.5) * dt_sample
}

/// h·⌊x/h⌋, treating x/h within a few ulps of an integer as that integer so
/// exact decimal multiples such as (0.3, 0.1) are fixed points.
pub fn quantize(x: f64, h: f64) -> f64 {
    h * counts(x / h)
}

fn counts(q: f64) -> f64 {
    let r = q.round();
    if (q - r).abs() <= 4.0 * f64::EPSILON * r.abs().max(1.0) {
        r
    } else {
        q.floor()
    }
}

/// Voltage held on [t_i, t_{i+1}).
pub fn control_voltage(buf: &SampleBuffer, cfg: &ControllerConfig, interval_index: usize) -> Result<f64> {
    let i = interval_index as i64 - cfg.r_delay as i64;
    let (xi1, phi1, xint) = buf.get(i).ok_or(Error::InsufficientPrehistory)?;
    let (xi2, phi2, _) = buf.get(i - 1).ok_or(Error::InsufficientPrehistory)?;
    let dt = cfg.dt_sample;
    let dxi = (xi1 - xi2) / dt;
    let dphi = (phi1 - phi2) / dt;
    Ok(match cfg.h_quant {
        None => -cfg.k_p * xi1 - cfg.k_d * dxi + cfg.k_phi_d * dphi - cfg.k_i * xint,
        Some(h) => {
            let c = -cfg.k_p * counts(xi1 / h) - cfg.k_i * xint / h - cfg.k_d * counts(dxi / h)
                + cfg.k_phi_d * counts(dphi / h);
            h * counts(c)
        }
    })
}

/// Mechanical vector field with ZOH input `u`; the x_I component is left at 0.
pub fn rhs(state: &SimState, u: f64, p: &PendulumParams) -> Result<SimState> {
    let (s, c) = state.theta.sin_cos();
    let delta = p.delta(state.theta);
    if delta.abs() < DELTA_EPS * p.j_p * p.j_a {
        return Err(Error::SingularMassMatrix);
    }
    let wt = state.omega_theta;
    let wp = state.omega_phi;
    let mrl = p.m * p.r_arm * p.l;
    let coup = mrl * c;
    let ja = p.j_a + p.j_p * s * s;
    let torque = p.n_motor * u - p.k_emf * wp;
    let a = p.j_p * s * c * wp * wp - p.b1 * wt + p.m * p.g * p.l * s;
    let b = torque - 2.0 * p.j_p * s * c * wt * wp - p.b2 * wp - mrl * s * wt * wt;
    Ok(SimState {
        theta: wt,
        omega_theta: (ja * a + coup * b) / delta,
        phi: wp,
        omega_phi: (p.j_p * b + coup * a) / delta,
        x_i: 0.0,
    })
}

fn closed_rhs(x: [f64; 5], u: f64, p: &PendulumParams, cfg: &ControllerConfig) -> Result<[f64; 5]> {
    let st = SimState::from_array(x);
    let mut d = rhs(&st, u, p)?;
    if cfg.k_i != 0.0 {
        let xi = cfg.observable.of(&st);
        d.x_i = match cfg.h_quant {
            Some(h) => quantize(xi, h),
            None => xi,
        };
    }
    Ok(d.to_array())
}

fn rk4_step(x: [f64; 5], u: f64, hs: f64, p: &PendulumParams, cfg: &ControllerConfig) -> Result<[f64; 5]> {
    let add = |a: [f64; 5], b: [f64; 5], s: f64| {
        let mut o = a;
        for k in 0..5 {
            o[k] += s * b[k];
        }
        o
    };
    let k1 = closed_rhs(x, u, p, cfg)?;
    let k2 = closed_rhs(add(x, k1, hs / 2.0), u, p, cfg)?;
    let k3 = closed_rhs(add(x, k2, hs / 2.0), u, p, cfg)?;
    let k4 = closed_rhs(add(x, k3, hs), u, p, cfg)?;
    let mut o = x;
    for k in 0..5 {
        o[k] += hs / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
    }
    Ok(o)
}

pub const CHANNELS: [&str; 5] = ["theta", "omega_theta", "phi", "omega_phi", "u"];

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt_out: f64,
    pub theta: Vec<f64>,
    pub omega_theta: Vec<f64>,
    pub phi: Vec<f64>,
    pub omega_phi: Vec<f64>,
    pub u: Vec<f64>,
    pub x_i: Vec<f64>,
    /// Set when the run was cut short by `SimOptions::theta_limit`.
    pub stopped_at: Option<f64>,
}

impl Trajectory {
    fn empty(dt_out: f64) -> Self {
        Self {
            t0: 0.0,
            dt_out,
            theta: Vec::new(),
            omega_theta: Vec::new(),
            phi: Vec::new(),
            omega_phi: Vec::new(),
            u: Vec::new(),
            x_i: Vec::new(),
            stopped_at: None,
        }
    }

    fn push(&mut self, s: &SimState, u: f64) {
        self.theta.push(s.theta);
        self.omega_theta.push(s.omega_theta);
        self.phi.push(s.phi);
        self.omega_phi.push(s.omega_phi);
        self.u.push(u);
        self.x_i.push(s.x_i);
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt_out
    }

    pub fn state(&self, k: usize) -> SimState {
        SimState {
            theta: self.theta[k],
            omega_theta: self.omega_theta[k],
            phi: self.phi[k],
            omega_phi: self.omega_phi[k],
            x_i: self.x_i[k],
        }
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        match name {
            "theta" => Some(&self.theta),
            "omega_theta" => Some(&self.omega_theta),
            "phi" => Some(&self.phi),
            "omega_phi" => Some(&self.omega_phi),
            "u" => Some(&self.u),
            _ => None,
        }
    }

    /// CSV with header `t,theta,omega_theta,phi,omega_phi,u`.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(self.len() * 96);
        s.push_str("t,theta,omega_theta,phi,omega_phi,u\n");
        for k in 0..self.len() {
            s.push_str(&format!(
                "{:e},{:e},{:e},{:e},{:e},{:e}\n",
                self.time(k),
                self.theta[k],
                self.omega_theta[k],
                self.phi[k],
                self.omega_phi[k],
                self.u[k]
            ));
        }
        s
    }

    /// Parses the format written by `to_csv`; lines starting with `#` are skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::InvalidParameter(format!("trajectory csv: {m}"));
        let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("missing header"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let idx = |name: &str| cols.iter().position(|c| *c == name).ok_or_else(|| bad(name));
        let it = idx("t")?;
        let ic = [idx("theta")?, idx("omega_theta")?, idx("phi")?, idx("omega_phi")?, idx("u")?];
        let mut t = Vec::new();
        let mut tr = Trajectory::empty(0.0);
        for line in lines {
            let f: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad("non-numeric field"))?;
            if f.len() != cols.len() {
                return Err(bad("ragged row"));
            }
            t.push(f[it]);
            tr.push(&SimState::new(f[ic[0]], f[ic[1]], f[ic[2]], f[ic[3]]), f[ic[4]]);
        }
        if t.len() < 2 {
            return Err(bad("fewer than two rows"));
        }
        tr.t0 = t[0];
        tr.dt_out = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        Ok(tr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// RK4 steps per sampling interval.
    pub substeps: usize,
    /// Output points per sampling interval; must divide `substeps`.
    pub outputs_per_interval: usize,
    /// Stop (without error) once |θ| reaches this value.
    pub theta_limit: Option<f64>,
}

impl SimOptions {
    pub fn new(substeps: usize) -> Self {
        Self { substeps, outputs_per_interval: 1, theta_limit: None }
    }
}

/// Output at the sampling instants, ⌊t_end/Δt⌉ intervals plus the end point.
pub fn simulate(
    params: &PendulumParams,
    cfg: &ControllerConfig,
    ic: &SimState,
    prehistory: &SimState,
    t_end: f64,
    substeps: usize,
) -> Result<Trajectory> {
    simulate_opts(params, cfg, ic, prehistory, t_end, &SimOptions::new(substeps))
}

pub fn simulate_opts(
    params: &PendulumParams,
    cfg: &ControllerConfig,
    ic: &SimState,
    prehistory: &SimState,
    t_end: f64,
    opts: &SimOptions,
) -> Result<Trajectory> {
    params.validate()?;
    cfg.validate()?;
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidParameter("t_end must be positive".into()));
    }
    let k_out = opts.outputs_per_interval;
    if opts.substeps == 0 || k_out == 0 || opts.substeps % k_out != 0 {
        return Err(Error::InvalidParameter("substeps must be a positive multiple of outputs_per_interval".into()));
    }
    if !ic.is_finite() || !prehistory.is_finite() {
        return Err(Error::InvalidParameter("initial state must be finite".into()));
    }
    let dt = cfg.dt_sample;
    let n_int = (t_end / dt).round().max(1.0) as usize;
    let hs = dt / opts.substeps as f64;
    let per = opts.substeps / k_out;
    let mut out = Trajectory::empty(dt / k_out as f64);
    let mut buf = SampleBuffer::new(prehistory, cfg.observable);
    let mut x = ic.to_array();
    for i in 0..n_int {
        let st = SimState::from_array(x);
        if let Some(lim) = opts.theta_limit {
            if st.theta.abs() >= lim {
                out.stopped_at = Some(i as f64 * dt);
                return Ok(out);
            }
        }
        buf.push(cfg.observable.of(&st), st.phi, st.x_i);
        let u = control_voltage(&buf, cfg, i)?;
        for k in 0..opts.substeps {
            if k % per == 0 {
                out.push(&SimState::from_array(x), u);
            }
            x = rk4_step(x, u, hs, params, cfg)?;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence((i + 1) as f64 * dt));
        }
    }
    let st = SimState::from_array(x);
    buf.push(cfg.observable.of(&st), st.phi, st.x_i);
    let u = control_voltage(&buf, cfg, n_int)?;
    out.push(&st, u);
    Ok(out)
}
