//! Plain-text `key = value` pipeline configuration.
//!
//! Blank lines and text after `#` are ignored. Lists use commas; initial
//! conditions are `θ ωθ φ ωφ` quadruples separated by `;`. Every key is
//! optional and falls back to the defaults below.

use crate::CliError;
use furuta_ssm::parametric::InterpMode;
use furuta_ssm::sim::{ControllerConfig, Observable, PendulumParams, Trajectory};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimBlock {
    pub params: PendulumParams,
    pub k_p: f64,
    pub k_d: f64,
    pub k_phi_d: f64,
    pub k_i: f64,
    pub r_delay: usize,
    pub h_quant: Option<f64>,
    pub observable: Observable,
    /// Sampling times in milliseconds, one trajectory set per value.
    pub dt_ms: Vec<f64>,
    pub ics: Vec<[f64; 4]>,
    /// Extra seeded initial conditions drawn uniformly from ±`random_scale`.
    pub random_ics: usize,
    pub random_scale: [f64; 4],
    pub duration: f64,
    pub substeps: usize,
    pub theta_limit: Option<f64>,
}

impl SimBlock {
    /// The fed-back observable of a trajectory.
    pub fn observable_series(&self, tr: &Trajectory) -> Vec<f64> {
        tr.channel(self.observable.name()).map(<[f64]>::to_vec).unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainBlock {
    pub d: usize,
    pub m: usize,
    pub stride: usize,
    /// Leading samples dropped from every trajectory.
    pub skip: usize,
    pub geometry_order: u32,
    pub dynamics_order: u32,
    pub refine_iters: usize,
    pub interp: InterpMode,
    pub resonance_tol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisBlock {
    pub portrait_ms: f64,
    pub scan_ms: (f64, f64),
    pub scan_steps: usize,
    pub grid: usize,
    pub mu_tol_ms: f64,
    /// Samples per axis of the exported amplitude vector field.
    pub field_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosBlock {
    /// Trajectory CSVs; empty means every file listed by the simulate stage.
    pub inputs: Vec<PathBuf>,
    pub skip_s: f64,
    pub gp_m: usize,
    pub gp_stride: usize,
    pub gp_subsample: usize,
    pub gp_points: usize,
    pub ros_m: usize,
    pub ros_stride: usize,
    pub ros_theiler: usize,
    pub ros_kmax: usize,
    pub ros_fit: (usize, usize),
    pub rbf_d: usize,
    pub rbf_m: usize,
    pub rbf_centers: usize,
    pub rbf_ridge: f64,
    pub lyap_span_s: f64,
    pub pdf_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateBlock {
    pub input: Option<PathBuf>,
    pub dt_ms: f64,
    pub horizon_s: f64,
    pub inner_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub out_dir: PathBuf,
    pub seed: u64,
    pub sim: SimBlock,
    pub train: TrainBlock,
    pub analysis: AnalysisBlock,
    pub chaos: ChaosBlock,
    pub validate: ValidateBlock,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let c = ControllerConfig::nominal(0.03);
        Self {
            out_dir: PathBuf::from("out"),
            seed: 0,
            sim: SimBlock {
                params: PendulumParams::nominal(),
                k_p: c.k_p,
                k_d: c.k_d,
                k_phi_d: c.k_phi_d,
                k_i: c.k_i,
                r_delay: c.r_delay,
                h_quant: None,
                observable: Observable::Theta,
                dt_ms: vec![30.5, 31.0, 32.0, 32.5],
                ics: vec![
                    [0.001, 0.0, 0.0, 0.0],
                    [-0.002, 0.0, 0.0, 0.0],
                    [0.05, 0.0, 0.0, 0.0],
                    [0.0, 0.0, 0.0, 0.3],
                    [0.02, 0.0, 0.0, -0.5],
                    [0.1, 0.0, 0.0, 0.0],
                ],
                random_ics: 0,
                random_scale: [0.05, 0.0, 0.0, 0.5],
                duration: 150.0,
                substeps: 256,
                theta_limit: Some(0.3),
            },
            train: TrainBlock {
                d: 4,
                m: 20,
                stride: 1,
                skip: 10,
                geometry_order: 3,
                dynamics_order: 5,
                refine_iters: 0,
                interp: InterpMode::Linear,
                resonance_tol: 0.01,
            },
            analysis: AnalysisBlock {
                portrait_ms: 30.8,
                scan_ms: (30.5, 32.5),
                scan_steps: 40,
                grid: 20,
                mu_tol_ms: 1e-3,
                field_samples: 41,
            },
            chaos: ChaosBlock {
                inputs: Vec::new(),
                skip_s: 100.0,
                gp_m: 8,
                gp_stride: 2,
                gp_subsample: 8,
                gp_points: 5000,
                ros_m: 10,
                ros_stride: 2,
                ros_theiler: 200,
                ros_kmax: 400,
                ros_fit: (0, 200),
                rbf_d: 6,
                rbf_m: 30,
                rbf_centers: 4000,
                rbf_ridge: 1e-10,
                lyap_span_s: 200.0,
                pdf_bins: 40,
            },
            validate: ValidateBlock { input: None, dt_ms: 31.2, horizon_s: 20.0, inner_steps: 4 },
        }
    }
}

fn num(key: &str, v: &str) -> Result<f64, CliError> {
    v.trim().parse::<f64>().map_err(|_| CliError::Config(format!("{key}: expected a number, got {v:?}")))
}

fn int(key: &str, v: &str) -> Result<usize, CliError> {
    v.trim().parse::<usize>().map_err(|_| CliError::Config(format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| num(key, s)).collect()
}

fn pair<T>(key: &str, v: &str, f: fn(&str, &str) -> Result<T, CliError>) -> Result<(T, T), CliError> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != 2 {
        return Err(CliError::Config(format!("{key}: expected two comma-separated values")));
    }
    Ok((f(key, parts[0])?, f(key, parts[1])?))
}

fn quad(key: &str, v: &str) -> Result<[f64; 4], CliError> {
    let xs: Vec<f64> = v.split_whitespace().map(|s| num(key, s)).collect::<Result<_, _>>()?;
    xs.try_into().map_err(|_| CliError::Config(format!("{key}: expected four numbers")))
}

fn opt_num(key: &str, v: &str) -> Result<Option<f64>, CliError> {
    if v.trim() == "none" {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut kv = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", lineno + 1)))?;
            if kv.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key {}", lineno + 1, k.trim())));
            }
        }
        let mut c = Self::default();
        for (k, v) in &kv {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|_| CliError::Missing(path.to_path_buf()))?;
        Self::parse(&text)
    }

    fn set(&mut self, k: &str, v: &str) -> Result<(), CliError> {
        let p = &mut self.sim.params;
        match k {
            "out_dir" => self.out_dir = PathBuf::from(v),
            "seed" => self.seed = v.parse().map_err(|_| CliError::Config("seed: expected an integer".into()))?,
            "sim.m" => p.m = num(k, v)?,
            "sim.l" => p.l = num(k, v)?,
            "sim.r_arm" => p.r_arm = num(k, v)?,
            "sim.g" => p.g = num(k, v)?,
            "sim.j_p" => p.j_p = num(k, v)?,
            "sim.j_a" => p.j_a = num(k, v)?,
            "sim.b1" => p.b1 = num(k, v)?,
            "sim.b2" => p.b2 = num(k, v)?,
            "sim.n_motor" => p.n_motor = num(k, v)?,
            "sim.k_emf" => p.k_emf = num(k, v)?,
            "sim.k_p" => self.sim.k_p = num(k, v)?,
            "sim.k_d" => self.sim.k_d = num(k, v)?,
            "sim.k_phi_d" => self.sim.k_phi_d = num(k, v)?,
            "sim.k_i" => self.sim.k_i = num(k, v)?,
            "sim.r_delay" => self.sim.r_delay = int(k, v)?,
            "sim.h_quant" => self.sim.h_quant = opt_num(k, v)?,
            "sim.observable" => {
                self.sim.observable =
                    Observable::parse(v).ok_or_else(|| CliError::Config(format!("{k}: unknown observable {v}")))?
            }
            "sim.dt_ms" => self.sim.dt_ms = list(k, v)?,
            "sim.ics" => {
                self.sim.ics =
                    v.split(';').filter(|s| !s.trim().is_empty()).map(|s| quad(k, s)).collect::<Result<_, _>>()?
            }
            "sim.random_ics" => self.sim.random_ics = int(k, v)?,
            "sim.random_scale" => self.sim.random_scale = quad(k, &v.replace(',', " "))?,
            "sim.duration" => self.sim.duration = num(k, v)?,
            "sim.substeps" => self.sim.substeps = int(k, v)?,
            "sim.theta_limit" => self.sim.theta_limit = opt_num(k, v)?,
            "train.d" => self.train.d = int(k, v)?,
            "train.m" => self.train.m = int(k, v)?,
            "train.stride" => self.train.stride = int(k, v)?,
            "train.skip" => self.train.skip = int(k, v)?,
            "train.geometry_order" => self.train.geometry_order = int(k, v)? as u32,
            "train.dynamics_order" => self.train.dynamics_order = int(k, v)? as u32,
            "train.refine_iters" => self.train.refine_iters = int(k, v)?,
            "train.interp" => {
                self.train.interp = match v {
                    "linear" => InterpMode::Linear,
                    "spline" => InterpMode::Spline,
                    _ => return Err(CliError::Config(format!("{k}: expected linear or spline"))),
                }
            }
            "train.resonance_tol" => self.train.resonance_tol = num(k, v)?,
            "analysis.portrait_ms" => self.analysis.portrait_ms = num(k, v)?,
            "analysis.scan_ms" => self.analysis.scan_ms = pair(k, v, num)?,
            "analysis.scan_steps" => self.analysis.scan_steps = int(k, v)?,
            "analysis.grid" => self.analysis.grid = int(k, v)?,
            "analysis.mu_tol_ms" => self.analysis.mu_tol_ms = num(k, v)?,
            "analysis.field_samples" => self.analysis.field_samples = int(k, v)?,
            "chaos.inputs" => {
                self.chaos.inputs = v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect()
            }
            "chaos.skip_s" => self.chaos.skip_s = num(k, v)?,
            "chaos.gp_m" => self.chaos.gp_m = int(k, v)?,
            "chaos.gp_stride" => self.chaos.gp_stride = int(k, v)?,
            "chaos.gp_subsample" => self.chaos.gp_subsample = int(k, v)?,
            "chaos.gp_points" => self.chaos.gp_points = int(k, v)?,
            "chaos.ros_m" => self.chaos.ros_m = int(k, v)?,
            "chaos.ros_stride" => self.chaos.ros_stride = int(k, v)?,
            "chaos.ros_theiler" => self.chaos.ros_theiler = int(k, v)?,
            "chaos.ros_kmax" => self.chaos.ros_kmax = int(k, v)?,
            "chaos.ros_fit" => self.chaos.ros_fit = pair(k, v, int)?,
            "chaos.rbf_d" => self.chaos.rbf_d = int(k, v)?,
            "chaos.rbf_m" => self.chaos.rbf_m = int(k, v)?,
            "chaos.rbf_centers" => self.chaos.rbf_centers = int(k, v)?,
            "chaos.rbf_ridge" => self.chaos.rbf_ridge = num(k, v)?,
            "chaos.lyap_span_s" => self.chaos.lyap_span_s = num(k, v)?,
            "chaos.pdf_bins" => self.chaos.pdf_bins = int(k, v)?,
            "validate.input" => self.validate.input = Some(PathBuf::from(v)),
            "validate.dt_ms" => self.validate.dt_ms = num(k, v)?,
            "validate.horizon_s" => self.validate.horizon_s = num(k, v)?,
            "validate.inner_steps" => self.validate.inner_steps = int(k, v)?,
            _ => return Err(CliError::Config(format!("unknown key {k}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Config(m.to_string()));
        self.sim.params.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.sim.dt_ms.is_empty() || self.sim.dt_ms.iter().any(|d| !(*d > 0.0)) {
            return bad("sim.dt_ms must list positive sampling times");
        }
        if !(self.sim.duration > 0.0) || !self.sim.duration.is_finite() {
            return bad("sim.duration must be positive");
        }
        if self.sim.substeps == 0 {
            return bad("sim.substeps must be positive");
        }
        if self.sim.ics.is_empty() && self.sim.random_ics == 0 {
            return bad("no initial conditions");
        }
        for dt in &self.sim.dt_ms {
            self.controller(*dt).validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        let t = &self.train;
        if t.d == 0 || t.d > t.m || t.stride == 0 {
            return bad("train: need 0 < d <= m and stride > 0");
        }
        if t.dynamics_order == 0 || t.geometry_order == 0 {
            return bad("train: orders must be positive");
        }
        let a = &self.analysis;
        if !(a.scan_ms.1 > a.scan_ms.0) || a.scan_steps == 0 || a.grid < 2 {
            return bad("analysis: need an increasing scan range, scan_steps > 0 and grid >= 2");
        }
        let c = &self.chaos;
        if c.ros_fit.1 > c.ros_kmax || c.ros_fit.1 < c.ros_fit.0 + 2 {
            return bad("chaos.ros_fit must lie inside [0, ros_kmax] and span at least two samples");
        }
        if c.gp_m == 0 || c.gp_stride == 0 || c.gp_subsample == 0 || c.ros_m == 0 || c.ros_stride == 0 {
            return bad("chaos: embedding sizes must be positive");
        }
        if c.rbf_d == 0 || c.rbf_d > c.rbf_m || c.pdf_bins < 10 {
            return bad("chaos: need 0 < rbf_d <= rbf_m and pdf_bins >= 10");
        }
        if !(self.validate.horizon_s > 0.0) || self.validate.inner_steps == 0 {
            return bad("validate: horizon_s and inner_steps must be positive");
        }
        Ok(())
    }

    pub fn controller(&self, dt_ms: f64) -> ControllerConfig {
        ControllerConfig {
            k_p: self.sim.k_p,
            k_d: self.sim.k_d,
            k_phi_d: self.sim.k_phi_d,
            k_i: self.sim.k_i,
            dt_sample: dt_ms * 1e-3,
            r_delay: self.sim.r_delay,
            h_quant: self.sim.h_quant,
            observable: self.sim.observable,
        }
    }

    /// SHA-256 of the canonical JSON form of the effective configuration.
    pub fn hash(&self) -> String {
        let canon = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(canon.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
