//! Pipeline stages. Each reads the artifacts of earlier stages from `out_dir`
//! and writes its own; nothing is shared in memory between stages.

use crate::config::{PipelineConfig, TrainBlock};
use crate::output::{self, read_json, write_csv, write_json};
use crate::{CliError, StageReport};
use furuta_ssm::diagnostics::{
    compare_pdfs, correlation_dimension, dtw_nmte, lyapunov_data, lyapunov_model, mean_period_samples,
    DataLyapunov, DimensionEstimate, LyapunovEstimate, RosensteinOptions,
};
use furuta_ssm::dynamics::{
    advect, fit_poly_map, fit_rbf_map_opts, to_normal_form, NormalFormAdvector, NormalFormModel, NormalFormRecord,
    RbfOptions,
};
use furuta_ssm::embedding::{embed, Dataset, Split};
use furuta_ssm::manifold::{fit_geometry_opts, fit_points, GeometryOptions, ManifoldModel, ManifoldRecord};
use furuta_ssm::parametric::{
    default_rho_max, find_fixed_points_in, interpolate, scan_bifurcations_opts, Event, EventKind, InterpMode,
    ParamNode, ParametricModel, PortraitAnalysis, ScanOptions,
};
use furuta_ssm::sim::{simulate_opts, SimOptions, SimState, Trajectory};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunEntry {
    pub dt_ms: f64,
    pub ic: [f64; 4],
    pub file: String,
    pub samples: usize,
    pub stopped_at: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimManifest {
    pub runs: Vec<RunEntry>,
}

pub const SIM_MANIFEST: &str = "simulate.json";
pub const PARAMETRIC: &str = "parametric.json";

/// Configured initial conditions followed by the seeded random ones.
pub fn initial_conditions(cfg: &PipelineConfig) -> Vec<[f64; 4]> {
    let mut ics = cfg.sim.ics.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.sim.random_ics {
        let s = cfg.sim.random_scale;
        ics.push([0, 1, 2, 3].map(|k| if s[k] > 0.0 { rng.gen_range(-s[k]..=s[k]) } else { 0.0 }));
    }
    ics
}

fn ensure_dir(cfg: &PipelineConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(())
}

pub fn simulate_one(cfg: &PipelineConfig, dt_ms: f64, ic: [f64; 4]) -> Result<Trajectory, CliError> {
    let ctrl = cfg.controller(dt_ms);
    let s = SimState::new(ic[0], ic[1], ic[2], ic[3]);
    let opts = SimOptions { substeps: cfg.sim.substeps, outputs_per_interval: 1, theta_limit: cfg.sim.theta_limit };
    Ok(simulate_opts(&cfg.sim.params, &ctrl, &s, &s, cfg.sim.duration, &opts)?)
}

pub fn cmd_simulate(cfg: &PipelineConfig) -> Result<StageReport, CliError> {
    ensure_dir(cfg)?;
    let ics = initial_conditions(cfg);
    let jobs: Vec<(usize, f64, usize, [f64; 4])> = cfg
        .sim
        .dt_ms
        .iter()
        .enumerate()
        .flat_map(|(a, dt)| ics.iter().enumerate().map(move |(b, ic)| (a, *dt, b, *ic)))
        .collect();
    let runs: Vec<(RunEntry, String)> = jobs
        .par_iter()
        .map(|&(a, dt, b, ic)| {
            let tr = simulate_one(cfg, dt, ic)?;
            let name = format!("traj_{a:02}_{b:02}.csv");
            Ok((RunEntry { dt_ms: dt, ic, file: name, samples: tr.len(), stopped_at: tr.stopped_at }, tr.to_csv()))
        })
        .collect::<Result<_, CliError>>()?;
    let mut report = StageReport::default();
    for (entry, body) in &runs {
        let ic = entry.ic.map(|v| format!("{v:e}")).join(" ");
        report.files.push(write_csv(
            cfg,
            &entry.file,
            &[("dt_ms", format!("{:e}", entry.dt_ms)), ("ic", ic)],
            body,
        )?);
    }
    let manifest = SimManifest { runs: runs.into_iter().map(|(e, _)| e).collect() };
    report.files.push(write_json(cfg, SIM_MANIFEST, "simulate", manifest)?);
    Ok(report)
}

pub fn load_trajectory(p: &Path) -> Result<Trajectory, CliError> {
    let text = std::fs::read_to_string(p).map_err(|_| CliError::Missing(p.to_path_buf()))?;
    Trajectory::from_csv(&text).map_err(|e| CliError::malformed(p.to_path_buf(), e))
}

fn load_manifest(cfg: &PipelineConfig) -> Result<SimManifest, CliError> {
    Ok(read_json::<SimManifest>(&output::path(cfg, SIM_MANIFEST))?.payload)
}

/// A trained parameter node: SSM geometry, polynomial flow map and polar normal form.
#[derive(Debug, Clone)]
pub struct NodeFit {
    pub dt_ms: f64,
    pub manifold: ManifoldModel,
    pub normal_form: NormalFormModel,
    pub map_eigenvalues: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NodeRecord {
    pub dt_ms: f64,
    pub manifold: ManifoldRecord,
    pub normal_form: NormalFormRecord,
    pub map_eigenvalues: Vec<[f64; 2]>,
}

/// Fits one node from observable series sampled at `dt_ms`.
pub fn fit_node(series: &[Vec<f64>], dt_ms: f64, t: &TrainBlock) -> Result<NodeFit, CliError> {
    let data: Vec<(Vec<f64>, Split)> = series
        .iter()
        .filter(|s| s.len() > t.skip + (t.m - 1) * t.stride + 2)
        .map(|s| (s[t.skip..].to_vec(), Split::Train))
        .collect();
    let ds = Dataset::from_series(&data, 0.0, t.m, t.stride)?;
    let geo = GeometryOptions { refine_iters: t.refine_iters, ..GeometryOptions::default() };
    let manifold = fit_geometry_opts(&ds, t.d, t.geometry_order, &geo)?;
    let etas: Vec<DMatrix<f64>> = ds.split(Split::Train).map(|e| manifold.project_rows(&e.points())).collect();
    let dt = dt_ms * 1e-3;
    let map = fit_poly_map(&etas, dt, t.dynamics_order)?;
    let normal_form = to_normal_form(&map, &etas, t.dynamics_order, t.resonance_tol)?;
    Ok(NodeFit {
        dt_ms,
        manifold,
        normal_form,
        map_eigenvalues: map.eigenvalues().iter().map(|v| [v.re, v.im]).collect(),
    })
}

fn node_file(a: usize) -> String {
    format!("model_{a:02}.json")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParametricIndex {
    pub interp: InterpMode,
    pub nodes: Vec<(f64, String)>,
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<StageReport, CliError> {
    ensure_dir(cfg)?;
    let manifest = load_manifest(cfg)?;
    let mut dts: Vec<f64> = Vec::new();
    for r in &manifest.runs {
        if !dts.contains(&r.dt_ms) {
            dts.push(r.dt_ms);
        }
    }
    let fits: Vec<NodeFit> = dts
        .par_iter()
        .map(|&dt| {
            let series: Vec<Vec<f64>> = manifest
                .runs
                .iter()
                .filter(|r| r.dt_ms == dt)
                .map(|r| {
                    let tr = load_trajectory(&output::path(cfg, &r.file))?;
                    Ok(cfg.sim.observable_series(&tr))
                })
                .collect::<Result<_, CliError>>()?;
            fit_node(&series, dt, &cfg.train)
        })
        .collect::<Result<_, CliError>>()?;
    let mut report = StageReport::default();
    let mut index = ParametricIndex { interp: cfg.train.interp, nodes: Vec::new() };
    for (a, f) in fits.iter().enumerate() {
        let rec = NodeRecord {
            dt_ms: f.dt_ms,
            manifold: f.manifold.to_record(),
            normal_form: f.normal_form.to_record(),
            map_eigenvalues: f.map_eigenvalues.clone(),
        };
        report.files.push(write_json(cfg, &node_file(a), "train", rec)?);
        index.nodes.push((f.dt_ms, node_file(a)));
        if !f.normal_form.resonances.is_empty() {
            report.unreliable.push(format!("node {} ms: near-resonant modes {:?}", f.dt_ms, f.normal_form.resonances));
        }
    }
    report.files.push(write_json(cfg, PARAMETRIC, "train", index)?);
    Ok(report)
}

pub fn load_nodes(cfg: &PipelineConfig) -> Result<(InterpMode, Vec<NodeFit>), CliError> {
    let index = read_json::<ParametricIndex>(&output::path(cfg, PARAMETRIC))?.payload;
    let mut out = Vec::new();
    for (_, file) in &index.nodes {
        let p = output::path(cfg, file);
        let rec = read_json::<NodeRecord>(&p)?.payload;
        out.push(NodeFit {
            dt_ms: rec.dt_ms,
            manifold: ManifoldModel::from_record(&rec.manifold).map_err(|e| CliError::malformed(p.clone(), e))?,
            normal_form: NormalFormModel::from_record(&rec.normal_form)
                .map_err(|e| CliError::malformed(p.clone(), e))?,
            map_eigenvalues: rec.map_eigenvalues,
        });
    }
    Ok((index.interp, out))
}

/// Parametric model in the sampling time, μ in milliseconds.
pub fn parametric_model(interp: InterpMode, nodes: &[NodeFit]) -> Result<ParametricModel, CliError> {
    let pn = nodes
        .iter()
        .map(|n| ParamNode { mu: n.dt_ms, manifold: Some(n.manifold.clone()), normal_form: n.normal_form.clone() })
        .collect();
    Ok(ParametricModel::new(pn, interp)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PortraitOut {
    pub dt_ms: f64,
    pub normal_form: NormalFormRecord,
    pub analysis: PortraitAnalysis,
}

pub fn portrait_at(pm: &ParametricModel, dt_ms: f64, grid: usize) -> Result<(NormalFormModel, PortraitAnalysis), CliError> {
    let nf = interpolate(pm, dt_ms)?;
    let rho_max = default_rho_max(&nf);
    let pa = find_fixed_points_in(&nf, grid, &rho_max);
    Ok((nf, pa))
}

pub fn cmd_portrait(cfg: &PipelineConfig) -> Result<StageReport, CliError> {
    ensure_dir(cfg)?;
    let (interp, nodes) = load_nodes(cfg)?;
    let pm = parametric_model(interp, &nodes)?;
    let (nf, pa) = portrait_at(&pm, cfg.analysis.portrait_ms, cfg.analysis.grid)?;
    let mut report = StageReport::default();
    if let Some(d) = &pa.diagnostic {
        report.unreliable.push(d.clone());
    }
    let n = cfg.analysis.field_samples.max(2);
    let mut body = String::from("rho1,rho2,drho1,drho2\n");
    if nf.modes() == 2 {
        for i in 0..n {
            for j in 0..n {
                let r = [pa.rho_max[0] * i as f64 / (n - 1) as f64, pa.rho_max[1] * j as f64 / (n - 1) as f64];
                let f = nf.amplitude_rhs(&r);
                body.push_str(&format!("{:e},{:e},{:e},{:e}\n", r[0], r[1], f[0], f[1]));
            }
        }
    }
    report.files.push(write_csv(cfg, "portrait_field.csv", &[("dt_ms", format!("{:e}", cfg.analysis.portrait_ms))], &body)?);
    let out = PortraitOut { dt_ms: cfg.analysis.portrait_ms, normal_form: nf.to_record(), analysis: pa };
    report.files.push(write_json(cfg, "portrait.json", "portrait", out)?);
    Ok(report)
}

pub fn scan(cfg: &PipelineConfig, pm: &ParametricModel) -> Result<Vec<Event>, CliError> {
    let opts = ScanOptions { mu_tol: cfg.analysis.mu_tol_ms, grid: cfg.analysis.grid };
    Ok(scan_bifurcations_opts(pm, cfg.analysis.scan_ms, cfg.analysis.scan_steps, &opts)?)
}

pub fn cmd_scan(cfg: &PipelineConfig) -> Result<StageReport, CliError> {
    ensure_dir(cfg)?;
    let (interp, nodes) = load_nodes(cfg)?;
    let pm = parametric_model(interp, &nodes)?;
    let events = scan(cfg, &pm)?;
    let mut body = String::from("dt_ms,kind,rho1,rho2\n");
    for e in &events {
        let kind = match e.kind {
            EventKind::Heteroclinic => "heteroclinic",
            EventKind::Hopf => "hopf",
            EventKind::ClosedOrbitAppears => "closed_orbit_appears",
            EventKind::ClosedOrbitDisappears => "closed_orbit_disappears",
        };
        let loc = |k: usize| e.location.get(k).map_or(String::new(), |v| format!("{v:e}"));
        body.push_str(&format!("{:e},{kind},{},{}\n", e.mu, loc(0), loc(1)));
    }
    let mut report = StageReport::default();
    report.files.push(write_csv(cfg, "events.csv", &[], &body)?);
    report.files.push(write_json(cfg, "events.json", "scan", &events)?);
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RbfStats {
    pub centers: usize,
    pub lyapunov: Option<LyapunovEstimate>,
    pub ks: Vec<f64>,
    pub truncated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChaosStats {
    pub dt: f64,
    pub samples: usize,
    pub correlation_dimension: DimensionEstimate,
    pub theiler: usize,
    pub data_lyapunov: Option<DataLyapunov>,
    pub rbf: Option<RbfStats>,
    pub flags: Vec<String>,
}

/// Statistics of a (possibly chaotic) attractor from observable series.
pub fn chaos_stats(cfg: &PipelineConfig, series: &[Vec<f64>], dt: f64) -> Result<ChaosStats, CliError> {
    let c = &cfg.chaos;
    let skip = (c.skip_s / dt).round() as usize;
    let series: Vec<Vec<f64>> = series.iter().filter(|s| s.len() > skip).map(|s| s[skip..].to_vec()).collect();
    let first = series.first().ok_or(CliError::Model(furuta_ssm::Error::InsufficientSamples))?;
    let mut flags = Vec::new();

    let e = embed(first, c.gp_m, c.gp_stride)?;
    let pts = e.points();
    let rows: Vec<usize> = (0..pts.nrows()).step_by(c.gp_subsample).take(c.gp_points).collect();
    let sub = DMatrix::from_fn(rows.len(), pts.ncols(), |i, k| pts[(rows[i], k)]);
    let theiler = mean_period_samples(first).div_ceil(c.gp_subsample);
    let gp = correlation_dimension(&sub, theiler)?;
    if !gp.reliable {
        flags.push(format!("correlation dimension: no clean scaling region (R² = {:.4})", gp.r_squared));
    } else if gp.dimension >= 0.8 * c.gp_m as f64 {
        flags.push(format!("correlation dimension {:.2} does not saturate below the embedding dimension", gp.dimension));
    }
    if let Some(w) = &gp.warning {
        flags.push(w.clone());
    }

    let ros_opts = RosensteinOptions { theiler: c.ros_theiler, k_max: c.ros_kmax, fit: c.ros_fit };
    let data_lyapunov = match lyapunov_data(&embed(first, c.ros_m, c.ros_stride)?.points(), dt, &ros_opts) {
        Ok(l) => {
            if !l.reliable {
                flags.push("Rosenstein: too few neighbour pairs".into());
            }
            Some(l)
        }
        Err(e) => {
            flags.push(format!("Rosenstein: {e}"));
            None
        }
    };

    let rbf = rbf_stats(cfg, &series, dt, &mut flags);
    Ok(ChaosStats {
        dt,
        samples: first.len(),
        correlation_dimension: gp,
        theiler,
        data_lyapunov,
        rbf,
        flags,
    })
}

fn rbf_stats(cfg: &PipelineConfig, series: &[Vec<f64>], dt: f64, flags: &mut Vec<String>) -> Option<RbfStats> {
    let c = &cfg.chaos;
    let embedded: Vec<DMatrix<f64>> = series.iter().filter_map(|s| embed(s, c.rbf_m, 1).ok()).map(|e| e.points()).collect();
    if embedded.is_empty() {
        flags.push("RBF: trajectories too short".into());
        return None;
    }
    let all = furuta_ssm::embedding::stack_rows(&embedded);
    let geo = GeometryOptions { refine_iters: 0, ..GeometryOptions::default() };
    let mm = match fit_points(&all, c.rbf_d, 1, &geo) {
        Ok(m) => m,
        Err(e) => {
            flags.push(format!("RBF geometry: {e}"));
            return None;
        }
    };
    let etas: Vec<DMatrix<f64>> = embedded.iter().map(|y| mm.project_rows(y)).collect();
    let opts = RbfOptions { ridge: c.rbf_ridge, max_centers: Some(c.rbf_centers) };
    let model = match fit_rbf_map_opts(&etas, dt, &opts) {
        Ok(m) => m,
        Err(e) => {
            flags.push(format!("RBF fit: {e}"));
            return None;
        }
    };
    let eta0: Vec<f64> = etas[0].row(0).iter().cloned().collect();
    let lyapunov = match lyapunov_model(&model, &eta0, c.lyap_span_s) {
        Ok(l) => Some(l),
        Err(e) => {
            flags.push(format!("RBF Lyapunov: {e}"));
            None
        }
    };
    let horizon = etas[0].nrows() as f64 * dt;
    let (ks, truncated) = match advect(&model, &eta0, horizon) {
        Ok(a) => {
            let ks = compare_pdfs(&etas[0], &a.etas, c.pdf_bins).map(|r| r.2).unwrap_or_default();
            (ks, a.truncated)
        }
        Err(_) => (Vec::new(), true),
    };
    if truncated {
        flags.push("RBF: model trajectory left the training region".into());
    }
    Some(RbfStats { centers: model.centers.nrows(), lyapunov, ks, truncated })
}

fn chaos_inputs(cfg: &PipelineConfig) -> Result<Vec<PathBuf>, CliError> {
    if !cfg.chaos.inputs.is_empty() {
        return Ok(cfg.chaos.inputs.clone());
    }
    Ok(load_manifest(cfg)?.runs.iter().map(|r| output::path(cfg, &r.file)).collect())
}

pub fn cmd_chaos(cfg: &PipelineConfig) -> Result<StageReport, CliError> {
    ensure_dir(cfg)?;
    let inputs = chaos_inputs(cfg)?;
    let trs: Vec<Trajectory> = inputs.iter().map(|p| load_trajectory(p)).collect::<Result<_, _>>()?;
    let dt = trs[0].dt_out;
    let series: Vec<Vec<f64>> = trs.iter().map(|t| cfg.sim.observable_series(t)).collect();
    let stats = chaos_stats(cfg, &series, dt)?;
    let mut report = StageReport { unreliable: stats.flags.clone(), ..Default::default() };
    let mut body = String::from("eps,corr_sum\n");
    for (e, c) in stats.correlation_dimension.eps.iter().zip(&stats.correlation_dimension.corr_sum) {
        body.push_str(&format!("{e:e},{c:e}\n"));
    }
    report.files.push(write_csv(cfg, "correlation_sum.csv", &[], &body)?);
    if let Some(l) = &stats.data_lyapunov {
        let mut body = String::from("k,mean_log_divergence\n");
        for (k, v) in l.divergence.iter().enumerate() {
            body.push_str(&format!("{k},{v:e}\n"));
        }
        report.files.push(write_csv(cfg, "divergence.csv", &[], &body)?);
    }
    report.files.push(write_json(cfg, "chaos.json", "chaos", &stats)?);
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationOut {
    pub dt_ms: f64,
    pub input: String,
    pub steps: usize,
    pub nmte: f64,
    pub nmte_dtw: f64,
    pub truncated: bool,
}

/// Normal form at `dt_ms` with the modal basis and geometry of the nearest node,
/// so that reduced coordinates stay consistent with one SVD basis.
pub fn model_at(interp: InterpMode, nodes: &[NodeFit], dt_ms: f64) -> Result<(ManifoldModel, NormalFormModel), CliError> {
    let pm = parametric_model(interp, nodes)?;
    let mut nf = interpolate(&pm, dt_ms)?;
    let near = nodes
        .iter()
        .min_by(|a, b| (a.dt_ms - dt_ms).abs().total_cmp(&(b.dt_ms - dt_ms).abs()))
        .expect("at least two nodes");
    nf.w = near.normal_form.w.clone();
    nf.sample_step = dt_ms * 1e-3;
    Ok((near.manifold.clone(), nf))
}

pub fn validate_series(
    cfg: &PipelineConfig,
    mm: &ManifoldModel,
    nf: &NormalFormModel,
    series: &[f64],
) -> Result<ValidationOut, CliError> {
    let t = &cfg.train;
    if series.len() <= t.skip {
        return Err(furuta_ssm::Error::InsufficientSamples.into());
    }
    let pts = embed(&series[t.skip..], t.m, t.stride)?.points();
    let eta = mm.project_rows(&pts);
    let steps = ((cfg.validate.horizon_s / nf.sample_step).round() as usize).min(eta.nrows() - 1);
    let reference = eta.rows(0, steps + 1).clone_owned();
    let eta0: Vec<f64> = eta.row(0).iter().cloned().collect();
    let adv = NormalFormAdvector { model: nf, inner: cfg.validate.inner_steps };
    let pred = advect(&adv, &eta0, steps as f64 * nf.sample_step)?;
    let (nmte, nmte_dtw) = dtw_nmte(&reference, &pred.etas)?;
    Ok(ValidationOut { dt_ms: cfg.validate.dt_ms, input: String::new(), steps, nmte, nmte_dtw, truncated: pred.truncated })
}

pub fn cmd_validate(cfg: &PipelineConfig) -> Result<StageReport, CliError> {
    ensure_dir(cfg)?;
    let input = cfg
        .validate
        .input
        .clone()
        .ok_or_else(|| CliError::Config("validate.input: held-out trajectory file required".into()))?;
    let tr = load_trajectory(&input)?;
    let (interp, nodes) = load_nodes(cfg)?;
    let (mm, nf) = model_at(interp, &nodes, cfg.validate.dt_ms)?;
    let mut out = validate_series(cfg, &mm, &nf, &cfg.sim.observable_series(&tr))?;
    out.input = input.display().to_string();
    let mut report = StageReport::default();
    if out.truncated {
        report.unreliable.push("model trajectory left the training region".into());
    }
    report.files.push(write_json(cfg, "validate.json", "validate", out)?);
    Ok(report)
}
