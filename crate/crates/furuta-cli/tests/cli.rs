use furuta_ssm::sim::Trajectory;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::process::Command;

fn furuta(args: &[&str]) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_furuta")).args(args).output().unwrap().status.code().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.cfg");
    std::fs::write(&p, format!("out_dir = {}\n{body}", dir.join("out").display())).unwrap();
    p.display().to_string()
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "sim.duration = 0\n");
    assert_eq!(furuta(&["simulate", &cfg]), 2);
    let cfg = write_config(dir.path(), "sim.no_such_key = 1\n");
    assert_eq!(furuta(&["simulate", &cfg]), 2);
}

#[test]
fn missing_upstream_artifacts_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    assert_eq!(furuta(&["train", &cfg]), 2);
    assert_eq!(furuta(&["scan", &cfg]), 2);
}

#[test]
fn noise_input_is_flagged_unreliable() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 4000;
    let noise = |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.gen_range(-0.01..0.01)).collect::<Vec<f64>>();
    let tr = Trajectory {
        t0: 0.0,
        dt_out: 0.025,
        theta: noise(&mut rng),
        omega_theta: noise(&mut rng),
        phi: noise(&mut rng),
        omega_phi: noise(&mut rng),
        u: vec![0.0; n],
        x_i: vec![0.0; n],
        stopped_at: None,
    };
    let input = dir.path().join("noise.csv");
    std::fs::write(&input, tr.to_csv()).unwrap();
    let body = format!(
        "chaos.inputs = {}\nchaos.skip_s = 0\nchaos.gp_subsample = 1\nchaos.gp_points = 2500\nchaos.rbf_centers = 500\nchaos.lyap_span_s = 20\n",
        input.display()
    );
    let cfg = write_config(dir.path(), &body);
    assert_eq!(furuta(&["chaos", &cfg]), 3);
    assert_eq!(furuta(&["chaos", "--allow-unreliable", &cfg]), 0);
    assert!(dir.path().join("out/chaos.json").exists());
}
