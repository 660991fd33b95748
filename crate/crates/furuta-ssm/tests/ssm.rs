use furuta_ssm::dynamics::*;
use furuta_ssm::manifold::{fit_points, GeometryOptions};
use furuta_ssm::poly;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn orthonormal(m: usize, d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(m, d, |_, _| rng.gen_range(-1.0..1.0)).qr().q()
}

/// ±η pairs so odd cross moments with the quadratic terms vanish.
fn symmetric_etas(d: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..n {
        let e: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        out.push(e.iter().map(|v| -v).collect());
        out.push(e);
    }
    out
}

#[test]
fn curved_line_is_recovered() {
    let q = orthonormal(6, 2, 1);
    let v1 = q.column(0).clone_owned();
    let v2 = q.column(1).clone_owned() * 0.3;
    let etas = symmetric_etas(1, 200, 2);
    let rows: Vec<_> = etas.iter().map(|e| (&v1 * e[0] + &v2 * (e[0] * e[0])).transpose()).collect();
    let y = DMatrix::from_rows(&rows);
    let mm = fit_points(&y, 1, 2, &GeometryOptions::default()).unwrap();
    let s = mm.v1[(0, 0)].signum() * v1[0].signum();
    assert!((&mm.v1 * s - &v1).amax() < 1e-6);
    assert!((mm.v_nl.column(0) - &v2).amax() < 1e-6);
}

#[test]
fn curved_plane_is_recovered() {
    let q = orthonormal(8, 4, 3);
    let v1 = q.columns(0, 2).clone_owned();
    let exps = poly::monomials(2, 2, 2);
    let v2 = DMatrix::from_fn(8, exps.len(), |i, j| 0.2 * q[(i, 2 + j % 2)] * if j == 1 { -1.0 } else { 1.0 });
    let etas = symmetric_etas(2, 300, 4);
    let rows: Vec<_> = etas
        .iter()
        .map(|e| {
            let phi = DVector::from_vec(poly::eval_all(&exps, e));
            (&v1 * DVector::from_column_slice(e) + &v2 * phi).transpose()
        })
        .collect();
    let y = DMatrix::from_rows(&rows);
    let mm = fit_points(&y, 2, 2, &GeometryOptions::default()).unwrap();
    let p_true = &v1 * v1.transpose();
    let p_fit = &mm.v1 * mm.v1.transpose();
    assert!((p_true - p_fit).amax() < 1e-6);
    for r in 0..y.nrows() {
        let yr = y.row(r).transpose();
        assert!((mm.lift(&mm.project(&yr)) - &yr).amax() < 1e-6);
    }
}

/// Exact samples of ρ̇ = ρ(α + βρ²), θ̇ = ω in Cartesian form.
fn hopf_traj(alpha: f64, beta: f64, omega: f64, r0: f64, dt: f64, n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, 2, |k, j| {
        let t = k as f64 * dt;
        let e = (2.0 * alpha * t).exp();
        let r = (alpha * r0 * r0 * e / (alpha - beta * r0 * r0 * (e - 1.0))).sqrt();
        if j == 0 {
            r * (omega * t).cos()
        } else {
            r * (omega * t).sin()
        }
    })
}

fn modal_scale(nf: &NormalFormModel, eta: &[f64], rho_true: f64) -> f64 {
    nf.to_polar(eta).unwrap().0[0] / rho_true
}

#[test]
fn hopf_coefficients_from_the_vector_field() {
    let (a, b, w) = (-0.2, 0.8, 3.0);
    let dt = 1e-3;
    let trs = vec![hopf_traj(a, b, w, 0.3, dt, 4000), hopf_traj(a, b, w, 0.15, dt, 4000)];
    let m = fit_poly_dynamics(&trs, dt, 3).unwrap();
    let nf = to_normal_form(&m, &trs, 3, 0.0).unwrap();
    let k = modal_scale(&nf, &[0.3, 0.0], 0.3);
    assert!((nf.amp_coeffs[0][0] - a).abs() < 1e-4);
    assert!((nf.amp_coeffs[0][1] - b / (k * k)).abs() < 1e-4, "{:?} {k}", nf.amp_coeffs);
    assert!((nf.phase_coeffs[0][0] - w).abs() < 1e-4);
    assert!(nf.phase_coeffs[0][1].abs() < 1e-4);
}

#[test]
fn hopf_coefficients_from_the_flow_map() {
    let (a, b, w) = (-0.2, 0.8, 3.0);
    let dt = 0.01;
    let trs = vec![hopf_traj(a, b, w, 0.3, dt, 2000), hopf_traj(a, b, w, 0.15, dt, 2000)];
    let m = fit_poly_map(&trs, dt, 5).unwrap();
    let nf = to_normal_form(&m, &trs, 3, 0.0).unwrap();
    let k = modal_scale(&nf, &[0.3, 0.0], 0.3);
    assert!((nf.amp_coeffs[0][0] - a).abs() < 1e-4);
    assert!((nf.amp_coeffs[0][1] - b / (k * k)).abs() < 1e-3);
}

/// Two coupled Hopf oscillators written in Cartesian coordinates.
fn two_oscillators(c: &[[f64; 3]; 2], w: [f64; 2], x0: [f64; 4], dt: f64, n: usize) -> DMatrix<f64> {
    let f = |x: &[f64; 4]| {
        let r1 = x[0] * x[0] + x[1] * x[1];
        let r2 = x[2] * x[2] + x[3] * x[3];
        let g1 = c[0][0] + c[0][1] * r1 + c[0][2] * r2;
        let g2 = c[1][0] + c[1][1] * r1 + c[1][2] * r2;
        [g1 * x[0] - w[0] * x[1], g1 * x[1] + w[0] * x[0], g2 * x[2] - w[1] * x[3], g2 * x[3] + w[1] * x[2]]
    };
    let mut x = x0;
    let mut rows = Vec::with_capacity(n);
    let h = dt / 10.0;
    for _ in 0..n {
        rows.push(x);
        for _ in 0..10 {
            let add = |a: &[f64; 4], b: &[f64; 4], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2], a[3] + s * b[3]];
            let k1 = f(&x);
            let k2 = f(&add(&x, &k1, h / 2.0));
            let k3 = f(&add(&x, &k2, h / 2.0));
            let k4 = f(&add(&x, &k3, h));
            for i in 0..4 {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    DMatrix::from_fn(n, 4, |k, j| rows[k][j])
}

#[test]
fn two_oscillator_normal_form() {
    let c = [[-0.1, 0.3, -0.5], [-0.2, -0.4, 0.6]];
    let w = [1.0, 2.7];
    let dt = 2e-3;
    let trs: Vec<_> = [[0.4, 0.0, 0.1, 0.0], [0.1, 0.1, 0.4, 0.0], [0.3, 0.0, 0.3, 0.1]]
        .iter()
        .map(|x0| two_oscillators(&c, w, *x0, dt, 4000))
        .collect();
    let m = fit_poly_dynamics(&trs, dt, 3).unwrap();
    let nf = to_normal_form(&m, &trs, 3, 1e-3).unwrap();
    assert!(nf.resonances.is_empty());
    let (rho, _) = nf.to_polar(&[0.4, 0.0, 0.1, 0.0]).unwrap();
    let k = [rho[0] / 0.4, rho[1] / 0.1];
    for i in 0..2 {
        let unit = |e: [u32; 2]| {
            let mut e = e;
            e[i] += 1;
            nf.amp_coeff(i, &e).unwrap()
        };
        assert!((unit([0, 0]) - c[i][0]).abs() < 1e-3);
        assert!((unit([2, 0]) - c[i][1] / (k[0] * k[0])).abs() < 1e-3);
        assert!((unit([0, 2]) - c[i][2] / (k[1] * k[1])).abs() < 1e-3);
        assert!((nf.eigenvalues[i].im - w[i]).abs() < 1e-3);
    }
}

#[test]
fn spectrum_is_invariant_under_linear_change_of_coordinates() {
    let dt = 2e-3;
    let trs: Vec<_> = [[0.4, 0.0, 0.1, 0.0], [0.1, 0.1, 0.4, 0.0]]
        .iter()
        .map(|x0| two_oscillators(&[[-0.1, 0.3, -0.5], [-0.2, -0.4, 0.6]], [1.0, 2.7], *x0, dt, 3000))
        .collect();
    let t = DMatrix::from_row_slice(4, 4, &[1.0, 0.2, 0.0, 0.1, 0.0, 1.0, 0.3, 0.0, 0.1, 0.0, 1.0, 0.2, 0.0, 0.4, 0.0, 1.0]);
    let moved: Vec<_> = trs.iter().map(|x| x * t.transpose()).collect();
    let a = fit_poly_dynamics(&trs, dt, 1).unwrap();
    let b = fit_poly_dynamics(&moved, dt, 1).unwrap();
    let na = to_normal_form(&a, &trs, 1, 0.0).unwrap();
    let nb = to_normal_form(&b, &moved, 1, 0.0).unwrap();
    for (x, y) in na.eigenvalues.iter().zip(&nb.eigenvalues) {
        assert!((x - y).norm() < 1e-8);
    }
}

#[test]
fn rbf_learns_a_linear_map() {
    let a = DMatrix::from_row_slice(2, 2, &[0.99 * 0.3f64.cos(), -0.3f64.sin(), 0.3f64.sin(), 0.99 * 0.3f64.cos()]);
    let run = |x0: [f64; 2], n: usize| {
        let mut x = DVector::from_column_slice(&x0);
        let mut rows = Vec::new();
        for _ in 0..n {
            rows.push(x.transpose());
            x = &a * &x;
        }
        DMatrix::from_rows(&rows)
    };
    let model = fit_rbf_map(&[run([1.0, 0.0], 300), run([0.0, 0.6], 300)], 0.1).unwrap();
    let test = run([0.5, 0.5], 50);
    for r in 0..49 {
        let x: Vec<f64> = test.row(r).iter().cloned().collect();
        let err = (model.eval(&x) - test.row(r + 1).transpose()).norm();
        assert!(err < 1e-2 * test.row(r + 1).norm(), "row {r}: {err}");
    }
}

#[test]
fn advected_linear_model_decays_exponentially() {
    let lam = -0.7;
    let model = PolyReducedModel {
        d: 2,
        order: 1,
        exponents: poly::monomials(2, 1, 1),
        coeffs: DMatrix::identity(2, 2) * lam,
        time: TimeKind::Continuous,
        sample_step: 0.05,
        eta_radius: 1.0,
    };
    let out = advect(&PolyAdvector { model: &model, inner: 10 }, &[0.6, -0.3], 5.0).unwrap();
    assert!(!out.truncated);
    for (k, t) in out.times.iter().enumerate() {
        let e = (lam * t).exp();
        assert!((out.etas[(k, 0)] - 0.6 * e).abs() < 1e-9);
        assert!((out.etas[(k, 1)] + 0.3 * e).abs() < 1e-9);
    }
}
