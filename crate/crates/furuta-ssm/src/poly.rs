//! Multivariate monomials in graded lexicographic order.
//!
//! Degree blocks ascend; inside a block exponent tuples descend
//! lexicographically, so for d = 2, degree 2 gives (2,0), (1,1), (0,2).

use nalgebra::DMatrix;

pub type Exponent = Vec<u32>;

pub fn monomials(d: usize, lo: u32, hi: u32) -> Vec<Exponent> {
    let mut out = Vec::new();
    for deg in lo..=hi {
        let mut cur = vec![0u32; d];
        push_degree(&mut out, &mut cur, 0, deg);
    }
    out
}

fn push_degree(out: &mut Vec<Exponent>, cur: &mut Vec<u32>, pos: usize, left: u32) {
    let d = cur.len();
    if d == 0 {
        if left == 0 {
            out.push(Vec::new());
        }
        return;
    }
    if pos == d - 1 {
        cur[pos] = left;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        push_degree(out, cur, pos + 1, left - e);
    }
    cur[pos] = 0;
}

pub fn degree(e: &[u32]) -> u32 {
    e.iter().sum()
}

pub fn eval(e: &[u32], x: &[f64]) -> f64 {
    e.iter().zip(x).map(|(&k, &v)| v.powi(k as i32)).product()
}

pub fn eval_all(exps: &[Exponent], x: &[f64]) -> Vec<f64> {
    exps.iter().map(|e| eval(e, x)).collect()
}

/// Feature matrix with one row per row of `x` and one column per monomial.
pub fn features(exps: &[Exponent], x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(x.nrows(), exps.len());
    let mut row = vec![0.0; x.ncols()];
    for i in 0..x.nrows() {
        for (k, v) in row.iter_mut().enumerate() {
            *v = x[(i, k)];
        }
        for (j, e) in exps.iter().enumerate() {
            f[(i, j)] = eval(e, &row);
        }
    }
    f
}

/// Partial derivative of monomial `e` with respect to variable `k`.
pub fn deriv(e: &[u32], k: usize, x: &[f64]) -> f64 {
    if e[k] == 0 {
        return 0.0;
    }
    let mut p = e[k] as f64;
    for (j, (&ej, &xj)) in e.iter().zip(x).enumerate() {
        let pw = if j == k { ej - 1 } else { ej };
        p *= xj.powi(pw as i32);
    }
    p
}
