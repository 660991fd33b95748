//! Small dense helpers on top of nalgebra.

use crate::error::{Error, Result};
use nalgebra::{Complex, DMatrix, DVector};

pub type C64 = Complex<f64>;

/// Least squares `a x ≈ b` by Householder QR with column equilibration.
///
/// Returns `Error::Degenerate` when a column is empty or the scaled R factor
/// has a pivot below `1e-11` of the largest one.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (n, p) = a.shape();
    if n < p || p == 0 || b.nrows() != n {
        return Err(Error::Degenerate);
    }
    let mut scale = vec![0.0; p];
    let mut a = a.clone();
    for j in 0..p {
        let s = a.column(j).norm();
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::Degenerate);
        }
        scale[j] = s;
        a.column_mut(j).unscale_mut(s);
    }
    let qr = a.qr();
    let r = qr.r();
    let dmax = (0..p).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..p).any(|i| r[(i, i)].abs() < 1e-11 * dmax) {
        return Err(Error::Degenerate);
    }
    let qtb = qr.q().transpose() * b;
    let mut x = r.solve_upper_triangular(&qtb).ok_or(Error::Degenerate)?;
    for (j, s) in scale.iter().enumerate() {
        x.row_mut(j).unscale_mut(*s);
    }
    Ok(x)
}

/// Leading `d` left singular vectors of `y` (columns ordered by singular value).
pub fn leading_left_singular(y: &DMatrix<f64>, d: usize) -> Result<(DMatrix<f64>, Vec<f64>)> {
    // eigen-decomposition of the small Gram matrix y yᵀ
    let gram = y * y.transpose();
    let eig = gram.symmetric_eigen();
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    if d > idx.len() {
        return Err(Error::Degenerate);
    }
    let sv: Vec<f64> = idx.iter().map(|&i| eig.eigenvalues[i].max(0.0).sqrt()).collect();
    if sv[d - 1] <= 1e-12 * sv[0].max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate);
    }
    let mut u = DMatrix::zeros(y.nrows(), d);
    for (c, &i) in idx.iter().take(d).enumerate() {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        // sign convention: largest-magnitude entry positive
        let k = v.iamax();
        if v[k] < 0.0 {
            v.neg_mut();
        }
        u.set_column(c, &v);
    }
    Ok((u, sv))
}

/// Eigenvalues and unit eigenvectors of a small real matrix.
///
/// Eigenvectors are normalised so their largest entry is real and positive.
pub fn eig(a: &DMatrix<f64>) -> (Vec<C64>, DMatrix<C64>) {
    let n = a.nrows();
    let vals: Vec<C64> = a.complex_eigenvalues().iter().cloned().collect();
    let ac = a.map(|x| C64::new(x, 0.0));
    let mut vecs = DMatrix::zeros(n, n);
    for (j, &lam) in vals.iter().enumerate() {
        let m = &ac - DMatrix::identity(n, n) * lam;
        let v = null_vector(&m);
        vecs.set_column(j, &v);
    }
    (vals, vecs)
}

fn null_vector(m: &DMatrix<C64>) -> DVector<C64> {
    let n = m.ncols();
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested v_t");
    let k = (0..n)
        .min_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]))
        .unwrap_or(0);
    let mut v: DVector<C64> = vt.row(k).transpose().map(|z| z.conj());
    let norm = v.norm();
    v.unscale_mut(norm);
    let big = (0..n).max_by(|&i, &j| v[i].norm().total_cmp(&v[j].norm())).unwrap_or(0);
    let ph = v[big] / C64::new(v[big].norm(), 0.0);
    v.map(|z| z / ph)
}
