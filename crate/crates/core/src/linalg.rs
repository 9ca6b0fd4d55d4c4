//! Thin helpers over nalgebra for the dense complex linear algebra used throughout.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;
pub type RMat = DMatrix<f64>;

pub const J: Complex64 = Complex64 { re: 0.0, im: 1.0 };

pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn to_complex(m: &RMat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Eigenvalues of a complex square matrix via the complex Schur form.
pub fn eigenvalues(m: &CMat) -> Vec<Complex64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    match m.clone().try_schur(1e-15, 10_000) {
        Some(s) => {
            let (_, t) = s.unpack();
            (0..t.nrows()).map(|i| t[(i, i)]).collect()
        }
        None => m
            .eigenvalues()
            .map(|v| v.iter().copied().collect())
            .unwrap_or_default(),
    }
}

pub fn real_eigenvalues(a: &RMat) -> Vec<Complex64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    a.complex_eigenvalues().iter().copied().collect()
}

/// Unit eigenvector for an (approximate) eigenvalue by shifted inverse iteration.
pub fn eigenvector(m: &CMat, lambda: Complex64) -> CVec {
    let n = m.nrows();
    let scale = frobenius(m).max(1e-300);
    let shift = lambda + Complex64::new(1e-10 * scale, 1e-10 * scale);
    let shifted = m - CMat::identity(n, n) * shift;
    let lu = shifted.lu();
    let mut v = CVec::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.3 - 0.07 * i as f64));
    v /= Complex64::new(v.norm(), 0.0);
    for _ in 0..3 {
        match lu.solve(&v) {
            Some(w) if w.norm().is_finite() && w.norm() > 0.0 => {
                v = &w / Complex64::new(w.norm(), 0.0);
            }
            _ => break,
        }
    }
    v
}

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and matching unit eigenvectors.
pub fn hermitian_eig(h: &CMat) -> (Vec<f64>, Vec<CVec>) {
    let eig = h.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = idx
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();
    (vals, vecs)
}

/// Largest eigenvalue of the Hermitian part of `e^{-jφ} M`.
pub fn hermitian_part_max(m: &CMat, phi: f64) -> f64 {
    let rot = Complex64::from_polar(1.0, -phi);
    let b = m * rot;
    let h = (&b + b.adjoint()) * Complex64::new(0.5, 0.0);
    h.symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Singular values in descending order.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = m.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn sigma_max(m: &CMat) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

pub fn sigma_min(m: &CMat) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Numerical rank with relative threshold `rtol · σ_max`.
pub fn rank(m: &CMat, rtol: f64) -> usize {
    let s = singular_values(m);
    let top = s.first().copied().unwrap_or(0.0);
    if top == 0.0 {
        return 0;
    }
    s.iter().filter(|&&x| x > rtol * top).count()
}

pub fn real_rank(m: &RMat, rtol: f64) -> usize {
    rank(&to_complex(m), rtol)
}

/// Orthonormal basis (as columns) of the column space of a real matrix.
pub fn real_range_basis(m: &RMat, rtol: f64, atol: f64) -> RMat {
    if m.ncols() == 0 || m.nrows() == 0 {
        return RMat::zeros(m.nrows(), 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > (rtol * top).max(atol))
        .collect();
    RMat::from_fn(m.nrows(), keep.len(), |r, c| u[(r, keep[c])])
}

/// Unitary factor `U` of the polar decomposition `A = U P`.
pub fn polar_unitary(a: &CMat) -> CMat {
    let svd = a.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let vt = svd.v_t.expect("requested V^T");
    u * vt
}

pub fn solve(a: &CMat, b: &CMat) -> Option<CMat> {
    a.clone().lu().solve(b)
}

pub fn determinant(m: &CMat) -> Complex64 {
    if m.nrows() == 0 {
        return Complex64::new(1.0, 0.0);
    }
    m.clone().lu().determinant()
}

/// Block-diagonal stacking of real matrices.
pub fn block_diag(blocks: &[&RMat]) -> RMat {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = RMat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_of_triangular() {
        let m = CMat::from_row_slice(2, 2, &[c(1.0, 1.0), c(2.0, 0.0), c(0.0, 0.0), c(3.0, -1.0)]);
        let mut ev = eigenvalues(&m);
        ev.sort_by(|a, b| a.re.total_cmp(&b.re));
        assert!((ev[0] - c(1.0, 1.0)).norm() < 1e-12);
        assert!((ev[1] - c(3.0, -1.0)).norm() < 1e-12);
        let v = eigenvector(&m, ev[1]);
        let r = &m * &v - &v * ev[1];
        assert!(r.norm() < 1e-8);
    }

    #[test]
    fn polar_factor_is_unitary() {
        let a = CMat::from_row_slice(2, 2, &[c(1.0, 2.0), c(0.5, 0.0), c(-1.0, 0.3), c(2.0, -1.0)]);
        let u = polar_unitary(&a);
        let e = u.adjoint() * &u - CMat::identity(2, 2);
        assert!(e.norm() < 1e-12);
        // P = U^* A must be Hermitian positive definite
        let p = u.adjoint() * &a;
        assert!((&p - p.adjoint()).norm() < 1e-12);
        let (vals, _) = hermitian_eig(&p);
        assert!(vals[0] > 0.0);
    }

    #[test]
    fn ranks() {
        let m = RMat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(real_rank(&m, 1e-10), 1);
        assert_eq!(real_range_basis(&m, 1e-10, 0.0).ncols(), 1);
    }
}
