//! Small dense helpers on top of nalgebra for Hermitian problems.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;

pub type CMat = DMatrix<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Hermitian eigendecomposition with eigenvalues sorted ascending.
pub fn eigh(h: &CMat) -> (Vec<f64>, CMat) {
    let n = h.nrows();
    let eig = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (j, &i) in order.iter().enumerate() {
        vectors.set_column(j, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Applies f to the spectrum of a Hermitian matrix.
pub fn herm_fn(h: &CMat, f: impl Fn(f64) -> C64) -> CMat {
    let (e, v) = eigh(h);
    let mut scaled = v.clone();
    for (j, &x) in e.iter().enumerate() {
        let fx = f(x);
        for z in scaled.column_mut(j).iter_mut() {
            *z *= fx;
        }
    }
    &scaled * v.adjoint()
}

/// (A)^{-1/2} for a Hermitian positive matrix, together with its smallest eigenvalue.
pub fn inv_sqrt(a: &CMat) -> (CMat, f64) {
    let (e, v) = eigh(a);
    let min = e.first().copied().unwrap_or(1.0);
    let mut scaled = v.clone();
    for (j, &x) in e.iter().enumerate() {
        let s = 1.0 / x.max(1e-300).sqrt();
        for z in scaled.column_mut(j).iter_mut() {
            *z *= s;
        }
    }
    (&scaled * v.adjoint(), min)
}

/// Symmetric orthonormalization A (A†A)^{-1/2}; also returns the smallest singular value of A.
pub fn lowdin(a: &CMat) -> (CMat, f64) {
    let gram = a.adjoint() * a;
    let (s, min) = inv_sqrt(&gram);
    (a * s, min.max(0.0).sqrt())
}

/// exp(-i·scale·H) for Hermitian H, applied to a block of columns.
pub fn expm_apply(h: &CMat, scale: f64, x: &CMat) -> CMat {
    let (e, v) = eigh(h);
    let mut y = v.adjoint() * x;
    for (i, &ei) in e.iter().enumerate() {
        let ph = C64::from_polar(1.0, -scale * ei);
        for z in y.row_mut(i).iter_mut() {
            *z *= ph;
        }
    }
    &v * y
}

pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()) * c(0.5, 0.0)
}

pub fn antihermitian_part(a: &CMat) -> CMat {
    (a - a.adjoint()) * c(0.5, 0.0)
}

/// Spectral (operator 2-) norm.
pub fn opnorm(a: &CMat) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let g = if a.nrows() >= a.ncols() { a.adjoint() * a } else { a * a.adjoint() };
    let (e, _) = eigh(&g);
    e.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

pub fn frobenius(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_abs(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn trace(a: &CMat) -> C64 {
    (0..a.nrows().min(a.ncols())).map(|i| a[(i, i)]).sum()
}

/// tr(A†B) without forming the product.
pub fn trace_adj_mul(a: &CMat, b: &CMat) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Principal matrix logarithm of a unitary matrix, returned as the Hermitian generator L with U = exp(iL).
pub fn unitary_log(u: &CMat) -> CMat {
    let n = u.nrows();
    if n == 1 {
        return CMat::from_element(1, 1, c(u[(0, 0)].arg(), 0.0));
    }
    // U is normal: its Hermitian and anti-Hermitian parts commute, so a generic real
    // combination of the two shares the eigenbasis of U.
    let a = hermitian_part(u);
    let b = antihermitian_part(u) * c(0.0, -1.0);
    let mix = &a + &b * c(0.577_215_664_901_532_9, 0.0);
    let (_, v) = eigh(&mix);
    let d = v.adjoint() * u * &v;
    let mut l = CMat::zeros(n, n);
    for j in 0..n {
        l[(j, j)] = c(d[(j, j)].arg(), 0.0);
    }
    &v * l * v.adjoint()
}

/// exp(iL) for Hermitian L.
pub fn unitary_exp(l: &CMat) -> CMat {
    herm_fn(l, |x| C64::from_polar(1.0, x))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CMat {
        CMat::from_fn(4, 4, |i, j| {
            let (i, j) = (i as f64, j as f64);
            if i == j {
                c(i * 1.3 - 2.0, 0.0)
            } else {
                c((i + 2.0 * j).sin() + (j + 2.0 * i).sin(), (i - j) * 0.3)
            }
        })
    }

    #[test]
    fn eigh_sorted_and_reconstructs() {
        let h = sample();
        let (e, v) = eigh(&h);
        assert!(e.windows(2).all(|w| w[0] <= w[1]));
        let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(4, e.iter().map(|&x| c(x, 0.0))));
        assert!(max_abs(&(&v * d * v.adjoint() - &h)) < 1e-12);
    }

    #[test]
    fn lowdin_orthonormal() {
        let a = sample().columns(0, 2).into_owned();
        let (q, s) = lowdin(&a);
        assert!(s > 0.0);
        assert!(max_abs(&(q.adjoint() * &q - identity(2))) < 1e-12);
    }

    #[test]
    fn log_exp_roundtrip() {
        let l = sample() * c(0.2, 0.0);
        let u = unitary_exp(&l);
        let back = unitary_exp(&unitary_log(&u));
        assert!(max_abs(&(back - u)) < 1e-12);
    }

    #[test]
    fn expm_matches_series() {
        let h = sample();
        let x = identity(4);
        let u = expm_apply(&h, 1e-3, &x);
        let approx = identity(4) - &h * c(0.0, 1e-3) - &h * &h * c(0.5e-6, 0.0);
        assert!(max_abs(&(u - approx)) < 1e-8);
    }
}
