//! Small dense complex linear algebra for the per-bin covariance matrices.
//!
//! All matrices here are square with the dimension of the microphone array
//! (four or five in practice), so everything is written for clarity over
//! blocking or cache tricks. Storage is row-major.

use std::ops::{Index, IndexMut};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);

/// Square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CMatrix {
    dim: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![ZERO; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, scale: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = C64::new(scale, 0.0);
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(dim * dim);
        for r in 0..dim {
            for c in 0..dim {
                data.push(f(r, c));
            }
        }
        Self { dim, data }
    }

    /// Builds a matrix from row-major entries; `entries.len()` must be a square.
    pub fn from_rows(entries: &[C64]) -> Result<Self> {
        let dim = (entries.len() as f64).sqrt().round() as usize;
        if dim * dim != entries.len() {
            return Err(Error::config(format!(
                "{} entries do not form a square matrix",
                entries.len()
            )));
        }
        Ok(Self {
            dim,
            data: entries.to_vec(),
        })
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = C64::new(*v, 0.0);
        }
        m
    }

    /// `a · aᴴ`
    pub fn outer(a: &[C64]) -> Self {
        Self::from_fn(a.len(), |r, c| a[r] * a[c].conj())
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.dim).map(|r| self[(r, j)]).collect()
    }

    pub fn trace(&self) -> C64 {
        (0..self.dim).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(C64::norm_sqr).sum::<f64>().sqrt()
    }

    pub fn conj_transpose(&self) -> Self {
        Self::from_fn(self.dim, |r, c| self[(c, r)].conj())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        let n = self.dim;
        Self::from_fn(n, |r, c| (0..n).map(|k| self[(r, k)] * other[(k, c)]).sum())
    }

    pub fn mul_vec(&self, v: &[C64]) -> Vec<C64> {
        debug_assert_eq!(self.dim, v.len());
        (0..self.dim)
            .map(|r| {
                self.data[r * self.dim..(r + 1) * self.dim]
                    .iter()
                    .zip(v)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect()
    }

    /// In-place `self ← alpha·self + beta·y·yᴴ`.
    pub fn blend_outer(&mut self, alpha: f64, beta: f64, y: &[C64]) {
        let n = self.dim;
        debug_assert_eq!(n, y.len());
        for r in 0..n {
            let yr = y[r] * beta;
            let row = &mut self.data[r * n..(r + 1) * n];
            for (entry, yc) in row.iter_mut().zip(y) {
                *entry = *entry * alpha + yr * yc.conj();
            }
        }
    }

    /// Replaces the matrix by its Hermitian part `(A + Aᴴ)/2`.
    pub fn symmetrize(&mut self) {
        let n = self.dim;
        for r in 0..n {
            let d = self[(r, r)].re;
            self[(r, r)] = C64::new(d, 0.0);
            for c in r + 1..n {
                let v = (self[(r, c)] + self[(c, r)].conj()) * 0.5;
                self[(r, c)] = v;
                self[(c, r)] = v.conj();
            }
        }
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let n = self.dim;
        (0..n).all(|r| (r..n).all(|c| (self[(r, c)] - self[(c, r)].conj()).norm() <= tol))
    }

    /// Leading `m × m` principal submatrix.
    pub fn principal_submatrix(&self, m: usize) -> Self {
        debug_assert!(m <= self.dim);
        Self::from_fn(m, |r, c| self[(r, c)])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &C64 {
        &self.data[r * self.dim + c]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut C64 {
        &mut self.data[r * self.dim + c]
    }
}

pub fn norm2(v: &[C64]) -> f64 {
    v.iter().map(C64::norm_sqr).sum::<f64>().sqrt()
}

/// `aᴴ·b`
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Lower-triangular Cholesky factor of `h + εI`, with
/// `ε = diag_load_rel · tr(h) / P`.
pub fn cholesky(h: &CMatrix, diag_load_rel: f64) -> Result<CMatrix> {
    let n = h.dim();
    if n == 0 {
        return Err(Error::config("cholesky of an empty matrix"));
    }
    let load = diag_load_rel * h.trace().re / n as f64;
    let mut l = CMatrix::zeros(n);
    for j in 0..n {
        let mut d = h[(j, j)].re + load;
        for k in 0..j {
            d -= l[(j, k)].norm_sqr();
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::numerical(format!(
                "matrix not positive definite at pivot {j} (pivot value {d:e})"
            )));
        }
        let djj = d.sqrt();
        l[(j, j)] = C64::new(djj, 0.0);
        for i in j + 1..n {
            let mut s = h[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)].conj();
            }
            l[(i, j)] = s / djj;
        }
    }
    Ok(l)
}

/// Solves `L·x = b` for lower-triangular `L`.
pub fn solve_lower(l: &CMatrix, b: &[C64]) -> Vec<C64> {
    let n = l.dim();
    let mut x = b.to_vec();
    for i in 0..n {
        let mut s = x[i];
        for k in 0..i {
            s -= l[(i, k)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Prewhitening `L⁻¹·Φ·L⁻ᴴ` with a lower-triangular factor `L`.
pub fn whiten(l: &CMatrix, phi: &CMatrix) -> CMatrix {
    let n = l.dim();
    // A = L⁻¹Φ by forward substitution on all columns at once, then
    // W = L⁻¹·Aᴴ, which equals L⁻¹ΦL⁻ᴴ for Hermitian Φ.
    let forward = |b: &mut CMatrix| {
        for i in 0..n {
            // The Cholesky diagonal is real and positive.
            let inv = 1.0 / l[(i, i)].re;
            for c in 0..n {
                let mut s = b[(i, c)];
                for k in 0..i {
                    s -= l[(i, k)] * b[(k, c)];
                }
                b[(i, c)] = s * inv;
            }
        }
    };
    let mut a = phi.clone();
    forward(&mut a);
    let mut w = a.conj_transpose();
    forward(&mut w);
    w.symmetrize();
    w
}

/// Eigendecomposition of a Hermitian matrix: real eigenvalues in ascending
/// order and the matching unit eigenvectors (as columns of the returned
/// matrix, i.e. `vectors.column(i)` belongs to `values[i]`).
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMatrix,
}

/// Cyclic complex Jacobi eigensolver for Hermitian matrices.
///
/// Each rotation first removes the phase of the pivot entry and then applies
/// the real symmetric Jacobi rotation, so the iteration stays in the
/// Hermitian class. Converges quadratically; `max_sweeps` bounds the work.
pub fn hermitian_eigen(h: &CMatrix, max_sweeps: usize) -> Result<HermitianEigen> {
    let n = h.dim();
    let mut a = h.clone();
    a.symmetrize();
    let mut v = CMatrix::identity(n);
    let scale = a.frobenius_norm();
    let target = f64::EPSILON * scale.max(f64::MIN_POSITIVE);

    let off = |a: &CMatrix| -> f64 {
        let mut s = 0.0;
        for r in 0..n {
            for c in r + 1..n {
                s += a[(r, c)].norm_sqr();
            }
        }
        (2.0 * s).sqrt()
    };

    let mut converged = off(&a) <= target;
    let mut sweep = 0;
    while !converged && sweep < max_sweeps {
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                let r = apq.norm();
                if r <= f64::MIN_POSITIVE {
                    continue;
                }
                let phase = apq / r;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let theta = (aqq - app) / (2.0 * r);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // J = diag(1, e^{-iφ}) · [[c, s], [-s, c]] on the (p, q) plane.
                let jpp = C64::new(c, 0.0);
                let jpq = C64::new(s, 0.0);
                let jqp = -phase.conj() * s;
                let jqq = phase.conj() * c;

                for row in 0..n {
                    let xp = a[(row, p)];
                    let xq = a[(row, q)];
                    a[(row, p)] = xp * jpp + xq * jqp;
                    a[(row, q)] = xp * jpq + xq * jqq;
                }
                for col in 0..n {
                    let xp = a[(p, col)];
                    let xq = a[(q, col)];
                    a[(p, col)] = jpp.conj() * xp + jqp.conj() * xq;
                    a[(q, col)] = jpq.conj() * xp + jqq.conj() * xq;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = C64::new(a[(q, q)].re, 0.0);

                for row in 0..n {
                    let xp = v[(row, p)];
                    let xq = v[(row, q)];
                    v[(row, p)] = xp * jpp + xq * jqp;
                    v[(row, q)] = xp * jpq + xq * jqq;
                }
            }
        }
        sweep += 1;
        converged = off(&a) <= target;
    }
    if !converged {
        return Err(Error::numerical(format!(
            "Jacobi eigensolver did not converge in {max_sweeps} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].re.total_cmp(&a[(j, j)].re));
    let values = order.iter().map(|&i| a[(i, i)].re).collect();
    let vectors = CMatrix::from_fn(n, |r, c| v[(r, order[c])]);
    Ok(HermitianEigen { values, vectors })
}

/// Algorithm used for the principal eigenvector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EigenMethod {
    /// Power iteration on `H¹⁶`, falling back to [`EigenMethod::Dense`]
    /// when it has not converged after a few steps (small eigengap).
    #[default]
    Squared,
    /// Dense decomposition by nalgebra's implicit symmetric QR.
    Dense,
    /// Dense cyclic Jacobi decomposition.
    Jacobi,
    /// Shifted power iteration.
    Power,
}

/// Unit-norm eigenvector of the largest eigenvalue of a Hermitian matrix.
///
/// The phase is fixed so that the entry of largest modulus is real and
/// positive. The result satisfies `‖H·v − λ·v‖ ≤ tol·‖H‖_F`.
pub fn principal_eigenvector(
    h: &CMatrix,
    tol: f64,
    max_iter: usize,
    method: EigenMethod,
) -> Result<Vec<C64>> {
    let n = h.dim();
    if n == 0 {
        return Err(Error::config("eigenvector of an empty matrix"));
    }
    let mut v = match method {
        EigenMethod::Squared => match squared_power(h, tol) {
            Some(v) => v,
            None => dense_principal(h, max_iter)?,
        },
        EigenMethod::Dense => dense_principal(h, max_iter)?,
        EigenMethod::Jacobi => hermitian_eigen(h, max_iter)?.vectors.column(n - 1),
        EigenMethod::Power => power_iteration(h, tol, max_iter)?,
    };
    fix_phase(&mut v);

    let hv = h.mul_vec(&v);
    let lambda = inner(&v, &hv).re;
    let residual = hv
        .iter()
        .zip(&v)
        .map(|(a, b)| (a - b * lambda).norm_sqr())
        .sum::<f64>()
        .sqrt();
    let bound = tol * h.frobenius_norm();
    if !(residual <= bound) && residual > f64::MIN_POSITIVE {
        return Err(Error::numerical(format!(
            "eigenvector residual {residual:e} exceeds {bound:e}"
        )));
    }
    Ok(v)
}

fn dense_principal(h: &CMatrix, max_iter: usize) -> Result<Vec<C64>> {
    if !h.is_finite() {
        return Err(Error::numerical("non-finite matrix"));
    }
    let n = h.dim();
    let m = nalgebra::DMatrix::from_fn(n, n, |r, c| h[(r, c)]);
    let eig = m
        .try_symmetric_eigen(f64::EPSILON, max_iter.max(1))
        .ok_or_else(|| Error::numerical(format!("eigen decomposition did not converge in {max_iter} iterations")))?;
    let top = eig.eigenvalues.imax();
    Ok(eig.eigenvectors.column(top).iter().copied().collect())
}

/// Power steps with `H¹⁶` (four trace-normalised squarings), started from
/// its column of largest diagonal entry. Each step shrinks the non-principal
/// part by `(λ₂/λ₁)¹⁶`. `None` when `H` is not positive semidefinite-like
/// or the residual is not below `tol/1000·‖H‖_F` within 12 steps.
fn squared_power(h: &CMatrix, tol: f64) -> Option<Vec<C64>> {
    const SQUARINGS: usize = 4;
    const STEPS: usize = 12;
    let n = h.dim();
    let scale = h.trace().re;
    if !(scale > 0.0 && scale.is_finite()) {
        return None;
    }
    let mut m = h.scale(1.0 / scale);
    let mut next = CMatrix::zeros(n);
    for _ in 0..SQUARINGS {
        // M² of a Hermitian M: entry (r, c) is row r times conj(row c).
        let mut t = 0.0;
        for r in 0..n {
            let row_r = &m.data[r * n..(r + 1) * n];
            for c in r..n {
                let row_c = &m.data[c * n..(c + 1) * n];
                let (mut re, mut im) = (0.0, 0.0);
                for (a, b) in row_r.iter().zip(row_c) {
                    re += a.re * b.re + a.im * b.im;
                    im += a.im * b.re - a.re * b.im;
                }
                next.data[r * n + c] = C64::new(re, im);
                next.data[c * n + r] = C64::new(re, -im);
                if r == c {
                    t += re;
                }
            }
        }
        if !(t > 0.0 && t.is_finite()) {
            return None;
        }
        let inv = 1.0 / t;
        for (dst, src) in m.data.iter_mut().zip(&next.data) {
            *dst = src * inv;
        }
    }
    let start = (0..n).max_by(|&a, &b| m[(a, a)].re.total_cmp(&m[(b, b)].re))?;
    let mut x = m.column(start);
    let target = 1e-3 * tol * h.frobenius_norm();
    for _ in 0..STEPS {
        x = m.mul_vec(&x);
        let norm = norm2(&x);
        if !(norm > 0.0 && norm.is_finite()) {
            return None;
        }
        x.iter_mut().for_each(|v| *v /= norm);
        let hx = h.mul_vec(&x);
        let lambda = inner(&x, &hx).re;
        let residual = hx.iter().zip(&x).map(|(a, b)| (a - b * lambda).norm_sqr()).sum::<f64>().sqrt();
        if residual <= target {
            return Some(x);
        }
    }
    None
}

fn power_iteration(h: &CMatrix, tol: f64, max_iter: usize) -> Result<Vec<C64>> {
    let n = h.dim();
    let norm = h.frobenius_norm();
    if norm == 0.0 {
        let mut e = vec![ZERO; n];
        e[0] = ONE;
        return Ok(e);
    }
    // Shift so the largest algebraic eigenvalue dominates in magnitude.
    let shift = norm;
    let mut v: Vec<C64> = vec![C64::new(1.0 / (n as f64).sqrt(), 0.0); n];
    for _ in 0..max_iter {
        let hv = h.mul_vec(&v);
        let lambda = inner(&v, &hv).re;
        let residual = hv
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b * lambda).norm_sqr())
            .sum::<f64>()
            .sqrt();
        if residual <= tol * norm {
            return Ok(v);
        }
        let mut next: Vec<C64> = hv.iter().zip(&v).map(|(a, b)| a + b * shift).collect();
        let nn = norm2(&next);
        if !(nn > 0.0) {
            return Err(Error::numerical("power iteration collapsed to zero"));
        }
        next.iter_mut().for_each(|x| *x /= nn);
        v = next;
    }
    Err(Error::numerical(format!(
        "power iteration did not converge in {max_iter} iterations"
    )))
}

fn fix_phase(v: &mut [C64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.norm_sqr() > v[best].norm_sqr() {
            best = i;
        }
    }
    let r = v[best].norm();
    if r > 0.0 {
        let rot = v[best].conj() / r;
        v.iter_mut().for_each(|x| *x *= rot);
        v[best] = C64::new(v[best].re, 0.0);
    }
}
