//! Small dense complex matrices and the linear algebra the tomography
//! pipeline needs: Hermitian eigendecomposition (closed form for 2x2,
//! cyclic Jacobi otherwise), real linear solves, polar projection onto the
//! unitary group, and exp(iAs) for Hermitian A.
//!
//! Dimensions here are tiny (N <= 3 complex, <= 12 real), so simple
//! O(n^3) algorithms with partial pivoting are both adequate and easy to
//! audit; no external solver is used.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::math;

/// Off-diagonal threshold at which the Jacobi iteration stops.
const JACOBI_THRESHOLD: f64 = 1e-13;
/// Maximum number of Jacobi sweeps before giving up.
const JACOBI_MAX_SWEEPS: usize = 100;
/// Hermitian-asymmetry tolerance accepted by the eigensolver.
const HERMITIAN_TOLERANCE: f64 = 1e-8;
/// Relative pivot threshold below which a real system counts as singular.
const SINGULAR_TOLERANCE: f64 = 1e-12;

/// Square complex matrix, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct CMat {
    n: usize,
    data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(n: usize) -> Self {
        CMat {
            n,
            data: vec![Complex64::new(0.0, 0.0); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = CMat::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    /// Builds an n x n matrix from a row-major entry function.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut m = CMat::zeros(n);
        for i in 0..n {
            for j in 0..n {
                m.data[i * n + j] = f(i, j);
            }
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.n + j] = v;
    }

    pub fn matmul(&self, other: &CMat) -> CMat {
        debug_assert_eq!(self.n, other.n);
        let n = self.n;
        let mut out = CMat::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let aik = self.at(i, k);
                if aik == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    let v = out.at(i, j) + aik * other.at(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    pub fn add(&self, other: &CMat) -> CMat {
        debug_assert_eq!(self.n, other.n);
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a += *b;
        }
        out
    }

    pub fn sub(&self, other: &CMat) -> CMat {
        debug_assert_eq!(self.n, other.n);
        let mut out = self.clone();
        for (a, b) in out.data.iter_mut().zip(other.data.iter()) {
            *a -= *b;
        }
        out
    }

    pub fn scale(&self, factor: Complex64) -> CMat {
        let mut out = self.clone();
        for a in out.data.iter_mut() {
            *a *= factor;
        }
        out
    }

    pub fn scale_re(&self, factor: f64) -> CMat {
        self.scale(Complex64::new(factor, 0.0))
    }

    /// Conjugate transpose.
    pub fn dagger(&self) -> CMat {
        CMat::from_fn(self.n, |i, j| self.at(j, i).conj())
    }

    pub fn trace(&self) -> Complex64 {
        let mut t = Complex64::new(0.0, 0.0);
        for i in 0..self.n {
            t += self.at(i, i);
        }
        t
    }

    /// Matrix-vector product self * v.
    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        debug_assert_eq!(v.len(), self.n);
        let mut out = vec![Complex64::new(0.0, 0.0); self.n];
        for i in 0..self.n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..self.n {
                acc += self.at(i, j) * v[j];
            }
            out[i] = acc;
        }
        out
    }

    /// Column j as a vector.
    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.n).map(|i| self.at(i, j)).collect()
    }

    /// Largest entrywise deviation from the conjugate transpose.
    pub fn hermitian_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                let d = self.at(i, j) - self.at(j, i).conj();
                let m = d.norm_sqr();
                if m > worst {
                    worst = m;
                }
            }
        }
        math::sqrt(worst)
    }

    /// Largest entrywise deviation of V-dagger V from the identity.
    pub fn unitarity_residual(&self) -> f64 {
        let p = self.dagger().matmul(self);
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in 0..self.n {
                let want = if i == j { 1.0 } else { 0.0 };
                let d = p.at(i, j) - Complex64::new(want, 0.0);
                let m = d.norm();
                if m > worst {
                    worst = m;
                }
            }
        }
        worst
    }

    /// Largest entrywise modulus of the difference.
    pub fn max_abs_diff(&self, other: &CMat) -> f64 {
        debug_assert_eq!(self.n, other.n);
        let mut worst = 0.0f64;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            let m = (a - b).norm();
            if m > worst {
                worst = m;
            }
        }
        worst
    }
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Eigenvalues are sorted descending; `vectors` holds the matching
/// unit-norm eigenvectors as columns.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    pub values: Vec<f64>,
    pub vectors: CMat,
}

impl HermitianEigen {
    /// Worst-case residual max_i ||A x_i - delta_i x_i||_inf.
    pub fn residual(&self, a: &CMat) -> f64 {
        let n = a.n();
        let mut worst = 0.0f64;
        for (i, &val) in self.values.iter().enumerate() {
            let x = self.vectors.column(i);
            let ax = a.apply(&x);
            for k in 0..n {
                let d = (ax[k] - x[k] * val).norm();
                if d > worst {
                    worst = d;
                }
            }
        }
        worst
    }
}

/// Hermitian eigendecomposition: closed-form quadratic roots for 2x2,
/// cyclic Jacobi rotations otherwise.
pub fn hermitian_eigen(a: &CMat) -> Result<HermitianEigen> {
    if a.hermitian_residual() > HERMITIAN_TOLERANCE {
        return Err(Error::NotHermitian);
    }
    match a.n() {
        0 => Ok(HermitianEigen {
            values: Vec::new(),
            vectors: CMat::zeros(0),
        }),
        1 => Ok(HermitianEigen {
            values: vec![a.at(0, 0).re],
            vectors: CMat::identity(1),
        }),
        2 => Ok(eigen_2x2(a)),
        _ => eigen_jacobi(a),
    }
}

/// Closed form for 2x2 Hermitian matrices: delta = (tr +/- sqrt(tr^2 - 4 det))/2.
fn eigen_2x2(m: &CMat) -> HermitianEigen {
    let a = m.at(0, 0).re;
    let d = m.at(1, 1).re;
    let b = (m.at(0, 1) + m.at(1, 0).conj()).scale(0.5); // symmetrized off-diagonal
    let tr = a + d;
    // tr^2 - 4 det = (a-d)^2 + 4|b|^2, computed in the cancellation-free form.
    let disc = math::hypot(a - d, 2.0 * b.norm());
    let hi = 0.5 * (tr + disc);
    let lo = 0.5 * (tr - disc);

    let vectors = if b.norm() == 0.0 {
        if a >= d {
            CMat::identity(2)
        } else {
            CMat::from_fn(2, |i, j| {
                Complex64::new(if (i, j) == (0, 1) || (i, j) == (1, 0) { 1.0 } else { 0.0 }, 0.0)
            })
        }
    } else {
        let mut v = CMat::zeros(2);
        for (col, delta) in [(0usize, hi), (1usize, lo)] {
            // (b, delta - a) and (delta - d, conj(b)) are both eigenvectors;
            // pick the better conditioned one.
            let c1 = [b, Complex64::new(delta - a, 0.0)];
            let c2 = [Complex64::new(delta - d, 0.0), b.conj()];
            let n1 = c1[0].norm_sqr() + c1[1].norm_sqr();
            let n2 = c2[0].norm_sqr() + c2[1].norm_sqr();
            let (raw, nrm) = if n1 >= n2 { (c1, n1) } else { (c2, n2) };
            let inv = 1.0 / math::sqrt(nrm);
            v.set(0, col, raw[0] * inv);
            v.set(1, col, raw[1] * inv);
        }
        v
    };

    HermitianEigen {
        values: vec![hi, lo],
        vectors,
    }
}

fn off_diagonal_max(a: &CMat) -> f64 {
    let n = a.n();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let m = a.at(i, j).norm();
                if m > worst {
                    worst = m;
                }
            }
        }
    }
    worst
}

/// Cyclic Jacobi with complex plane rotations. Each rotation annihilates
/// one off-diagonal pair exactly; sweeps repeat until the largest
/// off-diagonal modulus drops below the threshold.
fn eigen_jacobi(a: &CMat) -> Result<HermitianEigen> {
    let n = a.n();
    let mut m = a.clone();
    // Symmetrize to kill round-off asymmetry before iterating.
    for i in 0..n {
        for j in 0..n {
            if i < j {
                let avg = (m.at(i, j) + m.at(j, i).conj()).scale(0.5);
                m.set(i, j, avg);
                m.set(j, i, avg.conj());
            }
        }
        let d = m.at(i, i).re;
        m.set(i, i, Complex64::new(d, 0.0));
    }
    let mut w = CMat::identity(n);

    let mut converged = false;
    for _sweep in 0..JACOBI_MAX_SWEEPS {
        if off_diagonal_max(&m) < JACOBI_THRESHOLD {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let b = m.at(p, q);
                let babs = b.norm();
                if babs < JACOBI_THRESHOLD * 0.01 {
                    continue;
                }
                let app = m.at(p, p).re;
                let aqq = m.at(q, q).re;
                // Rotation G = [[c, s],[-conj(s), c]] on the (p,q) plane with
                // s = c*t*e^{i phi}, phi the phase of the pivot entry; t solves
                // t^2 - 2*zeta*t - 1 = 0 with zeta = (app - aqq)/(2|b|),
                // taking the root of smaller magnitude for stability.
                let phase = b / Complex64::new(babs, 0.0);
                let zeta = (app - aqq) / (2.0 * babs);
                // Smaller-magnitude root of t^2 - 2 zeta t - 1 = 0.
                let t = if zeta >= 0.0 {
                    -1.0 / (zeta + math::hypot(zeta, 1.0))
                } else {
                    1.0 / (-zeta + math::hypot(zeta, 1.0))
                };
                let c = 1.0 / math::hypot(t, 1.0);
                let s = phase * Complex64::new(c * t, 0.0);

                // Column update: M <- M G, W <- W G.
                for k in 0..n {
                    let mkp = m.at(k, p);
                    let mkq = m.at(k, q);
                    m.set(k, p, mkp * c - mkq * s.conj());
                    m.set(k, q, mkp * s + mkq * c);
                    let wkp = w.at(k, p);
                    let wkq = w.at(k, q);
                    w.set(k, p, wkp * c - wkq * s.conj());
                    w.set(k, q, wkp * s + wkq * c);
                }
                // Row update: M <- G^dagger M.
                for k in 0..n {
                    let mpk = m.at(p, k);
                    let mqk = m.at(q, k);
                    m.set(p, k, mpk * c - mqk * s);
                    m.set(q, k, mpk * s.conj() + mqk * c);
                }
                // The pivot pair is annihilated up to round-off; pin it.
                m.set(p, q, Complex64::new(0.0, 0.0));
                m.set(q, p, Complex64::new(0.0, 0.0));
            }
        }
    }
    if !converged && off_diagonal_max(&m) >= JACOBI_THRESHOLD {
        return Err(Error::EigenNoConvergence);
    }

    let mut order: Vec<usize> = (0..n).collect();
    let values: Vec<f64> = (0..n).map(|i| m.at(i, i).re).collect();
    order.sort_by(|&i, &j| values[j].partial_cmp(&values[i]).unwrap());
    let sorted_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let vectors = CMat::from_fn(n, |i, j| w.at(i, order[j]));

    Ok(HermitianEigen {
        values: sorted_values,
        vectors,
    })
}

/// Solves the real n x n system A x = b by Gaussian elimination with
/// partial pivoting. `a` is row-major and consumed as scratch.
pub fn solve_real(n: usize, a: &mut [f64], b: &mut [f64]) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut scale = 0.0f64;
    for &v in a.iter() {
        let m = math::abs(v);
        if m > scale {
            scale = m;
        }
    }
    if scale == 0.0 {
        return Err(Error::SingularSystem);
    }

    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_val = math::abs(a[col * n + col]);
        for row in (col + 1)..n {
            let v = math::abs(a[row * n + col]);
            if v > pivot_val {
                pivot_val = v;
                pivot_row = row;
            }
        }
        if pivot_val <= SINGULAR_TOLERANCE * scale {
            return Err(Error::SingularSystem);
        }
        if pivot_row != col {
            for k in 0..n {
                a.swap(col * n + k, pivot_row * n + k);
            }
            b.swap(col, pivot_row);
        }
        let inv = 1.0 / a[col * n + col];
        for row in (col + 1)..n {
            let factor = a[row * n + col] * inv;
            if factor == 0.0 {
                continue;
            }
            a[row * n + col] = 0.0;
            for k in (col + 1)..n {
                a[row * n + k] -= factor * a[col * n + k];
            }
            b[row] -= factor * b[col];
        }
    }

    let mut x = vec![0.0f64; n];
    for col in (0..n).rev() {
        let mut acc = b[col];
        for k in (col + 1)..n {
            acc -= a[col * n + k] * x[k];
        }
        x[col] = acc / a[col * n + col];
    }
    Ok(x)
}

/// Inverse of a real n x n matrix via column-by-column solves.
pub fn invert_real(n: usize, a: &[f64]) -> Result<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    let mut inv = vec![0.0f64; n * n];
    for col in 0..n {
        let mut scratch = a.to_vec();
        let mut rhs = vec![0.0f64; n];
        rhs[col] = 1.0;
        let x = solve_real(n, &mut scratch, &mut rhs)?;
        for row in 0..n {
            inv[row * n + col] = x[row];
        }
    }
    Ok(inv)
}

/// Nearest unitary in the polar sense: U = M (M^dagger M)^{-1/2}.
pub fn polar_unitary(m: &CMat) -> Result<CMat> {
    let h = m.dagger().matmul(m);
    let eig = hermitian_eigen(&h)?;
    let n = m.n();
    for &w in eig.values.iter() {
        if w < 1e-24 {
            return Err(Error::SingularSystem);
        }
    }
    // (M^dagger M)^{-1/2} = W diag(1/sqrt(w)) W^dagger
    let mut inv_sqrt = CMat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                let scale = 1.0 / math::sqrt(eig.values[k]);
                acc += eig.vectors.at(i, k) * eig.vectors.at(j, k).conj() * scale;
            }
            inv_sqrt.set(i, j, acc);
        }
    }
    Ok(m.matmul(&inv_sqrt))
}

/// exp(i A s) for Hermitian A, computed exactly through the
/// eigendecomposition of A.
pub fn exp_i_hermitian(a: &CMat, s: f64) -> Result<CMat> {
    let eig = hermitian_eigen(a)?;
    let n = a.n();
    let mut out = CMat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                let angle = eig.values[k] * s;
                let phase = Complex64::new(math::cos(angle), math::sin(angle));
                acc += eig.vectors.at(i, k) * eig.vectors.at(j, k).conj() * phase;
            }
            out.set(i, j, acc);
        }
    }
    Ok(out)
}
