//! Traceless Hermitian generators of su(N) in the standard order
//! (Pauli matrices for N = 2, Gell-Mann matrices for N = 3) together with
//! their antisymmetric and symmetric structure constants.
//!
//! Generators are normalized so Tr(lambda_i lambda_j) = 2 delta_ij, which
//! fixes the Bloch expansion rho = I/N + (1/2) sum_j theta_j lambda_j used
//! throughout the crate.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::math;

/// The d = N^2 - 1 generators for one Hilbert-space dimension.
#[derive(Debug, Clone)]
pub struct GeneratorSet {
    n: usize,
    generators: Vec<CMat>,
}

impl GeneratorSet {
    /// Hilbert-space dimension N.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of generators, N^2 - 1.
    pub fn count(&self) -> usize {
        self.generators.len()
    }

    /// Generator lambda_j, zero-based.
    pub fn get(&self, j: usize) -> &CMat {
        &self.generators[j]
    }

    pub fn iter(&self) -> impl Iterator<Item = &CMat> {
        self.generators.iter()
    }
}

fn basis_matrix(n: usize, r: usize, c: usize, v: Complex64) -> CMat {
    let mut m = CMat::zeros(n);
    m.set(r, c, v);
    m
}

/// Builds the su(N) generator set in the conventional enumeration:
/// for each k = 2..N, first the pair (u_jk, v_jk) for every j < k, then the
/// diagonal generator w_{k-1}. For N = 2 this yields (sigma_x, sigma_y,
/// sigma_z); for N = 3 the eight Gell-Mann matrices with the diagonal ones
/// at positions 3 and 8.
pub fn build_generators(n: usize) -> Result<GeneratorSet> {
    if n < 2 {
        return Err(Error::UnsupportedDimension(n));
    }
    let mut generators = Vec::with_capacity(n * n - 1);
    for k in 1..n {
        for j in 0..k {
            // u_jk = E_jk + E_kj
            let mut u = basis_matrix(n, j, k, Complex64::new(1.0, 0.0));
            u.set(k, j, Complex64::new(1.0, 0.0));
            generators.push(u);
            // v_jk = -i (E_jk - E_kj)
            let mut v = basis_matrix(n, j, k, Complex64::new(0.0, -1.0));
            v.set(k, j, Complex64::new(0.0, 1.0));
            generators.push(v);
        }
        // w_l = sqrt(2/(l(l+1))) (sum_{j<=l} E_jj - l E_{l+1,l+1}), l = k
        let l = k as f64;
        let scale = math::sqrt(2.0 / (l * (l + 1.0)));
        let mut w = CMat::zeros(n);
        for j in 0..k {
            w.set(j, j, Complex64::new(scale, 0.0));
        }
        w.set(k, k, Complex64::new(-l * scale, 0.0));
        generators.push(w);
    }
    debug_assert_eq!(generators.len(), n * n - 1);
    Ok(GeneratorSet { n, generators })
}

/// Dense rank-3 tables of the structure constants
/// f_ijk = (1/4i) Tr([lambda_i, lambda_j] lambda_k) and
/// g_ijk = (1/4) Tr(({lambda_i, lambda_j} - (4/N) delta_ij I) lambda_k).
#[derive(Debug, Clone)]
pub struct StructureConstants {
    d: usize,
    f: Vec<f64>,
    g: Vec<f64>,
}

impl StructureConstants {
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn f(&self, i: usize, j: usize, k: usize) -> f64 {
        self.f[(i * self.d + j) * self.d + k]
    }

    #[inline]
    pub fn g(&self, i: usize, j: usize, k: usize) -> f64 {
        self.g[(i * self.d + j) * self.d + k]
    }
}

/// Computes both structure-constant tables by direct trace evaluation.
pub fn compute_structure_constants(gens: &GeneratorSet) -> StructureConstants {
    let d = gens.count();
    let n = gens.n() as f64;
    let mut f = vec![0.0f64; d * d * d];
    let mut g = vec![0.0f64; d * d * d];
    for i in 0..d {
        for j in 0..d {
            let li = gens.get(i);
            let lj = gens.get(j);
            let prod_ij = li.matmul(lj);
            let prod_ji = lj.matmul(li);
            let commutator = prod_ij.sub(&prod_ji);
            let anticommutator = prod_ij.add(&prod_ji);
            for k in 0..d {
                let lk = gens.get(k);
                // Tr([li,lj] lk) is purely imaginary; Tr({li,lj} lk) purely real.
                let tc = commutator.matmul(lk).trace();
                let ta = anticommutator.matmul(lk).trace();
                f[(i * d + j) * d + k] = 0.25 * tc.im;
                let correction = if i == j { (4.0 / n) * lk.trace().re } else { 0.0 };
                g[(i * d + j) * d + k] = 0.25 * (ta.re - correction);
            }
        }
    }
    StructureConstants { d, f, g }
}
