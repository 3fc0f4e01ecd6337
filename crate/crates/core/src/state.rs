//! Bloch parameterization of density matrices and the positivity
//! constraints expressed through characteristic-polynomial coefficients.
//!
//! A state is written rho = I/N + (1/2) sum_j theta_j lambda_j with the
//! generators of [`crate::algebra`]. Positivity of rho is equivalent to
//! nonnegativity of the coefficients a_k of det(x I - rho) =
//! sum_k (-1)^k a_k x^{N-k}; for N <= 3 the scaled coefficients k! a_k
//! have closed polynomial forms in theta, which is what the constrained
//! maximum-likelihood solver differentiates.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::algebra::{GeneratorSet, StructureConstants};
use crate::error::{Error, Result};
use crate::linalg::{self, CMat, HermitianEigen};
use crate::math;

/// Constraint slack below which a Bloch vector still counts as admissible.
pub const ADMISSIBILITY_TOLERANCE: f64 = 1e-10;
/// Eigenvalue floor below which a density matrix counts as unphysical.
pub const PHYSICAL_EIG_TOLERANCE: f64 = 1e-9;
/// Hermiticity / trace tolerance accepted when reading a matrix back into
/// Bloch coordinates.
const MATRIX_TOLERANCE: f64 = 1e-8;

/// Real Bloch coordinates of an N-dimensional state; length N^2 - 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochVector {
    n: usize,
    theta: Vec<f64>,
}

impl BlochVector {
    pub fn new(n: usize, theta: Vec<f64>) -> Result<Self> {
        if n < 2 {
            return Err(Error::UnsupportedDimension(n));
        }
        if theta.len() != n * n - 1 {
            return Err(Error::DimensionMismatch {
                expected: n * n - 1,
                got: theta.len(),
            });
        }
        Ok(BlochVector { n, theta })
    }

    /// Hilbert-space dimension N.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Parameter dimension N^2 - 1.
    pub fn d(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.theta.iter().map(|t| t * t).sum())
    }
}

/// Unit-trace Hermitian matrix in Bloch form. Positivity is not implied;
/// use [`DensityMatrix::is_physical`] to check it.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    mat: CMat,
}

impl DensityMatrix {
    /// Wraps an explicit matrix, checking hermiticity and unit trace.
    pub fn from_matrix(mat: CMat) -> Result<Self> {
        if mat.hermitian_residual() > MATRIX_TOLERANCE {
            return Err(Error::NotHermitian);
        }
        let tr = mat.trace();
        if math::abs(tr.re - 1.0) > MATRIX_TOLERANCE || math::abs(tr.im) > MATRIX_TOLERANCE {
            return Err(Error::NotUnitTrace);
        }
        Ok(DensityMatrix { mat })
    }

    pub fn n(&self) -> usize {
        self.mat.n()
    }

    pub fn matrix(&self) -> &CMat {
        &self.mat
    }

    /// Real parts of the diagonal, i.e. the populations.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.mat.at(i, i).re).collect()
    }

    pub fn eigen(&self) -> Result<HermitianEigen> {
        linalg::hermitian_eigen(&self.mat)
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        Ok(self.eigen()?.values)
    }

    /// True when every eigenvalue is at least -1e-9.
    pub fn is_physical(&self) -> Result<bool> {
        let vals = self.eigenvalues()?;
        Ok(vals.iter().all(|&v| v >= -PHYSICAL_EIG_TOLERANCE))
    }
}

/// rho = I/N + (1/2) sum_j theta_j lambda_j. Always Hermitian with unit
/// trace; may be indefinite for inadmissible theta.
pub fn bloch_to_density(gens: &GeneratorSet, theta: &BlochVector) -> Result<DensityMatrix> {
    if theta.n() != gens.n() {
        return Err(Error::DimensionMismatch {
            expected: gens.n(),
            got: theta.n(),
        });
    }
    let n = gens.n();
    let mut mat = CMat::identity(n).scale_re(1.0 / n as f64);
    for (j, lambda) in gens.iter().enumerate() {
        mat = mat.add(&lambda.scale_re(0.5 * theta.theta()[j]));
    }
    Ok(DensityMatrix { mat })
}

/// Inverse map theta_j = Tr(rho lambda_j), after validating hermiticity
/// and unit trace of the input.
pub fn density_to_bloch(gens: &GeneratorSet, rho: &DensityMatrix) -> Result<BlochVector> {
    if rho.n() != gens.n() {
        return Err(Error::DimensionMismatch {
            expected: gens.n(),
            got: rho.n(),
        });
    }
    // DensityMatrix construction already validated the matrix; re-check
    // cheaply in case the caller built it through bloch_to_density with
    // pathological inputs.
    if rho.matrix().hermitian_residual() > MATRIX_TOLERANCE {
        return Err(Error::NotHermitian);
    }
    let theta = gens
        .iter()
        .map(|lambda| rho.matrix().matmul(lambda).trace().re)
        .collect();
    BlochVector::new(gens.n(), theta)
}

/// Scaled characteristic-polynomial coefficients c_k = k! a_k for
/// k = 2..=N, the constraint functions of the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct CharPolyCoefficients {
    /// c[0] = 2! a_2; for N = 3 additionally c[1] = 3! a_3.
    pub scaled: Vec<f64>,
}

impl CharPolyCoefficients {
    pub fn min(&self) -> f64 {
        self.scaled.iter().fold(f64::INFINITY, |m, &v| if v < m { v } else { m })
    }
}

fn norm_sqr(theta: &[f64]) -> f64 {
    theta.iter().map(|t| t * t).sum()
}

/// Cubic contraction sum_{ijk} g_ijk theta_i theta_j theta_k.
fn g_cubic(sc: &StructureConstants, theta: &[f64]) -> f64 {
    let d = sc.d();
    let mut acc = 0.0;
    for i in 0..d {
        if theta[i] == 0.0 {
            continue;
        }
        for j in 0..d {
            if theta[j] == 0.0 {
                continue;
            }
            for k in 0..d {
                acc += sc.g(i, j, k) * theta[i] * theta[j] * theta[k];
            }
        }
    }
    acc
}

/// Closed forms of the scaled coefficients:
/// 2! a_2 = (N-1)/N - |theta|^2 / 2 and, for N = 3,
/// 3! a_3 = 2/9 - |theta|^2 / 2 + g_ijk theta_i theta_j theta_k / 2.
pub fn char_poly_coefficients(
    theta: &BlochVector,
    sc: &StructureConstants,
) -> Result<CharPolyCoefficients> {
    let n = theta.n();
    let t = theta.theta();
    if sc.d() != t.len() {
        return Err(Error::DimensionMismatch {
            expected: sc.d(),
            got: t.len(),
        });
    }
    let c2 = (n as f64 - 1.0) / n as f64 - 0.5 * norm_sqr(t);
    let scaled = match n {
        2 => vec![c2],
        3 => {
            let c3 = 2.0 / 9.0 - 0.5 * norm_sqr(t) + 0.5 * g_cubic(sc, t);
            vec![c2, c3]
        }
        other => return Err(Error::UnsupportedDimension(other)),
    };
    Ok(CharPolyCoefficients { scaled })
}

/// Gradients of the scaled coefficients with respect to theta, one row per
/// constraint: grad(2! a_2) = -theta and
/// grad(3! a_3)_l = -theta_l + (3/2) g_ljk theta_j theta_k.
pub fn constraint_gradients(theta: &BlochVector, sc: &StructureConstants) -> Result<Vec<Vec<f64>>> {
    let n = theta.n();
    let t = theta.theta();
    let d = t.len();
    let mut rows = Vec::new();
    rows.push(t.iter().map(|v| -v).collect::<Vec<f64>>());
    if n == 3 {
        let mut row = vec![0.0f64; d];
        for (l, slot) in row.iter_mut().enumerate() {
            let mut quad = 0.0;
            for j in 0..d {
                if t[j] == 0.0 {
                    continue;
                }
                for k in 0..d {
                    quad += sc.g(l, j, k) * t[j] * t[k];
                }
            }
            *slot = -t[l] + 1.5 * quad;
        }
        rows.push(row);
    } else if n != 2 {
        return Err(Error::UnsupportedDimension(n));
    }
    Ok(rows)
}

/// Hessians of the scaled coefficients, row-major d x d each:
/// -I for 2! a_2 and -delta_jk + 3 g_jkl theta_l for 3! a_3.
pub fn constraint_hessians(theta: &BlochVector, sc: &StructureConstants) -> Result<Vec<Vec<f64>>> {
    let n = theta.n();
    let t = theta.theta();
    let d = t.len();
    let mut out = Vec::new();
    let mut h2 = vec![0.0f64; d * d];
    for j in 0..d {
        h2[j * d + j] = -1.0;
    }
    out.push(h2);
    if n == 3 {
        let mut h3 = vec![0.0f64; d * d];
        for j in 0..d {
            for k in 0..d {
                let mut lin = 0.0;
                for (l, &tl) in t.iter().enumerate() {
                    lin += sc.g(j, k, l) * tl;
                }
                h3[j * d + k] = if j == k { -1.0 } else { 0.0 } + 3.0 * lin;
            }
        }
        out.push(h3);
    } else if n != 2 {
        return Err(Error::UnsupportedDimension(n));
    }
    Ok(out)
}

/// A Bloch vector is admissible when every scaled coefficient is at least
/// -1e-10, which for N <= 3 is equivalent (up to tolerance) to rho >= 0.
pub fn is_admissible(theta: &BlochVector, sc: &StructureConstants) -> Result<bool> {
    let coeffs = char_poly_coefficients(theta, sc)?;
    Ok(coeffs.scaled.iter().all(|&c| c >= -ADMISSIBILITY_TOLERANCE))
}

/// Uhlmann fidelity F(rho, sigma) = [Tr sqrt(sqrt(rho) sigma sqrt(rho))]^2.
///
/// Both states must be physical up to the eigenvalue tolerance; tiny
/// negative eigenvalues are clipped to zero before the square roots.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.n() != sigma.n() {
        return Err(Error::DimensionMismatch {
            expected: rho.n(),
            got: sigma.n(),
        });
    }
    let n = rho.n();
    let eig_r = rho.eigen()?;
    for &v in eig_r.values.iter() {
        if v < -PHYSICAL_EIG_TOLERANCE {
            return Err(Error::NegativeEigenvalue);
        }
    }
    // sqrt(rho) = W diag(sqrt(max(v, 0))) W^dagger
    let mut sqrt_rho = CMat::zeros(n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in 0..n {
                let root = math::sqrt(if eig_r.values[k] > 0.0 { eig_r.values[k] } else { 0.0 });
                acc += eig_r.vectors.at(i, k) * eig_r.vectors.at(j, k).conj() * root;
            }
            sqrt_rho.set(i, j, acc);
        }
    }
    let inner = sqrt_rho.matmul(sigma.matrix()).matmul(&sqrt_rho);
    let eig_m = linalg::hermitian_eigen(&inner)?;
    let mut tr_sqrt = 0.0;
    for &v in eig_m.values.iter() {
        if v < -PHYSICAL_EIG_TOLERANCE {
            return Err(Error::NegativeEigenvalue);
        }
        if v > 0.0 {
            tr_sqrt += math::sqrt(v);
        }
    }
    Ok(tr_sqrt * tr_sqrt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{build_generators, compute_structure_constants};
    use proptest::prelude::*;

    fn setup(n: usize) -> (GeneratorSet, StructureConstants) {
        let gens = build_generators(n).unwrap();
        let sc = compute_structure_constants(&gens);
        (gens, sc)
    }

    #[test]
    fn spin_half_density_entries() {
        let (gens, _) = setup(2);
        let theta = BlochVector::new(2, vec![-0.44, -0.02, 0.19]).unwrap();
        let rho = bloch_to_density(&gens, &theta).unwrap();
        assert!((rho.matrix().at(0, 0).re - 0.595).abs() < 1e-15);
        assert!((rho.matrix().at(1, 1).re - 0.405).abs() < 1e-15);
        let off = rho.matrix().at(0, 1);
        assert!((off.re + 0.22).abs() < 1e-15);
        assert!((off.im - 0.01).abs() < 1e-15);
    }

    #[test]
    fn spin_half_eigenvalues_closed_form() {
        let (gens, _) = setup(2);
        let theta = BlochVector::new(2, vec![-0.44, -0.02, 0.19]).unwrap();
        let rho = bloch_to_density(&gens, &theta).unwrap();
        let r = theta.norm();
        let vals = rho.eigenvalues().unwrap();
        assert!((vals[0] - 0.5 * (1.0 + r)).abs() < 1e-12);
        assert!((vals[1] - 0.5 * (1.0 - r)).abs() < 1e-12);
    }

    #[test]
    fn spin_one_populations() {
        let (gens, _) = setup(3);
        let theta = BlochVector::new(
            3,
            vec![0.15, -0.14, -0.07, -0.04, -0.15, -0.01, -0.17, -0.23],
        )
        .unwrap();
        let rho = bloch_to_density(&gens, &theta).unwrap();
        let diag = rho.diagonal();
        let s3 = 3.0f64.sqrt();
        let want0 = 1.0 / 3.0 + 0.5 * (-0.07 - 0.23 / s3);
        let want1 = 1.0 / 3.0 + 0.5 * (0.07 - 0.23 / s3);
        let want2 = 1.0 / 3.0 + 0.23 / s3;
        assert!((diag[0] - want0).abs() < 1e-14);
        assert!((diag[1] - want1).abs() < 1e-14);
        assert!((diag[2] - want2).abs() < 1e-14);
        assert!((diag.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn coefficients_match_elementary_symmetric_polynomials() {
        let (gens, sc) = setup(3);
        let theta = BlochVector::new(
            3,
            vec![0.15, -0.14, -0.07, -0.04, -0.15, -0.01, -0.17, -0.23],
        )
        .unwrap();
        let rho = bloch_to_density(&gens, &theta).unwrap();
        let vals = rho.eigenvalues().unwrap();
        let e2 = vals[0] * vals[1] + vals[0] * vals[2] + vals[1] * vals[2];
        let e3 = vals[0] * vals[1] * vals[2];
        let coeffs = char_poly_coefficients(&theta, &sc).unwrap();
        assert!((coeffs.scaled[0] - 2.0 * e2).abs() < 1e-12);
        assert!((coeffs.scaled[1] - 6.0 * e3).abs() < 1e-12);
    }

    #[test]
    fn coefficient_gradients_match_finite_differences() {
        let (_, sc) = setup(3);
        let base = vec![0.15, -0.14, -0.07, -0.04, -0.15, -0.01, -0.17, -0.23];
        let theta = BlochVector::new(3, base.clone()).unwrap();
        let grads = constraint_gradients(&theta, &sc).unwrap();
        let hesss = constraint_hessians(&theta, &sc).unwrap();
        let h = 1e-6;
        for (ci, grad) in grads.iter().enumerate() {
            for j in 0..8 {
                let mut plus = base.clone();
                plus[j] += h;
                let mut minus = base.clone();
                minus[j] -= h;
                let cp = char_poly_coefficients(&BlochVector::new(3, plus).unwrap(), &sc)
                    .unwrap()
                    .scaled[ci];
                let cm = char_poly_coefficients(&BlochVector::new(3, minus).unwrap(), &sc)
                    .unwrap()
                    .scaled[ci];
                let fd = (cp - cm) / (2.0 * h);
                assert!(
                    (grad[j] - fd).abs() < 1e-8,
                    "constraint {} grad[{}]: {} vs {}",
                    ci,
                    j,
                    grad[j],
                    fd
                );
            }
        }
        // Hessians against finite differences of the analytic gradients.
        for (ci, hess) in hesss.iter().enumerate() {
            for k in 0..8 {
                let mut plus = base.clone();
                plus[k] += h;
                let mut minus = base.clone();
                minus[k] -= h;
                let gp = constraint_gradients(&BlochVector::new(3, plus).unwrap(), &sc).unwrap()
                    [ci]
                    .clone();
                let gm = constraint_gradients(&BlochVector::new(3, minus).unwrap(), &sc).unwrap()
                    [ci]
                    .clone();
                for j in 0..8 {
                    let fd = (gp[j] - gm[j]) / (2.0 * h);
                    assert!(
                        (hess[j * 8 + k] - fd).abs() < 1e-7,
                        "constraint {} hess[{},{}]",
                        ci,
                        j,
                        k
                    );
                }
            }
        }
    }

    #[test]
    fn maximally_mixed_is_admissible_and_physical() {
        for n in [2usize, 3] {
            let (gens, sc) = setup(n);
            let d = n * n - 1;
            let theta = BlochVector::new(n, vec![0.0; d]).unwrap();
            assert!(is_admissible(&theta, &sc).unwrap());
            let rho = bloch_to_density(&gens, &theta).unwrap();
            assert!(rho.is_physical().unwrap());
            let coeffs = char_poly_coefficients(&theta, &sc).unwrap();
            assert!((coeffs.scaled[0] - (n as f64 - 1.0) / n as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn pure_state_sits_on_the_boundary() {
        let (_, sc) = setup(2);
        // |theta| = 1 is a pure state: 2! a_2 = 1/2 - 1/2 = 0.
        let theta = BlochVector::new(2, vec![0.6, 0.0, 0.8]).unwrap();
        let coeffs = char_poly_coefficients(&theta, &sc).unwrap();
        assert!(coeffs.scaled[0].abs() < 1e-15);
        assert!(is_admissible(&theta, &sc).unwrap());
        let too_long = BlochVector::new(2, vec![0.61, 0.0, 0.8]).unwrap();
        assert!(!is_admissible(&too_long, &sc).unwrap());
    }

    #[test]
    fn fidelity_frozen_values() {
        let (gens, _) = setup(2);
        let mixed = bloch_to_density(&gens, &BlochVector::new(2, vec![0.0, 0.0, 0.0]).unwrap())
            .unwrap();
        let pure = bloch_to_density(&gens, &BlochVector::new(2, vec![0.0, 0.0, 1.0]).unwrap())
            .unwrap();
        let f = fidelity(&mixed, &pure).unwrap();
        assert!((f - 0.5).abs() < 1e-12, "F(I/2, |0><0|) = {}", f);
        assert!((fidelity(&pure, &pure).unwrap() - 1.0).abs() < 1e-12);
        assert!((fidelity(&mixed, &mixed).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fidelity_is_symmetric() {
        let (gens, _) = setup(3);
        let a = bloch_to_density(
            &gens,
            &BlochVector::new(3, vec![0.15, -0.14, -0.07, -0.04, -0.15, -0.01, -0.17, -0.23])
                .unwrap(),
        )
        .unwrap();
        let b = bloch_to_density(
            &gens,
            &BlochVector::new(3, vec![0.0, 0.1, 0.2, 0.0, -0.1, 0.05, 0.0, 0.1]).unwrap(),
        )
        .unwrap();
        let fab = fidelity(&a, &b).unwrap();
        let fba = fidelity(&b, &a).unwrap();
        assert!((fab - fba).abs() < 1e-10);
        assert!(fab > 0.0 && fab < 1.0);
    }

    #[test]
    fn fidelity_rejects_unphysical_input() {
        let (gens, _) = setup(2);
        let bad = bloch_to_density(&gens, &BlochVector::new(2, vec![0.0, 0.0, 1.2]).unwrap())
            .unwrap();
        let mixed = bloch_to_density(&gens, &BlochVector::new(2, vec![0.0, 0.0, 0.0]).unwrap())
            .unwrap();
        assert_eq!(fidelity(&bad, &mixed).unwrap_err(), Error::NegativeEigenvalue);
    }

    #[test]
    fn density_matrix_validation() {
        let mut m = CMat::identity(2);
        m.set(0, 1, Complex64::new(0.5, 0.0));
        assert_eq!(DensityMatrix::from_matrix(m).unwrap_err(), Error::NotHermitian);
        let i2 = CMat::identity(2);
        assert_eq!(DensityMatrix::from_matrix(i2).unwrap_err(), Error::NotUnitTrace);
    }

    proptest! {
        #[test]
        fn bloch_roundtrip(
            n in 2usize..=3,
            raw in proptest::collection::vec(-1.0f64..1.0, 8),
        ) {
            let d = n * n - 1;
            let gens = build_generators(n).unwrap();
            let theta = BlochVector::new(n, raw[..d].to_vec()).unwrap();
            let rho = bloch_to_density(&gens, &theta).unwrap();
            prop_assert!(rho.matrix().hermitian_residual() < 1e-14);
            prop_assert!((rho.matrix().trace().re - 1.0).abs() < 1e-14);
            let back = density_to_bloch(&gens, &rho).unwrap();
            for j in 0..d {
                prop_assert!((back.theta()[j] - theta.theta()[j]).abs() < 1e-12);
            }
        }

        #[test]
        fn admissibility_matches_eigenvalue_sign(
            n in 2usize..=3,
            raw in proptest::collection::vec(-0.7f64..0.7, 8),
        ) {
            let d = n * n - 1;
            let gens = build_generators(n).unwrap();
            let sc = compute_structure_constants(&gens);
            let theta = BlochVector::new(n, raw[..d].to_vec()).unwrap();
            let rho = bloch_to_density(&gens, &theta).unwrap();
            let min_eig = *rho
                .eigenvalues()
                .unwrap()
                .last()
                .unwrap();
            let adm = is_admissible(&theta, &sc).unwrap();
            // Decisions can only disagree inside a thin boundary layer.
            if min_eig > 1e-8 {
                prop_assert!(adm);
            } else if min_eig < -1e-8 {
                prop_assert!(!adm);
            }
        }
    }
}
