//! Reference computations that share no code with the production paths.
//! They back the unit tests and the `verify` acceptance run.

use nalgebra::{Complex, Matrix3};

use crate::linalg::{Mat3, C64};

fn to_na(m: &Mat3) -> Matrix3<Complex<f64>> {
    Matrix3::from_fn(|i, j| m.0[i][j])
}

fn from_na(m: &Matrix3<Complex<f64>>) -> Mat3 {
    let mut out = Mat3::zero();
    for i in 0..3 {
        for j in 0..3 {
            out.0[i][j] = m[(i, j)];
        }
    }
    out
}

/// Scaling-and-squaring Padé matrix exponential.
pub fn expm(m: &Mat3) -> Mat3 {
    from_na(&to_na(m).exp())
}

/// LU-based inverse.
pub fn nalgebra_inverse(m: &Mat3) -> Mat3 {
    from_na(&to_na(m).try_inverse().expect("oracle inverse of singular matrix"))
}

/// Largest singular value from an SVD.
pub fn svd_norm(m: &Mat3) -> f64 {
    to_na(m).singular_values().max()
}

/// Roots of a monic cubic from the Schur form of its companion matrix.
pub fn polynomial_roots_companion(coeffs: &[f64; 4]) -> Vec<C64> {
    let [a, b, c, d] = *coeffs;
    let companion = Matrix3::new(-b / a, -c / a, -d / a, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    companion.complex_eigenvalues().iter().copied().collect()
}
