//! Fixed-size 3×3 complex matrices and 3-vectors.
//!
//! Every symbol in this crate lives in ℂ^{3×3}, so a dedicated array-backed
//! type with closed-form inversion is both faster and more predictable than a
//! general dense matrix library.

use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use num_complex::Complex64;

pub type C64 = Complex64;
pub type Vec3 = [C64; 3];

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat3(pub [[C64; 3]; 3]);

impl Mat3 {
    pub const fn zero() -> Self {
        Mat3([[ZERO; 3]; 3])
    }

    pub fn identity() -> Self {
        Self::diag([ONE; 3])
    }

    pub fn diag(d: [C64; 3]) -> Self {
        let mut m = Self::zero();
        for (i, v) in d.into_iter().enumerate() {
            m.0[i][i] = v;
        }
        m
    }

    pub fn from_real(r: [[f64; 3]; 3]) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = C64::new(r[i][j], 0.0);
            }
        }
        m
    }

    pub fn from_columns(cols: [Vec3; 3]) -> Self {
        let mut m = Self::zero();
        for (j, col) in cols.iter().enumerate() {
            for i in 0..3 {
                m.0[i][j] = col[i];
            }
        }
        m
    }

    pub fn column(&self, j: usize) -> Vec3 {
        [self.0[0][j], self.0[1][j], self.0[2][j]]
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut m = *self;
        m.0.iter_mut().flatten().for_each(|v| *v *= c);
        m
    }

    pub fn scale_real(&self, c: f64) -> Self {
        self.scale(C64::new(c, 0.0))
    }

    pub fn trace(&self) -> C64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn det(&self) -> C64 {
        let a = &self.0;
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
            - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    }

    /// Cofactor (adjugate) inverse. `None` when the determinant vanishes exactly.
    pub fn inverse(&self) -> Option<Self> {
        let a = &self.0;
        let det = self.det();
        if det == ZERO || !det.is_finite() {
            return None;
        }
        let inv_det = det.inv();
        let mut adj = Self::zero();
        adj.0[0][0] = a[1][1] * a[2][2] - a[1][2] * a[2][1];
        adj.0[0][1] = a[0][2] * a[2][1] - a[0][1] * a[2][2];
        adj.0[0][2] = a[0][1] * a[1][2] - a[0][2] * a[1][1];
        adj.0[1][0] = a[1][2] * a[2][0] - a[1][0] * a[2][2];
        adj.0[1][1] = a[0][0] * a[2][2] - a[0][2] * a[2][0];
        adj.0[1][2] = a[0][2] * a[1][0] - a[0][0] * a[1][2];
        adj.0[2][0] = a[1][0] * a[2][1] - a[1][1] * a[2][0];
        adj.0[2][1] = a[0][1] * a[2][0] - a[0][0] * a[2][1];
        adj.0[2][2] = a[0][0] * a[1][1] - a[0][1] * a[1][0];
        Some(adj.scale(inv_det))
    }

    pub fn conj_transpose(&self) -> Self {
        let mut m = Self::zero();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[j][i].conj();
            }
        }
        m
    }

    pub fn mul_vec(&self, v: &Vec3) -> Vec3 {
        let a = &self.0;
        [
            a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
            a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
            a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
        ]
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn frobenius(&self) -> f64 {
        self.0.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Spectral norm: square root of the largest eigenvalue of `AᴴA`, computed
    /// with the trigonometric closed form for Hermitian 3×3 matrices.
    pub fn op_norm(&self) -> f64 {
        let h = self.conj_transpose() * *self;
        let d = [h.0[0][0].re, h.0[1][1].re, h.0[2][2].re];
        let p1 = h.0[0][1].norm_sqr() + h.0[0][2].norm_sqr() + h.0[1][2].norm_sqr();
        let q = (d[0] + d[1] + d[2]) / 3.0;
        let p2 = d.iter().map(|x| (x - q) * (x - q)).sum::<f64>() + 2.0 * p1;
        if p2 <= f64::MIN_POSITIVE || p2 <= (q * 1e-30) * (q * 1e-30) {
            return q.max(0.0).sqrt();
        }
        let p = (p2 / 6.0).sqrt();
        let b = (h - Mat3::identity().scale_real(q)).scale_real(1.0 / p);
        let r = (b.det().re / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let largest = q + 2.0 * p * phi.cos();
        largest.max(0.0).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    /// Real parts of all entries.
    pub fn re(&self) -> [[f64; 3]; 3] {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = self.0[i][j].re;
            }
        }
        r
    }
}

impl Default for Mat3 {
    fn default() -> Self {
        Self::zero()
    }
}

impl Index<(usize, usize)> for Mat3 {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.0[i][j]
    }
}

impl IndexMut<(usize, usize)> for Mat3 {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.0[i][j]
    }
}

impl Add for Mat3 {
    type Output = Mat3;
    fn add(mut self, rhs: Mat3) -> Mat3 {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] += rhs.0[i][j];
            }
        }
        self
    }
}

impl Sub for Mat3 {
    type Output = Mat3;
    fn sub(mut self, rhs: Mat3) -> Mat3 {
        for i in 0..3 {
            for j in 0..3 {
                self.0[i][j] -= rhs.0[i][j];
            }
        }
        self
    }
}

impl Neg for Mat3 {
    type Output = Mat3;
    fn neg(self) -> Mat3 {
        self.scale_real(-1.0)
    }
}

impl Mul for Mat3 {
    type Output = Mat3;
    fn mul(self, rhs: Mat3) -> Mat3 {
        let mut m = Mat3::zero();
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[i][0] * rhs.0[0][j]
                    + self.0[i][1] * rhs.0[1][j]
                    + self.0[i][2] * rhs.0[2][j];
            }
        }
        m
    }
}

pub fn vec_norm(v: &Vec3) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

pub fn vec_sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn vec_add(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn vec_scale(a: &Vec3, c: C64) -> Vec3 {
    [a[0] * c, a[1] * c, a[2] * c]
}

/// Real 3×3 matrix applied to a complex vector.
pub fn real_mul_vec(m: &[[f64; 3]; 3], v: &Vec3) -> Vec3 {
    [
        v[0] * m[0][0] + v[1] * m[0][1] + v[2] * m[0][2],
        v[0] * m[1][0] + v[1] * m[1][1] + v[2] * m[1][2],
        v[0] * m[2][0] + v[1] * m[2][1] + v[2] * m[2][2],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Mat3 {
        let mut m = Mat3::zero();
        let vals = [
            (1.0, 0.5),
            (-2.0, 0.1),
            (0.3, 0.0),
            (0.0, 1.0),
            (4.0, -1.0),
            (1.5, 0.2),
            (-0.7, 0.0),
            (2.2, 2.0),
            (0.9, -0.4),
        ];
        for (k, (re, im)) in vals.into_iter().enumerate() {
            m.0[k / 3][k % 3] = C64::new(re, im);
        }
        m
    }

    #[test]
    fn inverse_multiplies_back_to_identity() {
        let m = sample();
        let inv = m.inverse().unwrap();
        assert!((m * inv - Mat3::identity()).max_abs() < 1e-14);
        assert!((inv * m - Mat3::identity()).max_abs() < 1e-14);
    }

    #[test]
    fn singular_matrix_has_no_inverse() {
        let m = Mat3::from_real([[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 1.0]]);
        assert!(m.inverse().is_none());
    }

    #[test]
    fn op_norm_matches_svd() {
        let m = sample();
        let na = nalgebra::Matrix3::from_fn(|i, j| m.0[i][j]);
        let sv = na.singular_values();
        let expected = sv.iter().cloned().fold(0.0, f64::max);
        assert!((m.op_norm() - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn op_norm_of_scaled_identity() {
        let m = Mat3::identity().scale(C64::new(0.0, -3.0));
        assert!((m.op_norm() - 3.0).abs() < 1e-14);
        assert_eq!(Mat3::zero().op_norm(), 0.0);
    }
}
