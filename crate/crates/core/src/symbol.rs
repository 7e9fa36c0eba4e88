//! The coupling matrix `M`, the Fourier symbol `a(ζ) = M|ζ|²`, its resolvents,
//! the quasi-homogeneous family `κ(λ, ζ)`, and the fiberwise holomorphic
//! functional calculus `h_f(ζ)` realized as a contour integral.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat3, Vec3, C64, ONE, ZERO};
use crate::quadrature::composite_gauss_legendre;

/// Rows of the coupling matrix acting on `(Δu, u_t, θ)`.
pub const COUPLING: [[f64; 3]; 3] = [[0.0, 1.0, 0.0], [-1.0, 0.0, -1.0], [0.0, 1.0, 1.0]];

/// The fixed real coupling matrix of the first-order thermoelastic system.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CouplingMatrix;

impl CouplingMatrix {
    pub fn entries(&self) -> [[f64; 3]; 3] {
        COUPLING
    }

    pub fn as_mat3(&self) -> Mat3 {
        Mat3::from_real(COUPLING)
    }

    pub fn trace(&self) -> f64 {
        COUPLING[0][0] + COUPLING[1][1] + COUPLING[2][2]
    }

    pub fn det(&self) -> f64 {
        self.as_mat3().det().re
    }

    /// Coefficients `[1, c2, c1, c0]` of `det(λI − M) = λ³ + c2 λ² + c1 λ + c0`.
    pub fn characteristic_polynomial(&self) -> [f64; 4] {
        characteristic_polynomial(&COUPLING)
    }
}

/// Cofactor expansion of `det(λI − A)`: the λ² coefficient is `−tr A`, the
/// λ coefficient is the sum of principal 2×2 minors and the constant is `−det A`.
pub fn characteristic_polynomial(a: &[[f64; 3]; 3]) -> [f64; 4] {
    let trace = a[0][0] + a[1][1] + a[2][2];
    let minor = |i: usize, j: usize| a[i][i] * a[j][j] - a[i][j] * a[j][i];
    let minors = minor(0, 1) + minor(0, 2) + minor(1, 2);
    let det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
    [1.0, -trace, minors, -det]
}

/// `M = V·diag(λ)·V⁻¹`, eigenvalues sorted by (Re, Im).
#[derive(Clone, Debug)]
pub struct EigenDecomposition {
    pub values: [C64; 3],
    pub vectors: Mat3,
    pub inverse: Mat3,
}

impl EigenDecomposition {
    /// `V·diag(d)·V⁻¹`.
    pub fn synthesize(&self, d: [C64; 3]) -> Mat3 {
        let mut vd = self.vectors;
        for j in 0..3 {
            for i in 0..3 {
                vd.0[i][j] *= d[j];
            }
        }
        vd * self.inverse
    }

    /// Apply `g(M)` to a vector given `g` evaluated at each eigenvalue.
    pub fn apply(&self, d: [C64; 3], v: &Vec3) -> Vec3 {
        let w = self.inverse.mul_vec(v);
        self.vectors.mul_vec(&[w[0] * d[0], w[1] * d[1], w[2] * d[2]])
    }

    pub fn reconstruction_error(&self) -> f64 {
        (self.synthesize(self.values) - CouplingMatrix.as_mat3()).max_abs()
    }
}

static EIGEN: OnceLock<EigenDecomposition> = OnceLock::new();

/// Cached eigen-decomposition of `M`.
pub fn eigen_decompose_m() -> &'static EigenDecomposition {
    EIGEN.get_or_init(|| {
        compute_eigen_decomposition(&COUPLING)
            .expect("coupling matrix is diagonalizable with simple eigenvalues")
    })
}

fn horner(coeffs: &[C64], z: C64) -> (C64, C64) {
    let mut p = ZERO;
    let mut dp = ZERO;
    for &c in coeffs {
        dp = dp * z + p;
        p = p * z + c;
    }
    (p, dp)
}

fn newton_root(coeffs: &[C64], start: C64) -> Result<C64> {
    let mut z = start;
    for _ in 0..200 {
        let (p, dp) = horner(coeffs, z);
        if p == ZERO {
            return Ok(z);
        }
        if dp == ZERO {
            z += C64::new(1e-3, 1e-3);
            continue;
        }
        let step = p / dp;
        z -= step;
        if step.norm() <= 1e-15 * z.norm().max(1.0) {
            return Ok(z);
        }
    }
    Err(Error::NumericalFailure {
        module: "symbol",
        message: "Newton iteration on the characteristic polynomial did not converge".into(),
    })
}

/// Roots of a real polynomial (leading coefficient first) by Newton's method
/// with synthetic-division deflation, each root polished on the full polynomial.
pub fn polynomial_roots(coeffs: &[f64]) -> Result<Vec<C64>> {
    let full: Vec<C64> = coeffs.iter().map(|&c| C64::new(c, 0.0)).collect();
    let mut work = full.clone();
    let mut roots = Vec::with_capacity(coeffs.len() - 1);
    while work.len() > 1 {
        let r = if work.len() == 2 {
            -work[1] / work[0]
        } else {
            newton_root(&work, C64::new(0.4, 0.9))?
        };
        let r = newton_root(&full, r)?;
        // synthetic division by (z - r)
        let mut q = Vec::with_capacity(work.len() - 1);
        let mut acc = ZERO;
        for &c in &work[..work.len() - 1] {
            acc = acc * r + c;
            q.push(acc);
        }
        roots.push(r);
        work = q;
    }
    for r in roots.iter_mut() {
        if r.im.abs() <= 1e-14 * r.norm().max(1.0) {
            r.im = 0.0;
        }
    }
    Ok(roots)
}

/// Null vector of the singular matrix `B` from the largest cross product of two rows.
fn null_vector(b: &Mat3) -> Vec3 {
    let rows = [b.0[0], b.0[1], b.0[2]];
    let cross = |u: &Vec3, v: &Vec3| -> Vec3 {
        [
            u[1] * v[2] - u[2] * v[1],
            u[2] * v[0] - u[0] * v[2],
            u[0] * v[1] - u[1] * v[0],
        ]
    };
    let candidates = [
        cross(&rows[0], &rows[1]),
        cross(&rows[0], &rows[2]),
        cross(&rows[1], &rows[2]),
    ];
    let best = candidates
        .iter()
        .max_by(|a, b| crate::linalg::vec_norm(a).total_cmp(&crate::linalg::vec_norm(b)))
        .copied()
        .unwrap_or([ONE, ZERO, ZERO]);
    let n = crate::linalg::vec_norm(&best);
    [best[0] / n, best[1] / n, best[2] / n]
}

pub fn compute_eigen_decomposition(a: &[[f64; 3]; 3]) -> Result<EigenDecomposition> {
    let mut values = polynomial_roots(&characteristic_polynomial(a))?;
    values.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
    let values = [values[0], values[1], values[2]];
    let m = Mat3::from_real(*a);
    let cols = values.map(|lam| null_vector(&(m - Mat3::identity().scale(lam))));
    let vectors = Mat3::from_columns(cols);
    let inverse = vectors.inverse().ok_or_else(|| Error::NumericalFailure {
        module: "symbol",
        message: "eigenvector matrix is singular".into(),
    })?;
    let eig = EigenDecomposition {
        values,
        vectors,
        inverse,
    };
    let err = (eig.synthesize(values) - m).max_abs();
    if err > 1e-12 {
        return Err(Error::NumericalFailure {
            module: "symbol",
            message: format!("eigen reconstruction error {err:e}"),
        });
    }
    Ok(eig)
}

/// Largest `|arg λ|` over the eigenvalues of `M`. Since `a(ζ) = |ζ|²M`, this is
/// also the spectral angle of every nonzero symbol value.
pub fn spectral_angle() -> f64 {
    eigen_decompose_m()
        .values
        .iter()
        .map(|v| v.arg().abs())
        .fold(0.0, f64::max)
}

pub fn min_real_eigenvalue() -> f64 {
    eigen_decompose_m()
        .values
        .iter()
        .map(|v| v.re)
        .fold(f64::INFINITY, f64::min)
}

pub fn zeta_sq(zeta: &[f64]) -> f64 {
    zeta.iter().map(|z| z * z).sum()
}

/// The symbol evaluated at one frequency.
#[derive(Clone, Debug)]
pub struct SymbolPoint {
    pub zeta: Vec<f64>,
    pub matrix: Mat3,
}

impl SymbolPoint {
    pub fn new(zeta: &[f64]) -> Self {
        SymbolPoint {
            zeta: zeta.to_vec(),
            matrix: CouplingMatrix.as_mat3().scale_real(zeta_sq(zeta)),
        }
    }
}

/// `(λI + s·M)⁻¹` for `s = |ζ|²`.
pub fn resolvent_sq(lambda: C64, s: f64) -> Result<Mat3> {
    let eig = eigen_decompose_m();
    let scale = lambda.norm() + s * eig.values.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let gap = eig
        .values
        .iter()
        .map(|v| (lambda + v * s).norm())
        .fold(f64::INFINITY, f64::min);
    let singular = || Error::SingularResolvent {
        re: lambda.re,
        im: lambda.im,
        zeta_sq: s,
    };
    if gap <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
        return Err(singular());
    }
    let mut m = CouplingMatrix.as_mat3().scale_real(s);
    for i in 0..3 {
        m.0[i][i] += lambda;
    }
    m.inverse().ok_or_else(singular)
}

pub fn resolvent_at(lambda: C64, zeta: &[f64]) -> Result<Mat3> {
    resolvent_sq(lambda, zeta_sq(zeta))
}

/// `κ(λ, ζ) = λ^{1−|α|/2} ζ^α (λ + a(ζ))⁻¹` with the principal square root.
pub fn kappa(lambda: C64, zeta: &[f64], alpha: &[u32]) -> Result<Mat3> {
    let prefactor = kappa_prefactor(lambda, zeta, alpha)?;
    Ok(resolvent_at(lambda, zeta)?.scale(prefactor))
}

/// The scalar `λ^{1−|α|/2} ζ^α` in front of the resolvent in `κ`.
pub fn kappa_prefactor(lambda: C64, zeta: &[f64], alpha: &[u32]) -> Result<C64> {
    if alpha.len() != zeta.len() {
        return Err(Error::invalid(
            "symbol",
            format!("multi-index of length {} for {} dimensions", alpha.len(), zeta.len()),
        ));
    }
    let order: u32 = alpha.iter().sum();
    let power = match order {
        0 => lambda,
        1 => lambda.sqrt(),
        2 => ONE,
        _ => return Err(Error::invalid("symbol", format!("|alpha| = {order} exceeds 2"))),
    };
    let monomial: f64 = zeta
        .iter()
        .zip(alpha)
        .map(|(z, &a)| z.powi(a as i32))
        .product();
    Ok(power * monomial)
}

/// Closed-form holomorphic functions used to probe the functional calculus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunctionKind {
    /// `z / (1 + z)²`
    Rho,
    /// `z^{1/2} e^{−z}`
    SqrtExp,
    /// `λ₀ / (λ₀ + z)`
    Resolvent { lambda0: f64 },
    /// `e^{−tz}`; bounded on the right half plane but not decaying at zero.
    Exp { t: f64 },
}

/// `z ↦ amplitude · base(dilation · z)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    pub kind: TestFunctionKind,
    pub amplitude: f64,
    pub dilation: f64,
}

impl TestFunction {
    pub fn new(kind: TestFunctionKind) -> Self {
        TestFunction {
            kind,
            amplitude: 1.0,
            dilation: 1.0,
        }
    }

    pub fn rho() -> Self {
        Self::new(TestFunctionKind::Rho)
    }

    pub fn sqrt_exp() -> Self {
        Self::new(TestFunctionKind::SqrtExp)
    }

    pub fn resolvent(lambda0: f64) -> Self {
        Self::new(TestFunctionKind::Resolvent { lambda0 })
    }

    pub fn exp(t: f64) -> Self {
        Self::new(TestFunctionKind::Exp { t })
    }

    pub fn scaled(mut self, amplitude: f64) -> Self {
        self.amplitude *= amplitude;
        self
    }

    pub fn dilated(mut self, c: f64) -> Self {
        self.dilation *= c;
        self
    }

    pub fn name(&self) -> String {
        let base = match self.kind {
            TestFunctionKind::Rho => "rho".to_string(),
            TestFunctionKind::SqrtExp => "sqrt_exp".to_string(),
            TestFunctionKind::Resolvent { lambda0 } => format!("resolvent({lambda0})"),
            TestFunctionKind::Exp { t } => format!("exp({t})"),
        };
        if self.amplitude == 1.0 && self.dilation == 1.0 {
            base
        } else {
            format!("{}*{}({}z)", self.amplitude, base, self.dilation)
        }
    }

    pub fn eval(&self, z: C64) -> C64 {
        let w = z * self.dilation;
        let v = match self.kind {
            TestFunctionKind::Rho => w / ((ONE + w) * (ONE + w)),
            TestFunctionKind::SqrtExp => w.sqrt() * (-w).exp(),
            TestFunctionKind::Resolvent { lambda0 } => C64::new(lambda0, 0.0) / (w + lambda0),
            TestFunctionKind::Exp { t } => (-w * t).exp(),
        };
        v * self.amplitude
    }

    /// Half-opening angle of the largest sector on which the function is
    /// bounded and holomorphic (open at the returned value).
    pub fn sector_limit(&self) -> f64 {
        match self.kind {
            TestFunctionKind::Rho | TestFunctionKind::Resolvent { .. } => PI,
            TestFunctionKind::SqrtExp | TestFunctionKind::Exp { .. } => PI / 2.0,
        }
    }
}

/// Truncated, log-radially parametrized keyhole path
/// `Γ = (∞,0]e^{iψ} ∪ [0,∞)e^{−iψ}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourSpec {
    pub psi: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// Quadrature nodes per ray (rounded up to whole panels).
    pub n_nodes: usize,
}

pub const DEFAULT_R_MIN: f64 = 1e-12;
pub const DEFAULT_R_MAX: f64 = 1e12;
pub const MIN_DEFAULT_NODES: usize = 200;
const PANEL_ORDER: usize = 20;

impl ContourSpec {
    /// Default path for `f`: the ray angle bisects the gap between the
    /// spectral angle and the sector on which `f` is holomorphic. In `log μ`
    /// the nearest pole of the resolvent sits at distance `ψ − spectral_angle`
    /// from the path, so panels are sized to twice that distance.
    pub fn default_for(f: &TestFunction) -> Self {
        let angle = spectral_angle();
        let psi = 0.5 * (angle + f.sector_limit());
        let span = (DEFAULT_R_MAX / DEFAULT_R_MIN).ln();
        let panels = (span / (2.0 * (psi - angle))).ceil() as usize;
        ContourSpec {
            psi,
            r_min: DEFAULT_R_MIN,
            r_max: DEFAULT_R_MAX,
            n_nodes: (panels * PANEL_ORDER).max(MIN_DEFAULT_NODES),
        }
    }

    pub fn with_nodes(mut self, n: usize) -> Self {
        self.n_nodes = n;
        self
    }

    pub fn validate(&self, f: &TestFunction) -> Result<()> {
        let angle = spectral_angle();
        if !(self.psi > angle && self.psi < f.sector_limit()) {
            return Err(Error::invalid(
                "symbol",
                format!(
                    "contour angle {} outside ({angle}, {})",
                    self.psi,
                    f.sector_limit()
                ),
            ));
        }
        if !(self.r_min > 0.0 && self.r_max > self.r_min) {
            return Err(Error::invalid("symbol", "contour radii must satisfy 0 < r_min < r_max"));
        }
        if self.n_nodes < 2 {
            return Err(Error::invalid("symbol", "contour needs at least 2 nodes per ray"));
        }
        Ok(())
    }

    fn rule(&self) -> Vec<(f64, f64)> {
        let panels = self.n_nodes.div_ceil(PANEL_ORDER);
        let order = self.n_nodes.div_ceil(panels);
        composite_gauss_legendre(self.r_min.ln(), self.r_max.ln(), panels, order)
    }
}

/// `h_f(ζ) = (2πi)⁻¹ ∫_Γ f(μ)(μ − a(ζ))⁻¹ dμ` by composite Gauss–Legendre in
/// `log r` on each ray.
pub fn holomorphic_calculus(f: &TestFunction, zeta: &[f64], contour: &ContourSpec) -> Result<Mat3> {
    holomorphic_calculus_sq(f, zeta_sq(zeta), contour)
}

pub fn holomorphic_calculus_sq(f: &TestFunction, s: f64, contour: &ContourSpec) -> Result<Mat3> {
    if s == 0.0 {
        return Err(Error::DegenerateSymbol);
    }
    contour.validate(f)?;
    let a = CouplingMatrix.as_mat3().scale_real(s);
    let up = C64::from_polar(1.0, contour.psi);
    let down = up.conj();
    let mut acc = Mat3::zero();
    for (x, w) in contour.rule() {
        let r = x.exp();
        for (dir, sign) in [(up, -1.0), (down, 1.0)] {
            let mu = dir * r;
            let mut shifted = -a;
            for i in 0..3 {
                shifted.0[i][i] += mu;
            }
            let res = shifted.inverse().ok_or(Error::SingularResolvent {
                re: -mu.re,
                im: -mu.im,
                zeta_sq: s,
            })?;
            // dμ = μ d(log r) along each ray
            acc = acc + res.scale(f.eval(mu) * mu * (sign * w));
        }
    }
    Ok(acc.scale(C64::new(0.0, -1.0 / (2.0 * PI))))
}

/// Spectral evaluation `f(a(ζ)) = V·diag(f(|ζ|²λᵢ))·V⁻¹`.
pub fn matrix_function_oracle(f: &TestFunction, zeta: &[f64]) -> Mat3 {
    matrix_function_sq(f, zeta_sq(zeta))
}

pub fn matrix_function_sq(f: &TestFunction, s: f64) -> Mat3 {
    let eig = eigen_decompose_m();
    eig.synthesize(eig.values.map(|l| f.eval(l * s)))
}

/// One row of the resolvent sweep table.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct ResolventSample {
    pub re_lambda: f64,
    pub im_lambda: f64,
    pub abs_zeta_sq: f64,
    pub resolvent_norm: f64,
}

/// Points of `Σ_{π−φ}`: `n_radii` log-spaced radii in `[r_lo, r_hi]` times
/// `n_angles` equispaced arguments in `[−(π−φ), π−φ]`.
pub fn sector_samples(phi: f64, n_radii: usize, n_angles: usize, r_lo: f64, r_hi: f64) -> Vec<C64> {
    let half = PI - phi;
    let radii = log_space(r_lo, r_hi, n_radii);
    let angles: Vec<f64> = if n_angles == 1 {
        vec![0.0]
    } else {
        (0..n_angles)
            .map(|i| -half + 2.0 * half * i as f64 / (n_angles - 1) as f64)
            .collect()
    };
    radii
        .iter()
        .flat_map(|&r| angles.iter().map(move |&a| C64::from_polar(r, a)))
        .collect()
}

pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// `‖λ(λ + a(ζ))⁻¹‖₂` on the product of the λ samples and `|ζ|²` values.
pub fn resolvent_sweep(lambdas: &[C64], zeta_sqs: &[f64]) -> Result<Vec<ResolventSample>> {
    let pairs: Vec<(C64, f64)> = zeta_sqs
        .iter()
        .flat_map(|&s| lambdas.iter().map(move |&l| (l, s)))
        .collect();
    pairs
        .par_iter()
        .map(|&(l, s)| {
            let r = resolvent_sq(l, s)?;
            Ok(ResolventSample {
                re_lambda: l.re,
                im_lambda: l.im,
                abs_zeta_sq: s,
                resolvent_norm: r.scale(l).op_norm(),
            })
        })
        .collect()
}

/// Spectral location of `M` plus the sampled resolvent bound.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SectorReport {
    /// `[re, im]` pairs sorted by (Re, Im).
    pub eigenvalues_of_m: Vec<[f64; 2]>,
    pub characteristic_polynomial: [f64; 4],
    pub spectral_angle: f64,
    pub margin: f64,
    /// Angle `φ` of the sampled sector `Σ_{π−φ}`.
    pub sample_phi: f64,
    pub resolvent_sup: f64,
    pub n_samples: usize,
}

pub fn sector_report(samples: &[ResolventSample], sample_phi: f64) -> SectorReport {
    let eig = eigen_decompose_m();
    let angle = spectral_angle();
    SectorReport {
        eigenvalues_of_m: eig.values.iter().map(|v| [v.re, v.im]).collect(),
        characteristic_polynomial: CouplingMatrix.characteristic_polynomial(),
        spectral_angle: angle,
        margin: PI / 2.0 - angle,
        sample_phi,
        resolvent_sup: samples
            .iter()
            .map(|s| s.resolvent_norm)
            .fold(0.0, f64::max),
        n_samples: samples.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;
    use proptest::prelude::*;

    #[test]
    fn coupling_matrix_invariants() {
        assert_eq!(CouplingMatrix.det(), 1.0);
        assert_eq!(CouplingMatrix.trace(), 1.0);
        assert_eq!(CouplingMatrix.characteristic_polynomial(), [1.0, -1.0, 2.0, -1.0]);
    }

    #[test]
    fn eigenvalues_match_companion_oracle() {
        let eig = eigen_decompose_m();
        let oracle = oracles::polynomial_roots_companion(&[1.0, -1.0, 2.0, -1.0]);
        for v in eig.values {
            let nearest = oracle.iter().map(|o| (o - v).norm()).fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-12, "{v} not among {oracle:?}");
        }
        assert!(eig.reconstruction_error() <= 1e-12);
        let real = eig.values.iter().find(|v| v.im == 0.0).unwrap();
        assert!((real.re - 0.5698).abs() < 1e-4);
        assert!((eig.values[0].re - 0.2151).abs() < 1e-4);
        let product = eig.values[0] * eig.values[1] * eig.values[2];
        assert!((product - ONE).norm() < 1e-13);
        // sorted by (Re, Im)
        assert!(eig.values[0].im < 0.0 && eig.values[1].im > 0.0 && eig.values[2].im == 0.0);
    }

    #[test]
    fn spectral_angle_below_right_angle() {
        let angle = spectral_angle();
        assert!((angle - 1.4077).abs() < 1e-3, "{angle}");
        assert!(PI / 2.0 - angle > 0.1);
        assert!((PI / 2.0 - angle - 0.163).abs() < 1e-3);
        assert!(eigen_decompose_m().values.iter().all(|v| v.re > 0.0));
    }

    #[test]
    fn resolvent_at_zero_frequency_is_identity() {
        let r = resolvent_at(ONE, &[0.0, 0.0]).unwrap();
        assert!((r - Mat3::identity()).max_abs() == 0.0);
    }

    #[test]
    fn resolvent_unit_frequency_inverts_i_plus_m() {
        let r = resolvent_at(ONE, &[0.6, 0.8]).unwrap();
        let i_plus_m = Mat3::identity() + CouplingMatrix.as_mat3();
        assert!((i_plus_m * r - Mat3::identity()).max_abs() <= 1e-12);
        let oracle = oracles::nalgebra_inverse(&i_plus_m);
        assert!((r - oracle).max_abs() < 1e-14);
    }

    #[test]
    fn resolvent_rejects_spectrum() {
        let lam = -eigen_decompose_m().values[2] * 4.0;
        assert!(matches!(
            resolvent_sq(lam, 4.0),
            Err(Error::SingularResolvent { .. })
        ));
        assert!(resolvent_sq(ZERO, 0.0).is_err());
    }

    #[test]
    fn inverse_symbol_norm_scales_like_inverse_square() {
        let minv = CouplingMatrix.as_mat3().inverse().unwrap();
        for s in [0.5, 3.0, 40.0] {
            let a_inv = CouplingMatrix.as_mat3().scale_real(s).inverse().unwrap();
            assert!((a_inv.op_norm() - minv.op_norm() / s).abs() < 1e-13 * minv.op_norm());
        }
    }

    #[test]
    fn kappa_identity_at_origin() {
        let k = kappa(ONE, &[0.0], &[0]).unwrap();
        assert!((k - Mat3::identity()).max_abs() == 0.0);
        assert!(kappa(ONE, &[1.0], &[3]).is_err());
    }

    #[test]
    fn kappa_sup_is_finite_and_stable() {
        let phi = spectral_angle() + 0.05;
        let sup = |nr: usize, na: usize, nz: usize| {
            let lams = sector_samples(phi, nr, na, 1e-3, 1e3);
            let mut m: f64 = 0.0;
            for z in log_space(1e-3, 1e3, nz) {
                for &l in &lams {
                    for alpha in [[0u32, 0], [1, 0], [1, 1], [0, 2]] {
                        let k = kappa(l, &[z, 0.5 * z], &alpha).unwrap();
                        m = m.max(k.op_norm());
                    }
                }
            }
            m
        };
        // the sup depends on λ/|ζ|², so the ζ grid must resolve the peak near the
        // sector boundary
        let coarse = sup(16, 9, 400);
        let fine = sup(32, 17, 800);
        assert!(coarse.is_finite() && fine.is_finite());
        assert!(fine / coarse < 1.5, "coarse {coarse}, fine {fine}");
    }

    #[test]
    fn rho_calculus_matches_diagonalization() {
        let f = TestFunction::rho();
        let zeta = [1.0];
        let h = holomorphic_calculus(&f, &zeta, &ContourSpec::default_for(&f)).unwrap();
        let o = matrix_function_oracle(&f, &zeta);
        assert!((h - o).max_abs() <= 1e-6 * o.max_abs(), "{}", (h - o).max_abs());
    }

    #[test]
    fn resolvent_function_calculus_matches_direct_inverse() {
        let f = TestFunction::resolvent(1.0);
        let h = holomorphic_calculus(&f, &[0.0, 1.0], &ContourSpec::default_for(&f)).unwrap();
        let direct = (Mat3::identity() + CouplingMatrix.as_mat3()).inverse().unwrap();
        assert!((h - direct).max_abs() <= 1e-6 * direct.max_abs());
    }

    #[test]
    fn calculus_dilation_scaling() {
        let c = 3.0;
        let f = TestFunction::rho();
        let g = TestFunction::rho().dilated(c);
        let zeta = [0.7, -0.4];
        let scaled: Vec<f64> = zeta.iter().map(|z| z / c.sqrt()).collect();
        let lhs = holomorphic_calculus(&f, &zeta, &ContourSpec::default_for(&f)).unwrap();
        let rhs = holomorphic_calculus(&g, &scaled, &ContourSpec::default_for(&g)).unwrap();
        assert!((lhs - rhs).max_abs() <= 1e-6 * lhs.max_abs());
    }

    #[test]
    fn calculus_undefined_at_origin() {
        let f = TestFunction::rho();
        assert!(matches!(
            holomorphic_calculus(&f, &[0.0], &ContourSpec::default_for(&f)),
            Err(Error::DegenerateSymbol)
        ));
    }

    #[test]
    fn oracle_at_origin_and_exponential() {
        assert_eq!(matrix_function_oracle(&TestFunction::rho(), &[0.0]).max_abs(), 0.0);
        let e = matrix_function_oracle(&TestFunction::exp(1.0), &[1.0]);
        let expm = oracles::expm(&CouplingMatrix.as_mat3().scale_real(-1.0));
        assert!((e - expm).max_abs() < 1e-10);
    }

    #[test]
    fn oracle_is_multiplicative() {
        let f = TestFunction::rho();
        let g = TestFunction::sqrt_exp().dilated(0.5);
        let s = 2.3;
        let prod = TestFunction::new(TestFunctionKind::Rho);
        let fa = matrix_function_sq(&f, s);
        let ga = matrix_function_sq(&g, s);
        let eig = eigen_decompose_m();
        let fg = eig.synthesize(eig.values.map(|l| prod.eval(l * s) * g.eval(l * s)));
        assert!((fa * ga - fg).max_abs() < 1e-10);
        assert!((fa * ga - ga * fa).max_abs() < 1e-12);
    }

    #[test]
    fn sector_report_serializes() {
        let phi = spectral_angle() + 0.05;
        let lams = sector_samples(phi, 4, 5, 1e-2, 1e2);
        let sweep = resolvent_sweep(&lams, &[0.1, 1.0, 10.0]).unwrap();
        let report = sector_report(&sweep, phi);
        assert!(report.resolvent_sup.is_finite() && report.resolvent_sup >= 1.0);
        let json = serde_json::to_string(&report).unwrap();
        assert!(json.contains("spectral_angle"));
    }

    proptest! {
        #[test]
        fn kappa_is_quasi_homogeneous(
            r in prop::sample::select(vec![2.0f64, 10.0]),
            rad in 0.01f64..10.0,
            ang in -1.6f64..1.6,
            z0 in -3.0f64..3.0,
            z1 in -3.0f64..3.0,
            a0 in 0u32..3,
        ) {
            let alpha = [a0, (2 - a0).min(1)];
            let lam = C64::from_polar(rad, ang);
            let k1 = kappa(lam, &[z0, z1], &alpha).unwrap();
            let k2 = kappa(lam * (r * r), &[r * z0, r * z1], &alpha).unwrap();
            prop_assert!((k1 - k2).max_abs() <= 1e-10 * k1.max_abs().max(1.0));
        }

        #[test]
        fn resolvent_identity_holds(
            r1 in 0.01f64..10.0, a1 in -1.6f64..1.6,
            r2 in 0.01f64..10.0, a2 in -1.6f64..1.6,
            s in 0.01f64..10.0,
        ) {
            let l = C64::from_polar(r1, a1);
            let m = C64::from_polar(r2, a2);
            let rl = resolvent_sq(l, s).unwrap();
            let rm = resolvent_sq(m, s).unwrap();
            let lhs = rl - rm;
            let rhs = (rl * rm).scale(m - l);
            prop_assert!((lhs - rhs).max_abs() <= 1e-11 * (rl.max_abs() * rm.max_abs()).max(1.0));
        }
    }
}
