//! Numerical checks of mixed continuous/discrete Michlin conditions for the
//! symbol families `κ` and `h_f`, and Monte-Carlo Rademacher estimates.

use std::collections::BTreeMap;
use std::ops::Sub;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{vec_norm, Mat3, Vec3, C64, ZERO};
use crate::symbol::{
    holomorphic_calculus_sq, kappa, kappa_prefactor, log_space, resolvent_at, sector_samples, spectral_angle, ContourSpec,
    TestFunction,
};

/// `Δ^γ M(k)` with `Δ^{e_j} M(k) = M(k) − M(k − e_j)` applied for each
/// `γ_j = 1`.
pub fn difference_at<T>(values: &BTreeMap<Vec<i64>, T>, k: &[i64], gamma: &[u8]) -> Result<T>
where
    T: Clone + Sub<Output = T>,
{
    if gamma.len() != k.len() || gamma.iter().any(|&g| g > 1) {
        return Err(Error::invalid("multiplier", format!("bad difference order {gamma:?}")));
    }
    match gamma.iter().position(|&g| g == 1) {
        None => values
            .get(k)
            .cloned()
            .ok_or_else(|| Error::MissingIndex { index: k.to_vec() }),
        Some(j) => {
            let mut rest = gamma.to_vec();
            rest[j] = 0;
            let mut shifted = k.to_vec();
            shifted[j] -= 1;
            Ok(difference_at(values, k, &rest)? - difference_at(values, &shifted, &rest)?)
        }
    }
}

/// `Δ^γ M` at every index whose shifted neighbours are present. Fails with
/// `MissingIndex` only if no index qualifies.
pub fn discrete_difference<T>(values: &BTreeMap<Vec<i64>, T>, gamma: &[u8]) -> Result<BTreeMap<Vec<i64>, T>>
where
    T: Clone + Sub<Output = T>,
{
    let mut out = BTreeMap::new();
    let mut first_missing = None;
    for k in values.keys() {
        match difference_at(values, k, gamma) {
            Ok(v) => {
                out.insert(k.clone(), v);
            }
            Err(Error::MissingIndex { index }) => {
                first_missing.get_or_insert(index);
            }
            Err(e) => return Err(e),
        }
    }
    match first_missing {
        Some(index) if out.is_empty() => Err(Error::MissingIndex { index }),
        _ => Ok(out),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SymbolFamily {
    /// `κ(λ, ζ) = λ^{1−|α|/2} ζ^α (λ + a(ζ))⁻¹`
    Kappa { alpha: Vec<u32> },
    /// `h_f(ζ)` by the contour integral; independent of `λ`.
    Calculus { f: TestFunction },
}

impl SymbolFamily {
    pub fn name(&self) -> String {
        match self {
            SymbolFamily::Kappa { alpha } => {
                let a: Vec<String> = alpha.iter().map(|x| x.to_string()).collect();
                format!("kappa_{}", a.join(""))
            }
            SymbolFamily::Calculus { f } => format!("h_{}", f.name()),
        }
    }

    pub fn depends_on_lambda(&self) -> bool {
        matches!(self, SymbolFamily::Kappa { .. })
    }

    pub fn eval(&self, lambda: C64, zeta: &[f64]) -> Result<Mat3> {
        let m = match self {
            SymbolFamily::Kappa { alpha } => kappa(lambda, zeta, alpha)?,
            SymbolFamily::Calculus { f } => {
                let s: f64 = zeta.iter().map(|z| z * z).sum();
                holomorphic_calculus_sq(f, s, &ContourSpec::default_for(f))?
            }
        };
        if !m.is_finite() {
            return Err(Error::NonFiniteValue {
                re: lambda.re,
                im: lambda.im,
                zeta: zeta.to_vec(),
            });
        }
        Ok(m)
    }
}

/// Points of `Σ_{π−φ}` with `φ = spectral angle + angle_offset`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSamples {
    pub n_radii: usize,
    pub n_angles: usize,
    pub r_lo: f64,
    pub r_hi: f64,
    pub angle_offset: f64,
}

impl Default for LambdaSamples {
    fn default() -> Self {
        LambdaSamples {
            n_radii: 16,
            n_angles: 9,
            r_lo: 1e-3,
            r_hi: 1e3,
            angle_offset: 0.05,
        }
    }
}

impl LambdaSamples {
    pub fn phi(&self) -> f64 {
        spectral_angle() + self.angle_offset
    }

    pub fn points(&self) -> Vec<C64> {
        sector_samples(self.phi(), self.n_radii, self.n_angles, self.r_lo, self.r_hi)
    }

    pub fn doubled(&self) -> Self {
        LambdaSamples {
            n_radii: 2 * self.n_radii,
            n_angles: 2 * self.n_angles - 1,
            ..self.clone()
        }
    }
}

/// Sampling plan for `sup |ξ^{γ₁} k^{γ₂} ∂_ξ^{γ₁} Δ_k^{γ₂} m_λ(ξ, k)|` over
/// `λ ∈ Σ_{π−φ}`, `ξ ∈ ℝ^{n₁}∖{0}`, `k ∈ ℤ^{n₂}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MichlinSweep {
    pub family: SymbolFamily,
    pub lambdas: LambdaSamples,
    pub n1: usize,
    pub n2: usize,
    /// `|ξ_i|` runs over `n_xi` log-spaced values in `[xi_lo, xi_hi]`, both signs.
    pub xi_lo: f64,
    pub xi_hi: f64,
    pub n_xi: usize,
    /// `k_j ∈ [−k_max, k_max]`; rows with `γ₂,j = 1` use `|k_j| ≥ 2` only.
    pub k_max: i64,
    /// Relative central-difference step for `∂_ξ`.
    pub rel_step: f64,
    /// Sample only `ξ > 0` and `Im λ ≥ 0`. Every supported family satisfies
    /// `‖m(λ̄, ζ)‖ = ‖m(λ, ζ)‖` and `‖m(λ, −ξ, k)‖ = ‖m(λ, ξ, k)‖`, so the
    /// sups are unchanged.
    #[serde(default = "default_symmetric")]
    pub symmetric: bool,
}

fn default_symmetric() -> bool {
    true
}

impl MichlinSweep {
    pub fn new(family: SymbolFamily) -> Self {
        MichlinSweep {
            family,
            lambdas: LambdaSamples::default(),
            n1: 1,
            n2: 1,
            xi_lo: 1e-2,
            xi_hi: 1e2,
            n_xi: 16,
            k_max: 8,
            rel_step: 1e-2,
            symmetric: true,
        }
    }

    /// Twice the ξ density, twice the k range and twice the λ samples.
    pub fn doubled(&self) -> Self {
        MichlinSweep {
            lambdas: self.lambdas.doubled(),
            n_xi: 2 * self.n_xi,
            k_max: 2 * self.k_max,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid("multiplier", m.to_string()));
        if let SymbolFamily::Kappa { alpha } = &self.family {
            if alpha.len() != self.n1 + self.n2 {
                return bad("alpha length must equal n1 + n2");
            }
        }
        if self.n1 + self.n2 == 0 {
            return bad("no dimensions");
        }
        if !(self.xi_lo > 0.0 && self.xi_hi >= self.xi_lo) || self.n_xi == 0 {
            return bad("xi grid must be a nonempty positive range");
        }
        if self.k_max < 2 && self.n2 > 0 {
            return bad("k_max must be at least 2");
        }
        if !(self.rel_step > 0.0 && self.rel_step < 0.5) {
            return bad("rel_step must lie in (0, 0.5)");
        }
        if self.lambdas.n_radii == 0 || self.lambdas.n_angles == 0 {
            return bad("empty lambda sample set");
        }
        Ok(())
    }

    /// All `γ ∈ {0,1}^{n₁+n₂}` in lexicographic order.
    pub fn gammas(&self) -> Vec<Vec<u8>> {
        let d = self.n1 + self.n2;
        (0..1usize << d)
            .map(|bits| (0..d).map(|i| ((bits >> (d - 1 - i)) & 1) as u8).collect())
            .collect()
    }

    fn xi_points(&self) -> Vec<Vec<f64>> {
        let axis: Vec<f64> = log_space(self.xi_lo, self.xi_hi, self.n_xi)
            .into_iter()
            .flat_map(|x| if self.symmetric { vec![x] } else { vec![-x, x] })
            .collect();
        cartesian(&vec![axis; self.n1])
    }

    fn k_points(&self, gamma2: &[u8]) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = gamma2
            .iter()
            .map(|&g| {
                (-self.k_max..=self.k_max)
                    .filter(|k| g == 0 || k.abs() >= 2)
                    .map(|k| k as f64)
                    .collect()
            })
            .collect();
        cartesian(&axes)
    }
}

fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |&x| {
                    let mut p = prefix.clone();
                    p.push(x);
                    p
                })
            })
            .collect()
    })
}

/// `∂_ξ^{γ₁} Δ_k^{γ₂} m` by a product central-difference stencil of
/// half-width `h_i = step·|ξ_i|` and exact backward differences in `k`, for
/// every symbol returned by `eval`.
fn mixed_difference<E>(eval: &E, lambda: C64, xi: &[f64], k: &[f64], gamma: &[u8], step: f64) -> Result<Vec<Mat3>>
where
    E: Fn(C64, &[f64]) -> Result<Vec<Mat3>>,
{
    let n1 = xi.len();
    let d_axes: Vec<usize> = (0..n1).filter(|&i| gamma[i] == 1).collect();
    let k_axes: Vec<usize> = (0..k.len()).filter(|&j| gamma[n1 + j] == 1).collect();
    let mut acc: Option<Vec<Mat3>> = None;
    let mut zeta = vec![0.0; n1 + k.len()];
    // ξ stencil innermost so that a ξ-independent symbol cancels exactly
    for k_bits in 0..1usize << k_axes.len() {
        for d_bits in 0..1usize << d_axes.len() {
            zeta[..n1].copy_from_slice(xi);
            zeta[n1..].copy_from_slice(k);
            let mut weight = 1.0;
            for (b, &i) in d_axes.iter().enumerate() {
                let h = step * xi[i].abs();
                if d_bits >> b & 1 == 1 {
                    zeta[i] -= h;
                    weight = -weight;
                } else {
                    zeta[i] += h;
                }
                weight /= 2.0 * h;
            }
            for (b, &j) in k_axes.iter().enumerate() {
                if k_bits >> b & 1 == 1 {
                    zeta[n1 + j] -= 1.0;
                    weight = -weight;
                }
            }
            let vals = eval(lambda, &zeta)?;
            match acc.as_mut() {
                None => acc = Some(vals.iter().map(|m| m.scale_real(weight)).collect()),
                Some(a) => a.iter_mut().zip(&vals).for_each(|(a, m)| *a = *a + m.scale_real(weight)),
            }
        }
    }
    Ok(acc.unwrap_or_default())
}

/// Values at one sample point and the sizes of the Richardson corrections.
fn michlin_point<E>(eval: &E, lambda: C64, xi: &[f64], k: &[f64], gamma: &[u8], step: f64) -> Result<Vec<(f64, f64)>>
where
    E: Fn(C64, &[f64]) -> Result<Vec<Mat3>>,
{
    let n1 = xi.len();
    let weight: f64 = xi
        .iter()
        .chain(k)
        .zip(gamma)
        .filter(|(_, &g)| g == 1)
        .map(|(x, _)| x.abs())
        .product();
    if gamma[..n1].contains(&1) {
        let coarse = mixed_difference(eval, lambda, xi, k, gamma, step)?;
        let fine = mixed_difference(eval, lambda, xi, k, gamma, step / 2.0)?;
        Ok(coarse
            .iter()
            .zip(&fine)
            .map(|(c, f)| {
                let extrapolated = f.scale_real(4.0 / 3.0) - c.scale_real(1.0 / 3.0);
                (weight * extrapolated.op_norm(), weight * (extrapolated - *f).frobenius())
            })
            .collect())
    } else {
        Ok(mixed_difference(eval, lambda, xi, k, gamma, step)?
            .iter()
            .map(|m| (weight * m.op_norm(), 0.0))
            .collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MichlinRow {
    pub gamma: Vec<u8>,
    pub sup: f64,
    pub argmax_lambda: [f64; 2],
    pub argmax_zeta: Vec<f64>,
    /// Largest Frobenius norm of the Richardson correction.
    pub richardson_correction: f64,
    pub n_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MichlinTable {
    pub family: String,
    pub n_lambda: usize,
    pub n_xi: usize,
    pub k_max: i64,
    pub rows: Vec<MichlinRow>,
}

impl MichlinTable {
    pub fn row(&self, gamma: &[u8]) -> Option<&MichlinRow> {
        self.rows.iter().find(|r| r.gamma == gamma)
    }
}

pub fn michlin_sweep(spec: &MichlinSweep) -> Result<MichlinTable> {
    let mut tables = michlin_sweeps(std::slice::from_ref(spec))?;
    Ok(tables.remove(0))
}

/// Sweep several families over one shared sample plan. `κ` families share
/// one resolvent evaluation per stencil point.
pub fn michlin_sweeps(specs: &[MichlinSweep]) -> Result<Vec<MichlinTable>> {
    let first = specs
        .first()
        .ok_or_else(|| Error::invalid("multiplier", "no sweep requested"))?;
    for s in specs {
        let same_plan = MichlinSweep {
            family: first.family.clone(),
            ..s.clone()
        };
        if same_plan != *first {
            return Err(Error::invalid("multiplier", "batched sweeps must share one sample plan"));
        }
    }
    let families: Vec<&SymbolFamily> = specs.iter().map(|s| &s.family).collect();
    let eval = |l: C64, z: &[f64]| -> Result<Vec<Mat3>> {
        let mut resolvent = None;
        families
            .iter()
            .map(|f| match f {
                SymbolFamily::Kappa { alpha } => {
                    if resolvent.is_none() {
                        resolvent = Some(resolvent_at(l, z)?);
                    }
                    let r = resolvent.expect("resolvent just set");
                    let m = r.scale(kappa_prefactor(l, z, alpha)?);
                    if !m.is_finite() {
                        return Err(Error::NonFiniteValue {
                            re: l.re,
                            im: l.im,
                            zeta: z.to_vec(),
                        });
                    }
                    Ok(m)
                }
                other => other.eval(l, z),
            })
            .collect()
    };
    let names: Vec<String> = families.iter().map(|f| f.name()).collect();
    let uses_lambda = families.iter().any(|f| f.depends_on_lambda());
    michlin_sweep_with(first, &names, uses_lambda, &eval)
}

/// Sweep the sample plan of `spec` for the symbols returned by `eval`, one
/// table per entry of `names`.
pub fn michlin_sweep_with<E>(spec: &MichlinSweep, names: &[String], uses_lambda: bool, eval: &E) -> Result<Vec<MichlinTable>>
where
    E: Fn(C64, &[f64]) -> Result<Vec<Mat3>> + Sync,
{
    spec.validate()?;
    let lambdas = if uses_lambda {
        let pts = spec.lambdas.points();
        if spec.symmetric {
            pts.into_iter().filter(|l| l.im >= 0.0).collect()
        } else {
            pts
        }
    } else {
        vec![C64::new(1.0, 0.0)]
    };
    let xis = spec.xi_points();
    let mut tables: Vec<MichlinTable> = names
        .iter()
        .map(|n| MichlinTable {
            family: n.clone(),
            n_lambda: lambdas.len(),
            n_xi: spec.n_xi,
            k_max: spec.k_max,
            rows: Vec::new(),
        })
        .collect();
    for gamma in spec.gammas() {
        let ks = spec.k_points(&gamma[spec.n1..]);
        let (nx, nk) = (xis.len(), ks.len());
        let n_points = lambdas.len() * nx * nk;
        let values: Vec<Result<Vec<(f64, f64)>>> = (0..n_points)
            .into_par_iter()
            .map(|p| {
                let (l, x, k) = (lambdas[p / (nx * nk)], &xis[p / nk % nx], &ks[p % nk]);
                michlin_point(eval, l, x, k, &gamma, spec.rel_step)
            })
            .collect();
        let mut rows: Vec<MichlinRow> = names
            .iter()
            .map(|_| MichlinRow {
                gamma: gamma.clone(),
                sup: 0.0,
                argmax_lambda: [0.0; 2],
                argmax_zeta: Vec::new(),
                richardson_correction: 0.0,
                n_points,
            })
            .collect();
        for (p, v) in values.into_iter().enumerate() {
            for (row, (v, corr)) in rows.iter_mut().zip(v?) {
                row.richardson_correction = row.richardson_correction.max(corr);
                if v > row.sup {
                    let (l, x, k) = (lambdas[p / (nx * nk)], &xis[p / nk % nx], &ks[p % nk]);
                    row.sup = v;
                    row.argmax_lambda = [l.re, l.im];
                    row.argmax_zeta = x.iter().chain(k.iter()).copied().collect();
                }
            }
        }
        for (t, r) in tables.iter_mut().zip(rows) {
            t.rows.push(r);
        }
    }
    Ok(tables)
}

pub const MIN_DRAWS: usize = 100;
pub const DENOMINATOR_FLOOR: f64 = 1e-14;
pub const KAHANE_CONSTANT: f64 = 2.0;
pub const KAHANE_SLACK: f64 = 1.05;

/// Signs of draw `d`; each draw owns its own ChaCha stream so that parallel
/// evaluation is schedule independent.
pub fn rademacher_signs(seed: u64, draw: usize, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(draw as u64);
    (0..n).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// `(E‖Σ ε_j y_j‖^p)^{1/p}` over `n_draws` seeded sign draws.
pub fn rademacher_norm(terms: &[Vec3], p: f64, n_draws: usize, seed: u64) -> f64 {
    let samples: Vec<f64> = (0..n_draws)
        .into_par_iter()
        .map(|d| {
            let signs = rademacher_signs(seed, d, terms.len());
            let mut sum = [ZERO; 3];
            for (y, e) in terms.iter().zip(&signs) {
                for i in 0..3 {
                    sum[i] += y[i] * *e;
                }
            }
            vec_norm(&sum).powf(p)
        })
        .collect();
    (samples.iter().sum::<f64>() / n_draws as f64).powf(1.0 / p)
}

#[derive(Clone, Debug)]
pub struct RBoundSample {
    pub operators: Vec<Mat3>,
    pub vectors: Vec<Vec3>,
    pub n_draws: usize,
    pub seed: u64,
}

impl RBoundSample {
    pub fn validate(&self) -> Result<()> {
        if self.operators.is_empty() || self.operators.len() != self.vectors.len() {
            return Err(Error::invalid(
                "multiplier",
                format!("{} operators for {} vectors", self.operators.len(), self.vectors.len()),
            ));
        }
        if self.n_draws < MIN_DRAWS {
            return Err(Error::invalid("multiplier", format!("n_draws must be at least {MIN_DRAWS}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RBoundReport {
    pub n: usize,
    pub n_draws: usize,
    pub p: f64,
    pub seed: u64,
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

/// `(E‖Σ ε_j T_j x_j‖^p)^{1/p} / (E‖Σ ε_j x_j‖^p)^{1/p}`; a lower estimate
/// of the R-bound of `{T_j}`.
pub fn rbound_estimate(sample: &RBoundSample, p: f64) -> Result<RBoundReport> {
    sample.validate()?;
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::invalid("multiplier", format!("exponent p = {p} must be finite and at least 1")));
    }
    let images: Vec<Vec3> = sample
        .operators
        .iter()
        .zip(&sample.vectors)
        .map(|(t, x)| t.mul_vec(x))
        .collect();
    let denominator = rademacher_norm(&sample.vectors, p, sample.n_draws, sample.seed);
    if denominator < DENOMINATOR_FLOOR {
        return Err(Error::DegenerateDenominator { value: denominator });
    }
    let numerator = rademacher_norm(&images, p, sample.n_draws, sample.seed);
    Ok(RBoundReport {
        n: images.len(),
        n_draws: sample.n_draws,
        p,
        seed: sample.seed,
        numerator,
        denominator,
        ratio: numerator / denominator,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FamilyRBound {
    pub ratio: f64,
    pub argmax: Vec<usize>,
    pub n_tuples: usize,
}

pub const MAX_TUPLES: usize = 100_000;

/// Largest estimate over every assignment of family members to the slots
/// `x_1, …, x_N` (shared signs across assignments).
pub fn family_rbound(family: &[Mat3], vectors: &[Vec3], p: f64, n_draws: usize, seed: u64) -> Result<FamilyRBound> {
    let slots = vectors.len();
    let n_tuples = family
        .len()
        .checked_pow(slots as u32)
        .filter(|&n| n <= MAX_TUPLES && n > 0)
        .ok_or_else(|| Error::invalid("multiplier", "family too large for exhaustive enumeration"))?;
    let mut best = FamilyRBound {
        ratio: 0.0,
        argmax: Vec::new(),
        n_tuples,
    };
    for t in 0..n_tuples {
        let mut rest = t;
        let tuple: Vec<usize> = (0..slots)
            .map(|_| {
                let i = rest % family.len();
                rest /= family.len();
                i
            })
            .collect();
        let sample = RBoundSample {
            operators: tuple.iter().map(|&i| family[i]).collect(),
            vectors: vectors.to_vec(),
            n_draws,
            seed,
        };
        let r = rbound_estimate(&sample, p)?;
        if r.ratio > best.ratio {
            best.ratio = r.ratio;
            best.argmax = tuple;
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KahaneResult {
    pub ratio: f64,
    pub bound: f64,
    pub holds: bool,
}

/// Compare `‖Σ a_j ε_j x_j‖` with `2‖Σ b_j ε_j x_j‖` on seeded estimates.
pub fn kahane_check(a: &[C64], b: &[C64], x: &[Vec3], p: f64, n_draws: usize, seed: u64) -> Result<KahaneResult> {
    if a.len() != b.len() || a.len() != x.len() || a.is_empty() {
        return Err(Error::invalid("multiplier", "a, b and x must have equal nonzero length"));
    }
    if let Some(j) = (0..a.len()).find(|&j| a[j].norm() > b[j].norm()) {
        return Err(Error::PreconditionViolated(format!(
            "|a_{j}| = {} exceeds |b_{j}| = {}",
            a[j].norm(),
            b[j].norm()
        )));
    }
    if n_draws < MIN_DRAWS {
        return Err(Error::invalid("multiplier", format!("n_draws must be at least {MIN_DRAWS}")));
    }
    let weighted = |c: &[C64]| -> Vec<Vec3> { c.iter().zip(x).map(|(c, v)| v.map(|e| e * c)).collect() };
    let den = rademacher_norm(&weighted(b), p, n_draws, seed);
    if den < DENOMINATOR_FLOOR {
        return Err(Error::DegenerateDenominator { value: den });
    }
    let ratio = rademacher_norm(&weighted(a), p, n_draws, seed) / den;
    let bound = KAHANE_CONSTANT * KAHANE_SLACK;
    Ok(KahaneResult {
        ratio,
        bound,
        holds: ratio <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::symbol::{resolvent_sq, resolvent_sweep};

    fn scalar_map(f: impl Fn(i64) -> f64, range: std::ops::RangeInclusive<i64>) -> BTreeMap<Vec<i64>, f64> {
        range.map(|k| (vec![k], f(k))).collect()
    }

    #[test]
    fn difference_of_constant_and_linear_maps() {
        let c = scalar_map(|_| 3.0, -5..=5);
        assert!(discrete_difference(&c, &[1]).unwrap().values().all(|&v| v == 0.0));
        let lin = scalar_map(|k| k as f64, -5..=5);
        let d = discrete_difference(&lin, &[1]).unwrap();
        assert_eq!(d.len(), 10);
        assert!(d.values().all(|&v| v == 1.0));
        assert_eq!(discrete_difference(&lin, &[0]).unwrap(), lin);
    }

    #[test]
    fn difference_of_reciprocal() {
        let m = scalar_map(|k| 1.0 / k as f64, 1..=100);
        let d = discrete_difference(&m, &[1]).unwrap();
        for k in 2..=100i64 {
            let v = d[&vec![k]];
            let kf = k as f64;
            assert!((v + 1.0 / (kf * (kf - 1.0))).abs() < 1e-15);
            // mean value theorem: |kΔm(k)| ≤ k/η² for η ∈ (k−1, k)
            assert!((kf * v).abs() <= kf / ((kf - 1.0) * (kf - 1.0)));
        }
    }

    #[test]
    fn mixed_differences_in_two_indices() {
        let mut m = BTreeMap::new();
        for i in -3..=3i64 {
            for j in -3..=3i64 {
                m.insert(vec![i, j], (i * i * j) as f64);
            }
        }
        // Δ₁Δ₂(i²j) = i² − (i−1)² = 2i − 1
        let d = discrete_difference(&m, &[1, 1]).unwrap();
        for (k, v) in &d {
            assert_eq!(*v, (2 * k[0] - 1) as f64);
        }
        assert!(matches!(
            difference_at(&m, &[-3, 0], &[1, 0]),
            Err(Error::MissingIndex { index }) if index == vec![-4, 0]
        ));
        let lone: BTreeMap<Vec<i64>, f64> = [(vec![0], 1.0)].into();
        assert!(matches!(discrete_difference(&lone, &[1]), Err(Error::MissingIndex { .. })));
    }

    #[test]
    fn matrix_valued_differences() {
        let mut m = BTreeMap::new();
        for k in 2..=6i64 {
            m.insert(vec![k], resolvent_sq(C64::new(1.0, 0.5), (k * k) as f64).unwrap());
        }
        let d = discrete_difference(&m, &[1]).unwrap();
        let direct = m[&vec![5]] - m[&vec![4]];
        assert_eq!(d[&vec![5]], direct);
    }

    fn small(family: SymbolFamily) -> MichlinSweep {
        let mut s = MichlinSweep::new(family);
        s.lambdas.n_radii = 6;
        s.lambdas.n_angles = 5;
        s.n_xi = 6;
        s.k_max = 4;
        s
    }

    #[test]
    fn zero_order_kappa_matches_resolvent_sweep() {
        let spec = small(SymbolFamily::Kappa { alpha: vec![0, 0] });
        let table = michlin_sweep(&spec).unwrap();
        let lambdas = spec.lambdas.points();
        let mut s_values = Vec::new();
        for x in log_space(spec.xi_lo, spec.xi_hi, spec.n_xi) {
            for k in -spec.k_max..=spec.k_max {
                s_values.push(x * x + (k * k) as f64);
            }
        }
        let sweep = resolvent_sweep(&lambdas, &s_values).unwrap();
        let expected = sweep.iter().map(|s| s.resolvent_norm).fold(0.0, f64::max);
        let got = table.row(&[0, 0]).unwrap().sup;
        assert!((got - expected).abs() <= 1e-12 * expected, "{got} {expected}");
    }

    #[test]
    fn xi_derivative_of_xi_independent_symbol_vanishes() {
        let spec = small(SymbolFamily::Kappa { alpha: vec![0, 0] });
        let k_only = |l: C64, z: &[f64]| Ok(vec![kappa(l, &z[1..], &[0])?]);
        let table = michlin_sweep_with(&spec, &["k_only".into()], true, &k_only).unwrap().remove(0);
        assert_eq!(table.row(&[1, 0]).unwrap().sup, 0.0);
        assert_eq!(table.row(&[1, 1]).unwrap().sup, 0.0);
        assert!(table.row(&[0, 1]).unwrap().sup > 0.0);
    }

    #[test]
    fn richardson_derivative_is_accurate() {
        // d/dξ (λ + ξ²M)⁻¹ = −2ξ R M R
        let family = SymbolFamily::Kappa { alpha: vec![0] };
        let lambda = C64::new(0.7, 0.4);
        let xi = 1.3;
        let eval = |l: C64, z: &[f64]| Ok(vec![family.eval(l, z)?]);
        let (v, corr) = michlin_point(&eval, lambda, &[xi], &[], &[1], 1e-2).unwrap()[0];
        let r = resolvent_sq(lambda, xi * xi).unwrap();
        let m = crate::symbol::CouplingMatrix.as_mat3();
        let exact = (r * m * r).scale_real(-2.0 * xi * xi).scale(lambda).op_norm();
        assert!((v - exact).abs() < 1e-7 * exact, "{v} {exact}");
        assert!(corr < 1e-4 * exact);
    }

    #[test]
    fn batched_sweep_matches_single_sweeps() {
        let alphas = [vec![0, 0], vec![1, 0], vec![0, 2]];
        let specs: Vec<MichlinSweep> = alphas
            .iter()
            .map(|a| small(SymbolFamily::Kappa { alpha: a.clone() }))
            .collect();
        let batch = michlin_sweeps(&specs).unwrap();
        for (spec, table) in specs.iter().zip(&batch) {
            assert_eq!(&michlin_sweep(spec).unwrap(), table);
        }
        let mut other = specs[1].clone();
        other.n_xi += 1;
        assert!(michlin_sweeps(&[specs[0].clone(), other]).is_err());
    }

    #[test]
    fn symmetric_sampling_preserves_sups() {
        for alpha in [vec![1, 0], vec![0, 2]] {
            let mut full = small(SymbolFamily::Kappa { alpha });
            full.symmetric = false;
            let half = MichlinSweep { symmetric: true, ..full.clone() };
            let (a, b) = (michlin_sweep(&full).unwrap(), michlin_sweep(&half).unwrap());
            assert!(b.n_lambda < a.n_lambda);
            for (x, y) in a.rows.iter().zip(&b.rows) {
                assert!((x.sup - y.sup).abs() <= 1e-12 * x.sup, "{:?} {} {}", x.gamma, x.sup, y.sup);
            }
        }
    }

    #[test]
    fn calculus_sup_is_linear_in_f() {
        let f = TestFunction::rho();
        let mut spec = small(SymbolFamily::Calculus { f });
        spec.n_xi = 4;
        spec.k_max = 3;
        let one = michlin_sweep(&spec).unwrap();
        spec.family = SymbolFamily::Calculus { f: f.scaled(2.0) };
        let two = michlin_sweep(&spec).unwrap();
        assert_eq!(one.n_lambda, 1);
        for (a, b) in one.rows.iter().zip(&two.rows) {
            assert!((b.sup - 2.0 * a.sup).abs() <= 1e-9 * b.sup, "{:?} {} {}", a.gamma, a.sup, b.sup);
        }
    }

    #[test]
    fn kappa_sups_invariant_under_quasi_homogeneous_rescaling() {
        let r = 2.0;
        let mut base = small(SymbolFamily::Kappa { alpha: vec![1, 1] });
        base.n2 = 0;
        base.n1 = 2;
        base.family = SymbolFamily::Kappa { alpha: vec![1, 1] };
        let mut scaled = base.clone();
        scaled.xi_lo *= r;
        scaled.xi_hi *= r;
        scaled.lambdas.r_lo *= r * r;
        scaled.lambdas.r_hi *= r * r;
        let a = michlin_sweep(&base).unwrap();
        let b = michlin_sweep(&scaled).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert!((x.sup - y.sup).abs() <= 1e-8 * x.sup.max(1.0), "{:?} {} {}", x.gamma, x.sup, y.sup);
        }
    }

    #[test]
    fn mean_value_bound_for_kappa() {
        // |kΔ_k κ(k)| ≤ sup_{η ∈ [k−1,k]} |η ∂_η κ(η)| · k/(k−1)
        let family = SymbolFamily::Kappa { alpha: vec![1, 0] };
        let lambda = C64::from_polar(3.0, 1.2);
        let xi = 0.8;
        let eval = |l: C64, z: &[f64]| Ok(vec![family.eval(l, z)?]);
        for k in 2..=12 {
            let kf = k as f64;
            let lhs = michlin_point(&eval, lambda, &[xi], &[kf], &[0, 1], 0.01).unwrap()[0].0;
            let cell_sup = (0..=64)
                .map(|i| {
                    let eta = kf - 1.0 + i as f64 / 64.0;
                    let d = mixed_difference(&eval, lambda, &[xi, eta], &[], &[0, 1], 1e-4).unwrap()[0];
                    eta * d.op_norm()
                })
                .fold(0.0, f64::max);
            assert!(lhs <= cell_sup * kf / (kf - 1.0) * (1.0 + 1e-6), "{k} {lhs} {cell_sup}");
        }
    }

    #[test]
    fn non_finite_symbol_is_reported() {
        let family = SymbolFamily::Calculus { f: TestFunction::rho() };
        assert!(family.eval(C64::new(1.0, 0.0), &[0.0, 0.0]).is_err());
        let k = SymbolFamily::Kappa { alpha: vec![0] };
        assert!(matches!(
            k.eval(C64::new(f64::NAN, 0.0), &[1.0]),
            Err(Error::NonFiniteValue { .. }) | Err(Error::SingularResolvent { .. })
        ));
    }

    fn random_vectors(n: usize, seed: u64) -> Vec<Vec3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [0; 3].map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))))
            .collect()
    }

    #[test]
    fn single_operator_ratio_is_exact() {
        let t = resolvent_sq(C64::new(1.0, 2.0), 3.0).unwrap();
        let x = random_vectors(1, 3);
        let rep = rbound_estimate(
            &RBoundSample {
                operators: vec![t],
                vectors: x.clone(),
                n_draws: 100,
                seed: 5,
            },
            2.0,
        )
        .unwrap();
        let exact = vec_norm(&t.mul_vec(&x[0])) / vec_norm(&x[0]);
        assert!((rep.ratio - exact).abs() < 1e-14 * exact);
    }

    #[test]
    fn scalar_contractions_stay_below_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..50 {
            let n = 6;
            let ops: Vec<Mat3> = (0..n)
                .map(|_| Mat3::identity().scale(C64::from_polar(rng.gen_range(0.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU))))
                .collect();
            let rep = rbound_estimate(
                &RBoundSample {
                    operators: ops,
                    vectors: random_vectors(n, trial),
                    n_draws: 200,
                    seed: trial,
                },
                2.0,
            )
            .unwrap();
            assert!(rep.ratio <= 2.0, "{}", rep.ratio);
        }
    }

    #[test]
    fn estimates_are_reproducible_and_validated() {
        let x = random_vectors(4, 1);
        let ops = vec![Mat3::identity(); 4];
        let s = RBoundSample {
            operators: ops.clone(),
            vectors: x.clone(),
            n_draws: 150,
            seed: 9,
        };
        assert_eq!(rbound_estimate(&s, 2.0).unwrap(), rbound_estimate(&s, 2.0).unwrap());
        let few = RBoundSample { n_draws: 10, ..s.clone() };
        assert!(rbound_estimate(&few, 2.0).is_err());
        let zero = RBoundSample {
            vectors: vec![[ZERO; 3]; 4],
            ..s
        };
        assert!(matches!(rbound_estimate(&zero, 2.0), Err(Error::DegenerateDenominator { .. })));
    }

    #[test]
    fn family_estimate_is_monotone_under_enlargement() {
        let lambdas = sector_samples(spectral_angle() + 0.05, 3, 3, 0.1, 10.0);
        let family: Vec<Mat3> = lambdas
            .iter()
            .enumerate()
            .map(|(i, &l)| resolvent_sq(l, 1.0 + i as f64).unwrap().scale(l))
            .collect();
        let x = random_vectors(2, 4);
        let mut last = 0.0;
        for size in 1..=family.len() {
            let r = family_rbound(&family[..size], &x, 2.0, 128, 7).unwrap();
            assert!(r.ratio >= last);
            last = r.ratio;
        }
    }

    #[test]
    fn kahane_trivial_cases_and_precondition() {
        let x = random_vectors(5, 2);
        let b: Vec<C64> = (0..5).map(|j| C64::new(1.0 + j as f64, 0.5)).collect();
        let same = kahane_check(&b, &b, &x, 2.0, 100, 1).unwrap();
        assert!((same.ratio - 1.0).abs() < 1e-14 && same.holds);
        let zero = kahane_check(&[ZERO; 5], &b, &x, 2.0, 100, 1).unwrap();
        assert_eq!(zero.ratio, 0.0);
        let mut big = b.clone();
        big[2] *= 1.5;
        assert!(matches!(
            kahane_check(&big, &b, &x, 2.0, 100, 1),
            Err(Error::PreconditionViolated(_))
        ));
    }
}
