//! Seeded initial data and forcing fields.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CoeffField, Grid};
use crate::linalg::{Vec3, C64};

/// Generator for trial `index` of a seeded experiment.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Point of `Σ_{π−φ}` with log-uniform radius in `[1e-3, 1e3]`.
pub fn sector_point(rng: &mut impl Rng, phi: f64) -> C64 {
    let r = 10f64.powf(rng.gen_range(-3.0..3.0));
    let half = PI - phi;
    C64::from_polar(r, rng.gen_range(-half..half))
}

/// Entries uniform in the unit square of `ℂ`.
pub fn complex_vec3(rng: &mut impl Rng) -> Vec3 {
    [0, 1, 2].map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

/// Uniform real coefficients in `[−amp, amp]` on modes with `|ζ|² ≤ s_max`.
pub fn low_modes(grid: &Grid, rng: &mut impl Rng, s_max: f64, amp: f64) -> CoeffField {
    let mut u = CoeffField::zeros(grid);
    for (m, &s) in grid.zeta_sq().iter().enumerate() {
        if s <= s_max {
            u.set_mode(m, [0, 1, 2].map(|_| C64::new(amp * rng.gen_range(-1.0..1.0), 0.0)));
        }
    }
    u
}

/// Uniform real coefficients on every mode, damped by `(1 + |ζ|²)^{−decay/2}`.
pub fn rough(grid: &Grid, rng: &mut impl Rng, amp: f64, decay: f64) -> CoeffField {
    let mut u = CoeffField::zeros(grid);
    for (m, &s) in grid.zeta_sq().iter().enumerate() {
        let w = amp * (1.0 + s).powf(-0.5 * decay);
        u.set_mode(m, [0, 1, 2].map(|_| C64::new(w * rng.gen_range(-1.0..1.0), 0.0)));
    }
    u
}

/// `values` on the mode with the given labels, zero elsewhere.
pub fn single_mode(grid: &Grid, labels: &[i64], values: [f64; 3]) -> Result<CoeffField> {
    let m = grid
        .find_mode(labels)
        .ok_or_else(|| Error::invalid("scenarios", format!("mode {labels:?} not on the grid")))?;
    let mut u = CoeffField::zeros(grid);
    u.set_mode(m, values.map(|v| C64::new(v, 0.0)));
    Ok(u)
}

/// Field description used by configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero {},
    LowModes { amplitude: f64, max_zeta_sq: f64 },
    Rough { amplitude: f64, decay: f64 },
    SingleMode { labels: Vec<i64>, values: [f64; 3] },
}

impl FieldSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = |x: f64| x.is_finite();
        let ok = match self {
            FieldSpec::Zero {} => true,
            FieldSpec::LowModes { amplitude, max_zeta_sq } => finite(*amplitude) && finite(*max_zeta_sq),
            FieldSpec::Rough { amplitude, decay } => finite(*amplitude) && finite(*decay),
            FieldSpec::SingleMode { values, .. } => values.iter().all(|v| v.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid("scenarios", "field parameters must be finite"))
        }
    }

    pub fn build(&self, grid: &Grid, rng: &mut impl Rng) -> Result<CoeffField> {
        self.validate()?;
        Ok(match self {
            FieldSpec::Zero {} => CoeffField::zeros(grid),
            FieldSpec::LowModes { amplitude, max_zeta_sq } => low_modes(grid, rng, *max_zeta_sq, *amplitude),
            FieldSpec::Rough { amplitude, decay } => rough(grid, rng, *amplitude, *decay),
            FieldSpec::SingleMode { labels, values } => single_mode(grid, labels, *values)?,
        })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, FieldSpec::Zero {})
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainSpec;

    fn grid() -> Grid {
        Grid::from_domain(&DomainSpec::box_domain(2, 8)).unwrap()
    }

    #[test]
    fn low_modes_respects_band() {
        let g = grid();
        let u = low_modes(&g, &mut trial_rng(1, 0), 5.0, 0.1);
        for (m, &s) in g.zeta_sq().iter().enumerate() {
            let n = crate::linalg::vec_norm(&u.mode(m));
            assert!(if s > 5.0 { n == 0.0 } else { n <= 0.1 * 3f64.sqrt() });
        }
    }

    #[test]
    fn trials_are_independent_and_reproducible() {
        let g = grid();
        let a = rough(&g, &mut trial_rng(7, 3), 1.0, 1.0);
        let b = rough(&g, &mut trial_rng(7, 3), 1.0, 1.0);
        let c = rough(&g, &mut trial_rng(7, 4), 1.0, 1.0);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn spec_round_trip_and_errors() {
        let s: FieldSpec = serde_json::from_str(r#"{"kind":"single_mode","labels":[1,2],"values":[1,0,0]}"#).unwrap();
        let u = s.build(&grid(), &mut trial_rng(0, 0)).unwrap();
        assert_eq!(u.max_abs(), 1.0);
        let missing = FieldSpec::SingleMode {
            labels: vec![40, 1],
            values: [1.0, 0.0, 0.0],
        };
        assert!(missing.build(&grid(), &mut trial_rng(0, 0)).is_err());
        assert!(serde_json::from_str::<FieldSpec>(r#"{"kind":"zero","extra":1}"#).is_err());
    }
}
