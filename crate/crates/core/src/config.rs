//! Run configuration: one JSON object with a section per module.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::DomainSpec;
use crate::linear::TimeGrid;
use crate::multiplier::LambdaSamples;
use crate::nonlinear::NonlinearConfig;
use crate::scenarios::FieldSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default = "default_domain")]
    pub domain: DomainSpec,
    #[serde(default)]
    pub time: TimeConfig,
    #[serde(default = "default_nonlinear")]
    pub nonlinear: NonlinearConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub rng: RngConfig,
    #[serde(default)]
    pub data: DataConfig,
}

fn default_domain() -> DomainSpec {
    DomainSpec::box_domain(2, 32)
}

fn default_nonlinear() -> NonlinearConfig {
    NonlinearConfig::new(1.0)
}

impl Default for Config {
    fn default() -> Self {
        Config {
            domain: default_domain(),
            time: TimeConfig::default(),
            nonlinear: default_nonlinear(),
            sweep: SweepConfig::default(),
            rng: RngConfig::default(),
            data: DataConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_end: f64,
    pub n_steps: usize,
    /// Write every `output_stride`-th node to `trajectory.csv`.
    #[serde(default = "default_stride")]
    pub output_stride: usize,
}

fn default_stride() -> usize {
    10
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig {
            t_end: 0.1,
            n_steps: 100,
            output_stride: default_stride(),
        }
    }
}

impl TimeConfig {
    pub fn grid(&self) -> TimeGrid {
        TimeGrid {
            t_end: self.t_end,
            n_steps: self.n_steps,
        }
    }
}

/// Sample plans for the symbol and multiplier checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub lambdas: LambdaSamples,
    /// `|ζ|²` samples for the resolvent sweep, log-spaced over `[1e-3, 1e3]`.
    pub n_zeta: usize,
    pub kappa_n_xi: usize,
    pub kappa_k_max: i64,
    pub calculus_n_xi: usize,
    pub calculus_k_max: i64,
    pub rel_step: f64,
    pub n_draws: usize,
    pub kahane_trials: usize,
    pub p: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            lambdas: LambdaSamples::default(),
            n_zeta: 400,
            kappa_n_xi: 16,
            kappa_k_max: 32,
            calculus_n_xi: 16,
            calculus_k_max: 8,
            rel_step: 1e-2,
            n_draws: 200,
            kahane_trials: 1000,
            p: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RngConfig {
    pub seed: u64,
}

impl Default for RngConfig {
    fn default() -> Self {
        RngConfig { seed: 20_240_611 }
    }
}

/// Initial data and forcing for the solve commands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub initial: FieldSpec,
    /// Constant-in-time forcing.
    pub forcing: FieldSpec,
    /// Exponent of the `L^p` norms in `solve_report.json`.
    pub p: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            initial: FieldSpec::LowModes {
                amplitude: 0.01,
                max_zeta_sq: 5.0,
            },
            forcing: FieldSpec::Zero {},
            p: 2.0,
        }
    }
}

fn section(name: &str, r: Result<()>) -> Result<()> {
    r.map_err(|e| match e {
        Error::ConfigInvalid(m) => Error::ConfigInvalid(m),
        other => Error::ConfigInvalid(format!("{name}: {other}")),
    })
}

impl Config {
    pub fn load(path: &Path) -> Result<Config> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::ConfigInvalid(m) => Error::ConfigInvalid(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Config> {
        let cfg: Config = serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        section("domain", self.domain.validate())?;
        section("time", self.time.grid().validate())?;
        if self.time.output_stride == 0 {
            return Err(Error::ConfigInvalid("time: output_stride must be at least 1".into()));
        }
        section("nonlinear", self.nonlinear.validate())?;
        let s = &self.sweep;
        if s.n_zeta == 0 || s.kappa_n_xi == 0 || s.calculus_n_xi == 0 || s.kahane_trials == 0 {
            return Err(Error::ConfigInvalid("sweep: sample counts must be positive".into()));
        }
        if s.kappa_k_max < 2 || s.calculus_k_max < 2 {
            return Err(Error::ConfigInvalid("sweep: k ranges must reach at least 2".into()));
        }
        if s.n_draws < crate::multiplier::MIN_DRAWS {
            return Err(Error::ConfigInvalid(format!(
                "sweep: n_draws must be at least {}",
                crate::multiplier::MIN_DRAWS
            )));
        }
        if !(s.p >= 1.0 && s.p.is_finite()) || !(s.rel_step > 0.0 && s.rel_step < 0.5) {
            return Err(Error::ConfigInvalid("sweep: need p ≥ 1 and rel_step in (0, 0.5)".into()));
        }
        if s.lambdas.n_radii == 0 || s.lambdas.n_angles == 0 || !(s.lambdas.r_lo > 0.0 && s.lambdas.r_hi > s.lambdas.r_lo) {
            return Err(Error::ConfigInvalid("sweep: invalid lambda sample plan".into()));
        }
        section("data", self.data.initial.validate())?;
        section("data", self.data.forcing.validate())?;
        if !(self.data.p > 1.0 && self.data.p.is_finite()) {
            return Err(Error::ConfigInvalid("data: p must lie in (1, ∞)".into()));
        }
        Ok(())
    }
}
