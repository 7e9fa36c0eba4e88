//! The cubic term `Φ(U) = −aΔ(0, U₁³, 0)ᵀ` and a whole-trajectory Picard
//! iteration on the Duhamel formula with contraction monitoring and window
//! shrinking.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtransform;
use crate::error::{Error, Result};
use crate::grid::{CoeffField, Grid};
use crate::linalg::{vec_norm, C64, ZERO};
use crate::linear::{apply_a, heat_dissipation, time_lp, Forcing, LinearPropagator, LinearSolution, TimeGrid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearConfig {
    pub a: f64,
    #[serde(default = "default_max_iters")]
    pub max_picard_iters: usize,
    /// Stop once the increment falls below this fraction of `‖U‖_MR`.
    #[serde(default = "default_tol")]
    pub contraction_tol: f64,
    #[serde(default = "default_dealias")]
    pub dealias_factor: usize,
    #[serde(default = "default_shrink")]
    pub shrink_factor: f64,
    /// A ratio above `1 − stall_margin` counts toward a stall.
    #[serde(default = "default_stall_margin")]
    pub stall_margin: f64,
    #[serde(default = "default_stall_count")]
    pub stall_count: usize,
}

fn default_max_iters() -> usize {
    60
}

fn default_tol() -> f64 {
    1e-12
}

fn default_dealias() -> usize {
    2
}

fn default_shrink() -> f64 {
    0.5
}

fn default_stall_margin() -> f64 {
    0.05
}

fn default_stall_count() -> usize {
    3
}

impl NonlinearConfig {
    pub fn new(a: f64) -> Self {
        NonlinearConfig {
            a,
            max_picard_iters: default_max_iters(),
            contraction_tol: default_tol(),
            dealias_factor: default_dealias(),
            shrink_factor: default_shrink(),
            stall_margin: default_stall_margin(),
            stall_count: default_stall_count(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigInvalid(format!("nonlinear: {m}")));
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return bad(format!("a = {} must be a nonnegative finite number", self.a));
        }
        if self.dealias_factor < 2 {
            return bad(format!("dealias_factor = {} must be at least 2", self.dealias_factor));
        }
        if !(self.shrink_factor > 0.0 && self.shrink_factor < 1.0) {
            return bad(format!("shrink_factor = {} must lie in (0,1)", self.shrink_factor));
        }
        if !(self.contraction_tol > 0.0) || self.max_picard_iters == 0 {
            return bad("contraction_tol and max_picard_iters must be positive".into());
        }
        if !(self.stall_margin > 0.0 && self.stall_margin < 1.0) || self.stall_count == 0 {
            return bad("stall_margin must lie in (0,1) and stall_count be positive".into());
        }
        Ok(())
    }
}

/// Pseudospectral evaluation of `Φ` on a fixed grid, cubing on the grid
/// refined by the dealiasing factor.
#[derive(Clone, Debug)]
pub struct CubicTerm {
    pub grid: Grid,
    pub fine: Grid,
    pub a: f64,
}

impl CubicTerm {
    pub fn new(grid: &Grid, a: f64, dealias_factor: usize) -> Result<Self> {
        if dealias_factor < 2 {
            return Err(Error::invalid("nonlinear", "cubic dealiasing needs a factor of at least 2"));
        }
        Ok(CubicTerm {
            grid: grid.clone(),
            fine: grid.refined(dealias_factor)?,
            a,
        })
    }

    /// Coefficients of `U₁³` on the base grid.
    pub fn cube(&self, u1: &[C64]) -> Result<Vec<C64>> {
        let padded = self.grid.pad_to(u1, &self.fine);
        let vals = self.fine.inverse_complex(&padded)?;
        let cubed: Vec<C64> = vals.iter().map(|v| v * v * v).collect();
        let coeffs = self.fine.forward_complex(&cubed)?;
        Ok(self.grid.truncate_from(&coeffs, &self.fine))
    }

    pub fn apply(&self, u: &CoeffField) -> Result<CoeffField> {
        u.check(&self.grid)?;
        let mut out = CoeffField::zeros(&self.grid);
        if self.a == 0.0 {
            return Ok(out);
        }
        let c = self.cube(&u.comps[0])?;
        out.comps[1] = c
            .iter()
            .zip(self.grid.zeta_sq())
            .map(|(v, &s)| v * (self.a * s))
            .collect();
        Ok(out)
    }

    /// `∫ U₁⁴`, exact for band-limited `U₁` on the refined grid.
    pub fn quartic_integral(&self, u1: &[C64]) -> Result<f64> {
        let padded = self.grid.pad_to(u1, &self.fine);
        let vals = self.fine.inverse_complex(&padded)?;
        Ok(self.fine.cell_volume() * vals.iter().map(|v| v.norm_sqr().powi(2)).sum::<f64>())
    }
}

/// `Φ(U)` with a fresh dealiasing grid.
pub fn phi(grid: &Grid, u: &CoeffField, a: f64, dealias_factor: usize) -> Result<CoeffField> {
    CubicTerm::new(grid, a, dealias_factor)?.apply(u)
}

/// One Picard sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardIterate {
    pub window: f64,
    pub n_steps: usize,
    pub iteration: usize,
    /// `‖U^{k+1} − U^k‖_MR`.
    pub increment: f64,
    /// `increment / ‖U^{k+1}‖_MR`.
    pub relative_increment: f64,
    /// Ratio of consecutive increments (absent on the first sweep).
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PicardTrace {
    pub iterates: Vec<PicardIterate>,
    pub shrinks: usize,
    pub converged: bool,
    pub final_window: f64,
}

impl PicardTrace {
    /// Ratios recorded on the final (accepted) window.
    pub fn final_ratios(&self) -> Vec<f64> {
        let w = self.final_window;
        self.iterates
            .iter()
            .filter(|it| it.window == w)
            .filter_map(|it| it.ratio)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct PicardResult {
    pub time: TimeGrid,
    pub solution: LinearSolution,
    /// `Φ(U) + G` at the nodes of the returned trajectory.
    pub forcing: Vec<CoeffField>,
    pub trace: PicardTrace,
}

/// Discrete `MR₂` norm `(∫ ‖D‖² + ‖D_t‖² + ‖AD‖² dt)^{1/2}` with Parseval in
/// space and the trapezoid rule in time.
pub fn mr_norm(grid: &Grid, states: &[CoeffField], derivs: &[CoeffField], dt: f64) -> f64 {
    let per_node: Vec<f64> = states
        .iter()
        .zip(derivs)
        .map(|(d, dd)| {
            let ad = apply_a(grid, d);
            (d.l2_norm(grid).powi(2) + dd.l2_norm(grid).powi(2) + ad.l2_norm(grid).powi(2)).sqrt()
        })
        .collect();
    time_lp(&per_node, dt, 2.0)
}

fn derivatives(grid: &Grid, states: &[CoeffField], forcing: &[CoeffField]) -> Vec<CoeffField> {
    states
        .iter()
        .zip(forcing)
        .map(|(u, f)| f.sub(&apply_a(grid, u)))
        .collect()
}

fn total_forcing(cubic: &CubicTerm, states: &[CoeffField], extra: Option<&[CoeffField]>) -> Result<Vec<CoeffField>> {
    let phis: Vec<Result<CoeffField>> = states.par_iter().map(|u| cubic.apply(u)).collect();
    phis.into_iter()
        .enumerate()
        .map(|(n, p)| {
            let p = p?;
            Ok(match extra {
                Some(g) => p.add(&g[n]),
                None => p,
            })
        })
        .collect()
}

enum Attempt {
    Converged(LinearSolution, Vec<CoeffField>),
    Stalled,
}

/// Solve `U_t + AU = Φ(U) + G`, `U(0) = U₀` by iterating the Duhamel map on
/// whole trajectories. `extra` is an optional forcing `G` sampled on the nodes
/// of `time`; it is truncated along with the window.
pub fn picard_solve(
    grid: &Grid,
    u0: &CoeffField,
    cfg: &NonlinearConfig,
    time: &TimeGrid,
    extra: Option<&[CoeffField]>,
) -> Result<PicardResult> {
    cfg.validate()?;
    time.validate()?;
    u0.check(grid)?;
    if !u0.is_finite() {
        return Err(Error::invalid("nonlinear", "initial data is not finite"));
    }
    if let Some(g) = extra {
        if g.len() != time.n_steps + 1 {
            return Err(Error::shape("nonlinear", &[time.n_steps + 1], &[g.len()]));
        }
    }
    let cubic = CubicTerm::new(grid, cfg.a, cfg.dealias_factor)?;
    let dt = time.dt();
    let mut n_steps = time.n_steps;
    let mut trace = PicardTrace::default();
    loop {
        let window = TimeGrid {
            t_end: if n_steps == time.n_steps { time.t_end } else { n_steps as f64 * dt },
            n_steps,
        };
        trace.final_window = window.t_end;
        let g = extra.map(|g| &g[..=n_steps]);
        match picard_attempt(grid, u0, cfg, &cubic, &window, g, &mut trace)? {
            Attempt::Converged(solution, forcing) => {
                trace.converged = true;
                return Ok(PicardResult {
                    time: window,
                    solution,
                    forcing,
                    trace,
                });
            }
            Attempt::Stalled => {
                trace.shrinks += 1;
                let next = (n_steps as f64 * cfg.shrink_factor).floor() as usize;
                if next < 1 {
                    return Err(Error::NoConvergence {
                        trace: Box::new(trace),
                    });
                }
                n_steps = next;
            }
        }
    }
}

fn picard_attempt(
    grid: &Grid,
    u0: &CoeffField,
    cfg: &NonlinearConfig,
    cubic: &CubicTerm,
    window: &TimeGrid,
    extra: Option<&[CoeffField]>,
    trace: &mut PicardTrace,
) -> Result<Attempt> {
    let prop = LinearPropagator::new(grid, window)?;
    let dt = window.dt();
    let base_forcing: Vec<CoeffField> = match extra {
        Some(g) => g.to_vec(),
        None => vec![CoeffField::zeros(grid); window.n_steps + 1],
    };
    let mut prev_forcing = base_forcing.clone();
    let mut current = prop.solve(u0, &Forcing::Samples(base_forcing))?;
    let mut prev_inc: Option<f64> = None;
    let mut stalls = 0;
    for k in 0..cfg.max_picard_iters {
        let forcing = total_forcing(cubic, &current.states, extra)?;
        let next = prop.solve(u0, &Forcing::Samples(forcing.clone()))?;
        let d: Vec<CoeffField> = next
            .states
            .iter()
            .zip(&current.states)
            .map(|(a, b)| a.sub(b))
            .collect();
        let df: Vec<CoeffField> = forcing.iter().zip(&prev_forcing).map(|(a, b)| a.sub(b)).collect();
        let inc = mr_norm(grid, &d, &derivatives(grid, &d, &df), dt);
        let size = mr_norm(grid, &next.states, &derivatives(grid, &next.states, &forcing), dt);
        let ratio = prev_inc.map(|p| if p > 0.0 { inc / p } else { 0.0 });
        let relative = if size > 0.0 { inc / size } else { inc };
        trace.iterates.push(PicardIterate {
            window: window.t_end,
            n_steps: window.n_steps,
            iteration: k + 1,
            increment: inc,
            relative_increment: relative,
            ratio,
        });
        if !inc.is_finite() || !size.is_finite() {
            return Ok(Attempt::Stalled);
        }
        if inc <= cfg.contraction_tol * size {
            // the returned forcing must match the returned trajectory
            let forcing = total_forcing(cubic, &next.states, extra)?;
            return Ok(Attempt::Converged(next, forcing));
        }
        if ratio.is_some_and(|r| r > 1.0 - cfg.stall_margin) {
            stalls += 1;
            if stalls >= cfg.stall_count {
                return Ok(Attempt::Stalled);
            }
        } else {
            stalls = 0;
        }
        prev_inc = Some(inc);
        prev_forcing = forcing;
        current = next;
    }
    Ok(Attempt::Stalled)
}

/// `‖U − 𝒟(U)‖_MR / ‖U‖_MR` where `𝒟` is one Duhamel sweep with forcing
/// `Φ(U) + G`.
pub fn duhamel_defect(grid: &Grid, u0: &CoeffField, cfg: &NonlinearConfig, result: &PicardResult, extra: Option<&[CoeffField]>) -> Result<f64> {
    let cubic = CubicTerm::new(grid, cfg.a, cfg.dealias_factor)?;
    let g = extra.map(|g| &g[..=result.time.n_steps]);
    let forcing = total_forcing(&cubic, &result.solution.states, g)?;
    let sweep = LinearPropagator::new(grid, &result.time)?.solve(u0, &Forcing::Samples(forcing.clone()))?;
    let dt = result.time.dt();
    let d: Vec<CoeffField> = sweep
        .states
        .iter()
        .zip(&result.solution.states)
        .map(|(a, b)| a.sub(b))
        .collect();
    let zero = vec![CoeffField::zeros(grid); d.len()];
    let defect = mr_norm(grid, &d, &derivatives(grid, &d, &zero), dt);
    let size = mr_norm(grid, &result.solution.states, &derivatives(grid, &result.solution.states, &forcing), dt);
    Ok(if size > 0.0 { defect / size } else { defect })
}

/// Energy balance along a trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyReport {
    pub times: Vec<f64>,
    /// `½‖u_t‖² + ½‖Δu‖² + ½‖θ‖² + (a/4)‖Δu‖⁴_{L⁴}`
    pub energy: Vec<f64>,
    /// `−‖∇θ‖²`
    pub dissipation: Vec<f64>,
    /// `|dE/dt + ‖∇θ‖²|` by centered differences at interior nodes.
    pub residual: Vec<Option<f64>>,
}

impl EnergyReport {
    pub fn max_residual(&self) -> f64 {
        self.residual.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn is_nonincreasing(&self, rel_tol: f64) -> bool {
        let scale = self.energy.iter().copied().fold(0.0, f64::max);
        self.energy.windows(2).all(|w| w[1] <= w[0] + rel_tol * scale)
    }
}

pub fn energy_report(grid: &Grid, solution: &LinearSolution, a: f64, dealias_factor: usize) -> Result<EnergyReport> {
    let cubic = CubicTerm::new(grid, a, dealias_factor)?;
    let rows: Vec<Result<(f64, f64)>> = solution
        .states
        .par_iter()
        .map(|u| {
            let r = backtransform::recover(grid, u)?;
            let lap_u = grid.laplacian(&r.u);
            let l2 = |c: &[C64]| grid.l2_norm_coeffs(c).powi(2);
            let quartic = if a == 0.0 { 0.0 } else { cubic.quartic_integral(&lap_u)? };
            let e = 0.5 * (l2(&r.u_t) + l2(&lap_u) + l2(&r.theta)) + 0.25 * a * quartic;
            Ok((e, -heat_dissipation(grid, u)))
        })
        .collect();
    let mut energy = Vec::with_capacity(rows.len());
    let mut dissipation = Vec::with_capacity(rows.len());
    for r in rows {
        let (e, d) = r?;
        energy.push(e);
        dissipation.push(d);
    }
    let t = &solution.times;
    let n = energy.len();
    let residual = (0..n)
        .map(|i| {
            (i > 0 && i + 1 < n).then(|| {
                let de = (energy[i + 1] - energy[i - 1]) / (t[i + 1] - t[i - 1]);
                (de - dissipation[i]).abs()
            })
        })
        .collect();
    Ok(EnergyReport {
        times: t.clone(),
        energy,
        dissipation,
        residual,
    })
}

pub const NOISE_FLOOR: f64 = 1e-14;
pub const MIN_BAND: usize = 8;

/// Least-squares slope of `log‖Û(ζ)‖` against `|ζ|` over modes above the
/// noise floor.
pub fn analyticity_proxy(grid: &Grid, state: &CoeffField) -> Result<f64> {
    state.check(grid)?;
    let pts: Vec<(f64, f64)> = (0..grid.n_modes())
        .filter_map(|m| {
            let n = vec_norm(&state.mode(m));
            (n > NOISE_FLOOR).then(|| (grid.zeta_sq()[m].sqrt(), n.ln()))
        })
        .collect();
    if pts.len() < MIN_BAND {
        return Err(Error::InsufficientBand {
            found: pts.len(),
            needed: MIN_BAND,
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if den == 0.0 {
        return Err(Error::InsufficientBand {
            found: 1,
            needed: MIN_BAND,
        });
    }
    Ok(num / den)
}

/// State at the node nearest to `t_probe`.
pub fn state_at(solution: &LinearSolution, t_probe: f64) -> Result<&CoeffField> {
    let last = *solution.times.last().unwrap_or(&0.0);
    if !(t_probe > 0.0 && t_probe <= last) {
        return Err(Error::invalid(
            "nonlinear",
            format!("probe time {t_probe} outside (0, {last}]"),
        ));
    }
    let idx = solution
        .times
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - t_probe).abs().total_cmp(&(b.1 - t_probe).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok(&solution.states[idx])
}

/// Coefficients with every entry zero outside `|ζ|² ≤ s_max`.
pub fn band_limited(grid: &Grid, u: &CoeffField, s_max: f64) -> CoeffField {
    let mut out = u.clone();
    for (m, &s) in grid.zeta_sq().iter().enumerate() {
        if s > s_max {
            out.set_mode(m, [ZERO; 3]);
        }
    }
    out
}
