//! Acceptance suite: one deterministic check per criterion. Results carry
//! metrics only; wall-clock times are left to the caller.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use serde::Serialize;

use crate::backtransform::{residual_of_solution, OriginalForcing};
use crate::config::{Config, SweepConfig};
use crate::error::{Error, Result};
use crate::extension::{extend_coeffs, odd_extend, restrict, restrict_coeffs, ReflectionPlan};
use crate::grid::{CoeffField, DomainSpec, Grid};
use crate::linalg::{vec_norm, Mat3, Vec3, C64};
use crate::linear::{
    apply_a, dissipation_residual, log_slope, max_reg_ratio, propagate_mode, run_to_steady, smoothing_constant,
    solve_linear, trace_space_proxy, Forcing, TimeGrid,
};
use crate::multiplier::{
    family_rbound, kahane_check, michlin_sweeps, rbound_estimate, LambdaSamples, MichlinSweep, MichlinTable,
    RBoundSample, SymbolFamily,
};
use crate::nonlinear::{
    analyticity_proxy, energy_report, phi, picard_solve, state_at, CubicTerm, NonlinearConfig, PicardTrace,
};
use crate::oracles;
use crate::report::to_json;
use crate::scenarios::{complex_vec3, low_modes, rough, sector_point, single_mode, trial_rng};
use crate::symbol::{
    characteristic_polynomial, eigen_decompose_m, holomorphic_calculus_sq, kappa, matrix_function_sq,
    min_real_eigenvalue, log_space, resolvent_sq, spectral_angle, ContourSpec, TestFunction, COUPLING,
};

type FieldSolve<'a> = dyn Fn(&Grid, &CoeffField) -> Result<CoeffField> + 'a;

pub const CRITERIA: [(u32, &str); 16] = [
    (1, "sector angle"),
    (2, "quasi-homogeneity"),
    (3, "holomorphic calculus"),
    (4, "propagator exactness"),
    (5, "extension equivalence"),
    (6, "linear dissipation"),
    (7, "maximal regularity proxy"),
    (8, "steady state"),
    (9, "nonlinear correctness"),
    (10, "contraction behavior"),
    (11, "nonlinear energy identity"),
    (12, "original-system residuals"),
    (13, "Michlin sweep stability"),
    (14, "R-bound and Kahane"),
    (15, "analyticity proxy"),
    (16, "determinism"),
];

/// Second-order convergence is accepted when the observed order lies in
/// `2 ± ORDER_SLACK`.
pub const ORDER_SLACK: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub id: u32,
    pub name: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    /// Failed requirements, or the error that aborted the check.
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub sweep: SweepConfig,
}

impl Settings {
    pub fn from_config(cfg: &Config) -> Self {
        Settings {
            seed: cfg.rng.seed,
            sweep: cfg.sweep.clone(),
        }
    }
}

impl Default for Settings {
    fn default() -> Self {
        Settings::from_config(&Config::default())
    }
}

#[derive(Default)]
struct Probe {
    metrics: BTreeMap<String, f64>,
    failures: Vec<String>,
}

impl Probe {
    fn metric(&mut self, key: impl Into<String>, value: f64) {
        self.metrics.insert(key.into(), value);
    }

    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    /// Records `value` and requires `value ≤ limit`.
    fn at_most(&mut self, key: &str, value: f64, limit: f64) {
        self.metric(key, value);
        self.require(value <= limit, format!("{key} = {value:e} exceeds {limit:e}"));
    }

    fn second_order(&mut self, key: &str, coarse: f64, fine: f64) {
        let order = observed_order(coarse, fine);
        self.metric(key, order);
        self.require(
            (order - 2.0).abs() <= ORDER_SLACK,
            format!("{key} = {order:.3} is not 2 ± {ORDER_SLACK}"),
        );
    }
}

pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

fn criterion_name(id: u32) -> String {
    CRITERIA
        .iter()
        .find(|c| c.0 == id)
        .map_or_else(|| format!("criterion {id}"), |c| c.1.to_string())
}

fn finish(id: u32, outcome: Result<Probe>) -> Check {
    let (metrics, failures) = match outcome {
        Ok(p) => (p.metrics, p.failures),
        Err(e) => (BTreeMap::new(), vec![format!("error: {e}")]),
    };
    Check {
        id,
        name: criterion_name(id),
        passed: failures.is_empty(),
        metrics,
        failures,
    }
}

pub fn run(id: u32, s: &Settings) -> Check {
    let outcome = match id {
        1 => sector_angle(),
        2 => quasi_homogeneity(s),
        3 => holomorphic_calculus_check(),
        4 => propagator_exactness(s),
        5 => extension_equivalence(s),
        6 => linear_dissipation(s),
        7 => maximal_regularity(s),
        8 => steady_state_rate(),
        9 => nonlinear_correctness(s),
        10 => contraction_behavior(s),
        11 => nonlinear_energy(s),
        12 => original_residuals(s),
        13 => michlin_stability(s),
        14 => rbound_kahane(s),
        15 => analyticity(s),
        16 => determinism(s),
        _ => Err(Error::invalid("acceptance", format!("no criterion {id}"))),
    };
    finish(id, outcome)
}

pub fn evaluate_all(s: &Settings) -> Vec<Check> {
    CRITERIA.iter().map(|&(id, _)| run(id, s)).collect()
}

fn grid2(n: usize) -> Result<Grid> {
    Grid::from_domain(&DomainSpec::box_domain(2, n))
}

/// Stream id for trials of criterion `id`.
fn stream(id: u32, trial: u64) -> u64 {
    ((id as u64) << 32) | trial
}

/// Size of the small initial data used by the energy and residual checks.
pub const SMALL_DATA_NORM: f64 = 1e-2;

/// Low-mode data (`|ζ|² ≤ 5`) rescaled to `‖U₀‖_{L²} = SMALL_DATA_NORM`.
fn small_data(grid: &Grid, seed: u64, id: u32) -> CoeffField {
    let u = low_modes(grid, &mut trial_rng(seed, stream(id, 0)), 5.0, 1.0);
    u.scale(SMALL_DATA_NORM / u.l2_norm(grid))
}

fn max_rel_field_error(a: &[CoeffField], b: &[CoeffField]) -> f64 {
    let scale = b.iter().map(|u| u.max_abs()).fold(0.0, f64::max);
    a.iter()
        .zip(b)
        .map(|(x, y)| x.sub(y).max_abs() / scale)
        .fold(0.0, f64::max)
}

fn sector_angle() -> Result<Probe> {
    let mut p = Probe::default();
    // first-row cofactor expansion of λI − M = [[λ,−1,0],[1,λ,1],[0,−1,λ−1]]:
    // λ(λ(λ−1) + 1) + (λ − 1) = λ³ − λ² + 2λ − 1
    let derived = [1.0, -1.0, 2.0, -1.0];
    let coeffs = characteristic_polynomial(&COUPLING);
    p.require(coeffs == derived, format!("characteristic polynomial {coeffs:?} ≠ {derived:?}"));

    let eig = eigen_decompose_m();
    let oracle = oracles::polynomial_roots_companion(&derived);
    let match_err = eig
        .values
        .iter()
        .map(|v| oracle.iter().map(|o| (v - o).norm()).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max);
    p.at_most("eigenvalue_vs_companion", match_err, 1e-12);
    let residual = eig
        .values
        .iter()
        .map(|l| (l * l * l - l * l + 2.0 * l - 1.0).norm())
        .fold(0.0, f64::max);
    p.at_most("polynomial_residual", residual, 1e-12);

    let angle = spectral_angle();
    let margin = PI / 2.0 - angle;
    p.metric("spectral_angle", angle);
    p.metric("margin", margin);
    p.require(margin > 0.1, format!("margin {margin} not above 0.1"));

    let real: Vec<f64> = eig.values.iter().filter(|v| v.im.abs() < 1e-12).map(|v| v.re).collect();
    let pair: Vec<f64> = eig.values.iter().filter(|v| v.im.abs() >= 1e-12).map(|v| v.re).collect();
    p.require(real.len() == 1 && pair.len() == 2, "expected one real root and one complex pair");
    if let (Some(&r), Some(&c)) = (real.first(), pair.first()) {
        p.metric("real_root", r);
        p.metric("pair_real_part", c);
        p.require((0.56..=0.58).contains(&r), format!("real root {r} outside [0.56, 0.58]"));
        p.require((0.21..=0.22).contains(&c), format!("pair real part {c} outside [0.21, 0.22]"));
    }
    Ok(p)
}

/// Multi-indices `α ∈ ℕ²` with `|α| ≤ 2`.
fn alphas_2d() -> Vec<Vec<u32>> {
    vec![vec![0, 0], vec![1, 0], vec![0, 1], vec![2, 0], vec![1, 1], vec![0, 2]]
}

fn quasi_homogeneity(s: &Settings) -> Result<Probe> {
    let mut p = Probe::default();
    let phi = s.sweep.lambdas.phi();
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let mut rng = trial_rng(s.seed, stream(2, trial));
        let l = sector_point(&mut rng, phi);
        let z: Vec<f64> = (0..2)
            .map(|_| {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                sign * 10f64.powf(rng.gen_range(-2.0..2.0))
            })
            .collect();
        for alpha in alphas_2d() {
            let base = kappa(l, &z, &alpha)?;
            for r in [2.0, 10.0] {
                let zr: Vec<f64> = z.iter().map(|x| r * x).collect();
                let scaled = kappa(l * (r * r), &zr, &alpha)?;
                worst = worst.max((scaled - base).max_abs());
            }
        }
    }
    p.at_most("max_abs_error", worst, 1e-10);
    Ok(p)
}

fn calculus_error(f: &TestFunction, contour: &ContourSpec, zs: &[f64]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &s in zs {
        let h = holomorphic_calculus_sq(f, s, contour)?;
        let o = matrix_function_sq(f, s);
        worst = worst.max((h - o).op_norm() / o.op_norm());
    }
    Ok(worst)
}

/// Errors below this are treated as the round-off floor in the
/// node-doubling check.
const CALCULUS_FLOOR: f64 = 1e-7;

fn holomorphic_calculus_check() -> Result<Probe> {
    let mut p = Probe::default();
    let zs = log_space(1e-2, 1e2, 20);
    for f in [TestFunction::rho(), TestFunction::sqrt_exp(), TestFunction::resolvent(1.0)] {
        let name = f.name();
        let default = ContourSpec::default_for(&f);
        let err = calculus_error(&f, &default, &zs)?;
        p.at_most(&format!("{name}.rel_error"), err, 1e-6);
        let levels: Vec<usize> = [8, 4, 2, 1].iter().map(|d| default.n_nodes / d).collect();
        let errs = levels
            .iter()
            .map(|&n| calculus_error(&f, &default.with_nodes(n), &zs))
            .collect::<Result<Vec<f64>>>()?;
        for (i, w) in errs.windows(2).enumerate() {
            p.metric(format!("{name}.error_nodes_{}", levels[i]), w[0]);
            let noise = w[0] < CALCULUS_FLOOR && w[1] < CALCULUS_FLOOR;
            p.require(
                noise || w[1] <= 2.0 * w[0],
                format!("{name}: error grew from {:e} to {:e} when nodes doubled to {}", w[0], w[1], levels[i + 1]),
            );
        }
        p.require(
            errs[0] >= CALCULUS_FLOOR || errs[3] < CALCULUS_FLOOR,
            format!("{name}: coarse level already below the floor"),
        );
    }
    Ok(p)
}

fn propagator_exactness(s: &Settings) -> Result<Probe> {
    let mut p = Probe::default();
    let m = Mat3::from_real(COUPLING);
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let mut rng = trial_rng(s.seed, stream(4, trial));
        let u0 = complex_vec3(&mut rng);
        let dims = rng.gen_range(1..=3);
        let zeta: Vec<f64> = (0..dims).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let t = rng.gen_range(0.0..1.0);
        let s2: f64 = zeta.iter().map(|z| z * z).sum();
        let got = propagate_mode(&u0, &zeta, t)?;
        let want = oracles::expm(&m.scale_real(-t * s2)).mul_vec(&u0);
        let diff = [0, 1, 2].map(|i| got[i] - want[i]);
        worst = worst.max(vec_norm(&diff) / vec_norm(&want));
    }
    p.at_most("max_rel_error", worst, 1e-10);
    Ok(p)
}

fn resolvent_field(grid: &Grid, lambda: C64, u: &CoeffField) -> Result<CoeffField> {
    let mut out = CoeffField::zeros(grid);
    for (m, &s) in grid.zeta_sq().iter().enumerate() {
        out.set_mode(m, resolvent_sq(lambda, s)?.mul_vec(&u.mode(m)));
    }
    Ok(out)
}

fn extension_equivalence(s: &Settings) -> Result<Probe> {
    let mut p = Probe::default();
    let g = grid2(16)?;
    let plan = ReflectionPlan::all_sine(&g);
    let mut rng = trial_rng(s.seed, stream(5, 0));
    let f = rough(&g, &mut rng, 1.0, 0.0);
    let f_phys = f.to_phys(&g)?;
    let (big, ext) = odd_extend(&f_phys, &g, &plan)?;
    let ext_coeffs = ext.to_coeffs(&big)?;
    let time = TimeGrid::new(0.1, 10)?;

    let solves: [(&str, Box<FieldSolve>); 3] = [
        ("resolvent_real", Box::new(|gr, u| resolvent_field(gr, C64::new(1.0, 0.0), u))),
        ("resolvent_complex", Box::new(|gr, u| resolvent_field(gr, C64::from_polar(5.0, 2.5), u))),
        (
            "evolution",
            Box::new(|gr, u| Ok(solve_linear(gr, u, &Forcing::Zero, &time)?.last().clone())),
        ),
    ];
    let (_, ext_direct) = extend_coeffs(&f, &g, &plan)?;
    for (name, solve) in solves.iter() {
        let direct = solve(&g, &f)?;
        let periodic = solve(&big, &ext_coeffs)?;
        // physical odd extension and restriction carry real fields only
        if name != &"resolvent_complex" {
            let back = restrict(&periodic.to_phys(&big)?, &g, &plan)?.to_coeffs(&g)?;
            p.at_most(&format!("{name}.physical_route_error"), back.sub(&direct).max_abs(), 1e-11);
        }
        let back = restrict_coeffs(&solve(&big, &ext_direct)?, &g, &plan)?;
        p.at_most(&format!("{name}.coefficient_route_error"), back.sub(&direct).max_abs(), 1e-11);
    }
    Ok(p)
}

fn linear_dissipation(s: &Settings) -> Result<Probe> {
    let mut p = Probe::default();
    let g = grid2(32)?;
    let mut worst_order = Vec::new();
    let mut worst_growth: f64 = 0.0;
    let mut coarse_max: f64 = 0.0;
    for trial in 0..3 {
        let u0 = low_modes(&g, &mut trial_rng(s.seed, stream(6, trial)), 10.0, 1.0);
        let mut maxima = Vec::new();
        for n in [100, 200] {
            let sol = solve_linear(&g, &u0, &Forcing::Zero, &TimeGrid::new(0.1, n)?)?;
            let r = dissipation_residual(&g, &sol);
            maxima.push(r.iter().flatten().copied().fold(0.0, f64::max));
            let norms: Vec<f64> = sol.states.iter().map(|u| u.l2_norm(&g)).collect();
            for w in norms.windows(2) {
                worst_growth = worst_growth.max((w[1] - w[0]) / norms[0]);
            }
        }
        coarse_max = coarse_max.max(maxima[0]);
        worst_order.push((maxima[0], maxima[1]));
    }
    p.metric("max_residual_dt_1e-3", coarse_max);
    for (i, (c, f)) in worst_order.iter().enumerate() {
        p.second_order(&format!("order_trial_{i}"), *c, *f);
    }
    p.at_most("max_relative_norm_growth", worst_growth, 1e-14);
    Ok(p)
}

/// The same forcing on the 16² and 32² grids: rough spatial profile on the
/// 32² modes, truncated for the coarse grid, times a trial-dependent profile
/// in time.
fn forcing_pair(fine: &Grid, coarse: &Grid, seed: u64, trial: u64, time: &TimeGrid) -> Result<(Forcing, Forcing)> {
    let mut rng = trial_rng(seed, stream(7, trial));
    let f = rough(fine, &mut rng, 1.0, 1.0);
    let fc = CoeffField::from_comps(coarse, f.comps.clone().map(|c| coarse.truncate_from(&c, fine)))?;
    let freq = (trial % 4) as f64;
    let profile: Vec<f64> = time
        .times()
        .iter()
        .map(|t| 1.0 + 0.5 * (2.0 * PI * freq * t / time.t_end).sin())
        .collect();
    let samples = |u: &CoeffField| Forcing::Samples(profile.iter().map(|&c| u.scale(c)).collect());
    Ok((samples(&f), samples(&fc)))
}

fn maximal_regularity(s: &Settings) -> Result<Probe> {
    let mut p = Probe::default();
    let coarse = grid2(16)?;
    let fine = grid2(32)?;
    let time = TimeGrid::new(0.2, 40)?;
    let mut worst: f64 = 0.0;
    let mut ratio_range = (f64::INFINITY, 0.0f64);
    for trial in 0..100 {
        let (ff, fc) = forcing_pair(&fine, &coarse, s.seed, trial, &time)?;
        for exponent in [2.0, 4.0] {
            let rc = max_reg_ratio(&coarse, &fc, exponent, &time)?;
            let rf = max_reg_ratio(&fine, &ff, exponent, &time)?;
            worst = worst.max((rf / rc - 1.0).abs());
            ratio_range = (ratio_range.0.min(rc.min(rf)), ratio_range.1.max(rc.max(rf)));
        }
    }
    p.metric("min_ratio", ratio_range.0);
    p.metric("max_ratio", ratio_range.1);
    p.metric("max_relative_change", worst);
    p.require(worst < 0.5, format!("ratio changed by {:.1}% under refinement", 100.0 * worst));
    Ok(p)
}

fn steady_state_rate() -> Result<Probe> {
    let mut p = Probe::default();
    let g = grid2(8)?;
    let labels = [1, 1];
    let f = single_mode(&g, &labels, [1.0, 0.5, -0.25])?;
    let run = run_to_steady(&g, &CoeffField::zeros(&g), &f, 0.01, 20_000, 1e-12)?;
    p.require(run.converged, "did not reach the steady state");
    let m = g.find_mode(&labels).expect("mode on grid");
    let s = g.zeta_sq()[m];
    let minv = oracles::nalgebra_inverse(&Mat3::from_real(COUPLING).scale_real(s));
    let target = minv.mul_vec(&f.mode(m));
    let got = run.final_state.mode(m);
    let diff = [0, 1, 2].map(|i| got[i] - target[i]);
    p.at_most("steady_state_rel_error", vec_norm(&diff) / vec_norm(&target), 1e-10);

    let expected = s * min_real_eigenvalue();
    // fit over the window where the slowest mode dominates and round-off
    // has not set in
    let d0 = run.distance[0];
    let (t, d): (Vec<f64>, Vec<f64>) = run
        .times
        .iter()
        .zip(&run.distance)
        .filter(|(&t, &d)| t >= 5.0 && d > 1e-9 * d0)
        .map(|(&t, &d)| (t, d))
        .unzip();
    let slope = log_slope(&t, &d, 0.0).ok_or_else(|| Error::invalid("acceptance", "no decay window"))?;
    let rate = -slope;
    p.metric("measured_rate", rate);
    p.metric("expected_rate", expected);
    p.metric("fit_window_end", *t.last().unwrap_or(&0.0));
    p.at_most("rate_rel_error", (rate - expected).abs() / expected, 0.1);
    Ok(p)
}

fn manufactured_error(n_steps: usize) -> Result<f64> {
    // U(t) = e^{−t}v on mode (1,1), G = U_t + AU − Φ(U)
    let g = grid2(8)?;
    let cfg = NonlinearConfig::new(1.0);
    let cubic = CubicTerm::new(&g, cfg.a, cfg.dealias_factor)?;
    let time = TimeGrid::new(0.25, n_steps)?;
    let v = single_mode(&g, &[1, 1], [0.5, -0.3, 0.2])?;
    let exact: Vec<CoeffField> = time.times().iter().map(|t| v.scale((-t).exp())).collect();
    let extra = exact
        .iter()
        .map(|u| Ok(u.scale(-1.0).add(&apply_a(&g, u)).sub(&cubic.apply(u)?)))
        .collect::<Result<Vec<_>>>()?;
    let res = picard_solve(&g, &exact[0], &cfg, &time, Some(&extra))?;
    if res.trace.shrinks > 0 {
        return Err(Error::invalid("acceptance", "manufactured run shrank its window"));
    }
    Ok(max_rel_field_error(&res.solution.states, &exact))
}

fn nonlinear_correctness(s: &Settings) -> Result<Probe> {
    let mut p = Probe::default();
    // (sin x sin y)³ = (¾ sin x − ¼ sin 3x)(¾ sin y − ¼ sin 3y); Φ₂ = a|ζ|²·cube
    let g = grid2(8)?;
    let a = 1.3;
    let u = single_mode(&g, &[1, 1], [1.0, 0.0, 0.0])?;
    let out = phi(&g, &u, a, 2)?;
    let c = |k: i64| if k == 1 { 0.75 } else { -0.25 };
    let mut err: f64 = 0.0;
    for m in 0..g.n_modes() {
        let labels = g.mode_index(m).labels;
        let want = if labels.iter().all(|&k| k == 1 || k == 3) {
            a * g.zeta_sq()[m] * c(labels[0]) * c(labels[1])
        } else {
            0.0
        };
        err = err.max((out.comps[1][m] - want).norm());
        err = err.max(out.comps[0][m].norm()).max(out.comps[2][m].norm());
    }
    p.at_most("sin_cubed_error", err, 1e-12);

    let e128 = manufactured_error(128)?;
    let e256 = manufactured_error(256)?;
    p.at_most("manufactured_error_128", e128, 1e-6);
    p.metric("manufactured_error_256", e256);
    p.second_order("manufactured_order", e128, e256);

    let g16 = grid2(16)?;
    let mut rng = trial_rng(s.seed, stream(9, 0));
    let u0 = low_modes(&g16, &mut rng, 20.0, 1.0);
    let f = low_modes(&g16, &mut rng, 20.0, 1.0);
    let time = TimeGrid::new(0.1, 50)?;
    let extra = vec![f.clone(); time.n_steps + 1];
    let lin = solve_linear(&g16, &u0, &Forcing::Constant(f), &time)?;
    let non = picard_solve(&g16, &u0, &NonlinearConfig::new(0.0), &time, Some(&extra))?;
    let identical = lin.states == non.solution.states;
    p.metric("zero_coupling_bitwise_equal", if identical { 1.0 } else { 0.0 });
    p.require(identical, "a = 0 run differs from the linear solver");
    Ok(p)
}

fn picard_trace(grid: &Grid, u0: &CoeffField, cfg: &NonlinearConfig, time: &TimeGrid) -> Result<PicardTrace> {
    match picard_solve(grid, u0, cfg, time, None) {
        Ok(r) => Ok(r.trace),
        Err(Error::NoConvergence { trace }) => Ok(*trace),
        Err(e) => Err(e),
    }
}

/// Ratios after the second sweep on the accepted window.
fn late_ratios(trace: &PicardTrace) -> Vec<f64> {
    trace.final_ratios().into_iter().skip(1).collect()
}

fn contracts(trace: &PicardTrace, bound: f64) -> bool {
    trace.converged && trace.shrinks == 0 && late_ratios(trace).iter().all(|&r| r <= bound)
}

fn contraction_behavior(s: &Settings) -> Result<Probe> {
    let mut p = Probe::default();
    let g = grid2(16)?;
    let cfg = NonlinearConfig::new(1.0);
    let time = TimeGrid::new(0.1, 20)?;
    let shape = low_modes(&g, &mut trial_rng(s.seed, stream(10, 0)), 10.0, 1.0);
    let passes = |c: f64| -> Result<bool> { Ok(contracts(&picard_trace(&g, &shape.scale(c), &cfg, &time)?, 0.5)) };

    let mut lo = 1e-3;
    while !passes(lo)? {
        lo /= 10.0;
        if lo < 1e-9 {
            return Err(Error::invalid("acceptance", "no contracting amplitude found"));
        }
    }
    let mut hi = lo * 10.0;
    while passes(hi)? {
        lo = hi;
        hi *= 10.0;
        if hi > 1e9 {
            return Err(Error::invalid("acceptance", "no failing amplitude found"));
        }
    }
    for _ in 0..30 {
        let mid = (lo * hi).sqrt();
        if passes(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let d = trace_space_proxy(&g, &shape.scale(lo), 2.0);
    p.metric("bisected_amplitude", lo);
    p.metric("bisected_proxy_norm", d);

    let small = shape.scale(0.5 * lo);
    let small_trace = picard_trace(&g, &small, &cfg, &time)?;
    let ratios = late_ratios(&small_trace);
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    p.metric("small_proxy_norm", trace_space_proxy(&g, &small, 2.0));
    p.metric("small_iterations", small_trace.iterates.len() as f64);
    p.require(small_trace.converged && small_trace.shrinks == 0, "small data did not converge on the full window");
    p.require(!ratios.is_empty(), "small data converged before a third sweep");
    p.at_most("small_max_late_ratio", worst, 0.55);

    let large_trace = picard_trace(&g, &small.scale(100.0), &cfg, &time)?;
    p.metric("large_shrinks", large_trace.shrinks as f64);
    p.require(large_trace.shrinks >= 1, "large data did not trigger a window shrink");
    Ok(p)
}

fn nonlinear_energy(s: &Settings) -> Result<Probe> {
    let mut p = Probe::default();
    let g = grid2(32)?;
    let cfg = NonlinearConfig::new(1.0);
    let u0 = small_data(&g, s.seed, 11);
    let mut maxima = Vec::new();
    for n in [100, 200] {
        let res = picard_solve(&g, &u0, &cfg, &TimeGrid::new(0.1, n)?, None)?;
        p.require(res.trace.shrinks == 0, format!("window shrank at {n} steps"));
        let rep = energy_report(&g, &res.solution, cfg.a, cfg.dealias_factor)?;
        p.require(rep.is_nonincreasing(1e-12), format!("energy increased at {n} steps"));
        maxima.push(rep.max_residual());
    }
    p.at_most("max_residual_dt_1e-3", maxima[0], 1e-6);
    p.metric("max_residual_dt_5e-4", maxima[1]);
    p.second_order("order", maxima[0], maxima[1]);
    Ok(p)
}

fn original_residuals(s: &Settings) -> Result<Probe> {
    let mut p = Probe::default();
    let g = grid2(16)?;
    let u0 = small_data(&g, s.seed, 12);
    for (label, a) in [("linear", 0.0), ("nonlinear", 1.0)] {
        let cfg = NonlinearConfig::new(a);
        let mut maxima = Vec::new();
        for n in [100, 200] {
            let res = picard_solve(&g, &u0, &cfg, &TimeGrid::new(0.1, n)?, None)?;
            p.require(res.trace.converged && res.trace.shrinks == 0, format!("{label} run did not converge"));
            let r = residual_of_solution(&g, &res.solution, &OriginalForcing::default(), a, cfg.dealias_factor)?;
            maxima.push((r.max_r1(), r.max_r2()));
        }
        p.at_most(&format!("{label}.r1_dt_1e-3"), maxima[0].0, 1e-6);
        p.at_most(&format!("{label}.r2_dt_1e-3"), maxima[0].1, 1e-6);
        p.second_order(&format!("{label}.r1_order"), maxima[0].0, maxima[1].0);
        p.second_order(&format!("{label}.r2_order"), maxima[0].1, maxima[1].1);
    }
    Ok(p)
}

/// Base plans for the Michlin stability check: every `κ_α` with `|α| ≤ 2`
/// in one continuous and one discrete direction, and `h_ρ`.
pub fn michlin_plans(sweep: &SweepConfig) -> (Vec<MichlinSweep>, MichlinSweep) {
    let kappas = alphas_2d()
        .into_iter()
        .map(|alpha| MichlinSweep {
            lambdas: sweep.lambdas.clone(),
            n_xi: sweep.kappa_n_xi,
            k_max: sweep.kappa_k_max,
            rel_step: sweep.rel_step,
            ..MichlinSweep::new(SymbolFamily::Kappa { alpha })
        })
        .collect();
    let calculus = MichlinSweep {
        lambdas: sweep.lambdas.clone(),
        n_xi: sweep.calculus_n_xi,
        k_max: sweep.calculus_k_max,
        rel_step: sweep.rel_step,
        ..MichlinSweep::new(SymbolFamily::Calculus { f: TestFunction::rho() })
    };
    (kappas, calculus)
}

/// Sups below this count as zero when forming stability ratios.
const SUP_FLOOR: f64 = 1e-12;

fn sup_ratio(a: f64, b: f64) -> f64 {
    let (lo, hi) = (a.min(b), a.max(b));
    if hi < SUP_FLOOR {
        1.0
    } else if lo < SUP_FLOOR {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Base and doubled tables for every family of the Michlin check.
pub fn michlin_tables(sweep: &SweepConfig) -> Result<Vec<(MichlinTable, MichlinTable)>> {
    let (kappas, calculus) = michlin_plans(sweep);
    let doubled: Vec<MichlinSweep> = kappas.iter().map(|k| k.doubled()).collect();
    let base_k = michlin_sweeps(&kappas)?;
    let fine_k = michlin_sweeps(&doubled)?;
    let base_h = michlin_sweeps(std::slice::from_ref(&calculus))?;
    let fine_h = michlin_sweeps(&[calculus.doubled()])?;
    Ok(base_k.into_iter().zip(fine_k).chain(base_h.into_iter().zip(fine_h)).collect())
}

fn michlin_stability(s: &Settings) -> Result<Probe> {
    let mut p = Probe::default();
    for (base, fine) in michlin_tables(&s.sweep)? {
        let mut worst: f64 = 1.0;
        for row in &base.rows {
            let other = fine
                .row(&row.gamma)
                .ok_or_else(|| Error::invalid("acceptance", "doubled table lacks a row"))?;
            let r = sup_ratio(row.sup, other.sup);
            let gamma: String = row.gamma.iter().map(|g| g.to_string()).collect();
            p.metric(format!("{}.gamma_{gamma}.sup", base.family), row.sup);
            worst = worst.max(r);
        }
        p.metric(format!("{}.max_ratio", base.family), worst);
        p.require(worst < 2.0, format!("{}: sup changed by factor {worst:.3}", base.family));
    }
    Ok(p)
}

/// `λ_j(λ_j + a(ζ_j))⁻¹` at `n` random sector points and `|ζ_j|² ∈ [1e-2, 1e2]`.
pub fn resolvent_family(rng: &mut impl Rng, n: usize, phi: f64) -> Result<Vec<Mat3>> {
    (0..n)
        .map(|_| {
            let l = sector_point(rng, phi);
            let s = 10f64.powf(rng.gen_range(-2.0..2.0));
            Ok(resolvent_sq(l, s)?.scale(l))
        })
        .collect()
}

fn rbound_kahane(s: &Settings) -> Result<Probe> {
    let mut p = Probe::default();
    let sw = &s.sweep;
    let phi = sw.lambdas.phi();

    let mut exact_err: f64 = 0.0;
    for trial in 0..20 {
        let mut rng = trial_rng(s.seed, stream(14, trial));
        let t = resolvent_family(&mut rng, 1, phi)?;
        let x = complex_vec3(&mut rng);
        let rep = rbound_estimate(
            &RBoundSample {
                operators: t.clone(),
                vectors: vec![x],
                n_draws: sw.n_draws,
                seed: s.seed,
            },
            sw.p,
        )?;
        let want = vec_norm(&t[0].mul_vec(&x)) / vec_norm(&x);
        exact_err = exact_err.max((rep.ratio - want).abs() / want);
    }
    p.at_most("single_operator_rel_error", exact_err, 1e-12);

    let mut failures = 0usize;
    let mut worst: f64 = 0.0;
    for trial in 0..sw.kahane_trials as u64 {
        let mut rng = trial_rng(s.seed, stream(14, 1_000_000 + trial));
        let n = rng.gen_range(1..=8);
        let b: Vec<C64> = (0..n)
            .map(|_| C64::from_polar(rng.gen_range(0.1..1.0), rng.gen_range(-PI..PI)))
            .collect();
        let a: Vec<C64> = b
            .iter()
            .map(|bj| C64::from_polar(bj.norm() * rng.gen_range(0.0..1.0), rng.gen_range(-PI..PI)))
            .collect();
        let x: Vec<Vec3> = (0..n).map(|_| complex_vec3(&mut rng)).collect();
        let r = kahane_check(&a, &b, &x, sw.p, sw.n_draws, s.seed.wrapping_add(trial))?;
        worst = worst.max(r.ratio);
        failures += usize::from(!r.holds);
    }
    p.metric("kahane_trials", sw.kahane_trials as f64);
    p.metric("kahane_max_ratio", worst);
    p.require(failures == 0, format!("Kahane inequality failed in {failures} trials"));

    let mut rng = trial_rng(s.seed, stream(14, 2_000_000));
    let family = resolvent_family(&mut rng, 6, phi)?;
    let vectors: Vec<Vec3> = (0..2).map(|_| complex_vec3(&mut rng)).collect();
    let mut prev = 0.0;
    let mut monotone = true;
    for size in 1..=family.len() {
        let r = family_rbound(&family[..size], &vectors, sw.p, sw.n_draws, s.seed)?;
        p.metric(format!("nested_family_{size}"), r.ratio);
        monotone &= r.ratio >= prev;
        prev = r.ratio;
    }
    p.require(monotone, "estimate decreased under family enlargement");

    for n in [32, 64] {
        let mut rng = trial_rng(s.seed, stream(14, 3_000_000 + n as u64));
        let ops = resolvent_family(&mut rng, n, phi)?;
        let xs: Vec<Vec3> = (0..n).map(|_| complex_vec3(&mut rng)).collect();
        let rep = rbound_estimate(
            &RBoundSample {
                operators: ops,
                vectors: xs,
                n_draws: sw.n_draws,
                seed: s.seed,
            },
            sw.p,
        )?;
        p.metric(format!("resolvent_pairs_{n}"), rep.ratio);
    }
    Ok(p)
}

fn analyticity(s: &Settings) -> Result<Probe> {
    let mut p = Probe::default();
    let g = grid2(32)?;
    let u0 = rough(&g, &mut trial_rng(s.seed, stream(15, 0)), 1.0, 0.0);
    let consts: Vec<f64> = [0.05, 0.1, 0.5].iter().map(|&t| smoothing_constant(&g, &u0, t)).collect();
    for (t, c) in [0.05, 0.1, 0.5].iter().zip(&consts) {
        p.metric(format!("smoothing_constant_t{t}"), *c);
    }
    let spread = consts.iter().copied().fold(0.0, f64::max) / consts.iter().copied().fold(f64::INFINITY, f64::min);
    p.metric("smoothing_spread", spread);
    p.require(spread < 2.0, format!("smoothing constant varies by factor {spread:.3}"));

    let sol = solve_linear(&g, &u0, &Forcing::Zero, &TimeGrid::new(0.5, 100)?)?;
    p.metric("linear_slope_t0", analyticity_proxy(&g, &u0)?);
    let early = analyticity_proxy(&g, state_at(&sol, 0.1)?)?;
    let late = analyticity_proxy(&g, state_at(&sol, 0.5)?)?;
    p.metric("linear_slope_t0.1", early);
    p.metric("linear_slope_t0.5", late);
    p.require(early < 0.0 && late < 0.0, "linear spectral slope not negative");
    p.require(late < early, "linear spectral slope did not steepen with time");

    let small = u0.scale(1e-3);
    let res = picard_solve(&g, &small, &NonlinearConfig::new(1.0), &TimeGrid::new(0.25, 50)?, None)?;
    p.require(res.trace.converged && res.trace.shrinks == 0, "small-data nonlinear run did not converge");
    let slope = analyticity_proxy(&g, state_at(&res.solution, 0.2)?)?;
    p.metric("nonlinear_slope_t0.2", slope);
    p.require(slope < 0.0, "nonlinear spectral slope not negative");
    Ok(p)
}

/// A reduced run of the parallel code paths, serialized twice and compared
/// byte for byte.
fn determinism_payload(s: &Settings) -> Result<String> {
    let mut sweep = s.sweep.clone();
    sweep.kappa_n_xi = 4;
    sweep.kappa_k_max = 4;
    sweep.calculus_n_xi = 2;
    sweep.calculus_k_max = 2;
    sweep.lambdas = LambdaSamples {
        n_radii: 4,
        n_angles: 3,
        ..sweep.lambdas.clone()
    };
    let tables = michlin_tables(&sweep)?;
    let mut rng = trial_rng(s.seed, stream(16, 0));
    let ops = resolvent_family(&mut rng, 8, sweep.lambdas.phi())?;
    let xs: Vec<Vec3> = (0..8).map(|_| complex_vec3(&mut rng)).collect();
    let rb = rbound_estimate(
        &RBoundSample {
            operators: ops,
            vectors: xs,
            n_draws: sweep.n_draws,
            seed: s.seed,
        },
        sweep.p,
    )?;
    let g = grid2(8)?;
    let u0 = low_modes(&g, &mut rng, 10.0, 0.1);
    let res = picard_solve(&g, &u0, &NonlinearConfig::new(1.0), &TimeGrid::new(0.1, 20)?, None)?;
    let checks = vec![run(2, s), run(4, s)];
    let mut out = to_json(&tables)?;
    out.push_str(&to_json(&rb)?);
    out.push_str(&to_json(&res.trace)?);
    out.push_str(&to_json(&res.solution.states)?);
    out.push_str(&to_json(&checks)?);
    Ok(out)
}

fn determinism(s: &Settings) -> Result<Probe> {
    let mut p = Probe::default();
    let first = determinism_payload(s)?;
    let second = determinism_payload(s)?;
    p.metric("payload_bytes", first.len() as f64);
    p.require(first == second, "repeated runs produced different bytes");
    Ok(p)
}
