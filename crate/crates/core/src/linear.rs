//! Mode-wise exact propagation of `U_t + AU = F` with `A(ζ) = |ζ|²M`.
//!
//! Each mode is advanced with the exponential integrator that is exact for
//! forcing linear in time on every step:
//! `Û_{n+1} = e^{−hsM}Û_n + hφ₁(−hsM)F̂_n + hφ₂(−hsM)(F̂_{n+1} − F̂_n)`,
//! with `φ₁(x) = (eˣ−1)/x` and `φ₂(x) = (eˣ−1−x)/x²`. The three step matrices
//! are real and precomputed per mode from the eigen-decomposition of `M`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CoeffField, Grid};
use crate::linalg::{real_mul_vec, vec_norm, Vec3, C64, ONE, ZERO};
use crate::symbol::{eigen_decompose_m, zeta_sq, COUPLING};

/// Uniform time nodes `t_n = n·t_end/n_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_end: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_steps: usize) -> Result<Self> {
        let g = TimeGrid { t_end, n_steps };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid("linear", "t_end must be positive"));
        }
        if self.n_steps == 0 {
            return Err(Error::invalid("linear", "n_steps must be at least 1"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.t_end / self.n_steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        if n == self.n_steps {
            self.t_end
        } else {
            n as f64 * self.dt()
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|n| self.time(n)).collect()
    }
}

/// `e^{−tsM}u₀` through the cached eigen-decomposition.
pub fn propagate_sq(u0: &Vec3, s: f64, t: f64) -> Vec3 {
    if t == 0.0 || s == 0.0 {
        return *u0;
    }
    let eig = eigen_decompose_m();
    eig.apply(eig.values.map(|l| (-l * (s * t)).exp()), u0)
}

pub fn propagate_mode(u0: &Vec3, zeta: &[f64], t: f64) -> Result<Vec3> {
    if !(t >= 0.0) {
        return Err(Error::invalid("linear", format!("negative time {t}")));
    }
    Ok(propagate_sq(u0, zeta_sq(zeta), t))
}

/// `(φ₁(x), φ₂(x))`, by Taylor series near 0.
pub fn phi_functions(x: C64) -> (C64, C64) {
    if x.norm() < 0.5 {
        let mut term = ONE;
        let mut p1 = ZERO;
        let mut p2 = ZERO;
        // term = x^k / (k+1)!, then x^k/(k+2)! = term / (k+2)
        for k in 0..30 {
            p1 += term;
            p2 += term / (k as f64 + 2.0);
            term = term * x / (k as f64 + 2.0);
        }
        (p1, p2)
    } else {
        let e = x.exp();
        ((e - 1.0) / x, (e - 1.0 - x) / (x * x))
    }
}

/// Real one-step matrices for one mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeStepper {
    pub exp: [[f64; 3]; 3],
    pub phi1: [[f64; 3]; 3],
    pub phi2: [[f64; 3]; 3],
}

impl ModeStepper {
    pub fn new(s: f64, h: f64) -> Self {
        let eig = eigen_decompose_m();
        let mut e = [ZERO; 3];
        let mut p1 = [ZERO; 3];
        let mut p2 = [ZERO; 3];
        for i in 0..3 {
            let x = -eig.values[i] * (s * h);
            let (a, b) = phi_functions(x);
            e[i] = x.exp();
            p1[i] = a * h;
            p2[i] = b * h;
        }
        ModeStepper {
            exp: eig.synthesize(e).re(),
            phi1: eig.synthesize(p1).re(),
            phi2: eig.synthesize(p2).re(),
        }
    }

    pub fn step(&self, u: &Vec3, f0: &Vec3, f1: &Vec3) -> Vec3 {
        let a = real_mul_vec(&self.exp, u);
        let b = real_mul_vec(&self.phi1, f0);
        let df = [f1[0] - f0[0], f1[1] - f0[1], f1[2] - f0[2]];
        let c = real_mul_vec(&self.phi2, &df);
        [a[0] + b[0] + c[0], a[1] + b[1] + c[1], a[2] + b[2] + c[2]]
    }
}

/// `A(ζ)Û = sMÛ`.
pub fn apply_symbol(s: f64, u: &Vec3) -> Vec3 {
    let v = real_mul_vec(&COUPLING, u);
    [v[0] * s, v[1] * s, v[2] * s]
}

/// Forcing sampled at the time nodes.
#[derive(Clone, Debug)]
pub enum Forcing {
    Zero,
    /// Same field at every node.
    Constant(CoeffField),
    /// One field per node, `n_steps + 1` entries.
    Samples(Vec<CoeffField>),
}

impl Forcing {
    fn check(&self, grid: &Grid, time: &TimeGrid) -> Result<()> {
        match self {
            Forcing::Zero => Ok(()),
            Forcing::Constant(f) => f.check(grid),
            Forcing::Samples(v) => {
                if v.len() != time.n_steps + 1 {
                    return Err(Error::shape("linear", &[time.n_steps + 1], &[v.len()]));
                }
                v.iter().try_for_each(|f| f.check(grid))
            }
        }
    }

    pub fn mode_at(&self, n: usize, m: usize) -> Vec3 {
        match self {
            Forcing::Zero => [ZERO; 3],
            Forcing::Constant(f) => f.mode(m),
            Forcing::Samples(v) => v[n].mode(m),
        }
    }

    pub fn field_at(&self, n: usize, grid: &Grid) -> CoeffField {
        match self {
            Forcing::Zero => CoeffField::zeros(grid),
            Forcing::Constant(f) => f.clone(),
            Forcing::Samples(v) => v[n].clone(),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Forcing::Zero)
    }
}

/// Precomputed per-mode steppers for one grid and step size.
#[derive(Clone, Debug)]
pub struct LinearPropagator {
    pub grid: Grid,
    pub time: TimeGrid,
    steppers: Vec<ModeStepper>,
}

impl LinearPropagator {
    pub fn new(grid: &Grid, time: &TimeGrid) -> Result<Self> {
        time.validate()?;
        let h = time.dt();
        let steppers = grid.zeta_sq().par_iter().map(|&s| ModeStepper::new(s, h)).collect();
        Ok(LinearPropagator {
            grid: grid.clone(),
            time: *time,
            steppers,
        })
    }

    /// Nodes `U_0..U_N` of the Duhamel solution.
    pub fn solve(&self, u0: &CoeffField, forcing: &Forcing) -> Result<LinearSolution> {
        u0.check(&self.grid)?;
        forcing.check(&self.grid, &self.time)?;
        let n_steps = self.time.n_steps;
        let per_mode: Vec<Vec<Vec3>> = self
            .steppers
            .par_iter()
            .enumerate()
            .map(|(m, st)| {
                let mut out = Vec::with_capacity(n_steps + 1);
                let mut u = u0.mode(m);
                let mut f0 = forcing.mode_at(0, m);
                out.push(u);
                for n in 0..n_steps {
                    let f1 = forcing.mode_at(n + 1, m);
                    u = st.step(&u, &f0, &f1);
                    out.push(u);
                    f0 = f1;
                }
                out
            })
            .collect();
        let mut states = vec![CoeffField::zeros(&self.grid); n_steps + 1];
        for (m, series) in per_mode.iter().enumerate() {
            for (n, v) in series.iter().enumerate() {
                states[n].set_mode(m, *v);
            }
        }
        Ok(LinearSolution {
            times: self.time.times(),
            states,
        })
    }
}

/// Trajectory at the time nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearSolution {
    pub times: Vec<f64>,
    pub states: Vec<CoeffField>,
}

impl LinearSolution {
    pub fn last(&self) -> &CoeffField {
        self.states.last().expect("trajectory has at least one node")
    }

    /// `AU` at node `n`.
    pub fn symbol_applied(&self, grid: &Grid, n: usize) -> CoeffField {
        apply_a(grid, &self.states[n])
    }

    /// `U_t = F − AU` at node `n`; exact for the semi-discrete flow.
    pub fn time_derivative(&self, grid: &Grid, forcing: &Forcing, n: usize) -> CoeffField {
        let au = self.symbol_applied(grid, n);
        let mut out = forcing.field_at(n, grid);
        for (o, a) in out.comps.iter_mut().zip(&au.comps) {
            for (x, y) in o.iter_mut().zip(a) {
                *x -= y;
            }
        }
        out
    }
}

pub fn apply_a(grid: &Grid, u: &CoeffField) -> CoeffField {
    let mut out = CoeffField::zeros(grid);
    for (m, &s) in grid.zeta_sq().iter().enumerate() {
        out.set_mode(m, apply_symbol(s, &u.mode(m)));
    }
    out
}

pub fn solve_linear(grid: &Grid, u0: &CoeffField, forcing: &Forcing, time: &TimeGrid) -> Result<LinearSolution> {
    LinearPropagator::new(grid, time)?.solve(u0, forcing)
}

/// Nodal `L^p` norm (physical grid quadrature) of a coefficient field.
pub fn field_lp_norm(grid: &Grid, u: &CoeffField, p: f64) -> Result<f64> {
    Ok(u.to_phys(grid)?.lp_norm(grid, p))
}

/// Trapezoid in time of nodal `‖·‖^p`, then the `1/p` power.
pub fn time_lp(values: &[f64], dt: f64, p: f64) -> f64 {
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let mut acc = 0.0;
    for (i, v) in values.iter().enumerate() {
        let w = if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        acc += w * v.powf(p);
    }
    (acc * dt).powf(1.0 / p)
}

/// `(‖U_t‖ + ‖AU‖)/‖F‖` in `L^p_t L^p_x` for zero initial data.
pub fn max_reg_ratio(grid: &Grid, forcing: &Forcing, p: f64, time: &TimeGrid) -> Result<f64> {
    if !(p > 1.0 && p.is_finite()) {
        return Err(Error::invalid("linear", format!("exponent {p} outside (1, ∞)")));
    }
    let sol = solve_linear(grid, &CoeffField::zeros(grid), forcing, time)?;
    let norms = nodal_norms(grid, &sol, forcing, p)?;
    let f = time_lp(&norms.f, time.dt(), p);
    if !(f > 0.0) {
        return Err(Error::ZeroForcing);
    }
    let ut = time_lp(&norms.ut, time.dt(), p);
    let au = time_lp(&norms.au, time.dt(), p);
    Ok((ut + au) / f)
}

struct NodalNorms {
    u: Vec<f64>,
    au: Vec<f64>,
    ut: Vec<f64>,
    f: Vec<f64>,
}

fn nodal_norms(grid: &Grid, sol: &LinearSolution, forcing: &Forcing, p: f64) -> Result<NodalNorms> {
    let rows: Vec<Result<[f64; 4]>> = (0..sol.states.len())
        .into_par_iter()
        .map(|n| {
            let f = forcing.field_at(n, grid);
            Ok([
                field_lp_norm(grid, &sol.states[n], p)?,
                field_lp_norm(grid, &sol.symbol_applied(grid, n), p)?,
                field_lp_norm(grid, &sol.time_derivative(grid, forcing, n), p)?,
                if forcing.is_zero() { 0.0 } else { field_lp_norm(grid, &f, p)? },
            ])
        })
        .collect();
    let mut out = NodalNorms {
        u: vec![],
        au: vec![],
        ut: vec![],
        f: vec![],
    };
    for r in rows {
        let [a, b, c, d] = r?;
        out.u.push(a);
        out.au.push(b);
        out.ut.push(c);
        out.f.push(d);
    }
    Ok(out)
}

/// `½‖U‖²_{L²}` per node via Parseval.
pub fn half_energy(grid: &Grid, u: &CoeffField) -> f64 {
    0.5 * u.l2_norm(grid).powi(2)
}

/// `‖∇U₃‖²_{L²} = w Σ |ζ|²|Û₃|²`.
pub fn heat_dissipation(grid: &Grid, u: &CoeffField) -> f64 {
    grid.parseval_weight()
        * u.comps[2]
            .iter()
            .zip(grid.zeta_sq())
            .map(|(c, s)| s * c.norm_sqr())
            .sum::<f64>()
}

/// `|d/dt ½‖U‖² + ‖∇U₃‖²|` at interior nodes by centered differences; the
/// endpoints carry `None`.
pub fn dissipation_residual(grid: &Grid, sol: &LinearSolution) -> Vec<Option<f64>> {
    let e: Vec<f64> = sol.states.iter().map(|u| half_energy(grid, u)).collect();
    let n = e.len();
    (0..n)
        .map(|i| {
            if i == 0 || i + 1 >= n {
                return None;
            }
            let dt = sol.times[i + 1] - sol.times[i - 1];
            let de = (e[i + 1] - e[i - 1]) / dt;
            Some((de + heat_dissipation(grid, &sol.states[i])).abs())
        })
        .collect()
}

/// Time series of norms and diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SolveReport {
    pub p: f64,
    pub times: Vec<f64>,
    pub u_l2: Vec<f64>,
    pub u_lp: Vec<f64>,
    pub au_l2: Vec<f64>,
    pub au_lp: Vec<f64>,
    pub ut_l2: Vec<f64>,
    pub ut_lp: Vec<f64>,
    pub f_l2: Vec<f64>,
    pub f_lp: Vec<f64>,
    /// Only meaningful for unforced runs.
    pub dissipation_residual: Vec<Option<f64>>,
    /// `(‖U_t‖_p + ‖AU‖_p)/‖F‖_p` per node where `F ≠ 0`.
    pub max_reg_ratio_nodal: Vec<Option<f64>>,
    /// Space-time ratio over the whole window (forced runs).
    pub max_reg_ratio: Option<f64>,
}

pub fn solve_report(grid: &Grid, sol: &LinearSolution, forcing: &Forcing, p: f64) -> Result<SolveReport> {
    let n2 = nodal_norms(grid, sol, forcing, 2.0)?;
    let np = nodal_norms(grid, sol, forcing, p)?;
    let dt = if sol.times.len() > 1 {
        sol.times[1] - sol.times[0]
    } else {
        1.0
    };
    let ratio = |ut: f64, au: f64, f: f64| (f > 0.0).then(|| (ut + au) / f);
    let max_reg_ratio = ratio(
        time_lp(&np.ut, dt, p),
        time_lp(&np.au, dt, p),
        time_lp(&np.f, dt, p),
    );
    let nodal = (0..sol.states.len())
        .map(|i| ratio(np.ut[i], np.au[i], np.f[i]))
        .collect();
    let dissipation_residual = if forcing.is_zero() {
        dissipation_residual(grid, sol)
    } else {
        vec![None; sol.states.len()]
    };
    Ok(SolveReport {
        p,
        times: sol.times.clone(),
        u_l2: n2.u,
        u_lp: np.u,
        au_l2: n2.au,
        au_lp: np.au,
        ut_l2: n2.ut,
        ut_lp: np.ut,
        f_l2: n2.f,
        f_lp: np.f,
        dissipation_residual,
        max_reg_ratio_nodal: nodal,
        max_reg_ratio,
    })
}

/// `(sM)⁻¹F̂` per mode; the zero mode must carry no forcing.
pub fn steady_state(grid: &Grid, forcing: &CoeffField) -> Result<CoeffField> {
    forcing.check(grid)?;
    let minv = crate::symbol::CouplingMatrix.as_mat3().inverse().expect("det M = 1");
    let mut out = CoeffField::zeros(grid);
    for (m, &s) in grid.zeta_sq().iter().enumerate() {
        let f = forcing.mode(m);
        if s > 0.0 {
            let v = minv.mul_vec(&f);
            out.set_mode(m, [v[0] / s, v[1] / s, v[2] / s]);
        } else if vec_norm(&f) > 0.0 {
            return Err(Error::ZeroModeNotInvertible { magnitude: vec_norm(&f) });
        }
    }
    Ok(out)
}

/// Stepping with constant forcing until `‖U_t‖_{L²} < tol` or `max_steps`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SteadyRun {
    pub dt: f64,
    pub times: Vec<f64>,
    /// `‖U(t) − U_∞‖_{L²}` per node.
    pub distance: Vec<f64>,
    pub converged: bool,
    pub final_state: CoeffField,
}

pub fn run_to_steady(
    grid: &Grid,
    u0: &CoeffField,
    forcing: &CoeffField,
    dt: f64,
    max_steps: usize,
    tol: f64,
) -> Result<SteadyRun> {
    let target = steady_state(grid, forcing)?;
    let steppers: Vec<ModeStepper> = grid.zeta_sq().iter().map(|&s| ModeStepper::new(s, dt)).collect();
    let mut u = u0.clone();
    let mut times = vec![0.0];
    let mut distance = vec![u.sub(&target).l2_norm(grid)];
    let mut converged = false;
    for n in 0..max_steps {
        let mut next = CoeffField::zeros(grid);
        for (m, st) in steppers.iter().enumerate() {
            let f = forcing.mode(m);
            next.set_mode(m, st.step(&u.mode(m), &f, &f));
        }
        u = next;
        times.push((n + 1) as f64 * dt);
        distance.push(u.sub(&target).l2_norm(grid));
        let ut = forcing.sub(&apply_a(grid, &u)).l2_norm(grid);
        if ut < tol {
            converged = true;
            break;
        }
    }
    Ok(SteadyRun {
        dt,
        times,
        distance,
        converged,
        final_state: u,
    })
}

/// Least-squares slope of `log y` against `t` over entries with `y > floor`.
pub fn log_slope(t: &[f64], y: &[f64], floor: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = t
        .iter()
        .zip(y)
        .filter(|(_, &v)| v > floor)
        .map(|(&a, &v)| (a, v.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let num: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    (den > 0.0).then(|| num / den)
}

/// Discrete `W^{2−2/p}` proxy `(w Σ ((1+|ζ|²)^{(1−1/p)}|Û|)^p)^{1/p}` standing in
/// for the trace-space norm of initial data.
pub fn trace_space_proxy(grid: &Grid, u0: &CoeffField, p: f64) -> f64 {
    let w = grid.parseval_weight();
    let order = 1.0 - 1.0 / p;
    let mut acc = 0.0;
    for (m, &s) in grid.zeta_sq().iter().enumerate() {
        let weight = (1.0 + s).powf(order);
        for c in 0..3 {
            acc += (weight * u0.comps[c][m].norm()).powf(p);
        }
    }
    (w * acc).powf(1.0 / p)
}

/// `t · sup_ζ |ζ|²‖Û(t,ζ)‖/‖Û₀(ζ)‖` for the free flow, over modes with
/// nonzero initial data.
pub fn smoothing_constant(grid: &Grid, u0: &CoeffField, t: f64) -> f64 {
    let mut sup: f64 = 0.0;
    for (m, &s) in grid.zeta_sq().iter().enumerate() {
        let v = u0.mode(m);
        let n0 = vec_norm(&v);
        if n0 == 0.0 {
            continue;
        }
        let ut = propagate_sq(&v, s, t);
        sup = sup.max(s * vec_norm(&ut) / n0);
    }
    t * sup
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainSpec;
    use crate::linalg::Mat3;
    use crate::oracles;
    use crate::symbol::CouplingMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid2(n: usize) -> Grid {
        Grid::from_domain(&DomainSpec::box_domain(2, n)).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng) -> Vec3 {
        [0, 1, 2].map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn single_mode(grid: &Grid, labels: &[i64], v: Vec3) -> CoeffField {
        let mut u = CoeffField::zeros(grid);
        u.set_mode(grid.find_mode(labels).unwrap(), v);
        u
    }

    #[test]
    fn propagator_identities() {
        let v = [C64::new(1.0, 2.0), C64::new(-0.5, 0.0), C64::new(0.0, 3.0)];
        assert_eq!(propagate_mode(&v, &[1.0, 2.0], 0.0).unwrap(), v);
        assert_eq!(propagate_mode(&v, &[0.0, 0.0], 7.0).unwrap(), v);
        assert!(propagate_mode(&v, &[1.0], -1.0).is_err());
    }

    #[test]
    fn propagator_matches_expm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = rand_vec(&mut rng);
        let got = propagate_mode(&v, &[0.6, 0.8], 0.3).unwrap();
        let want = oracles::expm(&CouplingMatrix.as_mat3().scale_real(-0.3)).mul_vec(&v);
        let err = vec_norm(&crate::linalg::vec_sub(&got, &want));
        assert!(err <= 1e-10 * vec_norm(&want));
    }

    #[test]
    fn phi_series_and_closed_form_agree() {
        for x in [C64::new(0.49, 0.0), C64::new(0.3, 0.35), C64::new(-0.45, 0.1)] {
            let (a, b) = phi_functions(x);
            let e = x.exp();
            assert!((a - (e - 1.0) / x).norm() < 1e-14);
            assert!((b - (e - 1.0 - x) / (x * x)).norm() < 1e-12);
        }
        let (a, b) = phi_functions(ZERO);
        assert_eq!((a, b), (ONE, C64::new(0.5, 0.0)));
    }

    #[test]
    fn unforced_solve_matches_propagator() {
        let g = grid2(4);
        let v = [C64::new(1.0, 0.0), C64::new(0.5, 0.0), C64::new(-0.2, 0.0)];
        let u0 = single_mode(&g, &[1, 2], v);
        let time = TimeGrid::new(0.5, 10).unwrap();
        let sol = solve_linear(&g, &u0, &Forcing::Zero, &time).unwrap();
        let m = g.find_mode(&[1, 2]).unwrap();
        for (n, u) in sol.states.iter().enumerate() {
            let want = propagate_sq(&v, 5.0, time.time(n));
            assert!(vec_norm(&crate::linalg::vec_sub(&u.mode(m), &want)) < 1e-13);
        }
    }

    #[test]
    fn semigroup_property() {
        let g = grid2(6);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut u0 = CoeffField::zeros(&g);
        for m in 0..g.n_modes() {
            u0.set_mode(m, rand_vec(&mut rng).map(|c| C64::new(c.re, 0.0)));
        }
        let whole = solve_linear(&g, &u0, &Forcing::Zero, &TimeGrid::new(0.7, 7).unwrap()).unwrap();
        let first = solve_linear(&g, &u0, &Forcing::Zero, &TimeGrid::new(0.3, 3).unwrap()).unwrap();
        let second = solve_linear(&g, first.last(), &Forcing::Zero, &TimeGrid::new(0.4, 4).unwrap()).unwrap();
        let diff = whole.last().sub(second.last()).max_abs();
        assert!(diff <= 1e-11 * u0.max_abs(), "{diff}");
    }

    #[test]
    fn manufactured_solution_second_order() {
        let g = grid2(4);
        let labels = [1, 1];
        let m = g.find_mode(&labels).unwrap();
        let s = g.zeta_sq()[m];
        let v = [C64::new(1.0, 0.0), C64::new(-0.5, 0.0), C64::new(0.25, 0.0)];
        let exact = |t: f64| v.map(|c| c * (-t).exp());
        let t_end = 0.05;
        let err_at = |n: usize| {
            let time = TimeGrid::new(t_end, n).unwrap();
            let samples = (0..=n)
                .map(|i| {
                    let t = time.time(i);
                    let u = exact(t);
                    let au = apply_symbol(s, &u);
                    single_mode(&g, &labels, [0, 1, 2].map(|c| au[c] - u[c]))
                })
                .collect();
            let sol = solve_linear(&g, &single_mode(&g, &labels, v), &Forcing::Samples(samples), &time).unwrap();
            (0..=n)
                .map(|i| vec_norm(&crate::linalg::vec_sub(&sol.states[i].mode(m), &exact(time.time(i)))))
                .fold(0.0, f64::max)
                / vec_norm(&v)
        };
        let e64 = err_at(64);
        let e128 = err_at(128);
        assert!(e64 <= 1e-8, "{e64}");
        let order = (e64 / e128).log2();
        assert!((order - 2.0).abs() < 0.2, "order {order}");
    }

    #[test]
    fn constant_forcing_reaches_steady_state() {
        let g = grid2(4);
        let f = single_mode(&g, &[1, 1], [ZERO, C64::new(1.0, 0.0), ZERO]);
        let run = run_to_steady(&g, &CoeffField::zeros(&g), &f, 0.05, 100_000, 1e-10).unwrap();
        assert!(run.converged);
        let target = steady_state(&g, &f).unwrap();
        let m = g.find_mode(&[1, 1]).unwrap();
        let direct = oracles::nalgebra_inverse(&CouplingMatrix.as_mat3().scale_real(2.0)).mul_vec(&f.mode(m));
        assert!(vec_norm(&crate::linalg::vec_sub(&target.mode(m), &direct)) < 1e-14);
        assert!(run.final_state.sub(&target).max_abs() < 1e-9);
    }

    #[test]
    fn dissipation_identity_per_mode() {
        // d/dt ½|Û|² = −s|Û₃|² along the exact flow; derivative of e^{−tsM}
        // is −sM e^{−tsM}
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let v = rand_vec(&mut rng);
            let s = rng.gen_range(0.1..20.0);
            let t = rng.gen_range(0.0..1.0);
            let u = propagate_sq(&v, s, t);
            let du = apply_symbol(s, &u).map(|c| -c);
            let lhs: f64 = (0..3).map(|i| (u[i].conj() * du[i]).re).sum();
            let rhs = -s * u[2].norm_sqr();
            assert!((lhs - rhs).abs() <= 1e-8 * vec_norm(&v).powi(2).max(1.0));
        }
    }

    #[test]
    fn dissipation_residual_second_order() {
        let g = grid2(8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut u0 = CoeffField::zeros(&g);
        for m in 0..g.n_modes() {
            if g.zeta_sq()[m] <= 8.0 {
                u0.set_mode(m, rand_vec(&mut rng).map(|c| C64::new(c.re, 0.0)));
            }
        }
        let worst = |n: usize| {
            let sol = solve_linear(&g, &u0, &Forcing::Zero, &TimeGrid::new(0.2, n).unwrap()).unwrap();
            dissipation_residual(&g, &sol).into_iter().flatten().fold(0.0, f64::max)
        };
        let (a, b) = (worst(50), worst(100));
        let order = (a / b).log2();
        assert!((order - 2.0).abs() < 0.2, "order {order}");
    }

    #[test]
    fn dissipation_residual_small_when_theta_starts_at_zero() {
        let g = grid2(4);
        let u0 = single_mode(&g, &[1, 1], [C64::new(1.0, 0.0), C64::new(0.3, 0.0), ZERO]);
        let fine = solve_linear(&g, &u0, &Forcing::Zero, &TimeGrid::new(0.02, 20).unwrap()).unwrap();
        let coarse = solve_linear(&g, &u0, &Forcing::Zero, &TimeGrid::new(0.02, 10).unwrap()).unwrap();
        let r_fine = dissipation_residual(&g, &fine)[1].unwrap();
        let r_coarse = dissipation_residual(&g, &coarse)[1].unwrap();
        assert!(r_fine < 1e-3 && r_coarse / r_fine > 3.0, "{r_coarse} {r_fine}");
    }

    #[test]
    fn norm_is_nonincreasing() {
        let g = grid2(8);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut u0 = CoeffField::zeros(&g);
        for m in 0..g.n_modes() {
            u0.set_mode(m, rand_vec(&mut rng).map(|c| C64::new(c.re, 0.0)));
        }
        let sol = solve_linear(&g, &u0, &Forcing::Zero, &TimeGrid::new(1.0, 50).unwrap()).unwrap();
        let norms: Vec<f64> = sol.states.iter().map(|u| u.l2_norm(&g)).collect();
        assert!(norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-14)));
    }

    #[test]
    fn max_reg_ratio_single_mode_closed_form() {
        // F = f on one mode: U_t = e^{−tsM}f and AU = (I − e^{−tsM})f; p = 2
        // norms integrate exactly through the eigen-decomposition.
        let g = grid2(4);
        let labels = [1, 2];
        let m = g.find_mode(&labels).unwrap();
        let s = g.zeta_sq()[m];
        let f = [C64::new(1.0, 0.0), C64::new(-2.0, 0.0), C64::new(0.5, 0.0)];
        let t_end = 1.0;
        let time = TimeGrid::new(t_end, 4000).unwrap();
        let forcing = Forcing::Constant(single_mode(&g, &labels, f));
        let ratio = max_reg_ratio(&g, &forcing, 2.0, &time).unwrap();

        let eig = eigen_decompose_m();
        let c = eig.inverse.mul_vec(&f);
        let v = |i: usize| eig.vectors.column(i);
        // ∫₀ᵀ |Σ cᵢvᵢe^{−tsλᵢ}|² dt
        let gram = |weights: &dyn Fn(usize, usize) -> C64| {
            let mut acc = ZERO;
            for i in 0..3 {
                for j in 0..3 {
                    let ip: C64 = (0..3).map(|k| v(i)[k].conj() * v(j)[k]).sum();
                    acc += c[i].conj() * c[j] * ip * weights(i, j);
                }
            }
            acc.re
        };
        let integral = |mu: C64| {
            if mu.norm() == 0.0 {
                C64::new(t_end, 0.0)
            } else {
                (ONE - (-mu * t_end).exp()) / mu
            }
        };
        let lam = eig.values;
        let ut2 = gram(&|i, j| integral((lam[i].conj() + lam[j]) * s));
        // |(I − e^{−tsM})f|² = |f|² − 2Re⟨f, e^{−tsM}f⟩ + |e^{−tsM}f|²
        let cross: f64 = (0..3)
            .map(|j| {
                let ip: C64 = (0..3).map(|k| f[k].conj() * v(j)[k]).sum();
                (ip * c[j] * integral(lam[j] * s)).re
            })
            .sum();
        let f2 = vec_norm(&f).powi(2);
        let au2 = f2 * t_end - 2.0 * cross + ut2;
        let w = g.parseval_weight();
        let expected = ((w * ut2).sqrt() + (w * au2).sqrt()) / (w * f2 * t_end).sqrt();
        assert!((ratio - expected).abs() <= 1e-6 * expected, "{ratio} vs {expected}");
    }

    #[test]
    fn max_reg_ratio_rejects_zero_forcing() {
        let g = grid2(4);
        let f = Forcing::Constant(CoeffField::zeros(&g));
        assert!(matches!(
            max_reg_ratio(&g, &f, 2.0, &TimeGrid::new(1.0, 4).unwrap()),
            Err(Error::ZeroForcing)
        ));
    }

    #[test]
    fn trace_proxy_weights_high_modes() {
        let g = grid2(4);
        let low = single_mode(&g, &[1, 1], [ONE, ZERO, ZERO]);
        let high = single_mode(&g, &[4, 4], [ONE, ZERO, ZERO]);
        assert!(trace_space_proxy(&g, &high, 2.0) > trace_space_proxy(&g, &low, 2.0));
    }

    #[test]
    fn symbol_step_matrices_are_real() {
        let st = ModeStepper::new(3.0, 0.1);
        let e = oracles::expm(&CouplingMatrix.as_mat3().scale_real(-0.3));
        assert!((Mat3::from_real(st.exp) - e).max_abs() < 1e-13);
    }

    proptest! {
        #[test]
        fn max_reg_ratio_is_scale_invariant(seed in 0u64..200, c in 0.01f64..100.0) {
            let g = grid2(4);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let time = TimeGrid::new(0.5, 10).unwrap();
            let samples: Vec<CoeffField> = (0..=10).map(|_| {
                let mut f = CoeffField::zeros(&g);
                for m in 0..g.n_modes() {
                    f.set_mode(m, rand_vec(&mut rng).map(|z| C64::new(z.re, 0.0)));
                }
                f
            }).collect();
            let scaled: Vec<CoeffField> = samples.iter().map(|f| f.scale(c)).collect();
            let a = max_reg_ratio(&g, &Forcing::Samples(samples), 2.0, &time).unwrap();
            let b = max_reg_ratio(&g, &Forcing::Samples(scaled), 2.0, &time).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a);
        }
    }
}
