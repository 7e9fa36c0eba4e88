//! Recovery of `(u, u_t, θ)` from `U = (Δu, u_t, θ)` and residuals of the
//! original second-order plate system.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{CoeffField, Grid};
use crate::linalg::C64;
use crate::linear::LinearSolution;
use crate::nonlinear::CubicTerm;

#[derive(Clone, Debug, PartialEq)]
pub struct Recovered {
    pub u: Vec<C64>,
    pub u_t: Vec<C64>,
    pub theta: Vec<C64>,
}

pub fn recover(grid: &Grid, field: &CoeffField) -> Result<Recovered> {
    field.check(grid)?;
    Ok(Recovered {
        u: grid.dirichlet_inverse_laplacian(&field.comps[0])?,
        u_t: field.comps[1].clone(),
        theta: field.comps[2].clone(),
    })
}

/// Inverse of [`recover`].
pub fn to_system(grid: &Grid, r: &Recovered) -> Result<CoeffField> {
    CoeffField::from_comps(grid, [grid.laplacian(&r.u), r.u_t.clone(), r.theta.clone()])
}

pub fn recover_trajectory(grid: &Grid, solution: &LinearSolution) -> Result<Vec<Recovered>> {
    solution.states.par_iter().map(|u| recover(grid, u)).collect()
}

/// Forcings of the original system, sampled on the trajectory's nodes.
#[derive(Clone, Debug, Default)]
pub struct OriginalForcing {
    pub g: Option<Vec<Vec<C64>>>,
    pub h: Option<Vec<Vec<C64>>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualSeries {
    pub times: Vec<f64>,
    /// `‖u_tt + Δ²u + Δθ + aΔ(Δu)³ − g‖`, absent at the end nodes.
    pub r1: Vec<Option<f64>>,
    /// `‖θ_t − Δθ − Δu_t − h‖`, absent at the end nodes.
    pub r2: Vec<Option<f64>>,
}

impl ResidualSeries {
    pub fn max_r1(&self) -> f64 {
        self.r1.iter().flatten().copied().fold(0.0, f64::max)
    }

    pub fn max_r2(&self) -> f64 {
        self.r2.iter().flatten().copied().fold(0.0, f64::max)
    }
}

/// Residuals of the original equations at interior nodes. `u_tt` is the
/// centered difference of `u_t`, `θ_t` the centered difference of `θ`.
pub fn residual_original(
    grid: &Grid,
    times: &[f64],
    traj: &[Recovered],
    forcing: &OriginalForcing,
    a: f64,
    dealias_factor: usize,
) -> Result<ResidualSeries> {
    let n = times.len();
    if traj.len() != n {
        return Err(Error::shape("backtransform", &[n], &[traj.len()]));
    }
    let nm = grid.n_modes();
    for r in traj {
        for c in [&r.u, &r.u_t, &r.theta] {
            if c.len() != nm {
                return Err(Error::shape("backtransform", &grid.mode_shape(), &[c.len()]));
            }
        }
    }
    for f in [&forcing.g, &forcing.h].into_iter().flatten() {
        if f.len() != n || f.iter().any(|v| v.len() != nm) {
            return Err(Error::invalid("backtransform", "forcing samples do not match the trajectory"));
        }
    }
    let cubic = CubicTerm::new(grid, a, dealias_factor)?;
    let s = grid.zeta_sq();
    let rows: Vec<Result<Option<(f64, f64)>>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if i == 0 || i + 1 == n {
                return Ok(None);
            }
            let span = times[i + 1] - times[i - 1];
            let (prev, cur, next) = (&traj[i - 1], &traj[i], &traj[i + 1]);
            let lap_u = grid.laplacian(&cur.u);
            let cube = if a == 0.0 { vec![C64::new(0.0, 0.0); nm] } else { cubic.cube(&lap_u)? };
            let mut r1 = Vec::with_capacity(nm);
            let mut r2 = Vec::with_capacity(nm);
            for m in 0..nm {
                let u_tt = (next.u_t[m] - prev.u_t[m]) / span;
                let theta_t = (next.theta[m] - prev.theta[m]) / span;
                let mut e1 = u_tt + cur.u[m] * (s[m] * s[m]) - cur.theta[m] * s[m] - cube[m] * (a * s[m]);
                let mut e2 = theta_t + cur.theta[m] * s[m] + cur.u_t[m] * s[m];
                if let Some(g) = &forcing.g {
                    e1 -= g[i][m];
                }
                if let Some(h) = &forcing.h {
                    e2 -= h[i][m];
                }
                r1.push(e1);
                r2.push(e2);
            }
            Ok(Some((grid.l2_norm_coeffs(&r1), grid.l2_norm_coeffs(&r2))))
        })
        .collect();
    let mut out = ResidualSeries {
        times: times.to_vec(),
        r1: Vec::with_capacity(n),
        r2: Vec::with_capacity(n),
    };
    for row in rows {
        let row = row?;
        out.r1.push(row.map(|r| r.0));
        out.r2.push(row.map(|r| r.1));
    }
    Ok(out)
}

/// Residuals of a trajectory of the first-order system.
pub fn residual_of_solution(
    grid: &Grid,
    solution: &LinearSolution,
    forcing: &OriginalForcing,
    a: f64,
    dealias_factor: usize,
) -> Result<ResidualSeries> {
    let traj = recover_trajectory(grid, solution)?;
    residual_original(grid, &solution.times, &traj, forcing, a, dealias_factor)
}
