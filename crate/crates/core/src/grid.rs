//! Rectangular product domains and their mixed spectral transforms.
//!
//! Axis order is fixed: ℝ-directions (periodic surrogate of length `L_r`),
//! then (0,π) box directions, then half-space directions truncated to
//! `(0, L_h)`. Arrays are row-major with the last axis fastest.
//!
//! Sine axes with `N` modes carry `N + 2` physical points `x_i = iL/(N+1)`
//! including both Dirichlet endpoints; the coefficient convention is
//! `b_k = (2/L)∫₀ᴸ u sin(kπx/L) dx`, discretized exactly by the type-I DST,
//! so `sin(kπx/L)` has coefficient 1 at `k`. Periodic axes with `N` points use
//! `û_j = (1/N) Σ u_i e^{−2πi ij/N}` in FFT order, with `ζ = 2πj/L`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{C64, ZERO};

pub const DEFAULT_LENGTH_R: f64 = 8.0 * PI;
pub const DEFAULT_LENGTH_H: f64 = 8.0 * PI;

/// `ℝ^{n1} × (0,π)^{n2} × (0,∞)^{n3}` with truncation lengths and per-direction
/// mode counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    #[serde(default = "default_length_r")]
    pub l_r: f64,
    #[serde(default = "default_length_h")]
    pub l_h: f64,
    pub modes: Vec<usize>,
}

fn default_length_r() -> f64 {
    DEFAULT_LENGTH_R
}

fn default_length_h() -> f64 {
    DEFAULT_LENGTH_H
}

impl DomainSpec {
    /// `(0,π)^d` with `n` modes per direction.
    pub fn box_domain(dims: usize, n: usize) -> Self {
        DomainSpec {
            n1: 0,
            n2: dims,
            n3: 0,
            l_r: DEFAULT_LENGTH_R,
            l_h: DEFAULT_LENGTH_H,
            modes: vec![n; dims],
        }
    }

    pub fn dims(&self) -> usize {
        self.n1 + self.n2 + self.n3
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims() == 0 {
            return Err(Error::invalid("grid", "domain needs at least one direction"));
        }
        if self.modes.len() != self.dims() {
            return Err(Error::invalid(
                "grid",
                format!("{} mode counts for {} directions", self.modes.len(), self.dims()),
            ));
        }
        if let Some(&m) = self.modes.iter().find(|&&m| m < 4 || m % 2 != 0) {
            return Err(Error::invalid(
                "grid",
                format!("mode count {m} must be even and at least 4"),
            ));
        }
        if !(self.l_r > 0.0 && self.l_r.is_finite() && self.l_h > 0.0 && self.l_h.is_finite()) {
            return Err(Error::invalid("grid", "truncation lengths must be positive"));
        }
        Ok(())
    }

    pub fn axes(&self) -> Vec<Axis> {
        let mut axes = Vec::with_capacity(self.dims());
        let mut m = self.modes.iter().copied();
        for _ in 0..self.n1 {
            axes.push(Axis::periodic(self.l_r, m.next().unwrap_or(4)).centered());
        }
        for _ in 0..self.n2 {
            axes.push(Axis::sine(PI, m.next().unwrap_or(4)));
        }
        for _ in 0..self.n3 {
            axes.push(Axis::sine(self.l_h, m.next().unwrap_or(4)));
        }
        axes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum AxisKind {
    Periodic,
    Sine,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub kind: AxisKind,
    pub length: f64,
    pub modes: usize,
    /// Physical coordinate of point 0.
    pub origin: f64,
}

impl Axis {
    pub fn sine(length: f64, modes: usize) -> Self {
        Axis {
            kind: AxisKind::Sine,
            length,
            modes,
            origin: 0.0,
        }
    }

    pub fn periodic(length: f64, modes: usize) -> Self {
        Axis {
            kind: AxisKind::Periodic,
            length,
            modes,
            origin: 0.0,
        }
    }

    /// Periodic cell `[−L/2, L/2)`.
    pub fn centered(mut self) -> Self {
        self.origin = -0.5 * self.length;
        self
    }

    pub fn points(&self) -> usize {
        match self.kind {
            AxisKind::Sine => self.modes + 2,
            AxisKind::Periodic => self.modes,
        }
    }

    pub fn spacing(&self) -> f64 {
        match self.kind {
            AxisKind::Sine => self.length / (self.modes + 1) as f64,
            AxisKind::Periodic => self.length / self.modes as f64,
        }
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        self.origin + i as f64 * self.spacing()
    }

    /// Signed integer label of coefficient slot `slot`: `k = slot + 1` on sine
    /// axes, the FFT-ordered frequency on periodic axes (Nyquist reported as
    /// `−N/2`).
    pub fn label(&self, slot: usize) -> i64 {
        match self.kind {
            AxisKind::Sine => slot as i64 + 1,
            AxisKind::Periodic => {
                let n = self.modes as i64;
                let j = slot as i64;
                if j < n / 2 {
                    j
                } else {
                    j - n
                }
            }
        }
    }

    pub fn slot_of(&self, label: i64) -> Option<usize> {
        match self.kind {
            AxisKind::Sine => (1..=self.modes as i64).contains(&label).then(|| label as usize - 1),
            AxisKind::Periodic => {
                let n = self.modes as i64;
                (-n / 2..n / 2)
                    .contains(&label)
                    .then(|| label.rem_euclid(n) as usize)
            }
        }
    }

    pub fn is_nyquist(&self, slot: usize) -> bool {
        self.kind == AxisKind::Periodic && slot == self.modes / 2
    }

    pub fn wavenumber(&self, slot: usize) -> f64 {
        let label = self.label(slot) as f64;
        match self.kind {
            AxisKind::Sine => label * PI / self.length,
            AxisKind::Periodic => 2.0 * PI * label / self.length,
        }
    }

    /// Weight `w` in `∫|u|² = Σ w|û|²` for this axis.
    pub fn parseval_weight(&self) -> f64 {
        match self.kind {
            AxisKind::Sine => 0.5 * self.length,
            AxisKind::Periodic => self.length,
        }
    }
}

struct AxisPlan {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl AxisPlan {
    fn new(axis: &Axis) -> Self {
        let len = match axis.kind {
            AxisKind::Sine => 2 * (axis.modes + 1),
            AxisKind::Periodic => axis.modes,
        };
        let mut planner = FftPlanner::new();
        AxisPlan {
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
        }
    }
}

/// Discrete domain: axes, cached FFT plans and the `|ζ|²` table.
#[derive(Clone)]
pub struct Grid {
    axes: Vec<Axis>,
    plans: Arc<Vec<AxisPlan>>,
    zeta_sq: Arc<Vec<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid").field("axes", &self.axes).finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.axes == other.axes
    }
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::invalid("grid", "grid needs at least one axis"));
        }
        for a in &axes {
            if a.modes < 2 || !(a.length > 0.0) {
                return Err(Error::invalid("grid", format!("invalid axis {a:?}")));
            }
            if a.kind == AxisKind::Periodic && a.modes % 2 != 0 {
                return Err(Error::invalid("grid", "periodic axes need an even point count"));
            }
        }
        let plans = axes.iter().map(AxisPlan::new).collect();
        let mut grid = Grid {
            axes,
            plans: Arc::new(plans),
            zeta_sq: Arc::new(Vec::new()),
        };
        let table = (0..grid.n_modes())
            .map(|m| grid.zeta(m).iter().map(|z| z * z).sum())
            .collect();
        grid.zeta_sq = Arc::new(table);
        Ok(grid)
    }

    pub fn from_domain(spec: &DomainSpec) -> Result<Self> {
        spec.validate()?;
        Self::new(spec.axes())
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dims(&self) -> usize {
        self.axes.len()
    }

    pub fn mode_shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.modes).collect()
    }

    pub fn phys_shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.points()).collect()
    }

    pub fn n_modes(&self) -> usize {
        self.axes.iter().map(|a| a.modes).product()
    }

    pub fn n_points(&self) -> usize {
        self.axes.iter().map(|a| a.points()).product()
    }

    pub fn mode_slots(&self, flat: usize) -> Vec<usize> {
        unravel(flat, &self.mode_shape())
    }

    pub fn mode_flat(&self, slots: &[usize]) -> usize {
        ravel(slots, &self.mode_shape())
    }

    pub fn mode_index(&self, flat: usize) -> ModeIndex {
        let labels = self
            .mode_slots(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&s, a)| a.label(s))
            .collect();
        ModeIndex { labels }
    }

    /// Flat position of a mode given by its labels.
    pub fn find_mode(&self, labels: &[i64]) -> Option<usize> {
        if labels.len() != self.dims() {
            return None;
        }
        let slots: Option<Vec<usize>> = labels
            .iter()
            .zip(&self.axes)
            .map(|(&l, a)| a.slot_of(l))
            .collect();
        slots.map(|s| self.mode_flat(&s))
    }

    pub fn zeta(&self, flat: usize) -> Vec<f64> {
        self.mode_slots(flat)
            .iter()
            .zip(&self.axes)
            .map(|(&s, a)| a.wavenumber(s))
            .collect()
    }

    /// `|ζ|²` for every mode, flat order.
    pub fn zeta_sq(&self) -> &[f64] {
        &self.zeta_sq
    }

    pub fn laplacian_symbol(&self, mode: &ModeIndex) -> Result<f64> {
        let flat = self
            .find_mode(&mode.labels)
            .ok_or_else(|| Error::invalid("grid", format!("mode {:?} not on grid", mode.labels)))?;
        Ok(self.zeta_sq[flat])
    }

    /// True when some mode is a pure Nyquist/zero combination that a real
    /// field cannot represent faithfully; those slots are zeroed by
    /// [`Grid::band_limit`].
    pub fn is_nyquist_mode(&self, flat: usize) -> bool {
        self.mode_slots(flat)
            .iter()
            .zip(&self.axes)
            .any(|(&s, a)| a.is_nyquist(s))
    }

    /// Zero every coefficient that involves a periodic Nyquist slot.
    pub fn band_limit(&self, coeffs: &mut [C64]) {
        for (m, c) in coeffs.iter_mut().enumerate() {
            if self.is_nyquist_mode(m) {
                *c = ZERO;
            }
        }
    }

    pub fn coordinates(&self, point: usize) -> Vec<f64> {
        unravel(point, &self.phys_shape())
            .iter()
            .zip(&self.axes)
            .map(|(&i, a)| a.coordinate(i))
            .collect()
    }

    /// Quadrature weight of each grid point (product of axis spacings).
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(|a| a.spacing()).product()
    }

    pub fn parseval_weight(&self) -> f64 {
        self.axes.iter().map(|a| a.parseval_weight()).product()
    }

    /// Same axes with `factor` times as many modes (used for dealiasing).
    pub fn refined(&self, factor: usize) -> Result<Grid> {
        Grid::new(
            self.axes
                .iter()
                .map(|a| Axis {
                    modes: a.modes * factor,
                    ..*a
                })
                .collect(),
        )
    }

    pub fn forward(&self, values: &[f64]) -> Result<Vec<C64>> {
        let data: Vec<C64> = values.iter().map(|&v| C64::new(v, 0.0)).collect();
        self.forward_complex(&data)
    }

    pub fn forward_complex(&self, values: &[C64]) -> Result<Vec<C64>> {
        let shape = self.phys_shape();
        if values.len() != self.n_points() {
            return Err(Error::shape("grid", &shape, &[values.len()]));
        }
        let mut data = values.to_vec();
        let mut cur = shape;
        for (ax, axis) in self.axes.iter().enumerate() {
            let plan = &self.plans[ax];
            let (next, out) = map_axis(&data, &cur, ax, axis.modes, |line| {
                forward_line(axis, plan, line)
            });
            data = out;
            cur = next;
        }
        Ok(data)
    }

    pub fn inverse_complex(&self, coeffs: &[C64]) -> Result<Vec<C64>> {
        let shape = self.mode_shape();
        if coeffs.len() != self.n_modes() {
            return Err(Error::shape("grid", &shape, &[coeffs.len()]));
        }
        let mut data = coeffs.to_vec();
        let mut cur = shape;
        for (ax, axis) in self.axes.iter().enumerate() {
            let plan = &self.plans[ax];
            let (next, out) = map_axis(&data, &cur, ax, axis.points(), |line| {
                inverse_line(axis, plan, line)
            });
            data = out;
            cur = next;
        }
        Ok(data)
    }

    /// Physical values of a real field (imaginary parts discarded).
    pub fn inverse(&self, coeffs: &[C64]) -> Result<Vec<f64>> {
        Ok(self.inverse_complex(coeffs)?.iter().map(|c| c.re).collect())
    }

    /// Embed coefficients of `self` into the larger grid `fine` (same axes,
    /// more modes). Periodic Nyquist slots are dropped.
    pub fn pad_to(&self, coeffs: &[C64], fine: &Grid) -> Vec<C64> {
        let mut out = vec![ZERO; fine.n_modes()];
        for (m, &c) in coeffs.iter().enumerate() {
            if c == ZERO || self.is_nyquist_mode(m) {
                continue;
            }
            if let Some(f) = fine.find_mode(&self.mode_index(m).labels) {
                out[f] = c;
            }
        }
        out
    }

    /// Restrict coefficients on the larger grid `fine` back to `self`,
    /// zeroing periodic Nyquist slots.
    pub fn truncate_from(&self, fine_coeffs: &[C64], fine: &Grid) -> Vec<C64> {
        (0..self.n_modes())
            .map(|m| {
                if self.is_nyquist_mode(m) {
                    return ZERO;
                }
                fine.find_mode(&self.mode_index(m).labels)
                    .map_or(ZERO, |f| fine_coeffs[f])
            })
            .collect()
    }

    /// Discrete `L^p` norm of a scalar physical field.
    pub fn lp_norm(&self, values: &[f64], p: f64) -> f64 {
        let w = self.cell_volume();
        if p.is_infinite() {
            return values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        }
        (w * values.iter().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
    }

    /// `‖u‖_{L²}` computed from coefficients via Parseval.
    pub fn l2_norm_coeffs(&self, coeffs: &[C64]) -> f64 {
        (self.parseval_weight() * coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt()
    }

    /// `u ↦ Δ⁻¹u` with Dirichlet data: per-mode multiplication by `−1/|ζ|²`.
    pub fn dirichlet_inverse_laplacian(&self, coeffs: &[C64]) -> Result<Vec<C64>> {
        if coeffs.len() != self.n_modes() {
            return Err(Error::shape("grid", &self.mode_shape(), &[coeffs.len()]));
        }
        coeffs
            .iter()
            .zip(self.zeta_sq.iter())
            .map(|(&c, &s)| {
                if s > 0.0 {
                    Ok(c * (-1.0 / s))
                } else if c == ZERO {
                    Ok(ZERO)
                } else {
                    Err(Error::ZeroModeNotInvertible { magnitude: c.norm() })
                }
            })
            .collect()
    }

    /// Coefficient-space Laplacian: multiplication by `−|ζ|²`.
    pub fn laplacian(&self, coeffs: &[C64]) -> Vec<C64> {
        coeffs
            .iter()
            .zip(self.zeta_sq.iter())
            .map(|(&c, &s)| c * (-s))
            .collect()
    }
}

/// Integer frequency labels of one mode.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModeIndex {
    pub labels: Vec<i64>,
}

pub fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for d in (0..shape.len()).rev() {
        idx[d] = flat % shape[d];
        flat /= shape[d];
    }
    idx
}

pub fn ravel(idx: &[usize], shape: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Apply a line transform along `axis`, changing that axis length to `out_len`.
fn map_axis<F>(data: &[C64], shape: &[usize], axis: usize, out_len: usize, f: F) -> (Vec<usize>, Vec<C64>)
where
    F: Fn(&[C64]) -> Vec<C64> + Sync,
{
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let lines: Vec<Vec<C64>> = (0..outer * inner)
        .into_par_iter()
        .map(|l| {
            let (o, i) = (l / inner, l % inner);
            let base = o * n * inner + i;
            let line: Vec<C64> = (0..n).map(|k| data[base + k * inner]).collect();
            f(&line)
        })
        .collect();
    let mut out = vec![ZERO; outer * out_len * inner];
    for (l, line) in lines.iter().enumerate() {
        let (o, i) = (l / inner, l % inner);
        let base = o * out_len * inner + i;
        for (k, v) in line.iter().enumerate() {
            out[base + k * inner] = *v;
        }
    }
    let mut next = shape.to_vec();
    next[axis] = out_len;
    (next, out)
}

fn forward_line(axis: &Axis, plan: &AxisPlan, line: &[C64]) -> Vec<C64> {
    match axis.kind {
        AxisKind::Periodic => {
            let mut buf = line.to_vec();
            plan.forward.process(&mut buf);
            let inv = 1.0 / axis.modes as f64;
            buf.iter().map(|v| v * inv).collect()
        }
        AxisKind::Sine => {
            // odd extension of the interior values; Y_k = −2i Σ u_i sin(πik/(N+1))
            let n = axis.modes;
            let m = n + 1;
            let mut buf = vec![ZERO; 2 * m];
            for i in 1..=n {
                buf[i] = line[i];
                buf[2 * m - i] = -line[i];
            }
            plan.forward.process(&mut buf);
            let scale = C64::new(0.0, 1.0 / m as f64);
            (1..=n).map(|k| buf[k] * scale).collect()
        }
    }
}

fn inverse_line(axis: &Axis, plan: &AxisPlan, coeffs: &[C64]) -> Vec<C64> {
    match axis.kind {
        AxisKind::Periodic => {
            let mut buf = coeffs.to_vec();
            plan.inverse.process(&mut buf);
            buf
        }
        AxisKind::Sine => {
            let n = axis.modes;
            let m = n + 1;
            let mut buf = vec![ZERO; 2 * m];
            for k in 1..=n {
                buf[k] = coeffs[k - 1];
                buf[2 * m - k] = -coeffs[k - 1];
            }
            plan.inverse.process(&mut buf);
            // Σ_k z_k e^{+iπik/m} = 2i Σ b_k sin(πik/m)
            let scale = C64::new(0.0, -0.5);
            let mut out: Vec<C64> = buf[..=m].iter().map(|v| v * scale).collect();
            out[0] = ZERO;
            out[m] = ZERO;
            out
        }
    }
}

/// Three-component state `U = (U₁, U₂, U₃)` in coefficient space, flat mode order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoeffField {
    pub shape: Vec<usize>,
    pub comps: [Vec<C64>; 3],
}

impl CoeffField {
    pub fn zeros(grid: &Grid) -> Self {
        let n = grid.n_modes();
        CoeffField {
            shape: grid.mode_shape(),
            comps: [vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]],
        }
    }

    pub fn from_comps(grid: &Grid, comps: [Vec<C64>; 3]) -> Result<Self> {
        let n = grid.n_modes();
        for c in &comps {
            if c.len() != n {
                return Err(Error::shape("grid", &[n], &[c.len()]));
            }
        }
        Ok(CoeffField {
            shape: grid.mode_shape(),
            comps,
        })
    }

    pub fn check(&self, grid: &Grid) -> Result<()> {
        let shape = grid.mode_shape();
        if self.shape != shape || self.comps.iter().any(|c| c.len() != grid.n_modes()) {
            return Err(Error::shape("grid", &shape, &self.shape));
        }
        Ok(())
    }

    pub fn n_modes(&self) -> usize {
        self.comps[0].len()
    }

    /// `Û(ζ)` for one mode.
    pub fn mode(&self, m: usize) -> [C64; 3] {
        [self.comps[0][m], self.comps[1][m], self.comps[2][m]]
    }

    pub fn set_mode(&mut self, m: usize, v: [C64; 3]) {
        for (c, x) in self.comps.iter_mut().zip(v) {
            c[m] = x;
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.comps
            .iter_mut()
            .flatten()
            .for_each(|v| *v *= c);
        out
    }

    pub fn add(&self, other: &CoeffField) -> Self {
        let mut out = self.clone();
        for (a, b) in out.comps.iter_mut().zip(&other.comps) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        out
    }

    pub fn sub(&self, other: &CoeffField) -> Self {
        self.add(&other.scale(-1.0))
    }

    /// Euclidean norm over all coefficients (no Parseval weight).
    pub fn coeff_norm(&self) -> f64 {
        self.comps
            .iter()
            .flatten()
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.is_finite())
    }

    pub fn to_phys(&self, grid: &Grid) -> Result<PhysField> {
        self.check(grid)?;
        let comps = [
            grid.inverse(&self.comps[0])?,
            grid.inverse(&self.comps[1])?,
            grid.inverse(&self.comps[2])?,
        ];
        Ok(PhysField {
            shape: grid.phys_shape(),
            comps,
        })
    }

    /// `‖U‖_{L²}` via Parseval.
    pub fn l2_norm(&self, grid: &Grid) -> f64 {
        let w = grid.parseval_weight();
        (w * self.comps.iter().flatten().map(|v| v.norm_sqr()).sum::<f64>()).sqrt()
    }
}

/// Three-component state on the physical grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysField {
    pub shape: Vec<usize>,
    pub comps: [Vec<f64>; 3],
}

impl PhysField {
    pub fn zeros(grid: &Grid) -> Self {
        let n = grid.n_points();
        PhysField {
            shape: grid.phys_shape(),
            comps: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn from_fn<F: Fn(&[f64]) -> [f64; 3]>(grid: &Grid, f: F) -> Self {
        let mut out = Self::zeros(grid);
        for p in 0..grid.n_points() {
            let v = f(&grid.coordinates(p));
            for c in 0..3 {
                out.comps[c][p] = v[c];
            }
        }
        out
    }

    pub fn check(&self, grid: &Grid) -> Result<()> {
        let shape = grid.phys_shape();
        if self.shape != shape || self.comps.iter().any(|c| c.len() != grid.n_points()) {
            return Err(Error::shape("grid", &shape, &self.shape));
        }
        Ok(())
    }

    pub fn to_coeffs(&self, grid: &Grid) -> Result<CoeffField> {
        self.check(grid)?;
        Ok(CoeffField {
            shape: grid.mode_shape(),
            comps: [
                grid.forward(&self.comps[0])?,
                grid.forward(&self.comps[1])?,
                grid.forward(&self.comps[2])?,
            ],
        })
    }

    /// `(Σ_c ‖U_c‖_p^p)^{1/p}` with grid quadrature.
    pub fn lp_norm(&self, grid: &Grid, p: f64) -> f64 {
        if p.is_infinite() {
            return self.comps.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max);
        }
        let w = grid.cell_volume();
        (w * self.comps.iter().flatten().map(|v| v.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
    }

    pub fn max_abs_diff(&self, other: &PhysField) -> f64 {
        self.comps
            .iter()
            .flatten()
            .zip(other.comps.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `forward_transform` on a three-component field.
pub fn forward_transform(field: &PhysField, grid: &Grid) -> Result<CoeffField> {
    field.to_coeffs(grid)
}

/// `inverse_transform` on a three-component field.
pub fn inverse_transform(coeffs: &CoeffField, grid: &Grid) -> Result<PhysField> {
    coeffs.to_phys(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_box(dims: usize, n: usize) -> Grid {
        Grid::from_domain(&DomainSpec::box_domain(dims, n)).unwrap()
    }

    /// Direct-summation evaluation of the inverse transform at one point.
    fn direct_inverse(grid: &Grid, coeffs: &[C64], point: usize) -> C64 {
        let x = grid.coordinates(point);
        let mut acc = ZERO;
        for (m, &c) in coeffs.iter().enumerate() {
            let slots = grid.mode_slots(m);
            let mut basis = C64::new(1.0, 0.0);
            for ((a, &s), &xi) in grid.axes().iter().zip(&slots).zip(&x) {
                let z = a.wavenumber(s);
                basis *= match a.kind {
                    AxisKind::Sine => C64::new((z * (xi - a.origin)).sin(), 0.0),
                    AxisKind::Periodic => C64::from_polar(1.0, z * (xi - a.origin)),
                };
            }
            acc += c * basis;
        }
        acc
    }

    fn random_coeffs(grid: &Grid, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..grid.n_modes())
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn single_sine_mode() {
        let g = unit_box(1, 8);
        let f = PhysField::from_fn(&g, |x| [x[0].sin(), 0.0, 0.0]);
        let c = f.to_coeffs(&g).unwrap();
        assert!((c.comps[0][0] - C64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(c.comps[0][1..].iter().all(|v| v.norm() < 1e-14));
    }

    #[test]
    fn product_sine_mode() {
        let g = unit_box(2, 8);
        let f = PhysField::from_fn(&g, |x| [(2.0 * x[0]).sin() * (3.0 * x[1]).sin(), 0.0, 0.0]);
        let c = f.to_coeffs(&g).unwrap();
        let target = g.find_mode(&[2, 3]).unwrap();
        for (m, v) in c.comps[0].iter().enumerate() {
            let expect = if m == target { 1.0 } else { 0.0 };
            assert!((v - C64::new(expect, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn inverse_matches_direct_summation() {
        let mixed = Grid::new(vec![
            Axis::periodic(2.0 * PI, 8).centered(),
            Axis::sine(PI, 8),
        ])
        .unwrap();
        for g in [unit_box(2, 8), mixed] {
            let mut c = random_coeffs(&g, 7);
            g.band_limit(&mut c);
            let u = g.inverse_complex(&c).unwrap();
            for p in 0..g.n_points() {
                assert!((u[p] - direct_inverse(&g, &c, p)).norm() < 1e-12);
            }
            let back = g.forward_complex(&u).unwrap();
            let err = c.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err <= 1e-12, "{err}");
        }
    }

    #[test]
    fn real_coefficients_give_real_fields() {
        let g = unit_box(2, 8);
        let c: Vec<C64> = random_coeffs(&g, 3).iter().map(|v| C64::new(v.re, 0.0)).collect();
        let u = g.inverse_complex(&c).unwrap();
        assert!(u.iter().all(|v| v.im.abs() <= 1e-12));
    }

    #[test]
    fn parseval_holds() {
        let g = Grid::new(vec![Axis::periodic(8.0 * PI, 8).centered(), Axis::sine(PI, 6)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u: Vec<f64> = (0..g.n_points())
            .map(|p| {
                let i1 = p % g.axes()[1].points();
                if i1 == 0 || i1 == 7 {
                    0.0
                } else {
                    rng.gen_range(-1.0..1.0)
                }
            })
            .collect();
        let c = g.forward(&u).unwrap();
        let phys = g.lp_norm(&u, 2.0);
        let spec = g.l2_norm_coeffs(&c);
        assert!((phys - spec).abs() <= 1e-10 * phys);
    }

    #[test]
    fn laplacian_symbols() {
        let g = unit_box(1, 4);
        assert_eq!(g.laplacian_symbol(&ModeIndex { labels: vec![1] }).unwrap(), 1.0);
        let g2 = unit_box(2, 4);
        assert_eq!(g2.laplacian_symbol(&ModeIndex { labels: vec![2, 3] }).unwrap(), 13.0);
        let gp = Grid::new(vec![Axis::periodic(2.0 * PI, 16)]).unwrap();
        assert!((gp.laplacian_symbol(&ModeIndex { labels: vec![5] }).unwrap() - 25.0).abs() < 1e-12);
        assert!(g2.zeta_sq().iter().all(|&s| s >= 1.0));
    }

    #[test]
    fn inverse_laplacian_of_product_mode() {
        let g = unit_box(2, 4);
        let mut c = vec![ZERO; g.n_modes()];
        let m = g.find_mode(&[1, 1]).unwrap();
        c[m] = C64::new(-2.0, 0.0);
        let u = g.dirichlet_inverse_laplacian(&c).unwrap();
        assert!((u[m] - C64::new(1.0, 0.0)).norm() < 1e-15);
        let zero = g.dirichlet_inverse_laplacian(&vec![ZERO; g.n_modes()]).unwrap();
        assert!(zero.iter().all(|v| *v == ZERO));
    }

    #[test]
    fn zero_mode_is_rejected_iff_nonzero() {
        let g = Grid::new(vec![Axis::periodic(2.0 * PI, 8)]).unwrap();
        let mut c = random_coeffs(&g, 5);
        c[0] = ZERO;
        assert!(g.dirichlet_inverse_laplacian(&c).is_ok());
        c[0] = C64::new(1e-3, 0.0);
        assert!(matches!(
            g.dirichlet_inverse_laplacian(&c),
            Err(Error::ZeroModeNotInvertible { .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let g = unit_box(2, 4);
        assert!(matches!(g.forward(&[0.0; 5]), Err(Error::ShapeMismatch { .. })));
        let other = unit_box(2, 6);
        assert!(CoeffField::zeros(&other).to_phys(&g).is_err());
    }

    #[test]
    fn domain_validation() {
        let mut d = DomainSpec::box_domain(2, 4);
        assert!(d.validate().is_ok());
        d.modes[0] = 5;
        assert!(d.validate().is_err());
        d.modes = vec![4];
        assert!(d.validate().is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(seed in 0u64..1000, n in prop::sample::select(vec![4usize, 6, 8])) {
            let g = Grid::new(vec![Axis::periodic(8.0 * PI, n).centered(), Axis::sine(PI, n), Axis::sine(3.0, 4)]).unwrap();
            let mut c = random_coeffs(&g, seed);
            g.band_limit(&mut c);
            let back = g.forward_complex(&g.inverse_complex(&c).unwrap()).unwrap();
            let scale = c.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let err = c.iter().zip(&back).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-12 * scale);
        }

        #[test]
        fn inverse_laplacian_inverts_laplacian(seed in 0u64..1000) {
            let g = unit_box(2, 6);
            let c = random_coeffs(&g, seed);
            let back = g.laplacian(&g.dirichlet_inverse_laplacian(&c).unwrap());
            for (a, b) in c.iter().zip(&back) {
                prop_assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0));
            }
        }
    }
}
