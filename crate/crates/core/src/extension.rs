//! Odd reflection of Dirichlet fields to a periodic cell and the matching
//! restriction.
//!
//! A reflected sine axis of length `L` with `N` modes becomes a periodic axis
//! of length `2L` with `2(N+1)` points on `[0, 2L)`. Point `i ≤ N+1` keeps its
//! value, point `2(N+1) − i` receives the negated value, so the output is odd
//! about both `x = 0` and `x = L`. In coefficient space `b_k sin(kπx/L)` maps to
//! `−(i/2)b_k` at frequency `+k` and `(i/2)b_k` at `−k`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{unravel, Axis, AxisKind, CoeffField, Grid, PhysField};
use crate::linalg::{C64, ZERO};

/// Dirichlet values on a reflection plane above this magnitude are rejected.
pub const BOUNDARY_TOL: f64 = 1e-10;

/// Source axes to reflect. Only sine (Dirichlet) axes can be reflected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionPlan {
    pub axes: Vec<usize>,
}

impl ReflectionPlan {
    pub fn new(mut axes: Vec<usize>) -> Self {
        axes.sort_unstable();
        axes.dedup();
        ReflectionPlan { axes }
    }

    /// Reflect every sine axis of `grid`.
    pub fn all_sine(grid: &Grid) -> Self {
        Self::new(
            grid.axes()
                .iter()
                .enumerate()
                .filter(|(_, a)| a.kind == AxisKind::Sine)
                .map(|(i, _)| i)
                .collect(),
        )
    }

    pub fn validate(&self, source: &Grid) -> Result<()> {
        for &ax in &self.axes {
            match source.axes().get(ax) {
                Some(a) if a.kind == AxisKind::Sine => {}
                Some(_) => {
                    return Err(Error::invalid(
                        "extension",
                        format!("axis {ax} is periodic and cannot be reflected"),
                    ))
                }
                None => return Err(Error::invalid("extension", format!("no axis {ax}"))),
            }
        }
        Ok(())
    }

    fn reflects(&self, ax: usize) -> bool {
        self.axes.contains(&ax)
    }

    /// The doubled periodic grid.
    pub fn target(&self, source: &Grid) -> Result<Grid> {
        self.validate(source)?;
        let axes = source
            .axes()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                if self.reflects(i) {
                    Axis::periodic(2.0 * a.length, 2 * (a.modes + 1))
                } else {
                    *a
                }
            })
            .collect();
        Grid::new(axes)
    }
}

/// Source point and sign feeding target point `t` (`None` on reflection planes).
fn source_of(t: &[usize], source: &Grid, plan: &ReflectionPlan) -> Option<(Vec<usize>, f64)> {
    let mut idx = Vec::with_capacity(t.len());
    let mut sign = 1.0;
    for (ax, (&i, a)) in t.iter().zip(source.axes()).enumerate() {
        if plan.reflects(ax) {
            let m = a.modes + 1;
            if i == 0 || i == m {
                return None;
            }
            if i < m {
                idx.push(i);
            } else {
                idx.push(2 * m - i);
                sign = -sign;
            }
        } else {
            idx.push(i);
        }
    }
    Some((idx, sign))
}

fn check_boundary(values: &[f64], source: &Grid, plan: &ReflectionPlan) -> Result<()> {
    let shape = source.phys_shape();
    for (p, &v) in values.iter().enumerate() {
        if v.abs() <= BOUNDARY_TOL {
            continue;
        }
        let idx = unravel(p, &shape);
        for &ax in &plan.axes {
            if idx[ax] == 0 || idx[ax] == shape[ax] - 1 {
                return Err(Error::BoundaryViolation { axis: ax, value: v });
            }
        }
    }
    Ok(())
}

/// Odd extension of one scalar physical field.
pub fn odd_extend_scalar(values: &[f64], source: &Grid, plan: &ReflectionPlan) -> Result<(Grid, Vec<f64>)> {
    let target = plan.target(source)?;
    if values.len() != source.n_points() {
        return Err(Error::shape("extension", &source.phys_shape(), &[values.len()]));
    }
    check_boundary(values, source, plan)?;
    let src_shape = source.phys_shape();
    let tgt_shape = target.phys_shape();
    let out = (0..target.n_points())
        .map(|p| {
            let t = unravel(p, &tgt_shape);
            source_of(&t, source, plan).map_or(0.0, |(s, sign)| {
                sign * values[crate::grid::ravel(&s, &src_shape)]
            })
        })
        .collect();
    Ok((target, out))
}

pub fn odd_extend(field: &PhysField, source: &Grid, plan: &ReflectionPlan) -> Result<(Grid, PhysField)> {
    field.check(source)?;
    let mut target = None;
    let mut comps: [Vec<f64>; 3] = Default::default();
    for (c, vals) in field.comps.iter().enumerate() {
        let (g, ext) = odd_extend_scalar(vals, source, plan)?;
        comps[c] = ext;
        target = Some(g);
    }
    let target = target.expect("three components");
    Ok((
        target.clone(),
        PhysField {
            shape: target.phys_shape(),
            comps,
        },
    ))
}

/// Pointwise restriction of a scalar field on the extended grid.
pub fn restrict_scalar(values: &[f64], source: &Grid, plan: &ReflectionPlan) -> Result<Vec<f64>> {
    let target = plan.target(source)?;
    if values.len() != target.n_points() {
        return Err(Error::shape("extension", &target.phys_shape(), &[values.len()]));
    }
    let src_shape = source.phys_shape();
    let tgt_shape = target.phys_shape();
    Ok((0..source.n_points())
        .map(|p| values[crate::grid::ravel(&unravel(p, &src_shape), &tgt_shape)])
        .collect())
}

pub fn restrict(field: &PhysField, source: &Grid, plan: &ReflectionPlan) -> Result<PhysField> {
    let mut comps: [Vec<f64>; 3] = Default::default();
    for (c, vals) in field.comps.iter().enumerate() {
        comps[c] = restrict_scalar(vals, source, plan)?;
    }
    Ok(PhysField {
        shape: source.phys_shape(),
        comps,
    })
}

/// Coefficient-space form of the odd extension.
pub fn extend_coeffs_scalar(coeffs: &[C64], source: &Grid, plan: &ReflectionPlan) -> Result<(Grid, Vec<C64>)> {
    let target = plan.target(source)?;
    if coeffs.len() != source.n_modes() {
        return Err(Error::shape("extension", &source.mode_shape(), &[coeffs.len()]));
    }
    let mut out = vec![ZERO; target.n_modes()];
    let half_i = C64::new(0.0, 0.5);
    for (m, &b) in coeffs.iter().enumerate() {
        if b == ZERO {
            continue;
        }
        let labels = source.mode_index(m).labels;
        // each reflected axis splits the mode into ±k with weights ∓i/2
        let mut terms = vec![(labels, b)];
        for &ax in &plan.axes {
            terms = terms
                .into_iter()
                .flat_map(|(l, c)| {
                    let mut neg = l.clone();
                    neg[ax] = -neg[ax];
                    [(l, -c * half_i), (neg, c * half_i)]
                })
                .collect();
        }
        for (l, c) in terms {
            let f = target
                .find_mode(&l)
                .ok_or_else(|| Error::invalid("extension", format!("label {l:?} off target grid")))?;
            out[f] += c;
        }
    }
    Ok((target, out))
}

/// Project periodic coefficients onto the sine basis of `source`:
/// `b_k = i(c_k − c_{−k})` per reflected axis. Exact inverse of
/// [`extend_coeffs_scalar`] on its range.
pub fn restrict_coeffs_scalar(coeffs: &[C64], source: &Grid, plan: &ReflectionPlan) -> Result<Vec<C64>> {
    let target = plan.target(source)?;
    if coeffs.len() != target.n_modes() {
        return Err(Error::shape("extension", &target.mode_shape(), &[coeffs.len()]));
    }
    let i = C64::new(0.0, 1.0);
    (0..source.n_modes())
        .map(|m| {
            let labels = source.mode_index(m).labels;
            let mut terms = vec![(labels, C64::new(1.0, 0.0))];
            for &ax in &plan.axes {
                terms = terms
                    .into_iter()
                    .flat_map(|(l, w)| {
                        let mut neg = l.clone();
                        neg[ax] = -neg[ax];
                        [(l, w * i), (neg, -w * i)]
                    })
                    .collect();
            }
            let mut acc = ZERO;
            for (l, w) in terms {
                let f = target.find_mode(&l).ok_or_else(|| {
                    Error::invalid("extension", format!("label {l:?} off target grid"))
                })?;
                acc += w * coeffs[f];
            }
            Ok(acc)
        })
        .collect()
}

pub fn extend_coeffs(field: &CoeffField, source: &Grid, plan: &ReflectionPlan) -> Result<(Grid, CoeffField)> {
    field.check(source)?;
    let mut comps: [Vec<C64>; 3] = Default::default();
    let mut target = None;
    for (c, v) in field.comps.iter().enumerate() {
        let (g, e) = extend_coeffs_scalar(v, source, plan)?;
        comps[c] = e;
        target = Some(g);
    }
    let target = target.expect("three components");
    let out = CoeffField::from_comps(&target, comps)?;
    Ok((target, out))
}

pub fn restrict_coeffs(field: &CoeffField, source: &Grid, plan: &ReflectionPlan) -> Result<CoeffField> {
    let mut comps: [Vec<C64>; 3] = Default::default();
    for (c, v) in field.comps.iter().enumerate() {
        comps[c] = restrict_coeffs_scalar(v, source, plan)?;
    }
    CoeffField::from_comps(source, comps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::DomainSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn line(n: usize) -> Grid {
        Grid::from_domain(&DomainSpec::box_domain(1, n)).unwrap()
    }

    fn random_sine(grid: &Grid, seed: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..grid.n_modes())
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), 0.0))
            .collect()
    }

    #[test]
    fn sine_extends_to_sine() {
        let g = line(8);
        let plan = ReflectionPlan::new(vec![0]);
        for k in [1.0, 2.0] {
            let u: Vec<f64> = (0..g.n_points()).map(|i| (k * g.coordinates(i)[0]).sin()).collect();
            let u = u.iter().map(|v| if v.abs() < 1e-15 { 0.0 } else { *v }).collect::<Vec<_>>();
            let (t, e) = odd_extend_scalar(&u, &g, &plan).unwrap();
            assert_eq!(t.axes()[0].length, 2.0 * PI);
            for (p, v) in e.iter().enumerate() {
                assert!((v - (k * t.coordinates(p)[0]).sin()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn extension_has_only_sine_content() {
        let g = Grid::from_domain(&DomainSpec::box_domain(2, 6)).unwrap();
        let plan = ReflectionPlan::all_sine(&g);
        let b = random_sine(&g, 2);
        let u = g.inverse(&b).unwrap();
        let (t, e) = odd_extend_scalar(&u, &g, &plan).unwrap();
        // dense evaluation of the sine series on the extended grid
        for p in 0..t.n_points() {
            let x = t.coordinates(p);
            let mut direct = 0.0;
            for (m, c) in b.iter().enumerate() {
                let l = g.mode_index(m).labels;
                direct += c.re * (l[0] as f64 * x[0]).sin() * (l[1] as f64 * x[1]).sin();
            }
            assert!((e[p] - direct).abs() < 1e-12);
        }
        let c = t.forward(&e).unwrap();
        let (_, expected) = extend_coeffs_scalar(&b, &g, &plan).unwrap();
        for (a, b) in c.iter().zip(&expected) {
            assert!((a - b).norm() < 1e-13);
        }
        // odd in each direction: c(−k) = −c(k)
        for m in 0..t.n_modes() {
            let mut l = t.mode_index(m).labels;
            l[0] = -l[0];
            if let Some(f) = t.find_mode(&l) {
                assert!((c[m] + c[f]).norm() < 1e-13 || l[0] == -(t.axes()[0].modes as i64) / 2);
            }
        }
    }

    #[test]
    fn restriction_inverts_extension() {
        let g = Grid::from_domain(&DomainSpec::box_domain(2, 4)).unwrap();
        let plan = ReflectionPlan::all_sine(&g);
        let u = g.inverse(&random_sine(&g, 9)).unwrap();
        let u: Vec<f64> = u.iter().map(|v| if v.abs() < 1e-15 { 0.0 } else { *v }).collect();
        let (_, e) = odd_extend_scalar(&u, &g, &plan).unwrap();
        assert_eq!(restrict_scalar(&e, &g, &plan).unwrap(), u);
    }

    #[test]
    fn restriction_of_even_field_is_plain_sampling() {
        let g = line(4);
        let plan = ReflectionPlan::new(vec![0]);
        let t = plan.target(&g).unwrap();
        let even: Vec<f64> = (0..t.n_points()).map(|p| t.coordinates(p)[0].cos()).collect();
        let r = restrict_scalar(&even, &g, &plan).unwrap();
        for (i, v) in r.iter().enumerate() {
            assert_eq!(*v, g.coordinates(i)[0].cos());
        }
    }

    #[test]
    fn boundary_violation_detected() {
        let g = line(4);
        let mut u = vec![0.0; g.n_points()];
        u[2] = 1.0;
        let plan = ReflectionPlan::new(vec![0]);
        assert!(odd_extend_scalar(&u, &g, &plan).is_ok());
        u[0] = 1e-6;
        assert!(matches!(
            odd_extend_scalar(&u, &g, &plan),
            Err(Error::BoundaryViolation { axis: 0, .. })
        ));
    }

    #[test]
    fn periodic_axes_cannot_be_reflected() {
        let g = Grid::new(vec![Axis::periodic(1.0, 4)]).unwrap();
        assert!(ReflectionPlan::new(vec![0]).target(&g).is_err());
        assert!(ReflectionPlan::new(vec![3]).target(&g).is_err());
    }

    #[test]
    fn laplacian_commutes_with_extension() {
        let g = Grid::from_domain(&DomainSpec::box_domain(2, 6)).unwrap();
        let plan = ReflectionPlan::all_sine(&g);
        let b = random_sine(&g, 4);
        let (t, eb) = extend_coeffs_scalar(&b, &g, &plan).unwrap();
        let lhs = t.laplacian(&eb);
        let (_, rhs) = extend_coeffs_scalar(&g.laplacian(&b), &g, &plan).unwrap();
        for (a, b) in lhs.iter().zip(&rhs) {
            assert!((a - b).norm() <= 1e-12 * a.norm().max(1.0));
        }
    }

    proptest! {
        #[test]
        fn lp_norm_scales_by_power_of_two(seed in 0u64..500, p in prop::sample::select(vec![1.0f64, 2.0, 3.0, 4.0])) {
            let g = Grid::new(vec![Axis::sine(PI, 6), Axis::periodic(2.0, 4), Axis::sine(2.0, 4)]).unwrap();
            let plan = ReflectionPlan::all_sine(&g);
            let mut b = random_sine(&g, seed);
            g.band_limit(&mut b);
            let u: Vec<f64> = g.inverse(&b).unwrap();
            let (t, e) = odd_extend_scalar(&u, &g, &plan).unwrap();
            let ratio = t.lp_norm(&e, p) / g.lp_norm(&u, p);
            prop_assert!((ratio - 2f64.powf(2.0 / p)).abs() < 1e-12);
        }

        #[test]
        fn coefficient_round_trip(seed in 0u64..500) {
            let g = Grid::new(vec![Axis::sine(PI, 4), Axis::sine(3.0, 6)]).unwrap();
            let plan = ReflectionPlan::all_sine(&g);
            let b = random_sine(&g, seed);
            let (_, e) = extend_coeffs_scalar(&b, &g, &plan).unwrap();
            let back = restrict_coeffs_scalar(&e, &g, &plan).unwrap();
            for (x, y) in b.iter().zip(&back) {
                prop_assert!((x - y).norm() < 1e-14);
            }
        }
    }
}
