//! Local extrema of gridded functions.
//!
//! Extrema are read off sign changes of consecutive first differences. The
//! reported location is refined below grid resolution: the parabola through
//! the three samples around the turning point picks the side, and the
//! stationary point of the cubic through four samples leaning that way gives
//! the location (exact when `f` is a cubic). The refined location stays
//! within one grid spacing of the turning grid point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::func::Curve;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtremumKind {
    #[serde(rename = "max")]
    LocalMax,
    #[serde(rename = "min")]
    LocalMin,
}

impl ExtremumKind {
    pub fn flipped(self) -> Self {
        match self {
            ExtremumKind::LocalMax => ExtremumKind::LocalMin,
            ExtremumKind::LocalMin => ExtremumKind::LocalMax,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ExtremumKind::LocalMax => "max",
            ExtremumKind::LocalMin => "min",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub location: f64,
    pub kind: ExtremumKind,
    pub value: f64,
    pub grid_index: usize,
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(Error::InvalidArgument(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    /// `ε`-neighbourhood `[center − ε, center + ε]`.
    pub fn around(center: f64, eps: f64) -> Result<Self> {
        Self::new(center - eps, center + eps)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Errors unless the interval lies inside `[a, b]`.
    pub fn check_within(&self, a: f64, b: f64) -> Result<()> {
        if self.lo < a || self.hi > b {
            return Err(Error::InvalidArgument(format!(
                "interval [{}, {}] lies outside the domain [{a}, {b}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Interval {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl std::str::FromStr for Interval {
    type Err = Error;

    /// Parses `lo:hi`.
    fn from_str(s: &str) -> Result<Self> {
        let (lo, hi) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidArgument(format!("expected lo:hi, got `{s}`")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("`{t}` is not a number")))
        };
        Interval::new(parse(lo)?, parse(hi)?)
    }
}

/// Local extrema of `f` strictly inside `[a + margin, b − margin]`.
pub fn find_extrema(f: &Curve, margin: f64) -> Result<Vec<CriticalPoint>> {
    let grid = f.grid();
    let h = grid.spacing().ok_or(Error::NonUniformGrid)?;
    let (a, b) = (grid.start(), grid.end());
    if !(margin >= 0.0 && 2.0 * margin < b - a) {
        return Err(Error::InvalidArgument(format!(
            "margin {margin} must be nonnegative and less than half the domain"
        )));
    }
    let x = grid.points();
    let v = f.values();
    let slack = 1e-9 * h;
    let first = x.partition_point(|&p| p < a + margin - slack);
    let last = x.partition_point(|&p| p <= b - margin + slack);
    if last < first + 3 {
        return Ok(Vec::new());
    }

    let mut out = Vec::new();
    // (sign, index of the difference) of the last nonzero difference seen
    let mut prev: Option<(f64, usize)> = None;
    for i in first..last - 1 {
        let d = v[i + 1] - v[i];
        if d == 0.0 {
            continue;
        }
        let sign = d.signum();
        if let Some((prev_sign, prev_i)) = prev {
            if sign != prev_sign {
                let kind = if prev_sign > 0.0 {
                    ExtremumKind::LocalMax
                } else {
                    ExtremumKind::LocalMin
                };
                let start = prev_i + 1;
                let (location, grid_index) = if start == i {
                    (x[i] + h * refine(v, i), i)
                } else {
                    (0.5 * (x[start] + x[i]), (start + i) / 2)
                };
                out.push(CriticalPoint {
                    location,
                    kind,
                    value: v[grid_index],
                    grid_index,
                });
            }
        }
        prev = Some((sign, i));
    }
    Ok(out)
}

/// Offset, in grid spacings, of the stationary point near the turning
/// sample `i` (which has neighbours on both sides).
fn refine(v: &[f64], i: usize) -> f64 {
    let (left, right) = (v[i] - v[i - 1], v[i + 1] - v[i]);
    let parabola = 0.5 * (left + right) / (left - right);
    // four-point stencil t0..t3 (offsets from i) leaning towards the vertex
    let t0: isize = if parabola < 0.0 { -2 } else { -1 };
    let lo = i as isize + t0;
    if lo < 0 || lo + 3 >= v.len() as isize {
        return parabola;
    }
    let f = |k: isize| v[(lo + k) as usize];
    // Newton divided differences on unit spacing, computed from differences
    let d1 = [f(1) - f(0), f(2) - f(1), f(3) - f(2)];
    let d2 = [d1[1] - d1[0], d1[2] - d1[1]];
    let (a1, a2, a3) = (d1[0], 0.5 * d2[0], (d2[1] - d2[0]) / 6.0);
    let (s0, s1, s2) = (t0 as f64, t0 as f64 + 1.0, t0 as f64 + 2.0);
    // p'(t) = A t² + B t + C
    let qa = 3.0 * a3;
    let qb = 2.0 * a2 - 2.0 * a3 * (s0 + s1 + s2);
    let qc = a1 - a2 * (s0 + s1) + a3 * (s1 * s2 + s0 * s2 + s0 * s1);
    let roots: Vec<f64> = if qa.abs() <= 1e-12 * (qb.abs() + qc.abs()) {
        if qb != 0.0 { vec![-qc / qb] } else { Vec::new() }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 {
            Vec::new()
        } else {
            let q = -0.5 * (qb + qb.signum() * disc.sqrt());
            let mut r = vec![q / qa];
            if q != 0.0 {
                r.push(qc / q);
            }
            r
        }
    };
    roots
        .into_iter()
        .filter(|t| t.abs() <= 1.0)
        .min_by(|a, b| (a - parabola).abs().total_cmp(&(b - parabola).abs()))
        .unwrap_or(parabola)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IntervalCount {
    pub nu: usize,
    pub max_count: usize,
    pub min_count: usize,
}

pub fn count_in_interval(points: &[CriticalPoint], j: &Interval) -> IntervalCount {
    points
        .iter()
        .filter(|p| j.contains(p.location))
        .fold(IntervalCount::default(), |mut c, p| {
            c.nu += 1;
            match p.kind {
                ExtremumKind::LocalMax => c.max_count += 1,
                ExtremumKind::LocalMin => c.min_count += 1,
            }
            c
        })
}

/// Interval of the given width centred on the detected extremum of `f`
/// nearest to `center_hint` (or on the hint itself when `f` has none),
/// clipped to the domain.
pub fn auto_interval(f: &Curve, center_hint: f64, width: f64) -> Result<Interval> {
    if !(width > 0.0 && width.is_finite()) {
        return Err(Error::InvalidArgument(format!("width must be positive, got {width}")));
    }
    let extrema = find_extrema(f, 0.0)?;
    let center = extrema
        .iter()
        .map(|p| p.location)
        .min_by(|x, y| (x - center_hint).abs().total_cmp(&(y - center_hint).abs()))
        .unwrap_or(center_hint);
    let grid = f.grid();
    Interval::new(
        (center - 0.5 * width).max(grid.start()),
        (center + 0.5 * width).min(grid.end()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::func::Grid;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn unit_grid(count: usize) -> Arc<Grid> {
        Arc::new(Grid::uniform(0.0, 1.0, count).unwrap())
    }

    fn psi1(lambda: f64) -> impl Fn(f64) -> f64 {
        move |x| 2.0 * lambda * x.powi(3) - 3.0 * lambda * x * x + 1.5 * x
    }

    #[test]
    fn psi_lambda_1_2_has_max_and_min() {
        let g = unit_grid(250);
        let h = g.spacing().unwrap();
        let f = Curve::from_fn(g, psi1(1.2)).unwrap();
        let ex = find_extrema(&f, 0.0).unwrap();
        assert_eq!(ex.len(), 2);
        let s = (1.2f64 * 0.2).sqrt();
        assert_eq!(ex[0].kind, ExtremumKind::LocalMax);
        assert!((ex[0].location - (1.2 - s) / 2.4).abs() < h);
        assert_eq!(ex[1].kind, ExtremumKind::LocalMin);
        assert!((ex[1].location - (1.2 + s) / 2.4).abs() < h);
    }

    #[test]
    fn refinement_is_exact_for_cubics() {
        let f = Curve::from_fn(unit_grid(250), psi1(1.2)).unwrap();
        let ex = find_extrema(&f, 0.0).unwrap();
        let s = (1.2f64 * 0.2).sqrt();
        assert!((ex[0].location - (1.2 - s) / 2.4).abs() < 1e-12);
        assert!((ex[1].location - (1.2 + s) / 2.4).abs() < 1e-12);
        // a smooth non-polynomial is located well below grid resolution
        let g = unit_grid(101);
        let c = Curve::from_fn(g, |x| (2.0 * std::f64::consts::PI * x + 0.3).sin()).unwrap();
        let ex = find_extrema(&c, 0.0).unwrap();
        let want = (0.25 - 0.3 / (2.0 * std::f64::consts::PI), 0.75 - 0.3 / (2.0 * std::f64::consts::PI));
        assert!((ex[0].location - want.0).abs() < 1e-5, "{}", ex[0].location - want.0);
        assert!((ex[1].location - want.1).abs() < 1e-5, "{}", ex[1].location - want.1);
    }

    #[test]
    fn monotone_curve_has_no_extrema() {
        let f = Curve::from_fn(unit_grid(100), |x| x.exp()).unwrap();
        assert!(find_extrema(&f, 0.0).unwrap().is_empty());
        let c = Curve::from_fn(unit_grid(100), |_| 2.0).unwrap();
        assert!(find_extrema(&c, 0.1).unwrap().is_empty());
    }

    #[test]
    fn shoulders_are_not_extrema() {
        let g = unit_grid(250);
        let h = g.spacing().unwrap();
        let f = Curve::from_fn(g, |x| (x - 0.8).powi(3) * (x - 0.2).powi(3)).unwrap();
        let ex = find_extrema(&f, 0.0).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].kind, ExtremumKind::LocalMin);
        assert!((ex[0].location - 0.5).abs() <= h);
    }

    #[test]
    fn plateau_reports_midpoint() {
        let g = unit_grid(11);
        let f = Curve::new(g, vec![0., 1., 2., 3., 3., 3., 3., 2., 1., 0., -1.]).unwrap();
        let ex = find_extrema(&f, 0.0).unwrap();
        assert_eq!(ex.len(), 1);
        assert_eq!(ex[0].kind, ExtremumKind::LocalMax);
        assert!((ex[0].location - 0.45).abs() < 1e-12);
        assert_eq!(ex[0].grid_index, 4);
    }

    #[test]
    fn plateau_between_same_signs_is_not_an_extremum() {
        let g = unit_grid(7);
        let f = Curve::new(g, vec![0., 1., 1., 1., 2., 3., 4.]).unwrap();
        assert!(find_extrema(&f, 0.0).unwrap().is_empty());
    }

    #[test]
    fn margin_excludes_points_near_the_ends() {
        let g = unit_grid(101);
        let f = Curve::from_fn(g, |x| (6.0 * std::f64::consts::PI * x).sin()).unwrap();
        // peaks/troughs at 1/12, 3/12, ..., 11/12
        assert_eq!(find_extrema(&f, 0.0).unwrap().len(), 6);
        let inner = find_extrema(&f, 0.1).unwrap();
        assert_eq!(inner.len(), 4);
        assert!(inner.iter().all(|p| p.location > 0.1 && p.location < 0.9));
        assert!(find_extrema(&f, 0.5).is_err());
        assert!(find_extrema(&f, -0.1).is_err());
    }

    #[test]
    fn nonuniform_grid_is_rejected() {
        let g = Arc::new(Grid::from_points(vec![0.0, 0.1, 0.5, 1.0]).unwrap());
        let f = Curve::from_fn(g, |x| x).unwrap();
        assert!(matches!(find_extrema(&f, 0.0), Err(Error::NonUniformGrid)));
    }

    #[test]
    fn counts() {
        assert_eq!(
            count_in_interval(&[], &Interval::new(0.0, 1.0).unwrap()),
            IntervalCount::default()
        );
        let f = Curve::from_fn(unit_grid(250), psi1(1.2)).unwrap();
        let ex = find_extrema(&f, 0.0).unwrap();
        let all = count_in_interval(&ex, &Interval::new(0.0, 1.0).unwrap());
        assert_eq!(all.nu, 2);
        let c = count_in_interval(&ex, &Interval::new(0.6, 0.8).unwrap());
        assert_eq!(c, IntervalCount { nu: 1, max_count: 0, min_count: 1 });
    }

    #[test]
    fn closed_interval_membership() {
        let p = CriticalPoint {
            location: 0.6,
            kind: ExtremumKind::LocalMax,
            value: 0.0,
            grid_index: 0,
        };
        let j = Interval::new(0.6, 0.8).unwrap();
        assert_eq!(count_in_interval(&[p], &j).nu, 1);
    }

    #[test]
    fn auto_interval_examples() {
        let g = unit_grid(250);
        let f = Curve::from_fn(g.clone(), psi1(1.2)).unwrap();
        let j = auto_interval(&f, 0.7, 0.2).unwrap();
        let min = (1.2 + (0.24f64).sqrt()) / 2.4;
        assert!((j.lo - (min - 0.1)).abs() < 4e-3);
        assert!((j.hi - (min + 0.1)).abs() < 4e-3);

        let whole = auto_interval(&f, 0.3, 5.0).unwrap();
        assert_eq!((whole.lo, whole.hi), (0.0, 1.0));

        let flat = Curve::from_fn(g, psi1(0.85)).unwrap();
        let j = auto_interval(&flat, 0.5, 0.2).unwrap();
        assert!((j.lo - 0.4).abs() < 1e-12 && (j.hi - 0.6).abs() < 1e-12);

        assert!(auto_interval(&f, 0.5, 0.0).is_err());
    }

    #[test]
    fn interval_parsing() {
        let j: Interval = "0.4:0.6".parse().unwrap();
        assert_eq!((j.lo, j.hi), (0.4, 0.6));
        assert!("0.6:0.4".parse::<Interval>().is_err());
        assert!("0.4".parse::<Interval>().is_err());
        assert!(j.check_within(0.0, 1.0).is_ok());
        assert!(j.check_within(0.5, 1.0).is_err());
    }

    #[test]
    fn json_shape() {
        let p = CriticalPoint {
            location: 0.25,
            kind: ExtremumKind::LocalMin,
            value: -1.0,
            grid_index: 3,
        };
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, r#"{"location":0.25,"kind":"min","value":-1.0,"grid_index":3}"#);
    }

    /// `∫₀ˣ Π (t − r) dt`, a polynomial whose critical points are `roots`.
    fn poly_from_critical_roots(roots: &[f64], x: f64) -> f64 {
        let mut coeffs = vec![1.0];
        for r in roots {
            let mut next = vec![0.0; coeffs.len() + 1];
            for (k, c) in coeffs.iter().enumerate() {
                next[k + 1] += c;
                next[k] -= r * c;
            }
            coeffs = next;
        }
        coeffs
            .iter()
            .enumerate()
            .map(|(k, c)| c * x.powi(k as i32 + 1) / (k + 1) as f64)
            .sum()
    }

    proptest! {
        #[test]
        fn sign_flip_swaps_kinds(coeffs in proptest::collection::vec(-3.0..3.0f64, 6)) {
            let g = unit_grid(120);
            let f = Curve::from_fn(g, |x| {
                coeffs.iter().enumerate().map(|(k, c)| c * (7.0 * x * (k + 1) as f64).sin()).sum()
            }).unwrap();
            let a = find_extrema(&f, 0.0).unwrap();
            let b = find_extrema(&f.scaled(-1.0), 0.0).unwrap();
            prop_assert_eq!(a.len(), b.len());
            for (p, q) in a.iter().zip(&b) {
                prop_assert_eq!(p.location, q.location);
                prop_assert_eq!(p.kind.flipped(), q.kind);
            }
            for w in a.windows(2) {
                prop_assert_ne!(w[0].kind, w[1].kind);
            }
        }

        #[test]
        fn shift_leaves_locations(coeffs in proptest::collection::vec(-3.0..3.0f64, 4), shift in -2.0..2.0f64) {
            let g = unit_grid(120);
            let f = Curve::from_fn(g, |x| {
                coeffs.iter().enumerate().map(|(k, c)| c * (5.0 * x * (k + 1) as f64).cos()).sum()
            }).unwrap();
            let a = find_extrema(&f, 0.0).unwrap();
            let b = find_extrema(&f.map(|v| v + shift), 0.0).unwrap();
            // differences tinier than rounding of the shifted values can flip
            let tiny = f.values().windows(2).any(|w| (w[1] - w[0]).abs() < 1e-9);
            prop_assume!(!tiny);
            prop_assert_eq!(a.len(), b.len());
            for (p, q) in a.iter().zip(&b) {
                prop_assert!((p.location - q.location).abs() < 1e-6);
                prop_assert_eq!(p.kind, q.kind);
            }
        }

        #[test]
        fn polynomial_extrema_are_located(
            roots in proptest::collection::btree_set(5u32..95, 1..6),
        ) {
            // derivative roots at r/100, separated by at least 0.01
            let roots: Vec<f64> = roots.into_iter().map(|r| r as f64 / 100.0).collect();
            prop_assume!(roots.windows(2).all(|w| w[1] - w[0] >= 0.03));
            let g = unit_grid(250);
            let h = g.spacing().unwrap();
            let f = Curve::from_fn(g, |x| poly_from_critical_roots(&roots, x)).unwrap();
            let ex = find_extrema(&f, 0.0).unwrap();
            prop_assert_eq!(ex.len(), roots.len());
            for (p, r) in ex.iter().zip(&roots) {
                prop_assert!((p.location - r).abs() <= h);
            }
        }
    }
}
