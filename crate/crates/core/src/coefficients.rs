//! Geometric coefficients: the recentering constant `t(C)`, the L1 Opial
//! modulus, the `limsup |x_n + z| = limsup |x_n| + |z|` defect, the
//! fixed-point gate, and the Orlicz coefficient `a(δ)`.

use serde::{Deserialize, Serialize};

use crate::error::{FptError, Result};
use crate::grid::{liminf_tail, limsup_tail, peak, GridFunction, DEFAULT_WINDOW};
use crate::point::{CoordPoint, Point};
use crate::report::{BoundType, CoefficientReport};
use crate::sets::{limsup_distance, ConvexBody};

/// Ky Fan distance between the last family term and its declared limit
/// above which the family is rejected as not converging in measure.
pub const LIMIT_CHECK_TOL: f64 = 1e-3;

/// Every `t(C)` is at most 2; larger witnessed ratios are grid artifacts.
pub const T_CLAMP: f64 = 2.0;

/// Sequence generators with a known in-measure limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// `2^k χ_[0, 2^-k)` for `k = k_min..=k_max`, limit 0.
    Peaks { k_min: u32, k_max: u32 },
    /// The vertices `e_2, ..., e_M` of `C_t`, limit 0.
    UnitVectors {},
}

#[derive(Debug, Clone)]
pub struct FamilyDraw {
    pub name: String,
    pub seq: Vec<Point>,
    pub limit: Point,
}

impl Family {
    /// Draws the family inside the space of `body` and checks membership.
    pub fn generate(&self, body: &dyn ConvexBody, tol: f64) -> Result<FamilyDraw> {
        let origin = body.origin();
        let (name, seq) = match (*self, &origin) {
            (Family::Peaks { k_min, k_max }, Point::Grid(o)) => {
                if k_min > k_max || k_max > o.level() {
                    return Err(FptError::InvalidArgument(format!(
                        "peaks {k_min}..={k_max} do not fit level {}",
                        o.level()
                    )));
                }
                let seq = (k_min..=k_max)
                    .map(|k| peak(1u64 << k, o.level()).map(Point::Grid))
                    .collect::<Result<Vec<_>>>()?;
                (format!("peaks(2^k, k={k_min}..{k_max})"), seq)
            }
            (Family::UnitVectors {}, Point::Coord(o)) => {
                let seq = (2..=o.truncation())
                    .map(|n| CoordPoint::vertex(o.t(), o.truncation(), n).map(Point::Coord))
                    .collect::<Result<Vec<_>>>()?;
                (format!("e_n, n=2..{}", o.truncation()), seq)
            }
            _ => {
                return Err(FptError::PointMismatch(format!(
                    "family {self:?} does not live in {}",
                    body.name()
                )))
            }
        };
        for (i, x) in seq.iter().enumerate() {
            body.check(x, tol)
                .map_err(|reason| FptError::DomainViolation { iterate: i, reason })?;
        }
        let limit = origin;
        let last = seq.last().ok_or(FptError::EmptySequence)?;
        let ky_fan = last.ky_fan_distance(&limit)?;
        if ky_fan > LIMIT_CHECK_TOL {
            return Err(FptError::NotNullInMeasure { ky_fan, tol: LIMIT_CHECK_TOL });
        }
        Ok(FamilyDraw { name, seq, limit })
    }
}

/// Both ratios one family witnesses for `t(B)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyRatios {
    pub family: String,
    /// `limsup |x - x_n|`.
    pub radius: f64,
    /// `(limsup |x - x_n| + d(x, B)) / limsup |x - x_n|` with the certified
    /// lower bound on `d(x, B)`: the value `limsup |c - x_n| = |c - x| +
    /// limsup |x - x_n|` predicts for the best `c`.
    pub star_ratio: f64,
    /// `limsup |c - x_n| / limsup |x - x_n|` for the recentered point `c`.
    pub witness_ratio: f64,
    pub witness_bound: BoundType,
}

pub fn family_ratios(
    body: &dyn ConvexBody,
    draw: &FamilyDraw,
    window: f64,
) -> Result<FamilyRatios> {
    let radius = limsup_distance(&draw.limit, &draw.seq, window)?;
    let d_lower = body.distance_lower_bound(&draw.limit);
    let c = body.recenter(&draw.limit, &draw.seq)?;
    let witness = limsup_distance(&c.point, &draw.seq, window)?;
    Ok(FamilyRatios {
        family: draw.name.clone(),
        radius,
        star_ratio: (radius + d_lower) / radius,
        witness_ratio: witness / radius,
        witness_bound: c.bound_type,
    })
}

/// Bracket for `t(B)` from witness families.
///
/// Each usable family contributes the interval between its two ratios; the
/// report spans the largest of them. Families with `limsup |x - x_n| < tol`
/// carry no information and are skipped. Upper ends above 2 are clamped and
/// flagged in the `clamped` parameter.
pub fn t_upper_bound(
    body: &dyn ConvexBody,
    families: &[Family],
    window: f64,
    tol: f64,
) -> Result<CoefficientReport> {
    let mut best: Option<(f64, f64, String, bool)> = None;
    let mut used = Vec::new();
    for family in families {
        let draw = family.generate(body, tol)?;
        let r = family_ratios(body, &draw, window)?;
        if r.radius < tol {
            continue;
        }
        let lo = r.star_ratio.min(r.witness_ratio);
        let hi = r.star_ratio.max(r.witness_ratio);
        let exact = hi - lo <= 1e-12 && r.witness_bound == BoundType::Exact;
        used.push(r.family.clone());
        match &mut best {
            Some((blo, bhi, _, bexact)) => {
                if lo > *blo {
                    *blo = lo;
                }
                if hi > *bhi {
                    *bhi = hi;
                }
                *bexact = *bexact && exact && (*bhi - *blo) <= 1e-12;
            }
            None => best = Some((lo, hi, r.family, exact)),
        }
    }
    let (lo, hi, witness, exact) = best
        .ok_or_else(|| FptError::InvalidArgument("no usable sequence family".into()))?;
    let clamped = hi > T_CLAMP + tol;
    let hi = hi.min(T_CLAMP);
    let lo = lo.min(hi);
    Ok(CoefficientReport {
        quantity: format!("t({})", body.name()),
        estimate_low: lo,
        estimate_high: hi,
        bound_type: if exact { BoundType::Exact } else { BoundType::Bracket },
        witness,
        parameters: Default::default(),
    }
    .with_param("families", used.join(" | "))
    .with_param("window", window)
    .with_param("clamped", clamped))
}

/// The families that witness `t(B)` for the catalog bodies.
pub fn default_families(body: &dyn ConvexBody) -> Vec<Family> {
    match body.origin() {
        Point::Grid(o) => vec![Family::Peaks { k_min: 4.min(o.level()), k_max: o.level() }],
        Point::Coord(_) => vec![Family::UnitVectors {}],
    }
}

/// `d(x, B)` for the in-measure limit `x` of a family against `diam(B)/2`:
/// returns `(distance upper bound, half diameter)`.
pub fn half_diameter_probe(
    body: &dyn ConvexBody,
    draw: &FamilyDraw,
    seed: u64,
) -> Result<(f64, f64)> {
    let half = body
        .diameter()
        .ok_or_else(|| FptError::InvalidArgument(format!("{} has no diameter", body.name())))?
        / 2.0;
    let d = crate::sets::distance_to_set(body, &draw.limit, 64, seed, 1e-9)?;
    Ok((d.upper, half))
}

/// Default Ky Fan radius within which a family counts as null in measure.
pub const NULL_TOL: f64 = 1e-2;

/// `|limsup |x_n + z| - limsup |x_n| - |z||`, over the trailing window.
///
/// Requires `limsup_tail ky_fan(x_n, 0) ≤ null_tol`; the identity is false
/// for sequences that do not vanish in measure.
pub fn star_equality_defect(
    seq: &[GridFunction],
    z: &GridFunction,
    window: f64,
    null_tol: f64,
) -> Result<f64> {
    if seq.is_empty() {
        return Err(FptError::EmptySequence);
    }
    let zero = GridFunction::zeros(z.level())?;
    let ky: Vec<f64> = seq.iter().map(|x| x.ky_fan_distance(&zero)).collect();
    let ky_fan = limsup_tail(&ky, window)?;
    if ky_fan > null_tol {
        return Err(FptError::NotNullInMeasure { ky_fan, tol: null_tol });
    }
    let with_z: Vec<f64> = seq.iter().map(|x| x.add(z).l1_norm()).collect();
    let alone: Vec<f64> = seq.iter().map(|x| x.l1_norm()).collect();
    Ok((limsup_tail(&with_z, window)? - limsup_tail(&alone, window)? - z.l1_norm()).abs())
}

/// `1 + r(1)` for the named space. Only L1 is cataloged, where
/// `r(c) = c` follows from the star equality with `z = -x`.
pub fn opial_one_plus_r(space_tag: &str) -> Result<f64> {
    match space_tag {
        "L1" | "l1" => Ok(2.0),
        other => Err(FptError::UnknownSpace(other.to_string())),
    }
}

/// `liminf_tail |x_n - x|` over `peaks(2^k)`, `k = k_min..=k_max`; in L1 this
/// approaches `1 + |x|`.
pub fn opial_cross_check(x: &GridFunction, k_min: u32, k_max: u32, window: f64) -> Result<f64> {
    if k_min > k_max || k_max > x.level() {
        return Err(FptError::InvalidArgument(format!(
            "peaks {k_min}..={k_max} do not fit level {}",
            x.level()
        )));
    }
    let d = (k_min..=k_max)
        .map(|k| peak(1u64 << k, x.level()).map(|p| p.l1_distance(x)))
        .collect::<Result<Vec<_>>>()?;
    liminf_tail(&d, window)
}

/// `S < (1 + r) / t`, strictly. Also serves the Orlicz gate `S < a(1/2)/t`.
pub fn theorem_condition(s: f64, t: f64, one_plus_r: f64) -> bool {
    s < one_plus_r / t
}

/// `(1 + r)/t - S`: positive exactly when the condition holds.
pub fn theorem_margin(s: f64, t: f64, one_plus_r: f64) -> f64 {
    one_plus_r / t - s
}

/// Logarithmic probe grid for `orlicz_a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for ProbeGrid {
    fn default() -> Self {
        Self { lo: 1e-6, hi: 1e6, points: 1000 }
    }
}

impl ProbeGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.lo > 0.0 && self.hi > self.lo) || self.points < 2 {
            return Err(FptError::InvalidArgument(format!("bad probe grid {self:?}")));
        }
        let (a, b) = (self.lo.ln(), self.hi.ln());
        let step = (b - a) / (self.points - 1) as f64;
        Ok((0..self.points).map(|i| (a + step * i as f64).exp()).collect())
    }
}

/// `min_t Φ⁻¹(t) / Φ⁻¹(δt)` over the probe grid: an upper bound on `a(δ)`.
pub fn orlicz_a(phi_inverse: impl Fn(f64) -> f64, delta: f64, grid: &ProbeGrid) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(FptError::InvalidArgument(format!("delta = {delta} must be positive")));
    }
    let ts = grid.values()?;
    let mut prev = f64::NEG_INFINITY;
    let mut best = f64::INFINITY;
    for &t in &ts {
        let (num, den) = (phi_inverse(t), phi_inverse(delta * t));
        for (at, v) in [(t, num), (delta * t, den)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(FptError::InvalidArgument(format!("Φ⁻¹({at:e}) = {v} is not positive")));
            }
        }
        if num <= prev {
            return Err(FptError::InvalidArgument(format!("Φ⁻¹ is not increasing near {t:e}")));
        }
        prev = num;
        best = best.min(num / den);
    }
    Ok(best)
}

/// `t_upper_bound` with the default families and window.
pub fn t_report(body: &dyn ConvexBody, tol: f64) -> Result<CoefficientReport> {
    t_upper_bound(body, &default_families(body), DEFAULT_WINDOW, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::rademacher;
    use crate::sets::{ConeHull, CtBody, UnitBall};

    #[test]
    fn peak_family_limit_is_checked() {
        let c = ConeHull::density_simplex(10).unwrap();
        let draw = Family::Peaks { k_min: 2, k_max: 10 }.generate(&c, 1e-9).unwrap();
        assert_eq!(draw.seq.len(), 9);
        // 2^-8 > 1e-3: the finest term is still too far from 0.
        assert!(Family::Peaks { k_min: 2, k_max: 8 }.generate(&c, 1e-9).is_err());
        let early = Family::Peaks { k_min: 1, k_max: 3 }.generate(&c, 1e-9);
        assert!(matches!(early, Err(FptError::NotNullInMeasure { .. })));
        let ct = CtBody::new(1.5, 8).unwrap();
        assert!(Family::Peaks { k_min: 1, k_max: 3 }.generate(&ct, 1e-9).is_err());
    }

    #[test]
    fn ball_is_closed_in_measure() {
        let ball = UnitBall::new(10).unwrap();
        let r = t_report(&ball, 1e-9).unwrap();
        assert_eq!((r.estimate_low, r.estimate_high), (1.0, 1.0));
        assert_eq!(r.bound_type, BoundType::Exact);
    }

    #[test]
    fn cone_hull_ratios_by_hand() {
        // |a·1 - peak_k| = 1 + a - 2a 2^-k, largest on the finest retained peak.
        let level = 10;
        for a in [0.0, 0.5, 1.0] {
            let body = ConeHull::new(a, level).unwrap();
            let draw = Family::Peaks { k_min: 4, k_max: level }.generate(&body, 1e-9).unwrap();
            let r = family_ratios(&body, &draw, DEFAULT_WINDOW).unwrap();
            assert_eq!(r.radius, 1.0);
            assert!((r.star_ratio - (1.0 + a)).abs() < 1e-12);
            let expect = 1.0 + a - 2.0 * a * (-(level as f64)).exp2();
            assert!((r.witness_ratio - expect).abs() < 1e-12, "a = {a}");
        }
    }

    #[test]
    fn ct_ratio_is_exact() {
        for t in [1.1, 1.5, 1.9] {
            let r = t_report(&CtBody::new(t, 64).unwrap(), 1e-9).unwrap();
            assert!((r.estimate_low - t).abs() < 1e-12 && (r.estimate_high - t).abs() < 1e-12);
            assert_eq!(r.bound_type, BoundType::Exact);
        }
    }

    #[test]
    fn star_defect_examples() {
        let level = 12;
        let z = GridFunction::indicator(level, 0.5, 1.0, 1.0).unwrap();
        let seq: Vec<_> = (4..=level).map(|k| peak(1 << k, level).unwrap()).collect();
        assert_eq!(star_equality_defect(&seq, &z, 0.5, NULL_TOL).unwrap(), 0.0);
        let zero = GridFunction::zeros(level).unwrap();
        assert_eq!(star_equality_defect(&seq, &zero, 0.5, NULL_TOL).unwrap(), 0.0);
        // Overlapping z = -χ_[0,1/2): |peak_k + z| = 3/2 - 2^(1-k).
        let z = GridFunction::indicator(level, 0.0, 0.5, -1.0).unwrap();
        for kmax in 6..=level {
            let d = star_equality_defect(&seq[..(kmax - 3) as usize], &z, 0.5, 0.1).unwrap();
            assert!((d - (1.0 - kmax as f64).exp2()).abs() < 1e-12);
        }
        let rad: Vec<_> = (1..=8).map(|n| rademacher(n, level).unwrap()).collect();
        let one = GridFunction::constant(level, 1.0).unwrap();
        assert!(matches!(
            star_equality_defect(&rad, &one, 0.5, NULL_TOL),
            Err(FptError::NotNullInMeasure { .. })
        ));
    }

    #[test]
    fn opial_values() {
        assert_eq!(opial_one_plus_r("L1").unwrap(), 2.0);
        assert!(matches!(opial_one_plus_r("L2"), Err(FptError::UnknownSpace(_))));
        for c in [0.5, 1.0, 2.0] {
            let x = GridFunction::constant(14, c).unwrap();
            let v = opial_cross_check(&x, 4, 14, 0.5).unwrap();
            assert!((v - (1.0 + c)).abs() / (1.0 + c) < 0.02, "c = {c}: {v}");
        }
    }

    #[test]
    fn gate_examples() {
        assert!(theorem_condition(1.0, 1.0, 2.0));
        assert!(theorem_condition(1.99, 1.0, 2.0));
        for t in [1.1, 1.25, 1.5, 1.75, 1.9] {
            assert!(!theorem_condition(2.0 / t, t, 2.0));
            assert!(theorem_condition(2.0 / t - 0.01, t, 2.0));
        }
    }

    #[test]
    fn orlicz_examples() {
        let g = ProbeGrid::default();
        for delta in [0.25, 0.5, 0.75] {
            assert!((orlicz_a(|t| t, delta, &g).unwrap() - 1.0 / delta).abs() < 1e-12);
        }
        assert!(orlicz_a(|t| -t, 0.5, &g).is_err());
        assert!(orlicz_a(|_| 1.0, 0.5, &g).is_err());
        assert!(orlicz_a(|t| t, 0.0, &g).is_err());
    }
}
