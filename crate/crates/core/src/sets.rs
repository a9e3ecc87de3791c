//! Convex bounded bodies: the density simplex `C`, the hulls
//! `C_a = co(C ∪ {a})`, the unit ball of `L1`, and the coordinate body `C_t`.
//!
//! Besides membership and sampling, each catalog body knows the closed-form
//! point that realizes the infimum in the definition of `t(C)` for an
//! in-measure convergent sequence (its *recenter* witness).

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FptError, Result};
use crate::grid::{limsup_tail, median, GridFunction, DEFAULT_WINDOW};
use crate::point::{CoordPoint, Point};
use crate::report::BoundType;

/// Candidates scored by the sampled recenter fallback.
pub const FALLBACK_CANDIDATES: usize = 256;

pub trait ConvexBody: Send + Sync {
    fn name(&self) -> String;

    /// `Ok(())` when `x` satisfies the defining constraints within `tol`,
    /// otherwise a description of the first violated constraint.
    fn check(&self, x: &Point, tol: f64) -> std::result::Result<(), String>;

    fn contains(&self, x: &Point, tol: f64) -> bool {
        self.check(x, tol).is_ok()
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Point;

    fn diameter(&self) -> Option<f64>;

    /// Closed-form value of `t(C)` when known.
    fn t_exact(&self) -> Option<f64>;

    /// Point of the body whose limsup distance to `seq` is within the `t(C)`
    /// factor of `limsup |limit - seq_n|`.
    fn recenter(&self, limit: &Point, seq: &[Point]) -> Result<Recentered>;

    /// A certified lower bound on `inf_{c ∈ C} |x - c|`.
    fn distance_lower_bound(&self, x: &Point) -> f64;

    /// Members that are good guesses for the nearest point to `x`.
    fn distance_candidates(&self, x: &Point) -> Vec<Point>;

    /// A representative origin of the ambient space.
    fn origin(&self) -> Point;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recentered {
    pub point: Point,
    pub bound_type: BoundType,
    pub witness: String,
}

pub fn sample_seeded(body: &dyn ConvexBody, seed: u64) -> Point {
    body.sample(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Catalog descriptor, addressed by `{"set": ...}` JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "set", rename_all = "snake_case", deny_unknown_fields)]
pub enum BodySpec {
    DensitySimplex {},
    ConeHull { a: f64 },
    Ct {
        t: f64,
        #[serde(rename = "M")]
        m: usize,
    },
    Ball {},
}

impl BodySpec {
    /// `level` sets the resolution of grid samples; it is ignored by `Ct`.
    pub fn build(&self, level: u32) -> Result<Box<dyn ConvexBody>> {
        Ok(match *self {
            BodySpec::DensitySimplex {} => Box::new(ConeHull::new(1.0, level)?),
            BodySpec::ConeHull { a } => Box::new(ConeHull::new(a, level)?),
            BodySpec::Ct { t, m } => Box::new(CtBody::new(t, m)?),
            BodySpec::Ball {} => Box::new(UnitBall::new(level)?),
        })
    }
}

fn expect_grid<'a>(x: &'a Point, body: &str) -> std::result::Result<&'a GridFunction, String> {
    x.as_grid().ok_or_else(|| format!("{body} holds grid functions, got a coordinate point"))
}

fn positive_part(f: &GridFunction) -> GridFunction {
    GridFunction::from_parts_unchecked(f.level(), f.values().iter().map(|v| v.max(0.0)).collect())
}

/// A random probability density on the grid, mixing the shapes that matter
/// here: diffuse, dyadic peaks, sparse spikes, and Rademacher ripples.
pub fn sample_density(level: u32, rng: &mut dyn RngCore) -> GridFunction {
    let n = 1usize << level;
    let mut values = vec![0.0; n];
    match rng.gen_range(0..4) {
        0 => values.iter_mut().for_each(|v| *v = -(1.0 - rng.gen::<f64>()).ln()),
        1 => {
            let k = rng.gen_range(0..=level);
            let width = 1usize << (level - k);
            let start = rng.gen_range(0..1usize << k) * width;
            values[start..start + width].fill(1.0);
        }
        2 => {
            for _ in 0..rng.gen_range(1..=4) {
                values[rng.gen_range(0..n)] += rng.gen::<f64>() + 0.01;
            }
        }
        _ => {
            let m = rng.gen_range(0..=level);
            let c = rng.gen::<f64>();
            let block = 1usize << (level - m);
            for (i, v) in values.iter_mut().enumerate() {
                let sign = if m == 0 || (i / block).is_multiple_of(2) { 1.0 } else { -1.0 };
                *v = 1.0 + c * sign;
            }
        }
    }
    let mass: f64 = values.iter().sum::<f64>() / n as f64;
    values.iter_mut().for_each(|v| *v /= mass);
    GridFunction::from_parts_unchecked(level, values)
}

/// `C_a = co(C ∪ {a·1})` for `a ∈ [0, 1]`; `a = 1` is the density simplex `C`
/// itself, since the constant `1` already lies in `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeHull {
    a: f64,
    level: u32,
}

impl ConeHull {
    pub fn new(a: f64, level: u32) -> Result<Self> {
        if !(0.0..=1.0).contains(&a) {
            return Err(FptError::InvalidArgument(format!("a = {a} not in [0, 1]")));
        }
        GridFunction::zeros(level)?;
        Ok(Self { a, level })
    }

    pub fn density_simplex(level: u32) -> Result<Self> {
        Self::new(1.0, level)
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    /// Weight of the `C` component in `x = λ f + (1-λ) a` (from `∫f = 1`).
    pub fn mixing_weight(&self, x: &GridFunction) -> f64 {
        if self.a >= 1.0 {
            1.0
        } else {
            (x.integral() - self.a) / (1.0 - self.a)
        }
    }
}

impl ConvexBody for ConeHull {
    fn name(&self) -> String {
        if self.a >= 1.0 {
            "density_simplex".into()
        } else {
            format!("cone_hull(a={})", self.a)
        }
    }

    fn check(&self, x: &Point, tol: f64) -> std::result::Result<(), String> {
        let f = expect_grid(x, "C_a")?;
        let integral = f.integral();
        if self.a >= 1.0 {
            let min = f.min_value();
            if min < -tol {
                return Err(format!("negative value {min:.6e}"));
            }
            if (integral - 1.0).abs() > tol {
                return Err(format!("∫ = {integral:.6e} ≠ 1"));
            }
            return Ok(());
        }
        let lambda = self.mixing_weight(f);
        if lambda < -tol {
            return Err(format!("∫ = {integral:.6e} < a = {}", self.a));
        }
        if lambda > 1.0 + tol {
            return Err(format!("∫ = {integral:.6e} > 1"));
        }
        let floor = (1.0 - lambda.clamp(0.0, 1.0)) * self.a;
        let min = f.min_value();
        if min < floor - tol {
            return Err(format!("value {min:.6e} below the hull floor {floor:.6e}"));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Point {
        let f = sample_density(self.level, rng);
        let lambda = match rng.gen_range(0..8) {
            0 => 0.0,
            1 => 1.0,
            _ => rng.gen::<f64>(),
        };
        let lambda = if self.a >= 1.0 { 1.0 } else { lambda };
        Point::Grid(f.scale(lambda).add_constant((1.0 - lambda) * self.a))
    }

    fn diameter(&self) -> Option<f64> {
        Some(2.0)
    }

    fn t_exact(&self) -> Option<f64> {
        Some(1.0 + self.a)
    }

    fn recenter(&self, limit: &Point, seq: &[Point]) -> Result<Recentered> {
        if seq.is_empty() {
            return Err(FptError::EmptySequence);
        }
        let x = limit
            .as_grid()
            .ok_or_else(|| FptError::PointMismatch("C_a recenter needs a grid limit".into()))?;
        let xp = positive_part(x);
        let mass = xp.integral();
        // λ = lim λ_n, read off the sequence through its integrals.
        let lambda = if self.a >= 1.0 {
            1.0
        } else {
            let start = seq.len() / 2;
            let mut ls: Vec<f64> = seq[start..]
                .iter()
                .filter_map(|p| p.as_grid())
                .map(|g| self.mixing_weight(g).clamp(0.0, 1.0))
                .collect();
            if ls.is_empty() {
                return Err(FptError::PointMismatch("C_a recenter needs grid terms".into()));
            }
            median(&mut ls)
        };
        // h = (1-λ)a + λ(f + (1-|f|)a) = x + (λ - λ|f|) a, with λ|f| = ∫x - (1-λ)a.
        let lambda_f = (mass - (1.0 - lambda) * self.a).clamp(0.0, lambda);
        let h = if mass > 1.0 {
            xp.scale(1.0 / mass)
        } else {
            xp.add_constant((lambda - lambda_f) * self.a)
        };
        let h = Point::Grid(h);
        if self.contains(&h, 1e-9) {
            return Ok(Recentered {
                point: h,
                bound_type: BoundType::Exact,
                witness: "h = (1-λ)a + λ(f + (1-|f|)a)".into(),
            });
        }
        recenter_sampled(self, seq, FALLBACK_CANDIDATES, 0)
    }

    fn distance_lower_bound(&self, x: &Point) -> f64 {
        // For c ≥ 0 with ∫c = m ∈ [a, 1]: |x - c| ≥ ∫x⁻ + |∫x⁺ - m|.
        let Some(f) = x.as_grid() else { return 0.0 };
        let w = f.cell_width();
        let pos: f64 = f.values().iter().map(|v| v.max(0.0)).sum::<f64>() * w;
        let neg: f64 = f.values().iter().map(|v| (-v).max(0.0)).sum::<f64>() * w;
        let gap = if pos < self.a {
            self.a - pos
        } else if pos > 1.0 {
            pos - 1.0
        } else {
            0.0
        };
        neg + gap
    }

    fn distance_candidates(&self, x: &Point) -> Vec<Point> {
        let Some(f) = x.as_grid() else { return Vec::new() };
        let xp = positive_part(f);
        let mass = xp.integral();
        let mut out = vec![Point::Grid(
            GridFunction::constant(f.level(), self.a).expect("level of a valid grid function"),
        )];
        if mass > 0.0 {
            out.push(Point::Grid(xp.scale(1.0 / mass)));
        }
        if mass <= 1.0 {
            out.push(Point::Grid(xp.add_constant(1.0 - mass)));
            out.push(Point::Grid(xp.add_constant((1.0 - mass) * self.a)));
        }
        out.retain(|c| self.contains(c, 1e-9));
        out
    }

    fn origin(&self) -> Point {
        Point::Grid(GridFunction::zeros(self.level).expect("validated level"))
    }
}

/// Closed unit ball of `L1[0,1]`; closed in measure by Fatou's lemma.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitBall {
    level: u32,
}

impl UnitBall {
    pub fn new(level: u32) -> Result<Self> {
        GridFunction::zeros(level)?;
        Ok(Self { level })
    }
}

impl ConvexBody for UnitBall {
    fn name(&self) -> String {
        "ball".into()
    }

    fn check(&self, x: &Point, tol: f64) -> std::result::Result<(), String> {
        let f = expect_grid(x, "the unit ball")?;
        let norm = f.l1_norm();
        if norm > 1.0 + tol {
            return Err(format!("|x| = {norm:.6e} > 1"));
        }
        Ok(())
    }

    fn sample(&self, rng: &mut dyn RngCore) -> Point {
        let shape = sample_density(self.level, rng);
        let radius = if rng.gen_range(0..8) == 0 { 1.0 } else { rng.gen::<f64>() };
        let signed = match rng.gen_range(0..3) {
            0 => shape,
            1 => shape.scale(-1.0),
            _ => {
                let values = shape
                    .values()
                    .iter()
                    .map(|&v| if rng.gen::<bool>() { v } else { -v })
                    .collect();
                GridFunction::from_parts_unchecked(self.level, values)
            }
        };
        Point::Grid(signed.scale(radius))
    }

    fn diameter(&self) -> Option<f64> {
        Some(2.0)
    }

    fn t_exact(&self) -> Option<f64> {
        Some(1.0)
    }

    fn recenter(&self, limit: &Point, seq: &[Point]) -> Result<Recentered> {
        if seq.is_empty() {
            return Err(FptError::EmptySequence);
        }
        let x = limit
            .as_grid()
            .ok_or_else(|| FptError::PointMismatch("ball recenter needs a grid limit".into()))?;
        let norm = x.l1_norm();
        let point = if norm <= 1.0 { x.clone() } else { x.scale(1.0 / norm) };
        Ok(Recentered {
            point: Point::Grid(point),
            bound_type: BoundType::Exact,
            witness: "the limit itself (radially clipped)".into(),
        })
    }

    fn distance_lower_bound(&self, x: &Point) -> f64 {
        (x.norm() - 1.0).max(0.0)
    }

    fn distance_candidates(&self, x: &Point) -> Vec<Point> {
        match x {
            Point::Grid(f) => {
                let norm = f.l1_norm();
                vec![Point::Grid(if norm <= 1.0 { f.clone() } else { f.scale(1.0 / norm) })]
            }
            Point::Coord(_) => Vec::new(),
        }
    }

    fn origin(&self) -> Point {
        Point::Grid(GridFunction::zeros(self.level).expect("validated level"))
    }
}

/// `C_t = { s_1 (t-1) g_1 + Σ_{n≥2} s_n g_n : s_n ≥ 0, Σ s_n = 1 }`, truncated
/// to `M` coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct CtBody {
    t: f64,
    m: usize,
}

impl CtBody {
    pub fn new(t: f64, m: usize) -> Result<Self> {
        CoordPoint::zeros(t, m)?;
        Ok(Self { t, m })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn truncation(&self) -> usize {
        self.m
    }

    pub fn vertex(&self, n: usize) -> Result<Point> {
        Ok(Point::Coord(CoordPoint::vertex(self.t, self.m, n)?))
    }

    fn coords<'a>(&self, x: &'a Point) -> std::result::Result<&'a CoordPoint, String> {
        let c = x.as_coord().ok_or("C_t holds coordinate points, got a grid function")?;
        if c.t() != self.t || c.truncation() != self.m {
            return Err(format!(
                "coordinate space (t={}, M={}) differs from (t={}, M={})",
                c.t(),
                c.truncation(),
                self.t,
                self.m
            ));
        }
        Ok(c)
    }

    /// Exact nearest point of the simplex in the weighted ℓ1 metric.
    ///
    /// Separable and piecewise linear: keep `x⁺`, then add any missing mass to
    /// the cheapest slot (slot 1, weight `t-1`), or remove surplus from slot 1
    /// first and then from the remaining slots in order.
    pub fn nearest(&self, x: &CoordPoint) -> CoordPoint {
        let mut s: Vec<f64> = x.coeffs().iter().map(|v| v.max(0.0)).collect();
        let total: f64 = s.iter().sum();
        if total < 1.0 {
            s[0] += 1.0 - total;
        } else {
            let mut surplus = total - 1.0;
            for v in s.iter_mut() {
                let take = v.min(surplus);
                *v -= take;
                surplus -= take;
                if surplus <= 0.0 {
                    break;
                }
            }
        }
        CoordPoint::new(self.t, s).expect("same space as a validated point")
    }
}

impl ConvexBody for CtBody {
    fn name(&self) -> String {
        format!("ct(t={}, M={})", self.t, self.m)
    }

    fn check(&self, x: &Point, tol: f64) -> std::result::Result<(), String> {
        let c = self.coords(x)?;
        if let Some((i, v)) = c.coeffs().iter().enumerate().find(|(_, v)| **v < -tol) {
            return Err(format!("negative coordinate s_{} = {v:.6e}", i + 1));
        }
        let mass = c.total_mass();
        if (mass - 1.0).abs() > tol {
            return Err(format!("Σ s_n = {mass:.6e} ≠ 1"));
        }
        Ok(())
    }

    /// Samples keep their mass in the first half of the slots, leaving room
    /// for the shift to act before the truncation is reached.
    fn sample(&self, rng: &mut dyn RngCore) -> Point {
        let head = (self.m / 2).max(2);
        let mut coeffs = vec![0.0; self.m];
        if rng.gen_range(0..4) == 0 {
            coeffs[rng.gen_range(0..head)] = 1.0;
        } else {
            let k = rng.gen_range(1..=head.min(8));
            for _ in 0..k {
                coeffs[rng.gen_range(0..head)] += -(1.0 - rng.gen::<f64>()).ln();
            }
            let total: f64 = coeffs.iter().sum();
            coeffs.iter_mut().for_each(|v| *v /= total);
        }
        Point::Coord(CoordPoint::new(self.t, coeffs).expect("valid body parameters"))
    }

    fn diameter(&self) -> Option<f64> {
        Some(2.0)
    }

    fn t_exact(&self) -> Option<f64> {
        Some(self.t)
    }

    fn recenter(&self, limit: &Point, seq: &[Point]) -> Result<Recentered> {
        if seq.is_empty() {
            return Err(FptError::EmptySequence);
        }
        let x = self.coords(limit).map_err(FptError::PointMismatch)?;
        // g = f + (1 - δ_f)(t-1) g_1: the missing mass goes to slot 1.
        let mut s: Vec<f64> = x.coeffs().iter().map(|v| v.max(0.0)).collect();
        let delta: f64 = s.iter().sum();
        if delta <= 1.0 {
            s[0] += 1.0 - delta;
        } else {
            s.iter_mut().for_each(|v| *v /= delta);
        }
        Ok(Recentered {
            point: Point::Coord(CoordPoint::new(self.t, s)?),
            bound_type: BoundType::Exact,
            witness: "g = f + (1-δ_f)(t-1)g_1".into(),
        })
    }

    fn distance_lower_bound(&self, x: &Point) -> f64 {
        match self.coords(x) {
            Ok(c) => c.distance(&self.nearest(c)).unwrap_or(0.0),
            Err(_) => 0.0,
        }
    }

    fn distance_candidates(&self, x: &Point) -> Vec<Point> {
        match self.coords(x) {
            Ok(c) => vec![Point::Coord(self.nearest(c))],
            Err(_) => Vec::new(),
        }
    }

    fn origin(&self) -> Point {
        Point::Coord(CoordPoint::zeros(self.t, self.m).expect("valid body parameters"))
    }
}

/// Generic recenter: best of `k` sampled members by `limsup_tail |c - seq_n|`.
/// Only an upper bound on the infimum.
pub fn recenter_sampled(
    body: &dyn ConvexBody,
    seq: &[Point],
    k: usize,
    seed: u64,
) -> Result<Recentered> {
    if seq.is_empty() {
        return Err(FptError::EmptySequence);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, Point)> = None;
    for _ in 0..k.max(1) {
        let c = body.sample(&mut rng);
        let score = limsup_distance(&c, seq, DEFAULT_WINDOW)?;
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, c));
        }
    }
    let (_, point) = best.expect("at least one candidate");
    Ok(Recentered {
        point,
        bound_type: BoundType::Upper,
        witness: format!("best of {k} sampled members"),
    })
}

/// `limsup_tail |c - seq_n|`.
pub fn limsup_distance(c: &Point, seq: &[Point], window: f64) -> Result<f64> {
    let d = seq.iter().map(|x| c.distance(x)).collect::<Result<Vec<_>>>()?;
    limsup_tail(&d, window)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceReport {
    pub upper: f64,
    pub lower: f64,
    pub bound_type: BoundType,
}

/// Upper bound on `inf_{c ∈ B} |x - c|` from `x` itself (if a member), the
/// body's closed-form candidates, and `n_samples` sampled members. Reported
/// as exact when it meets the body's certified lower bound within `tol`.
pub fn distance_to_set(
    body: &dyn ConvexBody,
    x: &Point,
    n_samples: usize,
    seed: u64,
    tol: f64,
) -> Result<DistanceReport> {
    let lower = body.distance_lower_bound(x);
    let mut upper = f64::INFINITY;
    if body.contains(x, tol) {
        upper = 0.0;
    }
    for c in body.distance_candidates(x) {
        upper = upper.min(x.distance(&c)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_samples {
        upper = upper.min(x.distance(&body.sample(&mut rng))?);
    }
    let bound_type = if upper - lower <= tol { BoundType::Exact } else { BoundType::Upper };
    Ok(DistanceReport { upper, lower, bound_type })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::peak;

    #[test]
    fn density_simplex_membership() {
        let c = ConeHull::density_simplex(6).unwrap();
        assert!(c.contains(&Point::Grid(GridFunction::constant(6, 1.0).unwrap()), 1e-9));
        for k in 0..=6 {
            assert!(c.contains(&Point::Grid(peak(1 << k, 6).unwrap()), 1e-9));
        }
        let zero = Point::Grid(GridFunction::zeros(6).unwrap());
        let err = c.check(&zero, 1e-9).unwrap_err();
        assert!(err.contains("∫ = 0"), "{err}");
    }

    #[test]
    fn cone_hull_membership_decomposition() {
        let c = ConeHull::new(0.5, 4).unwrap();
        let a = Point::Grid(GridFunction::constant(4, 0.5).unwrap());
        assert!(c.contains(&a, 1e-9));
        // 0.3 peak + 0.7 a: mass 0.3 + 0.35, floor 0.35.
        let mix = peak(4, 4).unwrap().scale(0.3).add_constant(0.35);
        assert!(c.contains(&Point::Grid(mix), 1e-9));
        let below = GridFunction::constant(4, 0.4).unwrap();
        assert!(!c.contains(&Point::Grid(below), 1e-9));
        // Mass fine but a cell dips under the floor.
        let dip = GridFunction::indicator(4, 0.0, 0.5, 1.5).unwrap();
        assert!(!c.contains(&Point::Grid(dip), 1e-9));
        let c0 = ConeHull::new(0.0, 4).unwrap();
        assert!(c0.contains(&Point::Grid(GridFunction::zeros(4).unwrap()), 1e-9));
    }

    #[test]
    fn samples_are_members() {
        let bodies: Vec<Box<dyn ConvexBody>> = vec![
            Box::new(ConeHull::density_simplex(5).unwrap()),
            Box::new(ConeHull::new(0.25, 5).unwrap()),
            Box::new(UnitBall::new(5).unwrap()),
            Box::new(CtBody::new(1.5, 16).unwrap()),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for b in &bodies {
            for _ in 0..200 {
                let x = b.sample(&mut rng);
                assert!(b.check(&x, 1e-9).is_ok(), "{}: {:?}", b.name(), b.check(&x, 1e-9));
            }
        }
    }

    #[test]
    fn ct_recenter_and_distance() {
        let body = CtBody::new(1.5, 16).unwrap();
        let zero = body.origin();
        let seq: Vec<Point> = (2..=16).map(|n| body.vertex(n).unwrap()).collect();
        let r = body.recenter(&zero, &seq).unwrap();
        assert_eq!(r.point, body.vertex(1).unwrap());
        assert_eq!(limsup_distance(&r.point, &seq, 0.5).unwrap(), 1.5);
        let d = distance_to_set(&body, &zero, 10, 0, 1e-12).unwrap();
        assert_eq!(d.bound_type, BoundType::Exact);
        assert!((d.upper - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ct_nearest_point_is_optimal_by_enumeration() {
        // Oracle: grid search over the 3-slot simplex.
        let body = CtBody::new(1.3, 3).unwrap();
        let cases = [[0.0, 0.0, 0.0], [0.5, 0.9, -0.2], [0.2, 0.1, 0.1], [1.2, 0.0, 0.5]];
        for x in cases {
            let xp = CoordPoint::new(1.3, x.to_vec()).unwrap();
            let exact = xp.distance(&body.nearest(&xp)).unwrap();
            let mut best = f64::INFINITY;
            let steps = 200;
            for i in 0..=steps {
                for j in 0..=steps - i {
                    let s = vec![
                        i as f64 / steps as f64,
                        j as f64 / steps as f64,
                        (steps - i - j) as f64 / steps as f64,
                    ];
                    best = best.min(xp.distance(&CoordPoint::new(1.3, s).unwrap()).unwrap());
                }
            }
            assert!(exact <= best + 1e-12, "{x:?}: {exact} > {best}");
            assert!(best - exact < 2e-2);
        }
    }

    #[test]
    fn distance_from_origin_to_density_simplex_is_one() {
        let c = ConeHull::density_simplex(6).unwrap();
        let d = distance_to_set(&c, &c.origin(), 50, 1, 1e-9).unwrap();
        assert!((d.upper - 1.0).abs() < 1e-12);
        assert_eq!(d.bound_type, BoundType::Exact);
        let member = sample_seeded(&c, 3);
        assert_eq!(distance_to_set(&c, &member, 0, 0, 1e-9).unwrap().upper, 0.0);
    }

    #[test]
    fn cone_hull_recenter_on_peaks() {
        for a in [0.0, 0.25, 0.5, 1.0] {
            let body = ConeHull::new(a, 8).unwrap();
            let seq: Vec<Point> = (0..=8).map(|k| Point::Grid(peak(1 << k, 8).unwrap())).collect();
            let zero = body.origin();
            let r = body.recenter(&zero, &seq).unwrap();
            assert_eq!(r.bound_type, BoundType::Exact);
            let expect = GridFunction::constant(8, a).unwrap();
            assert!(r.point.as_grid().unwrap().l1_distance(&expect) < 1e-12, "a = {a}");
        }
    }

    #[test]
    fn unknown_set_json_rejected() {
        let ok: BodySpec = serde_json::from_str(r#"{"set":"ct","t":1.5,"M":64}"#).unwrap();
        assert_eq!(ok, BodySpec::Ct { t: 1.5, m: 64 });
        assert!(serde_json::from_str::<BodySpec>(r#"{"set":"simplex"}"#).is_err());
        assert!(serde_json::from_str::<BodySpec>(r#"{"set":"ball","r":2}"#).is_err());
    }
}
