//! Affine self-maps, their orbits, Cesàro means, and per-iterate Lipschitz data.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FptError, Result};
use crate::grid::GridFunction;
use crate::point::{CoordPoint, Point};
use crate::report::BoundType;
use crate::sets::ConvexBody;

pub trait AffineOperator: Send + Sync {
    fn name(&self) -> String;

    fn apply(&self, x: &Point) -> Result<Point>;

    /// `|T^n|` in closed form, when known.
    fn lipschitz_exact(&self, _n: usize) -> Option<f64> {
        None
    }

    /// Number of leading grid cells where the grid realization saturates:
    /// mass pushed there stands for mass concentrating below the resolution.
    fn saturation_cells(&self) -> usize {
        0
    }
}

/// Catalog descriptor, addressed by `{"op": ...}` JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Identity {},
    Doubling {},
    Retraction {},
    RetractionCompose {},
    Cyclic {},
    CtShift { t: f64 },
}

impl OperatorSpec {
    pub fn build(&self) -> Result<Box<dyn AffineOperator>> {
        Ok(match *self {
            OperatorSpec::Identity {} => Box::new(Identity),
            OperatorSpec::Doubling {} => Box::new(DoublingShift),
            OperatorSpec::Retraction {} => Box::new(NormalizingRetraction),
            OperatorSpec::RetractionCompose {} => Box::new(ComposedG),
            OperatorSpec::Cyclic {} => Box::new(CyclicShift),
            OperatorSpec::CtShift { t } => Box::new(CtShift::new(t)?),
        })
    }
}

fn grid_only<'a>(x: &'a Point, op: &str) -> Result<&'a GridFunction> {
    x.as_grid()
        .ok_or_else(|| FptError::PointMismatch(format!("{op} acts on grid functions")))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl AffineOperator for Identity {
    fn name(&self) -> String {
        "identity".into()
    }

    fn apply(&self, x: &Point) -> Result<Point> {
        Ok(x.clone())
    }

    fn lipschitz_exact(&self, _n: usize) -> Option<f64> {
        Some(1.0)
    }
}

/// Grid realization of `T f(t) = 2 f(2t)` (zero for `t > 1/2`): the
/// conditional expectation of the exact map onto the same grid,
/// `(Tf)_i = f_{2i} + f_{2i+1}` on the left half and `0` on the right.
///
/// The exact map is an isometry, so `|Tⁿ| = 1` is recorded; on the grid the
/// realization is only nonexpansive for sign-mixed sibling cells. Orbits
/// longer than the level pile up in the first cell.
#[derive(Debug, Clone, Copy, Default)]
pub struct DoublingShift;

impl DoublingShift {
    pub fn apply_grid(f: &GridFunction) -> GridFunction {
        if f.level() == 0 {
            return f.clone();
        }
        let v = f.values();
        let half = v.len() / 2;
        let mut out = vec![0.0; v.len()];
        for (i, o) in out[..half].iter_mut().enumerate() {
            *o = v[2 * i] + v[2 * i + 1];
        }
        GridFunction::from_parts_unchecked(f.level(), out)
    }
}

impl AffineOperator for DoublingShift {
    fn name(&self) -> String {
        "doubling".into()
    }

    fn apply(&self, x: &Point) -> Result<Point> {
        Ok(Point::Grid(Self::apply_grid(grid_only(x, "doubling")?)))
    }

    fn lipschitz_exact(&self, _n: usize) -> Option<f64> {
        Some(1.0)
    }

    fn saturation_cells(&self) -> usize {
        1
    }
}

/// `R(f) = f + (1 - |f|)·1`, an affine retraction of `C_0` onto `C`.
/// On `C_0` the norm is the integral, and the integral is what gets
/// evaluated: round-off negatives would otherwise make `|f| > ∫f` and the
/// lost mass doubles under each application of `G`.
///
/// `|R| = 2`: the pair `0`, `n χ_[0,1/n)` gives ratio `2 - 2/n`, and
/// `|R f - R g| ≤ |f - g| + ||f| - |g|| ≤ 2|f - g|`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NormalizingRetraction;

impl NormalizingRetraction {
    pub fn apply_grid(f: &GridFunction) -> GridFunction {
        f.add_constant(1.0 - f.integral())
    }
}

impl AffineOperator for NormalizingRetraction {
    fn name(&self) -> String {
        "retraction".into()
    }

    fn apply(&self, x: &Point) -> Result<Point> {
        Ok(Point::Grid(Self::apply_grid(grid_only(x, "retraction")?)))
    }

    fn lipschitz_exact(&self, _n: usize) -> Option<f64> {
        Some(2.0)
    }
}

/// `G = T R` on `C_0`. Since `R` fixes `C` and `T` maps `C` into itself,
/// `Gⁿ = Tⁿ R`; `T` is an isometry on `C`, so `|Gⁿ| = |R| = 2` for every `n`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ComposedG;

impl AffineOperator for ComposedG {
    fn name(&self) -> String {
        "retraction_compose".into()
    }

    fn apply(&self, x: &Point) -> Result<Point> {
        let f = grid_only(x, "retraction_compose")?;
        Ok(Point::Grid(DoublingShift::apply_grid(&NormalizingRetraction::apply_grid(f))))
    }

    fn lipschitz_exact(&self, _n: usize) -> Option<f64> {
        Some(2.0)
    }

    fn saturation_cells(&self) -> usize {
        1
    }
}

/// Circular shift of the grid cells by one: a measure-preserving isometry
/// whose fixed points are the constants.
#[derive(Debug, Clone, Copy, Default)]
pub struct CyclicShift;

impl AffineOperator for CyclicShift {
    fn name(&self) -> String {
        "cyclic".into()
    }

    fn apply(&self, x: &Point) -> Result<Point> {
        let f = grid_only(x, "cyclic")?;
        let mut values = f.values().to_vec();
        values.rotate_right(1);
        Ok(Point::Grid(GridFunction::from_parts_unchecked(f.level(), values)))
    }

    fn lipschitz_exact(&self, _n: usize) -> Option<f64> {
        Some(1.0)
    }
}

/// `s_1 (t-1) g_1 + Σ_{n≥2} s_n g_n ↦ Σ_{n≥1} s_n g_{n+1}`, i.e. coordinates
/// move one slot to the right. `|Tⁿ| = 2/t`, attained by `(t-1)g_1` and `g_2`.
#[derive(Debug, Clone, Copy)]
pub struct CtShift {
    t: f64,
}

impl CtShift {
    pub fn new(t: f64) -> Result<Self> {
        if !(t > 1.0 && t < 2.0) {
            return Err(FptError::InvalidArgument(format!("t = {t} not in (1, 2)")));
        }
        Ok(Self { t })
    }
}

impl AffineOperator for CtShift {
    fn name(&self) -> String {
        format!("ct_shift(t={})", self.t)
    }

    fn apply(&self, x: &Point) -> Result<Point> {
        let c = x
            .as_coord()
            .ok_or_else(|| FptError::PointMismatch("ct_shift acts on coordinates".into()))?;
        if c.t() != self.t {
            return Err(FptError::PointMismatch(format!(
                "ct_shift(t={}) applied to a point with t={}",
                self.t,
                c.t()
            )));
        }
        let m = c.truncation();
        if c.coeffs()[m - 1] != 0.0 {
            return Err(FptError::Truncation { slot: m });
        }
        let mut out = c.clone();
        let s = out.coeffs_mut();
        s.rotate_right(1);
        s[0] = 0.0;
        Ok(Point::Coord(out))
    }

    fn lipschitz_exact(&self, _n: usize) -> Option<f64> {
        Some(2.0 / self.t)
    }
}

/// `T` applied to a point that must lie in `body`; `iterate` labels errors.
pub fn apply_in(
    op: &dyn AffineOperator,
    body: &dyn ConvexBody,
    x: &Point,
    tol: f64,
    iterate: usize,
) -> Result<Point> {
    body.check(x, tol).map_err(|reason| FptError::DomainViolation { iterate, reason })?;
    op.apply(x).map_err(|e| match e {
        FptError::Truncation { .. } => FptError::DomainViolation { iterate, reason: e.to_string() },
        other => other,
    })
}

pub fn power_apply(op: &dyn AffineOperator, x: &Point, n: usize) -> Result<Point> {
    let mut y = x.clone();
    for _ in 0..n {
        y = op.apply(&y)?;
    }
    Ok(y)
}

/// `|x - Tx|`.
pub fn afps_residual(op: &dyn AffineOperator, x: &Point) -> Result<f64> {
    x.distance(&op.apply(x)?)
}

/// The Cesàro means `z_s = (T x0 + ... + T^s x0) / s` for `s = 1..=n_max`,
/// by the running recurrence, using exactly `n_max` applications. Every
/// orbit point is checked against `body` when one is given.
pub fn cesaro_means(
    op: &dyn AffineOperator,
    body: Option<&dyn ConvexBody>,
    x0: &Point,
    n_max: usize,
    tol: f64,
) -> Result<Vec<Point>> {
    if n_max == 0 {
        return Err(FptError::InvalidArgument("n_max must be >= 1".into()));
    }
    let mut out = Vec::with_capacity(n_max);
    let mut orbit = x0.clone();
    let mut mean: Option<Point> = None;
    for s in 1..=n_max {
        orbit = match body {
            Some(b) => apply_in(op, b, &orbit, tol, s - 1)?,
            None => op.apply(&orbit)?,
        };
        match mean.as_mut() {
            None => mean = Some(orbit.clone()),
            Some(z) => z.mean_update(&orbit, s)?,
        }
        out.push(mean.clone().expect("set above"));
    }
    Ok(out)
}

/// One line of a Cesàro orbit dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitRow {
    pub s: usize,
    pub residual: f64,
    pub norm: f64,
    pub ky_fan_to_detected_limit: f64,
}

pub const ORBIT_HEADER: [&str; 4] = ["s", "residual", "norm", "ky_fan_to_detected_limit"];

/// `|z_s - T z_s|`, `|z_s|`, and Ky Fan distance to `limit` for the first
/// `n_max` Cesàro means. Without a limit the last mean stands in.
pub fn orbit_dump(
    op: &dyn AffineOperator,
    x0: &Point,
    n_max: usize,
    limit: Option<&Point>,
) -> Result<Vec<OrbitRow>> {
    let means = cesaro_means(op, None, x0, n_max, 0.0)?;
    let limit = limit.cloned().unwrap_or_else(|| means[means.len() - 1].clone());
    means
        .iter()
        .enumerate()
        .map(|(i, z)| {
            Ok(OrbitRow {
                s: i + 1,
                residual: afps_residual(op, z)?,
                norm: z.norm(),
                ky_fan_to_detected_limit: z.ky_fan_distance(&limit)?,
            })
        })
        .collect()
}

pub fn write_orbit_csv<W: std::io::Write>(out: W, rows: &[OrbitRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ORBIT_HEADER)?;
    for r in rows {
        w.write_record([
            r.s.to_string(),
            r.residual.to_string(),
            r.norm.to_string(),
            r.ky_fan_to_detected_limit.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Largest `|T(λx + (1-λ)y) - λTx - (1-λ)Ty|` over sampled pairs and
/// `λ ∈ {0, 1/4, 1/2, 3/4, 1}`.
pub fn affinity_defect(
    op: &dyn AffineOperator,
    body: &dyn ConvexBody,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let x = body.sample(&mut rng);
        let y = body.sample(&mut rng);
        let (tx, ty) = (op.apply(&x)?, op.apply(&y)?);
        for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let lhs = op.apply(&x.combine(lambda, &y)?)?;
            let rhs = tx.combine(lambda, &ty)?;
            worst = worst.max(lhs.distance(&rhs)?);
        }
    }
    Ok(worst)
}

pub fn certify_affine(
    op: &dyn AffineOperator,
    body: &dyn ConvexBody,
    pairs: usize,
    seed: u64,
    tol: f64,
) -> Result<()> {
    let defect = affinity_defect(op, body, pairs, seed)?;
    if defect > tol {
        return Err(FptError::NotAffine { defect, tol });
    }
    Ok(())
}

/// Lower bound on `|Tⁿ|`: the largest ratio `|Tⁿx - Tⁿy| / |x - y|` over
/// `pairs` sampled pairs. Coincident pairs are skipped.
pub fn lipschitz_estimate(
    op: &dyn AffineOperator,
    n: usize,
    body: &dyn ConvexBody,
    pairs: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampled = (0..pairs).map(|_| (body.sample(&mut rng), body.sample(&mut rng)));
    lipschitz_over_pairs(op, n, sampled)
}

pub fn lipschitz_over_pairs(
    op: &dyn AffineOperator,
    n: usize,
    pairs: impl IntoIterator<Item = (Point, Point)>,
) -> Result<f64> {
    let mut best: Option<f64> = None;
    for (x, y) in pairs {
        let d = x.distance(&y)?;
        if d <= f64::EPSILON {
            continue;
        }
        let ratio = power_apply(op, &x, n)?.distance(&power_apply(op, &y, n)?)? / d;
        best = Some(best.map_or(ratio, |b: f64| b.max(ratio)));
    }
    best.ok_or(FptError::DegeneratePairs)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SEstimate {
    pub value: f64,
    pub bound_type: BoundType,
    /// `|T^k|` (exact or sampled) for `k = 1..=n_max`.
    pub per_iterate: Vec<f64>,
}

/// `min_{n ≤ n_max} (|T| + ... + |Tⁿ|) / n`, the finite-prefix liminf.
/// Exact when every `|T^k|` is known in closed form; otherwise the sampled
/// constants make it a lower bound.
pub fn s_of_t(
    op: &dyn AffineOperator,
    n_max: usize,
    body: &dyn ConvexBody,
    pairs: usize,
    seed: u64,
) -> Result<SEstimate> {
    if n_max == 0 {
        return Err(FptError::InvalidArgument("n_max must be >= 1".into()));
    }
    let mut per_iterate = Vec::with_capacity(n_max);
    let mut all_exact = true;
    for k in 1..=n_max {
        let l = match op.lipschitz_exact(k) {
            Some(l) => l,
            None => {
                all_exact = false;
                lipschitz_estimate(op, k, body, pairs, seed.wrapping_add(k as u64))?
            }
        };
        per_iterate.push(l);
    }
    // Running-mean form keeps a constant sequence exactly constant.
    let mut mean = 0.0;
    let mut value = f64::INFINITY;
    for (i, l) in per_iterate.iter().enumerate() {
        mean += (l - mean) / (i + 1) as f64;
        value = value.min(mean);
    }
    let bound_type = if all_exact { BoundType::Exact } else { BoundType::Lower };
    Ok(SEstimate { value, bound_type, per_iterate })
}

/// Zero the saturation cells of `op` (mass parked below the grid resolution).
pub fn resolved_part(op: &dyn AffineOperator, x: &Point) -> Point {
    let k = op.saturation_cells();
    match x {
        Point::Grid(f) if k > 0 => {
            let mut values = f.values().to_vec();
            let k = k.min(values.len());
            values[..k].fill(0.0);
            Point::Grid(GridFunction::from_parts_unchecked(f.level(), values))
        }
        _ => x.clone(),
    }
}

/// L1 mass of `x` inside the saturation cells of `op`.
pub fn saturated_mass(op: &dyn AffineOperator, x: &Point) -> f64 {
    let k = op.saturation_cells();
    match x {
        Point::Grid(f) if k > 0 => {
            f.values().iter().take(k).map(|v| v.abs()).sum::<f64>() * f.cell_width()
        }
        _ => 0.0,
    }
}

/// Convenience: the vertex `e_n` of `C_t`.
pub fn ct_vertex(t: f64, m: usize, n: usize) -> Result<Point> {
    Ok(Point::Coord(CoordPoint::vertex(t, m, n)?))
}
