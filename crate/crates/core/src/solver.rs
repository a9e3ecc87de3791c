//! The constructive fixed-point engine: Cesàro a.f.p.s. chains, a
//! cluster-and-median stand-in for Komlós extraction, the `r(y)` functional,
//! the contraction step `x0 ↦ w(x0)`, and the outer iteration `a_{k+1} = w(a_k)`.
//!
//! When the fixed-point gate fails, or a step cannot be certified, the solver
//! follows a single Cesàro chain over doubling horizons and classifies its
//! in-measure limit instead.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::coefficients::{opial_one_plus_r, t_report, theorem_condition};
use crate::error::{FptError, Result};
use crate::grid::limsup_tail;
use crate::operators::{
    afps_residual, apply_in, certify_affine, resolved_part, s_of_t, saturated_mass, AffineOperator,
};
use crate::point::Point;
use crate::report::BoundType;
use crate::sets::ConvexBody;

pub const EXTRACTION_TOL: f64 = 1e-3;
pub const MIN_CLUSTER: usize = 4;
pub const MIN_EXTRACT_LEN: usize = 8;
/// Stored points per chain horizon.
pub const SNAPSHOT_POINTS: usize = 64;
/// Consecutive horizons whose limits must agree before a limit is trusted.
pub const STABLE_HORIZONS: usize = 3;
const NORM_BOUND: f64 = 1e12;
const AFFINITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extraction {
    /// Positions in the input sequence, increasing.
    pub indices: Vec<usize>,
    pub limit: Point,
    /// Largest Ky Fan distance from `limit` to a selected term.
    pub quality: f64,
}

/// Finite stand-in for Komlós' theorem.
///
/// Each term of the trailing half is tried as a cluster center; the center
/// with the most terms (anywhere in `seq`) within Ky Fan radius `tol/3` wins,
/// later centers breaking ties. A cluster must spread over at least half of
/// the index range, so a slowly drifting sequence is extended instead of being
/// cut at a local plateau. The limit is the componentwise median of the
/// cluster, or the center itself if the median lands farther than `tol`
/// from some member.
pub fn komlos_extract(seq: &[Point], tol: f64, bound: f64) -> Result<Extraction> {
    let n = seq.len();
    if n < MIN_EXTRACT_LEN {
        return Err(FptError::InvalidArgument(format!(
            "need at least {MIN_EXTRACT_LEN} terms, got {n}"
        )));
    }
    for x in seq {
        let norm = x.norm();
        if !(norm <= bound) {
            return Err(FptError::Unbounded { norm, bound });
        }
    }
    let radius = tol / 3.0;
    let mut best: Vec<usize> = Vec::new();
    let mut best_center = n - 1;
    for c in n / 2..n {
        let mut members = Vec::new();
        for (j, x) in seq.iter().enumerate() {
            if j == c || seq[c].ky_fan_distance(x)? <= radius {
                members.push(j);
            }
        }
        let spread = members.last().unwrap_or(&c) - members.first().unwrap_or(&c);
        if 2 * spread >= n && members.len() >= best.len() {
            best = members;
            best_center = c;
        }
    }
    if best.len() < MIN_CLUSTER {
        return Err(FptError::NoCluster { tol, min_size: MIN_CLUSTER });
    }
    let members: Vec<&Point> = best.iter().map(|&i| &seq[i]).collect();
    let quality_of = |p: &Point| -> Result<f64> {
        members.iter().try_fold(0.0f64, |acc, m| Ok(acc.max(p.ky_fan_distance(m)?)))
    };
    let median = Point::componentwise_median(&members)?;
    let q = quality_of(&median)?;
    let (limit, quality) = if q <= tol {
        (median, q)
    } else {
        let center = seq[best_center].clone();
        let q = quality_of(&center)?;
        (center, q)
    };
    Ok(Extraction { indices: best, limit, quality })
}

/// A stored stretch of an approximate fixed point sequence with its
/// in-measure limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AfpsRecord {
    pub points: Vec<Point>,
    /// Cesàro index `s` of each stored point.
    pub indices: Vec<usize>,
    pub residuals: Vec<f64>,
    pub limit: Point,
    pub limit_quality: f64,
    /// Positions in `points` chosen by the extraction.
    pub cluster: Vec<usize>,
}

/// Upper bound on `r(y)`: the least `limsup_tail |y - x_n|` over `records`.
pub fn r_estimate(y: &Point, records: &[AfpsRecord], window: f64) -> Result<f64> {
    best_record(y, records.iter(), window).map(|(r, _)| r)
}

fn best_record<'a>(
    y: &Point,
    records: impl Iterator<Item = &'a AfpsRecord>,
    window: f64,
) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for (i, rec) in records.enumerate() {
        let d = rec.points.iter().map(|x| y.distance(x)).collect::<Result<Vec<_>>>()?;
        let r = limsup_tail(&d, window)?;
        if best.is_none_or(|(b, _)| r < b) {
            best = Some((r, i));
        }
    }
    best.ok_or(FptError::EmptySequence)
}

/// Operator applications allowed to one solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    used: usize,
    max: usize,
}

impl Budget {
    pub fn new(max: usize) -> Self {
        Self { used: 0, max }
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn remaining(&self) -> usize {
        self.max - self.used
    }

    pub fn spend(&mut self, k: usize) -> Result<()> {
        if self.used + k > self.max {
            return Err(FptError::Budget { max: self.max });
        }
        self.used += k;
        Ok(())
    }
}

/// Running Cesàro means `z_s` of the orbit of `x0`, one application per step.
struct Chain<'a> {
    op: &'a dyn AffineOperator,
    body: &'a dyn ConvexBody,
    tol: f64,
    t_x0: Point,
    orbit: Point,
    next: Option<Point>,
    mean: Point,
    s: usize,
}

impl<'a> Chain<'a> {
    fn start(
        op: &'a dyn AffineOperator,
        body: &'a dyn ConvexBody,
        x0: &Point,
        tol: f64,
        budget: &mut Budget,
    ) -> Result<Self> {
        budget.spend(1)?;
        let t_x0 = apply_in(op, body, x0, tol, 0)?;
        Ok(Self { op, body, tol, orbit: t_x0.clone(), mean: t_x0.clone(), t_x0, next: None, s: 1 })
    }

    /// Computes `T^{s+1} x0` and returns the residual of `z_s` through
    /// `|z_s - T z_s| = |T x0 - T^{s+1} x0| / s`.
    fn next_residual(&mut self, budget: &mut Budget) -> Result<f64> {
        budget.spend(1)?;
        let next = apply_in(self.op, self.body, &self.orbit, self.tol, self.s)?;
        let r = self.t_x0.distance(&next)? / self.s as f64;
        self.next = Some(next);
        Ok(r)
    }

    fn advance(&mut self) -> Result<()> {
        let next = self.next.take().expect("next_residual before advance");
        self.s += 1;
        self.mean.mean_update(&next, self.s)?;
        self.orbit = next;
        Ok(())
    }
}

/// Points of the trailing half `(H/2, H]` of the current horizon `H`.
struct Snapshots {
    horizon: usize,
    points: Vec<Point>,
    indices: Vec<usize>,
}

impl Snapshots {
    fn new(horizon: usize) -> Self {
        Self { horizon: horizon.max(2 * MIN_EXTRACT_LEN), points: Vec::new(), indices: Vec::new() }
    }

    fn stride(&self) -> usize {
        (self.horizon / 2 / SNAPSHOT_POINTS).max(1)
    }

    fn offer(&mut self, s: usize, z: &Point) {
        let half = self.horizon / 2;
        if s > half && (s - half).is_multiple_of(self.stride()) {
            self.points.push(z.clone());
            self.indices.push(s);
        }
    }

    fn next_horizon(&mut self) {
        self.horizon *= 2;
        self.points.clear();
        self.indices.clear();
    }
}

fn extract_resolved(op: &dyn AffineOperator, points: &[Point], tol: f64) -> Result<Extraction> {
    let resolved: Vec<Point> = points.iter().map(|p| resolved_part(op, p)).collect();
    komlos_extract(&resolved, tol, NORM_BOUND)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    FixedPoint,
    EscapedInMeasure,
    BudgetExhausted,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::FixedPoint => "fixed_point",
            SolveStatus::EscapedInMeasure => "escaped_in_measure",
            SolveStatus::BudgetExhausted => "budget_exhausted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Proof,
    Practical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    XBar,
    ZBar,
    Degenerate,
    Fixed,
    Horizon,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::XBar => "x_bar",
            Branch::ZBar => "z_bar",
            Branch::Degenerate => "degenerate",
            Branch::Fixed => "fixed",
            Branch::Horizon => "horizon",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Outer iteration in proof mode, horizon `H` of a chain otherwise.
    pub outer_iter: usize,
    pub r_estimate: Option<f64>,
    pub branch: Branch,
    pub displacement: Option<f64>,
    pub residual: Option<f64>,
    pub ky_fan_to_limit: Option<f64>,
    pub membership: bool,
}

pub const TRACE_HEADER: [&str; 7] =
    ["outer_iter", "r_estimate", "branch", "displacement", "residual", "ky_fan_to_limit", "membership"];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_trace_csv<W: std::io::Write>(out: W, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for row in trace {
        w.write_record([
            row.outer_iter.to_string(),
            opt(row.r_estimate),
            row.branch.to_string(),
            opt(row.displacement),
            opt(row.residual),
            opt(row.ky_fan_to_limit),
            row.membership.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_outer: usize,
    /// Operator applications allowed per solve.
    pub budget: usize,
    /// First chain horizon; doubled until extraction succeeds.
    pub horizon: usize,
    pub extraction_tol: f64,
    pub pool_size: usize,
    /// Constant step parameter; `None` picks half the admissible root.
    pub eps: Option<f64>,
    /// Stop a chain once its limit is classified.
    pub stop_on_diagnosis: bool,
    pub seed: u64,
    pub lipschitz_pairs: usize,
    /// Iterates entering `S(T)`.
    pub s_horizon: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_outer: 32,
            budget: 1_000_000,
            horizon: 1024,
            extraction_tol: EXTRACTION_TOL,
            pool_size: 8,
            eps: None,
            stop_on_diagnosis: true,
            seed: 0,
            lipschitz_pairs: 32,
            s_horizon: 16,
        }
    }
}

/// The quantities entering `S(T) < (1 + r)/t(C)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub s: f64,
    pub t: f64,
    pub one_plus_r: f64,
}

impl Gate {
    pub fn measure(op: &dyn AffineOperator, body: &dyn ConvexBody, cfg: &SolverConfig) -> Result<Self> {
        let s = s_of_t(op, cfg.s_horizon, body, cfg.lipschitz_pairs, cfg.seed)?.value;
        let t = match body.t_exact() {
            Some(t) => t,
            None => t_report(body, cfg.tol)?.estimate_high,
        };
        Ok(Self { s, t, one_plus_r: opial_one_plus_r("L1")? })
    }

    pub fn threshold(&self) -> f64 {
        self.one_plus_r / self.t
    }

    pub fn holds(&self) -> bool {
        theorem_condition(self.s, self.t, self.one_plus_r)
    }

    fn admits(&self, eps: f64) -> bool {
        eps > 0.0 && eps < 1.0 && self.s * (1.0 + eps).powi(2) < self.threshold() * (1.0 - eps)
    }
}

/// Half the root of `S (1+ε)² = q (1-ε)`, `q = (1+r)/t`.
pub fn admissible_eps(gate: &Gate) -> Result<f64> {
    let (s, q) = (gate.s, gate.threshold());
    if !(s < q) {
        return Err(FptError::NoAdmissibleEps { s, threshold: q });
    }
    let root = if s == 0.0 {
        1.0
    } else {
        let b = 2.0 * s + q;
        (-b + (b * b - 4.0 * s * (s - q)).sqrt()) / (2.0 * s)
    };
    Ok(root / 2.0)
}

/// Bounded working set of records, oldest evicted first.
#[derive(Debug, Clone)]
pub struct RecordPool {
    records: VecDeque<AfpsRecord>,
    cap: usize,
}

impl RecordPool {
    pub fn new(cap: usize) -> Self {
        Self { records: VecDeque::new(), cap: cap.max(1) }
    }

    pub fn push(&mut self, rec: AfpsRecord) {
        if self.records.len() == self.cap {
            self.records.pop_front();
        }
        self.records.push_back(rec);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn r_estimate(&self, y: &Point) -> Result<f64> {
        best_record(y, self.records.iter(), 1.0).map(|(r, _)| r)
    }
}

/// The Cesàro chain of `x0`, grown over doubling horizons until its stored
/// tail clusters.
pub fn build_record(
    op: &dyn AffineOperator,
    body: &dyn ConvexBody,
    x0: &Point,
    cfg: &SolverConfig,
    budget: &mut Budget,
) -> Result<AfpsRecord> {
    let mut chain = Chain::start(op, body, x0, cfg.tol, budget)?;
    let mut snaps = Snapshots::new(cfg.horizon);
    snaps.offer(1, &chain.mean);
    loop {
        while chain.s < snaps.horizon {
            chain.next_residual(budget)?;
            chain.advance()?;
            snaps.offer(chain.s, &chain.mean);
        }
        match extract_resolved(op, &snaps.points, cfg.extraction_tol) {
            Ok(ex) => {
                budget.spend(snaps.points.len())?;
                let residuals =
                    snaps.points.iter().map(|p| afps_residual(op, p)).collect::<Result<_>>()?;
                return Ok(AfpsRecord {
                    points: std::mem::take(&mut snaps.points),
                    indices: std::mem::take(&mut snaps.indices),
                    residuals,
                    limit: ex.limit,
                    limit_quality: ex.quality,
                    cluster: ex.indices,
                });
            }
            Err(FptError::NoCluster { .. }) => snaps.next_horizon(),
            Err(e) => return Err(e),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub branch: Branch,
    pub eps: f64,
    pub r_before: f64,
    /// Verified bound on `r(w)`.
    pub r_after: f64,
    pub rho: f64,
    /// `limsup |x - x_n|` for the best record and its limit `x`.
    pub x_branch: f64,
    /// `limsup |z - z̄_p|` for the extracted means of the step chain.
    pub z_branch: f64,
    pub displacement: f64,
    pub displacement_bound: f64,
    /// `min_s φ(z_s)` against `S φ(x0)`: the finite-horizon liminf.
    pub phi_liminf: f64,
    pub s_phi_x0: f64,
    pub recenter_bound: BoundType,
}

/// One contraction step `x0 ↦ w(x0)`.
///
/// `chain` is the Cesàro record of `x0` itself and must already sit in
/// `pool`. Returns `w` with `r(w) ≤ (1-ε) r(x0)` and
/// `|x0 - w| ≤ [2 + (1+ε)S] r(x0)` checked to within `tol`.
pub fn proof_step(
    op: &dyn AffineOperator,
    body: &dyn ConvexBody,
    x0: &Point,
    eps: f64,
    gate: &Gate,
    pool: &mut RecordPool,
    chain: &AfpsRecord,
    tol: f64,
) -> Result<(Point, StepReport)> {
    if !gate.admits(eps) {
        return Err(FptError::NoAdmissibleEps { s: gate.s, threshold: gate.threshold() });
    }
    let window = crate::grid::DEFAULT_WINDOW;
    let (r0, best) = best_record(x0, pool.records.iter(), 1.0)?;
    let displacement_bound = (2.0 + (1.0 + eps) * gate.s) * r0;
    if r0 <= tol {
        let report = StepReport {
            branch: Branch::Degenerate,
            eps,
            r_before: r0,
            r_after: r0,
            rho: 0.0,
            x_branch: 0.0,
            z_branch: 0.0,
            displacement: 0.0,
            displacement_bound,
            phi_liminf: r0,
            s_phi_x0: gate.s * r0,
            recenter_bound: BoundType::Exact,
        };
        return Ok((x0.clone(), report));
    }
    let xr = pool.records[best].clone();
    let rho = r0 * (1.0 - eps) / (gate.t * (1.0 + eps));
    let dist_tail = |c: &Point, seq: &[Point], w: f64| -> Result<f64> {
        let d = seq.iter().map(|x| c.distance(x)).collect::<Result<Vec<_>>>()?;
        limsup_tail(&d, w)
    };
    let x_branch = dist_tail(&xr.limit, &xr.points, window)?;

    let mut zbar = Vec::with_capacity(chain.cluster.len());
    for &i in &chain.cluster {
        let p = &chain.points[i];
        match zbar.last() {
            None => zbar.push(p.clone()),
            Some(prev) => {
                let mut next: Point = Point::clone(prev);
                next.mean_update(p, zbar.len() + 1)?;
                zbar.push(next);
            }
        }
    }
    let z = &chain.limit;
    let z_branch = dist_tail(z, &zbar, window)?;

    let mut phi_liminf = f64::INFINITY;
    for zs in &chain.points {
        phi_liminf = phi_liminf.min(dist_tail(zs, &xr.points, 1.0)?);
    }

    let (branch, rec, seq) = if x_branch <= rho + tol {
        (Branch::XBar, body.recenter(&xr.limit, &xr.points)?, xr.points.clone())
    } else if z_branch <= rho + tol {
        (Branch::ZBar, body.recenter(z, &zbar)?, zbar.clone())
    } else {
        return Err(FptError::NeitherBranch { x_branch, z_branch, rho });
    };
    let w = rec.point;
    body.check(&w, tol.max(1e-9))
        .map_err(|reason| FptError::Certificate(format!("recentered point left the body: {reason}")))?;
    let r_after = dist_tail(&w, &seq, 1.0)?;
    if r_after > (1.0 - eps) * r0 + tol {
        return Err(FptError::Certificate(format!(
            "r(w) ≤ {r_after:.6e} exceeds (1-ε) r(x0) = {:.6e}",
            (1.0 - eps) * r0
        )));
    }
    let displacement = x0.distance(&w)?;
    if displacement > displacement_bound + tol {
        return Err(FptError::Certificate(format!(
            "|x0 - w| = {displacement:.6e} exceeds {displacement_bound:.6e}"
        )));
    }
    if branch == Branch::ZBar {
        let residuals = zbar.iter().map(|p| afps_residual(op, p)).collect::<Result<_>>()?;
        let n = zbar.len();
        pool.push(AfpsRecord {
            points: zbar,
            indices: chain.cluster.iter().map(|&i| chain.indices[i]).collect(),
            residuals,
            limit: z.clone(),
            limit_quality: chain.limit_quality,
            cluster: (0..n).collect(),
        });
    }
    let report = StepReport {
        branch,
        eps,
        r_before: r0,
        r_after,
        rho,
        x_branch,
        z_branch,
        displacement,
        displacement_bound,
        phi_liminf,
        s_phi_x0: gate.s * r0,
        recenter_bound: rec.bound_type,
    };
    Ok((w, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    pub mode: Mode,
    pub operator: String,
    pub body: String,
    /// Final iterate: the fixed point when found.
    pub point: Point,
    pub residual: f64,
    /// Membership violation of `point`, if any.
    pub membership: Option<String>,
    /// Classified in-measure limit of the last chain.
    pub limit: Option<Point>,
    /// Membership violation of `limit`, if any.
    pub limit_membership: Option<String>,
    /// Mass of the final chain mean parked in the operator's saturation cells.
    pub escaped_mass: f64,
    pub gate: Gate,
    pub theorem_condition: bool,
    pub eps: Option<f64>,
    pub applications: usize,
    /// Cesàro index of the accepted mean (practical mode).
    pub cesaro_index: Option<usize>,
    pub steps: Vec<StepReport>,
    pub trace: Vec<TraceRow>,
    pub diagnostics: Vec<String>,
}

impl SolveOutcome {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Whether `x` passes as a fixed point: small residual, membership, and no
/// mass parked below the grid resolution.
fn accept_fixed(op: &dyn AffineOperator, body: &dyn ConvexBody, x: &Point, residual: f64, tol: f64) -> bool {
    residual <= tol && body.contains(x, tol.max(1e-9)) && saturated_mass(op, x) <= tol
}

enum Verdict {
    Escaped(String),
    NotInvariant(f64),
    Invariant(f64),
    Unresolved,
}

struct ChainReport {
    verdict: Verdict,
    limit: Option<Point>,
    /// Last mean reached and its residual.
    last: (Point, f64),
    fixed: Option<(Point, f64, usize)>,
    rows: Vec<TraceRow>,
    notes: Vec<String>,
}

/// Runs one chain from `x0` over doubling horizons. With `screen`, each mean
/// whose residual identity drops below `tol` is confirmed directly and
/// accepted as a fixed point. At every horizon the stored tail is extracted;
/// a limit repeated over `STABLE_HORIZONS` horizons is classified.
fn follow_chain(
    op: &dyn AffineOperator,
    body: &dyn ConvexBody,
    x0: &Point,
    cfg: &SolverConfig,
    budget: &mut Budget,
    screen: bool,
) -> Result<ChainReport> {
    let mut notes = Vec::new();
    let mut rows = Vec::new();
    let mut chain = match Chain::start(op, body, x0, cfg.tol, budget) {
        Ok(c) => c,
        Err(e @ (FptError::DomainViolation { .. } | FptError::Budget { .. })) => {
            notes.push(e.to_string());
            return Ok(ChainReport {
                verdict: Verdict::Unresolved,
                limit: None,
                last: (x0.clone(), f64::NAN),
                fixed: None,
                rows,
                notes,
            });
        }
        Err(e) => return Err(e),
    };
    let mut snaps = Snapshots::new(cfg.horizon);
    let mut limits: Vec<Option<Point>> = Vec::new();
    let mut verdict = Verdict::Unresolved;
    let mut last_residual = f64::NAN;
    let mut fixed = None;
    loop {
        let res = match chain.next_residual(budget) {
            Ok(r) => r,
            Err(e @ (FptError::DomainViolation { .. } | FptError::Budget { .. })) => {
                notes.push(format!("chain stopped at s = {}: {e}", chain.s));
                break;
            }
            Err(e) => return Err(e),
        };
        last_residual = res;
        if screen && res <= cfg.tol && budget.spend(1).is_ok() {
            let direct = afps_residual(op, &chain.mean)?;
            if accept_fixed(op, body, &chain.mean, direct, cfg.tol) {
                fixed = Some((chain.mean.clone(), direct, chain.s));
                break;
            }
        }
        snaps.offer(chain.s, &chain.mean);
        if chain.s == snaps.horizon {
            let limit = match extract_resolved(op, &snaps.points, cfg.extraction_tol) {
                Ok(ex) => Some(ex.limit),
                Err(FptError::NoCluster { .. }) => None,
                Err(e) => return Err(e),
            };
            let prev = limits.last().cloned().flatten();
            let ky = match (&limit, &prev) {
                (Some(a), Some(b)) => Some(a.ky_fan_distance(b)?),
                _ => None,
            };
            rows.push(TraceRow {
                outer_iter: snaps.horizon,
                r_estimate: None,
                branch: Branch::Horizon,
                displacement: None,
                residual: Some(res),
                ky_fan_to_limit: ky,
                membership: limit.as_ref().is_some_and(|l| body.contains(l, cfg.tol.max(1e-9))),
            });
            limits.push(limit);
            if let Some(stable) = stable_limit(&limits, cfg.extraction_tol)? {
                verdict = classify(op, body, &stable, cfg, budget)?;
                if cfg.stop_on_diagnosis && !matches!(verdict, Verdict::Unresolved) {
                    break;
                }
            }
            snaps.next_horizon();
        }
        chain.advance()?;
    }
    let limit = limits.iter().rev().flatten().next().cloned();
    if matches!(verdict, Verdict::Unresolved) && limits.len() >= STABLE_HORIZONS {
        notes.push("chain limit did not stabilize over consecutive horizons".into());
    }
    Ok(ChainReport { verdict, limit, last: (chain.mean, last_residual), fixed, rows, notes })
}

/// The newest limit if the last `STABLE_HORIZONS` horizons all produced
/// limits pairwise within `tol`.
fn stable_limit(limits: &[Option<Point>], tol: f64) -> Result<Option<Point>> {
    if limits.len() < STABLE_HORIZONS {
        return Ok(None);
    }
    let tail = &limits[limits.len() - STABLE_HORIZONS..];
    let Some(tail) = tail.iter().cloned().collect::<Option<Vec<Point>>>() else {
        return Ok(None);
    };
    for i in 0..tail.len() {
        for j in i + 1..tail.len() {
            if tail[i].ky_fan_distance(&tail[j])? > tol {
                return Ok(None);
            }
        }
    }
    Ok(tail.last().cloned())
}

fn classify(
    op: &dyn AffineOperator,
    body: &dyn ConvexBody,
    limit: &Point,
    cfg: &SolverConfig,
    budget: &mut Budget,
) -> Result<Verdict> {
    if let Err(reason) = body.check(limit, cfg.tol.max(1e-9)) {
        return Ok(Verdict::Escaped(reason));
    }
    if budget.spend(1).is_err() {
        return Ok(Verdict::Unresolved);
    }
    let defect = afps_residual(op, limit)?;
    if accept_fixed(op, body, limit, defect, cfg.tol) {
        Ok(Verdict::Invariant(defect))
    } else {
        Ok(Verdict::NotInvariant(defect))
    }
}

struct Entry {
    gate: Gate,
    cond: bool,
}

fn entry(op: &dyn AffineOperator, body: &dyn ConvexBody, x0: &Point, cfg: &SolverConfig) -> Result<Entry> {
    if cfg.max_outer == 0 {
        return Err(FptError::InvalidArgument("max_outer must be >= 1".into()));
    }
    body.check(x0, cfg.tol.max(1e-9))
        .map_err(|reason| FptError::DomainViolation { iterate: 0, reason })?;
    certify_affine(op, body, 8, cfg.seed, AFFINITY_TOL)?;
    let gate = Gate::measure(op, body, cfg)?;
    Ok(Entry { cond: gate.holds(), gate })
}

struct Partial {
    point: Point,
    residual: f64,
    trace: Vec<TraceRow>,
    steps: Vec<StepReport>,
    diagnostics: Vec<String>,
    eps: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
fn finish(
    op: &dyn AffineOperator,
    body: &dyn ConvexBody,
    mode: Mode,
    e: &Entry,
    mut p: Partial,
    report: Option<ChainReport>,
    budget: &Budget,
    cfg: &SolverConfig,
    forced: Option<(SolveStatus, Option<usize>)>,
) -> SolveOutcome {
    let mut status = SolveStatus::BudgetExhausted;
    let mut limit = None;
    let mut cesaro_index = None;
    let mut escaped_mass = saturated_mass(op, &p.point);
    if let Some(r) = report {
        p.trace.extend(r.rows);
        p.diagnostics.extend(r.notes);
        escaped_mass = saturated_mass(op, &r.last.0);
        limit = r.limit.clone();
        if let Some((x, res, s)) = r.fixed {
            p.point = x;
            p.residual = res;
            cesaro_index = Some(s);
            status = SolveStatus::FixedPoint;
        } else {
            match r.verdict {
                Verdict::Escaped(reason) => {
                    p.diagnostics.push(format!("stable in-measure limit outside the body: {reason}"));
                    status = SolveStatus::EscapedInMeasure;
                }
                Verdict::Invariant(defect) => {
                    p.point = r.limit.clone().expect("classified limit");
                    p.residual = defect;
                    status = SolveStatus::FixedPoint;
                }
                Verdict::NotInvariant(defect) => p.diagnostics.push(format!(
                    "stable in-measure limit lies in the body but is not invariant: |Tx - x| = {defect:.6e}"
                )),
                Verdict::Unresolved => {}
            }
            if status != SolveStatus::FixedPoint && mode == Mode::Practical {
                p.point = r.last.0;
                p.residual = r.last.1;
            }
        }
    }
    if let Some((s, idx)) = forced {
        status = s;
        cesaro_index = cesaro_index.or(idx);
    }
    let membership = body.check(&p.point, cfg.tol.max(1e-9)).err();
    let limit_membership = limit.as_ref().and_then(|l| body.check(l, cfg.tol.max(1e-9)).err());
    SolveOutcome {
        status,
        mode,
        operator: op.name(),
        body: body.name(),
        point: p.point,
        residual: p.residual,
        membership,
        limit,
        limit_membership,
        escaped_mass,
        gate: e.gate,
        theorem_condition: e.cond,
        eps: p.eps,
        applications: budget.used(),
        cesaro_index,
        steps: p.steps,
        trace: p.trace,
        diagnostics: p.diagnostics,
    }
}

/// Proof-mode solve: the outer iteration `a_{k+1} = w(a_k)` while the gate
/// `S(T) < (1+r)/t(C)` holds, chain diagnosis otherwise.
pub fn solve(
    op: &dyn AffineOperator,
    body: &dyn ConvexBody,
    x0: &Point,
    cfg: &SolverConfig,
) -> Result<SolveOutcome> {
    let e = entry(op, body, x0, cfg)?;
    let mut budget = Budget::new(cfg.budget);
    let mut p = Partial {
        point: x0.clone(),
        residual: f64::NAN,
        trace: Vec::new(),
        steps: Vec::new(),
        diagnostics: Vec::new(),
        eps: None,
    };
    if !e.cond {
        p.diagnostics.push(format!(
            "gate fails: S(T) = {} is not below (1+r)/t(C) = {}; following the Cesàro chain instead",
            e.gate.s,
            e.gate.threshold()
        ));
        let report = follow_chain(op, body, x0, cfg, &mut budget, false)?;
        return Ok(finish(op, body, Mode::Proof, &e, p, Some(report), &budget, cfg, None));
    }
    let eps = match cfg.eps {
        Some(eps) if e.gate.admits(eps) => eps,
        Some(_) => {
            return Err(FptError::NoAdmissibleEps { s: e.gate.s, threshold: e.gate.threshold() })
        }
        None => admissible_eps(&e.gate)?,
    };
    p.eps = Some(eps);
    let mut pool = RecordPool::new(cfg.pool_size);
    let mut carried = f64::INFINITY;
    let mut a = x0.clone();
    for k in 1..=cfg.max_outer {
        let residual = match budget.spend(1) {
            Ok(()) => afps_residual(op, &a)?,
            Err(err) => {
                p.diagnostics.push(err.to_string());
                break;
            }
        };
        p.point = a.clone();
        p.residual = residual;
        let member = body.contains(&a, cfg.tol.max(1e-9));
        if accept_fixed(op, body, &a, residual, cfg.tol) {
            let r = if pool.is_empty() { 0.0 } else { pool.r_estimate(&a)?.min(carried) };
            p.trace.push(TraceRow {
                outer_iter: k,
                r_estimate: Some(r),
                branch: Branch::Fixed,
                displacement: None,
                residual: Some(residual),
                ky_fan_to_limit: None,
                membership: member,
            });
            return Ok(finish(op, body, Mode::Proof, &e, p, None, &budget, cfg, Some((SolveStatus::FixedPoint, None))));
        }
        let chain = match build_record(op, body, &a, cfg, &mut budget) {
            Ok(c) => c,
            Err(err) => {
                p.diagnostics.push(format!("outer iteration {k}: {err}"));
                break;
            }
        };
        pool.push(chain.clone());
        let r_k = pool.r_estimate(&a)?.min(carried);
        let ky = a.ky_fan_distance(&chain.limit)?;
        match proof_step(op, body, &a, eps, &e.gate, &mut pool, &chain, cfg.tol) {
            Ok((w, step)) => {
                p.trace.push(TraceRow {
                    outer_iter: k,
                    r_estimate: Some(r_k),
                    branch: step.branch,
                    displacement: Some(step.displacement),
                    residual: Some(residual),
                    ky_fan_to_limit: Some(ky),
                    membership: member,
                });
                carried = step.r_after;
                p.steps.push(step);
                a = w;
            }
            Err(err) => {
                p.trace.push(TraceRow {
                    outer_iter: k,
                    r_estimate: Some(r_k),
                    branch: Branch::Degenerate,
                    displacement: None,
                    residual: Some(residual),
                    ky_fan_to_limit: Some(ky),
                    membership: member,
                });
                p.diagnostics.push(format!("outer iteration {k}: {err}"));
                let report = follow_chain(op, body, &a, cfg, &mut budget, false)?;
                return Ok(finish(op, body, Mode::Proof, &e, p, Some(report), &budget, cfg, None));
            }
        }
    }
    p.diagnostics.push(format!("no fixed point certified within {} outer iterations", cfg.max_outer));
    Ok(finish(op, body, Mode::Proof, &e, p, None, &budget, cfg, None))
}

/// Long-horizon Cesàro solve: the first mean `z_s` (`s ≤ cfg.budget`) with
/// residual at most `tol` that lies in the body, with the chain's limit
/// classified when none is found.
pub fn practical_cesaro_solve(
    op: &dyn AffineOperator,
    body: &dyn ConvexBody,
    x0: &Point,
    cfg: &SolverConfig,
) -> Result<SolveOutcome> {
    let e = entry(op, body, x0, cfg)?;
    let mut budget = Budget::new(cfg.budget);
    let p = Partial {
        point: x0.clone(),
        residual: f64::NAN,
        trace: Vec::new(),
        steps: Vec::new(),
        diagnostics: Vec::new(),
        eps: None,
    };
    let report = follow_chain(op, body, x0, cfg, &mut budget, true)?;
    Ok(finish(op, body, Mode::Practical, &e, p, Some(report), &budget, cfg, None))
}

pub fn run(
    mode: Mode,
    op: &dyn AffineOperator,
    body: &dyn ConvexBody,
    x0: &Point,
    cfg: &SolverConfig,
) -> Result<SolveOutcome> {
    match mode {
        Mode::Proof => solve(op, body, x0, cfg),
        Mode::Practical => practical_cesaro_solve(op, body, x0, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{peak, GridFunction};
    use crate::operators::{cesaro_means, ComposedG, CtShift, CyclicShift, DoublingShift, Identity};
    use crate::sets::{sample_seeded, ConeHull, CtBody, UnitBall};

    fn g(f: GridFunction) -> Point {
        Point::Grid(f)
    }

    #[test]
    fn constant_sequence_extracts_everything() {
        let x = g(peak(4, 5).unwrap());
        let seq = vec![x.clone(); 10];
        let ex = komlos_extract(&seq, EXTRACTION_TOL, 10.0).unwrap();
        assert_eq!(ex.indices, (0..10).collect::<Vec<_>>());
        assert_eq!(ex.limit, x);
        assert_eq!(ex.quality, 0.0);
    }

    #[test]
    fn extraction_preconditions() {
        let x = g(GridFunction::constant(3, 5.0).unwrap());
        assert!(matches!(komlos_extract(&vec![x.clone(); 5], 1e-3, 10.0), Err(FptError::InvalidArgument(_))));
        assert!(matches!(komlos_extract(&vec![x; 8], 1e-3, 1.0), Err(FptError::Unbounded { .. })));
        // Rademacher functions stay 1/2 apart in measure: no cluster.
        let seq: Vec<_> = (1..=10).map(|n| g(crate::grid::rademacher(n, 12).unwrap())).collect();
        assert!(matches!(komlos_extract(&seq, 1e-3, 10.0), Err(FptError::NoCluster { .. })));
    }

    #[test]
    fn cyclic_means_converge_in_norm() {
        let level = 8;
        let x0 = sample_seeded(&ConeHull::density_simplex(level).unwrap(), 5);
        let z = cesaro_means(&CyclicShift, None, &x0, 4096, 1e-9).unwrap();
        let sub: Vec<Point> = z.iter().skip(15).step_by(16).cloned().collect();
        let ex = komlos_extract(&sub, EXTRACTION_TOL, 10.0).unwrap();
        // Brute-force full-cycle average.
        let v = x0.as_grid().unwrap().values();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        let expect = g(GridFunction::constant(level, mean).unwrap());
        assert!(ex.limit.distance(&expect).unwrap() < 1e-12);
        assert!(ex.quality <= EXTRACTION_TOL);
    }

    #[test]
    fn doubling_means_vanish_in_measure() {
        // z_s = (1/s) Σ_{j≤s} 2^j χ_[0,2^-j), no saturation for s < level.
        let level = 14;
        let one = g(GridFunction::constant(level, 1.0).unwrap());
        let z = cesaro_means(&DoublingShift, None, &one, 12, 1e-9).unwrap();
        let zero = one.zero_like();
        let mut prev = f64::INFINITY;
        for (s, zs) in z.iter().enumerate() {
            let s = s + 1;
            // Oracle: integrate min(z_s, 1) over dyadic shells [2^-(i+1), 2^-i).
            let mut oracle = 0.0;
            for i in 0..level as i32 {
                let height: f64 = (1..=s.min(i as usize)).map(|j| (j as f64).exp2()).sum::<f64>() / s as f64;
                let height = if i == 0 { 0.0 } else { height };
                oracle += height.min(1.0) * (-(i as f64) - 1.0).exp2();
            }
            let last: f64 = (1..=s).map(|j| (j as f64).exp2()).sum::<f64>() / s as f64;
            oracle += last.min(1.0) * (-(level as f64)).exp2();
            let kf = zs.ky_fan_distance(&zero).unwrap();
            assert!((kf - oracle).abs() < 1e-12, "s = {s}: {kf} vs {oracle}");
            assert!(kf <= prev);
            prev = kf;
        }
        let cfg = SolverConfig::default();
        let mut budget = Budget::new(cfg.budget);
        let rec = build_record(&DoublingShift, &ConeHull::density_simplex(12).unwrap(), &g(GridFunction::constant(12, 1.0).unwrap()), &cfg, &mut budget).unwrap();
        let zero12 = g(GridFunction::zeros(12).unwrap());
        // Only the first level-1 orbit terms keep mass off the saturated
        // cell, so the resolved means carry at most (level-1)/s.
        let h = *rec.indices.last().unwrap() as f64;
        let kf = rec.limit.ky_fan_distance(&zero12).unwrap();
        assert!(kf <= 11.0 / (h / 2.0), "{kf} at horizon {h}");
        assert!(rec.limit_quality <= EXTRACTION_TOL);
        // Against y = 1 the escaping means sit at distance 2 - o(1).
        let y = g(GridFunction::constant(12, 1.0).unwrap());
        let r = r_estimate(&y, std::slice::from_ref(&rec), 1.0).unwrap();
        assert!(r > 1.99 && r <= 2.0, "{r}");
    }

    #[test]
    fn r_of_fixed_point_is_zero() {
        let y = g(GridFunction::constant(6, 0.7).unwrap());
        let cfg = SolverConfig::default();
        let mut budget = Budget::new(cfg.budget);
        let rec = build_record(&CyclicShift, &UnitBall::new(6).unwrap(), &y, &cfg, &mut budget).unwrap();
        assert_eq!(r_estimate(&y, &[rec], 1.0).unwrap(), 0.0);
        assert!(r_estimate(&y, &[], 1.0).is_err());
    }

    #[test]
    fn eps_is_admissible() {
        let gate = Gate { s: 1.0, t: 1.0, one_plus_r: 2.0 };
        let eps = admissible_eps(&gate).unwrap();
        assert!(((5f64.sqrt() - 2.0) / 2.0 - eps).abs() < 1e-12);
        assert!(gate.admits(eps));
        let sharp = Gate { s: 1.0, t: 2.0, one_plus_r: 2.0 };
        assert!(matches!(admissible_eps(&sharp), Err(FptError::NoAdmissibleEps { .. })));
        for e in [1e-9, 1e-3, 0.1] {
            assert!(!sharp.admits(e));
        }
    }

    #[test]
    fn proof_step_rejects_doubling() {
        let body = ConeHull::density_simplex(8).unwrap();
        let cfg = SolverConfig::default();
        let gate = Gate::measure(&DoublingShift, &body, &cfg).unwrap();
        assert_eq!((gate.s, gate.t), (1.0, 2.0));
        let x0 = g(GridFunction::constant(8, 1.0).unwrap());
        let rec = AfpsRecord {
            points: vec![x0.clone(); 8],
            indices: (1..=8).collect(),
            residuals: vec![0.0; 8],
            limit: x0.clone(),
            limit_quality: 0.0,
            cluster: (0..8).collect(),
        };
        let mut pool = RecordPool::new(8);
        pool.push(rec.clone());
        for eps in [1e-6, 1e-3, 0.1, 0.5] {
            let r = proof_step(&DoublingShift, &body, &x0, eps, &gate, &mut pool, &rec, 1e-8);
            assert!(matches!(r, Err(FptError::NoAdmissibleEps { .. })));
        }
    }

    #[test]
    fn proof_step_takes_z_branch_when_x_branch_is_loose() {
        let level = 6;
        let ball = UnitBall::new(level).unwrap();
        let cfg = SolverConfig::default();
        let gate = Gate::measure(&CyclicShift, &ball, &cfg).unwrap();
        let eps = admissible_eps(&gate).unwrap();
        let x0 = sample_seeded(&ball, 3);
        let mut budget = Budget::new(cfg.budget);
        let chain = build_record(&CyclicShift, &ball, &x0, &cfg, &mut budget).unwrap();
        // A record whose declared limit is far from its terms: the x̄ test fails.
        let c = chain.limit.clone();
        let far = c.scale(-1.0);
        let bad = AfpsRecord {
            points: vec![c.clone(); 8],
            indices: (1..=8).collect(),
            residuals: vec![0.0; 8],
            limit: far,
            limit_quality: 0.0,
            cluster: (0..8).collect(),
        };
        let mut pool = RecordPool::new(8);
        pool.push(chain.clone());
        pool.push(bad);
        let r0 = pool.r_estimate(&x0).unwrap();
        let (w, step) = proof_step(&CyclicShift, &ball, &x0, eps, &gate, &mut pool, &chain, 1e-8).unwrap();
        assert!(step.r_before == r0 && r0 > 0.0);
        assert!(ball.contains(&w, 1e-9));
        assert!(step.r_after <= (1.0 - eps) * r0 + 1e-8);
        assert!(step.displacement <= step.displacement_bound + 1e-8);
        if step.branch == Branch::ZBar {
            assert_eq!(pool.len(), 3);
        }
    }

    #[test]
    fn proof_step_degenerate_at_fixed_point() {
        let level = 5;
        let ball = UnitBall::new(level).unwrap();
        let cfg = SolverConfig::default();
        let gate = Gate::measure(&CyclicShift, &ball, &cfg).unwrap();
        let x0 = g(GridFunction::constant(level, -0.25).unwrap());
        let mut budget = Budget::new(cfg.budget);
        let chain = build_record(&CyclicShift, &ball, &x0, &cfg, &mut budget).unwrap();
        let mut pool = RecordPool::new(8);
        pool.push(chain.clone());
        let (w, step) = proof_step(&CyclicShift, &ball, &x0, 0.1, &gate, &mut pool, &chain, 1e-8).unwrap();
        assert_eq!(w, x0);
        assert_eq!(step.branch, Branch::Degenerate);
    }

    #[test]
    fn identity_is_solved_immediately() {
        let ball = UnitBall::new(4).unwrap();
        let x0 = sample_seeded(&ball, 1);
        let cfg = SolverConfig::default();
        let out = practical_cesaro_solve(&Identity, &ball, &x0, &cfg).unwrap();
        assert_eq!(out.status, SolveStatus::FixedPoint);
        assert_eq!(out.point, x0);
        assert_eq!(out.cesaro_index, Some(1));
        let out = solve(&Identity, &ball, &x0, &cfg).unwrap();
        assert_eq!(out.status, SolveStatus::FixedPoint);
        assert_eq!(out.point, x0);
    }

    #[test]
    fn cyclic_practical_closes_the_cycle() {
        let level = 6;
        let ball = UnitBall::new(level).unwrap();
        let x0 = sample_seeded(&ball, 9);
        let out = practical_cesaro_solve(&CyclicShift, &ball, &x0, &SolverConfig::default()).unwrap();
        assert_eq!(out.status, SolveStatus::FixedPoint);
        assert!(out.cesaro_index.unwrap() <= 64);
        assert!(out.residual <= 1e-8);
    }

    #[test]
    fn ct_shift_never_fixed() {
        let t = 1.5;
        let body = CtBody::new(t, 64).unwrap();
        let x0 = body.vertex(1).unwrap();
        let cfg = SolverConfig::default();
        for out in [
            solve(&CtShift::new(t).unwrap(), &body, &x0, &cfg).unwrap(),
            practical_cesaro_solve(&CtShift::new(t).unwrap(), &body, &x0, &cfg).unwrap(),
        ] {
            assert_ne!(out.status, SolveStatus::FixedPoint);
            assert!(!out.theorem_condition);
        }
    }

    #[test]
    fn composed_g_is_not_fixed() {
        let body = ConeHull::new(0.0, 8).unwrap();
        let x0 = sample_seeded(&body, 4);
        let out = solve(&ComposedG, &body, &x0, &SolverConfig::default()).unwrap();
        assert_ne!(out.status, SolveStatus::FixedPoint);
        assert_eq!(out.gate.s, 2.0);
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        let row = TraceRow {
            outer_iter: 1,
            r_estimate: Some(0.5),
            branch: Branch::XBar,
            displacement: None,
            residual: Some(0.25),
            ky_fan_to_limit: None,
            membership: true,
        };
        write_trace_csv(&mut buf, &[row]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "outer_iter,r_estimate,branch,displacement,residual,ky_fan_to_limit,membership\n\
             1,0.5,x_bar,,0.25,,true\n"
        );
    }
}
