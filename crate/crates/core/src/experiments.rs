//! Batch experiments behind the command-line driver: the reproduction table,
//! the sharpness sweep over `C_t`, coefficient reports, and single solves.

use serde::{Deserialize, Serialize};

use crate::coefficients::{
    default_families, half_diameter_probe, opial_cross_check, opial_one_plus_r, orlicz_a,
    star_equality_defect, t_upper_bound, theorem_condition, theorem_margin, Family, ProbeGrid,
    NULL_TOL,
};
use crate::error::{FptError, Result};
use crate::grid::{peak, GridFunction};
use crate::operators::{s_of_t, ComposedG, CtShift, OperatorSpec};
use crate::report::{BoundType, CoefficientReport};
use crate::sets::{sample_seeded, BodySpec, ConeHull, ConvexBody, CtBody, UnitBall};
use crate::solver::{run, Mode, SolveOutcome, SolveStatus, SolverConfig};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "FPTLAB_SEED";

pub const DEFAULT_T_GRID: [f64; 5] = [1.1, 1.25, 1.5, 1.75, 1.9];

/// Level of the in-measure cross-check for `1 + r(1)`.
pub const OPIAL_LEVEL: u32 = 14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Reproduce,
    Solve,
    Coeff,
    Sharpness,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub out: Option<String>,
    pub trace: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub body: Option<BodySpec>,
    #[serde(default)]
    pub operator: Option<OperatorSpec>,
    #[serde(default = "default_level")]
    pub level: u32,
    /// Truncation used for `C_t` bodies built by the sharpness sweep.
    #[serde(default = "default_m", rename = "M")]
    pub m: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_window")]
    pub window_fraction: f64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default = "default_t_grid")]
    pub t_grid: Vec<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub outputs: Outputs,
}

fn default_level() -> u32 {
    12
}
fn default_m() -> usize {
    64
}
fn default_tol() -> f64 {
    1e-8
}
fn default_window() -> f64 {
    crate::grid::DEFAULT_WINDOW
}
fn default_mode() -> Mode {
    Mode::Proof
}
fn default_t_grid() -> Vec<f64> {
    DEFAULT_T_GRID.to_vec()
}

impl ExperimentConfig {
    pub fn new(command: Command) -> Self {
        Self {
            command,
            body: None,
            operator: None,
            level: default_level(),
            m: default_m(),
            tol: default_tol(),
            seed: 0,
            window_fraction: default_window(),
            mode: default_mode(),
            t_grid: default_t_grid(),
            solver: SolverConfig::default(),
            outputs: Outputs::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Applies `FPTLAB_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| FptError::InvalidArgument(format!("{SEED_ENV}={v} is not a u64")))?;
        }
        Ok(())
    }

    /// Solver settings with the experiment-level tolerance and seed.
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig { tol: self.tol, seed: self.seed, ..self.solver.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Bracket contains the value and is at most `tolerance` wide, relatively.
    Bracket,
    /// Both ends within `tolerance` of the value.
    Exact,
    /// Upper end at most the value plus `tolerance`.
    AtMost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproRow {
    pub quantity: String,
    pub paper_value: f64,
    pub estimate_low: f64,
    pub estimate_high: f64,
    pub gap: f64,
    pub tolerance: f64,
    pub criterion: Criterion,
    pub pass: bool,
}

/// Float slack for bracket containment.
const CONTAIN_SLACK: f64 = 1e-12;

impl ReproRow {
    pub fn new(
        quantity: impl Into<String>,
        value: f64,
        low: f64,
        high: f64,
        criterion: Criterion,
        tolerance: f64,
    ) -> Self {
        let (gap, pass) = match criterion {
            Criterion::Bracket => {
                let gap = (high - low) / value.abs();
                let inside = low - CONTAIN_SLACK <= value && value <= high + CONTAIN_SLACK;
                (gap, inside && gap <= tolerance)
            }
            Criterion::Exact => {
                let gap = (low - value).abs().max((high - value).abs());
                (gap, gap <= tolerance)
            }
            Criterion::AtMost => (high - value, high <= value + tolerance),
        };
        Self {
            quantity: quantity.into(),
            paper_value: value,
            estimate_low: low,
            estimate_high: high,
            gap,
            tolerance,
            criterion,
            pass,
        }
    }

    pub const CSV_HEADER: [&'static str; 8] = [
        "quantity",
        "paper_value",
        "estimate_low",
        "estimate_high",
        "gap",
        "tolerance",
        "criterion",
        "pass",
    ];
}

fn criterion_name(c: Criterion) -> &'static str {
    match c {
        Criterion::Bracket => "bracket",
        Criterion::Exact => "exact",
        Criterion::AtMost => "at_most",
    }
}

pub fn write_repro_csv<W: std::io::Write>(out: W, rows: &[ReproRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ReproRow::CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.quantity.clone(),
            r.paper_value.to_string(),
            r.estimate_low.to_string(),
            r.estimate_high.to_string(),
            r.gap.to_string(),
            r.tolerance.to_string(),
            criterion_name(r.criterion).to_string(),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn row<T>(quantity: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| FptError::Row { quantity: quantity.to_string(), source: Box::new(e) })
}

/// `t(C_a)` bracket from the peak family at `level`.
pub fn t_cone_hull(a: f64, level: u32, window: f64, tol: f64) -> Result<CoefficientReport> {
    let body = ConeHull::new(a, level)?;
    t_upper_bound(&body, &[Family::Peaks { k_min: 4, k_max: level }], window, tol)
}

/// Every cited quantity, one row each.
pub fn cmd_reproduce(cfg: &ExperimentConfig) -> Result<Vec<ReproRow>> {
    let level = cfg.level;
    let w = cfg.window_fraction;
    let mut rows = Vec::new();

    for a in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let q = format!("t(C_a) a={a}");
        let r = row(&q, t_cone_hull(a, level, w, 1e-9))?;
        rows.push(ReproRow::new(q, 1.0 + a, r.estimate_low, r.estimate_high, Criterion::Bracket, 0.02));
    }

    let q = "t(ball)";
    let r = row(q, UnitBall::new(level).and_then(|b| crate::coefficients::t_report(&b, 1e-9)))?;
    rows.push(ReproRow::new(q, 1.0, r.estimate_low, r.estimate_high, Criterion::Exact, 1e-9));

    for &t in &cfg.t_grid {
        let q = format!("t(C_t) t={t}");
        let r = row(&q, CtBody::new(t, cfg.m).and_then(|b| crate::coefficients::t_report(&b, 1e-9)))?;
        rows.push(ReproRow::new(q, t, r.estimate_low, r.estimate_high, Criterion::Exact, 1e-9));

        let q = format!("S(ct_shift) t={t}");
        let s = row(&q, ct_shift_s(t, cfg.m, cfg.seed))?;
        rows.push(ReproRow::new(q, 2.0 / t, s, s, Criterion::Exact, 1e-9));
    }

    let q = "1+r(1) L1";
    let v = row(q, opial_one_plus_r("L1"))?;
    rows.push(ReproRow::new(q, 2.0, v, v, Criterion::Exact, 1e-12));
    let q = "1+r(1) cross-check";
    let x = row(q, GridFunction::constant(OPIAL_LEVEL, 1.0))?;
    let v = row(q, opial_cross_check(&x, 4, OPIAL_LEVEL, w))?;
    rows.push(ReproRow::new(q, 2.0, v, v, Criterion::Bracket, 0.02).with_relative(0.02));

    for (name, body) in catalog_bodies(level, cfg.m)? {
        let q = format!("d(limit, {name}) <= diam/2");
        let mut worst = 0.0f64;
        let mut half = f64::INFINITY;
        for family in default_families(body.as_ref()) {
            let draw = row(&q, family.generate(body.as_ref(), 1e-9))?;
            let (d, h) = row(&q, half_diameter_probe(body.as_ref(), &draw, cfg.seed))?;
            worst = worst.max(d);
            half = half.min(h);
        }
        rows.push(ReproRow::new(q, half, 0.0, worst, Criterion::AtMost, 1e-6));
    }

    let q = "star defect peaks z=1_[1/2,1]";
    let d = row(q, max_star_defect(level, w))?;
    rows.push(ReproRow::new(q, 0.0, 0.0, d, Criterion::AtMost, (-(level as f64)).exp2()));

    let q = "S(G) retraction_compose";
    let s = row(q, ConeHull::new(0.0, level).and_then(|c| s_of_t(&ComposedG, 16, &c, 16, cfg.seed)))?;
    rows.push(ReproRow::new(q, 2.0, s.value, s.value, Criterion::Exact, 1e-9));

    for p in [1.0, 2.0, 4.0] {
        let q = format!("a(1/2) phi=u^{p}");
        let v = row(&q, orlicz_a(|t: f64| t.powf(1.0 / p), 0.5, &ProbeGrid::default()))?;
        rows.push(ReproRow::new(q, 2f64.powf(1.0 / p), v, v, Criterion::Exact, 1e-6));
    }
    Ok(rows)
}

impl ReproRow {
    /// Pass on relative deviation from the value instead of bracket width.
    fn with_relative(mut self, tol: f64) -> Self {
        let dev = (self.estimate_low - self.paper_value)
            .abs()
            .max((self.estimate_high - self.paper_value).abs())
            / self.paper_value.abs();
        self.gap = dev;
        self.pass = dev <= tol;
        self
    }
}

fn ct_shift_s(t: f64, m: usize, seed: u64) -> Result<f64> {
    let body = CtBody::new(t, m)?;
    let s = s_of_t(&CtShift::new(t)?, 16, &body, 16, seed)?;
    if s.bound_type != BoundType::Exact {
        return Err(FptError::Certificate("S(T) is not exact".into()));
    }
    Ok(s.value)
}

/// The catalog bodies with display names.
pub fn catalog_bodies(level: u32, m: usize) -> Result<Vec<(String, Box<dyn ConvexBody>)>> {
    Ok(vec![
        ("C".into(), Box::new(ConeHull::density_simplex(level)?) as Box<dyn ConvexBody>),
        ("C_0".into(), Box::new(ConeHull::new(0.0, level)?)),
        ("C_a a=0.5".into(), Box::new(ConeHull::new(0.5, level)?)),
        ("ball".into(), Box::new(UnitBall::new(level)?)),
        ("C_t t=1.5".into(), Box::new(CtBody::new(1.5, m)?)),
    ])
}

/// Largest star-equality defect along `peaks(2^j), j = k..=level`, over
/// `k = 4..=level`, with `z = χ_[1/2,1]`.
pub fn max_star_defect(level: u32, window: f64) -> Result<f64> {
    let z = GridFunction::indicator(level, 0.5, 1.0, 1.0)?;
    let mut worst = 0.0f64;
    for k in 4..=level {
        let seq = (k..=level).map(|j| peak(1u64 << j, level)).collect::<Result<Vec<_>>>()?;
        worst = worst.max(star_equality_defect(&seq, &z, window, NULL_TOL)?);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessRow {
    pub t: f64,
    pub s_value: f64,
    pub threshold: f64,
    pub t_low: f64,
    pub t_high: f64,
    pub condition: bool,
    pub margin: f64,
    /// Verdict for `S' = 2/t - 0.01`.
    pub condition_relaxed: bool,
    pub solver_status: SolveStatus,
    pub pass: bool,
}

impl SharpnessRow {
    pub const CSV_HEADER: [&'static str; 10] = [
        "t",
        "s_value",
        "threshold",
        "t_low",
        "t_high",
        "condition",
        "margin",
        "condition_relaxed",
        "solver_status",
        "pass",
    ];
}

pub fn write_sharpness_csv<W: std::io::Write>(out: W, rows: &[SharpnessRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SharpnessRow::CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.s_value.to_string(),
            r.threshold.to_string(),
            r.t_low.to_string(),
            r.t_high.to_string(),
            r.condition.to_string(),
            r.margin.to_string(),
            r.condition_relaxed.to_string(),
            r.solver_status.to_string(),
            r.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// For each `t`: `S(T) = 2/t` on `C_t`, the `t(C_t)` bracket, the gate at
/// equality (must fail) and just below it (must hold), and a solve from `e_1`
/// (must not find a fixed point).
pub fn cmd_sharpness(cfg: &ExperimentConfig) -> Result<Vec<SharpnessRow>> {
    let mut rows = Vec::new();
    for &t in &cfg.t_grid {
        let q = format!("sharpness t={t}");
        let body = row(&q, CtBody::new(t, cfg.m))?;
        let op = row(&q, CtShift::new(t))?;
        let s_value = row(&q, ct_shift_s(t, cfg.m, cfg.seed))?;
        let tr = row(&q, crate::coefficients::t_report(&body, 1e-9))?;
        let one_plus_r = row(&q, opial_one_plus_r("L1"))?;
        let condition = theorem_condition(s_value, tr.estimate_high, one_plus_r);
        let margin = theorem_margin(s_value, tr.estimate_high, one_plus_r);
        let condition_relaxed = theorem_condition(2.0 / t - 0.01, t, one_plus_r);
        let x0 = row(&q, body.vertex(1))?;
        let out = row(&q, run(cfg.mode, &op, &body, &x0, &cfg.solver_config()))?;
        let exact = (s_value - 2.0 / t).abs() <= 1e-9
            && (tr.estimate_low - t).abs() <= 1e-9
            && (tr.estimate_high - t).abs() <= 1e-9;
        let pass = exact
            && !condition
            && condition_relaxed
            && out.status != SolveStatus::FixedPoint;
        rows.push(SharpnessRow {
            t,
            s_value,
            threshold: one_plus_r / t,
            t_low: tr.estimate_low,
            t_high: tr.estimate_high,
            condition,
            margin,
            condition_relaxed,
            solver_status: out.status,
            pass,
        });
    }
    Ok(rows)
}

/// Coefficient reports for the configured body (and operator, if any).
pub fn cmd_coeff(cfg: &ExperimentConfig) -> Result<Vec<CoefficientReport>> {
    let spec = cfg
        .body
        .as_ref()
        .ok_or_else(|| FptError::InvalidArgument("coeff needs a body".into()))?;
    let body = spec.build(cfg.level)?;
    let mut out = vec![crate::coefficients::t_upper_bound(
        body.as_ref(),
        &default_families(body.as_ref()),
        cfg.window_fraction,
        1e-9,
    )?
    .with_param("level", cfg.level)];
    out.push(
        CoefficientReport::exact("1+r(1)", opial_one_plus_r("L1")?, "limsup|x_n + z| = limsup|x_n| + |z|")
            .with_param("space", "L1"),
    );
    if let Some(op_spec) = &cfg.operator {
        let op = op_spec.build()?;
        let s = s_of_t(op.as_ref(), 16, body.as_ref(), 32, cfg.seed)?;
        out.push(CoefficientReport {
            quantity: format!("S({})", op.name()),
            estimate_low: s.value,
            estimate_high: s.value,
            bound_type: s.bound_type,
            witness: "running means of |T^k|, k <= 16".into(),
            parameters: Default::default(),
        }
        .with_param("seed", cfg.seed));
    }
    Ok(out)
}

/// Default start: the constant `1` when it is a member, else a seeded sample.
pub fn default_start(body: &dyn ConvexBody, seed: u64) -> crate::point::Point {
    let origin = body.origin();
    if let crate::point::Point::Grid(o) = &origin {
        if let Ok(one) = GridFunction::constant(o.level(), 1.0) {
            let one = crate::point::Point::Grid(one);
            if body.contains(&one, 1e-12) && !matches!(body.name().as_str(), "ball") {
                return one;
            }
        }
    }
    if let crate::point::Point::Coord(c) = &origin {
        if let Ok(e1) = crate::point::CoordPoint::vertex(c.t(), c.truncation(), 1) {
            return crate::point::Point::Coord(e1);
        }
    }
    sample_seeded(body, seed)
}

pub fn cmd_solve(cfg: &ExperimentConfig) -> Result<SolveOutcome> {
    let body = cfg
        .body
        .as_ref()
        .ok_or_else(|| FptError::InvalidArgument("solve needs a body".into()))?
        .build(cfg.level)?;
    let op = cfg
        .operator
        .as_ref()
        .ok_or_else(|| FptError::InvalidArgument("solve needs an operator".into()))?
        .build()?;
    let x0 = default_start(body.as_ref(), cfg.seed);
    run(cfg.mode, op.as_ref(), body.as_ref(), &x0, &cfg.solver_config())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_and_strictness() {
        let mut cfg = ExperimentConfig::new(Command::Solve);
        cfg.body = Some(BodySpec::Ball {});
        cfg.operator = Some(OperatorSpec::CtShift { t: 1.5 });
        let json = cfg.to_json().unwrap();
        let back = ExperimentConfig::from_json(&json).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_json().unwrap(), json);
        assert!(ExperimentConfig::from_json(r#"{"command":"solve","colour":1}"#).is_err());
        let minimal = ExperimentConfig::from_json(r#"{"command":"reproduce"}"#).unwrap();
        assert_eq!(minimal, ExperimentConfig::new(Command::Reproduce));
    }

    #[test]
    fn repro_row_criteria() {
        assert!(ReproRow::new("x", 1.5, 1.49, 1.5, Criterion::Bracket, 0.02).pass);
        assert!(!ReproRow::new("x", 1.5, 1.2, 1.5, Criterion::Bracket, 0.02).pass);
        assert!(!ReproRow::new("x", 1.5, 1.45, 1.49, Criterion::Bracket, 0.02).pass);
        assert!(ReproRow::new("x", 2.0, 2.0, 2.0, Criterion::Exact, 0.0).pass);
        assert!(ReproRow::new("x", 1.0, 0.0, 1.0 + 1e-7, Criterion::AtMost, 1e-6).pass);
    }

    #[test]
    fn start_points() {
        let c = ConeHull::density_simplex(4).unwrap();
        assert_eq!(default_start(&c, 0), crate::point::Point::Grid(GridFunction::constant(4, 1.0).unwrap()));
        let ct = CtBody::new(1.5, 8).unwrap();
        assert_eq!(default_start(&ct, 0), ct.vertex(1).unwrap());
    }
}
