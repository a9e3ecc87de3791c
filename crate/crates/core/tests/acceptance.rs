//! Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.

use std::time::Instant;

use fptlab::coefficients::{
    default_families, half_diameter_probe, opial_cross_check, orlicz_a, star_equality_defect,
    t_report, theorem_condition, Family, ProbeGrid, NULL_TOL,
};
use fptlab::experiments::{
    catalog_bodies, cmd_reproduce, cmd_sharpness, default_start, t_cone_hull, write_repro_csv,
    write_sharpness_csv, Command, ExperimentConfig, DEFAULT_T_GRID,
};
use fptlab::grid::{peak, GridFunction};
use fptlab::operators::{
    cesaro_means, power_apply, s_of_t, AffineOperator, ComposedG, CtShift, CyclicShift,
    DoublingShift, Identity, NormalizingRetraction,
};
use fptlab::sets::{sample_seeded, ConeHull, CtBody, UnitBall};
use fptlab::solver::{run, Mode, SolverConfig};
use fptlab::{ConvexBody, Point, Result, SolveStatus};

type Check = fn() -> Result<(bool, String)>;

fn main() {
    let checks: [(&str, Check); 11] = [
        ("AC1 t(C_a) = 1 + a", ac1),
        ("AC2 t(C_t) = t, S(T) = 2/t", ac2),
        ("AC3 1 + r(1) = 2 cross-check", ac3),
        ("AC4 star equality defect", ac4),
        ("AC5 half-diameter bound", ac5),
        ("AC6 affine residual identity", ac6),
        ("AC7 positive solve (cyclic, ball)", ac7),
        ("AC8 structural failures", ac8),
        ("AC9 sharpness table", ac9),
        ("AC10 Orlicz a(1/2)", ac10),
        ("AC11 determinism", ac11),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = start.elapsed().as_secs_f64();
        println!("{} {name}: {detail} ({secs:.2}s)", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failed += 1;
        }
    }
    println!("{} of 11 criteria pass", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ac1() -> Result<(bool, String)> {
    let mut ok = true;
    let mut worst = 0.0f64;
    for a in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let r = t_cone_hull(a, 12, 0.5, 1e-9)?;
        let v = 1.0 + a;
        let gap = (r.estimate_high - r.estimate_low) / v;
        worst = worst.max(gap);
        ok &= r.estimate_low <= v && v <= r.estimate_high && gap <= 0.02;
    }
    Ok((ok, format!("max relative gap {worst:.3e} (tol 2e-2)")))
}

fn ac2() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for t in DEFAULT_T_GRID {
        let body = CtBody::new(t, 64)?;
        let r = t_report(&body, 1e-9)?;
        let s = s_of_t(&CtShift::new(t)?, 16, &body, 16, 0)?;
        worst = worst
            .max((r.estimate_low - t).abs())
            .max((r.estimate_high - t).abs())
            .max((s.value - 2.0 / t).abs());
    }
    Ok((worst <= 1e-9, format!("max error {worst:.3e} (tol 1e-9)")))
}

fn ac3() -> Result<(bool, String)> {
    let x = GridFunction::constant(14, 1.0)?;
    let v = opial_cross_check(&x, 4, 14, 0.5)?;
    let rel = (v - 2.0).abs() / 2.0;
    Ok((rel <= 0.02, format!("estimate {v} (relative error {rel:.3e}, tol 2e-2)")))
}

fn ac4() -> Result<(bool, String)> {
    let z = GridFunction::indicator(12, 0.5, 1.0, 1.0)?;
    let mut prev = f64::INFINITY;
    let mut ok = true;
    let mut defects = Vec::new();
    for k in 4..=12u32 {
        let seq = (k..=12).map(|j| peak(1u64 << j, 12)).collect::<Result<Vec<_>>>()?;
        let d = star_equality_defect(&seq, &z, 0.5, NULL_TOL)?;
        ok &= d <= (-(k as f64)).exp2() && d <= prev;
        prev = d;
        defects.push(d);
    }
    let max = defects.iter().cloned().fold(0.0, f64::max);
    Ok((ok, format!("max defect {max:.3e}, bound 2^-k, non-increasing over k = 4..12")))
}

fn ac5() -> Result<(bool, String)> {
    let mut ok = true;
    let mut n = 0;
    let mut worst_slack = f64::INFINITY;
    for (_, body) in catalog_bodies(12, 64)? {
        let mut families = default_families(body.as_ref());
        if matches!(families[0], Family::Peaks { .. }) {
            families.extend([Family::Peaks { k_min: 2, k_max: 12 }, Family::Peaks { k_min: 8, k_max: 12 }]);
        }
        for family in families {
            let draw = family.generate(body.as_ref(), 1e-9)?;
            for seed in 0..3 {
                let (d, half) = half_diameter_probe(body.as_ref(), &draw, seed)?;
                ok &= d <= half + 1e-6;
                worst_slack = worst_slack.min(half - d);
                n += 1;
            }
        }
    }
    Ok((ok, format!("{n} probes, min slack diam/2 - d = {worst_slack:.3e} (tol 1e-6)")))
}

fn ac6() -> Result<(bool, String)> {
    let grid_ops: Vec<Box<dyn AffineOperator>> = vec![
        Box::new(Identity),
        Box::new(DoublingShift),
        Box::new(NormalizingRetraction),
        Box::new(ComposedG),
        Box::new(CyclicShift),
    ];
    let simplex = ConeHull::density_simplex(8)?;
    let ball = UnitBall::new(8)?;
    let ct = CtBody::new(1.5, 256)?;
    let shift = CtShift::new(1.5)?;
    let mut cases: Vec<(&dyn AffineOperator, &dyn ConvexBody)> = Vec::new();
    for op in &grid_ops {
        cases.push((op.as_ref(), &simplex));
        cases.push((op.as_ref(), &ball));
    }
    cases.push((&shift, &ct));
    let mut worst = 0.0f64;
    for (op, body) in cases {
        for seed in 0..20 {
            let x0 = sample_seeded(body, seed);
            let means = cesaro_means(op, None, &x0, 64, 0.0)?;
            let tx0 = op.apply(&x0)?;
            for (i, z) in means.iter().enumerate() {
                let s = i + 1;
                let lhs = z.sub(&op.apply(z)?)?;
                let rhs = tx0.sub(&power_apply(op, &x0, s + 1)?)?.scale(1.0 / s as f64);
                let d = lhs.sub(&rhs)?.norm();
                worst = worst.max(d);
            }
        }
    }
    Ok((worst <= 1e-9, format!("max defect {worst:.3e} over 11 operator/body pairs (tol 1e-9)")))
}

fn ac7() -> Result<(bool, String)> {
    let ball = UnitBall::new(8)?;
    let cfg = SolverConfig { tol: 1e-8, ..SolverConfig::default() };
    let mut ok = true;
    let mut worst_res = 0.0f64;
    let mut worst_index = 0;
    let mut worst_decay = f64::NEG_INFINITY;
    for seed in 0..5 {
        let x0 = default_start(&ball, seed);
        let p = run(Mode::Practical, &CyclicShift, &ball, &x0, &cfg)?;
        let index = p.cesaro_index.unwrap_or(usize::MAX);
        ok &= p.status == SolveStatus::FixedPoint && p.residual <= 1e-8 && index <= 256;
        worst_res = worst_res.max(p.residual);
        worst_index = worst_index.max(index);

        let q = run(Mode::Proof, &CyclicShift, &ball, &x0, &cfg)?;
        ok &= q.status == SolveStatus::FixedPoint && q.residual <= 1e-8;
        worst_res = worst_res.max(q.residual);
        let eps = q.eps.unwrap_or(0.0);
        let r: Vec<f64> = q.trace.iter().filter_map(|row| row.r_estimate).collect();
        ok &= r.len() >= 2;
        for w in r.windows(2) {
            let excess = w[1] - (1.0 - eps) * w[0];
            worst_decay = worst_decay.max(excess);
            ok &= excess <= 1e-6;
        }
    }
    Ok((
        ok,
        format!(
            "max residual {worst_res:.3e} (tol 1e-8), max Cesàro index {worst_index} (cycle 256), \
             max r_(k+1) - (1-eps) r_k = {worst_decay:.3e} (tol 1e-6)"
        ),
    ))
}

fn ac8() -> Result<(bool, String)> {
    let cfg = SolverConfig { tol: 1e-8, budget: 1_000_000, ..SolverConfig::default() };
    let simplex = ConeHull::density_simplex(12)?;
    let x0 = default_start(&simplex, 0);
    let d = run(Mode::Proof, &DoublingShift, &simplex, &x0, &cfg)?;
    let limit = d.limit.clone();
    let (kf, mass) = match &limit {
        Some(Point::Grid(f)) => (f.ky_fan_distance(&GridFunction::zeros(f.level())?), f.integral()),
        _ => (f64::INFINITY, f64::INFINITY),
    };
    let message = d.limit_membership.clone().unwrap_or_default();
    let mut ok = d.status == SolveStatus::EscapedInMeasure
        && kf <= 1e-3
        && mass.abs() <= 1e-3
        && message.starts_with("∫ = ")
        && message.ends_with("≠ 1");
    let mut details = vec![format!(
        "doubling: {} limit Ky Fan to 0 {kf:.2e}, ∫ limit {mass:.2e}, \"{message}\"",
        d.status
    )];

    let long = SolverConfig { stop_on_diagnosis: false, ..cfg.clone() };
    let d2 = run(Mode::Proof, &DoublingShift, &simplex, &x0, &long)?;
    ok &= d2.status != SolveStatus::FixedPoint;
    details.push(format!("doubling full budget: {} after {} applications", d2.status, d2.applications));

    let c0 = ConeHull::new(0.0, 10)?;
    for (label, c) in [("G", &cfg), ("G full budget", &long)] {
        let g = run(Mode::Proof, &ComposedG, &c0, &default_start(&c0, 0), c)?;
        ok &= g.status != SolveStatus::FixedPoint;
        details.push(format!("{label}: {}", g.status));
    }
    for t in DEFAULT_T_GRID {
        let body = CtBody::new(t, 64)?;
        for mode in [Mode::Proof, Mode::Practical] {
            let o = run(mode, &CtShift::new(t)?, &body, &default_start(&body, 0), &long)?;
            ok &= o.status != SolveStatus::FixedPoint;
        }
    }
    details.push("ct_shift: no fixed point for any t".into());
    Ok((ok, details.join("; ")))
}

fn ac9() -> Result<(bool, String)> {
    let cfg = ExperimentConfig::new(Command::Sharpness);
    let rows = cmd_sharpness(&cfg)?;
    let mut ok = rows.len() == DEFAULT_T_GRID.len();
    for r in &rows {
        ok &= !theorem_condition(2.0 / r.t, r.t, 2.0)
            && theorem_condition(2.0 / r.t - 0.01, r.t, 2.0)
            && !r.condition
            && r.solver_status != SolveStatus::FixedPoint
            && r.pass;
    }
    Ok((ok, format!("{} rows, condition false at S = 2/t, true at 2/t - 0.01, no fixed point", rows.len())))
}

fn ac10() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for p in [1.0f64, 2.0, 4.0] {
        let v = orlicz_a(|t: f64| t.powf(1.0 / p), 0.5, &ProbeGrid::default())?;
        worst = worst.max((v - 2f64.powf(1.0 / p)).abs());
    }
    Ok((worst <= 1e-6, format!("max error {worst:.3e} (tol 1e-6)")))
}

fn ac11() -> Result<(bool, String)> {
    let render = || -> Result<Vec<u8>> {
        let mut cfg = ExperimentConfig::new(Command::Reproduce);
        cfg.seed = 7;
        let mut buf = Vec::new();
        write_repro_csv(&mut buf, &cmd_reproduce(&cfg)?)?;
        write_sharpness_csv(&mut buf, &cmd_sharpness(&cfg)?)?;
        Ok(buf)
    };
    let (a, b) = (render()?, render()?);
    Ok((a == b, format!("{} bytes, identical: {}", a.len(), a == b)))
}
