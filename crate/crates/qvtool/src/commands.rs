use serde::Serialize;

use qvcore::conditions::{check_condition_c, check_left_approximation, check_uc, CheckOptions};
use qvcore::io::write_path_csv;
use qvcore::qv::{qv_limit, scalar_qv_limit};
use qvcore::representation::{density_estimate, form_norm, unit_density_check, UnitDensityReport};
use qvcore::transform::{c1_level_gaps, c1_smooth_transform, integral_qv, ito_report, rough_fv_decompose};
use qvcore::{
    BilinearKind, CadlagPath, ConditionReport, ConvergenceEstimate, CrossnormChoice, FormNorm, NormChoice, Partition,
    PathFunctional, QvPath, SequenceKind, Verdict,
};

use crate::config::Experiment;
use crate::error::CliError;
use crate::report::{fields, Reporter};

pub struct Outcome {
    pub verdict: Verdict,
    pub summary: String,
}

fn worst(a: Verdict, b: Verdict) -> Verdict {
    a.max(b)
}

fn within(ok: bool) -> Verdict {
    if ok {
        Verdict::Pass
    } else {
        Verdict::Inconclusive
    }
}

#[derive(Serialize)]
struct QvOutput<'a> {
    x: &'a str,
    y: &'a str,
    bilinear: BilinearKind,
    shape: (usize, usize),
    form_norm: FormNorm,
    sequence: &'a SequenceKind,
    limit: &'a QvPath,
    estimate: &'a ConvergenceEstimate,
}

pub fn qv(e: &Experiment, out: &mut Reporter) -> Result<Outcome, CliError> {
    let xname = e.config.qv.x.clone().unwrap_or_else(|| e.names[0].clone());
    let yname = e.config.qv.y.clone().unwrap_or_else(|| xname.clone());
    let (x, y) = (e.path(Some(&xname))?, e.path(Some(&yname))?);
    if x.dim() != y.dim() {
        return Err(CliError::Config(format!("{xname:?} and {yname:?} differ in dimension")));
    }
    let b = e.bilinear(x.dim())?;
    let (limit, est) = qv_limit(&b, x, y, &e.seq, &e.times(), e.config.tolerances.qv_options())?;
    out.csv("qv_levels.csv", &est.to_csv())?;
    out.json(
        "qv.json",
        &QvOutput {
            x: &xname,
            y: &yname,
            bilinear: b.kind(),
            shape: b.shape(),
            form_norm: b.operator_norm(e.config.crossnorm),
            sequence: e.seq.kind(),
            limit: &limit,
            estimate: &est,
        },
    )?;
    let at_t = est.limit.last().cloned().unwrap_or_default();
    Ok(Outcome {
        verdict: est.verdict,
        summary: format!("limit(T)=[{}] cauchy_tail={:.16e}", fields(&at_t), est.max_cauchy_tail),
    })
}

pub fn ito(e: &Experiment, out: &mut Reporter) -> Result<Outcome, CliError> {
    let x = e.subject()?;
    let (f, a) = e.function(x.dim())?;
    let report = ito_report(&f, a.as_ref(), x, &e.seq, &e.times(), e.config.ito.window)?;
    out.csv("ito_residuals.csv", &report.to_csv())?;
    out.json("ito.json", &report)?;
    Ok(Outcome {
        verdict: report.verdict(e.config.tolerances.ito),
        summary: format!(
            "final_relative_residual={:.16e} max_relative_residual={:.16e} tail_nonincreasing={}",
            report.final_relative_residual, report.max_relative_residual, report.tail_nonincreasing
        ),
    })
}

#[derive(Serialize)]
struct C1Output<'a, G: Serialize, S: Serialize> {
    function: &'a str,
    level_gaps: G,
    smooth: S,
}

pub fn c1(e: &Experiment, out: &mut Reporter) -> Result<Outcome, CliError> {
    let x = e.subject()?;
    let (f, a) = e.function(x.dim())?;
    let times = e.times();
    let fp = PathFunctional::new(f.clone(), a.as_ref().map(|p| p.path().clone()))?;
    let gaps = c1_level_gaps(&fp, x, &e.seq, &times)?;
    let opts = e.config.tolerances.qv_options();
    // the formula integrates over the QV's own grid: sample it on the finest level
    let mut fine = e.seq.levels()[e.seq.len() - 1].points();
    fine.extend_from_slice(&times);
    let (qv, qv_est) = qv_limit(&qvcore::BilinearForm::outer(x.dim()), x, x, &e.seq, &fine, opts)?;
    let smooth = c1_smooth_transform(&f, a.as_ref(), x, &qv, &e.seq, &times, opts)?;

    let mut csv = String::from("level,relative_gap\n");
    for (l, g) in gaps.levels.iter().zip(&gaps.relative_gaps) {
        csv.push_str(&format!("{l},{g:.16e}\n"));
    }
    out.csv("c1_gaps.csv", &csv)?;
    out.json("c1.json", &C1Output { function: f.description(), level_gaps: &gaps, smooth: &smooth })?;

    let last_gap = gaps.relative_gaps.last().copied().unwrap_or(f64::NAN);
    let tol = e.config.tolerances.gap;
    let verdict = worst(
        worst(qv_est.verdict, smooth.estimate.verdict),
        within(last_gap <= tol && smooth.relative_gap <= tol),
    );
    Ok(Outcome {
        verdict,
        summary: format!("last_level_gap={last_gap:.16e} limit_gap={:.16e}", smooth.relative_gap),
    })
}

pub fn intqv(e: &Experiment, out: &mut Reporter) -> Result<Outcome, CliError> {
    let x = e.subject()?;
    let (f, a) = e.function(x.dim())?;
    let report = integral_qv(&f, a.as_ref(), x, &e.seq, &e.times(), e.config.tolerances.qv_options())?;
    let m = report.rhs.dim();
    let mut csv = String::from("t");
    for side in ["lhs", "rhs"] {
        for k in 1..=m {
            csv.push_str(&format!(",{side}_{k}"));
        }
    }
    csv.push('\n');
    for &t in report.lhs.times() {
        csv.push_str(&format!("{t:.16e},{},{}\n", fields(&report.lhs.value_at(t)?), fields(&report.rhs.value_at(t)?)));
    }
    out.csv("intqv.csv", &csv)?;
    out.json("intqv.json", &report)?;
    let verdict =
        worst(report.lhs_estimate.verdict, within(report.relative_gap <= e.config.tolerances.gap));
    Ok(Outcome { verdict, summary: format!("relative_gap={:.16e}", report.relative_gap) })
}

#[derive(Serialize)]
struct DensityOutput<'a, D: Serialize> {
    form_norm: f64,
    crossnorm: CrossnormChoice,
    density: D,
    unit_density: Option<&'a UnitDensityReport>,
    qv_b_verdict: Verdict,
    qv_scalar_verdict: Verdict,
}

pub fn density(e: &Experiment, out: &mut Reporter) -> Result<Outcome, CliError> {
    let x = e.subject()?;
    let cfg = &e.config;
    if cfg.density.cells == 0 {
        return Err(CliError::Config("density.cells must be positive".into()));
    }
    cfg.crossnorm.require_compatible(cfg.norm).map_err(|err| CliError::Config(err.to_string()))?;
    let b = e.bilinear(x.dim())?;
    let dissection = Partition::uniform(x.horizon(), cfg.density.cells)?;
    // the limits are needed at every cell boundary
    let mut times = dissection.points();
    times.extend(e.times());
    let opts = cfg.tolerances.qv_options();
    let (qv_b, est_b) = qv_limit(&b, x, x, &e.seq, &times, opts)?;
    let (qv_s, est_s) = scalar_qv_limit(x, &e.seq, &times, cfg.norm, opts)?;
    let b_norm = form_norm(&b, cfg.crossnorm);
    let density = density_estimate(&qv_b, &qv_s, &dissection, cfg.density.floor, b_norm, cfg.crossnorm, cfg.tolerances.bound)?;
    let unit = if b.kind() == BilinearKind::Outer && cfg.crossnorm == CrossnormChoice::Projective && cfg.norm == NormChoice::Euclidean {
        Some(unit_density_check(&density, &qv_b, &qv_s)?)
    } else {
        None
    };
    out.csv("density.csv", &density.to_csv())?;
    out.json(
        "density.json",
        &DensityOutput {
            form_norm: b_norm,
            crossnorm: cfg.crossnorm,
            density: &density,
            unit_density: unit.as_ref(),
            qv_b_verdict: est_b.verdict,
            qv_scalar_verdict: est_s.verdict,
        },
    )?;
    let bound = if density.bound_holds { Verdict::Pass } else { Verdict::Fail };
    let mut summary = format!("max_norm_excess={:.16e} bound_holds={}", density.max_norm_excess, density.bound_holds);
    if let Some(u) = &unit {
        summary.push_str(&format!(" unit_max_deviation={:.16e}", u.max_deviation));
    }
    Ok(Outcome { verdict: worst(worst(est_b.verdict, est_s.verdict), bound), summary })
}

pub fn decompose(e: &Experiment, out: &mut Reporter) -> Result<Outcome, CliError> {
    let x = e.subject()?;
    let (f, a) = e.function(x.dim())?;
    let k = e.seq.len() - 1;
    let dec = rough_fv_decompose(&f, a.as_ref(), x, e.seq.level(k), e.seq.label(k), &e.times())?;
    out.csv("decompose.csv", &dec.to_csv())?;
    out.csv("decompose_y.csv", &write_path_csv(&dec.y))?;
    out.csv("decompose_c.csv", &write_path_csv(dec.c.path()))?;
    out.csv("decompose_d.csv", &write_path_csv(dec.d.path()))?;
    out.json("decompose.json", &dec)?;
    let verdict = if dec.max_excess <= e.config.tolerances.bound { Verdict::Pass } else { Verdict::Fail };
    Ok(Outcome { verdict, summary: format!("level={} max_excess={:.16e}", dec.level, dec.max_excess) })
}

#[derive(Serialize)]
struct CheckEntry<'a> {
    subject: String,
    report: &'a ConditionReport,
}

pub fn check(e: &Experiment, out: &mut Reporter) -> Result<Outcome, CliError> {
    let cfg = &e.config;
    let opts = CheckOptions {
        tolerance: cfg.tolerances.check,
        window: cfg.check.window,
        decay_factor: cfg.check.decay_factor,
        ..CheckOptions::default()
    };
    let t_grid: Vec<f64> = e.times().into_iter().filter(|&t| t > 0.0).collect();
    let eps = &cfg.check.eps;
    let mut reports: Vec<(String, ConditionReport)> = Vec::new();
    for (name, path) in e.names.iter().zip(&e.paths) {
        for r in check_condition_c(&e.seq, path, &t_grid, eps, cfg.norm, &opts)? {
            reports.push((name.clone(), r));
        }
        reports.push((name.clone(), check_left_approximation(&e.seq, path, &t_grid, cfg.norm, &opts)?));
    }
    if e.paths.len() > 1 {
        let family: Vec<&CadlagPath> = e.paths.iter().collect();
        for r in check_uc(&e.seq, &family, &t_grid, eps, cfg.norm, &opts)? {
            reports.push(("family".into(), r));
        }
    }
    let mut verdict = Verdict::Pass;
    let mut lines = Vec::new();
    for (name, r) in &reports {
        verdict = worst(verdict, r.verdict);
        let witness = r
            .witness
            .as_ref()
            .map_or(String::new(), |w| format!(" witness(level={}, value={:.16e})", w.level, w.value));
        lines.push(format!("{name} {:?} {:?}{witness}", r.condition, r.verdict));
    }
    for line in &lines {
        println!("{line}");
    }
    let entries: Vec<CheckEntry> = reports.iter().map(|(s, r)| CheckEntry { subject: s.clone(), report: r }).collect();
    out.json("check.json", &entries)?;
    Ok(Outcome { verdict, summary: format!("{} condition reports", reports.len()) })
}

/// Writes every configured path in the path CSV format.
pub fn paths(e: &Experiment, out: &mut Reporter) -> Result<Outcome, CliError> {
    for (name, path) in e.names.iter().zip(&e.paths) {
        out.csv(&format!("{name}.csv"), &write_path_csv(path))?;
    }
    Ok(Outcome { verdict: Verdict::Pass, summary: format!("{} paths exported", e.paths.len()) })
}
