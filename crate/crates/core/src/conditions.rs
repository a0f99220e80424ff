//! Finite-prefix certification of the admissibility conditions on a
//! partition sequence: (C1)-(C3), left approximation, and the uniform
//! family versions (UC1)-(UC3).
//!
//! Every condition is asymptotic, so a check only ever sees levels up to
//! `n_max`. Verdicts are three-valued; `Fail` always carries a witness and an
//! undecidable tail is reported as `Inconclusive`, never as `Pass`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::norm::NormChoice;
use crate::partition::PartitionSequence;
use crate::path::{CadlagPath, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Condition {
    C1,
    C2,
    C3,
    LeftApprox,
    UC1,
    UC2,
    UC3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Verdict {
    Pass,
    Inconclusive,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Witness {
    pub level: u32,
    pub time: Option<f64>,
    pub interval: Option<(f64, f64)>,
    pub eps: Option<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub condition: Condition,
    pub verdict: Verdict,
    pub witness: Option<Witness>,
    pub eps_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub levels: Vec<u32>,
    /// One key per table row: eps for C1/C3, jump time for C2, t for left approximation.
    pub row_keys: Vec<f64>,
    /// Measured quantity per row and level.
    pub table: Vec<Vec<f64>>,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckOptions {
    /// A tail value at or below this counts as converged.
    pub tolerance: f64,
    /// Slack for monotonicity comparisons.
    pub monotone_slack: f64,
    /// Tail window (levels) for the decay test.
    pub window: usize,
    /// Required contraction of the tail over `window` levels for a decay pass.
    pub decay_factor: f64,
    /// Levels with more pieces than this are skipped in the oscillation table.
    pub max_osc_pieces: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            monotone_slack: 1e-9,
            window: 4,
            decay_factor: 0.5,
            max_osc_pieces: 1 << 20,
        }
    }
}

/// Verdict on a sequence that should tend to zero.
///
/// Pass when the last value is within tolerance, or when the last `window`
/// values are nonincreasing and contract by at least `decay_factor`. Fail when
/// the last value is above tolerance and no smaller than the value two levels
/// earlier. Anything else is inconclusive.
pub fn tail_verdict(values: &[f64], opts: &CheckOptions) -> Verdict {
    let Some(&last) = values.last() else {
        return Verdict::Inconclusive;
    };
    if last <= opts.tolerance {
        return Verdict::Pass;
    }
    let n = values.len();
    if n >= opts.window && opts.window >= 2 {
        let tail = &values[n - opts.window..];
        let monotone = tail.windows(2).all(|w| w[1] <= w[0] + opts.monotone_slack);
        if monotone && last <= opts.decay_factor * tail[0] {
            return Verdict::Pass;
        }
    }
    if n >= 3 && last >= values[n - 3] - opts.monotone_slack {
        return Verdict::Fail;
    }
    Verdict::Inconclusive
}

fn validate(seq: &PartitionSequence, family: &[&CadlagPath], t_grid: &[f64], eps_grid: &[f64]) -> Result<()> {
    if family.is_empty() {
        return Err(Error::Domain("family must be nonempty".into()));
    }
    if seq.is_empty() {
        return Err(Error::Invalid("partition sequence has no levels".into()));
    }
    let horizon = seq.horizon();
    if family.iter().any(|f| f.horizon() != horizon) {
        return Err(Error::Invalid("paths and partitions must share the horizon".into()));
    }
    if t_grid.iter().any(|&t| !(t > 0.0 && t <= horizon)) {
        return Err(Error::Domain("t grid must lie in ]0, T]".into()));
    }
    if eps_grid.iter().any(|&e| !(e > 0.0)) || eps_grid.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Invalid("eps grid must be positive and strictly decreasing".into()));
    }
    Ok(())
}

fn effective_t_grid(t_grid: &[f64], horizon: f64) -> Vec<f64> {
    if t_grid.is_empty() {
        vec![horizon]
    } else {
        t_grid.to_vec()
    }
}

fn union_jump_times(family: &[&CadlagPath], eps: f64, norm: NormChoice, t: f64) -> Vec<f64> {
    let mut times: Vec<f64> = family
        .iter()
        .flat_map(|f| f.jumps().iter())
        .filter(|j| j.time <= t && norm.norm(&j.delta) > eps)
        .map(|j| j.time)
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

/// (C1)/(UC1): from some level on, every piece holds at most one jump time of
/// `D_eps` inside `[0, t]`.
fn check_isolation(
    condition: Condition,
    seq: &PartitionSequence,
    family: &[&CadlagPath],
    t_grid: &[f64],
    eps_grid: &[f64],
    norm: NormChoice,
    opts: &CheckOptions,
) -> Result<ConditionReport> {
    let t = t_grid.iter().copied().fold(0.0, f64::max);
    let mut table = Vec::new();
    let mut verdict = Verdict::Pass;
    let mut witness = None;
    for &eps in eps_grid {
        let times = union_jump_times(family, eps, norm, t);
        let mut row = Vec::with_capacity(seq.len());
        let mut last_bad = None;
        for (k, level) in seq.levels().iter().enumerate() {
            let mut max_count = if times.is_empty() { 0 } else { 1 };
            let mut run = 0usize;
            let mut prev_index = None;
            let mut bad_piece = None;
            for &s in &times {
                let piece = level.locate(s)?;
                if prev_index == Some(piece.index) {
                    run += 1;
                } else {
                    run = 1;
                }
                prev_index = Some(piece.index);
                if run > max_count {
                    max_count = run;
                    bad_piece = Some((piece.lower, piece.upper));
                }
            }
            row.push(max_count as f64);
            if max_count > 1 {
                last_bad = Some((k, bad_piece, max_count));
            }
        }
        if let Some((k, piece, count)) = last_bad {
            if k + 1 == seq.len() && verdict != Verdict::Fail {
                verdict = Verdict::Fail;
                witness = Some(Witness {
                    level: seq.label(k),
                    time: None,
                    interval: piece,
                    eps: Some(eps),
                    value: count as f64,
                });
            }
        }
        table.push(row);
    }
    Ok(ConditionReport {
        condition,
        verdict,
        witness,
        eps_grid: eps_grid.to_vec(),
        t_grid: t_grid.to_vec(),
        levels: seq.labels().to_vec(),
        row_keys: eps_grid.to_vec(),
        table,
        tolerance: opts.tolerance,
    })
}

/// (C2)/(UC2): `sup_f |delta f_t(pi_n(s)) - Delta f_s| -> 0` for every jump
/// time `s` of the family and every `t >= s` in the t grid.
fn check_jump_capture(
    condition: Condition,
    seq: &PartitionSequence,
    family: &[&CadlagPath],
    t_grid: &[f64],
    eps_grid: &[f64],
    norm: NormChoice,
    opts: &CheckOptions,
) -> Result<ConditionReport> {
    let mut jump_times: Vec<f64> = family.iter().flat_map(|f| f.jumps().iter().map(|j| j.time)).collect();
    jump_times.sort_by(f64::total_cmp);
    jump_times.dedup();

    let mut table = Vec::new();
    let mut row_keys = Vec::new();
    let mut verdict = Verdict::Pass;
    let mut witness: Option<Witness> = None;
    for &s in &jump_times {
        for &t in t_grid.iter().filter(|&&t| t >= s) {
            let mut row = Vec::with_capacity(seq.len());
            for level in seq.levels() {
                let piece = level.locate(s)?;
                let mut err: f64 = 0.0;
                for f in family {
                    let hi = f.value(piece.upper.min(t));
                    let lo = f.value(piece.lower.min(t));
                    let jump = f.jump_at(s);
                    let diff: Vec<f64> = (0..f.dim())
                        .map(|i| hi[i] - lo[i] - jump.map_or(0.0, |j| j[i]))
                        .collect();
                    err = err.max(norm.norm(&diff));
                }
                row.push(err);
            }
            let v = tail_verdict(&row, opts);
            if v > verdict || (v == verdict && v != Verdict::Pass && witness_value(&witness) < *row.last().unwrap()) {
                verdict = v;
                witness = Some(Witness {
                    level: *seq.labels().last().unwrap(),
                    time: Some(s),
                    interval: Some((seq.levels().last().unwrap().locate(s)?.lower, t)),
                    eps: None,
                    value: *row.last().unwrap(),
                });
            }
            table.push(row);
            row_keys.push(s);
        }
    }
    Ok(ConditionReport {
        condition,
        verdict,
        witness: if verdict == Verdict::Pass { None } else { witness },
        eps_grid: eps_grid.to_vec(),
        t_grid: t_grid.to_vec(),
        levels: seq.labels().to_vec(),
        row_keys,
        table,
        tolerance: opts.tolerance,
    })
}

fn witness_value(w: &Option<Witness>) -> f64 {
    w.as_ref().map_or(f64::NEG_INFINITY, |w| w.value)
}

/// (C3)/(UC3): table of `sup_f O^+_t(f - J_eps(f); pi_n)` over the eps grid
/// and levels. The verdict is the tail verdict of the smallest-eps row,
/// downgraded to inconclusive when the last-level values do not decrease as
/// eps shrinks.
fn check_small_jump_oscillation(
    condition: Condition,
    seq: &PartitionSequence,
    family: &[&CadlagPath],
    t_grid: &[f64],
    eps_grid: &[f64],
    norm: NormChoice,
    opts: &CheckOptions,
) -> Result<ConditionReport> {
    let t = t_grid.iter().copied().fold(0.0, f64::max);
    let levels: Vec<usize> = (0..seq.len()).filter(|&k| seq.level(k).len() <= opts.max_osc_pieces).collect();
    let mut table = Vec::new();
    for &eps in eps_grid {
        let residuals = family
            .iter()
            .map(|f| f.truncate_jumps(eps, norm).map(|(_, r)| r))
            .collect::<Result<Vec<_>>>()?;
        let mut row = Vec::with_capacity(levels.len());
        for &k in &levels {
            let mut osc: f64 = 0.0;
            for r in &residuals {
                osc = osc.max(r.osc_along(seq.level(k), t, Side::Plus, norm)?);
            }
            row.push(osc);
        }
        table.push(row);
    }
    let (verdict, witness) = match table.last() {
        Some(row) if !row.is_empty() => {
            let mut v = tail_verdict(row, opts);
            let finals: Vec<f64> = table.iter().map(|r| *r.last().unwrap()).collect();
            let eps_monotone = finals.windows(2).all(|w| w[1] <= w[0] + opts.monotone_slack);
            if v == Verdict::Pass && !eps_monotone {
                v = Verdict::Inconclusive;
            }
            let w = (v == Verdict::Fail).then(|| Witness {
                level: seq.label(*levels.last().unwrap()),
                time: Some(t),
                interval: None,
                eps: eps_grid.last().copied(),
                value: *row.last().unwrap(),
            });
            (v, w)
        }
        _ => (Verdict::Inconclusive, None),
    };
    Ok(ConditionReport {
        condition,
        verdict,
        witness,
        eps_grid: eps_grid.to_vec(),
        t_grid: t_grid.to_vec(),
        levels: levels.iter().map(|&k| seq.label(k)).collect(),
        row_keys: eps_grid.to_vec(),
        table,
        tolerance: opts.tolerance,
    })
}

/// Reports for (C1), (C2) and (C3) of one path.
pub fn check_condition_c(
    seq: &PartitionSequence,
    path: &CadlagPath,
    t_grid: &[f64],
    eps_grid: &[f64],
    norm: NormChoice,
    opts: &CheckOptions,
) -> Result<[ConditionReport; 3]> {
    let family = [path];
    validate(seq, &family, t_grid, eps_grid)?;
    let ts = effective_t_grid(t_grid, seq.horizon());
    Ok([
        check_isolation(Condition::C1, seq, &family, &ts, eps_grid, norm, opts)?,
        check_jump_capture(Condition::C2, seq, &family, &ts, eps_grid, norm, opts)?,
        check_small_jump_oscillation(Condition::C3, seq, &family, &ts, eps_grid, norm, opts)?,
    ])
}

/// Reports for (UC1), (UC2) and (UC3) of a finite family.
pub fn check_uc(
    seq: &PartitionSequence,
    family: &[&CadlagPath],
    t_grid: &[f64],
    eps_grid: &[f64],
    norm: NormChoice,
    opts: &CheckOptions,
) -> Result<[ConditionReport; 3]> {
    validate(seq, family, t_grid, eps_grid)?;
    let ts = effective_t_grid(t_grid, seq.horizon());
    Ok([
        check_isolation(Condition::UC1, seq, family, &ts, eps_grid, norm, opts)?,
        check_jump_capture(Condition::UC2, seq, family, &ts, eps_grid, norm, opts)?,
        check_small_jump_oscillation(Condition::UC3, seq, family, &ts, eps_grid, norm, opts)?,
    ])
}

/// `X(lower end of pi_n(t)) -> X(t-)` at every `t` of the grid.
pub fn check_left_approximation(
    seq: &PartitionSequence,
    path: &CadlagPath,
    t_grid: &[f64],
    norm: NormChoice,
    opts: &CheckOptions,
) -> Result<ConditionReport> {
    validate(seq, &[path], t_grid, &[])?;
    let ts = effective_t_grid(t_grid, seq.horizon());
    let mut table = Vec::new();
    let mut verdict = Verdict::Pass;
    let mut witness: Option<Witness> = None;
    for &t in &ts {
        let target = path.left(t);
        let mut row = Vec::with_capacity(seq.len());
        let mut last_lower = 0.0;
        for level in seq.levels() {
            let piece = level.locate(t)?;
            last_lower = piece.lower;
            row.push(norm.dist(&path.value(piece.lower), &target));
        }
        let v = tail_verdict(&row, opts);
        if v > verdict || (v == verdict && v != Verdict::Pass && witness_value(&witness) < *row.last().unwrap()) {
            verdict = v;
            witness = Some(Witness {
                level: *seq.labels().last().unwrap(),
                time: Some(t),
                interval: Some((last_lower, t)),
                eps: None,
                value: *row.last().unwrap(),
            });
        }
        table.push(row);
    }
    Ok(ConditionReport {
        condition: Condition::LeftApprox,
        verdict,
        witness: if verdict == Verdict::Pass { None } else { witness },
        eps_grid: Vec::new(),
        t_grid: ts.clone(),
        levels: seq.labels().to_vec(),
        row_keys: ts,
        table,
        tolerance: opts.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::Partition;
    use crate::path::Jump;

    const E: NormChoice = NormChoice::Euclidean;

    fn linear() -> CadlagPath {
        let grid: Vec<f64> = (0..=64).map(|i| i as f64 / 64.0).collect();
        let samples = grid.iter().map(|t| (3.0 * t).sin()).collect();
        CadlagPath::linear(1, grid, samples).unwrap()
    }

    #[test]
    fn tail_verdict_rules() {
        let o = CheckOptions::default();
        assert_eq!(tail_verdict(&[1.0, 0.5, 0.0], &o), Verdict::Pass);
        assert_eq!(tail_verdict(&[1.0, 0.5, 0.25, 0.125], &o), Verdict::Pass);
        assert_eq!(tail_verdict(&[1.0, 1.0, 1.0], &o), Verdict::Fail);
        assert_eq!(tail_verdict(&[1.0, 0.9, 0.8, 0.7], &o), Verdict::Inconclusive);
        assert_eq!(tail_verdict(&[], &o), Verdict::Inconclusive);
    }

    #[test]
    fn continuous_path_passes_everything() {
        let p = linear();
        let seq = PartitionSequence::dyadic(1.0, 12).unwrap();
        let reports = check_condition_c(&seq, &p, &[0.5, 1.0], &[0.1, 0.01], E, &CheckOptions::default()).unwrap();
        for r in &reports {
            assert_eq!(r.verdict, Verdict::Pass, "{:?}", r.condition);
        }
        let la = check_left_approximation(&seq, &p, &[0.3, 0.77, 1.0], E, &CheckOptions::default()).unwrap();
        assert_eq!(la.verdict, Verdict::Pass);
    }

    #[test]
    fn step_path_jump_at_one_third() {
        let p = CadlagPath::pure_jump(1, 1.0, &[0.0], vec![Jump::new(1.0 / 3.0, vec![1.5])]).unwrap();
        let seq = PartitionSequence::dyadic(1.0, 10).unwrap();
        let [c1, c2, c3] = check_condition_c(&seq, &p, &[1.0], &[0.5, 0.1], E, &CheckOptions::default()).unwrap();
        assert_eq!(c1.verdict, Verdict::Pass);
        assert_eq!(c2.verdict, Verdict::Pass);
        assert_eq!(c3.verdict, Verdict::Pass);
        // oracle: delta X over the piece containing 1/3 equals the jump exactly at every level
        assert!(c2.table[0].iter().all(|&e| e == 0.0));
    }

    #[test]
    fn twin_jumps_fail_c1_at_coarse_levels() {
        let s = 0.4;
        let p = CadlagPath::pure_jump(
            1,
            1.0,
            &[0.0],
            vec![Jump::new(s, vec![1.0]), Jump::new(s + 2f64.powi(-12), vec![-1.0])],
        )
        .unwrap();
        let seq = PartitionSequence::dyadic(1.0, 8).unwrap();
        let [c1, ..] = check_condition_c(&seq, &p, &[1.0], &[0.5], E, &CheckOptions::default()).unwrap();
        assert_eq!(c1.verdict, Verdict::Fail);
        let w = c1.witness.unwrap();
        let (lo, hi) = w.interval.unwrap();
        assert!(lo < s && s + 2f64.powi(-12) <= hi);
        assert_eq!(w.value, 2.0);
    }

    #[test]
    fn left_approximation_frozen_endpoint_fails() {
        let s = 0.6;
        let p = linear();
        let levels: Vec<Partition> = (0..8)
            .map(|n| Partition::from_points(vec![0.0, s - 0.1, s + 0.1 + 0.2 * 2f64.powi(-n), 1.0]).unwrap())
            .collect();
        let seq = PartitionSequence::explicit(levels).unwrap();
        let r = check_left_approximation(&seq, &p, &[s], E, &CheckOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.witness.unwrap().interval.unwrap().0, s - 0.1);
    }

    #[test]
    fn left_approximation_accumulating_points_pass_at_jump() {
        let s = 0.5;
        let p = CadlagPath::new(
            1,
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![Jump::new(s, vec![2.0])],
            crate::path::Interp::PiecewiseLinear,
        )
        .unwrap();
        let levels: Vec<Partition> = (2..15)
            .map(|n| Partition::from_points(vec![0.0, s - 2f64.powi(-n), s, 1.0]).unwrap())
            .collect();
        let seq = PartitionSequence::explicit(levels).unwrap();
        let r = check_left_approximation(&seq, &p, &[s], E, &CheckOptions::default()).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn singleton_family_matches_single_path_reports() {
        let p = CadlagPath::new(
            1,
            (0..=32).map(|i| i as f64 / 32.0).collect(),
            (0..=32).map(|i| ((i * 7) % 5) as f64 * 0.1).collect(),
            vec![Jump::new(0.3, vec![1.0]), Jump::new(0.71, vec![-0.4])],
            crate::path::Interp::PiecewiseLinear,
        )
        .unwrap();
        let seq = PartitionSequence::dyadic(1.0, 9).unwrap();
        let o = CheckOptions::default();
        let c = check_condition_c(&seq, &p, &[0.5, 1.0], &[0.5, 0.2], E, &o).unwrap();
        let u = check_uc(&seq, &[&p], &[0.5, 1.0], &[0.5, 0.2], E, &o).unwrap();
        for (a, b) in c.iter().zip(&u) {
            assert_eq!(a.verdict, b.verdict);
            assert_eq!(a.witness, b.witness);
            assert_eq!(a.table, b.table);
            assert_eq!(a.row_keys, b.row_keys);
        }
    }

    #[test]
    fn family_with_jumps_at_tenths() {
        let fam: Vec<CadlagPath> = (1..10)
            .map(|k| CadlagPath::pure_jump(1, 1.0, &[0.0], vec![Jump::new(k as f64 / 10.0, vec![1.0])]).unwrap())
            .collect();
        let refs: Vec<&CadlagPath> = fam.iter().collect();
        let seq = PartitionSequence::dyadic(1.0, 8).unwrap();
        let [uc1, uc2, uc3] = check_uc(&seq, &refs, &[1.0], &[0.5, 0.01], E, &CheckOptions::default()).unwrap();
        assert_eq!(uc1.verdict, Verdict::Pass);
        // isolation holds from level 4 on (mesh 1/16 < 1/10) and fails at level 3
        let row = &uc1.table[1];
        assert!(row[3] > 1.0);
        assert!(row[4..].iter().all(|&c| c <= 1.0));
        assert_eq!(uc2.verdict, Verdict::Pass);
        assert_eq!(uc3.verdict, Verdict::Pass);
    }

    #[test]
    fn translates_of_continuous_path_pass_uc() {
        let grid: Vec<f64> = (0..=256).map(|i| i as f64 / 256.0).collect();
        let fam: Vec<CadlagPath> = (0..5)
            .map(|k| {
                let shift = k as f64 * 0.1;
                let samples = grid.iter().map(|t| (6.0 * (t + shift)).cos()).collect();
                CadlagPath::linear(1, grid.clone(), samples).unwrap()
            })
            .collect();
        let refs: Vec<&CadlagPath> = fam.iter().collect();
        let seq = PartitionSequence::dyadic(1.0, 12).unwrap();
        let reports = check_uc(&seq, &refs, &[1.0], &[0.1], E, &CheckOptions::default()).unwrap();
        for r in &reports {
            assert_eq!(r.verdict, Verdict::Pass, "{:?}", r.condition);
        }
    }

    #[test]
    fn bad_grids_rejected() {
        let p = linear();
        let seq = PartitionSequence::dyadic(1.0, 4).unwrap();
        let o = CheckOptions::default();
        assert!(check_condition_c(&seq, &p, &[0.0], &[0.1], E, &o).is_err());
        assert!(check_condition_c(&seq, &p, &[1.0], &[0.1, 0.2], E, &o).is_err());
    }
}
