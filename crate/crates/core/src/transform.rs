//! Ito-Foellmer integrals, the Ito formula with residual diagnostics, the
//! `C^1` transformation formula for quadratic variations, the quadratic
//! variation of an integral, and the rough / finite-variation decomposition.
//!
//! Stieltjes integrals against quadratic-variation paths are left-endpoint
//! sums on the QV path's reporting grid plus exact jump terms evaluated at
//! left limits.

use rayon::prelude::*;
use serde::Serialize;

use crate::bilinear::BilinearForm;
use crate::conditions::Verdict;
use crate::error::{check_dim, Error, Result};
use crate::partition::{Partition, PartitionSequence};
use crate::path::{merge_sorted, CadlagPath, FvPath, Interp, Jump};
use crate::qv::{
    discrete_qv_at, discrete_qv_path, qv_limit, reporting_grid, ConvergenceEstimate, QvOptions, QvPath, SumAcc,
};
use crate::smooth::{composite_path, PathFunctional, SmoothFunction};

/// Integrand of an Ito-Foellmer sum.
#[derive(Debug, Clone, Copy)]
pub enum Integrand<'a> {
    /// Path of row-major `rows x d` matrices.
    Path { xi: &'a CadlagPath, rows: usize },
    /// `D_x f(t, X_t)`.
    Gradient(&'a PathFunctional),
}

impl Integrand<'_> {
    fn rows(&self) -> usize {
        match self {
            Integrand::Path { rows, .. } => *rows,
            Integrand::Gradient(fp) => fp.q(),
        }
    }

    fn at(&self, t: f64, x_t: &[f64]) -> Vec<f64> {
        match self {
            Integrand::Path { xi, .. } => xi.value(t),
            Integrand::Gradient(fp) => fp.dx(t, x_t),
        }
    }
}

fn mat_vec_acc(m: &[f64], rows: usize, v: &[f64], out: &mut [f64]) {
    let d = v.len();
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        let mut s = 0.0;
        for j in 0..d {
            s += m[i * d + j] * v[j];
        }
        *o += s;
    }
}

/// `out += D M D^T` for `D` row-major `q x d` and `M` row-major `d x d`.
fn sandwich_acc(dm: &[f64], q: usize, m: &[f64], out: &mut [f64]) {
    let d = dm.len().checked_div(q).unwrap_or(0);
    let mut tmp = vec![0.0; q * d];
    for a in 0..q {
        for j in 0..d {
            tmp[a * d + j] = (0..d).map(|i| dm[a * d + i] * m[i * d + j]).sum();
        }
    }
    for a in 0..q {
        for b in 0..q {
            out[a * q + b] += (0..d).map(|j| tmp[a * d + j] * dm[b * d + j]).sum::<f64>();
        }
    }
}

fn outer_acc(v: &[f64], out: &mut [f64]) {
    let q = v.len();
    for a in 0..q {
        for b in 0..q {
            out[a * q + b] += v[a] * v[b];
        }
    }
}

fn sorted_order(times: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..times.len()).collect();
    idx.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    idx
}

/// Sweep over the pieces of `pi` with the left-endpoint value of `X` available:
/// `term(k, r, X_r, increment, out)` for each piece clipped at each time,
/// `out` zeroed, terms summed with compensation.
fn piece_sweep<F>(x: &CadlagPath, pi: &Partition, times: &[f64], m: usize, mut term: F) -> Vec<f64>
where
    F: FnMut(usize, f64, &[f64], &[f64], &mut [f64]),
{
    let d = x.dim();
    let points = pi.points();
    let xv = x.values_at_sorted(&points);
    let n = points.len() - 1;
    let mut out = vec![0.0; times.len() * m];
    let mut acc = SumAcc::new(m);
    let mut inc = vec![0.0; d];
    let mut k = 0usize;
    for &ti in &sorted_order(times) {
        let t = times[ti];
        while k < n && points[k + 1] <= t {
            for i in 0..d {
                inc[i] = xv[(k + 1) * d + i] - xv[k * d + i];
            }
            acc.add_with(|o| term(k, points[k], &xv[k * d..(k + 1) * d], &inc, o));
            k += 1;
        }
        let row = &mut out[ti * m..(ti + 1) * m];
        if k < n && points[k] < t {
            let xt = x.value(t);
            for i in 0..d {
                inc[i] = xt[i] - xv[k * d + i];
            }
            let mut partial = acc.clone();
            partial.add_with(|o| term(k, points[k], &xv[k * d..(k + 1) * d], &inc, o));
            partial.total_into(row);
        } else {
            acc.total_into(row);
        }
    }
    out
}

fn check_horizons(x: &CadlagPath, pi: &Partition) -> Result<()> {
    if (x.horizon() - pi.horizon()).abs() > 1e-12 * x.horizon().max(1.0) {
        return Err(Error::Invalid("path and partition horizons differ".into()));
    }
    Ok(())
}

/// `sum_{]r,s] in pi} xi(r) (X_{s^t} - X_{r^t})` at several times (rows follow `times`).
pub fn follmer_integral_at(integrand: Integrand<'_>, x: &CadlagPath, pi: &Partition, times: &[f64]) -> Result<Vec<f64>> {
    check_horizons(x, pi)?;
    let q = integrand.rows();
    if let Integrand::Path { xi, rows } = integrand {
        check_dim(rows * x.dim(), xi.dim())?;
    }
    if let Integrand::Gradient(fp) = integrand {
        check_dim(fp.d(), x.dim())?;
    }
    let mut cache: Option<(usize, Vec<f64>)> = None;
    Ok(piece_sweep(x, pi, times, q, |k, r, xr, inc, acc| {
        if cache.as_ref().map(|c| c.0) != Some(k) {
            cache = Some((k, integrand.at(r, xr)));
        }
        mat_vec_acc(&cache.as_ref().unwrap().1, q, inc, acc);
    }))
}

pub fn follmer_integral(integrand: Integrand<'_>, x: &CadlagPath, pi: &Partition, t: f64) -> Result<Vec<f64>> {
    follmer_integral_at(integrand, x, pi, &[t])
}

/// `int_{]0,t]} xi dQ` as a left-endpoint sum of `apply(s, left, dQ, out)`
/// over the reporting grid of `qv` (continuous part) plus jump terms with
/// `left = true`.
fn stieltjes_qv<F>(qv: &QvPath, t: f64, k: usize, continuous: bool, jumps: bool, mut apply: F) -> Vec<f64>
where
    F: FnMut(f64, bool, &[f64], &mut [f64]),
{
    let m = qv.dim();
    let mut out = vec![0.0; k];
    if continuous {
        let cont = qv.continuous_values();
        let times = qv.times();
        let mut dq = vec![0.0; m];
        for i in 0..times.len() - 1 {
            if times[i] >= t {
                break;
            }
            let w = if times[i + 1] <= t { 1.0 } else { (t - times[i]) / (times[i + 1] - times[i]) };
            for c in 0..m {
                dq[c] = w * (cont[(i + 1) * m + c] - cont[i * m + c]);
            }
            apply(times[i], false, &dq, &mut out);
        }
    }
    if jumps {
        for j in qv.jumps().iter().take_while(|j| j.time <= t) {
            apply(j.time, true, &j.delta, &mut out);
        }
    }
    out
}

/// Per-level sums `sum xi(r) B(dX, dX)(I)` against the Stieltjes integral
/// `int xi_{s-} dQ_B`.
#[derive(Debug, Clone, Serialize)]
pub struct StieltjesReport {
    pub t: f64,
    pub levels: Vec<u32>,
    pub per_level: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    /// `|per_level - target|` per level.
    pub gaps: Vec<f64>,
    pub estimate: ConvergenceEstimate,
}

/// `xi` is a path of row-major `k x m` matrices acting on the values of `B`.
pub fn stieltjes_sum_limit(
    xi: &CadlagPath,
    k: usize,
    b: &BilinearForm,
    x: &CadlagPath,
    qv: &QvPath,
    seq: &PartitionSequence,
    t: f64,
    options: QvOptions,
) -> Result<StieltjesReport> {
    let m = b.out_dim();
    check_dim(k * m, xi.dim())?;
    check_dim(m, qv.dim())?;
    check_dim(b.in_dim(), x.dim())?;
    let times = reporting_grid(&[t], x.horizon())?;
    let rows: Vec<Vec<f64>> = seq
        .levels()
        .par_iter()
        .map(|pi| {
            check_horizons(x, pi)?;
            let mut term = vec![0.0; m];
            Ok(piece_sweep(x, pi, &times, k, |_, r, _, inc, o| {
                term.iter_mut().for_each(|v| *v = 0.0);
                b.accumulate(inc, inc, &mut term);
                mat_vec_acc(&xi.value(r), k, &term, o);
            }))
        })
        .collect::<Result<_>>()?;
    let target = stieltjes_qv(qv, t, k, true, true, |s, left, dq, out| {
        let v = if left && s > 0.0 { xi.left(s) } else { xi.value(s) };
        mat_vec_acc(&v, k, dq, out);
    });
    let ti = times.iter().position(|&s| s == t).unwrap();
    let per_level: Vec<Vec<f64>> = rows.iter().map(|r| r[ti * k..(ti + 1) * k].to_vec()).collect();
    let gaps = per_level
        .iter()
        .map(|v| v.iter().zip(&target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .collect();
    let estimate = ConvergenceEstimate::from_levels(seq, times, (k, 1), &rows, options)?;
    Ok(StieltjesReport { t, levels: seq.labels().to_vec(), per_level, target, gaps, estimate })
}

fn union_jump_times(x: &CadlagPath, fp: &PathFunctional) -> Vec<f64> {
    let mut s: Vec<f64> = x.jumps().iter().map(|j| j.time).chain(fp.jump_times()).collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

/// One row of the Ito formula at a reporting time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItoRow {
    pub level: u32,
    pub t: f64,
    /// `f(A_t, X_t) - f(A_0, X_0)`
    pub lhs: Vec<f64>,
    /// `int D_a f dA^c`
    pub drift: Vec<f64>,
    /// `int D_x f dX` (Ito-Foellmer sum)
    pub integral: Vec<f64>,
    /// `1/2 int D_x^2 f dQ^c`
    pub second_order: Vec<f64>,
    /// `sum (Delta f - D_x f(s-) Delta X_s)`
    pub jumps: Vec<f64>,
    pub rhs: Vec<f64>,
    pub residual: Vec<f64>,
    pub residual_norm: f64,
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// The four right-hand terms of the Ito formula along one partition.
/// `qv` is the tensor QV of `X` (typically the level's discrete QV path from
/// [`discrete_qv_path`], so the identity can be checked level by level).
pub fn ito_rhs(
    f: &SmoothFunction,
    a: Option<&FvPath>,
    x: &CadlagPath,
    qv: &QvPath,
    pi: &Partition,
    level: u32,
    times: &[f64],
) -> Result<Vec<ItoRow>> {
    f.require_c12()?;
    let d = x.dim();
    check_dim(f.d(), d)?;
    check_dim(d * d, qv.dim())?;
    let fp = PathFunctional::new(f.clone(), a.map(|p| p.path().clone()))?;
    let q = f.q();
    let p = f.p();
    let integral = follmer_integral_at(Integrand::Gradient(&fp), x, pi, times)?;
    let jump_times = union_jump_times(x, &fp);
    let a0 = fp.param(0.0);
    let f0 = f.eval(&a0, &x.value(0.0));

    // left-endpoint integrands on the QV grid, computed once
    let grid = qv.times();
    let x_grid = x.values_at_sorted(grid);
    let mut dxx_grid = Vec::with_capacity(grid.len());
    let mut da_grid = Vec::with_capacity(grid.len());
    for (i, &g) in grid.iter().enumerate() {
        let xg = &x_grid[i * d..(i + 1) * d];
        let ag = fp.param(g);
        dxx_grid.push(f.dxx(&ag, xg)?);
        da_grid.push(if p > 0 { f.da(&ag, xg) } else { Vec::new() });
    }
    let index_of = |s: f64| grid.binary_search_by(|g| g.total_cmp(&s)).ok();

    let mut rows = Vec::with_capacity(times.len());
    for (ti, &t) in times.iter().enumerate() {
        let xt = x.value(t);
        let lhs: Vec<f64> = f.eval(&fp.param(t), &xt).iter().zip(&f0).map(|(a, b)| a - b).collect();
        let second_order = stieltjes_qv(qv, t, q, true, false, |s, _, dq, out| {
            let h = match index_of(s) {
                Some(i) => dxx_grid[i].clone(),
                None => f.dxx(&fp.param(s), &x.value(s)).expect("checked C12"),
            };
            for c in 0..q {
                let mut acc = 0.0;
                for jk in 0..d * d {
                    acc += h[c * d * d + jk] * dq[jk];
                }
                out[c] += 0.5 * acc;
            }
        });
        let mut drift = vec![0.0; q];
        if let Some(a_path) = a {
            let cont = |s: f64| a_path.path().continuous_part(s);
            for i in 0..grid.len() - 1 {
                if grid[i] >= t {
                    break;
                }
                let upper = grid[i + 1].min(t);
                let (c0, c1) = (cont(grid[i]), cont(upper));
                let da_cont: Vec<f64> = c1.iter().zip(&c0).map(|(u, v)| u - v).collect();
                mat_vec_acc(&da_grid[i], q, &da_cont, &mut drift);
            }
        }
        let mut jumps = vec![0.0; q];
        for &s in jump_times.iter().take_while(|&&s| s <= t) {
            let (xs, xl) = (x.value(s), x.left(s));
            let fs = fp.eval(s, &xs);
            let fl = fp.eval_left(s, &xl);
            let dxs: Vec<f64> = xs.iter().zip(&xl).map(|(u, v)| u - v).collect();
            let mut lin = vec![0.0; q];
            mat_vec_acc(&fp.dx_left(s, &xl), q, &dxs, &mut lin);
            for c in 0..q {
                jumps[c] += (fs[c] - fl[c]) - lin[c];
            }
        }
        let integral_t = integral[ti * q..(ti + 1) * q].to_vec();
        let rhs: Vec<f64> = (0..q).map(|c| drift[c] + integral_t[c] + second_order[c] + jumps[c]).collect();
        let residual: Vec<f64> = lhs.iter().zip(&rhs).map(|(a, b)| a - b).collect();
        rows.push(ItoRow {
            level,
            t,
            residual_norm: norm2(&residual),
            lhs,
            drift,
            integral: integral_t,
            second_order,
            jumps,
            rhs,
            residual,
        });
    }
    Ok(rows)
}

/// Ito formula checked on every level of a sequence.
#[derive(Debug, Clone, Serialize)]
pub struct ItoReport {
    pub function: String,
    pub levels: Vec<u32>,
    pub times: Vec<f64>,
    /// `rows[k]`: rows of level `levels[k]`, one per time.
    pub rows: Vec<Vec<ItoRow>>,
    /// `residuals[i][k]`: residual norm at `times[i]` on level `levels[k]`.
    pub residuals: Vec<Vec<f64>>,
    /// `|LHS|` at each time on the last level.
    pub lhs_norms: Vec<f64>,
    /// Largest last-level residual relative to `1 + |LHS|`.
    pub final_relative_residual: f64,
    /// Largest residual relative to `1 + |LHS|` over all levels and times.
    pub max_relative_residual: f64,
    /// Residuals nonincreasing over the last `window` levels at every time.
    pub tail_nonincreasing: bool,
    pub window: usize,
}

impl ItoReport {
    /// Verdict against a relative residual tolerance: `Pass` if every level is
    /// within it (an exact identity) or if the tail decays and ends within it.
    pub fn verdict(&self, tolerance: f64) -> Verdict {
        let decayed = self.tail_nonincreasing && self.final_relative_residual <= tolerance;
        if self.max_relative_residual <= tolerance || decayed {
            Verdict::Pass
        } else if self.final_relative_residual <= tolerance {
            Verdict::Inconclusive
        } else {
            Verdict::Fail
        }
    }

    /// `level,t,lhs_i..,drift_i..,integral_i..,second_order_i..,jumps_i..,residual_i..`.
    pub fn to_csv(&self) -> String {
        let q = self.rows.first().and_then(|r| r.first()).map_or(0, |r| r.lhs.len());
        let mut out = String::from("level,t");
        for name in ["lhs", "drift", "integral", "second_order", "jumps", "residual"] {
            for c in 1..=q {
                out.push_str(&format!(",{name}_{c}"));
            }
        }
        out.push('\n');
        for level_rows in &self.rows {
            for r in level_rows {
                out.push_str(&format!("{},{:.16e}", r.level, r.t));
                for v in [&r.lhs, &r.drift, &r.integral, &r.second_order, &r.jumps, &r.residual] {
                    for x in v.iter() {
                        out.push_str(&format!(",{x:.16e}"));
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Run [`ito_rhs`] on every level with the level's own discrete tensor QV.
pub fn ito_report(
    f: &SmoothFunction,
    a: Option<&FvPath>,
    x: &CadlagPath,
    seq: &PartitionSequence,
    times: &[f64],
    window: usize,
) -> Result<ItoReport> {
    let times = reporting_grid(times, x.horizon())?;
    let d = x.dim();
    let rows: Vec<Vec<ItoRow>> = seq
        .levels()
        .par_iter()
        .zip(seq.labels().par_iter())
        .map(|(pi, &label)| {
            let qv = discrete_qv_path(&BilinearForm::outer(d), x, x, pi, &times)?;
            ito_rhs(f, a, x, &qv, pi, label, &times)
        })
        .collect::<Result<_>>()?;
    let residuals: Vec<Vec<f64>> =
        (0..times.len()).map(|i| rows.iter().map(|r| r[i].residual_norm).collect()).collect();
    let last = rows.last().ok_or_else(|| Error::Invalid("empty partition sequence".into()))?;
    let lhs_norms: Vec<f64> = last.iter().map(|r| norm2(&r.lhs)).collect();
    let final_relative_residual =
        last.iter().map(|r| r.residual_norm / (1.0 + norm2(&r.lhs))).fold(0.0, f64::max);
    let max_relative_residual = rows
        .iter()
        .flatten()
        .map(|r| r.residual_norm / (1.0 + norm2(&r.lhs)))
        .fold(0.0, f64::max);
    let tail_nonincreasing = residuals.iter().all(|seq_r| {
        let n = seq_r.len();
        n >= window && seq_r[n - window..].windows(2).all(|w| w[1] <= w[0])
    });
    Ok(ItoReport {
        function: f.description().to_string(),
        levels: seq.labels().to_vec(),
        times,
        rows,
        residuals,
        lhs_norms,
        final_relative_residual,
        max_relative_residual,
        tail_nonincreasing,
        window,
    })
}

/// `Z_t = f(t, X_t)` sampled on `grid` (plus 0 and `T`), jumps exact from
/// one-sided limits at the jump times of `X` and of `f`.
pub fn composite(fp: &PathFunctional, x: &CadlagPath, grid: &[f64]) -> Result<CadlagPath> {
    check_dim(fp.d(), x.dim())?;
    let horizon = x.horizon();
    let jumps = union_jump_times(x, fp);
    let mut extra: Vec<f64> = fp.time_grid().into_iter().filter(|&t| t <= horizon).collect();
    extra.extend(grid.iter().copied().filter(|&t| (0.0..=horizon).contains(&t)));
    extra.extend(jumps.iter().copied());
    extra.push(0.0);
    extra.push(horizon);
    extra.sort_by(f64::total_cmp);
    let full = merge_sorted(x.grid(), extra.into_iter());
    composite_path(
        fp.q(),
        full,
        &jumps,
        |t| fp.eval(t, &x.value(t)),
        |t| if t > 0.0 { fp.eval_left(t, &x.left(t)) } else { fp.eval(0.0, &x.value(0.0)) },
    )
}

/// QV of `t -> f(t, X_t)` computed directly from the composite path.
pub fn c1_qv_direct(
    fp: &PathFunctional,
    x: &CadlagPath,
    seq: &PartitionSequence,
    reporting_times: &[f64],
    options: QvOptions,
) -> Result<(QvPath, ConvergenceEstimate)> {
    let finest = seq.levels().last().ok_or_else(|| Error::Invalid("empty partition sequence".into()))?;
    let mut grid = finest.points();
    grid.extend_from_slice(reporting_times);
    let z = composite(fp, x, &grid)?;
    qv_limit(&BilinearForm::outer(fp.q()), &z, &z, seq, reporting_times, options)
}

/// `int D_x f(s-, X_{s-})^{(x)2} d[X,X]^c + sum Delta f(s, X_s)^{(x)2}` on the
/// reporting grid of `qv` (the tensor QV of `X`). The integral is a
/// left-endpoint sum over that grid, so `qv` must be sampled at least as
/// finely as the partition of interest.
pub fn c1_qv_formula(fp: &PathFunctional, x: &CadlagPath, qv: &QvPath) -> Result<QvPath> {
    let d = x.dim();
    check_dim(fp.d(), d)?;
    check_dim(d * d, qv.dim())?;
    let q = fp.q();
    let times = qv.times().to_vec();
    let xg = x.values_at_sorted(&times);
    let cont = qv.continuous_values();
    let m = d * d;
    let mut jumps: Vec<Jump> = Vec::new();
    for s in union_jump_times(x, fp) {
        let (xs, xl) = (x.value(s), x.left(s));
        let df: Vec<f64> = fp.eval(s, &xs).iter().zip(fp.eval_left(s, &xl)).map(|(a, b)| a - b).collect();
        let mut o = vec![0.0; q * q];
        outer_acc(&df, &mut o);
        jumps.push(Jump::new(s, o));
    }
    let mut values = vec![0.0; times.len() * q * q];
    let mut acc = vec![0.0; q * q];
    let mut dq = vec![0.0; m];
    let mut j = 0;
    let mut jump_acc = vec![0.0; q * q];
    for i in 0..times.len() {
        if i > 0 {
            for c in 0..m {
                dq[c] = cont[i * m + c] - cont[(i - 1) * m + c];
            }
            let dm = fp.dx(times[i - 1], &xg[(i - 1) * d..i * d]);
            sandwich_acc(&dm, q, &dq, &mut acc);
        }
        while j < jumps.len() && jumps[j].time <= times[i] {
            for (a, b) in jump_acc.iter_mut().zip(&jumps[j].delta) {
                *a += b;
            }
            j += 1;
        }
        for c in 0..q * q {
            values[i * q * q + c] = acc[c] + jump_acc[c];
        }
    }
    QvPath::new((q, q), times, values, jumps)
}

/// Level-by-level comparison of the direct QV of `f(t, X_t)` with the formula
/// evaluated on the same level's discrete QV of `X`.
#[derive(Debug, Clone, Serialize)]
pub struct C1Comparison {
    pub levels: Vec<u32>,
    pub times: Vec<f64>,
    /// `max_t |direct - formula| / max_t |formula|` per level (Frobenius).
    pub relative_gaps: Vec<f64>,
    pub direct_last: Vec<f64>,
    pub formula_last: Vec<f64>,
}

fn relative_gap(direct: &[f64], formula: &[f64], m: usize) -> f64 {
    let num = direct
        .chunks(m)
        .zip(formula.chunks(m))
        .map(|(a, b)| norm2(&a.iter().zip(b).map(|(u, v)| u - v).collect::<Vec<_>>()))
        .fold(0.0, f64::max);
    let den = formula.chunks(m).map(norm2).fold(0.0, f64::max);
    if num == 0.0 {
        0.0
    } else {
        num / den.max(f64::MIN_POSITIVE)
    }
}

pub fn c1_level_gaps(
    fp: &PathFunctional,
    x: &CadlagPath,
    seq: &PartitionSequence,
    reporting_times: &[f64],
) -> Result<C1Comparison> {
    let times = reporting_grid(reporting_times, x.horizon())?;
    let finest = seq.levels().last().ok_or_else(|| Error::Invalid("empty partition sequence".into()))?;
    let mut grid = finest.points();
    grid.extend_from_slice(&times);
    let z = composite(fp, x, &grid)?;
    let q = fp.q();
    let d = x.dim();
    let per_level: Vec<(Vec<f64>, Vec<f64>)> = seq
        .levels()
        .par_iter()
        .map(|pi| {
            let direct = discrete_qv_at(&BilinearForm::outer(q), &z, &z, pi, &times)?;
            let qv = discrete_qv_path(&BilinearForm::outer(d), x, x, pi, &times)?;
            let formula = c1_qv_formula(fp, x, &qv)?;
            let f_at: Vec<f64> =
                times.iter().map(|&t| formula.value_at(t)).collect::<Result<Vec<_>>>()?.concat();
            Ok((direct, f_at))
        })
        .collect::<Result<_>>()?;
    let relative_gaps = per_level.iter().map(|(a, b)| relative_gap(a, b, q * q)).collect();
    let (direct_last, formula_last) = per_level.last().cloned().unwrap();
    Ok(C1Comparison { levels: seq.labels().to_vec(), times, relative_gaps, direct_last, formula_last })
}

const GL16_NODES: [f64; 8] = [
    0.095_012_509_837_637_44,
    0.281_603_550_779_258_9,
    0.458_016_777_657_227_4,
    0.617_876_244_402_643_7,
    0.755_404_408_355_003,
    0.865_631_202_387_831_8,
    0.944_575_023_073_232_6,
    0.989_400_934_991_649_9,
];
const GL16_WEIGHTS: [f64; 8] = [
    0.189_450_610_455_068_5,
    0.182_603_415_044_923_6,
    0.169_156_519_395_002_5,
    0.149_595_988_816_576_7,
    0.124_628_971_255_533_9,
    0.095_158_511_682_492_8,
    0.062_253_523_938_647_9,
    0.027_152_459_411_754_1,
];

/// `int_0^1 g(theta) d theta` by 16-point Gauss-Legendre.
pub fn gauss_legendre_16(mut g: impl FnMut(f64) -> Vec<f64>) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for (&x, &w) in GL16_NODES.iter().zip(&GL16_WEIGHTS) {
        for theta in [0.5 * (1.0 - x), 0.5 * (1.0 + x)] {
            let v = g(theta);
            if out.is_empty() {
                out = vec![0.0; v.len()];
            }
            for (o, y) in out.iter_mut().zip(v) {
                *o += 0.5 * w * y;
            }
        }
    }
    out
}

/// `R_t(I) = int_0^1 {D_x f(r^t, X_{r^t} + theta dX) - D_x f(r^t, X_{r^t})} dX d theta`
/// for the piece `]r, s]`, with `dX = X_{s^t} - X_{r^t}`.
pub fn taylor_remainder(fp: &PathFunctional, x: &CadlagPath, piece: (f64, f64), t: f64) -> Result<Vec<f64>> {
    check_dim(fp.d(), x.dim())?;
    let (r, s) = piece;
    let horizon = x.horizon();
    if !(0.0 <= r && r < s && s <= horizon && (0.0..=horizon).contains(&t)) {
        return Err(Error::Domain(format!("invalid piece ]{r}, {s}] or time {t}")));
    }
    let q = fp.q();
    let (rt, st) = (r.min(t), s.min(t));
    let xr = x.value(rt);
    let dxv: Vec<f64> = x.value(st).iter().zip(&xr).map(|(a, b)| a - b).collect();
    if dxv.iter().all(|&v| v == 0.0) {
        return Ok(vec![0.0; q]);
    }
    let base = fp.dx(rt, &xr);
    Ok(gauss_legendre_16(|theta| {
        let xs: Vec<f64> = xr.iter().zip(&dxv).map(|(a, b)| a + theta * b).collect();
        let diff: Vec<f64> = fp.dx(rt, &xs).iter().zip(&base).map(|(a, b)| a - b).collect();
        let mut o = vec![0.0; q];
        mat_vec_acc(&diff, q, &dxv, &mut o);
        o
    }))
}

/// `sum_I |R_t(I)|^2` over the pieces of `pi`.
pub fn taylor_remainder_energy(fp: &PathFunctional, x: &CadlagPath, pi: &Partition, t: f64) -> Result<f64> {
    let mut total = 0.0;
    for piece in pi.intervals() {
        if piece.0 >= t {
            break;
        }
        total += taylor_remainder(fp, x, piece, t)?.iter().map(|v| v * v).sum::<f64>();
    }
    Ok(total)
}

/// `C^1` transformation of a QV with `f(t, x) = g(A_t, x)`.
#[derive(Debug, Clone, Serialize)]
pub struct C1SmoothReport {
    pub formula: QvPath,
    pub direct: QvPath,
    pub estimate: ConvergenceEstimate,
    /// `max_t |direct - formula| / max_t |formula|` at the reporting times.
    pub relative_gap: f64,
}

pub fn c1_smooth_transform(
    f: &SmoothFunction,
    a: Option<&FvPath>,
    x: &CadlagPath,
    qv: &QvPath,
    seq: &PartitionSequence,
    reporting_times: &[f64],
    options: QvOptions,
) -> Result<C1SmoothReport> {
    let fp = PathFunctional::new(f.clone(), a.map(|p| p.path().clone()))?;
    let formula = c1_qv_formula(&fp, x, qv)?;
    let (direct, estimate) = c1_qv_direct(&fp, x, seq, reporting_times, options)?;
    let m = fp.q() * fp.q();
    let at = |p: &QvPath| -> Result<Vec<f64>> {
        Ok(direct.times().iter().map(|&t| p.value_at(t)).collect::<Result<Vec<_>>>()?.concat())
    };
    let relative_gap = relative_gap(&at(&direct)?, &at(&formula)?, m);
    Ok(C1SmoothReport { formula, direct, estimate, relative_gap })
}

/// Both sides of `[Y, Y] = int D_x f(A_{s-}, X_{s-})^{(x)2} d[X, X]` for the
/// integral path `Y = int D_x f(A_{s-}, X_{s-}) dX`.
#[derive(Debug, Clone, Serialize)]
pub struct IntegralQvReport {
    pub lhs: QvPath,
    pub lhs_estimate: ConvergenceEstimate,
    pub rhs: QvPath,
    /// `max_t |lhs - rhs| / max_t |rhs|` at the reporting times.
    pub relative_gap: f64,
}

pub fn integral_qv(
    f: &SmoothFunction,
    a: Option<&FvPath>,
    x: &CadlagPath,
    seq: &PartitionSequence,
    reporting_times: &[f64],
    options: QvOptions,
) -> Result<IntegralQvReport> {
    let fp = PathFunctional::new(f.clone(), a.map(|p| p.path().clone()))?;
    let d = x.dim();
    check_dim(fp.d(), d)?;
    let q = fp.q();
    let times = reporting_grid(reporting_times, x.horizon())?;

    // [Y_n, Y_n] along pi_n, Y_n the level's left Riemann-sum path
    let rows: Vec<Vec<f64>> = seq
        .levels()
        .par_iter()
        .map(|pi| {
            check_horizons(x, pi)?;
            let mut cache: Option<(usize, Vec<f64>)> = None;
            let mut dy = vec![0.0; q];
            Ok(piece_sweep(x, pi, &times, q * q, |k, r, xr, inc, acc| {
                if cache.as_ref().map(|c| c.0) != Some(k) {
                    cache = Some((k, fp.dx(r, xr)));
                }
                dy.iter_mut().for_each(|v| *v = 0.0);
                mat_vec_acc(&cache.as_ref().unwrap().1, q, inc, &mut dy);
                outer_acc(&dy, acc);
            }))
        })
        .collect::<Result<_>>()?;
    let lhs_estimate = ConvergenceEstimate::from_levels(seq, times.clone(), (q, q), &rows, options)?;
    let y_jumps: Vec<Jump> = x
        .jumps()
        .iter()
        .map(|j| {
            let mut dy = vec![0.0; q];
            mat_vec_acc(&fp.dx_left(j.time, &x.left(j.time)), q, &j.delta, &mut dy);
            let mut o = vec![0.0; q * q];
            outer_acc(&dy, &mut o);
            Jump::new(j.time, o)
        })
        .collect();
    let lhs = QvPath::new((q, q), times.clone(), lhs_estimate.limit.concat(), y_jumps)?;

    // right side against the full tensor QV of X on a fine reporting grid
    let finest = seq.levels().last().unwrap();
    let mut grid = finest.points();
    grid.extend_from_slice(&times);
    let (qv, _) = qv_limit(&BilinearForm::outer(d), x, x, seq, &grid, options)?;
    let qv_times = qv.times().to_vec();
    let xg = x.values_at_sorted(&qv_times);
    let index_of = |s: f64| qv_times.binary_search_by(|g| g.total_cmp(&s)).ok();
    let mut values = Vec::with_capacity(times.len() * q * q);
    for &t in &times {
        let v = stieltjes_qv(&qv, t, q * q, true, true, |s, left, dq, out| {
            let dm = if left && s > 0.0 {
                fp.dx_left(s, &x.left(s))
            } else {
                match index_of(s) {
                    Some(i) => fp.dx(s, &xg[i * d..(i + 1) * d]),
                    None => fp.dx(s, &x.value(s)),
                }
            };
            sandwich_acc(&dm, q, dq, out);
        });
        values.extend(v);
    }
    let rhs_jumps = lhs.jumps().to_vec();
    let rhs = QvPath::new((q, q), times, values, rhs_jumps)?;
    let gap = relative_gap(lhs.values(), rhs.values(), q * q);
    Ok(IntegralQvReport { lhs, lhs_estimate, rhs, relative_gap: gap })
}

/// `f(A_t, X_t) - f(A_0, X_0) = Y_t + C_t + D_t` on one partition.
#[derive(Debug, Clone, Serialize)]
pub struct Decomposition {
    pub level: u32,
    pub times: Vec<f64>,
    /// Ito-Foellmer integral path; jumps `D_x f(r) dX_s` of the level sum.
    #[serde(skip)]
    pub y: CadlagPath,
    /// Continuous finite-variation part (no jumps).
    #[serde(skip)]
    pub c: FvPath,
    /// Pure-jump finite-variation part.
    #[serde(skip)]
    pub d: FvPath,
    /// Rows: `(t, lhs, y, c, d)` flattened per time.
    pub lhs: Vec<Vec<f64>>,
    pub y_values: Vec<Vec<f64>>,
    pub c_values: Vec<Vec<f64>>,
    pub d_values: Vec<Vec<f64>>,
    /// `|Y + C + D - lhs|` per time.
    pub reconstruction_error: Vec<f64>,
    /// Ito residual norm per time on the same level.
    pub ito_residual: Vec<f64>,
    /// `max(reconstruction_error - ito_residual)`.
    pub max_excess: f64,
}

impl Decomposition {
    /// `t,lhs_i..,y_i..,c_i..,d_i..,reconstruction_error,ito_residual`.
    pub fn to_csv(&self) -> String {
        let q = self.lhs.first().map_or(0, Vec::len);
        let mut out = String::from("t");
        for name in ["lhs", "y", "c", "d"] {
            for c in 1..=q {
                out.push_str(&format!(",{name}_{c}"));
            }
        }
        out.push_str(",reconstruction_error,ito_residual\n");
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t:.16e}"));
            for v in [&self.lhs[i], &self.y_values[i], &self.c_values[i], &self.d_values[i]] {
                for x in v {
                    out.push_str(&format!(",{x:.16e}"));
                }
            }
            out.push_str(&format!(",{:.16e},{:.16e}\n", self.reconstruction_error[i], self.ito_residual[i]));
        }
        out
    }
}

/// Decomposition on the partition `pi` (labelled `level`) at reporting times.
pub fn rough_fv_decompose(
    f: &SmoothFunction,
    a: Option<&FvPath>,
    x: &CadlagPath,
    pi: &Partition,
    level: u32,
    reporting_times: &[f64],
) -> Result<Decomposition> {
    let d = x.dim();
    let q = f.q();
    let times = reporting_grid(reporting_times, x.horizon())?;
    let qv = discrete_qv_path(&BilinearForm::outer(d), x, x, pi, &times)?;
    let grid = qv.times().to_vec();
    let rows = ito_rhs(f, a, x, &qv, pi, level, &grid)?;
    let fp = PathFunctional::new(f.clone(), a.map(|p| p.path().clone()))?;

    // C on the fine grid, D from the jump corrections, Y from the level sum
    let mut c_samples = Vec::with_capacity(grid.len() * q);
    for r in &rows {
        c_samples.extend(r.drift.iter().zip(&r.second_order).map(|(u, v)| u + v));
    }
    let c = FvPath::new(CadlagPath::linear(q, grid.clone(), c_samples)?);
    let mut d_jumps: Vec<Jump> = Vec::new();
    for s in union_jump_times(x, &fp) {
        let (xs, xl) = (x.value(s), x.left(s));
        let fs = fp.eval(s, &xs);
        let fl = fp.eval_left(s, &xl);
        let dxs: Vec<f64> = xs.iter().zip(&xl).map(|(u, v)| u - v).collect();
        let mut lin = vec![0.0; q];
        mat_vec_acc(&fp.dx_left(s, &xl), q, &dxs, &mut lin);
        let delta: Vec<f64> = (0..q).map(|k| (fs[k] - fl[k]) - lin[k]).collect();
        if delta.iter().any(|&v| v != 0.0) {
            d_jumps.push(Jump::new(s, delta));
        }
    }
    let dpath = FvPath::new(CadlagPath::pure_jump(q, x.horizon(), &vec![0.0; q], d_jumps)?);

    // the level sum jumps by D_x f(r) dX_s inside the piece ]r, u] holding s
    let y_jumps: Vec<Jump> = x
        .jumps()
        .iter()
        .map(|j| {
            let piece = pi.locate(j.time)?;
            let mut dy = vec![0.0; q];
            mat_vec_acc(&fp.dx(piece.lower, &x.value(piece.lower)), q, &j.delta, &mut dy);
            Ok(Jump::new(j.time, dy))
        })
        .collect::<Result<_>>()?;
    let mut samples = Vec::with_capacity(grid.len() * q);
    let mut acc = vec![0.0; q];
    let mut k = 0;
    for (row, &t) in rows.iter().zip(&grid) {
        while k < y_jumps.len() && y_jumps[k].time <= t {
            for (u, v) in acc.iter_mut().zip(&y_jumps[k].delta) {
                *u += v;
            }
            k += 1;
        }
        samples.extend(row.integral.iter().zip(&acc).map(|(u, v)| u - v));
    }
    let y = CadlagPath::new(q, grid.clone(), samples, y_jumps, Interp::PiecewiseLinear)?;

    let mut out_lhs = Vec::new();
    let mut yv = Vec::new();
    let mut cv = Vec::new();
    let mut dv = Vec::new();
    let mut rec = Vec::new();
    let mut ito = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    for &t in &times {
        let i = grid.binary_search_by(|g| g.total_cmp(&t)).expect("reporting time on grid");
        let row = &rows[i];
        let (y_t, c_t, d_t) = (row.integral.clone(), c.value(t), dpath.value(t));
        let err: Vec<f64> = (0..q).map(|k| y_t[k] + c_t[k] + d_t[k] - row.lhs[k]).collect();
        let e = norm2(&err);
        let scale = 1.0 + norm2(&row.lhs);
        max_excess = max_excess.max(e - row.residual_norm - 1e-12 * scale);
        out_lhs.push(row.lhs.clone());
        yv.push(y_t);
        cv.push(c_t);
        dv.push(d_t);
        rec.push(e);
        ito.push(row.residual_norm);
    }
    Ok(Decomposition {
        level,
        times,
        y,
        c,
        d: dpath,
        lhs: out_lhs,
        y_values: yv,
        c_values: cv,
        d_values: dv,
        reconstruction_error: rec,
        ito_residual: ito,
        max_excess,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{JumpSpec, PathRecipe, RecipeKind};

    fn walk(level: u32, seed: u64) -> CadlagPath {
        let kind = RecipeKind::ScaledRandomWalk { level, sigma: vec![vec![1.0, 0.0], vec![0.3, 0.8]] };
        PathRecipe::new(kind, seed, 1.0).generate().unwrap()
    }

    fn jump_diffusion(level: u32, seed: u64) -> CadlagPath {
        let kind = RecipeKind::JumpDiffusion {
            level,
            sigma: vec![vec![0.7]],
            jumps: vec![
                JumpSpec { time: 0.3, delta: vec![0.5] },
                JumpSpec { time: 0.625, delta: vec![-0.8] },
            ],
        };
        PathRecipe::new(kind, seed, 1.0).generate().unwrap()
    }

    fn two_jumps() -> CadlagPath {
        CadlagPath::pure_jump(1, 1.0, &[1.0], vec![Jump::new(0.3, vec![1.0]), Jump::new(0.7, vec![2.0])]).unwrap()
    }

    #[test]
    fn follmer_hand_example() {
        let x = CadlagPath::linear(1, vec![0.0, 0.5, 1.0], vec![0.0, 1.0, 3.0]).unwrap();
        let fp = PathFunctional::time_independent(SmoothFunction::norm_sq(1).unwrap()).unwrap();
        let pi = Partition::uniform(1.0, 2).unwrap();
        let v = follmer_integral(Integrand::Gradient(&fp), &x, &pi, 1.0).unwrap();
        assert_eq!(v, vec![4.0]);
        assert_eq!(follmer_integral(Integrand::Gradient(&fp), &x, &pi, 0.0).unwrap(), vec![0.0]);
    }

    #[test]
    fn constant_integrand_telescopes() {
        let x = walk(8, 3);
        let c = CadlagPath::linear(2, vec![0.0, 1.0], vec![1.5, -2.0, 1.5, -2.0]).unwrap();
        let times = [0.1, 0.37, 1.0];
        for n in [1u64, 7, 256] {
            let pi = Partition::uniform(1.0, n).unwrap();
            let v = follmer_integral_at(Integrand::Path { xi: &c, rows: 1 }, &x, &pi, &times).unwrap();
            for (i, &t) in times.iter().enumerate() {
                let (xt, x0) = (x.value(t), x.value(0.0));
                let expect = 1.5 * (xt[0] - x0[0]) - 2.0 * (xt[1] - x0[1]);
                assert!((v[i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn discrete_integration_by_parts() {
        let x = jump_diffusion(9, 5);
        let fp = PathFunctional::time_independent(SmoothFunction::norm_sq(1).unwrap()).unwrap();
        let times = [0.05, 0.3, 0.4999, 0.8, 1.0];
        for pi in [Partition::uniform(1.0, 13).unwrap(), Partition::uniform(1.0, 512).unwrap()] {
            let lhs = follmer_integral_at(Integrand::Gradient(&fp), &x, &pi, &times).unwrap();
            let qv = crate::qv::discrete_scalar_qv_at(&x, &pi, &times, crate::NormChoice::Euclidean).unwrap();
            for (i, &t) in times.iter().enumerate() {
                let expect = x.value(t)[0].powi(2) - x.value(0.0)[0].powi(2) - qv[i];
                assert!((lhs[i] - expect).abs() < 1e-12, "{} vs {}", lhs[i], expect);
            }
        }
    }

    #[test]
    fn stieltjes_identity_is_bit_exact() {
        let x = jump_diffusion(8, 1);
        let b = BilinearForm::inner(1);
        let seq = PartitionSequence::dyadic_range(1.0, 4, 8).unwrap();
        let (qv, _) = qv_limit(&b, &x, &x, &seq, &[0.6], QvOptions::default()).unwrap();
        let id = CadlagPath::linear(1, vec![0.0, 1.0], vec![1.0, 1.0]).unwrap();
        let rep = stieltjes_sum_limit(&id, 1, &b, &x, &qv, &seq, 0.6, QvOptions::default()).unwrap();
        for (k, pi) in seq.levels().iter().enumerate() {
            let direct = crate::qv::discrete_qv(&b, &x, &x, pi, 0.6).unwrap();
            assert_eq!(rep.per_level[k], direct);
        }
    }

    #[test]
    fn stieltjes_step_uses_left_limit() {
        let x = two_jumps();
        let b = BilinearForm::inner(1);
        let seq = PartitionSequence::dyadic_range(1.0, 3, 8).unwrap();
        let (qv, _) = qv_limit(&b, &x, &x, &seq, &[], QvOptions::default()).unwrap();
        let xi = CadlagPath::pure_jump(1, 1.0, &[1.0], vec![Jump::new(0.7, vec![4.0])]).unwrap();
        let rep = stieltjes_sum_limit(&xi, 1, &b, &x, &qv, &seq, 1.0, QvOptions::default()).unwrap();
        // 1 * 1^2 + xi(0.7-) * 2^2
        assert_eq!(rep.target, vec![5.0]);
        assert!(rep.gaps.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn ito_norm_sq_is_exact_per_level() {
        let x = jump_diffusion(10, 2);
        let f = SmoothFunction::norm_sq(1).unwrap();
        let seq = PartitionSequence::dyadic_range(1.0, 3, 10).unwrap();
        let rep = ito_report(&f, None, &x, &seq, &[0.25, 0.3, 0.5, 0.7], 4).unwrap();
        assert!(rep.max_relative_residual <= 1e-12, "{}", rep.max_relative_residual);
        assert_eq!(rep.verdict(1e-3), Verdict::Pass);
        for row in rep.rows.iter().flatten() {
            let sum: Vec<f64> = (0..1).map(|c| row.drift[c] + row.integral[c] + row.second_order[c] + row.jumps[c]).collect();
            assert_eq!(sum, row.rhs);
        }
        assert!(rep.to_csv().starts_with("level,t,lhs_1,drift_1"));
    }

    #[test]
    fn ito_linear_is_follmer_alone() {
        let x = walk(8, 4);
        let f = SmoothFunction::linear(vec![2.0, -1.0], 1, 2).unwrap();
        let seq = PartitionSequence::dyadic_range(1.0, 2, 8).unwrap();
        let rep = ito_report(&f, None, &x, &seq, &[0.5], 3).unwrap();
        for row in rep.rows.iter().flatten() {
            assert_eq!(row.second_order, vec![0.0]);
            assert_eq!(row.jumps, vec![0.0]);
            assert!(row.residual_norm < 1e-12);
        }
    }

    #[test]
    fn ito_with_parameter_path() {
        let x = walk(12, 6);
        let a_kind = RecipeKind::SmoothFv {
            level: 12,
            poly: vec![vec![1.0, 0.5], vec![0.0, 0.0, 2.0]],
            sines: vec![],
        };
        let a = FvPath::new(PathRecipe::new(a_kind, 0, 1.0).generate().unwrap());
        let f = SmoothFunction::bilinear_ax(2).unwrap();
        let seq = PartitionSequence::dyadic_range(1.0, 4, 12).unwrap();
        let rep = ito_report(&f, Some(&a), &x, &seq, &[0.5, 1.0], 4).unwrap();
        let first = rep.residuals[2][0];
        let last = *rep.residuals[2].last().unwrap();
        assert!(last < first * 0.05, "{first} -> {last}");
        assert!(rep.final_relative_residual < 1e-3);
    }

    #[test]
    fn c1_formula_pure_jump_square() {
        let x = two_jumps();
        let fp = PathFunctional::time_independent(SmoothFunction::custom_poly(vec![vec![0.0, 0.0, 1.0]]).unwrap()).unwrap();
        let seq = PartitionSequence::dyadic_range(1.0, 2, 6).unwrap();
        let (qv, _) = qv_limit(&BilinearForm::outer(1), &x, &x, &seq, &[], QvOptions::default()).unwrap();
        let formula = c1_qv_formula(&fp, &x, &qv).unwrap();
        // X: 1 -> 2 at 0.3, 2 -> 4 at 0.7
        let expect = (4.0f64 - 1.0).powi(2) + (16.0f64 - 4.0).powi(2);
        assert_eq!(formula.value_at(1.0).unwrap(), vec![expect]);
        let (direct, _) = c1_qv_direct(&fp, &x, &seq, &[1.0], QvOptions::default()).unwrap();
        assert_eq!(direct.value_at(1.0).unwrap(), vec![expect]);
    }

    #[test]
    fn c1_linear_sandwich() {
        let x = walk(8, 9);
        let m = vec![1.0, 2.0, 0.0, -1.0, 0.5, 0.5];
        let fp = PathFunctional::time_independent(SmoothFunction::linear(m.clone(), 3, 2).unwrap()).unwrap();
        let seq = PartitionSequence::dyadic_range(1.0, 4, 8).unwrap();
        let (qv, _) = qv_limit(&BilinearForm::outer(2), &x, &x, &seq, &[0.5], QvOptions::default()).unwrap();
        let formula = c1_qv_formula(&fp, &x, &qv).unwrap();
        let q = qv.value_at(1.0).unwrap();
        let mut expect = vec![0.0; 9];
        sandwich_acc(&m, 3, &q, &mut expect);
        let got = formula.value_at(1.0).unwrap();
        for (a, b) in got.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let gaps = c1_level_gaps(&fp, &x, &seq, &[0.5]).unwrap();
        assert!(gaps.relative_gaps.iter().all(|&g| g < 1e-12));
    }

    #[test]
    fn c1_smooth_step_parameter() {
        // f(a, x) = a x, A = 1 then 3 from 0.5, X(t) = t continuous
        let a = FvPath::new(CadlagPath::pure_jump(1, 1.0, &[1.0], vec![Jump::new(0.5, vec![2.0])]).unwrap());
        let x = CadlagPath::linear(1, vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        let f = SmoothFunction::bilinear_ax(1).unwrap();
        let seq = PartitionSequence::dyadic_range(1.0, 3, 10).unwrap();
        let opts = QvOptions { richardson: true, ..QvOptions::default() };
        let (qv, _) = qv_limit(&BilinearForm::outer(1), &x, &x, &seq, &[], opts).unwrap();
        let rep = c1_smooth_transform(&f, Some(&a), &x, &qv, &seq, &[0.25, 0.75], opts).unwrap();
        // [X, X] = 0, so only (Delta A * X_s)^2 = (2 * 0.5)^2 survives
        assert!((rep.formula.value_at(1.0).unwrap()[0] - 1.0).abs() < 1e-12);
        assert!((rep.direct.value_at(1.0).unwrap()[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn taylor_remainder_cases() {
        let x = walk(6, 1);
        let sq = PathFunctional::time_independent(SmoothFunction::custom_poly(vec![vec![0.0, 0.0, 1.0], vec![0.0; 1]]).unwrap()).unwrap();
        let (r, s) = (0.25, 0.5);
        let dx = x.value(s)[0] - x.value(r)[0];
        let rem = taylor_remainder(&sq, &x, (r, s), 1.0).unwrap();
        assert!((rem[0] - dx * dx).abs() < 1e-14);
        let lin = PathFunctional::time_independent(SmoothFunction::linear(vec![1.0, 3.0], 1, 2).unwrap()).unwrap();
        assert_eq!(taylor_remainder(&lin, &x, (r, s), 1.0).unwrap(), vec![0.0]);
        assert_eq!(taylor_remainder(&sq, &x, (r, s), 0.2).unwrap(), vec![0.0]);
        for k in 0..=20 {
            let v = gauss_legendre_16(|t| vec![t.powi(k)]);
            assert!((v[0] - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "{k}");
        }
        let e8 = taylor_remainder_energy(&sq, &x, &Partition::uniform(1.0, 8).unwrap(), 1.0).unwrap();
        assert!(e8 > 0.0);
    }

    #[test]
    fn integral_qv_identity() {
        let x = jump_diffusion(8, 3);
        let f = SmoothFunction::linear(vec![1.0], 1, 1).unwrap();
        let seq = PartitionSequence::dyadic_range(1.0, 4, 8).unwrap();
        let rep = integral_qv(&f, None, &x, &seq, &[0.5], QvOptions::default()).unwrap();
        assert!(rep.relative_gap < 1e-12, "{}", rep.relative_gap);
    }

    #[test]
    fn decomposition_pure_jump_square() {
        let x = two_jumps();
        let f = SmoothFunction::norm_sq(1).unwrap();
        let pi = Partition::uniform(1.0, 16).unwrap();
        let dec = rough_fv_decompose(&f, None, &x, &pi, 4, &[0.5, 1.0]).unwrap();
        let last = dec.times.len() - 1;
        assert_eq!(dec.c_values[last], vec![0.0]);
        assert_eq!(dec.d_values[last], vec![1.0 + 4.0]);
        assert!(dec.d.jumps().iter().all(|j| j.delta[0] > 0.0));
        assert!(dec.c.jumps().is_empty());
        assert!(dec.max_excess <= 0.0);
        assert!(dec.to_csv().lines().count() == dec.times.len() + 1);
    }

    #[test]
    fn decomposition_identity() {
        let x = walk(8, 2);
        let f = SmoothFunction::linear(vec![1.0, 0.0, 0.0, 1.0], 2, 2).unwrap();
        let pi = Partition::uniform(1.0, 64).unwrap();
        let dec = rough_fv_decompose(&f, None, &x, &pi, 6, &[0.5]).unwrap();
        for (i, &t) in dec.times.iter().enumerate() {
            assert!(dec.c_values[i].iter().chain(&dec.d_values[i]).all(|&v| v == 0.0));
            let (xt, x0) = (x.value(t), x.value(0.0));
            for c in 0..2 {
                assert!((dec.y_values[i][c] - (xt[c] - x0[c])).abs() < 1e-12);
            }
        }
    }
}
