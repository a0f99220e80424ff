//! Transformations of quadratic variations: linear pushforwards, pairs of
//! linear maps, cylindrical and trace projections, restarted sums, the
//! absolute-continuity bound and scalar-QV densities.

use serde::Serialize;

use crate::bilinear::{linear_map_norm, BilinearForm, BilinearKind};
use crate::error::{check_dim, Error, Result};
use crate::norm::{CrossnormChoice, NormChoice};
use crate::partition::{Partition, PartitionSequence};
use crate::path::CadlagPath;
use crate::qv::{discrete_qv, discrete_qv_at, qv_limit, reporting_grid, ConvergenceEstimate, QvOptions, QvPath, SumAcc};

/// Norm of a QV value: the crossnorm for square matrices, Euclidean otherwise.
pub fn value_norm(v: &[f64], shape: (usize, usize), crossnorm: CrossnormChoice) -> f64 {
    if shape.0 > 1 && shape.1 > 1 {
        crossnorm.matrix_norm(v, shape.0, shape.1)
    } else {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Total variation of a QV path on `[0, t]` under [`value_norm`]: continuous
/// increments over the reporting grid plus the jumps.
pub fn qv_variation(qv: &QvPath, t: f64, crossnorm: CrossnormChoice) -> f64 {
    let m = qv.dim();
    let shape = qv.shape();
    let cont = qv.continuous_values();
    let mut v = 0.0;
    let times = qv.times();
    let mut diff = vec![0.0; m];
    for i in 1..times.len() {
        if times[i] > t {
            let w = (t - times[i - 1]) / (times[i] - times[i - 1]);
            if w > 0.0 {
                for k in 0..m {
                    diff[k] = w * (cont[i * m + k] - cont[(i - 1) * m + k]);
                }
                v += value_norm(&diff, shape, crossnorm);
            }
            break;
        }
        for k in 0..m {
            diff[k] = cont[i * m + k] - cont[(i - 1) * m + k];
        }
        v += value_norm(&diff, shape, crossnorm);
    }
    for j in qv.jumps().iter().take_while(|j| j.time <= t) {
        v += value_norm(&j.delta, shape, crossnorm);
    }
    v
}

/// `T o Q_B` for a row-major `k x m` map `T`, where `k = out_shape.0 * out_shape.1`.
/// Fails if the output violates `V(T o Q) <= |T| V(Q)`.
pub fn push_linear(t_map: &[f64], out_shape: (usize, usize), qv: &QvPath) -> Result<QvPath> {
    let m = qv.dim();
    let k = out_shape.0 * out_shape.1;
    check_dim(k * m, t_map.len())?;
    let out = qv.map_values(out_shape, |v| {
        (0..k).map(|r| (0..m).map(|c| t_map[r * m + c] * v[c]).sum()).collect()
    })?;
    // both variations measured with Euclidean norms on the flattened values
    let flat = |q: &QvPath| q.to_fv_path().total_variation(0.0, q.horizon(), NormChoice::Euclidean);
    let (v_out, v_in) = (flat(&out)?, flat(qv)?);
    let bound = linear_map_norm(t_map, k, m) * v_in;
    if v_out > bound * (1.0 + 1e-12) + 1e-300 {
        return Err(Error::Validation(format!("variation bound violated: {v_out} > {bound}")));
    }
    Ok(out)
}

/// Outcome of [`push_pair`].
#[derive(Debug, Clone, Serialize)]
pub struct PairPushReport {
    pub qv: QvPath,
    pub estimate: ConvergenceEstimate,
    /// Largest per-level gap between `Q_{B'}(T1 X, T2 Y)` and `Q_B(X, Y)`,
    /// relative to `1 + |Q_B|`.
    pub max_level_discrepancy: f64,
}

/// `Q_{B'}(T1 X, T2 Y)` with the identity `= Q_B(X, Y)`, `B = B' o (T1 x T2)`,
/// checked on every level at relative tolerance `1e-12`.
#[allow(clippy::too_many_arguments)]
pub fn push_pair(
    t1: &[f64],
    t2: &[f64],
    b_prime: &BilinearForm,
    x: &CadlagPath,
    y: &CadlagPath,
    seq: &PartitionSequence,
    reporting_times: &[f64],
    options: QvOptions,
) -> Result<PairPushReport> {
    let e = b_prime.in_dim();
    let d = x.dim();
    check_dim(d, y.dim())?;
    let tx = x.map_linear(t1, e)?;
    let ty = y.map_linear(t2, e)?;
    let b = b_prime.pull_back(t1, t2, d)?;
    let times = reporting_grid(reporting_times, x.horizon())?;
    let mut worst: f64 = 0.0;
    for pi in seq.levels() {
        let pushed = discrete_qv_at(b_prime, &tx, &ty, pi, &times)?;
        let direct = discrete_qv_at(&b, x, y, pi, &times)?;
        let scale = 1.0 + direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gap = pushed.iter().zip(&direct).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
        worst = worst.max(gap / scale);
    }
    if worst > 1e-12 {
        return Err(Error::Validation(format!("pair pushforward identity off by {worst:e}")));
    }
    let (qv, estimate) = qv_limit(b_prime, &tx, &ty, seq, &times, options)?;
    Ok(PairPushReport { qv, estimate, max_level_discrepancy: worst })
}

fn require_matrix(qv: &QvPath) -> Result<usize> {
    let (r, c) = qv.shape();
    if r != c || r == 0 {
        return Err(Error::Invalid(format!("expected a square matrix-valued QV, got shape {r}x{c}")));
    }
    Ok(r)
}

/// `t -> x*^T [X, Y]_t y*`.
pub fn cylindrical_qv(x_star: &[f64], y_star: &[f64], tensor_qv: &QvPath) -> Result<QvPath> {
    let d = require_matrix(tensor_qv)?;
    check_dim(d, x_star.len())?;
    check_dim(d, y_star.len())?;
    let mut t_map = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            t_map[i * d + j] = x_star[i] * y_star[j];
        }
    }
    push_linear(&t_map, (1, 1), tensor_qv)
}

/// Largest per-level gap between the contracted tensor sums and the scalar
/// sums of `x*X`, `y*Y`, relative to `1 + |value|`.
pub fn cylindrical_level_gap(
    x_star: &[f64],
    y_star: &[f64],
    x: &CadlagPath,
    y: &CadlagPath,
    seq: &PartitionSequence,
    times: &[f64],
) -> Result<f64> {
    let d = x.dim();
    let sx = x.map_linear(x_star, 1)?;
    let sy = y.map_linear(y_star, 1)?;
    let mut worst: f64 = 0.0;
    for pi in seq.levels() {
        let m = discrete_qv_at(&BilinearForm::outer(d), x, y, pi, times)?;
        let s = discrete_qv_at(&BilinearForm::inner(1), &sx, &sy, pi, times)?;
        for (row, sv) in m.chunks(d * d).zip(&s) {
            let mut c = 0.0;
            for i in 0..d {
                for j in 0..d {
                    c += x_star[i] * row[i * d + j] * y_star[j];
                }
            }
            worst = worst.max((c - sv).abs() / (1.0 + sv.abs()));
        }
    }
    Ok(worst)
}

/// `tr [X, X]_t`, the scalar QV in the Hilbertian case.
pub fn trace_qv(tensor_qv: &QvPath, norm: NormChoice) -> Result<QvPath> {
    if norm != NormChoice::Euclidean {
        return Err(Error::Unsupported(format!(
            "the trace formula needs the Euclidean ground norm, got {norm:?}"
        )));
    }
    let d = require_matrix(tensor_qv)?;
    let mut t_map = vec![0.0; d * d];
    for i in 0..d {
        t_map[i * d + i] = 1.0;
    }
    push_linear(&t_map, (1, 1), tensor_qv)
}

/// `sum_{]r,u] in pi} B(X_{(u^t)vs} - X_{(r^t)vs}, same)`.
pub fn restarted_qv(b: &BilinearForm, x: &CadlagPath, pi: &Partition, s: f64, t: f64) -> Result<Vec<f64>> {
    check_dim(b.in_dim(), x.dim())?;
    let horizon = x.horizon();
    if !(0.0 <= s && s <= t && t <= horizon) {
        return Err(Error::Domain(format!("need 0 <= s <= t <= {horizon}, got s = {s}, t = {t}")));
    }
    let d = x.dim();
    let points = pi.points();
    let xv = x.values_at_sorted(&points);
    let xs = x.value(s);
    let xt = x.value(t);
    let at = |k: usize| -> &[f64] {
        let u = points[k];
        if u > t {
            &xt
        } else if u < s {
            &xs
        } else {
            &xv[k * d..(k + 1) * d]
        }
    };
    let mut acc = SumAcc::new(b.out_dim());
    let mut inc = vec![0.0; d];
    for k in 0..points.len() - 1 {
        let (a, c) = (at(k), at(k + 1));
        if points[k] >= t {
            break;
        }
        for i in 0..d {
            inc[i] = c[i] - a[i];
        }
        if points[k + 1] <= s {
            continue;
        }
        acc.add_with(|o| b.accumulate(&inc, &inc, o));
    }
    Ok(acc.total())
}

/// Per-level gap `|restarted - (Q_t - Q_s)|` along a sequence.
pub fn restart_gap(b: &BilinearForm, x: &CadlagPath, seq: &PartitionSequence, s: f64, t: f64) -> Result<Vec<f64>> {
    seq.levels()
        .iter()
        .map(|pi| {
            let r = restarted_qv(b, x, pi, s, t)?;
            let qt = discrete_qv(b, x, x, pi, t)?;
            let qs = discrete_qv(b, x, x, pi, s)?;
            Ok(r.iter()
                .zip(qt.iter().zip(&qs))
                .map(|(a, (p, q))| (a - (p - q)).powi(2))
                .sum::<f64>()
                .sqrt())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbsContinuityRow {
    pub s: f64,
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbsContinuityReport {
    pub crossnorm: CrossnormChoice,
    pub b_norm: f64,
    pub slack: f64,
    pub rows: Vec<AbsContinuityRow>,
    /// `max(lhs - rhs - slack)`; nonpositive when every pair satisfies the bound.
    pub max_violation: f64,
    pub worst_pair: Option<(f64, f64)>,
    pub holds: bool,
}

/// `|Q_B(t) - Q_B(s)| <= |B| (Q(t) - Q(s)) + slack` on the given pairs.
pub fn abs_continuity_check(
    qv_b: &QvPath,
    qv_scalar: &QvPath,
    b_norm: f64,
    crossnorm: CrossnormChoice,
    pairs: &[(f64, f64)],
    slack: f64,
) -> Result<AbsContinuityReport> {
    check_dim(1, qv_scalar.dim())?;
    let shape = qv_b.shape();
    let mut rows = Vec::with_capacity(pairs.len());
    let mut max_violation = f64::NEG_INFINITY;
    let mut worst_pair = None;
    for &(s, t) in pairs {
        if s > t {
            return Err(Error::Domain(format!("pair ({s}, {t}) has s > t")));
        }
        let qb_t = qv_b.value_at(t)?;
        let qb_s = qv_b.value_at(s)?;
        let diff: Vec<f64> = qb_t.iter().zip(&qb_s).map(|(a, b)| a - b).collect();
        let lhs = value_norm(&diff, shape, crossnorm);
        let rhs = b_norm * (qv_scalar.value_at(t)?[0] - qv_scalar.value_at(s)?[0]);
        let v = lhs - rhs - slack;
        if v > max_violation {
            max_violation = v;
            worst_pair = Some((s, t));
        }
        rows.push(AbsContinuityRow { s, t, lhs, rhs });
    }
    if rows.is_empty() {
        max_violation = 0.0;
    }
    Ok(AbsContinuityReport { crossnorm, b_norm, slack, rows, holds: max_violation <= 0.0, max_violation, worst_pair })
}

/// One dissection cell `]lower, upper]` of a density estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityCell {
    pub lower: f64,
    pub upper: f64,
    /// Increment of the scalar QV over the cell.
    pub dq: f64,
    /// Difference quotient, absent on cells carrying no mass.
    pub q: Option<Vec<f64>>,
    pub q_norm: Option<f64>,
}

/// Piecewise-constant density of `Q_B` with respect to `Q(X)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityPath {
    pub shape: (usize, usize),
    pub crossnorm: CrossnormChoice,
    pub floor: f64,
    pub cells: Vec<DensityCell>,
    pub b_norm: f64,
    /// `max(|q| - |B|)` over mass cells.
    pub max_norm_excess: f64,
    pub bound_holds: bool,
    /// `sum |q| dQ` over mass cells.
    pub weighted_norm_sum: f64,
    /// `V(Q_B)` on `[0, T]`.
    pub variation: f64,
    pub tolerance: f64,
}

impl DensityPath {
    /// `sum_{cells ending by t} q dQ`, with cells cut at `t` not counted.
    pub fn reconstruct(&self, t: f64) -> Vec<f64> {
        let m = self.shape.0 * self.shape.1;
        let mut acc = vec![0.0; m];
        for c in self.cells.iter().take_while(|c| c.upper <= t) {
            if let Some(q) = &c.q {
                for (a, v) in acc.iter_mut().zip(q) {
                    *a += v * c.dq;
                }
            }
        }
        acc
    }

    pub fn mass_cells(&self) -> impl Iterator<Item = &DensityCell> {
        self.cells.iter().filter(|c| c.q.is_some())
    }

    /// Cells as CSV: `lower,upper,dq,q_norm,q_1..q_m` (empty `q` on no-mass cells).
    pub fn to_csv(&self) -> String {
        let m = self.shape.0 * self.shape.1;
        let mut out = String::from("lower,upper,dq,q_norm");
        for k in 1..=m {
            out.push_str(&format!(",q_{k}"));
        }
        out.push('\n');
        for c in &self.cells {
            out.push_str(&format!("{:.16e},{:.16e},{:.16e}", c.lower, c.upper, c.dq));
            match (&c.q, c.q_norm) {
                (Some(q), Some(n)) => {
                    out.push_str(&format!(",{n:.16e}"));
                    for v in q {
                        out.push_str(&format!(",{v:.16e}"));
                    }
                }
                _ => out.push_str(&",".repeat(m + 1)),
            }
            out.push('\n');
        }
        out
    }
}

/// Difference quotients `dQ_B / dQ(X)` on the cells of `dissection`.
/// `floor` defaults to `1e-8 Q(X)_T`.
pub fn density_estimate(
    qv_b: &QvPath,
    qv_scalar: &QvPath,
    dissection: &Partition,
    floor: Option<f64>,
    b_norm: f64,
    crossnorm: CrossnormChoice,
    tolerance: f64,
) -> Result<DensityPath> {
    check_dim(1, qv_scalar.dim())?;
    let horizon = qv_scalar.horizon();
    if (dissection.horizon() - horizon).abs() > 1e-12 * horizon.max(1.0) {
        return Err(Error::Invalid("dissection must cover the QV horizon".into()));
    }
    let q_total = qv_scalar.value_at(horizon)?[0];
    let floor = floor.unwrap_or(1e-8 * q_total);
    if !(floor > 0.0) {
        return Err(Error::NoMass);
    }
    let shape = qv_b.shape();
    let mut cells = Vec::with_capacity(dissection.len());
    let mut max_norm_excess = f64::NEG_INFINITY;
    let mut weighted = 0.0;
    let mut prev_b = qv_b.value_at(0.0)?;
    let mut prev_s = qv_scalar.value_at(0.0)?[0];
    for (r, s) in dissection.intervals() {
        let s = s.min(horizon);
        let cur_b = qv_b.value_at(s)?;
        let cur_s = qv_scalar.value_at(s)?[0];
        let dq = cur_s - prev_s;
        let (q, q_norm) = if dq > floor {
            let q: Vec<f64> = cur_b.iter().zip(&prev_b).map(|(a, b)| (a - b) / dq).collect();
            let n = value_norm(&q, shape, crossnorm);
            max_norm_excess = max_norm_excess.max(n - b_norm);
            weighted += n * dq;
            (Some(q), Some(n))
        } else {
            (None, None)
        };
        cells.push(DensityCell { lower: r, upper: s, dq, q, q_norm });
        prev_b = cur_b;
        prev_s = cur_s;
    }
    if cells.iter().all(|c| c.q.is_none()) {
        return Err(Error::NoMass);
    }
    Ok(DensityPath {
        shape,
        crossnorm,
        floor,
        cells,
        b_norm,
        bound_holds: max_norm_excess <= tolerance,
        max_norm_excess,
        weighted_norm_sum: weighted,
        variation: qv_variation(qv_b, horizon, crossnorm),
        tolerance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitDensityReport {
    pub mass_cells: usize,
    pub mean_deviation: f64,
    pub max_deviation: f64,
    /// `(t, V([X,X])_t, Q(X)_t)` at the reporting times.
    pub variation_vs_scalar: Vec<(f64, f64, f64)>,
    pub max_relative_variation_gap: f64,
}

/// `| |q|_nuc - 1 |` over mass cells, and `V([X,X])` against `Q(X)`.
pub fn unit_density_check(density: &DensityPath, tensor_qv: &QvPath, qv_scalar: &QvPath) -> Result<UnitDensityReport> {
    if density.crossnorm != CrossnormChoice::Projective {
        return Err(Error::Unsupported("unit density needs the projective crossnorm".into()));
    }
    let devs: Vec<f64> = density.mass_cells().map(|c| (c.q_norm.unwrap() - 1.0).abs()).collect();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for &t in qv_scalar.times() {
        let v = qv_variation(tensor_qv, t, CrossnormChoice::Projective);
        let q = qv_scalar.value_at(t)?[0];
        if q > 0.0 {
            worst = worst.max((v - q).abs() / q);
        }
        rows.push((t, v, q));
    }
    Ok(UnitDensityReport {
        mass_cells: devs.len(),
        mean_deviation: if devs.is_empty() { 0.0 } else { devs.iter().sum::<f64>() / devs.len() as f64 },
        max_deviation: devs.iter().copied().fold(0.0, f64::max),
        variation_vs_scalar: rows,
        max_relative_variation_gap: worst,
    })
}

/// `|B|` as used in the bounds above: exact for inner and outer products.
pub fn form_norm(b: &BilinearForm, crossnorm: CrossnormChoice) -> f64 {
    match b.kind() {
        BilinearKind::Inner | BilinearKind::Outer => 1.0,
        BilinearKind::Coefficients => b.operator_norm(crossnorm).value,
    }
}
