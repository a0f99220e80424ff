//! Discrete quadratic (co)variations along partitions and their limits along
//! partition sequences.

use rayon::prelude::*;
use serde::Serialize;

use crate::bilinear::BilinearForm;
use crate::conditions::Verdict;
use crate::error::{check_dim, Error, Result};
use crate::norm::NormChoice;
use crate::partition::{Partition, PartitionSequence};
use crate::path::{CadlagPath, FvPath, Interp, Jump};

fn check_horizon(a: f64, b: f64) -> Result<()> {
    if (a - b).abs() > 1e-12 * a.abs().max(b.abs()).max(1.0) {
        return Err(Error::Invalid(format!("horizons differ: {a} vs {b}")));
    }
    Ok(())
}

fn check_times(times: &[f64], horizon: f64) -> Result<()> {
    for &t in times {
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside [0, {horizon}]")));
        }
    }
    Ok(())
}

fn sorted_order(times: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..times.len()).collect();
    idx.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    idx
}

/// Compensated (Neumaier) running sums of vector-valued terms.
#[derive(Debug, Clone)]
pub(crate) struct SumAcc {
    sum: Vec<f64>,
    comp: Vec<f64>,
    term: Vec<f64>,
}

impl SumAcc {
    pub(crate) fn new(m: usize) -> Self {
        Self { sum: vec![0.0; m], comp: vec![0.0; m], term: vec![0.0; m] }
    }

    /// Add the term that `f` writes into a zeroed buffer.
    pub(crate) fn add_with(&mut self, f: impl FnOnce(&mut [f64])) {
        self.term.iter_mut().for_each(|v| *v = 0.0);
        f(&mut self.term);
        for ((s, c), &x) in self.sum.iter_mut().zip(self.comp.iter_mut()).zip(&self.term) {
            let t = *s + x;
            if s.abs() >= x.abs() {
                *c += (*s - t) + x;
            } else {
                *c += (x - t) + *s;
            }
            *s = t;
        }
    }

    pub(crate) fn total_into(&self, out: &mut [f64]) {
        for ((o, s), c) in out.iter_mut().zip(&self.sum).zip(&self.comp) {
            *o = s + c;
        }
    }

    pub(crate) fn total(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.sum.len()];
        self.total_into(&mut out);
        out
    }
}

/// Sweep over the pieces of `pi`, calling `term(x_incr, y_incr, out)` for
/// each piece clipped at each requested time; `out` starts zeroed and the
/// terms are summed with compensation. Returns one sum per time.
fn sweep<F>(x: &CadlagPath, y: &CadlagPath, pi: &Partition, times: &[f64], m: usize, mut term: F) -> Vec<f64>
where
    F: FnMut(&[f64], &[f64], &mut [f64]),
{
    let (dx, dy) = (x.dim(), y.dim());
    let points = pi.points();
    let xv = x.values_at_sorted(&points);
    let yv = if std::ptr::eq(x, y) { Vec::new() } else { y.values_at_sorted(&points) };
    let yv: &[f64] = if std::ptr::eq(x, y) { &xv } else { &yv };
    let mut out = vec![0.0; times.len() * m];
    let mut acc = SumAcc::new(m);
    let mut ix = vec![0.0; dx];
    let mut iy = vec![0.0; dy];
    let mut k = 0usize;
    let n = points.len() - 1;
    for &ti in &sorted_order(times) {
        let t = times[ti];
        while k < n && points[k + 1] <= t {
            for i in 0..dx {
                ix[i] = xv[(k + 1) * dx + i] - xv[k * dx + i];
            }
            for i in 0..dy {
                iy[i] = yv[(k + 1) * dy + i] - yv[k * dy + i];
            }
            acc.add_with(|o| term(&ix, &iy, o));
            k += 1;
        }
        let row = &mut out[ti * m..(ti + 1) * m];
        if k < n && points[k] < t {
            let xt = x.value(t);
            let yt = y.value(t);
            for i in 0..dx {
                ix[i] = xt[i] - xv[k * dx + i];
            }
            for i in 0..dy {
                iy[i] = yt[i] - yv[k * dy + i];
            }
            let mut partial = acc.clone();
            partial.add_with(|o| term(&ix, &iy, o));
            partial.total_into(row);
        } else {
            acc.total_into(row);
        }
    }
    out
}

fn check_pair(b: &BilinearForm, x: &CadlagPath, y: &CadlagPath, pi: &Partition) -> Result<()> {
    check_dim(b.in_dim(), x.dim())?;
    check_dim(b.in_dim(), y.dim())?;
    check_horizon(x.horizon(), y.horizon())?;
    check_horizon(x.horizon(), pi.horizon())
}

/// `Q^pi_B(X, Y)_t = sum_{]r,s] in pi} B(X_{s^t} - X_{r^t}, Y_{s^t} - Y_{r^t})`.
pub fn discrete_qv(b: &BilinearForm, x: &CadlagPath, y: &CadlagPath, pi: &Partition, t: f64) -> Result<Vec<f64>> {
    discrete_qv_at(b, x, y, pi, &[t])
}

/// [`discrete_qv`] at several times in one pass; rows follow `times`.
pub fn discrete_qv_at(
    b: &BilinearForm,
    x: &CadlagPath,
    y: &CadlagPath,
    pi: &Partition,
    times: &[f64],
) -> Result<Vec<f64>> {
    check_pair(b, x, y, pi)?;
    check_times(times, x.horizon())?;
    Ok(sweep(x, y, pi, times, b.out_dim(), |u, v, acc| b.accumulate(u, v, acc)))
}

/// `Q^pi(X)_t = sum |delta X_t(I)|^2`.
pub fn discrete_scalar_qv(x: &CadlagPath, pi: &Partition, t: f64, norm: NormChoice) -> Result<f64> {
    Ok(discrete_scalar_qv_at(x, pi, &[t], norm)?[0])
}

pub fn discrete_scalar_qv_at(x: &CadlagPath, pi: &Partition, times: &[f64], norm: NormChoice) -> Result<Vec<f64>> {
    check_horizon(x.horizon(), pi.horizon())?;
    check_times(times, x.horizon())?;
    Ok(sweep(x, x, pi, times, 1, |u, _, acc| acc[0] += norm.norm_sq(u)))
}

/// `V^(2)(X)_t`, the supremum of the discrete scalar QV over the computed levels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TwoVariation {
    pub value: f64,
    /// Label of the level attaining the supremum.
    pub level: u32,
    pub per_level: Vec<f64>,
    pub caveat: &'static str,
}

pub fn two_variation(x: &CadlagPath, seq: &PartitionSequence, t: f64, norm: NormChoice) -> Result<TwoVariation> {
    let per_level = seq
        .levels()
        .par_iter()
        .map(|pi| discrete_scalar_qv(x, pi, t, norm))
        .collect::<Result<Vec<f64>>>()?;
    let (k, value) = per_level
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
    Ok(TwoVariation {
        value: value.max(0.0),
        level: seq.label(k),
        per_level,
        caveat: "sup over computed levels",
    })
}

/// A quadratic-variation path: values at a reporting grid (which starts at 0
/// and ends at the horizon) and the exact jump list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QvPath {
    shape: (usize, usize),
    times: Vec<f64>,
    values: Vec<f64>,
    jumps: Vec<Jump>,
}

impl QvPath {
    pub fn new(shape: (usize, usize), times: Vec<f64>, values: Vec<f64>, jumps: Vec<Jump>) -> Result<Self> {
        let m = shape.0 * shape.1;
        if m == 0 {
            return Err(Error::Invalid("QV values must be nonempty".into()));
        }
        if times.len() < 2 || times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("reporting grid must start at 0 and increase strictly".into()));
        }
        check_dim(times.len() * m, values.len())?;
        let horizon = *times.last().unwrap();
        for w in jumps.windows(2) {
            if w[1].time <= w[0].time {
                return Err(Error::Invalid("QV jump times must be sorted and distinct".into()));
            }
        }
        for j in &jumps {
            check_dim(m, j.delta.len())?;
            if !(j.time > 0.0 && j.time <= horizon) {
                return Err(Error::Invalid(format!("QV jump at {} outside ]0, {horizon}]", j.time)));
            }
        }
        Ok(Self { shape, times, values, jumps })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn dim(&self) -> usize {
        self.shape.0 * self.shape.1
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Row-major values, one row per reporting time.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, i: usize) -> &[f64] {
        let m = self.dim();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    /// Sum of the jumps in `]0, t]`.
    pub fn jump_sum(&self, t: f64) -> Vec<f64> {
        let mut s = vec![0.0; self.dim()];
        for j in self.jumps.iter().take_while(|j| j.time <= t) {
            for (a, b) in s.iter_mut().zip(&j.delta) {
                *a += b;
            }
        }
        s
    }

    /// Continuous part at the reporting times, row-major.
    pub fn continuous_values(&self) -> Vec<f64> {
        let m = self.dim();
        let mut out = self.values.clone();
        let mut acc = vec![0.0; m];
        let mut j = 0;
        for (i, &t) in self.times.iter().enumerate() {
            while j < self.jumps.len() && self.jumps[j].time <= t {
                for (a, b) in acc.iter_mut().zip(&self.jumps[j].delta) {
                    *a += b;
                }
                j += 1;
            }
            for k in 0..m {
                out[i * m + k] -= acc[k];
            }
        }
        out
    }

    /// Value at any `t` in `[0, T]`: exact at reporting times, otherwise the
    /// continuous part interpolated linearly plus the jumps up to `t`.
    pub fn value_at(&self, t: f64) -> Result<Vec<f64>> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside [0, {horizon}]")));
        }
        if let Ok(i) = self.times.binary_search_by(|s| s.total_cmp(&t)) {
            return Ok(self.value(i).to_vec());
        }
        let cont = self.continuous_fv();
        let mut v = cont.value(t);
        for (a, b) in v.iter_mut().zip(self.jump_sum(t)) {
            *a += b;
        }
        Ok(v)
    }

    fn continuous_fv(&self) -> CadlagPath {
        CadlagPath::new(self.dim(), self.times.clone(), self.continuous_values(), Vec::new(), Interp::PiecewiseLinear)
            .expect("validated reporting grid")
    }

    /// The QV as a finite-variation path: continuous part interpolated
    /// linearly on the reporting grid, jumps exact.
    pub fn to_fv_path(&self) -> FvPath {
        FvPath::new(
            CadlagPath::new(
                self.dim(),
                self.times.clone(),
                self.continuous_values(),
                self.jumps.clone(),
                Interp::PiecewiseLinear,
            )
            .expect("validated QV path"),
        )
    }

    /// `(Q^c, Q - Q^c)`: the continuous part (no jumps) and the pure-jump part.
    pub fn split_continuous_jump(&self) -> (FvPath, FvPath) {
        let m = self.dim();
        let jumps = CadlagPath::pure_jump(m, self.horizon(), &vec![0.0; m], self.jumps.clone())
            .expect("validated QV jumps");
        (FvPath::new(self.continuous_fv()), FvPath::new(jumps))
    }

    /// Apply `f` to every value and every jump.
    pub fn map_values(&self, shape: (usize, usize), mut f: impl FnMut(&[f64]) -> Vec<f64>) -> Result<Self> {
        let m = self.dim();
        let values: Vec<f64> = self.values.chunks(m).flat_map(&mut f).collect();
        let jumps = self.jumps.iter().map(|j| Jump::new(j.time, f(&j.delta))).collect();
        Self::new(shape, self.times.clone(), values, jumps)
    }

    /// Largest decrease between consecutive reporting times of a scalar QV.
    pub fn max_decrease(&self) -> f64 {
        if self.dim() != 1 {
            return 0.0;
        }
        self.values.windows(2).fold(0.0, |m, w| m.max(w[0] - w[1]))
    }
}

/// Options for limit detection along a partition sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QvOptions {
    /// Relative Cauchy-tail tolerance: the tail must be at most `tolerance * (1 + |limit|)`.
    pub tolerance: f64,
    /// Extrapolate assuming an error proportional to the mesh.
    pub richardson: bool,
    /// Number of trailing level differences inspected.
    pub tail_levels: usize,
}

impl Default for QvOptions {
    fn default() -> Self {
        Self { tolerance: 1e-6, richardson: false, tail_levels: 3 }
    }
}

/// Per-level values of a discrete QV at reporting times, with a limit verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceEstimate {
    pub levels: Vec<u32>,
    pub meshes: Vec<f64>,
    pub times: Vec<f64>,
    pub shape: (usize, usize),
    /// `values[i][k]`: value at `times[i]` on level `levels[k]`.
    pub values: Vec<Vec<Vec<f64>>>,
    /// Richardson-extrapolated sequence (one shorter than `levels`), when enabled.
    pub extrapolated: Option<Vec<Vec<Vec<f64>>>>,
    pub limit: Vec<Vec<f64>>,
    /// Largest successive difference over the inspected tail, per time.
    pub cauchy_tail: Vec<f64>,
    pub max_cauchy_tail: f64,
    pub verdict: Verdict,
    pub options: QvOptions,
}

fn vec_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn vec_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl ConvergenceEstimate {
    /// Build the estimate from per-level rows (`rows[k]` row-major over times).
    pub fn from_levels(
        seq: &PartitionSequence,
        times: Vec<f64>,
        shape: (usize, usize),
        rows: &[Vec<f64>],
        options: QvOptions,
    ) -> Result<Self> {
        let m = shape.0 * shape.1;
        let levels = seq.labels().to_vec();
        if levels.len() < 4 {
            return Err(Error::Invalid(format!("need at least 4 levels, got {}", levels.len())));
        }
        let meshes: Vec<f64> = seq.levels().iter().map(Partition::mesh).collect();
        let values: Vec<Vec<Vec<f64>>> = (0..times.len())
            .map(|i| rows.iter().map(|r| r[i * m..(i + 1) * m].to_vec()).collect())
            .collect();
        let extrapolated = options.richardson.then(|| {
            values
                .iter()
                .map(|seqv| {
                    (1..seqv.len())
                        .map(|k| {
                            let r = meshes[k] / meshes[k - 1];
                            seqv[k]
                                .iter()
                                .zip(&seqv[k - 1])
                                .map(|(a, b)| (a - r * b) / (1.0 - r))
                                .collect()
                        })
                        .collect()
                })
                .collect::<Vec<Vec<Vec<f64>>>>()
        });
        let used = extrapolated.as_ref().unwrap_or(&values);
        let mut limit = Vec::with_capacity(times.len());
        let mut cauchy_tail = Vec::with_capacity(times.len());
        let mut pass = true;
        for s in used {
            let last = s.last().unwrap().clone();
            let start = s.len().saturating_sub(options.tail_levels + 1);
            let tail = s[start..].windows(2).map(|w| vec_dist(&w[1], &w[0])).fold(0.0, f64::max);
            if !(tail <= options.tolerance * (1.0 + vec_norm(&last))) {
                pass = false;
            }
            limit.push(last);
            cauchy_tail.push(tail);
        }
        let max_cauchy_tail = cauchy_tail.iter().copied().fold(0.0, f64::max);
        Ok(Self {
            levels,
            meshes,
            times,
            shape,
            values,
            extrapolated,
            limit,
            cauchy_tail,
            max_cauchy_tail,
            verdict: if pass { Verdict::Pass } else { Verdict::Inconclusive },
            options,
        })
    }

    /// Values on the last level, row-major over times.
    pub fn last_level(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.last().unwrap().clone()).collect()
    }

    /// Level table as CSV: `t,level,value_1..value_m`, then a `limit` row per time.
    pub fn to_csv(&self) -> String {
        let m = self.shape.0 * self.shape.1;
        let mut out = String::from("t,level");
        for k in 1..=m {
            out.push_str(&format!(",value_{k}"));
        }
        out.push('\n');
        let fmt_row = |out: &mut String, t: f64, label: &str, v: &[f64]| {
            out.push_str(&format!("{t:.16e},{label}"));
            for x in v {
                out.push_str(&format!(",{x:.16e}"));
            }
            out.push('\n');
        };
        for (i, &t) in self.times.iter().enumerate() {
            for (k, lvl) in self.levels.iter().enumerate() {
                fmt_row(&mut out, t, &lvl.to_string(), &self.values[i][k]);
            }
            fmt_row(&mut out, t, "limit", &self.limit[i]);
        }
        out
    }
}

/// Sorted, deduplicated reporting grid containing 0 and the horizon.
pub fn reporting_grid(times: &[f64], horizon: f64) -> Result<Vec<f64>> {
    check_times(times, horizon)?;
    let mut g: Vec<f64> = times.to_vec();
    g.push(0.0);
    g.push(horizon);
    g.sort_by(f64::total_cmp);
    g.dedup();
    Ok(g)
}

/// `{(s, B(dX_s, dY_s))}` over the union of the jump times of `X` and `Y`.
pub fn qv_jumps(b: &BilinearForm, x: &CadlagPath, y: &CadlagPath) -> Vec<Jump> {
    let mut times: Vec<f64> = x.jumps().iter().chain(y.jumps()).map(|j| j.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let zx = vec![0.0; x.dim()];
    let zy = vec![0.0; y.dim()];
    times
        .into_iter()
        .map(|s| {
            let dx = x.jump_at(s).unwrap_or(&zx);
            let dy = y.jump_at(s).unwrap_or(&zy);
            let mut v = vec![0.0; b.out_dim()];
            b.accumulate(dx, dy, &mut v);
            Jump::new(s, v)
        })
        .collect()
}

/// Discrete QV on every level of `seq`, one row-major row per level.
pub fn qv_levels(
    b: &BilinearForm,
    x: &CadlagPath,
    y: &CadlagPath,
    seq: &PartitionSequence,
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    seq.levels().par_iter().map(|pi| discrete_qv_at(b, x, y, pi, times)).collect()
}

/// Limit of `Q^{pi_n}_B(X, Y)` at reporting times. The returned path carries
/// the extrapolated values and the exact jump list from the path metadata;
/// a non-Cauchy tail shows up as an `Inconclusive` verdict.
pub fn qv_limit(
    b: &BilinearForm,
    x: &CadlagPath,
    y: &CadlagPath,
    seq: &PartitionSequence,
    reporting_times: &[f64],
    options: QvOptions,
) -> Result<(QvPath, ConvergenceEstimate)> {
    check_horizon(x.horizon(), seq.horizon())?;
    let times = reporting_grid(reporting_times, x.horizon())?;
    let rows = qv_levels(b, x, y, seq, &times)?;
    let est = ConvergenceEstimate::from_levels(seq, times.clone(), b.shape(), &rows, options)?;
    let values = est.limit.concat();
    let path = QvPath::new(b.shape(), times, values, qv_jumps(b, x, y))?;
    Ok((path, est))
}

/// Scalar QV limit `Q(X)` under the given ground norm.
pub fn scalar_qv_limit(
    x: &CadlagPath,
    seq: &PartitionSequence,
    reporting_times: &[f64],
    norm: NormChoice,
    options: QvOptions,
) -> Result<(QvPath, ConvergenceEstimate)> {
    check_horizon(x.horizon(), seq.horizon())?;
    let times = reporting_grid(reporting_times, x.horizon())?;
    let rows: Vec<Vec<f64>> = seq
        .levels()
        .par_iter()
        .map(|pi| discrete_scalar_qv_at(x, pi, &times, norm))
        .collect::<Result<_>>()?;
    let est = ConvergenceEstimate::from_levels(seq, times.clone(), (1, 1), &rows, options)?;
    let jumps = x.jumps().iter().map(|j| Jump::new(j.time, vec![norm.norm_sq(&j.delta)])).collect();
    let path = QvPath::new((1, 1), times, est.limit.concat(), jumps)?;
    Ok((path, est))
}

/// The discrete QV along one partition as a path on `pi`'s points together
/// with `times`; jumps are `B(dX_s, dY_s)` from the path metadata.
pub fn discrete_qv_path(
    b: &BilinearForm,
    x: &CadlagPath,
    y: &CadlagPath,
    pi: &Partition,
    times: &[f64],
) -> Result<QvPath> {
    let mut grid = pi.points();
    grid.extend_from_slice(times);
    let grid = reporting_grid(&grid, x.horizon())?;
    let values = discrete_qv_at(b, x, y, pi, &grid)?;
    QvPath::new(b.shape(), grid, values, qv_jumps(b, x, y))
}

/// Free-function form of [`QvPath::split_continuous_jump`].
pub fn split_continuous_jump(qv: &QvPath) -> (FvPath, FvPath) {
    qv.split_continuous_jump()
}
