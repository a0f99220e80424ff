//! Cadlag paths in R^d stored as a sampled continuous part plus an explicit
//! jump list, so that jumps, left limits and jump truncations are exact.

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::norm::NormChoice;
use crate::partition::Partition;

/// Interpolation of the sampled part between grid times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    PiecewiseLinear,
    /// Right-continuous step function; every change of sample value at a grid
    /// time is a jump of the path.
    PiecewiseConstantRight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub time: f64,
    pub delta: Vec<f64>,
}

impl Jump {
    pub fn new(time: f64, delta: Vec<f64>) -> Self {
        Self { time, delta }
    }
}

/// Which endpoints of `[a, b]` belong to an interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bounds {
    Closed,
    /// `[a, b[`
    RightOpen,
    /// `]a, b]`
    LeftOpen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    /// pieces `]r, s]`
    Plus,
    /// pieces `[r, s[`
    Minus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CadlagPath {
    dim: usize,
    grid: Vec<f64>,
    samples: Vec<f64>,
    explicit_jumps: Vec<Jump>,
    interp: Interp,
    // all jumps of the path, including grid steps under constant interpolation
    jumps: Vec<Jump>,
    // prefix[k*dim..] = sum of the first k jumps
    prefix: Vec<f64>,
}

impl CadlagPath {
    pub fn new(
        dim: usize,
        grid: Vec<f64>,
        samples: Vec<f64>,
        jumps: Vec<Jump>,
        interp: Interp,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("path dimension must be positive".into()));
        }
        if grid.len() < 2 {
            return Err(Error::Invalid("grid needs at least two times".into()));
        }
        if grid[0] != 0.0 {
            return Err(Error::Invalid("grid must start at 0".into()));
        }
        if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("grid must be finite and strictly increasing".into()));
        }
        check_dim(grid.len() * dim, samples.len())?;
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("samples must be finite".into()));
        }
        let horizon = *grid.last().unwrap();
        for w in jumps.windows(2) {
            if w[1].time <= w[0].time {
                return Err(Error::Invalid("jump times must be sorted and distinct".into()));
            }
        }
        for j in &jumps {
            check_dim(dim, j.delta.len())?;
            if !(j.time > 0.0 && j.time <= horizon) {
                return Err(Error::Invalid(format!("jump time {} outside ]0, {horizon}]", j.time)));
            }
            if j.delta.iter().any(|v| !v.is_finite()) {
                return Err(Error::Invalid("jump sizes must be finite".into()));
            }
        }

        let all = match interp {
            Interp::PiecewiseLinear => jumps.clone(),
            Interp::PiecewiseConstantRight => merge_grid_steps(dim, &grid, &samples, &jumps),
        };
        let mut prefix = vec![0.0; (all.len() + 1) * dim];
        for (k, j) in all.iter().enumerate() {
            for i in 0..dim {
                prefix[(k + 1) * dim + i] = prefix[k * dim + i] + j.delta[i];
            }
        }
        Ok(Self { dim, grid, samples, explicit_jumps: jumps, interp, jumps: all, prefix })
    }

    /// Piecewise-linear path through `samples` with no jumps.
    pub fn linear(dim: usize, grid: Vec<f64>, samples: Vec<f64>) -> Result<Self> {
        Self::new(dim, grid, samples, Vec::new(), Interp::PiecewiseLinear)
    }

    /// Constant starting point plus jumps.
    pub fn pure_jump(dim: usize, horizon: f64, start: &[f64], jumps: Vec<Jump>) -> Result<Self> {
        check_dim(dim, start.len())?;
        let mut samples = start.to_vec();
        samples.extend_from_slice(start);
        Self::new(dim, vec![0.0, horizon], samples, jumps, Interp::PiecewiseLinear)
    }

    pub fn zero(dim: usize, horizon: f64) -> Result<Self> {
        Self::pure_jump(dim, horizon, &vec![0.0; dim], Vec::new())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    pub fn interp(&self) -> Interp {
        self.interp
    }

    /// Jumps as supplied at construction.
    pub fn explicit_jumps(&self) -> &[Jump] {
        &self.explicit_jumps
    }

    /// Every jump of the path, sorted by time.
    pub fn jumps(&self) -> &[Jump] {
        &self.jumps
    }

    pub fn jump_at(&self, t: f64) -> Option<&[f64]> {
        self.jumps
            .binary_search_by(|j| j.time.total_cmp(&t))
            .ok()
            .map(|k| self.jumps[k].delta.as_slice())
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon()).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside [0, {}]", self.horizon())));
        }
        Ok(())
    }

    // number of jumps with time <= t (inclusive) or < t
    fn jump_count(&self, t: f64, inclusive: bool) -> usize {
        if inclusive {
            self.jumps.partition_point(|j| j.time <= t)
        } else {
            self.jumps.partition_point(|j| j.time < t)
        }
    }

    fn prefix(&self, k: usize) -> &[f64] {
        &self.prefix[k * self.dim..(k + 1) * self.dim]
    }

    /// Sum of jumps in `]0, t]`.
    pub fn jump_sum(&self, t: f64) -> Vec<f64> {
        self.prefix(self.jump_count(t, true)).to_vec()
    }

    /// Value of the continuous part at `t`.
    pub fn continuous_part(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.continuous_into(t, &mut out);
        out
    }

    fn continuous_into(&self, t: f64, out: &mut [f64]) {
        let d = self.dim;
        match self.interp {
            Interp::PiecewiseConstantRight => out.copy_from_slice(&self.samples[..d]),
            Interp::PiecewiseLinear => {
                let k = self.grid.partition_point(|&g| g <= t);
                if k == 0 {
                    out.copy_from_slice(&self.samples[..d]);
                } else if k >= self.grid.len() {
                    out.copy_from_slice(self.sample(self.grid.len() - 1));
                } else {
                    let (t0, t1) = (self.grid[k - 1], self.grid[k]);
                    if t == t0 {
                        out.copy_from_slice(self.sample(k - 1));
                    } else {
                        let w = (t - t0) / (t1 - t0);
                        let (a, b) = (self.sample(k - 1), self.sample(k));
                        for i in 0..d {
                            out[i] = a[i] + w * (b[i] - a[i]);
                        }
                    }
                }
            }
        }
    }

    pub(crate) fn value_into(&self, t: f64, out: &mut [f64]) {
        self.continuous_into(t, out);
        let p = self.prefix(self.jump_count(t, true));
        for (o, j) in out.iter_mut().zip(p) {
            *o += j;
        }
    }

    pub(crate) fn left_into(&self, t: f64, out: &mut [f64]) {
        self.continuous_into(t, out);
        let p = self.prefix(self.jump_count(t, false));
        for (o, j) in out.iter_mut().zip(p) {
            *o += j;
        }
    }

    pub(crate) fn value(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.value_into(t, &mut out);
        out
    }

    pub(crate) fn left(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.left_into(t, &mut out);
        out
    }

    /// Right-continuous value `X_t`.
    pub fn evaluate(&self, t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        Ok(self.value(t))
    }

    /// `X_{t-}`; undefined at `t = 0`.
    pub fn left_limit(&self, t: f64) -> Result<Vec<f64>> {
        if !(t > 0.0 && t <= self.horizon()) {
            return Err(Error::Domain(format!("no left limit at t = {t}")));
        }
        Ok(self.left(t))
    }

    /// Values at sorted times, row-major. Times must lie in `[0, T]`.
    pub fn values_at_sorted(&self, times: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; times.len() * d];
        let mut g = 0usize;
        let mut j = 0usize;
        for (n, &t) in times.iter().enumerate() {
            let row = &mut out[n * d..(n + 1) * d];
            while j < self.jumps.len() && self.jumps[j].time <= t {
                j += 1;
            }
            match self.interp {
                Interp::PiecewiseConstantRight => row.copy_from_slice(&self.samples[..d]),
                Interp::PiecewiseLinear => {
                    while g < self.grid.len() && self.grid[g] <= t {
                        g += 1;
                    }
                    if g == 0 {
                        row.copy_from_slice(&self.samples[..d]);
                    } else if g >= self.grid.len() {
                        row.copy_from_slice(self.sample(self.grid.len() - 1));
                    } else {
                        let (t0, t1) = (self.grid[g - 1], self.grid[g]);
                        if t == t0 {
                            row.copy_from_slice(self.sample(g - 1));
                        } else {
                            let w = (t - t0) / (t1 - t0);
                            let (a, b) = (self.sample(g - 1), self.sample(g));
                            for i in 0..d {
                                row[i] = a[i] + w * (b[i] - a[i]);
                            }
                        }
                    }
                }
            }
            for (o, p) in row.iter_mut().zip(self.prefix(j)) {
                *o += p;
            }
        }
        out
    }

    /// Times in the open interval `]a, b[` where the path may fail to be affine.
    fn breakpoints_between(&self, a: f64, b: f64) -> Vec<f64> {
        let jump_lo = self.jumps.partition_point(|j| j.time <= a);
        let jump_hi = self.jumps.partition_point(|j| j.time < b);
        let jumps = self.jumps[jump_lo..jump_hi].iter().map(|j| j.time);
        match self.interp {
            Interp::PiecewiseConstantRight => jumps.collect(),
            Interp::PiecewiseLinear => {
                let lo = self.grid.partition_point(|&g| g <= a);
                let hi = self.grid.partition_point(|&g| g < b);
                merge_sorted(&self.grid[lo..hi.max(lo)], jumps)
            }
        }
    }

    /// `J_eps(X)` and `X - J_eps(X)`: jumps with norm strictly above `eps`
    /// go to the first path, the rest stay in the residual.
    pub fn truncate_jumps(&self, eps: f64, norm: NormChoice) -> Result<(FvPath, CadlagPath)> {
        if !(eps >= 0.0) {
            return Err(Error::Invalid("truncation threshold must be >= 0".into()));
        }
        let (big, small): (Vec<Jump>, Vec<Jump>) =
            self.jumps.iter().cloned().partition(|j| norm.norm(&j.delta) > eps);
        let big_path = CadlagPath::pure_jump(self.dim, self.horizon(), &vec![0.0; self.dim], big)?;
        let residual = match self.interp {
            Interp::PiecewiseLinear => CadlagPath::new(
                self.dim,
                self.grid.clone(),
                self.samples.clone(),
                small,
                Interp::PiecewiseLinear,
            )?,
            Interp::PiecewiseConstantRight => {
                CadlagPath::pure_jump(self.dim, self.horizon(), &self.samples[..self.dim], small)?
            }
        };
        Ok((FvPath(big_path), residual))
    }

    pub fn jump_set(&self, eps: f64, norm: NormChoice) -> JumpSet {
        JumpSet {
            threshold: eps,
            times: self
                .jumps
                .iter()
                .filter(|j| norm.norm(&j.delta) > eps)
                .map(|j| j.time)
                .collect(),
        }
    }

    /// `sup_{x, y in I} |X_x - X_y|` for `I` the interval `[a, b]` with the
    /// given endpoint convention. Exact for the piecewise representation.
    pub fn oscillation(&self, a: f64, b: f64, bounds: Bounds, norm: NormChoice) -> Result<f64> {
        let t_max = self.horizon();
        if a < 0.0 || b > t_max {
            return Err(Error::Domain(format!("interval [{a}, {b}] not inside [0, {t_max}]")));
        }
        if b < a || (b == a && bounds != Bounds::Closed) {
            return Ok(0.0);
        }
        let d = self.dim;
        let mut pts = Vec::new();
        // value(a) is a right limit of the path on ]a, b], so it belongs to the closure either way
        pts.extend(self.value(a));
        for bp in self.breakpoints_between(a, b) {
            pts.extend(self.left(bp));
            pts.extend(self.value(bp));
        }
        if b > a {
            pts.extend(self.left(b));
            if bounds != Bounds::RightOpen {
                pts.extend(self.value(b));
            }
        }
        Ok(norm.diameter(&pts, d))
    }

    /// `O^+_t(X, pi)` (pieces `]r, s]`) or `O^-_t(X, pi)` (pieces `[r, s[`),
    /// each intersected with `[0, t]`.
    pub fn osc_along(&self, partition: &Partition, t: f64, side: Side, norm: NormChoice) -> Result<f64> {
        self.check_time(t)?;
        if partition.horizon() < t {
            return Err(Error::Domain("partition does not cover [0, t]".into()));
        }
        let mut best: f64 = 0.0;
        for (r, s) in partition.intervals() {
            // pieces starting at or after t meet [0, t] in at most one point
            if r >= t {
                break;
            }
            let w = match side {
                Side::Plus => self.oscillation(r, s.min(t), Bounds::LeftOpen, norm)?,
                Side::Minus if s <= t => self.oscillation(r, s, Bounds::RightOpen, norm)?,
                Side::Minus => self.oscillation(r, t, Bounds::Closed, norm)?,
            };
            best = best.max(w);
        }
        Ok(best)
    }

    /// Total variation on `[a, b]`, exact for the piecewise representation.
    /// For generated rough paths this is the variation of the discretisation.
    pub fn total_variation(&self, a: f64, b: f64, norm: NormChoice) -> Result<f64> {
        let t_max = self.horizon();
        if a < 0.0 || b > t_max || b < a {
            return Err(Error::Domain(format!("interval [{a}, {b}] not inside [0, {t_max}]")));
        }
        if a == b {
            return Ok(0.0);
        }
        let mut tv = 0.0;
        let mut prev = self.value(a);
        let mut bps = self.breakpoints_between(a, b);
        bps.push(b);
        for bp in bps {
            let l = self.left(bp);
            let v = self.value(bp);
            tv += norm.dist(&prev, &l) + norm.dist(&l, &v);
            prev = v;
        }
        Ok(tv)
    }

    /// Image under the linear map `m` (row-major `k x dim`).
    pub fn map_linear(&self, m: &[f64], k: usize) -> Result<CadlagPath> {
        check_dim(k * self.dim, m.len())?;
        let apply = |x: &[f64]| -> Vec<f64> {
            (0..k).map(|r| (0..self.dim).map(|c| m[r * self.dim + c] * x[c]).sum()).collect()
        };
        let samples = self.samples.chunks(self.dim).flat_map(apply).collect();
        let jumps = self.explicit_jumps.iter().map(|j| Jump::new(j.time, apply(&j.delta))).collect();
        CadlagPath::new(k, self.grid.clone(), samples, jumps, self.interp)
    }

    /// Same path with a piecewise-linear continuous part (constant-interp
    /// paths become a constant continuous part plus all their jumps).
    pub fn to_linear_canonical(&self) -> CadlagPath {
        match self.interp {
            Interp::PiecewiseLinear => self.clone(),
            Interp::PiecewiseConstantRight => {
                CadlagPath::pure_jump(self.dim, self.horizon(), &self.samples[..self.dim], self.jumps.clone())
                    .expect("canonical form of a valid path")
            }
        }
    }

    /// Pointwise `a * self + b * other` on the union grid.
    pub fn combine(&self, a: f64, other: &CadlagPath, b: f64) -> Result<CadlagPath> {
        check_dim(self.dim, other.dim)?;
        if self.horizon() != other.horizon() {
            return Err(Error::Invalid("paths have different horizons".into()));
        }
        let x = self.to_linear_canonical();
        let y = other.to_linear_canonical();
        let grid = merge_sorted(&x.grid, y.grid.iter().copied());
        let mut samples = Vec::with_capacity(grid.len() * self.dim);
        let mut cx = vec![0.0; self.dim];
        let mut cy = vec![0.0; self.dim];
        for &t in &grid {
            x.continuous_into(t, &mut cx);
            y.continuous_into(t, &mut cy);
            samples.extend(cx.iter().zip(&cy).map(|(p, q)| a * p + b * q));
        }
        let mut jumps: Vec<Jump> = Vec::new();
        let (mut i, mut k) = (0, 0);
        while i < x.jumps.len() || k < y.jumps.len() {
            let ti = x.jumps.get(i).map_or(f64::INFINITY, |j| j.time);
            let tk = y.jumps.get(k).map_or(f64::INFINITY, |j| j.time);
            let t = ti.min(tk);
            let mut delta = vec![0.0; self.dim];
            if ti == t {
                for (dv, v) in delta.iter_mut().zip(&x.jumps[i].delta) {
                    *dv += a * v;
                }
                i += 1;
            }
            if tk == t {
                for (dv, v) in delta.iter_mut().zip(&y.jumps[k].delta) {
                    *dv += b * v;
                }
                k += 1;
            }
            jumps.push(Jump::new(t, delta));
        }
        CadlagPath::new(self.dim, grid, samples, jumps, Interp::PiecewiseLinear)
    }
}

fn merge_grid_steps(dim: usize, grid: &[f64], samples: &[f64], explicit: &[Jump]) -> Vec<Jump> {
    let mut out: Vec<Jump> = Vec::new();
    let mut e = 0;
    for i in 1..grid.len() {
        let t = grid[i];
        while e < explicit.len() && explicit[e].time < t {
            out.push(explicit[e].clone());
            e += 1;
        }
        let step: Vec<f64> = (0..dim).map(|k| samples[i * dim + k] - samples[(i - 1) * dim + k]).collect();
        if e < explicit.len() && explicit[e].time == t {
            let delta = step.iter().zip(&explicit[e].delta).map(|(a, b)| a + b).collect();
            out.push(Jump::new(t, delta));
            e += 1;
        } else if step.iter().any(|&v| v != 0.0) {
            out.push(Jump::new(t, step));
        }
    }
    out.extend(explicit[e..].iter().cloned());
    out
}

pub(crate) fn merge_sorted(a: &[f64], b: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len());
    let mut ia = a.iter().copied().peekable();
    let mut ib = b.peekable();
    loop {
        let next = match (ia.peek(), ib.peek()) {
            (Some(&x), Some(&y)) => {
                if x < y {
                    ia.next();
                    x
                } else if y < x {
                    ib.next();
                    y
                } else {
                    ia.next();
                    ib.next();
                    x
                }
            }
            (Some(&x), None) => {
                ia.next();
                x
            }
            (None, Some(&y)) => {
                ib.next();
                y
            }
            (None, None) => break,
        };
        if out.last() != Some(&next) {
            out.push(next);
        }
    }
    out
}

/// `D_eps(X)`: jump times with `|Delta X| > eps`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpSet {
    pub threshold: f64,
    pub times: Vec<f64>,
}

/// A path of finite variation. Every piecewise path is one; the wrapper marks
/// paths used as integrators or as values of quadratic variations.
#[derive(Debug, Clone, PartialEq)]
pub struct FvPath(pub(crate) CadlagPath);

impl FvPath {
    pub fn new(path: CadlagPath) -> Self {
        Self(path)
    }

    pub fn path(&self) -> &CadlagPath {
        &self.0
    }

    pub fn into_inner(self) -> CadlagPath {
        self.0
    }
}

impl Deref for FvPath {
    type Target = CadlagPath;

    fn deref(&self) -> &CadlagPath {
        &self.0
    }
}

/// `sup_f V(f; [a, b])` over a finite family.
pub fn family_variation(paths: &[&CadlagPath], a: f64, b: f64, norm: NormChoice) -> Result<f64> {
    if paths.is_empty() {
        return Err(Error::Domain("family must be nonempty".into()));
    }
    let horizon = paths[0].horizon();
    let mut best: f64 = 0.0;
    for p in paths {
        if p.horizon() != horizon {
            return Err(Error::Invalid("family members have different horizons".into()));
        }
        best = best.max(p.total_variation(a, b, norm)?);
    }
    Ok(best)
}
