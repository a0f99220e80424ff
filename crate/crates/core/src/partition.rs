//! Finite partitions of `[0, T]` into half-open pieces `]t_i, t_{i+1}]` and
//! refining sequences of them.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::norm::NormChoice;
use crate::path::{merge_sorted, CadlagPath, Side};

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    /// `n` equal pieces; point `i` is `i * T / n`
    Uniform { horizon: f64, n: u64 },
    Points(Arc<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    repr: Repr,
}

/// A located piece `]lower, upper]` of a partition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub lower: f64,
    pub upper: f64,
    pub index: usize,
}

impl Partition {
    /// `n` equal pieces of `[0, horizon]`. Points are computed as
    /// `(i * T) / n`, so dyadic levels are exactly nested.
    pub fn uniform(horizon: f64, n: u64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Invalid("horizon must be positive".into()));
        }
        if n == 0 {
            return Err(Error::Invalid("partition needs at least one piece".into()));
        }
        Ok(Self { repr: Repr::Uniform { horizon, n } })
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 || points[0] != 0.0 {
            return Err(Error::Invalid("partition points must start at 0 and have >= 2 entries".into()));
        }
        if points.iter().any(|p| !p.is_finite()) || points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Invalid("partition points must be strictly increasing".into()));
        }
        Ok(Self { repr: Repr::Points(Arc::new(points)) })
    }

    pub fn horizon(&self) -> f64 {
        match &self.repr {
            Repr::Uniform { horizon, .. } => *horizon,
            Repr::Points(p) => *p.last().unwrap(),
        }
    }

    /// Number of pieces.
    pub fn len(&self) -> usize {
        match &self.repr {
            Repr::Uniform { n, .. } => *n as usize,
            Repr::Points(p) => p.len() - 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, i: usize) -> f64 {
        match &self.repr {
            Repr::Uniform { horizon, n } => {
                if i as u64 >= *n {
                    *horizon
                } else {
                    (i as f64 * horizon) / *n as f64
                }
            }
            Repr::Points(p) => p[i],
        }
    }

    pub fn points(&self) -> Vec<f64> {
        match &self.repr {
            Repr::Uniform { .. } => (0..=self.len()).map(|i| self.point(i)).collect(),
            Repr::Points(p) => p.as_ref().clone(),
        }
    }

    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.len()).map(move |i| (self.point(i), self.point(i + 1)))
    }

    pub fn mesh(&self) -> f64 {
        match &self.repr {
            Repr::Uniform { horizon, n } => horizon / *n as f64,
            Repr::Points(p) => p.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max),
        }
    }

    /// The piece `]r, s]` containing `t`, for `0 < t <= T`.
    pub fn locate(&self, t: f64) -> Result<Piece> {
        let horizon = self.horizon();
        if !(t > 0.0 && t <= horizon) {
            return Err(Error::Domain(format!("time {t} outside ]0, {horizon}]")));
        }
        let j = match &self.repr {
            Repr::Uniform { horizon, n } => {
                let n = *n as usize;
                let mut j = ((t / horizon) * n as f64).ceil().clamp(1.0, n as f64) as usize;
                while j > 1 && self.point(j - 1) >= t {
                    j -= 1;
                }
                while j < n && self.point(j) < t {
                    j += 1;
                }
                j
            }
            // first point >= t is the right end
            Repr::Points(p) => p.partition_point(|&x| x < t),
        };
        Ok(Piece { lower: self.point(j - 1), upper: self.point(j), index: j - 1 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceKind {
    Dyadic { n_min: u32, n_max: u32 },
    UniformMesh { meshes: Vec<f64> },
    OscillationControlled { eps: Vec<f64> },
    Explicit,
}

/// A finite prefix `(pi_n)` of a partition sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct PartitionSequence {
    horizon: f64,
    kind: SequenceKind,
    levels: Vec<Partition>,
    labels: Vec<u32>,
}

impl PartitionSequence {
    /// Dyadic levels `0..=n_max`; level `n` has `2^n` pieces.
    pub fn dyadic(horizon: f64, n_max: u32) -> Result<Self> {
        if n_max < 1 {
            return Err(Error::Invalid("dyadic sequence needs n_max >= 1".into()));
        }
        Self::dyadic_range(horizon, 0, n_max)
    }

    pub fn dyadic_range(horizon: f64, n_min: u32, n_max: u32) -> Result<Self> {
        if n_min > n_max || n_max > 60 {
            return Err(Error::Invalid(format!("bad dyadic level range {n_min}..={n_max}")));
        }
        let levels = (n_min..=n_max)
            .map(|n| Partition::uniform(horizon, 1u64 << n))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            horizon,
            kind: SequenceKind::Dyadic { n_min, n_max },
            levels,
            labels: (n_min..=n_max).collect(),
        })
    }

    /// One level per mesh size; meshes must strictly decrease.
    pub fn uniform_mesh(horizon: f64, meshes: &[f64]) -> Result<Self> {
        if meshes.is_empty() || meshes.iter().any(|&h| !(h > 0.0)) {
            return Err(Error::Invalid("meshes must be positive".into()));
        }
        if meshes.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Invalid("meshes must be strictly decreasing".into()));
        }
        let mut levels = Vec::new();
        for &h in meshes {
            let n = (horizon / h).ceil() as u64;
            let mut pts: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
            pts.push(horizon);
            // drop a sliver last piece produced by rounding
            if pts.len() > 2 && horizon - pts[pts.len() - 2] < 1e-12 * horizon {
                pts.remove(pts.len() - 2);
            }
            levels.push(Partition::from_points(pts)?);
        }
        Ok(Self {
            horizon,
            kind: SequenceKind::UniformMesh { meshes: meshes.to_vec() },
            labels: (0..levels.len() as u32).collect(),
            levels,
        })
    }

    pub fn explicit(levels: Vec<Partition>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::Invalid("explicit sequence needs at least one level".into()));
        }
        let horizon = levels[0].horizon();
        if levels.iter().any(|p| p.horizon() != horizon) {
            return Err(Error::Invalid("all levels must share the horizon".into()));
        }
        Ok(Self {
            horizon,
            kind: SequenceKind::Explicit,
            labels: (0..levels.len() as u32).collect(),
            levels,
        })
    }

    /// Greedy left-to-right construction: level `k` satisfies
    /// `max_f O^-_T(f, pi_k) < eps[k]`. Cuts are placed only at breakpoints
    /// of the family (grid and jump times).
    pub fn oscillation_controlled(family: &[&CadlagPath], eps: &[f64], norm: NormChoice) -> Result<Self> {
        if family.is_empty() {
            return Err(Error::Domain("family must be nonempty".into()));
        }
        if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0)) || eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Invalid("eps schedule must be positive and strictly decreasing".into()));
        }
        let horizon = family[0].horizon();
        if family.iter().any(|f| f.horizon() != horizon) {
            return Err(Error::Invalid("family members have different horizons".into()));
        }
        let mut candidates: Vec<f64> = Vec::new();
        for f in family {
            let own: Vec<f64> = match f.interp() {
                crate::path::Interp::PiecewiseLinear => {
                    merge_sorted(f.grid(), f.jumps().iter().map(|j| j.time))
                }
                crate::path::Interp::PiecewiseConstantRight => {
                    let mut v = vec![0.0];
                    v.extend(f.jumps().iter().map(|j| j.time));
                    v.push(horizon);
                    v.dedup();
                    v
                }
            };
            candidates = merge_sorted(&candidates, own.into_iter());
        }
        candidates.retain(|&c| c > 0.0);

        let levels = eps
            .iter()
            .map(|&e| greedy_level(family, &candidates, e, norm))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            horizon,
            kind: SequenceKind::OscillationControlled { eps: eps.to_vec() },
            labels: (0..levels.len() as u32).collect(),
            levels,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn kind(&self) -> &SequenceKind {
        &self.kind
    }

    pub fn levels(&self) -> &[Partition] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &Partition {
        &self.levels[k]
    }

    /// Level number of the `k`-th stored partition (e.g. `n` for dyadic `2^n`).
    pub fn label(&self, k: usize) -> u32 {
        self.labels[k]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    /// Sub-sequence of the last `n` levels.
    pub fn tail(&self, n: usize) -> Self {
        let start = self.levels.len().saturating_sub(n);
        Self {
            horizon: self.horizon,
            kind: self.kind.clone(),
            levels: self.levels[start..].to_vec(),
            labels: self.labels[start..].to_vec(),
        }
    }
}

struct PieceState {
    dim: usize,
    pts: Vec<f64>,
    diam: f64,
    // coordinatewise bounds, enough for the diameter when dim = 1 or under LInf
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl PieceState {
    fn start(dim: usize, p: Vec<f64>) -> Self {
        Self { dim, lo: p.clone(), hi: p.clone(), pts: p, diam: 0.0 }
    }

    fn diam_with(&self, q: &[f64], norm: NormChoice) -> f64 {
        if self.dim == 1 || norm == NormChoice::LInf {
            return (0..self.dim)
                .map(|c| self.hi[c].max(q[c]) - self.lo[c].min(q[c]))
                .fold(self.diam, f64::max);
        }
        match norm {
            NormChoice::Euclidean => {
                let far = self
                    .pts
                    .chunks(self.dim)
                    .map(|p| p.iter().zip(q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
                    .fold(0.0, f64::max);
                self.diam.max(far.sqrt())
            }
            _ => self.pts.chunks(self.dim).map(|p| norm.dist(p, q)).fold(self.diam, f64::max),
        }
    }

    fn push(&mut self, q: Vec<f64>, diam: f64) {
        for c in 0..self.dim {
            self.lo[c] = self.lo[c].min(q[c]);
            self.hi[c] = self.hi[c].max(q[c]);
        }
        self.pts.extend(q);
        self.diam = diam;
    }
}

fn greedy_level(family: &[&CadlagPath], candidates: &[f64], eps: f64, norm: NormChoice) -> Result<Partition> {
    let restart = |r: f64| -> Vec<PieceState> {
        family.iter().map(|f| PieceState::start(f.dim(), f.value(r))).collect()
    };
    let mut cuts = vec![0.0];
    let mut state = restart(0.0);
    let mut last_ok: Option<f64> = None;
    let mut i = 0;
    while i < candidates.len() {
        let c = candidates[i];
        let lefts: Vec<Vec<f64>> = family.iter().map(|f| f.left(c)).collect();
        let diams: Vec<f64> = state.iter().zip(&lefts).map(|(s, l)| s.diam_with(l, norm)).collect();
        if diams.iter().all(|&d| d < eps) {
            // [r, c[ is admissible
            for ((s, l), d) in state.iter_mut().zip(lefts).zip(diams) {
                s.push(l, d);
            }
            if c == *candidates.last().unwrap() {
                break;
            }
            let values: Vec<Vec<f64>> = family.iter().map(|f| f.value(c)).collect();
            let vd: Vec<f64> = state
                .iter()
                .zip(&values)
                .map(|(s, v)| if s.pts.ends_with(v) { s.diam } else { s.diam_with(v, norm) })
                .collect();
            if vd.iter().all(|&d| d < eps) {
                for ((s, v), d) in state.iter_mut().zip(values).zip(vd) {
                    if !s.pts.ends_with(&v) {
                        s.push(v, d);
                    }
                }
                last_ok = Some(c);
            } else {
                cuts.push(c);
                state = restart(c);
                last_ok = None;
            }
            i += 1;
        } else {
            match last_ok.take() {
                Some(prev) => {
                    cuts.push(prev);
                    state = restart(prev);
                    // re-examine c against the fresh piece
                }
                None => {
                    return Err(Error::Inconclusive(format!(
                        "oscillation on [{}, {c}[ already reaches eps = {eps}; refine the path grid",
                        cuts.last().unwrap()
                    )));
                }
            }
        }
    }
    let horizon = *candidates.last().unwrap();
    if *cuts.last().unwrap() != horizon {
        cuts.push(horizon);
    }
    Partition::from_points(cuts)
}

/// `max_f O^-_T(f, pi)` over a family, used to certify oscillation-controlled levels.
pub fn family_osc_minus(family: &[&CadlagPath], partition: &Partition, norm: NormChoice) -> Result<f64> {
    let mut best: f64 = 0.0;
    for f in family {
        best = best.max(f.osc_along(partition, f.horizon(), Side::Minus, norm)?);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::Jump;

    #[test]
    fn locate_examples() {
        let p = Partition::uniform(1.0, 2).unwrap();
        let a = p.locate(0.5).unwrap();
        assert_eq!((a.lower, a.upper), (0.0, 0.5));
        let b = p.locate(0.500001).unwrap();
        assert_eq!((b.lower, b.upper), (0.5, 1.0));
        let c = p.locate(1.0).unwrap();
        assert_eq!((c.lower, c.upper, c.index), (0.5, 1.0, 1));
        assert!(p.locate(0.0).is_err());
        assert!(p.locate(1.1).is_err());
    }

    #[test]
    fn locate_points_repr() {
        let p = Partition::from_points(vec![0.0, 0.1, 0.7, 1.0]).unwrap();
        let x = p.locate(0.7).unwrap();
        assert_eq!((x.lower, x.upper, x.index), (0.1, 0.7, 1));
        let y = p.locate(0.05).unwrap();
        assert_eq!((y.lower, y.upper), (0.0, 0.1));
    }

    #[test]
    fn dyadic_examples() {
        let seq = PartitionSequence::dyadic(1.0, 10).unwrap();
        assert_eq!(
            seq.level(3).points(),
            (0..=8).map(|k| k as f64 / 8.0).collect::<Vec<_>>()
        );
        assert_eq!(seq.level(10).mesh(), 2f64.powi(-10));
        for n in 0..=10 {
            assert_eq!(seq.level(n).points().len(), (1 << n) + 1);
        }
        assert!(PartitionSequence::dyadic(1.0, 0).is_err());
    }

    #[test]
    fn dyadic_levels_nested() {
        let seq = PartitionSequence::dyadic(0.7, 9).unwrap();
        for n in 0..9 {
            let coarse = seq.level(n);
            let fine = seq.level(n + 1);
            for i in 0..=coarse.len() {
                assert_eq!(coarse.point(i), fine.point(2 * i));
            }
        }
    }

    #[test]
    fn uniform_mesh_sequence() {
        let seq = PartitionSequence::uniform_mesh(1.0, &[0.3, 0.1, 0.01]).unwrap();
        assert_eq!(seq.level(0).points(), vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
        assert!(seq.level(2).mesh() <= 0.01 + 1e-15);
        assert!(PartitionSequence::uniform_mesh(1.0, &[0.1, 0.2]).is_err());
    }

    #[test]
    fn osc_controlled_linear() {
        // slope 1 on a 2^10 grid, eps = 1/4: pieces of 255/1024 since O^- must stay strictly below eps
        let n = 1024;
        let grid: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
        let path = CadlagPath::linear(1, grid.clone(), grid).unwrap();
        let seq = PartitionSequence::oscillation_controlled(&[&path], &[0.25], NormChoice::Euclidean).unwrap();
        let pts = seq.level(0).points();
        assert_eq!(pts.len(), 6);
        for w in pts.windows(2).take(4) {
            assert_eq!(w[1] - w[0], 255.0 / 1024.0);
        }
        assert!(family_osc_minus(&[&path], seq.level(0), NormChoice::Euclidean).unwrap() < 0.25);
    }

    #[test]
    fn osc_controlled_cuts_at_jump() {
        let path = CadlagPath::pure_jump(1, 1.0, &[0.0], vec![Jump::new(0.37, vec![2.0])]).unwrap();
        for eps in [0.1, 1.0, 5.0] {
            let seq = PartitionSequence::oscillation_controlled(&[&path], &[eps], NormChoice::Euclidean).unwrap();
            let pts = seq.level(0).points();
            let osc = family_osc_minus(&[&path], seq.level(0), NormChoice::Euclidean).unwrap();
            if eps < 2.0 {
                assert_eq!(pts, vec![0.0, 0.37, 1.0]);
                assert_eq!(osc, 0.0);
            } else {
                assert!(osc < eps);
            }
        }
    }

    #[test]
    fn osc_controlled_constant_path() {
        let path = CadlagPath::zero(2, 3.0).unwrap();
        let seq = PartitionSequence::oscillation_controlled(&[&path], &[0.5, 0.1], NormChoice::Euclidean).unwrap();
        assert_eq!(seq.level(1).points(), vec![0.0, 3.0]);
    }

    #[test]
    fn osc_controlled_resolution_error() {
        let path = CadlagPath::linear(1, vec![0.0, 1.0], vec![0.0, 1.0]).unwrap();
        let err = PartitionSequence::oscillation_controlled(&[&path], &[0.5], NormChoice::Euclidean);
        assert!(matches!(err, Err(Error::Inconclusive(_))));
    }
}
