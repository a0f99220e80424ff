//! Ground norms on R^d and crossnorms on d x d matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm of the state space R^d.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormChoice {
    #[default]
    Euclidean,
    L1,
    LInf,
}

impl NormChoice {
    pub fn norm(self, x: &[f64]) -> f64 {
        match self {
            NormChoice::Euclidean => x.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormChoice::L1 => x.iter().map(|v| v.abs()).sum(),
            NormChoice::LInf => x.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    pub fn norm_sq(self, x: &[f64]) -> f64 {
        match self {
            NormChoice::Euclidean => x.iter().map(|v| v * v).sum(),
            _ => {
                let n = self.norm(x);
                n * n
            }
        }
    }

    pub fn dist(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            NormChoice::Euclidean => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                .sqrt(),
            NormChoice::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
            NormChoice::LInf => a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs())),
        }
    }

    /// Largest pairwise distance in a point cloud stored row-major with `dim`
    /// coordinates per point.
    ///
    /// L1 and LInf use the linear-time support-function identities; the
    /// Euclidean case is an exact pairwise search pruned by bounding-box
    /// distance bounds.
    pub fn diameter(self, points: &[f64], dim: usize) -> f64 {
        if dim == 0 || points.len() <= dim {
            return 0.0;
        }
        let n = points.len() / dim;
        let pt = |i: usize| &points[i * dim..(i + 1) * dim];
        if dim == 1 {
            let (lo, hi) = points
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            return hi - lo;
        }
        match self {
            NormChoice::LInf => (0..dim)
                .map(|k| {
                    let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                        let v = pt(i)[k];
                        (lo.min(v), hi.max(v))
                    });
                    hi - lo
                })
                .fold(0.0, f64::max),
            NormChoice::L1 => {
                // max over sign patterns s of (max s.x - min s.x); fixing s_0 = +1 suffices.
                let mut best: f64 = 0.0;
                for mask in 0..(1usize << (dim - 1)) {
                    let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                        let p = pt(i);
                        let mut v = p[0];
                        for (k, x) in p.iter().enumerate().skip(1) {
                            if mask >> (k - 1) & 1 == 1 {
                                v -= x;
                            } else {
                                v += x;
                            }
                        }
                        (lo.min(v), hi.max(v))
                    });
                    best = best.max(hi - lo);
                }
                best
            }
            NormChoice::Euclidean => {
                let mut lo = vec![f64::INFINITY; dim];
                let mut hi = vec![f64::NEG_INFINITY; dim];
                for i in 0..n {
                    for (k, &v) in pt(i).iter().enumerate() {
                        lo[k] = lo[k].min(v);
                        hi[k] = hi[k].max(v);
                    }
                }
                // farthest possible partner of each point lies at a box corner
                let mut bounds: Vec<(f64, usize)> = (0..n)
                    .map(|i| {
                        let b = pt(i)
                            .iter()
                            .enumerate()
                            .map(|(k, &v)| {
                                let e = (v - lo[k]).max(hi[k] - v);
                                e * e
                            })
                            .sum::<f64>();
                        (b, i)
                    })
                    .collect();
                bounds.sort_by(|a, b| b.0.total_cmp(&a.0));
                let mut best_sq: f64 = 0.0;
                for &(bound, i) in &bounds {
                    if bound <= best_sq {
                        break;
                    }
                    let p = pt(i);
                    for j in 0..n {
                        let q = pt(j);
                        let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
                        if d2 > best_sq {
                            best_sq = d2;
                        }
                    }
                }
                best_sq.sqrt()
            }
        }
    }
}

/// Crossnorm on R^d (x) R^d, realised on d x d matrices with the Euclidean
/// ground norm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CrossnormChoice {
    /// Nuclear norm (sum of singular values); the greatest crossnorm.
    #[default]
    Projective,
    /// Spectral norm (largest singular value); the least crossnorm.
    Injective,
    /// Frobenius norm.
    Hilbertian,
}

impl CrossnormChoice {
    /// Norm of a row-major `rows x cols` matrix.
    pub fn matrix_norm(self, values: &[f64], rows: usize, cols: usize) -> f64 {
        debug_assert_eq!(values.len(), rows * cols);
        match self {
            CrossnormChoice::Hilbertian => values.iter().map(|v| v * v).sum::<f64>().sqrt(),
            CrossnormChoice::Projective => singular_values(values, rows, cols).iter().sum(),
            CrossnormChoice::Injective => singular_values(values, rows, cols)
                .iter()
                .fold(0.0, |m, &s| m.max(s)),
        }
    }

    /// The projective crossnorm only has a closed form over a Hilbert ground norm.
    pub fn require_compatible(self, ground: NormChoice) -> Result<()> {
        if ground != NormChoice::Euclidean {
            return Err(Error::Unsupported(format!(
                "{self:?} crossnorm is only computable over the Euclidean ground norm, got {ground:?}"
            )));
        }
        Ok(())
    }
}

pub fn singular_values(values: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    if rows == 0 || cols == 0 {
        return Vec::new();
    }
    if rows == 1 || cols == 1 {
        return vec![values.iter().map(|v| v * v).sum::<f64>().sqrt()];
    }
    let m = DMatrix::from_row_slice(rows, cols, values);
    m.singular_values().iter().copied().collect()
}

/// Operator norm (Euclidean to Euclidean) of a row-major `rows x cols` matrix.
pub fn spectral_norm(values: &[f64], rows: usize, cols: usize) -> f64 {
    singular_values(values, rows, cols).into_iter().fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_diameter(norm: NormChoice, pts: &[f64], dim: usize) -> f64 {
        let n = pts.len() / dim;
        let mut best: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                best = best.max(norm.dist(&pts[i * dim..(i + 1) * dim], &pts[j * dim..(j + 1) * dim]));
            }
        }
        best
    }

    #[test]
    fn norm_axioms_on_samples() {
        let xs = [[1.0, -2.0, 0.5], [0.0, 3.0, -4.0], [-1.5, 0.25, 2.0]];
        for norm in [NormChoice::Euclidean, NormChoice::L1, NormChoice::LInf] {
            assert_eq!(norm.norm(&[0.0, 0.0, 0.0]), 0.0);
            for x in &xs {
                let scaled: Vec<f64> = x.iter().map(|v| -2.5 * v).collect();
                assert!((norm.norm(&scaled) - 2.5 * norm.norm(x)).abs() < 1e-12);
                for y in &xs {
                    let s: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
                    assert!(norm.norm(&s) <= norm.norm(x) + norm.norm(y) + 1e-12);
                }
            }
        }
        assert_eq!(NormChoice::LInf.norm(&[3.0, -4.0]), 4.0);
        assert_eq!(NormChoice::L1.norm(&[3.0, -4.0]), 7.0);
        assert_eq!(NormChoice::Euclidean.norm(&[3.0, -4.0]), 5.0);
    }

    #[test]
    fn diameter_matches_brute_force() {
        let mut pts = Vec::new();
        let mut s: u64 = 12345;
        for _ in 0..300 {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            pts.push((s >> 11) as f64 / (1u64 << 53) as f64 - 0.5);
        }
        for dim in [1, 2, 3] {
            let pts = &pts[..(pts.len() / dim) * dim];
            for norm in [NormChoice::Euclidean, NormChoice::L1, NormChoice::LInf] {
                let a = norm.diameter(pts, dim);
                let b = brute_diameter(norm, pts, dim);
                assert!((a - b).abs() < 1e-12, "{norm:?} dim {dim}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn crossnorms_agree_on_rank_one() {
        let v = [1.0, 2.0, -0.5];
        let w = [0.3, -1.0, 2.0];
        let m: Vec<f64> = v.iter().flat_map(|a| w.iter().map(move |b| a * b)).collect();
        let expected = NormChoice::Euclidean.norm(&v) * NormChoice::Euclidean.norm(&w);
        for c in [CrossnormChoice::Projective, CrossnormChoice::Injective, CrossnormChoice::Hilbertian] {
            assert!((c.matrix_norm(&m, 3, 3) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn crossnorm_sandwich() {
        let m = [2.0, -1.0, 0.5, 1.0, 3.0, 0.0, -0.25, 0.5, 1.5];
        let inj = CrossnormChoice::Injective.matrix_norm(&m, 3, 3);
        let hil = CrossnormChoice::Hilbertian.matrix_norm(&m, 3, 3);
        let proj = CrossnormChoice::Projective.matrix_norm(&m, 3, 3);
        assert!(inj <= hil + 1e-12 && hil <= proj + 1e-12);
    }

    #[test]
    fn projective_rejects_non_hilbert_ground() {
        assert!(CrossnormChoice::Projective.require_compatible(NormChoice::L1).is_err());
        assert!(CrossnormChoice::Projective.require_compatible(NormChoice::Euclidean).is_ok());
    }
}
