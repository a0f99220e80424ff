//! Bounded bilinear maps `B: R^d x R^d -> R^m`.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::generators::rng::SplitMix;
use crate::norm::{singular_values, CrossnormChoice};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BilinearKind {
    /// Euclidean inner product into R.
    Inner,
    /// `x (x) y` as the row-major d x d matrix `x y^T`.
    Outer,
    /// `B(x, y)_k = sum_ij c[k][i][j] x_i y_j`.
    Coefficients,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMethod {
    Exact,
    /// Alternating maximisation over unit spheres from deterministic restarts.
    PowerIteration { restarts: u32 },
}

/// `|B|`, with the way it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FormNorm {
    pub value: f64,
    pub method: NormMethod,
    /// Guaranteed upper bound (`min(sum |c|, |c|_F)` for coefficient forms).
    pub upper_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BilinearForm {
    kind: BilinearKind,
    in_dim: usize,
    out_dim: usize,
    coeffs: Vec<f64>,
}

impl BilinearForm {
    pub fn inner(d: usize) -> Self {
        Self { kind: BilinearKind::Inner, in_dim: d, out_dim: 1, coeffs: Vec::new() }
    }

    pub fn outer(d: usize) -> Self {
        Self { kind: BilinearKind::Outer, in_dim: d, out_dim: d * d, coeffs: Vec::new() }
    }

    /// Coefficient tensor laid out as `c[(k * d + i) * d + j]`.
    pub fn coefficients(d: usize, m: usize, coeffs: Vec<f64>) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::Invalid("bilinear form dimensions must be positive".into()));
        }
        check_dim(m * d * d, coeffs.len())?;
        Ok(Self { kind: BilinearKind::Coefficients, in_dim: d, out_dim: m, coeffs })
    }

    pub fn kind(&self) -> BilinearKind {
        self.kind
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Shape of a value: `(d, d)` for the outer product, `(m, 1)` otherwise.
    pub fn shape(&self) -> (usize, usize) {
        match self.kind {
            BilinearKind::Outer => (self.in_dim, self.in_dim),
            _ => (self.out_dim, 1),
        }
    }

    /// Full coefficient tensor whatever the kind.
    pub fn coefficient_tensor(&self) -> Vec<f64> {
        let d = self.in_dim;
        match self.kind {
            BilinearKind::Coefficients => self.coeffs.clone(),
            BilinearKind::Inner => {
                let mut c = vec![0.0; d * d];
                for i in 0..d {
                    c[i * d + i] = 1.0;
                }
                c
            }
            BilinearKind::Outer => {
                let mut c = vec![0.0; d * d * d * d];
                for i in 0..d {
                    for j in 0..d {
                        let k = i * d + j;
                        c[(k * d + i) * d + j] = 1.0;
                    }
                }
                c
            }
        }
    }

    /// `out += B(x, y)`.
    #[inline]
    pub fn accumulate(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        let d = self.in_dim;
        match self.kind {
            BilinearKind::Inner => {
                let mut s = 0.0;
                for i in 0..d {
                    s += x[i] * y[i];
                }
                out[0] += s;
            }
            BilinearKind::Outer => {
                for i in 0..d {
                    for j in 0..d {
                        out[i * d + j] += x[i] * y[j];
                    }
                }
            }
            BilinearKind::Coefficients => {
                for (k, o) in out.iter_mut().enumerate().take(self.out_dim) {
                    let mut s = 0.0;
                    for i in 0..d {
                        for j in 0..d {
                            s += self.coeffs[(k * d + i) * d + j] * x[i] * y[j];
                        }
                    }
                    *o += s;
                }
            }
        }
    }

    pub fn apply(&self, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.in_dim, x.len())?;
        check_dim(self.in_dim, y.len())?;
        let mut out = vec![0.0; self.out_dim];
        self.accumulate(x, y, &mut out);
        Ok(out)
    }

    /// `B' o (T1 x T2)` for `self = B'` on `R^e`, with `T1, T2` row-major `e x d`.
    pub fn pull_back(&self, t1: &[f64], t2: &[f64], d: usize) -> Result<Self> {
        let e = self.in_dim;
        check_dim(e * d, t1.len())?;
        check_dim(e * d, t2.len())?;
        let c = self.coefficient_tensor();
        let m = self.out_dim;
        let mut out = vec![0.0; m * d * d];
        for k in 0..m {
            for a in 0..e {
                for b in 0..e {
                    let cab = c[(k * e + a) * e + b];
                    if cab == 0.0 {
                        continue;
                    }
                    for i in 0..d {
                        for j in 0..d {
                            out[(k * d + i) * d + j] += cab * t1[a * d + i] * t2[b * d + j];
                        }
                    }
                }
            }
        }
        Self::coefficients(d, m, out)
    }

    /// `T o B` for a row-major `k x m` matrix `T`.
    pub fn push_forward(&self, t: &[f64], k: usize) -> Result<Self> {
        let m = self.out_dim;
        let d = self.in_dim;
        check_dim(k * m, t.len())?;
        let c = self.coefficient_tensor();
        let mut out = vec![0.0; k * d * d];
        for r in 0..k {
            for s in 0..m {
                let w = t[r * m + s];
                for ij in 0..d * d {
                    out[r * d * d + ij] += w * c[s * d * d + ij];
                }
            }
        }
        Self::coefficients(d, k, out)
    }

    /// `B - B'` as a coefficient form.
    pub fn difference(&self, other: &Self) -> Result<Self> {
        check_dim(self.in_dim, other.in_dim)?;
        check_dim(self.out_dim, other.out_dim)?;
        let a = self.coefficient_tensor();
        let b = other.coefficient_tensor();
        Self::coefficients(self.in_dim, self.out_dim, a.iter().zip(&b).map(|(x, y)| x - y).collect())
    }

    /// `|B| = sup_{|x| = |y| = 1} |B(x, y)|` with Euclidean norms on the factors.
    /// For the outer product the value is measured in the given crossnorm,
    /// which is 1 for every reasonable crossnorm.
    pub fn operator_norm(&self, _crossnorm: CrossnormChoice) -> FormNorm {
        match self.kind {
            BilinearKind::Inner | BilinearKind::Outer => {
                FormNorm { value: 1.0, method: NormMethod::Exact, upper_bound: 1.0 }
            }
            BilinearKind::Coefficients => self.estimate_norm(64, 0x5eed),
        }
    }

    fn estimate_norm(&self, restarts: u32, seed: u64) -> FormNorm {
        let d = self.in_dim;
        let m = self.out_dim;
        let c = &self.coeffs;
        let l1: f64 = c.iter().map(|v| v.abs()).sum();
        let fro: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        // M_y[k][i] = sum_j c[k][i][j] y_j, and the symmetric counterpart
        let contract_y = |y: &[f64]| -> Vec<f64> {
            let mut mat = vec![0.0; m * d];
            for k in 0..m {
                for i in 0..d {
                    mat[k * d + i] = (0..d).map(|j| c[(k * d + i) * d + j] * y[j]).sum();
                }
            }
            mat
        };
        let contract_x = |x: &[f64]| -> Vec<f64> {
            let mut mat = vec![0.0; m * d];
            for k in 0..m {
                for j in 0..d {
                    mat[k * d + j] = (0..d).map(|i| c[(k * d + i) * d + j] * x[i]).sum();
                }
            }
            mat
        };
        let top_right = |mat: &[f64]| -> (f64, Vec<f64>) {
            let a = nalgebra::DMatrix::from_row_slice(m, d, mat);
            let svd = a.svd(false, true);
            let vt = svd.v_t.expect("requested");
            let (idx, s) = svd
                .singular_values
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
            (s.max(0.0), vt.row(idx).iter().copied().collect())
        };

        let mut rng = SplitMix::new(seed);
        let mut best: f64 = 0.0;
        for _ in 0..restarts {
            let mut y: Vec<f64> = (0..d).map(|_| rng.next_f64() - 0.5).collect();
            let n = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            y.iter_mut().for_each(|v| *v /= n);
            let mut val = 0.0;
            for _ in 0..100 {
                let (_, x) = top_right(&contract_y(&y));
                let (s, ny) = top_right(&contract_x(&x));
                y = ny;
                if (s - val).abs() <= 1e-15 * s.max(1.0) {
                    val = s;
                    break;
                }
                val = s;
            }
            best = best.max(val);
        }
        FormNorm {
            value: best.min(l1.min(fro)),
            method: NormMethod::PowerIteration { restarts },
            upper_bound: l1.min(fro),
        }
    }
}

/// Largest singular value, used for `|T|` of linear maps on values.
pub fn linear_map_norm(t: &[f64], rows: usize, cols: usize) -> f64 {
    singular_values(t, rows, cols).into_iter().fold(0.0, f64::max)
}
