//! Smooth functions `f(a, x)` with analytic derivatives, and time-dependent
//! functionals `f(t, x) = g(A_t, x)` driven by a finite-variation path.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::generators::rng::SplitMix;
use crate::norm::NormChoice;
use crate::path::{family_variation, CadlagPath, Interp, Jump};

/// `(a, x, out)`; writes into `out`, which arrives zeroed.
pub type Evaluator = Arc<dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Smoothness {
    /// Continuously differentiable.
    C1,
    /// `C^1` in `a` and `C^2` in `x`.
    C12,
}

/// `f: R^p x R^d -> R^q` with `D_a f` (`q x p`), `D_x f` (`q x d`) and
/// optionally `D_x^2 f` (`q x d x d`), all row-major.
#[derive(Clone)]
pub struct SmoothFunction {
    p: usize,
    d: usize,
    q: usize,
    f: Evaluator,
    da: Option<Evaluator>,
    dx: Evaluator,
    dxx: Option<Evaluator>,
    smoothness: Smoothness,
    description: String,
}

impl fmt::Debug for SmoothFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SmoothFunction")
            .field("p", &self.p)
            .field("d", &self.d)
            .field("q", &self.q)
            .field("smoothness", &self.smoothness)
            .field("description", &self.description)
            .finish()
    }
}

const FD_REL_TOL: f64 = 1e-5;

fn fd_step(v: f64) -> f64 {
    1e-5 * (1.0 + v.abs())
}

impl SmoothFunction {
    /// Validates the derivatives against central differences at sampled points.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        p: usize,
        d: usize,
        q: usize,
        f: Evaluator,
        da: Option<Evaluator>,
        dx: Evaluator,
        dxx: Option<Evaluator>,
        smoothness: Smoothness,
        description: impl Into<String>,
    ) -> Result<Self> {
        if d == 0 || q == 0 {
            return Err(Error::Invalid("x and output dimensions must be positive".into()));
        }
        if p > 0 && da.is_none() {
            return Err(Error::Invalid("D_a f is required when the parameter space is nontrivial".into()));
        }
        if smoothness == Smoothness::C12 && dxx.is_none() {
            return Err(Error::Invalid("a C12 function needs D_x^2 f".into()));
        }
        let sf = Self { p, d, q, f, da, dx, dxx, smoothness, description: description.into() };
        sf.validate()?;
        Ok(sf)
    }

    fn validate(&self) -> Result<()> {
        let (p, d, q) = (self.p, self.d, self.q);
        let mut rng = SplitMix::new(0xfd);
        for _ in 0..8 {
            let a: Vec<f64> = (0..p).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
            let x: Vec<f64> = (0..d).map(|_| 2.0 * rng.next_f64() - 1.0).collect();
            let check = |name: &str, analytic: f64, fd: f64| -> Result<()> {
                if (analytic - fd).abs() > FD_REL_TOL * (1.0 + analytic.abs()) {
                    return Err(Error::Validation(format!(
                        "{name} of '{}' disagrees with finite differences: {analytic} vs {fd}",
                        self.description
                    )));
                }
                Ok(())
            };
            let dx = self.dx(&a, &x);
            for j in 0..d {
                let h = fd_step(x[j]);
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[j] += h;
                xm[j] -= h;
                let (fp, fm) = (self.eval(&a, &xp), self.eval(&a, &xm));
                for i in 0..q {
                    check("D_x f", dx[i * d + j], (fp[i] - fm[i]) / (2.0 * h))?;
                }
                if self.dxx.is_some() {
                    let (gp, gm) = (self.dx(&a, &xp), self.dx(&a, &xm));
                    let dxx = self.dxx(&a, &x).expect("present");
                    for i in 0..q {
                        for k in 0..d {
                            check("D_x^2 f", dxx[(i * d + k) * d + j], (gp[i * d + k] - gm[i * d + k]) / (2.0 * h))?;
                            let (s, t) = (dxx[(i * d + k) * d + j], dxx[(i * d + j) * d + k]);
                            if (s - t).abs() > 1e-12 * (1.0 + s.abs()) {
                                return Err(Error::Validation(format!(
                                    "D_x^2 f of '{}' is not symmetric",
                                    self.description
                                )));
                            }
                        }
                    }
                }
            }
            if p > 0 {
                let da = self.da(&a, &x);
                for j in 0..p {
                    let h = fd_step(a[j]);
                    let (mut ap, mut am) = (a.clone(), a.clone());
                    ap[j] += h;
                    am[j] -= h;
                    let (fp, fm) = (self.eval(&ap, &x), self.eval(&am, &x));
                    for i in 0..q {
                        check("D_a f", da[i * p + j], (fp[i] - fm[i]) / (2.0 * h))?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn has_second_derivative(&self) -> bool {
        self.dxx.is_some()
    }

    pub fn eval(&self, a: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.q];
        (self.f)(a, x, &mut out);
        out
    }

    pub fn da(&self, a: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.q * self.p];
        if let Some(da) = &self.da {
            da(a, x, &mut out);
        }
        out
    }

    pub fn dx(&self, a: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.q * self.d];
        (self.dx)(a, x, &mut out);
        out
    }

    pub fn dxx(&self, a: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let dxx = self
            .dxx
            .as_ref()
            .ok_or_else(|| Error::Unsupported(format!("'{}' has no second derivative", self.description)))?;
        let mut out = vec![0.0; self.q * self.d * self.d];
        dxx(a, x, &mut out);
        Ok(out)
    }

    pub fn require_c12(&self) -> Result<()> {
        if self.dxx.is_none() {
            return Err(Error::Unsupported(format!("'{}' is not C12", self.description)));
        }
        Ok(())
    }

    /// `|x|^2` on `R^d`.
    pub fn norm_sq(d: usize) -> Result<Self> {
        Self::new(
            0,
            d,
            1,
            Arc::new(|_, x, o| o[0] = x.iter().map(|v| v * v).sum()),
            None,
            Arc::new(|_, x, o| o.iter_mut().zip(x).for_each(|(g, v)| *g = 2.0 * v)),
            Some(Arc::new(move |_, _, o| (0..d).for_each(|i| o[i * d + i] = 2.0))),
            Smoothness::C12,
            "norm_sq",
        )
    }

    /// Componentwise `sin` on `R^d`.
    pub fn sin(d: usize) -> Result<Self> {
        Self::new(
            0,
            d,
            d,
            Arc::new(|_, x, o| o.iter_mut().zip(x).for_each(|(y, v)| *y = v.sin())),
            None,
            Arc::new(move |_, x, o| (0..d).for_each(|i| o[i * d + i] = x[i].cos())),
            Some(Arc::new(move |_, x, o| (0..d).for_each(|i| o[(i * d + i) * d + i] = -x[i].sin()))),
            Smoothness::C12,
            "sin",
        )
    }

    /// `x -> M x` for a row-major `q x d` matrix.
    pub fn linear(m: Vec<f64>, q: usize, d: usize) -> Result<Self> {
        check_dim(q * d, m.len())?;
        let m = Arc::new(m);
        let (m1, m2) = (m.clone(), m.clone());
        Self::new(
            0,
            d,
            q,
            Arc::new(move |_, x, o| {
                for (i, y) in o.iter_mut().enumerate() {
                    *y = (0..d).map(|j| m1[i * d + j] * x[j]).sum();
                }
            }),
            None,
            Arc::new(move |_, _, o| o.copy_from_slice(&m2)),
            Some(Arc::new(|_, _, _| {})),
            Smoothness::C12,
            "linear",
        )
    }

    /// `(a, x) -> a . x` on `R^d x R^d`.
    pub fn bilinear_ax(d: usize) -> Result<Self> {
        Self::new(
            d,
            d,
            1,
            Arc::new(|a, x, o| o[0] = a.iter().zip(x).map(|(p, q)| p * q).sum()),
            Some(Arc::new(|_, x, o| o.copy_from_slice(x))),
            Arc::new(|a, _, o| o.copy_from_slice(a)),
            Some(Arc::new(|_, _, _| {})),
            Smoothness::C12,
            "bilinear_ax",
        )
    }

    /// `x -> sum_i sum_k coeffs[i][k] x_i^k`, scalar valued.
    pub fn custom_poly(coeffs: Vec<Vec<f64>>) -> Result<Self> {
        let d = coeffs.len();
        let c = Arc::new(coeffs);
        let (c1, c2, c3) = (c.clone(), c.clone(), c);
        let horner = |cs: &[f64], v: f64| cs.iter().rev().fold(0.0, |acc, k| acc * v + k);
        let deriv = |cs: &[f64]| -> Vec<f64> { cs.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect() };
        Self::new(
            0,
            d,
            1,
            Arc::new(move |_, x, o| o[0] = c1.iter().zip(x).map(|(cs, &v)| horner(cs, v)).sum()),
            None,
            Arc::new(move |_, x, o| {
                for (i, (cs, &v)) in c2.iter().zip(x).enumerate() {
                    o[i] = horner(&deriv(cs), v);
                }
            }),
            Some(Arc::new(move |_, x, o| {
                for (i, (cs, &v)) in c3.iter().zip(x).enumerate() {
                    o[i * d + i] = horner(&deriv(&deriv(cs)), v);
                }
            })),
            Smoothness::C12,
            "custom_poly",
        )
    }

    /// Drop the second derivative, keeping only the `C1` structure.
    pub fn as_c1(&self) -> Self {
        Self { dxx: None, smoothness: Smoothness::C1, ..self.clone() }
    }
}

/// `f(t, x) = g(A_t, x)`, or a time-independent `g(x)` when no `A` is given.
#[derive(Debug, Clone)]
pub struct PathFunctional {
    g: SmoothFunction,
    a: Option<CadlagPath>,
}

impl PathFunctional {
    pub fn new(g: SmoothFunction, a: Option<CadlagPath>) -> Result<Self> {
        match &a {
            Some(path) => check_dim(g.p(), path.dim())?,
            None if g.p() != 0 => {
                return Err(Error::Invalid("a parameter path is needed when p > 0".into()));
            }
            None => {}
        }
        Ok(Self { g, a })
    }

    pub fn time_independent(g: SmoothFunction) -> Result<Self> {
        Self::new(g, None)
    }

    pub fn function(&self) -> &SmoothFunction {
        &self.g
    }

    pub fn parameter_path(&self) -> Option<&CadlagPath> {
        self.a.as_ref()
    }

    pub fn d(&self) -> usize {
        self.g.d()
    }

    pub fn q(&self) -> usize {
        self.g.q()
    }

    /// `A_t` (empty when time-independent).
    pub fn param(&self, t: f64) -> Vec<f64> {
        self.a.as_ref().map_or_else(Vec::new, |a| a.value(t))
    }

    /// `A_{t-}`, with `A_{0-} = A_0`.
    pub fn param_left(&self, t: f64) -> Vec<f64> {
        match &self.a {
            Some(a) if t > 0.0 => a.left(t),
            Some(a) => a.value(0.0),
            None => Vec::new(),
        }
    }

    pub fn eval(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.g.eval(&self.param(t), x)
    }

    /// `f(t-, x)`.
    pub fn eval_left(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.g.eval(&self.param_left(t), x)
    }

    pub fn dx(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.g.dx(&self.param(t), x)
    }

    pub fn dx_left(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.g.dx(&self.param_left(t), x)
    }

    /// Times at which `t -> f(t, .)` jumps.
    pub fn jump_times(&self) -> Vec<f64> {
        self.a.as_ref().map_or_else(Vec::new, |a| a.jumps().iter().map(|j| j.time).collect())
    }

    /// Breakpoints of `t -> f(t, .)` (grid of `A` and its jump times).
    pub fn time_grid(&self) -> Vec<f64> {
        self.a.as_ref().map_or_else(Vec::new, |a| {
            let mut g: Vec<f64> = a.grid().iter().copied().chain(a.jumps().iter().map(|j| j.time)).collect();
            g.sort_by(f64::total_cmp);
            g.dedup();
            g
        })
    }

    /// `t -> f(t, x)` as a cadlag path on the breakpoints of `A`.
    pub fn time_section(&self, x: &[f64], horizon: f64) -> Result<CadlagPath> {
        let mut grid = self.time_grid();
        grid.retain(|&t| t <= horizon);
        if grid.first() != Some(&0.0) {
            grid.insert(0, 0.0);
        }
        if *grid.last().unwrap() < horizon {
            grid.push(horizon);
        }
        let jumps: Vec<f64> = self.jump_times();
        composite_path(self.q(), grid, &jumps, |t| self.eval(t, x), |t| self.eval_left(t, x))
    }

    /// Variation of the family `{t -> f(t, x) : x in k_hat}` on `[0, T]`.
    pub fn family_variation(&self, k_hat: &[Vec<f64>], horizon: f64, norm: NormChoice) -> Result<f64> {
        let sections = k_hat
            .iter()
            .map(|x| {
                check_dim(self.d(), x.len())?;
                self.time_section(x, horizon)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&CadlagPath> = sections.iter().collect();
        family_variation(&refs, 0.0, horizon, norm)
    }
}

/// Cadlag path of dimension `dim` from a right-continuous evaluator `value`
/// and its left limits `left`: jumps `value(s) - left(s)` at `jump_times`,
/// continuous part sampled on `grid` (which must start at 0).
pub fn composite_path(
    dim: usize,
    grid: Vec<f64>,
    jump_times: &[f64],
    value: impl Fn(f64) -> Vec<f64>,
    left: impl Fn(f64) -> Vec<f64>,
) -> Result<CadlagPath> {
    let horizon = *grid.last().ok_or_else(|| Error::Invalid("empty grid".into()))?;
    let mut times: Vec<f64> = jump_times.iter().copied().filter(|&s| s > 0.0 && s <= horizon).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let jumps: Vec<Jump> = times
        .iter()
        .map(|&s| {
            let (v, l) = (value(s), left(s));
            Jump::new(s, v.iter().zip(&l).map(|(a, b)| a - b).collect())
        })
        .filter(|j| j.delta.iter().any(|&v| v != 0.0))
        .collect();
    let mut samples = Vec::with_capacity(grid.len() * dim);
    let mut acc = vec![0.0; dim];
    let mut k = 0;
    for &t in &grid {
        while k < jumps.len() && jumps[k].time <= t {
            for (a, b) in acc.iter_mut().zip(&jumps[k].delta) {
                *a += b;
            }
            k += 1;
        }
        let v = value(t);
        check_dim(dim, v.len())?;
        samples.extend(v.iter().zip(&acc).map(|(a, b)| a - b));
    }
    CadlagPath::new(dim, grid, samples, jumps, Interp::PiecewiseLinear)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for f in [
            SmoothFunction::norm_sq(3).unwrap(),
            SmoothFunction::sin(2).unwrap(),
            SmoothFunction::linear(vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0], 2, 3).unwrap(),
            SmoothFunction::bilinear_ax(2).unwrap(),
            SmoothFunction::custom_poly(vec![vec![1.0, -2.0, 0.5, 0.25]]).unwrap(),
        ] {
            assert!(f.has_second_derivative());
            assert_eq!(f.smoothness(), Smoothness::C12);
        }
        let sq = SmoothFunction::norm_sq(2).unwrap();
        assert_eq!(sq.eval(&[], &[3.0, 4.0]), vec![25.0]);
        assert_eq!(sq.dx(&[], &[3.0, 4.0]), vec![6.0, 8.0]);
        assert_eq!(sq.dxx(&[], &[3.0, 4.0]).unwrap(), vec![2.0, 0.0, 0.0, 2.0]);
        assert!(sq.as_c1().dxx(&[], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn wrong_derivative_rejected() {
        let bad = SmoothFunction::new(
            0,
            1,
            1,
            Arc::new(|_, x, o| o[0] = x[0].sin()),
            None,
            Arc::new(|_, x, o| o[0] = x[0].sin()),
            None,
            Smoothness::C1,
            "bad",
        );
        assert!(matches!(bad, Err(Error::Validation(_))));
        let asym = SmoothFunction::new(
            0,
            2,
            1,
            Arc::new(|_, x, o| o[0] = x[0] * x[1]),
            None,
            Arc::new(|_, x, o| {
                o[0] = x[1];
                o[1] = x[0];
            }),
            Some(Arc::new(|_, _, o| {
                o[1] = 1.0;
                o[2] = 0.0;
            })),
            Smoothness::C12,
            "asym",
        );
        assert!(asym.is_err());
    }

    #[test]
    fn functional_with_step_parameter() {
        let a = CadlagPath::pure_jump(1, 1.0, &[1.0], vec![Jump::new(0.5, vec![2.0])]).unwrap();
        let fp = PathFunctional::new(SmoothFunction::bilinear_ax(1).unwrap(), Some(a)).unwrap();
        assert_eq!(fp.eval(0.25, &[2.0]), vec![2.0]);
        assert_eq!(fp.eval(0.5, &[2.0]), vec![6.0]);
        assert_eq!(fp.eval_left(0.5, &[2.0]), vec![2.0]);
        assert_eq!(fp.jump_times(), vec![0.5]);
        // sections t -> A_t x for x in {1, -2}: variations 2 and 4
        let v = fp.family_variation(&[vec![1.0], vec![-2.0]], 1.0, NormChoice::Euclidean).unwrap();
        assert_eq!(v, 4.0);
        assert!(PathFunctional::new(SmoothFunction::bilinear_ax(1).unwrap(), None).is_err());
    }

    #[test]
    fn composite_reconstructs_values() {
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let value = |t: f64| vec![t * t + if t >= 0.35 { 1.0 } else { 0.0 }];
        let left = |t: f64| vec![t * t + if t > 0.35 { 1.0 } else { 0.0 }];
        let z = composite_path(1, grid.clone(), &[0.35], value, left).unwrap();
        assert_eq!(z.jumps().len(), 1);
        for &t in &grid {
            assert!((z.evaluate(t).unwrap()[0] - value(t)[0]).abs() < 1e-15);
        }
    }
}
