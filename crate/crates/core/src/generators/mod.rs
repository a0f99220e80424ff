//! Deterministic, seeded test paths covering finite variation, Brownian-like,
//! Hoelder (zero QV), pure-jump and mixed regimes.
//!
//! Every recipe draws from the counter-based stream in [`rng`], so the same
//! recipe and seed always give a bit-identical path.

pub mod fbm;
pub mod rng;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::path::{CadlagPath, Interp, Jump};
use rng::SplitMix;

/// A jump as written in recipes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpSpec {
    pub time: f64,
    pub delta: Vec<f64>,
}

/// `amplitude * sin(2 pi frequency t + phase)` added to one component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SineTerm {
    pub component: usize,
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecipeKind {
    /// `+-` Hadamard-balanced sign vectors pushed through `sigma` (`d x k`).
    ScaledRandomWalk { level: u32, sigma: Vec<Vec<f64>> },
    /// `dim` independent fBm components.
    Fbm { hurst: f64, level: u32, dim: usize },
    StepFv {
        jumps: Vec<JumpSpec>,
        #[serde(default)]
        start: Option<Vec<f64>>,
    },
    /// Polynomial (`poly[i][k]` multiplies `t^k` in component `i`) plus sines,
    /// sampled on `2^level` pieces and interpolated linearly.
    SmoothFv {
        level: u32,
        poly: Vec<Vec<f64>>,
        #[serde(default)]
        sines: Vec<SineTerm>,
    },
    JumpDiffusion { level: u32, sigma: Vec<Vec<f64>>, jumps: Vec<JumpSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathRecipe {
    #[serde(flatten)]
    pub kind: RecipeKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "unit_horizon")]
    pub horizon: f64,
}

fn unit_horizon() -> f64 {
    1.0
}

fn sigma_shape(sigma: &[Vec<f64>]) -> Result<(usize, usize)> {
    let d = sigma.len();
    let k = sigma.first().map_or(0, Vec::len);
    if d == 0 || k == 0 || sigma.iter().any(|r| r.len() != k) {
        return Err(Error::Invalid("sigma must be a nonempty rectangular d x k matrix".into()));
    }
    Ok((d, k))
}

fn check_level(level: u32) -> Result<usize> {
    if level > 24 {
        return Err(Error::Invalid(format!("grid level {level} too fine (max 24)")));
    }
    Ok(1usize << level)
}

fn dyadic_grid(horizon: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| (i as f64 * horizon) / n as f64).collect()
}

fn to_jumps(specs: &[JumpSpec], d: usize) -> Result<Vec<Jump>> {
    let mut jumps: Vec<Jump> = specs.iter().map(|j| Jump::new(j.time, j.delta.clone())).collect();
    for j in &jumps {
        check_dim(d, j.delta.len())?;
    }
    jumps.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(jumps)
}

impl PathRecipe {
    pub fn new(kind: RecipeKind, seed: u64, horizon: f64) -> Self {
        Self { kind, seed, horizon }
    }

    pub fn dim(&self) -> Result<usize> {
        match &self.kind {
            RecipeKind::ScaledRandomWalk { sigma, .. } | RecipeKind::JumpDiffusion { sigma, .. } => {
                Ok(sigma_shape(sigma)?.0)
            }
            RecipeKind::Fbm { dim, .. } => Ok(*dim),
            RecipeKind::StepFv { jumps, start } => start
                .as_ref()
                .map(Vec::len)
                .or_else(|| jumps.first().map(|j| j.delta.len()))
                .ok_or_else(|| Error::Invalid("step path needs a start point or a jump".into())),
            RecipeKind::SmoothFv { poly, .. } => Ok(poly.len()),
        }
    }

    pub fn generate(&self) -> Result<CadlagPath> {
        let horizon = self.horizon;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::Invalid("horizon must be positive".into()));
        }
        let d = self.dim()?;
        if d == 0 {
            return Err(Error::Invalid("path dimension must be positive".into()));
        }
        match &self.kind {
            RecipeKind::ScaledRandomWalk { level, sigma } => self.walk(*level, sigma, Vec::new()),
            RecipeKind::JumpDiffusion { level, sigma, jumps } => self.walk(*level, sigma, to_jumps(jumps, d)?),
            RecipeKind::Fbm { hurst, level, dim } => {
                let n = check_level(*level)?;
                let h = horizon / n as f64;
                let comps: Vec<Vec<f64>> = (0..*dim)
                    .into_par_iter()
                    .map(|c| fbm::fgn(*hurst, n, h, &mut SplitMix::substream(self.seed, c as u64)))
                    .collect::<Result<_>>()?;
                let mut samples = vec![0.0; (n + 1) * dim];
                for (c, inc) in comps.iter().enumerate() {
                    let mut v = 0.0;
                    for (i, x) in inc.iter().enumerate() {
                        v += x;
                        samples[(i + 1) * dim + c] = v;
                    }
                }
                CadlagPath::linear(*dim, dyadic_grid(horizon, n), samples)
            }
            RecipeKind::StepFv { jumps, start } => {
                let start = start.clone().unwrap_or_else(|| vec![0.0; d]);
                CadlagPath::pure_jump(d, horizon, &start, to_jumps(jumps, d)?)
            }
            RecipeKind::SmoothFv { level, poly, sines } => {
                let n = check_level(*level)?;
                let grid = dyadic_grid(horizon, n);
                for s in sines {
                    if s.component >= d {
                        return Err(Error::Invalid(format!("sine term on component {} of {d}", s.component)));
                    }
                }
                let mut samples = Vec::with_capacity(grid.len() * d);
                for &t in &grid {
                    for (i, coeffs) in poly.iter().enumerate() {
                        let mut v = coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c);
                        for s in sines.iter().filter(|s| s.component == i) {
                            v += s.amplitude * (2.0 * std::f64::consts::PI * s.frequency * t + s.phase).sin();
                        }
                        samples.push(v);
                    }
                }
                CadlagPath::linear(d, grid, samples)
            }
        }
    }

    /// Walk on `2^level` pieces: within each block of `K` steps (`K` the
    /// smallest power of two `>= k`) the sign vectors are the rows of the
    /// Sylvester-Hadamard matrix restricted to `k` columns, in random order
    /// and with random row and column signs. Their outer products sum to
    /// `K I` exactly, so on the matching grid `sum dX dX^T = T sigma sigma^T`.
    fn walk(&self, level: u32, sigma: &[Vec<f64>], jumps: Vec<Jump>) -> Result<CadlagPath> {
        let (d, k) = sigma_shape(sigma)?;
        let n = check_level(level)?;
        let block = k.next_power_of_two();
        if n % block != 0 {
            return Err(Error::Invalid(format!("2^{level} steps are not a multiple of the sign block {block}")));
        }
        let h = self.horizon / n as f64;
        let root_h = h.sqrt();
        let mut rng = SplitMix::new(self.seed);
        let mut samples = vec![0.0; (n + 1) * d];
        let mut cur = vec![0.0; d];
        let mut order: Vec<usize> = (0..block).collect();
        let mut eps = vec![0.0; k];
        for b in 0..n / block {
            for i in (1..block).rev() {
                let j = (rng.next_u64() % (i as u64 + 1)) as usize;
                order.swap(i, j);
            }
            let col_signs: Vec<f64> = (0..k).map(|_| if block > 1 { rng.next_sign() } else { 1.0 }).collect();
            for (r, &row) in order.iter().enumerate() {
                let s = rng.next_sign();
                for (c, e) in eps.iter_mut().enumerate() {
                    let hadamard = if (row & c).count_ones() % 2 == 0 { 1.0 } else { -1.0 };
                    *e = s * col_signs[c] * hadamard;
                }
                for (i, v) in cur.iter_mut().enumerate() {
                    let inc: f64 = (0..k).map(|c| sigma[i][c] * eps[c]).sum();
                    *v += inc * root_h;
                }
                let step = b * block + r + 1;
                samples[step * d..(step + 1) * d].copy_from_slice(&cur);
            }
        }
        CadlagPath::new(d, dyadic_grid(self.horizon, n), samples, jumps, Interp::PiecewiseLinear)
    }
}

/// Closed-form QV of a recipe: `[X, X]_t = t * rate + sum_{s <= t} dX_s dX_s^T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpectedQv {
    pub dim: usize,
    /// Row-major `d x d` QV rate per unit time.
    pub rate: Vec<f64>,
    pub jumps: Vec<Jump>,
    /// Holds exactly on the generating grid rather than only in the limit.
    pub exact_on_matched_grid: bool,
    pub description: String,
}

impl ExpectedQv {
    pub fn tensor(&self, t: f64) -> Vec<f64> {
        let d = self.dim;
        let mut m: Vec<f64> = self.rate.iter().map(|r| r * t).collect();
        for j in self.jumps.iter().filter(|j| j.time <= t) {
            for a in 0..d {
                for b in 0..d {
                    m[a * d + b] += j.delta[a] * j.delta[b];
                }
            }
        }
        m
    }

    pub fn scalar(&self, t: f64) -> f64 {
        let m = self.tensor(t);
        (0..self.dim).map(|i| m[i * self.dim + i]).sum()
    }
}

fn sigma_sigma_t(sigma: &[Vec<f64>]) -> Vec<f64> {
    let d = sigma.len();
    let mut out = vec![0.0; d * d];
    for a in 0..d {
        for b in 0..d {
            out[a * d + b] = sigma[a].iter().zip(&sigma[b]).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// Registered closed form for the recipe's QV, if any.
pub fn expected_qv(recipe: &PathRecipe) -> Option<ExpectedQv> {
    let d = recipe.dim().ok()?;
    let zero = vec![0.0; d * d];
    let (rate, jumps, exact, description) = match &recipe.kind {
        RecipeKind::ScaledRandomWalk { sigma, .. } => {
            (sigma_sigma_t(sigma), Vec::new(), true, "t sigma sigma^T along the matching grid".to_string())
        }
        RecipeKind::JumpDiffusion { sigma, jumps, .. } => (
            sigma_sigma_t(sigma),
            to_jumps(jumps, d).ok()?,
            true,
            "t sigma sigma^T plus the sum of jump outer products".to_string(),
        ),
        RecipeKind::StepFv { jumps, .. } => {
            (zero, to_jumps(jumps, d).ok()?, true, "sum of jump outer products".to_string())
        }
        RecipeKind::SmoothFv { .. } => (zero, Vec::new(), false, "zero (finite variation)".to_string()),
        RecipeKind::Fbm { hurst, .. } if *hurst > 0.5 => {
            (zero, Vec::new(), false, "zero (Hoelder exponent above 1/2)".to_string())
        }
        RecipeKind::Fbm { hurst, .. } if *hurst == 0.5 => {
            let mut id = zero;
            for i in 0..d {
                id[i * d + i] = 1.0;
            }
            (id, Vec::new(), false, "t I (Brownian motion)".to_string())
        }
        RecipeKind::Fbm { .. } => return None,
    };
    Some(ExpectedQv { dim: d, rate, jumps, exact_on_matched_grid: exact, description })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bilinear::BilinearForm;
    use crate::norm::NormChoice;
    use crate::partition::Partition;
    use crate::qv::{discrete_qv, discrete_scalar_qv};

    fn walk(level: u32, sigma: Vec<Vec<f64>>, seed: u64, horizon: f64) -> PathRecipe {
        PathRecipe::new(RecipeKind::ScaledRandomWalk { level, sigma }, seed, horizon)
    }

    #[test]
    fn step_recipe_matches_direct_construction() {
        let r = PathRecipe::new(
            RecipeKind::StepFv { jumps: vec![JumpSpec { time: 0.5, delta: vec![1.0, 2.0] }], start: None },
            0,
            1.0,
        );
        let direct = CadlagPath::pure_jump(2, 1.0, &[0.0, 0.0], vec![Jump::new(0.5, vec![1.0, 2.0])]).unwrap();
        assert_eq!(r.generate().unwrap(), direct);
        let e = expected_qv(&r).unwrap();
        assert_eq!(e.tensor(1.0), vec![1.0, 2.0, 2.0, 4.0]);
        assert_eq!(e.scalar(1.0), 5.0);
        assert_eq!(e.scalar(0.4), 0.0);
    }

    #[test]
    fn walk_matched_grid_exact() {
        for (sigma, horizon) in [
            (vec![vec![1.0]], 1.0),
            (vec![vec![1.0, 0.0], vec![0.0, 1.0]], 2.0),
            (vec![vec![0.3, -1.2, 0.5], vec![0.7, 0.1, 0.0]], 1.5),
        ] {
            let level = 10;
            let r = walk(level, sigma.clone(), 17, horizon);
            let x = r.generate().unwrap();
            let pi = Partition::uniform(horizon, 1 << level).unwrap();
            let d = sigma.len();
            let e = expected_qv(&r).unwrap();
            let q = discrete_qv(&BilinearForm::outer(d), &x, &x, &pi, horizon).unwrap();
            for (a, b) in q.iter().zip(e.tensor(horizon)) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }
            let s = discrete_scalar_qv(&x, &pi, horizon, NormChoice::Euclidean).unwrap();
            assert!((s - e.scalar(horizon)).abs() <= 1e-12 * (1.0 + s));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let r = walk(8, vec![vec![1.0], vec![0.5]], 3, 1.0);
        assert_eq!(r.generate().unwrap(), r.generate().unwrap());
        let other = walk(8, vec![vec![1.0], vec![0.5]], 4, 1.0);
        assert_ne!(r.generate().unwrap(), other.generate().unwrap());
        let f = PathRecipe::new(RecipeKind::Fbm { hurst: 0.7, level: 9, dim: 2 }, 5, 1.0);
        assert_eq!(f.generate().unwrap(), f.generate().unwrap());
    }

    #[test]
    fn invalid_recipes() {
        let f = PathRecipe::new(RecipeKind::Fbm { hurst: 1.2, level: 4, dim: 1 }, 0, 1.0);
        assert!(f.generate().is_err());
        assert!(walk(1, vec![vec![1.0, 1.0, 1.0]], 0, 1.0).generate().is_err());
        assert!(walk(4, vec![vec![1.0], vec![]], 0, 1.0).generate().is_err());
        let s = PathRecipe::new(
            RecipeKind::SmoothFv { level: 4, poly: vec![vec![1.0]], sines: vec![SineTerm { component: 2, amplitude: 1.0, frequency: 1.0, phase: 0.0 }] },
            0,
            1.0,
        );
        assert!(s.generate().is_err());
    }

    #[test]
    fn smooth_values() {
        let s = PathRecipe::new(
            RecipeKind::SmoothFv {
                level: 4,
                poly: vec![vec![1.0, 0.0, 2.0]],
                sines: vec![SineTerm { component: 0, amplitude: 0.5, frequency: 1.0, phase: 0.0 }],
            },
            0,
            1.0,
        );
        let x = s.generate().unwrap();
        let t = 0.25;
        let oracle = 1.0 + 2.0 * t * t + 0.5 * (2.0 * std::f64::consts::PI * t).sin();
        assert!((x.evaluate(t).unwrap()[0] - oracle).abs() < 1e-15);
        assert_eq!(expected_qv(&s).unwrap().scalar(1.0), 0.0);
    }

    #[test]
    fn fbm_hoelder_quotient_bounded() {
        let f = PathRecipe::new(RecipeKind::Fbm { hurst: 0.8, level: 12, dim: 1 }, 9, 1.0);
        let x = f.generate().unwrap();
        let s = x.samples();
        for lvl in [6u32, 9, 12] {
            let stride = 1usize << (12 - lvl);
            let mesh = 2f64.powi(-(lvl as i32));
            let max_inc = s.iter().step_by(stride).collect::<Vec<_>>().windows(2).fold(0.0f64, |m, w| m.max((w[1] - w[0]).abs()));
            assert!(max_inc / mesh.powf(0.75) < 10.0);
        }
    }

    #[test]
    fn recipe_toml_round_trip() {
        let r = walk(6, vec![vec![1.0]], 11, 1.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.contains("\"kind\":\"scaled_random_walk\""));
        let back: PathRecipe = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }
}
