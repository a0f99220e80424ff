//! Fractional Gaussian noise by circulant embedding, with a Cholesky
//! fallback for small grids whose embedding is not nonnegative definite.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::rng::SplitMix;
use crate::error::{Error, Result};

const CHOLESKY_MAX: usize = 1 << 12;

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let k = k as f64;
    let p = 2.0 * hurst;
    0.5 * ((k + 1.0).powf(p) - 2.0 * k.powf(p) + (k - 1.0).abs().powf(p))
}

/// `n` increments of fBm on a grid of mesh `h`, i.e. fGn scaled by `h^H`.
pub fn fgn(hurst: f64, n: usize, h: f64, rng: &mut SplitMix) -> Result<Vec<f64>> {
    if !(hurst > 0.0 && hurst < 1.0) {
        return Err(Error::Invalid(format!("Hurst index must lie in ]0, 1[, got {hurst}")));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let scale = h.powf(hurst);
    let m = 2 * n;
    let mut c: Vec<Complex<f64>> = (0..m)
        .map(|j| {
            let lag = if j <= n { j } else { m - j };
            Complex::new(fgn_autocovariance(hurst, lag), 0.0)
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(m);
    fft.process(&mut c);
    let lambda_max = c.iter().fold(0.0f64, |a, z| a.max(z.re));
    let negative = c.iter().any(|z| z.re < -1e-12 * lambda_max);
    if negative {
        if n > CHOLESKY_MAX {
            return Err(Error::Unsupported(format!(
                "circulant embedding is indefinite and the grid ({n}) is too large for Cholesky"
            )));
        }
        return cholesky_fgn(hurst, n, scale, rng);
    }
    let mut w: Vec<Complex<f64>> = c
        .iter()
        .map(|z| {
            let (a, b) = rng.next_normal_pair();
            Complex::new(a, b) * (z.re.max(0.0) / m as f64).sqrt()
        })
        .collect();
    fft.process(&mut w);
    Ok(w[..n].iter().map(|z| z.re * scale).collect())
}

fn cholesky_fgn(hurst: f64, n: usize, scale: f64, rng: &mut SplitMix) -> Result<Vec<f64>> {
    let cov = DMatrix::from_fn(n, n, |i, j| fgn_autocovariance(hurst, i.abs_diff(j)));
    let l = cov
        .cholesky()
        .ok_or_else(|| Error::Invalid("fGn covariance is not positive definite".into()))?
        .unpack();
    let mut z = Vec::with_capacity(n + 1);
    while z.len() < n {
        let (a, b) = rng.next_normal_pair();
        z.push(a);
        z.push(b);
    }
    z.truncate(n);
    let z = nalgebra::DVector::from_vec(z);
    Ok((l * z).iter().map(|v| v * scale).collect())
}
