//! Forward Ornstein-Uhlenbeck diffusion with variance-exploding noise:
//! `dx = gamma (y - x) dt + g(t) dw`, with
//! `g(t) = sigma_min (sigma_max / sigma_min)^t sqrt(2 ln(sigma_max / sigma_min))`.
//!
//! `w` is a circularly-symmetric complex Wiener process with
//! `E|dw|^2 = dt`, so `std` below is the per-bin complex standard deviation.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::ComplexSpectrogram;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdeParams {
    pub gamma: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub t_max: f64,
    pub t_eps: f64,
}

impl Default for SdeParams {
    fn default() -> Self {
        Self {
            gamma: 1.5,
            sigma_min: 0.05,
            sigma_max: 0.5,
            t_max: 1.0,
            t_eps: 0.03,
        }
    }
}

impl SdeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid("gamma must be finite and >= 0"));
        }
        if !(self.sigma_min > 0.0 && self.sigma_max > self.sigma_min && self.sigma_max.is_finite())
        {
            return Err(Error::invalid("need 0 < sigma_min < sigma_max"));
        }
        if !(self.t_eps > 0.0 && self.t_eps < self.t_max && self.t_max.is_finite()) {
            return Err(Error::invalid("need 0 < t_eps < T"));
        }
        Ok(())
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        // small slack for grids that land on T or t_eps through rounding
        if !(t >= -1e-12 && t <= self.t_max + 1e-12) {
            return Err(Error::invalid(format!(
                "process time {t} outside [0, {}]",
                self.t_max
            )));
        }
        Ok(())
    }

    fn log_ratio(&self) -> f64 {
        (self.sigma_max / self.sigma_min).ln()
    }

    /// `sigma(t)^2`, the closed-form solution of
    /// `d sigma^2 / dt = -2 gamma sigma^2 + g(t)^2`, `sigma^2(0) = 0`.
    pub fn variance(&self, t: f64) -> f64 {
        let lr = self.log_ratio();
        if lr == 0.0 {
            return 0.0;
        }
        let c = self.sigma_min * self.sigma_min * lr / (self.gamma + lr);
        c * ((2.0 * lr * t).exp() - (-2.0 * self.gamma * t).exp())
    }

    pub fn std(&self, t: f64) -> f64 {
        self.variance(t).max(0.0).sqrt()
    }

    /// Mean decay factor `e^{-gamma t}` of `x0 - y`.
    pub fn mean_decay(&self, t: f64) -> f64 {
        (-self.gamma * t).exp()
    }

    pub fn level(&self, t: f64) -> NoiseLevel {
        NoiseLevel {
            sigma: self.std(t),
            decay: self.mean_decay(t),
        }
    }
}

/// Marginal scale and mean decay at one process time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub sigma: f64,
    pub decay: f64,
}

/// Gaussian kernel `p(x_t | x0, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationKernel {
    pub mean: ComplexSpectrogram,
    pub std: f64,
}

/// `gamma (y - x)`.
pub fn drift(
    x: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    params: &SdeParams,
) -> Result<ComplexSpectrogram> {
    let g = params.gamma;
    x.zip_map(y, |a, b| (b - a) * g)
}

pub fn diffusion(t: f64, params: &SdeParams) -> Result<f64> {
    params.check_time(t)?;
    let lr = params.log_ratio();
    Ok(params.sigma_min * (lr * t).exp() * (2.0 * lr).sqrt())
}

pub fn marginal(
    x0: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    t: f64,
    params: &SdeParams,
) -> Result<PerturbationKernel> {
    params.check_time(t)?;
    let decay = params.mean_decay(t);
    let mean = x0.zip_map(y, |a, b| b + (a - b) * decay)?;
    Ok(PerturbationKernel {
        mean,
        std: params.std(t),
    })
}

/// Standard circularly-symmetric complex Gaussian spectrogram: real and
/// imaginary parts i.i.d. `N(0, 1/2)`.
pub fn complex_noise(frames: usize, compressed: bool, rng: &mut impl Rng) -> ComplexSpectrogram {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut out = ComplexSpectrogram::zeros(frames, compressed).expect("frames > 0");
    for c in out.data_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *c = Complex64::new(re * s, im * s);
    }
    out
}

/// A draw `x_t = mean + sigma z` together with its noise and scale.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardSample {
    pub x_t: ComplexSpectrogram,
    pub z: ComplexSpectrogram,
    pub sigma: f64,
}

pub fn sample_forward_with(
    x0: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    t: f64,
    params: &SdeParams,
    rng: &mut impl Rng,
) -> Result<ForwardSample> {
    let kernel = marginal(x0, y, t, params)?;
    let z = complex_noise(x0.frames(), x0.is_compressed(), rng);
    let mut x_t = kernel.mean;
    if kernel.std > 0.0 {
        x_t.axpy(kernel.std, &z)?;
    }
    Ok(ForwardSample {
        x_t,
        z,
        sigma: kernel.std,
    })
}

pub fn sample_forward(
    x0: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    t: f64,
    params: &SdeParams,
    seed: u64,
) -> Result<ForwardSample> {
    sample_forward_with(x0, y, t, params, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Exact score `-(x_t - mu(t)) / sigma(t)^2` when the data distribution is
/// the single point `x0`.
pub fn analytic_score(
    x_t: &ComplexSpectrogram,
    x0: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    t: f64,
    params: &SdeParams,
) -> Result<ComplexSpectrogram> {
    let kernel = marginal(x0, y, t, params)?;
    let var = kernel.std * kernel.std;
    if var == 0.0 {
        return Err(Error::invalid("score undefined at sigma(t) = 0"));
    }
    x_t.zip_map(&kernel.mean, |x, m| -(x - m) / var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> ComplexSpectrogram {
        ComplexSpectrogram::filled(1, true, Complex64::new(v, 0.0)).unwrap()
    }

    #[test]
    fn drift_cases() {
        let p = SdeParams::default();
        let x = scalar(0.3);
        assert_eq!(drift(&x, &x, &p).unwrap().norm(), 0.0);
        let p0 = SdeParams { gamma: 0.0, ..p };
        assert_eq!(drift(&x, &scalar(2.0), &p0).unwrap().norm(), 0.0);
        let mut y = x.clone();
        y.set(5, 0, x.get(5, 0) + 1.0);
        let d = drift(&x, &y, &p).unwrap();
        assert!((d.get(5, 0).re - 1.5).abs() < 1e-15);
        assert_eq!(d.get(4, 0).re, 0.0);
        let other = ComplexSpectrogram::zeros(2, true).unwrap();
        assert!(drift(&x, &other, &p).is_err());
    }

    #[test]
    fn diffusion_endpoints() {
        let p = SdeParams::default();
        let k = (2.0 * 10f64.ln()).sqrt();
        assert!((diffusion(0.0, &p).unwrap() - 0.05 * k).abs() < 1e-15);
        assert!((diffusion(1.0, &p).unwrap() - 0.5 * k).abs() < 1e-14);
        assert!(diffusion(1.5, &p).is_err());
        assert!(diffusion(-0.1, &p).is_err());
        let flat = SdeParams {
            sigma_max: 0.05 * (1.0 + 1e-12),
            ..p
        };
        assert!(diffusion(0.5, &flat).unwrap() < 1e-6);
    }

    #[test]
    fn marginal_initial_condition() {
        let p = SdeParams::default();
        let k = marginal(&scalar(1.0), &scalar(0.0), 0.0, &p).unwrap();
        assert_eq!(k.mean, scalar(1.0));
        assert_eq!(k.std, 0.0);
    }

    #[test]
    fn marginal_mean_at_half() {
        let p = SdeParams::default();
        let k = marginal(&scalar(1.0), &scalar(0.0), 0.5, &p).unwrap();
        assert!((k.mean.get(0, 0).re - (-0.75f64).exp()).abs() < 1e-15);
        assert!((k.mean.get(0, 0).re - 0.47237).abs() < 1e-5);
    }

    #[test]
    fn std_is_monotone() {
        let p = SdeParams::default();
        let mut prev = 0.0;
        for i in 1..=1000 {
            let s = p.std(i as f64 / 1000.0);
            assert!(s > prev);
            prev = s;
        }
    }

    #[test]
    fn sample_forward_at_zero_is_x0_and_deterministic() {
        let p = SdeParams::default();
        let x0 = scalar(0.7);
        let y = scalar(-0.2);
        let s = sample_forward(&x0, &y, 0.0, &p, 3).unwrap();
        assert_eq!(s.x_t, x0);
        assert_eq!(
            sample_forward(&x0, &y, 0.4, &p, 3).unwrap(),
            sample_forward(&x0, &y, 0.4, &p, 3).unwrap()
        );
        assert!(sample_forward(&x0, &y, 2.0, &p, 3).is_err());
    }

    #[test]
    fn analytic_score_cases() {
        let p = SdeParams::default();
        let x0 = scalar(1.0);
        let y = scalar(0.0);
        let t = 0.5;
        let mu = marginal(&x0, &y, t, &p).unwrap().mean;
        assert_eq!(analytic_score(&mu, &x0, &y, t, &p).unwrap().norm(), 0.0);
        // x_t - mu = 2 at one bin, scaled by 1/sigma^2
        let mut xt = mu.clone();
        xt.set(0, 0, mu.get(0, 0) + 2.0);
        let s = analytic_score(&xt, &x0, &y, t, &p).unwrap();
        assert!((s.get(0, 0).re * p.variance(t) + 2.0).abs() < 1e-12);
        assert!(analytic_score(&xt, &x0, &y, 0.0, &p).is_err());
    }
}
