//! Oracle checks that can be run on demand: forward-kernel statistics,
//! reverse-mode gradients against finite differences, and reverse sampling
//! under the exact single-point score.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::conditioner::LayerEmbeddings;
use crate::error::{Error, Result};
use crate::sampler::{sample_reverse, AnalyticScore, CountingScore, SamplerConfig};
use crate::scorenet::{backward_full, conditioning, forward, OutputParam, ScoreNetParams, ScoreNetShape};
use crate::sde::{complex_noise, diffusion, marginal, NoiseLevel, SdeParams};
use crate::signal::ComplexSpectrogram;

/// One measured quantity and the bound it must stay below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub pass: bool,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            limit,
            pass: value < limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: String,
    pub pass: bool,
    pub checks: Vec<Check>,
}

impl Report {
    fn new(kind: &str, checks: Vec<Check>) -> Self {
        Self {
            kind: kind.to_string(),
            pass: checks.iter().all(|c| c.pass),
            checks,
        }
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn randn(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Marginal mean and std of a scalar Euler-Maruyama simulation recorded at
/// the requested step indices.
pub fn euler_maruyama_moments(
    sde: &SdeParams,
    x0: f64,
    y: f64,
    paths: usize,
    steps: usize,
    record: &[usize],
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if paths < 2 || steps == 0 || record.iter().any(|&r| r > steps) {
        return Err(Error::invalid("bad Monte-Carlo configuration"));
    }
    let dt = sde.t_max / steps as f64;
    let g: Vec<f64> = (0..steps)
        .map(|i| diffusion(i as f64 * dt, sde))
        .collect::<Result<_>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sums = vec![(0.0, 0.0); record.len()];
    for _ in 0..paths {
        let mut x = x0;
        let mut next = 0;
        for (i, gi) in g.iter().enumerate() {
            while next < record.len() && record[next] == i {
                sums[next].0 += x;
                sums[next].1 += x * x;
                next += 1;
            }
            x += sde.gamma * (y - x) * dt + gi * dt.sqrt() * randn(&mut rng);
        }
        while next < record.len() {
            sums[next].0 += x;
            sums[next].1 += x * x;
            next += 1;
        }
    }
    let n = paths as f64;
    Ok(sums
        .into_iter()
        .map(|(s, s2)| {
            let mean = s / n;
            (mean, ((s2 - n * mean * mean) / (n - 1.0)).max(0.0).sqrt())
        })
        .collect())
}

/// Variance ODE `v' = -2 gamma v + g^2`, `v(0) = 0`, integrated with RK4.
pub fn rk4_variance(sde: &SdeParams, t: f64, steps: usize) -> Result<f64> {
    let f = |s: f64, v: f64| -> Result<f64> {
        let g = diffusion(s.min(sde.t_max), sde)?;
        Ok(-2.0 * sde.gamma * v + g * g)
    };
    let h = t / steps as f64;
    let mut v = 0.0;
    for i in 0..steps {
        let s = i as f64 * h;
        let k1 = f(s, v)?;
        let k2 = f(s + h / 2.0, v + h / 2.0 * k1)?;
        let k3 = f(s + h / 2.0, v + h / 2.0 * k2)?;
        let k4 = f(s + h, v + h * k3)?;
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Ok(v)
}

/// Forward-kernel checks: Monte-Carlo moments (10^4 paths, 1000 steps),
/// the variance and mean ODEs by finite differences, and RK4 agreement.
pub fn kernel_report(sde: &SdeParams, seed: u64) -> Result<Report> {
    sde.validate()?;
    let (x0, y) = (2.0, 1.0);
    let steps = 1000;
    let times = [0.25, 0.5, 1.0];
    let record: Vec<usize> = times
        .iter()
        .map(|t| (t / sde.t_max * steps as f64).round() as usize)
        .collect();
    let moments = euler_maruyama_moments(sde, x0, y, 10_000, steps, &record, seed)?;
    let mut checks = Vec::new();
    for (&t, &(m, s)) in times.iter().zip(&moments) {
        let mean = y + (x0 - y) * sde.mean_decay(t);
        checks.push(Check::below(format!("mc_mean_rel_err@t={t}"), rel(m, mean), 0.02));
        checks.push(Check::below(format!("mc_std_rel_err@t={t}"), rel(s, sde.std(t)), 0.02));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37);
    let h = 1e-6;
    let (mut var_err, mut mean_err) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let t = rng.gen_range(0.01..sde.t_max - 0.01);
        let fd = (sde.variance(t + h) - sde.variance(t - h)) / (2.0 * h);
        let g = diffusion(t, sde)?;
        var_err = var_err.max(rel(fd, -2.0 * sde.gamma * sde.variance(t) + g * g));
        let mu = |s: f64| y + (x0 - y) * sde.mean_decay(s);
        let fd = (mu(t + h) - mu(t - h)) / (2.0 * h);
        mean_err = mean_err.max(rel(fd, sde.gamma * (y - mu(t))));
    }
    checks.push(Check::below("variance_ode_rel_err", var_err, 1e-4));
    checks.push(Check::below("mean_ode_rel_err", mean_err, 1e-4));

    let mut rk_err = 0.0f64;
    for t in [0.1, 0.5, 1.0] {
        rk_err = rk_err.max(rel(sde.variance(t), rk4_variance(sde, t, 2000)?));
    }
    checks.push(Check::below("rk4_variance_rel_err", rk_err, 1e-6));
    Ok(Report::new("kernel", checks))
}

fn gradcheck_shape(output: OutputParam) -> ScoreNetShape {
    ScoreNetShape {
        channels: vec![3, 4, 5],
        factors: vec![1, 2, 4],
        time_embed_dim: 4,
        cond_layers: 3,
        cond_dim: 4,
        mid_block: true,
        output,
    }
}

fn random_spec(frames: usize, rng: &mut ChaCha8Rng) -> ComplexSpectrogram {
    let mut s = ComplexSpectrogram::zeros(frames, true).expect("frames > 0");
    for c in s.data_mut() {
        *c = Complex64::new(0.3 * randn(rng), 0.3 * randn(rng));
    }
    s
}

/// Largest relative error between backprop and central differences per
/// parameter group, for both output parameterisations.
pub fn gradcheck_report(seed: u64) -> Result<Report> {
    let mut checks = Vec::new();
    for output in [OutputParam::Noise, OutputParam::Mean] {
        let shape = gradcheck_shape(output);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ScoreNetParams::init(&shape, seed)?;
        let flat: Vec<f64> = p.to_flat().iter().map(|v| v + 0.1 * randn(&mut rng)).collect();
        p.set_flat(&flat)?;
        let frames = 8;
        let x = random_spec(frames, &mut rng);
        let y = random_spec(frames, &mut rng);
        let probe = random_spec(frames, &mut rng);
        let emb_data = (0..shape.cond_layers * (frames / 4 + 1) * shape.cond_dim)
            .map(|_| randn(&mut rng) as f32)
            .collect();
        let emb = LayerEmbeddings::new(shape.cond_layers, frames / 4 + 1, shape.cond_dim, emb_data)?;
        let level = NoiseLevel { sigma: 0.2, decay: 0.8 };
        let objective = |q: &ScoreNetParams| -> Result<f64> {
            let cond = conditioning(q, Some(&emb), frames)?;
            let (s, _) = forward(q, &x, &y, &cond, level)?;
            Ok(s.data().iter().zip(probe.data()).map(|(a, b)| a.re * b.re + a.im * b.im).sum())
        };
        let cond = conditioning(&p, Some(&emb), frames)?;
        let (_, cache) = forward(&p, &x, &y, &cond, level)?;
        let mut grads = p.zeros_like();
        backward_full(&p, Some(&emb), &cache, &probe, &mut grads)?;
        let analytic = grads.to_flat();
        let h = 1e-3;
        for (name, range) in p.groups() {
            let picks: Vec<usize> = if range.len() <= 32 {
                range.clone().collect()
            } else {
                (0..32).map(|_| rng.gen_range(range.clone())).collect()
            };
            let mut worst = 0.0f64;
            for i in picks {
                let mut f = flat.clone();
                let mut q = p.clone();
                f[i] = flat[i] + h;
                q.set_flat(&f)?;
                let up = objective(&q)?;
                f[i] = flat[i] - h;
                q.set_flat(&f)?;
                let fd = (up - objective(&q)?) / (2.0 * h);
                let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1.0);
                worst = worst.max(err);
            }
            let tag = match output {
                OutputParam::Noise => "noise",
                OutputParam::Mean => "mean",
            };
            checks.push(Check::below(format!("{tag}:{name}"), worst, 1e-5));
        }
    }
    Ok(Report::new("gradcheck", checks))
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Kolmogorov-Smirnov distance between a sample and a continuous CDF.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Relative error `|x_hat - x0| / |x0|` of reverse sampling with the exact
/// score for a random unit-variance `x0` and `y = x0 + 0.5 n`.
pub fn oracle_recovery(sde: &SdeParams, cfg: &SamplerConfig, frames: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x0 = complex_noise(frames, true, &mut rng);
    let mut y = x0.clone();
    y.axpy(0.5, &complex_noise(frames, true, &mut rng))?;
    let mut score = AnalyticScore { x0: &x0, sde: *sde };
    let (x, _) = sample_reverse(&mut score, &y, sde, cfg)?;
    Ok(x.sub(&x0)?.norm() / x0.norm())
}

/// Standardised real parts of terminal samples of a constant scalar
/// problem, `(Re x - Re mu(t_eps)) / (sigma(t_eps) / sqrt 2)`.
pub fn oracle_terminal_samples(sde: &SdeParams, cfg: &SamplerConfig, count: usize, seed: u64) -> Result<Vec<f64>> {
    let x0 = ComplexSpectrogram::filled(1, true, Complex64::new(1.0, -0.5))?;
    let y = ComplexSpectrogram::filled(1, true, Complex64::new(0.2, 0.3))?;
    let kernel = marginal(&x0, &y, sde.t_eps, sde)?;
    let scale = kernel.std / std::f64::consts::SQRT_2;
    let mu = kernel.mean.get(0, 0).re;
    let mut out = Vec::with_capacity(count);
    let mut run = 0u64;
    while out.len() < count {
        let mut score = AnalyticScore { x0: &x0, sde: *sde };
        let c = SamplerConfig {
            seed: seed.wrapping_add(run),
            ..*cfg
        };
        let (x, _) = sample_reverse(&mut score, &y, sde, &c)?;
        out.extend(x.data().iter().map(|v| (v.re - mu) / scale));
        run += 1;
    }
    out.truncate(count);
    Ok(out)
}

/// Reverse sampling under the exact score: recovery at N = 100, the KS
/// distance of 5000 terminal samples at N = 100, and NFE accounting.
pub fn sampler_report(sde: &SdeParams, seed: u64) -> Result<Report> {
    sde.validate()?;
    let cfg = SamplerConfig {
        steps: 100,
        seed,
        ..SamplerConfig::default()
    };
    let mut checks = vec![Check::below("recovery_rel_err", oracle_recovery(sde, &cfg, 32, seed)?, 0.05)];
    let samples = oracle_terminal_samples(sde, &cfg, 5000, seed)?;
    checks.push(Check::below("terminal_ks", ks_statistic(&samples, normal_cdf), 0.05));

    let x0 = ComplexSpectrogram::zeros(4, true)?;
    let mut counting = CountingScore {
        inner: AnalyticScore { x0: &x0, sde: *sde },
        calls: 0,
    };
    let small = SamplerConfig {
        steps: 7,
        corrector_steps: 2,
        ..cfg
    };
    let (_, stats) = sample_reverse(&mut counting, &x0, sde, &small)?;
    let mismatch = (counting.calls as f64 - small.nfe() as f64).abs() + (stats.nfe as f64 - small.nfe() as f64).abs();
    checks.push(Check::below("nfe_mismatch", mismatch, 0.5));
    Ok(Report::new("sampler-oracle", checks))
}
