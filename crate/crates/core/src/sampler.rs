//! Reverse-time solver: Euler-Maruyama predictor with an optional annealed
//! Langevin corrector, run on a uniform grid from `T` down to `t_eps`.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conditioner::{ConditioningSet, LayerEmbeddings};
use crate::error::{Error, Result};
use crate::scorenet::{conditioning, forward, ScoreNetParams};
use crate::sde::{analytic_score, complex_noise, diffusion, SdeParams};
use crate::signal::{compress, decompress, istft, stft, ComplexSpectrogram, StftConfig, Waveform, VIDEO_FRAME_SAMPLES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    /// Predictor steps `N`.
    pub steps: usize,
    pub corrector_steps: usize,
    /// Corrector signal-to-noise parameter `r`.
    pub snr: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 30,
            corrector_steps: 1,
            snr: 0.5,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::invalid("sampler needs at least one step"));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Error::invalid("corrector snr must be positive"));
        }
        Ok(())
    }

    pub fn nfe(&self) -> usize {
        self.steps * (1 + self.corrector_steps)
    }
}

/// Score model evaluated by the solver.
pub trait ScoreFn {
    fn score(&mut self, x: &ComplexSpectrogram, y: &ComplexSpectrogram, t: f64) -> Result<ComplexSpectrogram>;
}

/// Exact score of the forward marginal started from the single point `x0`.
pub struct AnalyticScore<'a> {
    pub x0: &'a ComplexSpectrogram,
    pub sde: SdeParams,
}

impl ScoreFn for AnalyticScore<'_> {
    fn score(&mut self, x: &ComplexSpectrogram, y: &ComplexSpectrogram, t: f64) -> Result<ComplexSpectrogram> {
        analytic_score(x, self.x0, y, t, &self.sde)
    }
}

pub struct ZeroScore;

impl ScoreFn for ZeroScore {
    fn score(&mut self, x: &ComplexSpectrogram, _: &ComplexSpectrogram, _: f64) -> Result<ComplexSpectrogram> {
        Ok(x.map(|_| Default::default()))
    }
}

/// Counts evaluations of the wrapped score.
pub struct CountingScore<S> {
    pub inner: S,
    pub calls: usize,
}

impl<S: ScoreFn> ScoreFn for CountingScore<S> {
    fn score(&mut self, x: &ComplexSpectrogram, y: &ComplexSpectrogram, t: f64) -> Result<ComplexSpectrogram> {
        self.calls += 1;
        self.inner.score(x, y, t)
    }
}

/// The trained network with fixed conditioning features.
pub struct NetScore<'a> {
    pub params: &'a ScoreNetParams,
    pub cond: ConditioningSet,
    pub sde: SdeParams,
}

impl ScoreFn for NetScore<'_> {
    fn score(&mut self, x: &ComplexSpectrogram, y: &ComplexSpectrogram, t: f64) -> Result<ComplexSpectrogram> {
        Ok(forward(self.params, x, y, &self.cond, self.sde.level(t))?.0)
    }
}

/// Reverse Euler-Maruyama update from `t` to `t - dt` with a given draw `z`:
/// `x + [-gamma (y - x) + g(t)^2 s] dt + g(t) sqrt(dt) z`.
pub fn predictor_update(
    x: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    score: &ComplexSpectrogram,
    t: f64,
    dt: f64,
    p: &SdeParams,
    z: &ComplexSpectrogram,
) -> Result<ComplexSpectrogram> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("step size must be positive, got {dt}")));
    }
    p.check_time(t)?;
    if t - dt < p.t_eps - 1e-9 {
        return Err(Error::invalid(format!(
            "step from t = {t} by {dt} passes t_eps = {}",
            p.t_eps
        )));
    }
    let g = diffusion(t, p)?;
    let g2 = g * g;
    let mut out = x.zip_map(y, |xv, yv| xv + (-(yv - xv) * p.gamma) * dt)?;
    out.axpy(g2 * dt, score)?;
    out.axpy(g * dt.sqrt(), z)?;
    Ok(out)
}

pub fn predictor_step(
    x: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    score: &ComplexSpectrogram,
    t: f64,
    dt: f64,
    p: &SdeParams,
    rng: &mut ChaCha8Rng,
) -> Result<ComplexSpectrogram> {
    let z = complex_noise(x.frames(), x.is_compressed(), rng);
    predictor_update(x, y, score, t, dt, p, &z)
}

/// Langevin step `x + eps s + sqrt(2 eps) z` with `eps = 2 (r |z| / |s|)^2`;
/// a zero score leaves `x` unchanged.
pub fn corrector_update(
    x: &ComplexSpectrogram,
    score: &ComplexSpectrogram,
    r: f64,
    z: &ComplexSpectrogram,
) -> Result<ComplexSpectrogram> {
    if !(r > 0.0) {
        return Err(Error::invalid("corrector snr must be positive"));
    }
    let s_norm = score.norm();
    if s_norm == 0.0 {
        return Ok(x.clone());
    }
    let eps = 2.0 * (r * z.norm() / s_norm).powi(2);
    let mut out = x.clone();
    out.axpy(eps, score)?;
    out.axpy((2.0 * eps).sqrt(), z)?;
    Ok(out)
}

pub fn corrector_step(
    x: &ComplexSpectrogram,
    y: &ComplexSpectrogram,
    score_fn: &mut dyn ScoreFn,
    t: f64,
    r: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ComplexSpectrogram> {
    let s = score_fn.score(x, y, t)?;
    let z = complex_noise(x.frames(), x.is_compressed(), rng);
    corrector_update(x, &s, r, &z)
}

/// Solver bookkeeping for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub nfe: usize,
    pub step_ms: Vec<f64>,
}

fn check_state(x: &ComplexSpectrogram, step: usize, t: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        let bad = x.data().iter().filter(|c| !(c.re.is_finite() && c.im.is_finite())).count();
        Err(Error::NonFinite(format!(
            "{bad} non-finite bins after solver step {step} (t = {t:.4})"
        )))
    }
}

/// Runs the solver, handing every state (starting with `x_T`) to `visit`.
pub fn sample_reverse_with(
    score_fn: &mut dyn ScoreFn,
    y: &ComplexSpectrogram,
    sde: &SdeParams,
    cfg: &SamplerConfig,
    mut visit: impl FnMut(&ComplexSpectrogram) -> Result<()>,
) -> Result<(ComplexSpectrogram, SamplerStats)> {
    cfg.validate()?;
    sde.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = y.clone();
    x.axpy(sde.std(sde.t_max), &complex_noise(y.frames(), y.is_compressed(), &mut rng))?;
    visit(&x)?;
    let dt = (sde.t_max - sde.t_eps) / cfg.steps as f64;
    let mut stats = SamplerStats {
        nfe: 0,
        step_ms: Vec::with_capacity(cfg.steps),
    };
    for i in 0..cfg.steps {
        let start = Instant::now();
        let t = sde.t_max - i as f64 * dt;
        for _ in 0..cfg.corrector_steps {
            x = corrector_step(&x, y, score_fn, t, cfg.snr, &mut rng)?;
            stats.nfe += 1;
        }
        let s = score_fn.score(&x, y, t)?;
        stats.nfe += 1;
        // the last step lands on t_eps exactly
        let step = if i + 1 == cfg.steps { t - sde.t_eps } else { dt };
        x = predictor_step(&x, y, &s, t, step, sde, &mut rng)?;
        check_state(&x, i, t - step)?;
        visit(&x)?;
        stats.step_ms.push(start.elapsed().as_secs_f64() * 1e3);
    }
    Ok((x, stats))
}

pub fn sample_reverse(
    score_fn: &mut dyn ScoreFn,
    y: &ComplexSpectrogram,
    sde: &SdeParams,
    cfg: &SamplerConfig,
) -> Result<(ComplexSpectrogram, SamplerStats)> {
    sample_reverse_with(score_fn, y, sde, cfg, |_| Ok(()))
}

/// Every solver state `x_T, ..., x_{t_eps}`; refuses to hold more than
/// `max_states` of them.
pub fn reverse_trajectory(
    score_fn: &mut dyn ScoreFn,
    y: &ComplexSpectrogram,
    sde: &SdeParams,
    cfg: &SamplerConfig,
    max_states: usize,
) -> Result<Vec<ComplexSpectrogram>> {
    if cfg.steps + 1 > max_states {
        return Err(Error::invalid(format!(
            "trajectory of {} states exceeds the limit of {max_states}",
            cfg.steps + 1
        )));
    }
    let mut states = Vec::with_capacity(cfg.steps + 1);
    sample_reverse_with(score_fn, y, sde, cfg, |x| {
        states.push(x.clone());
        Ok(())
    })?;
    Ok(states)
}

/// Compressed spectrogram of `y`, padded for the network, and its true
/// frame count.
pub fn prepare_input(y: &Waveform, stft_cfg: &StftConfig, multiple: usize) -> Result<(ComplexSpectrogram, usize)> {
    let s = compress(&stft(y, stft_cfg)?)?;
    let frames = s.frames();
    Ok((s.with_frames(frames.div_ceil(multiple) * multiple)?, frames))
}

/// Decompresses, crops padding and resynthesises `len` samples.
pub fn finish_output(x: &ComplexSpectrogram, frames: usize, stft_cfg: &StftConfig, len: usize) -> Result<Waveform> {
    istft(&decompress(&x.with_frames(frames)?)?, stft_cfg, len)
}

/// Enhances `y` with the network; `emb` is `None` for unconditioned runs.
pub fn enhance(
    y: &Waveform,
    emb: Option<&LayerEmbeddings>,
    params: &ScoreNetParams,
    sde: &SdeParams,
    cfg: &SamplerConfig,
    stft_cfg: &StftConfig,
) -> Result<(Waveform, SamplerStats)> {
    if let Some(e) = emb {
        let covered = e.frames() * VIDEO_FRAME_SAMPLES;
        if covered.abs_diff(y.len()) > VIDEO_FRAME_SAMPLES {
            return Err(Error::shape(format!(
                "embeddings cover {covered} samples, audio has {}",
                y.len()
            )));
        }
    }
    enhance_unchecked(y, emb, params, sde, cfg, stft_cfg)
}

/// [`enhance`] without the embedding length check, for embeddings taken
/// from another clip; they are cropped or held to the clip's length.
pub fn enhance_unchecked(
    y: &Waveform,
    emb: Option<&LayerEmbeddings>,
    params: &ScoreNetParams,
    sde: &SdeParams,
    cfg: &SamplerConfig,
    stft_cfg: &StftConfig,
) -> Result<(Waveform, SamplerStats)> {
    let (spec, frames) = prepare_input(y, stft_cfg, params.shape.frame_multiple())?;
    let cond = conditioning(params, emb, spec.frames())?;
    let mut net = NetScore {
        params,
        cond,
        sde: *sde,
    };
    let (x, stats) = sample_reverse(&mut net, &spec, sde, cfg)?;
    Ok((finish_output(&x, frames, stft_cfg, y.len())?, stats))
}

#[cfg(test)]
mod tests {
    use num_complex::Complex64;

    use super::*;
    use crate::scorenet::ScoreNetShape;

    fn constant(frames: usize, v: f64) -> ComplexSpectrogram {
        ComplexSpectrogram::filled(frames, true, Complex64::new(v, 0.0)).unwrap()
    }

    fn no_corrector(steps: usize, seed: u64) -> SamplerConfig {
        SamplerConfig {
            steps,
            corrector_steps: 0,
            seed,
            ..SamplerConfig::default()
        }
    }

    #[test]
    fn drift_free_step_is_pure_noise() {
        let p = SdeParams {
            gamma: 0.0,
            ..SdeParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = constant(40, 0.3);
        let zero = constant(40, 0.0);
        let (t, dt) = (0.8, 0.01);
        let out = predictor_step(&x, &zero, &zero, t, dt, &p, &mut rng).unwrap();
        let d = out.sub(&x).unwrap();
        let var = d.norm_sqr() / d.len() as f64;
        let want = diffusion(t, &p).unwrap().powi(2) * dt;
        assert!((var / want - 1.0).abs() < 0.05, "{var} {want}");
    }

    #[test]
    fn tiny_steps_barely_move_the_state() {
        // the drift part is O(dt); the diffusion part is O(sqrt dt) for a
        // frozen draw and vanishes with it
        let p = SdeParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = complex_noise(3, true, &mut rng);
        let y = complex_noise(3, true, &mut rng);
        let s = complex_noise(3, true, &mut rng);
        let z = complex_noise(3, true, &mut rng);
        let zero = x.scale(0.0);
        let dt = 1e-9;
        let out = predictor_update(&x, &y, &s, 0.5, dt, &p, &zero).unwrap();
        assert!(out.sub(&x).unwrap().norm() < 1e-6 * x.norm());
        let noisy = predictor_update(&x, &y, &s, 0.5, dt, &p, &z).unwrap();
        let jump = noisy.sub(&out).unwrap().norm();
        let want = diffusion(0.5, &p).unwrap() * dt.sqrt() * z.norm();
        assert!((jump / want - 1.0).abs() < 1e-6);
        assert!(predictor_update(&x, &y, &s, 0.5, 0.0, &p, &z).is_err());
        assert!(predictor_update(&x, &y, &s, 0.04, 0.02, &p, &z).is_err());
    }

    #[test]
    fn predictor_mean_moves_toward_the_marginal() {
        // scalar marginal started at x0 = 1, y = 0; one small step from t
        // should land near mu(t - dt) on average
        let p = SdeParams::default();
        let (t, dt) = (0.6, 0.01);
        let x0 = constant(400, 1.0);
        let y = constant(400, 0.0);
        let mu = |t: f64| p.mean_decay(t);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut oracle = AnalyticScore { x0: &x0, sde: p };
        let mut x = constant(400, mu(t));
        x.axpy(p.std(t), &complex_noise(400, true, &mut rng)).unwrap();
        let s = oracle.score(&x, &y, t).unwrap();
        let next = predictor_step(&x, &y, &s, t, dt, &p, &mut rng).unwrap();
        let count = next.len() as f64;
        let total: f64 = next.data().iter().map(|c| c.re).sum();
        let mean = total / count;
        let se = p.std(t) / (2.0 * count).sqrt();
        assert!((mean - mu(t - dt)).abs() < 4.0 * se + 1e-3, "{mean} vs {}", mu(t - dt));
        assert!((mean - mu(t - dt)).abs() < (mean - mu(t)).abs() + 4.0 * se);
    }

    #[test]
    fn zero_score_corrector_is_a_no_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = complex_noise(2, true, &mut rng);
        let y = x.clone();
        let out = corrector_step(&x, &y, &mut ZeroScore, 0.5, 0.5, &mut rng).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn corrector_contracts_toward_the_marginal_variance() {
        // with eps = 2 r^2 sigma^4 / v at mean squared distance v, the chain
        // x' = x - (eps / sigma^2)(x - mu) + sqrt(2 eps) z has the fixed
        // point v = (1 + r^2) sigma^2
        let p = SdeParams::default();
        let (t, r) = (0.5, 0.5);
        let x0 = constant(20, 0.7);
        let y = constant(20, 0.0);
        let mu = constant(20, 0.7 * p.mean_decay(t));
        let var = p.variance(t);
        let mut x = constant(20, 0.7 * p.mean_decay(t) + 4.0 * var.sqrt());
        let mut oracle = AnalyticScore { x0: &x0, sde: p };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dist = |x: &ComplexSpectrogram| x.sub(&mu).unwrap().norm_sqr() / x.len() as f64;
        let mut trace = vec![dist(&x)];
        for _ in 0..60 {
            x = corrector_step(&x, &y, &mut oracle, t, r, &mut rng).unwrap();
            trace.push(dist(&x));
        }
        assert!(trace[1] < trace[0] && trace[5] < trace[1]);
        let tail = &trace[20..];
        let end = tail.iter().sum::<f64>() / tail.len() as f64;
        let want = (1.0 + r * r) * var;
        assert!((end / want - 1.0).abs() < 0.05, "{end} vs {want}");
        let mut again = ChaCha8Rng::seed_from_u64(4);
        let a = corrector_step(&constant(20, 3.0), &y, &mut oracle, t, r, &mut again).unwrap();
        let mut again = ChaCha8Rng::seed_from_u64(4);
        let b = corrector_step(&constant(20, 3.0), &y, &mut oracle, t, r, &mut again).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn nfe_is_steps_times_one_plus_correctors() {
        let p = SdeParams::default();
        let y = constant(4, 0.1);
        for (n, c) in [(1, 0), (5, 1), (7, 3)] {
            let cfg = SamplerConfig {
                steps: n,
                corrector_steps: c,
                ..SamplerConfig::default()
            };
            let mut counter = CountingScore { inner: ZeroScore, calls: 0 };
            let (_, stats) = sample_reverse(&mut counter, &y, &p, &cfg).unwrap();
            assert_eq!(counter.calls, n * (1 + c));
            assert_eq!(stats.nfe, cfg.nfe());
        }
    }

    #[test]
    fn trajectory_has_every_state_and_honours_the_guard() {
        let p = SdeParams::default();
        let y = constant(4, 0.1);
        let cfg = no_corrector(6, 5);
        let states = reverse_trajectory(&mut ZeroScore, &y, &p, &cfg, 100).unwrap();
        assert_eq!(states.len(), 7);
        let (last, _) = sample_reverse(&mut ZeroScore, &y, &p, &cfg).unwrap();
        assert_eq!(states.last().unwrap(), &last);
        assert!(reverse_trajectory(&mut ZeroScore, &y, &p, &cfg, 6).is_err());
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let p = SdeParams::default();
        let y = constant(4, 0.1);
        let x0 = constant(4, 0.4);
        let cfg = SamplerConfig::default();
        let a = sample_reverse(&mut AnalyticScore { x0: &x0, sde: p }, &y, &p, &cfg).unwrap().0;
        let b = sample_reverse(&mut AnalyticScore { x0: &x0, sde: p }, &y, &p, &cfg).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn zero_network_enhancement_is_plumbing_only() {
        let shape = ScoreNetShape {
            channels: vec![2, 4],
            factors: vec![1, 2],
            time_embed_dim: 4,
            cond_layers: 12,
            cond_dim: 32,
            mid_block: false,
            output: crate::scorenet::OutputParam::Noise,
        };
        let params = ScoreNetParams::init(&shape, 0).unwrap();
        let y = Waveform::new((0..16_010).map(|i| (i as f64 * 0.01).sin() * 0.1).collect()).unwrap();
        let cfg = no_corrector(1, 0);
        let (out, stats) = enhance(&y, None, &params, &SdeParams::default(), &cfg, &StftConfig::default()).unwrap();
        assert_eq!(out.len(), y.len());
        assert!(out.samples().iter().all(|v| v.is_finite()));
        assert_eq!(stats.nfe, 1);
        let emb = LayerEmbeddings::new(12, 10, 32, vec![0.0; 12 * 10 * 32]).unwrap();
        assert!(enhance(&y, Some(&emb), &params, &SdeParams::default(), &cfg, &StftConfig::default()).is_err());
    }
}
