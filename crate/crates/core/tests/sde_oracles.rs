use avgen_core::diagnostics::{euler_maruyama_moments, kernel_report, rk4_variance};
use avgen_core::sde::{analytic_score, marginal, sample_forward, SdeParams};
use avgen_core::ComplexSpectrogram;
use num_complex::Complex64;
use proptest::prelude::*;

fn filled(v: Complex64) -> ComplexSpectrogram {
    ComplexSpectrogram::filled(1, true, v).unwrap()
}

#[test]
fn kernel_report_passes_on_default_params() {
    let r = kernel_report(&SdeParams::default(), 1).unwrap();
    assert!(r.pass, "{:#?}", r.failures());
    assert_eq!(r.checks.len(), 9);
}

#[test]
fn monte_carlo_moments_with_a_far_start() {
    // x0 = 1, y = 0: mean tolerance is scaled by the standard error here
    let sde = SdeParams::default();
    let m = euler_maruyama_moments(&sde, 1.0, 0.0, 10_000, 1000, &[500], 5).unwrap();
    let (mean, std) = m[0];
    let se = sde.std(0.5) / 100.0;
    assert!((mean - (-0.75f64).exp()).abs() < 4.0 * se);
    assert!((std / sde.std(0.5) - 1.0).abs() < 0.03);
}

#[test]
fn variance_matches_rk4_at_half() {
    let sde = SdeParams::default();
    let v = rk4_variance(&sde, 0.5, 1000).unwrap();
    assert!((sde.variance(0.5) - v).abs() < 1e-6 * v);
}

#[test]
fn forward_sample_mean_within_three_standard_errors() {
    let sde = SdeParams::default();
    let x0 = filled(Complex64::new(1.0, -1.0));
    let y = filled(Complex64::new(0.0, 0.5));
    let mu = marginal(&x0, &y, 0.5, &sde).unwrap().mean;
    let bins = mu.len();
    let mut acc = vec![Complex64::new(0.0, 0.0); bins];
    let draws = 10_000;
    for s in 0..draws {
        let f = sample_forward(&x0, &y, 0.5, &sde, s).unwrap();
        acc.iter_mut().zip(f.x_t.data()).for_each(|(a, v)| *a += v);
    }
    // per component std sigma / sqrt 2
    let se = sde.std(0.5) / 2f64.sqrt() / (draws as f64).sqrt();
    let mut outside = 0;
    for (a, m) in acc.iter().zip(mu.data()) {
        let e = a / draws as f64 - m;
        if e.re.abs() > 3.0 * se || e.im.abs() > 3.0 * se {
            outside += 1;
        }
    }
    // 512 components at 3 SE: about 1.4 expected outside
    assert!(outside <= 8, "{outside}");
}

#[test]
fn scalar_score_value() {
    // mu = 0 and x_t = 2; sigma^2 times the score is -2
    let sde = SdeParams::default();
    let zero = filled(Complex64::new(0.0, 0.0));
    let x = filled(Complex64::new(2.0, 0.0));
    let s = analytic_score(&x, &zero, &zero, 0.5, &sde).unwrap();
    assert!((s.get(3, 0).re * sde.variance(0.5) + 2.0).abs() < 1e-12);
}

proptest! {
    #[test]
    fn mean_gap_decays_exactly(t in 0.0f64..1.0, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let sde = SdeParams::default();
        let x0 = filled(Complex64::new(a, b));
        let y = filled(Complex64::new(b, -a));
        let k = marginal(&x0, &y, t, &sde).unwrap();
        let lhs = k.mean.sub(&y).unwrap().norm();
        let rhs = (-sde.gamma * t).exp() * x0.sub(&y).unwrap().norm();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
    }

    #[test]
    fn score_scales_inversely_with_variance(t in 0.05f64..1.0, d in 0.1f64..2.0) {
        let sde = SdeParams::default();
        let zero = filled(Complex64::new(0.0, 0.0));
        let x = filled(Complex64::new(d, 0.0));
        let s = analytic_score(&x, &zero, &zero, t, &sde).unwrap();
        prop_assert!((s.get(0, 0).re * sde.variance(t) + d).abs() < 1e-9 * d);
    }

    #[test]
    fn variance_ode_holds(t in 0.01f64..0.99) {
        let sde = SdeParams::default();
        let h = 1e-6;
        let fd = (sde.variance(t + h) - sde.variance(t - h)) / (2.0 * h);
        let g = avgen_core::sde::diffusion(t, &sde).unwrap();
        let rhs = -2.0 * sde.gamma * sde.variance(t) + g * g;
        prop_assert!((fd - rhs).abs() < 1e-4 * rhs.abs());
    }
}
