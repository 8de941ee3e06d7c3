mod support;

use std::sync::Arc;

use pathsmooth::bridge::{bridge_forward_map, bridge_inverse_map};
use pathsmooth::functional::StateSum;
use pathsmooth::jump_augment::Construct;
use pathsmooth::kernel::{LinearGaussianKernel, PathspaceKernel};
use pathsmooth::model::{builtin_model, gaussian_logpdf, ModelOptions, OrnsteinUhlenbeck, ParamConstraint, SdeModel};
use pathsmooth::model_select::{bic, bic_difference, BicTrack};
use pathsmooth::oracle::LinearGaussian;
use pathsmooth::path::{NoisePath, PathView};
use pathsmooth::resample::{resample, ResampleScheme};
use pathsmooth::rng::{child_seed, stream};
use pathsmooth::simulate::simulate_dataset;
use pathsmooth::smoother::{Smoother, SmootherConfig};
use pathsmooth::validation::{bridge_density_mean, smoothed_replicates};
use proptest::prelude::*;
use rand::RngCore;

fn lg() -> LinearGaussian {
    LinearGaussian {
        a: 0.7,
        c: 0.2,
        q: 0.4,
        r: 0.3,
        m0: 0.0,
        p0: 1.0,
    }
}

fn scalar(m: &LinearGaussian) -> support::Scalar {
    support::Scalar {
        a: m.a,
        c: m.c,
        q: m.q,
        r: m.r,
        m0: m.m0,
        p0: m.p0,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn filter_weights_stay_normalised(seed in any::<u64>(), n in 2usize..60, ys in prop::collection::vec(-3.0f64..3.0, 2..12)) {
        let kernel = LinearGaussianKernel::fixed(lg());
        let obs: Vec<Vec<f64>> = ys.iter().map(|&y| vec![y]).collect();
        let smoother = Smoother::new(&kernel, &StateSum, SmootherConfig::new(n, seed));
        let mut state = smoother.init(&[], &obs[0]).unwrap();
        for y in &obs[1..] {
            smoother.step(&mut state, &[], y).unwrap();
            let total: f64 = state.weights().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(state.loglik_increment.is_finite());
        }
    }

    #[test]
    fn resampling_returns_valid_indices(
        weights in prop::collection::vec(0.0f64..1.0, 1..50),
        seed in any::<u64>(),
        scheme in prop_oneof![Just(ResampleScheme::Multinomial), Just(ResampleScheme::Systematic), Just(ResampleScheme::Stratified)],
    ) {
        let total: f64 = weights.iter().sum();
        prop_assume!(total > 1e-9);
        let w: Vec<f64> = weights.iter().map(|v| v / total).collect();
        let idx = resample(&w, scheme, &mut stream(seed, 0, 0));
        prop_assert_eq!(idx.len(), w.len());
        for &i in &idx {
            prop_assert!(i < w.len());
            prop_assert!(w[i] > 0.0);
        }
        if scheme == ResampleScheme::Systematic {
            let n = w.len() as f64;
            for (i, &wi) in w.iter().enumerate() {
                let count = idx.iter().filter(|&&j| j == i).count() as f64;
                prop_assert!(count >= (n * wi).floor() - 1e-9 && count <= (n * wi).ceil() + 1e-9);
            }
        }
    }

    #[test]
    fn bridge_round_trip_recovers_the_noise(
        model_index in 0usize..7,
        steps in 2usize..40,
        horizon in 0.1f64..2.0,
        seed in any::<u64>(),
    ) {
        let name = pathsmooth::model::BUILTIN_NAMES[model_index];
        let model = builtin_model(name, &ModelOptions::default()).unwrap();
        let theta = model.default_theta();
        let mut rng = stream(seed, 1, 0);
        let x = model.sample_initial(&theta, &mut rng);
        let x_end: Vec<f64> = x.iter().map(|v| v * 1.05 + 0.01).collect();
        let noise = NoisePath::sample(steps, model.dim_w(), horizon, &mut rng);
        let path = bridge_forward_map(model.as_ref(), &theta, &noise, &x, &x_end).unwrap();
        prop_assert_eq!(path.endpoint(), &x_end[..]);
        let back = bridge_inverse_map(model.as_ref(), &theta, &path, &x_end).unwrap();
        let d = model.dim_w();
        for j in 0..steps - 1 {
            for (a, b) in back.step(j).iter().zip(noise.step(j)) {
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "step {j}: {a} vs {b}");
            }
        }
        prop_assert!(back.step(steps - 1).iter().take(d).all(|&v| v == 0.0));
    }

    #[test]
    fn bic_is_deterministic_and_penalty_is_linear(
        incs in prop::collection::vec(-5.0f64..5.0, 1..40),
        d1 in 1usize..6,
        d2 in 1usize..6,
    ) {
        let mut a = BicTrack::new("a", d1);
        let mut b = BicTrack::new("b", d2);
        for &v in &incs {
            a.push(v, vec![]).unwrap();
            b.push(v, vec![]).unwrap();
        }
        let n = incs.len() as f64;
        prop_assert_eq!(a.bic().unwrap(), bic(a.current_loglik(), d1, n));
        prop_assert_eq!(a.bic_series(), a.bic_series());
        let gap = *bic_difference(&a, &b).unwrap().last().unwrap();
        let expected = (d1 as f64 - d2 as f64) * n.ln();
        prop_assert!((gap - expected).abs() <= 1e-9 * (1.0 + a.bic().unwrap().abs()));
    }
}

/// Geometric Brownian motion, whose transition density is log-normal.
#[derive(Debug)]
struct Gbm;

const GBM_DOMAIN: [ParamConstraint; 2] = [ParamConstraint::Unconstrained, ParamConstraint::Positive];

impl SdeModel for Gbm {
    fn name(&self) -> &str {
        "gbm"
    }
    fn dim_x(&self) -> usize {
        1
    }
    fn param_names(&self) -> &[&'static str] {
        &["mu", "sigma"]
    }
    fn param_domain(&self) -> &[ParamConstraint] {
        &GBM_DOMAIN
    }
    fn default_theta(&self) -> Vec<f64> {
        vec![0.1, 0.3]
    }
    fn drift(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        out[0] = theta[0] * x[0];
    }
    fn diffusion(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        out[0] = theta[1] * x[0];
    }
    fn ito_correction(&self, theta: &[f64], _x: &[f64]) -> Option<f64> {
        Some(-theta[0])
    }
    fn sample_initial(&self, _theta: &[f64], _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![1.0]
    }
    fn obs_logdensity(&self, _theta: &[f64], y: &[f64], _y_prev: Option<&[f64]>, path: &PathView<'_>) -> f64 {
        gaussian_logpdf(y[0], path.endpoint()[0], 0.01)
    }
    fn sample_obs(&self, _theta: &[f64], _y_prev: Option<&[f64]>, path: &PathView<'_>, _rng: &mut dyn RngCore) -> Vec<f64> {
        path.endpoint().to_vec()
    }
}

fn log_normal_density(theta: &[f64], x: f64, x_end: f64, t: f64) -> f64 {
    let (mu, s) = (theta[0], theta[1]);
    let mean = x.ln() + (mu - 0.5 * s * s) * t;
    let var = s * s * t;
    (-(x_end.ln() - mean).powi(2) / (2.0 * var)).exp() / (x_end * (2.0 * std::f64::consts::PI * var).sqrt())
}

#[test]
fn state_dependent_volatility_converges_to_log_normal_density() {
    let theta = [0.1, 0.3];
    let relative = |x_end: f64, steps: usize, seed: u64| {
        let exact = log_normal_density(&theta, 1.0, x_end, 1.0);
        let (mean, _) = bridge_density_mean(&Gbm, &theta, &[1.0], &[x_end], 1.0, steps, 20_000, seed).unwrap();
        (mean - exact) / exact
    };
    for (i, x_end) in [0.8, 1.0, 1.4].into_iter().enumerate() {
        let rel = relative(x_end, 400, 100 + i as u64);
        assert!(rel.abs() < 0.01, "x′={x_end}: relative error {rel}");
    }
    let coarse = relative(1.4, 25, 200);
    let fine = relative(1.4, 400, 200);
    assert!(fine.abs() < coarse.abs(), "{coarse} → {fine}");
}

#[test]
fn pathspace_smoother_matches_exact_linear_gaussian_smoother() {
    let theta = [0.5, 0.2, 0.4];
    let model: Arc<dyn SdeModel> = Arc::new(OrnsteinUhlenbeck::new(0.1));
    let data = simulate_dataset(model.as_ref(), &theta, 20, 1.0, 500, &Default::default(), &mut stream(3, 0, 0)).unwrap();
    let ys: Vec<f64> = data.ys.iter().map(|y| y[0]).collect();
    let exact = support::smoothed_state_sum(&support::Scalar::ou(&theta, 1.0, 0.1, 0.0), &ys);

    let kernel = PathspaceKernel::new(model, 1.0, 10, Construct::One);
    let reps = smoothed_replicates(&kernel, &StateSum, &theta, &data.ys, SmootherConfig::new(100, 5), 20).unwrap();
    let est: Vec<f64> = reps.iter().map(|r| r[0]).collect();
    let (mean, var) = support::mean_var(&est);
    let se = (var / est.len() as f64).sqrt();
    assert!((mean - exact).abs() <= 4.0 * se + 0.01, "{mean} ± {se} vs {exact}");

    let discrete = LinearGaussianKernel::fixed(LinearGaussian::from_ou(&theta, 1.0, 0.1, 0.0));
    let reps = smoothed_replicates(&discrete, &StateSum, &[], &data.ys, SmootherConfig::new(100, 5), 20).unwrap();
    let (dmean, dvar) = support::mean_var(&reps.iter().map(|r| r[0]).collect::<Vec<_>>());
    let dse = (dvar / 20.0).sqrt();
    assert!((dmean - exact).abs() <= 4.0 * dse + 0.01, "{dmean} ± {dse} vs {exact}");
}

#[test]
fn large_deviations_become_rarer_with_more_particles() {
    let model = lg();
    let mut rng = stream(9, 0, 0);
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let mut x: f64 = rand_distr::Distribution::sample(&normal, &mut rng);
    let mut ys = vec![];
    for k in 0..50 {
        if k > 0 {
            x = model.a * x + model.c + model.q.sqrt() * rand_distr::Distribution::sample(&normal, &mut rng);
        }
        ys.push(vec![x + model.r.sqrt() * rand_distr::Distribution::sample(&normal, &mut rng)]);
    }
    let exact = support::smoothed_state_sum(&scalar(&model), &ys.iter().map(|y| y[0]).collect::<Vec<_>>());
    let kernel = LinearGaussianKernel::fixed(model);
    let tail = |n: usize| {
        let reps = smoothed_replicates(&kernel, &StateSum, &[], &ys, SmootherConfig::new(n, child_seed(9, n as u64)), 40).unwrap();
        reps.iter().filter(|r| (r[0] - exact).abs() > 0.5).count()
    };
    let (coarse, fine) = (tail(20), tail(320));
    assert!(fine < coarse, "tail counts {coarse} → {fine}");
}
