use pollerr::models::{ContestParams, FixedParams, LikelihoodMode, ModelFamily, ModelSpec};
use pollerr::oracle::{rw_alpha_posterior_flat, static_alpha_posterior};
use pollerr::sampler::{fit, update_latent_block, ContestField, HyperField, SamplerConfig, Summary};
use pollerr::{ElectionContest, Poll, PollDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const HUGE_N: u64 = 1_000_000_000;

fn dataset(contests: &[(&str, f64)], polls: &[(&str, u32, f64, u64)]) -> PollDataset {
    let contests = contests
        .iter()
        .map(|(s, v)| ElectionContest::new(*s, 2008, *v).unwrap())
        .collect();
    let polls = polls
        .iter()
        .map(|(s, t, y, n)| Poll::new(format!("{s}-2008"), *t, *y, *n).unwrap())
        .collect();
    PollDataset::new(contests, polls).unwrap()
}

fn config(seed: u64, warmup: usize, iters: usize) -> SamplerConfig {
    SamplerConfig {
        chains: 4,
        warmup_iters: warmup,
        sampling_iters: iters,
        seed,
        ..SamplerConfig::default()
    }
}

fn within_mcse(s: &Summary, mean: f64, sd: f64) {
    let se_mean = s.mcse_mean.unwrap();
    let se_sd = s.mcse_sd.unwrap();
    assert!((s.mean - mean).abs() < 3.0 * se_mean, "mean {} vs {mean} (mcse {se_mean})", s.mean);
    assert!((s.sd - sd).abs() < 3.0 * se_sd, "sd {} vs {sd} (mcse {se_sd})", s.sd);
}

#[test]
fn static_alpha_matches_conjugate_posterior() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ys: Vec<f64> = (0..20)
        .map(|_| 0.53 + 0.02 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let polls: Vec<(&str, u32, f64, u64)> = ys.iter().enumerate().map(|(i, &y)| ("PA", i as u32, y, HUGE_N)).collect();
    let data = dataset(&[("PA", 0.5)], &polls);
    let fixed = FixedParams {
        tau: Some(0.02),
        mu_alpha: Some(0.0),
        sigma_alpha: Some(0.05),
        ..FixedParams::default()
    };
    let spec = ModelSpec::new(ModelFamily::Static).with_fixed(fixed);
    let fit = fit(&spec, &data, &config(7, 500, 2500)).unwrap();
    let oracle = static_alpha_posterior(&ys, 0.5, 0.02, 0.0, 0.05).unwrap();
    within_mcse(fit.contest_summary(0, ContestField::Alpha).unwrap(), oracle.mean, oracle.sd());
    assert_eq!(fit.metadata.clamp_activations, 0);
}

fn flat_rw_fit(reparameterize: bool, seed: u64) -> Summary {
    let data = dataset(&[("PA", 0.5)], &[("PA", 1, 0.52, HUGE_N), ("PA", 2, 0.55, HUGE_N)]);
    let fixed = FixedParams {
        tau: Some(0.02),
        gamma: Some(0.01),
        mu_alpha: Some(0.0),
        sigma_alpha: Some(10.0),
    };
    let spec = ModelSpec::new(ModelFamily::RandomWalk).with_fixed(fixed);
    let cfg = SamplerConfig {
        reparameterize,
        ..config(seed, 500, 4000)
    };
    let fit = fit(&spec, &data, &cfg).unwrap();
    fit.contest_summary(0, ContestField::Alpha).unwrap().clone()
}

#[test]
fn random_walk_alpha_matches_flat_prior_oracle() {
    let oracle = rw_alpha_posterior_flat(&[0.52, 0.55], &[1, 2], 0.5, 0.02, 0.01).unwrap();
    let s = flat_rw_fit(true, 3);
    within_mcse(&s, oracle.mean, oracle.sd());
    assert!((s.mean - 0.033_33).abs() < 0.002);
    assert!((s.sd - 0.017_95).abs() < 0.001);
}

#[test]
fn reparameterization_does_not_change_the_posterior() {
    let a = flat_rw_fit(true, 5);
    let b = flat_rw_fit(false, 6);
    let se = (a.mcse_mean.unwrap().powi(2) + b.mcse_mean.unwrap().powi(2)).sqrt();
    assert!((a.mean - b.mean).abs() < 3.0 * se);
    let se = (a.mcse_sd.unwrap().powi(2) + b.mcse_sd.unwrap().powi(2)).sqrt();
    assert!((a.sd - b.sd).abs() < 3.0 * se);
}

/// Quantiles of the hierarchical prior, drawn directly.
fn prior_quantiles(scale_sigma: f64, draw: impl Fn(f64, &mut ChaCha8Rng) -> f64) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut xs: Vec<f64> = (0..200_000)
        .map(|_| {
            let s = (scale_sigma * rng.sample::<f64, _>(StandardNormal)).abs();
            draw(s, &mut rng)
        })
        .collect();
    xs.sort_by(|a, b| a.total_cmp(b));
    [0.1, 0.5, 0.9].map(|q| xs[(q * xs.len() as f64) as usize])
}

fn pooled_quantiles(mut xs: Vec<f64>) -> [f64; 3] {
    xs.sort_by(|a, b| a.total_cmp(b));
    [0.1, 0.5, 0.9].map(|q| xs[(q * xs.len() as f64) as usize])
}

#[test]
fn prior_only_sampling_reproduces_prior() {
    let data = dataset(
        &[("PA", 0.5), ("OH", 0.48)],
        &[("PA", 3, 0.52, 800), ("PA", 9, 0.55, 800), ("OH", 5, 0.47, 600)],
    );
    let spec = ModelSpec::new(ModelFamily::RandomWalk).with_likelihood(LikelihoodMode::PriorOnly);
    let fit = fit(&spec, &data, &config(11, 1000, 5000)).unwrap();
    let hp = spec.hyperpriors;

    let alpha = pooled_quantiles(fit.pooled(fit.layout.contest_field(0, ContestField::Alpha).unwrap()));
    let want_alpha = {
        let mut rng = ChaCha8Rng::seed_from_u64(98);
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                let mu = hp.mu_alpha_sd * rng.sample::<f64, _>(StandardNormal);
                let s = (hp.sigma_alpha_scale * rng.sample::<f64, _>(StandardNormal)).abs();
                mu + s * rng.sample::<f64, _>(StandardNormal)
            })
            .collect();
        pooled_quantiles(xs)
    };
    let tau = pooled_quantiles(fit.pooled(fit.layout.contest_field(1, ContestField::Tau).unwrap()));
    let want_tau = prior_quantiles(hp.sigma_tau_scale, |s, rng| (s * rng.sample::<f64, _>(StandardNormal)).abs());
    let gamma = pooled_quantiles(fit.pooled(fit.layout.contest_field(0, ContestField::Gamma).unwrap()));
    let want_gamma = prior_quantiles(hp.sigma_gamma_scale, |s, rng| (s * rng.sample::<f64, _>(StandardNormal)).abs());
    let sigma_alpha = pooled_quantiles(fit.pooled(fit.layout.hyper(HyperField::SigmaAlpha).unwrap()));
    let want_sigma_alpha = prior_quantiles(hp.sigma_alpha_scale, |s, _| s);

    for (name, got, want) in [
        ("alpha", alpha, want_alpha),
        ("tau", tau, want_tau),
        ("gamma", gamma, want_gamma),
        ("sigma_alpha", sigma_alpha, want_sigma_alpha),
    ] {
        let spread = want[2] - want[0];
        for k in 0..3 {
            assert!(
                (got[k] - want[k]).abs() < 0.06 * spread,
                "{name} quantile {k}: {} vs {}",
                got[k],
                want[k]
            );
        }
    }
}

#[test]
fn contest_without_polls_follows_hierarchical_prior() {
    let mut polls = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let states = ["PA", "OH", "FL", "VA", "NC", "MI"];
    for s in &states[..5] {
        for t in 0..10 {
            polls.push((*s, t, 0.51 + 0.02 * rng.sample::<f64, _>(StandardNormal), 1000));
        }
    }
    let contests: Vec<(&str, f64)> = states.iter().map(|s| (*s, 0.5)).collect();
    let data = dataset(&contests, &polls);
    let spec = ModelSpec::new(ModelFamily::Static);
    let fit = fit(&spec, &data, &config(13, 1000, 3000)).unwrap();
    let j_alpha = fit.layout.contest_field(5, ContestField::Alpha).unwrap();
    let j_mu = fit.layout.hyper(HyperField::MuAlpha).unwrap();
    let j_sigma = fit.layout.hyper(HyperField::SigmaAlpha).unwrap();
    let alpha = fit.pooled(j_alpha);
    let mu = fit.pooled(j_mu);
    let sigma = fit.pooled(j_sigma);
    let n = alpha.len() as f64;
    // Prior predictive moments given the hyperparameter draws.
    let want_mean = mu.iter().sum::<f64>() / n;
    let want_var = mu.iter().zip(&sigma).map(|(m, s)| m * m + s * s).sum::<f64>() / n - want_mean * want_mean;
    let s = &fit.summaries[j_alpha];
    assert!((s.mean - want_mean).abs() < 4.0 * s.mcse_mean.unwrap(), "{} vs {want_mean}", s.mean);
    assert!((s.sd / want_var.sqrt() - 1.0).abs() < 0.1, "{} vs {}", s.sd, want_var.sqrt());
}

#[test]
fn fits_are_deterministic_given_seed() {
    let data = dataset(
        &[("PA", 0.5), ("OH", 0.48)],
        &[("PA", 3, 0.52, 800), ("PA", 9, 0.55, 800), ("OH", 5, 0.47, 600), ("OH", 1, 0.49, 700)],
    );
    for family in ModelFamily::ALL {
        let spec = ModelSpec::new(family);
        let cfg = config(21, 200, 200);
        let a = fit(&spec, &data, &cfg).unwrap();
        let b = fit(&spec, &data, &cfg).unwrap();
        assert_eq!(a.summaries, b.summaries, "{family}");
        assert_eq!(a.chains, b.chains);
    }
}

/// Dense Gaussian conditional of `theta_1..3` given `alpha`, with polls on
/// days 1 and 3 under the plug-in variance.
#[test]
fn plug_in_latent_draws_match_dense_conditional() {
    let (v, alpha, tau, gamma) = (0.5, 0.01, 0.015, 0.01);
    let polls = [(1u32, 0.53, 900u64), (3, 0.50, 1200)];
    let data = dataset(&[("PA", v)], &polls.map(|(t, y, n)| ("PA", t, y, n)));
    let spec = ModelSpec::new(ModelFamily::RandomWalk).with_likelihood(LikelihoodMode::PlugIn);
    let params = ContestParams {
        alpha,
        tau,
        beta: 0.0,
        gamma,
        theta: vec![0.5; 3],
    };

    // Prior: theta = v + L e with cov gamma^2 min(s, t); observe theta_1, theta_3.
    use nalgebra::{DMatrix, DVector};
    let prior = DMatrix::from_fn(3, 3, |i, j| gamma * gamma * ((i.min(j) + 1) as f64));
    let h = DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    let r = DMatrix::from_diagonal(&DVector::from_iterator(
        2,
        polls.iter().map(|(_, y, n)| tau * tau + y * (1.0 - y) / *n as f64),
    ));
    let resid = DVector::from_iterator(2, polls.iter().map(|(_, y, _)| y - alpha - v));
    let s = &h * &prior * h.transpose() + r;
    let gain = &prior * h.transpose() * s.clone().try_inverse().unwrap();
    let mean = DVector::from_element(3, v) + &gain * resid;
    let cov = &prior - &gain * &h * &prior;

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let draws: Vec<Vec<f64>> = (0..100_000)
        .map(|_| update_latent_block(&spec, 0, &params, &data, &mut rng).unwrap())
        .collect();
    let n = draws.len() as f64;
    for i in 0..3 {
        let m = draws.iter().map(|d| d[i]).sum::<f64>() / n;
        let sd = cov[(i, i)].sqrt();
        assert!((m - mean[i]).abs() < 4.0 * sd / n.sqrt(), "mean {i}: {m} vs {}", mean[i]);
        for j in 0..3 {
            let mj = draws.iter().map(|d| d[j]).sum::<f64>() / n;
            let c = draws.iter().map(|d| (d[i] - m) * (d[j] - mj)).sum::<f64>() / n;
            assert!((c - cov[(i, j)]).abs() < 0.03 * cov[(i, i)], "cov ({i},{j}): {c} vs {}", cov[(i, j)]);
        }
    }
}

#[test]
fn latent_block_limits() {
    // Unobserved days follow the walk: Var(theta_t) = t gamma^2.
    let gamma = 0.01;
    let spec = ModelSpec::new(ModelFamily::RandomWalk).with_likelihood(LikelihoodMode::PriorOnly);
    let data = dataset(&[("PA", 0.5)], &[("PA", 6, 0.5, 1000)]);
    let params = ContestParams {
        alpha: 0.0,
        tau: 0.02,
        beta: 0.0,
        gamma,
        theta: vec![0.5; 6],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws: Vec<Vec<f64>> = (0..40_000)
        .map(|_| update_latent_block(&spec, 0, &params, &data, &mut rng).unwrap())
        .collect();
    for t in [1usize, 3, 6] {
        let var = draws.iter().map(|d| (d[t - 1] - 0.5).powi(2)).sum::<f64>() / draws.len() as f64;
        assert!((var / (t as f64 * gamma * gamma) - 1.0).abs() < 0.05, "day {t}: {var}");
    }

    // A dominant poll pins the latent value to y - alpha.
    let spec = ModelSpec::new(ModelFamily::RandomWalk);
    let data = dataset(&[("PA", 0.5)], &[("PA", 1, 0.56, HUGE_N)]);
    let params = ContestParams {
        alpha: 0.02,
        tau: 1e-5,
        beta: 0.0,
        gamma: 0.01,
        theta: vec![0.54],
    };
    for _ in 0..200 {
        let th = update_latent_block(&spec, 0, &params, &data, &mut rng).unwrap();
        assert!((th[0] - 0.54).abs() < 1e-4);
    }
}
