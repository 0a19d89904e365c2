//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and
//! exits non-zero if any criterion fails.
//!
//! `POLLERR_ACCEPTANCE_ONLY=2,5` runs a subset. Criterion 7 needs
//! `POLLERR_REPLICATION_DATA` pointing at a dataset file produced by
//! `pollerr ingest`.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use pollerr::analysis::{estimate_range, pooled_bias, window_sweep};
use pollerr::models::{FixedParams, ModelFamily, ModelSpec};
use pollerr::oracle::{rw_alpha_posterior_flat, rw_marginal_cov, single_poll_weight, static_alpha_posterior};
use pollerr::par::Exec;
use pollerr::sampler::{fit, ContestField, SamplerConfig, Summary};
use pollerr::simulate::{recovery_experiment, simulate_dataset, AlphaSpec, Dynamics, SimConfig, VoteSpec};
use pollerr::{ElectionContest, Poll, PollDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

const HUGE_N: u64 = 1_000_000_000;

fn mcse_agreement(s: &Summary, mean: f64, sd: f64) -> (bool, String) {
    let (se_m, se_s) = (s.mcse_mean.unwrap_or(f64::NAN), s.mcse_sd.unwrap_or(f64::NAN));
    let ok = (s.mean - mean).abs() < 3.0 * se_m && (s.sd - sd).abs() < 3.0 * se_s;
    (
        ok,
        format!(
            "mean {:.6} vs {mean:.6} (3 mcse {:.6}), sd {:.6} vs {sd:.6} (3 mcse {:.6})",
            s.mean,
            3.0 * se_m,
            s.sd,
            3.0 * se_s
        ),
    )
}

fn one_contest(polls: &[(u32, f64)]) -> PollDataset {
    let contest = ElectionContest::new("PA", 2008, 0.5).unwrap();
    let polls = polls
        .iter()
        .map(|&(t, y)| Poll::new(contest.contest_id.clone(), t, y, HUGE_N).unwrap())
        .collect();
    PollDataset::new(vec![contest], polls).unwrap()
}

fn oracle_config(seed: u64) -> SamplerConfig {
    SamplerConfig {
        chains: 4,
        warmup_iters: 1000,
        sampling_iters: 5000,
        seed,
        ..SamplerConfig::default()
    }
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let polls: Vec<(u32, f64)> = (0..20)
        .map(|i| (i * 5, 0.52 + 0.02 * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let ys: Vec<f64> = polls.iter().map(|p| p.1).collect();
    let (mu, sigma, tau) = (0.0, 0.05, 0.02);
    let spec = ModelSpec::new(ModelFamily::Static).with_fixed(FixedParams {
        tau: Some(tau),
        mu_alpha: Some(mu),
        sigma_alpha: Some(sigma),
        ..FixedParams::default()
    });
    let fit = match fit(&spec, &one_contest(&polls), &oracle_config(1)) {
        Ok(f) => f,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let oracle = static_alpha_posterior(&ys, 0.5, tau, mu, sigma).unwrap();
    let (ok, detail) = mcse_agreement(fit.contest_summary(0, ContestField::Alpha).unwrap(), oracle.mean, oracle.sd());
    let elapsed = start.elapsed();
    check(
        ok && elapsed < Duration::from_secs(60),
        format!("{detail}; {:.1}s", elapsed.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let spec = ModelSpec::new(ModelFamily::RandomWalk).with_fixed(FixedParams {
        tau: Some(0.02),
        gamma: Some(0.01),
        mu_alpha: Some(0.0),
        sigma_alpha: Some(10.0),
    });
    let fit = match fit(&spec, &one_contest(&[(1, 0.52), (2, 0.55)]), &oracle_config(2)) {
        Ok(f) => f,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let oracle = rw_alpha_posterior_flat(&[0.52, 0.55], &[1, 2], 0.5, 0.02, 0.01).unwrap();
    // Closed form: mean 1/30, variance 2.9e-7 / 9e-4.
    let closed_ok = (oracle.mean - 0.033_333).abs() < 1e-6 && (oracle.sd() - 0.017_950_5).abs() < 1e-6;
    let (ok, detail) = mcse_agreement(fit.contest_summary(0, ContestField::Alpha).unwrap(), oracle.mean, oracle.sd());
    let elapsed = start.elapsed();
    check(
        ok && closed_ok && elapsed < Duration::from_secs(60),
        format!("{detail}; {:.1}s", elapsed.as_secs_f64()),
    )
}

fn criterion_3() -> Outcome {
    let (tau, gamma) = (0.02, 0.01);
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for ts in [[1u32, 2], [5, 5], [3, 40], [0, 17]] {
        let reps = 100_000;
        let mut pairs = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut theta = 0.0;
            let mut day = 0;
            let mut ys = [0.0; 2];
            let order = if ts[0] <= ts[1] { [0, 1] } else { [1, 0] };
            for k in order {
                while day < ts[k] {
                    theta += gamma * rng.sample::<f64, _>(StandardNormal);
                    day += 1;
                }
                ys[k] = theta + tau * rng.sample::<f64, _>(StandardNormal);
            }
            pairs.push(ys);
        }
        let cov = rw_marginal_cov(&ts, tau, gamma);
        for i in 0..2 {
            for j in 0..2 {
                let prods: Vec<f64> = pairs.iter().map(|p| p[i] * p[j]).collect();
                let m = prods.iter().sum::<f64>() / reps as f64;
                let sd = (prods.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (reps as f64 - 1.0)).sqrt();
                let z = (m - cov.sigma[(i, j)]).abs() / (sd / (reps as f64).sqrt());
                worst = worst.max(z);
            }
        }
    }
    check(worst < 3.0, format!("largest deviation {worst:.2} standard errors over 4 day pairs"))
}

fn criterion_4() -> Outcome {
    // 4 taus x 5 gammas x 5 days = 100 (t, tau, gamma) combinations.
    let days = [0u32, 1, 5, 25, 100];
    let sigma_alpha = 0.05;
    let mut combos = 0;
    let mut failures = Vec::new();
    for tau in [0.005, 0.01, 0.02, 0.04] {
        for gamma in [0.0, 0.001, 0.005, 0.01, 0.03] {
            let w: Vec<f64> = days
                .iter()
                .map(|&t| single_poll_weight(t, tau, gamma, sigma_alpha).unwrap().0)
                .collect();
            combos += days.len();
            let ok = if gamma > 0.0 {
                w.windows(2).all(|p| p[1] < p[0])
            } else {
                w.windows(2).all(|p| p[1] == p[0])
            };
            if !ok {
                failures.push(format!("tau={tau} gamma={gamma}"));
            }
        }
    }
    check(failures.is_empty(), format!("{combos} combinations, failures: {failures:?}"))
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let sim = SimConfig {
        contests: 50,
        alpha: AlphaSpec::Normal { mean: -0.02, sd: 0.01 },
        tau: 0.01,
        gamma: 0.003,
        dynamics: Dynamics::RandomWalk,
        schedule: SimConfig::even_schedule(30, 100, 800),
        v: VoteSpec::Uniform { lo: 0.35, hi: 0.65 },
        year: 2016,
        seed: 5,
    };
    let spec = ModelSpec::new(ModelFamily::RandomWalk);
    let cfg = SamplerConfig {
        chains: 2,
        warmup_iters: 500,
        sampling_iters: 500,
        store_latent: false,
        ..SamplerConfig::default()
    };
    let reps = 200;
    let report = match recovery_experiment(&sim, &spec, &cfg, reps, Exec::Parallel) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let alpha = &report.params["alpha"];
    let mu = report.mean_mu_alpha().unwrap_or(f64::NAN);
    let mu_cov = report.params.get("mu_alpha").map(|p| p.coverage).unwrap_or(f64::NAN);
    let elapsed = start.elapsed();
    let ok = report.failures.is_empty()
        && (0.90..=0.99).contains(&alpha.coverage)
        && (mu - -0.02).abs() <= 0.005
        && elapsed <= Duration::from_secs(30 * 60);
    check(
        ok,
        format!(
            "{reps} reps, {} failed; alpha coverage {:.3}, width {:.4}; mean mu_alpha {:.4} (truth -0.02), mu_alpha coverage {mu_cov:.3}; {:.0}s",
            report.failures.len(),
            alpha.coverage,
            alpha.mean_width,
            mu,
            elapsed.as_secs_f64()
        ),
    )
}

/// Regime-shift fixture: a level change of +5 points from day 30 outward
/// on top of a slow walk, densely polled.
fn regime_shift_data() -> PollDataset {
    simulate_dataset(&SimConfig {
        contests: 20,
        alpha: AlphaSpec::Normal { mean: 0.0, sd: 0.01 },
        tau: 0.005,
        gamma: 0.001,
        dynamics: Dynamics::RegimeShift { day: 30, jump: 0.05 },
        schedule: SimConfig::even_schedule(40, 100, 1000),
        v: VoteSpec::Uniform { lo: 0.4, hi: 0.6 },
        year: 2008,
        seed: 6,
    })
    .unwrap()
    .data
}

fn criterion_6() -> Outcome {
    let data = regime_shift_data();
    let cfg = SamplerConfig {
        chains: 2,
        warmup_iters: 500,
        sampling_iters: 500,
        seed: 6,
        store_latent: false,
        ..SamplerConfig::default()
    };
    let specs = [ModelSpec::new(ModelFamily::Linear), ModelSpec::new(ModelFamily::RandomWalk)];
    let grid: Vec<u32> = (1..=10).map(|k| 10 * k).collect();
    let sweep = match window_sweep(&data, &specs, &grid, &cfg, Exec::Parallel) {
        Ok(s) => s,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    if let Some((cell, e)) = sweep.failures().next() {
        return Outcome::Fail(format!("{} T={} failed: {e}", cell.model, cell.window));
    }
    let mean_moe = |model: ModelFamily| {
        let vals: Vec<f64> = sweep
            .cells
            .iter()
            .filter(|c| c.model == model)
            .flat_map(|c| c.outcome.as_ref().unwrap().contests.iter().map(|e| e.excess_moe.mean))
            .collect();
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    let (moe_lin, moe_rw) = (mean_moe(ModelFamily::Linear), mean_moe(ModelFamily::RandomWalk));
    let narrower = data
        .contests
        .iter()
        .filter(|c| {
            let (l0, l1) = estimate_range(&sweep, &c.contest_id, ModelFamily::Linear).unwrap();
            let (r0, r1) = estimate_range(&sweep, &c.contest_id, ModelFamily::RandomWalk).unwrap();
            r1 - r0 < l1 - l0
        })
        .count();
    let frac = narrower as f64 / data.contests.len() as f64;
    check(
        moe_lin >= 1.5 * moe_rw && frac >= 0.7,
        format!(
            "mean excess MoE linear {moe_lin:.2} pp vs random walk {moe_rw:.2} pp (ratio {:.2}); random walk range narrower in {narrower}/{} contests",
            moe_lin / moe_rw,
            data.contests.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let Ok(path) = std::env::var("POLLERR_REPLICATION_DATA") else {
        return Outcome::Skip("POLLERR_REPLICATION_DATA not set".into());
    };
    let text = match std::fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) => return Outcome::Fail(format!("{path}: {e}")),
    };
    let data: PollDataset = match serde_json::from_str(&text) {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(format!("{path}: {e}")),
    };
    let cfg = SamplerConfig {
        store_latent: false,
        ..SamplerConfig::default()
    };
    let spec = ModelSpec::new(ModelFamily::RandomWalk);
    let window = pollerr::WindowConfig::new(50).unwrap();
    let mut details = Vec::new();
    let mut ok = true;
    for year in [2016, 2020] {
        let subset = pollerr::filter_window(&data.restrict_to_year(year), window);
        let result = fit(&spec, &subset, &cfg).map(|f| pooled_bias(&f));
        match result {
            Ok(Some(s)) => {
                ok &= s.mean < 0.0 && (1.0..=3.0).contains(&s.mean.abs());
                details.push(format!("{year}: {:.2} pp", s.mean));
            }
            Ok(None) => {
                ok = false;
                details.push(format!("{year}: no pooled error"));
            }
            Err(e) => {
                ok = false;
                details.push(format!("{year}: {e}"));
            }
        }
    }
    check(ok, details.join(", "))
}

fn cli_binary() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_pollerr"))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(cli_binary())
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    match out.status.code() {
        Some(0) | Some(3) => Ok(()),
        _ => Err(format!(
            "pollerr {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )),
    }
}

fn summary_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.file_name().is_some_and(|n| n != "manifest.json"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn criterion_8() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let run = |args: Vec<String>| run_cli(&args.iter().map(|s| s.as_str()).collect::<Vec<_>>());
    let p = |name: &str| root.join(name).to_string_lossy().into_owned();

    let steps = || -> Result<Vec<String>, String> {
        run(vec![
            "simulate".into(),
            "--contests".into(),
            "6".into(),
            "--polls".into(),
            "12".into(),
            "--dynamics".into(),
            "random_walk".into(),
            "--gamma".into(),
            "0.004".into(),
            "--seed".into(),
            "8".into(),
            "--run-dir".into(),
            p("sim"),
        ])?;
        let data = p("sim/dataset.json");
        let mut mismatched = Vec::new();
        let originals = [
            (
                "fit",
                vec!["fit", "--data", &data, "--model", "rw", "--window", "40", "--chains", "3", "--warmup", "200", "--iters", "200", "--workers", "1"],
            ),
            (
                "sweep",
                vec!["sweep", "--data", &data, "--model", "all", "--grid", "20:40:10", "--chains", "2", "--warmup", "150", "--iters", "150", "--workers", "1"],
            ),
        ];
        for (name, args) in originals {
            let first = p(&format!("{name}-a"));
            let mut a: Vec<String> = args.iter().map(|s| s.to_string()).collect();
            a.extend(["--run-dir".into(), first.clone()]);
            run(a)?;
            let second = p(&format!("{name}-b"));
            run(vec![
                "replay".into(),
                format!("{first}/manifest.json"),
                "--workers".into(),
                "3".into(),
                "--run-dir".into(),
                second.clone(),
            ])?;
            if summary_files(Path::new(&first)) != summary_files(Path::new(&second)) {
                mismatched.push(name.to_string());
            }
        }
        let sim_replay = p("sim-b");
        run(vec![
            "replay".into(),
            p("sim/manifest.json"),
            "--workers".into(),
            "2".into(),
            "--run-dir".into(),
            sim_replay.clone(),
        ])?;
        if summary_files(Path::new(&p("sim"))) != summary_files(Path::new(&sim_replay)) {
            mismatched.push("simulate".into());
        }
        Ok(mismatched)
    };
    match steps() {
        Ok(m) => check(
            m.is_empty(),
            if m.is_empty() {
                "simulate, fit and sweep replays byte-identical with 1 vs 2-3 workers".into()
            } else {
                format!("differing outputs: {m:?}")
            },
        ),
        Err(e) => Outcome::Fail(e),
    }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

fn main() {
    let only: Option<Vec<u32>> = std::env::var("POLLERR_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [Criterion; 8] = [
        (1, "static oracle equivalence", criterion_1),
        (2, "random-walk oracle equivalence", criterion_2),
        (3, "marginal covariance law", criterion_3),
        (4, "single-poll weight monotonicity", criterion_4),
        (5, "recovery calibration", criterion_5),
        (6, "misspecification behaviour", criterion_6),
        (7, "replication-data pooled error", criterion_7),
        (8, "manifest replay determinism", criterion_8),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let (tag, detail) = match run() {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {id} [{tag}] {name}: {detail}");
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
