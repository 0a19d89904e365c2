//! Synthetic election cycles with known truth, and a parameter-recovery
//! harness built on them.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::domain::{ElectionContest, Poll, PollDataset};
use crate::error::{Error, Result};
use crate::ingest::{write_polls, write_results, ContestResult, RawPollRecord};
use crate::models::{clamp_unit, inv_logit, logit, ContestParams, HyperParams, ModelSpec, ParamState};
use crate::par::{derive_seed, map_indexed, Exec};
use crate::sampler::{fit_exec, ContestField, HyperField, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSpec {
    Fixed(f64),
    Normal { mean: f64, sd: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteSpec {
    Fixed(f64),
    Uniform { lo: f64, hi: f64 },
}

/// How true preference moves as the election approaches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dynamics {
    /// Reverse random walk with step sd `gamma`, anchored at the result.
    RandomWalk,
    /// Preference equals the result on every day; `gamma` is ignored.
    Static,
    /// Logit of the poll mean moves by `slope` per day out; `alpha` acts on
    /// the logit scale and `gamma` is ignored.
    LinearDrift { slope: f64 },
    /// Random walk plus a level shift of `jump` on every day at least `day`
    /// days out.
    RegimeShift { day: u32, jump: f64 },
}

impl Dynamics {
    pub fn label(&self) -> &'static str {
        match self {
            Dynamics::RandomWalk => "random_walk",
            Dynamics::Static => "static",
            Dynamics::LinearDrift { .. } => "linear_drift",
            Dynamics::RegimeShift { .. } => "regime_shift",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub contests: usize,
    pub alpha: AlphaSpec,
    pub tau: f64,
    pub gamma: f64,
    pub dynamics: Dynamics,
    /// `(days out, sample size)` slots polled in every contest.
    pub schedule: Vec<(u32, u64)>,
    pub v: VoteSpec,
    pub year: i32,
    pub seed: u64,
}

impl SimConfig {
    /// `polls` slots spread evenly over `1..=max_day`, all of size `n`.
    pub fn even_schedule(polls: usize, max_day: u32, n: u64) -> Vec<(u32, u64)> {
        (0..polls)
            .map(|k| {
                let t = 1 + ((k as f64 + 0.5) * max_day as f64 / polls as f64) as u32;
                (t.min(max_day), n)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.contests == 0 {
            return bad("at least one contest is required".into());
        }
        if self.schedule.is_empty() {
            return bad("poll schedule is empty".into());
        }
        if self.schedule.iter().any(|&(_, n)| n == 0) {
            return bad("poll sample sizes must be positive".into());
        }
        if !(self.tau >= 0.0) || !(self.gamma >= 0.0) {
            return bad(format!("tau and gamma must be non-negative (got {}, {})", self.tau, self.gamma));
        }
        if let AlphaSpec::Normal { sd, .. } = self.alpha {
            if !(sd >= 0.0) {
                return bad(format!("alpha sd must be non-negative, got {sd}"));
            }
        }
        let (lo, hi) = match self.v {
            VoteSpec::Fixed(v) => (v, v),
            VoteSpec::Uniform { lo, hi } => (lo, hi),
        };
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return bad(format!("vote share range [{lo}, {hi}] must lie inside (0, 1)"));
        }
        Ok(())
    }

    fn max_day(&self) -> u32 {
        self.schedule.iter().map(|s| s.0).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimOutput {
    pub data: PollDataset,
    /// Per-contest truth. `theta` holds the preference path on days
    /// `1..=max_day` (for linear drift, the poll mean without `alpha`).
    pub truth: ParamState,
    /// Polls whose draw fell outside [0, 1] and was truncated.
    pub truncations: u64,
}

fn state_label(i: usize) -> String {
    format!("S{:03}", i + 1)
}

pub fn simulate_dataset(config: &SimConfig) -> Result<SimOutput> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let t_max = config.max_day();
    let mut contests = Vec::with_capacity(config.contests);
    let mut polls = Vec::new();
    let mut truth = Vec::with_capacity(config.contests);
    let mut truncations = 0;
    let normal = |rng: &mut ChaCha8Rng| rng.sample::<f64, _>(StandardNormal);

    for i in 0..config.contests {
        let v = match config.v {
            VoteSpec::Fixed(v) => v,
            VoteSpec::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        };
        let alpha = match config.alpha {
            AlphaSpec::Fixed(a) => a,
            AlphaSpec::Normal { mean, sd } => mean + sd * normal(&mut rng),
        };
        let mut theta = Vec::with_capacity(t_max as usize);
        let mut walk = v;
        for t in 1..=t_max {
            let value = match config.dynamics {
                Dynamics::Static => v,
                Dynamics::LinearDrift { slope } => inv_logit(logit(v) + slope * t as f64),
                Dynamics::RandomWalk => {
                    walk += config.gamma * normal(&mut rng);
                    walk
                }
                Dynamics::RegimeShift { day, jump } => {
                    walk += config.gamma * normal(&mut rng);
                    walk + if t >= day { jump } else { 0.0 }
                }
            };
            theta.push(value);
        }
        let contest = ElectionContest::new(state_label(i), config.year, v)?;
        let cp = ContestParams {
            alpha,
            tau: config.tau,
            beta: match config.dynamics {
                Dynamics::LinearDrift { slope } => slope,
                _ => 0.0,
            },
            gamma: match config.dynamics {
                Dynamics::RandomWalk | Dynamics::RegimeShift { .. } => config.gamma,
                _ => 0.0,
            },
            theta,
        };
        for &(t, n) in &config.schedule {
            let mean = match config.dynamics {
                Dynamics::LinearDrift { slope } => inv_logit(logit(v) + alpha + slope * t as f64),
                _ => clamp_unit(cp.theta_at(t, v) + alpha),
            };
            let sd = (mean * (1.0 - mean) / n as f64 + config.tau * config.tau).sqrt();
            let raw = mean + sd * normal(&mut rng);
            let y = raw.clamp(0.0, 1.0);
            if y != raw {
                truncations += 1;
            }
            polls.push(Poll::new(contest.contest_id.clone(), t, y, n)?);
        }
        contests.push(contest);
        truth.push(cp);
    }

    let (mu_alpha, sigma_alpha) = match config.alpha {
        AlphaSpec::Fixed(a) => (a, 0.0),
        AlphaSpec::Normal { mean, sd } => (mean, sd),
    };
    Ok(SimOutput {
        data: PollDataset::new(contests, polls)?,
        truth: ParamState {
            contests: truth,
            hyper: HyperParams {
                mu_alpha,
                sigma_alpha,
                ..HyperParams::default()
            },
        },
        truncations,
    })
}

const ELECTION_MONTH_DAY: (u32, u32) = (11, 3);

/// Writes the simulated polls and results in the ingest CSV format. Each
/// poll is fielded on a single day; shares are stored as percentages.
pub fn write_ingest_csv<W1: Write, W2: Write>(out: &SimOutput, polls: W1, results_out: W2) -> Result<()> {
    let mut records = Vec::with_capacity(out.data.polls.len());
    let index = out.data.contest_index();
    for p in &out.data.polls {
        let c = &out.data.contests[index[&p.contest_id]];
        let eday = NaiveDate::from_ymd_opt(c.year, ELECTION_MONTH_DAY.0, ELECTION_MONTH_DAY.1)
            .ok_or_else(|| Error::InvalidConfig(format!("no election date for year {}", c.year)))?;
        let day = eday - chrono::Duration::days(p.t as i64);
        records.push(RawPollRecord {
            state: c.state.clone(),
            year: c.year,
            election_date: eday,
            field_start: Some(day),
            field_end: day,
            rep_pct: 100.0 * p.y,
            dem_pct: 100.0 * (1.0 - p.y),
            sample_size: p.n,
            pollster: p.pollster.clone(),
        });
    }
    write_polls(&records, polls)?;
    let results: Vec<ContestResult> = out
        .data
        .contests
        .iter()
        .map(|c| ContestResult {
            state: c.state.clone(),
            year: c.year,
            rep_votes: 100.0 * c.v,
            dem_votes: 100.0 * (1.0 - c.v),
        })
        .collect();
    write_results(&results, results_out)
}

/// Recovery statistics for one parameter (pooled over contests for
/// contest-level parameters).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamRecovery {
    /// Mean of (posterior mean - truth).
    pub bias: f64,
    /// Fraction of 95% intervals containing the truth.
    pub coverage: f64,
    pub mean_width: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub reps: usize,
    /// `(replication, error message)` for fits that failed.
    pub failures: Vec<(usize, String)>,
    pub params: BTreeMap<String, ParamRecovery>,
    /// Posterior mean of the pooled poll error per successful replication.
    pub mu_alpha_means: Vec<f64>,
    /// Worst split R-hat per successful replication.
    pub max_rhat: Vec<f64>,
}

impl RecoveryReport {
    pub fn mean_mu_alpha(&self) -> Option<f64> {
        let n = self.mu_alpha_means.len();
        (n > 0).then(|| self.mu_alpha_means.iter().sum::<f64>() / n as f64)
    }
}

#[derive(Default)]
struct Tally {
    err: f64,
    covered: usize,
    width: f64,
    count: usize,
}

impl Tally {
    fn add(&mut self, mean: f64, lo: f64, hi: f64, truth: f64) {
        self.err += mean - truth;
        self.width += hi - lo;
        self.covered += usize::from(lo <= truth && truth <= hi);
        self.count += 1;
    }

    fn finish(&self) -> ParamRecovery {
        let n = self.count.max(1) as f64;
        ParamRecovery {
            bias: self.err / n,
            coverage: self.covered as f64 / n,
            mean_width: self.width / n,
            count: self.count,
        }
    }
}

type RepOutcome = std::result::Result<(Vec<(String, f64, f64, f64, f64)>, f64, f64), String>;

/// Simulates and fits `reps` times, each with seeds derived from the
/// simulation seed and the replication index.
pub fn recovery_experiment(
    sim: &SimConfig,
    spec: &ModelSpec,
    sampler: &SamplerConfig,
    reps: usize,
    exec: Exec,
) -> Result<RecoveryReport> {
    if reps == 0 {
        return Err(Error::InvalidConfig("reps must be at least 1".into()));
    }
    sim.validate()?;
    spec.validate()?;
    sampler.validate()?;
    let outcomes: Vec<RepOutcome> = map_indexed(reps, exec, |rep| {
        let sim_rep = SimConfig {
            seed: derive_seed(sim.seed, &[rep as u64, 0]),
            ..sim.clone()
        };
        let cfg = SamplerConfig {
            seed: derive_seed(sim.seed, &[rep as u64, 1]),
            ..sampler.clone()
        };
        let out = simulate_dataset(&sim_rep).map_err(|e| e.to_string())?;
        let fit = fit_exec(spec, &out.data, &cfg, Exec::Sequential).map_err(|e| e.to_string())?;
        let mut rows = Vec::new();
        for (r, truth) in out.truth.contests.iter().enumerate() {
            let mut fields = vec![(ContestField::Alpha, "alpha", truth.alpha)];
            if spec.fixed.tau.is_none() {
                fields.push((ContestField::Tau, "tau", truth.tau));
            }
            if spec.has_walk() && spec.fixed.gamma.is_none() {
                fields.push((ContestField::Gamma, "gamma", truth.gamma));
            }
            for (field, name, value) in fields {
                if let Some(s) = fit.contest_summary(r, field) {
                    rows.push((name.to_string(), s.mean, s.q025, s.q975, value));
                }
            }
        }
        let mu = fit
            .hyper_summary(HyperField::MuAlpha)
            .ok_or("no pooled error in fit")?;
        rows.push(("mu_alpha".into(), mu.mean, mu.q025, mu.q975, out.truth.hyper.mu_alpha));
        let rhat = fit.max_rhat().map(|(_, r)| r).unwrap_or(f64::NAN);
        Ok((rows, mu.mean, rhat))
    });

    let mut report = RecoveryReport {
        reps,
        ..RecoveryReport::default()
    };
    let mut tallies: BTreeMap<String, Tally> = BTreeMap::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok((rows, mu, rhat)) => {
                for (name, mean, lo, hi, truth) in rows {
                    tallies.entry(name).or_default().add(mean, lo, hi, truth);
                }
                report.mu_alpha_means.push(mu);
                report.max_rhat.push(rhat);
            }
            Err(e) => report.failures.push((rep, e)),
        }
    }
    report.params = tallies.into_iter().map(|(k, t)| (k, t.finish())).collect();
    Ok(report)
}
