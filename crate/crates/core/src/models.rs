//! The three model families: log-densities and derived quantities.
//!
//! Every family shares the observation model
//! `y ~ N(p, p(1-p)/n + tau^2)` and differs only in how the poll mean `p`
//! is built:
//!
//! * `Static`: `p = clamp(v + alpha)`
//! * `Linear`: `logit(p) = logit(v) + alpha + beta * t`
//! * `RandomWalk`: `p = clamp(theta_t + alpha)` with `theta_0 = v` and
//!   `theta_{t+1} ~ N(theta_t, gamma^2)`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::domain::{Poll, PollDataset};
use crate::error::{Error, Result};

/// Random-walk scales below this value are evaluated at the floor.
pub const GAMMA_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelFamily {
    #[serde(rename = "static")]
    Static,
    #[serde(rename = "linear")]
    Linear,
    #[serde(rename = "rw")]
    RandomWalk,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 3] = [ModelFamily::Static, ModelFamily::Linear, ModelFamily::RandomWalk];

    pub fn label(self) -> &'static str {
        match self {
            ModelFamily::Static => "static",
            ModelFamily::Linear => "linear",
            ModelFamily::RandomWalk => "rw",
        }
    }

    /// Short code used in seed derivation and in `M1`/`M2`/`M3` style flags.
    pub fn code(self) -> u64 {
        match self {
            ModelFamily::Static => 1,
            ModelFamily::Linear => 2,
            ModelFamily::RandomWalk => 3,
        }
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "static" | "m1" => Ok(ModelFamily::Static),
            "linear" | "m2" => Ok(ModelFamily::Linear),
            "rw" | "randomwalk" | "random_walk" | "m3" => Ok(ModelFamily::RandomWalk),
            other => Err(Error::InvalidConfig(format!("unknown model '{other}'"))),
        }
    }
}

/// Scales of the hyperpriors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperPriorConfig {
    pub mu_alpha_sd: f64,
    pub sigma_alpha_scale: f64,
    pub sigma_tau_scale: f64,
    pub sigma_gamma_scale: f64,
    /// Linear model only: prior sd of the mean daily logit drift.
    pub mu_beta_sd: f64,
    /// Linear model only: half-normal scale of the drift spread.
    pub sigma_beta_scale: f64,
}

impl Default for HyperPriorConfig {
    fn default() -> Self {
        HyperPriorConfig {
            mu_alpha_sd: 0.05,
            sigma_alpha_scale: 0.2,
            sigma_tau_scale: 0.05,
            sigma_gamma_scale: 0.01,
            mu_beta_sd: 0.01,
            sigma_beta_scale: 0.02,
        }
    }
}

impl HyperPriorConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.mu_alpha_sd,
            self.sigma_alpha_scale,
            self.sigma_tau_scale,
            self.sigma_gamma_scale,
            self.mu_beta_sd,
            self.sigma_beta_scale,
        ];
        if all.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidConfig("hyperprior scales must be positive".into()))
        }
    }
}

/// Parameters pinned by a point-mass prior. A pinned per-contest parameter
/// takes the same value in every contest.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixedParams {
    pub tau: Option<f64>,
    pub gamma: Option<f64>,
    pub mu_alpha: Option<f64>,
    pub sigma_alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LikelihoodMode {
    /// Binomial variance evaluated at the model mean.
    #[default]
    #[serde(rename = "exact")]
    Exact,
    /// Binomial variance evaluated at the observed share.
    #[serde(rename = "plug_in")]
    PlugIn,
    /// No likelihood; the sampler targets the prior.
    #[serde(rename = "prior_only")]
    PriorOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    #[serde(default)]
    pub hyperpriors: HyperPriorConfig,
    #[serde(default)]
    pub fixed: FixedParams,
    #[serde(default)]
    pub likelihood: LikelihoodMode,
}

impl ModelSpec {
    pub fn new(family: ModelFamily) -> Self {
        ModelSpec {
            family,
            hyperpriors: HyperPriorConfig::default(),
            fixed: FixedParams::default(),
            likelihood: LikelihoodMode::Exact,
        }
    }

    pub fn with_likelihood(mut self, mode: LikelihoodMode) -> Self {
        self.likelihood = mode;
        self
    }

    pub fn with_fixed(mut self, fixed: FixedParams) -> Self {
        self.fixed = fixed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperpriors.validate()?;
        let f = &self.fixed;
        for (name, value, strictly) in [
            ("tau", f.tau, false),
            ("gamma", f.gamma, false),
            ("sigma_alpha", f.sigma_alpha, true),
        ] {
            if let Some(x) = value {
                if !x.is_finite() || x < 0.0 || (strictly && x == 0.0) {
                    return Err(Error::InvalidConfig(format!("fixed {name} = {x} is not allowed")));
                }
            }
        }
        if let Some(m) = f.mu_alpha {
            if !m.is_finite() {
                return Err(Error::InvalidConfig("fixed mu_alpha must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn has_beta(&self) -> bool {
        self.family == ModelFamily::Linear
    }

    pub fn has_walk(&self) -> bool {
        self.family == ModelFamily::RandomWalk
    }
}

/// Per-contest parameters. Inactive entries stay at zero (`beta` outside
/// the linear model, `gamma` and `theta` outside the random walk).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContestParams {
    pub alpha: f64,
    pub tau: f64,
    pub beta: f64,
    pub gamma: f64,
    /// `theta[t - 1]` holds the latent preference `t` days out.
    pub theta: Vec<f64>,
}

impl ContestParams {
    /// Latent preference `t` days before the election, `theta_0 = v`.
    pub fn theta_at(&self, t: u32, v: f64) -> f64 {
        if t == 0 {
            v
        } else {
            self.theta[t as usize - 1]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HyperParams {
    pub mu_alpha: f64,
    pub sigma_alpha: f64,
    pub sigma_tau: f64,
    pub sigma_gamma: f64,
    pub mu_beta: f64,
    pub sigma_beta: f64,
}

/// Full parameter vector, contests aligned with `PollDataset::contests`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamState {
    pub contests: Vec<ContestParams>,
    pub hyper: HyperParams,
}

impl ParamState {
    pub fn check_consistent(&self, spec: &ModelSpec, data: &PollDataset) -> Result<()> {
        if self.contests.len() != data.contests.len() {
            return Err(Error::InconsistentParams(format!(
                "{} contest parameter sets for {} contests",
                self.contests.len(),
                data.contests.len()
            )));
        }
        if spec.has_walk() {
            for ((cp, c), t_max) in self.contests.iter().zip(&data.contests).zip(data.max_days()) {
                if cp.theta.len() != t_max as usize {
                    return Err(Error::InconsistentParams(format!(
                        "{} has {} latent days, expected {}",
                        c.contest_id,
                        cp.theta.len(),
                        t_max
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn inv_logit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn clamp_unit(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

pub fn normal_lpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Half-normal log-density on `[0, inf)` with the given scale.
pub fn half_normal_lpdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 || x.is_nan() {
        return f64::NEG_INFINITY;
    }
    std::f64::consts::LN_2 + normal_lpdf(x, 0.0, scale * scale)
}

/// Poll mean before clamping. For the linear family this is already inside
/// `(0, 1)`; `v` must then lie strictly inside `(0, 1)`.
pub(crate) fn raw_mean(family: ModelFamily, cp: &ContestParams, t: u32, v: f64) -> f64 {
    match family {
        ModelFamily::Static => v + cp.alpha,
        ModelFamily::Linear => inv_logit(logit(v) + cp.alpha + cp.beta * t as f64),
        ModelFamily::RandomWalk => cp.theta_at(t, v) + cp.alpha,
    }
}

/// Expected poll share for `poll` under `spec`.
pub fn poll_mean(spec: &ModelSpec, params: &ContestParams, poll: &Poll, v: f64) -> Result<f64> {
    if spec.family == ModelFamily::Linear && !(v > 0.0 && v < 1.0) {
        return Err(Error::Domain(v));
    }
    if spec.has_walk() && poll.t as usize > params.theta.len() {
        return Err(Error::InconsistentParams(format!(
            "poll at day {} beyond latent horizon {}",
            poll.t,
            params.theta.len()
        )));
    }
    Ok(clamp_unit(raw_mean(spec.family, params, poll.t, v)))
}

/// Binomial sampling variance plus additive excess variance.
pub fn poll_variance(p: f64, n: u64, tau: f64) -> f64 {
    p * (1.0 - p) / n as f64 + tau * tau
}

/// A poll reduced to what the likelihood needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PollObs {
    pub t: u32,
    pub y: f64,
    pub n: f64,
}

impl PollObs {
    pub fn from_poll(p: &Poll) -> Self {
        PollObs {
            t: p.t,
            y: p.y,
            n: p.n as f64,
        }
    }

    /// Observation variance with the binomial term at the observed share.
    pub fn plug_in_variance(&self, tau: f64) -> f64 {
        self.y * (1.0 - self.y) / self.n + tau * tau
    }
}

/// Log-likelihood of one contest's polls. Returns `-inf` when any poll has
/// zero variance.
pub(crate) fn contest_log_lik(
    mode: LikelihoodMode,
    family: ModelFamily,
    cp: &ContestParams,
    v: f64,
    polls: &[PollObs],
) -> f64 {
    match mode {
        LikelihoodMode::PriorOnly => 0.0,
        LikelihoodMode::Exact => {
            let tau2 = cp.tau * cp.tau;
            let mut acc = 0.0;
            for o in polls {
                let p = clamp_unit(raw_mean(family, cp, o.t, v));
                let var = p * (1.0 - p) / o.n + tau2;
                if var <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                acc += normal_lpdf(o.y, p, var);
            }
            acc
        }
        LikelihoodMode::PlugIn => {
            let mut acc = 0.0;
            for o in polls {
                let p = clamp_unit(raw_mean(family, cp, o.t, v));
                let var = o.plug_in_variance(cp.tau);
                if var <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                acc += normal_lpdf(o.y, p, var);
            }
            acc
        }
    }
}

/// Plug-in likelihood of the random walk without clamping: the linear
/// Gaussian model the filter works with.
pub(crate) fn linear_gaussian_log_lik(cp: &ContestParams, v: f64, polls: &[PollObs]) -> f64 {
    let mut acc = 0.0;
    for o in polls {
        let var = o.plug_in_variance(cp.tau);
        if var <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc += normal_lpdf(o.y, cp.theta_at(o.t, v) + cp.alpha, var);
    }
    acc
}

/// Reverse random-walk log-density of `theta` anchored at `theta_0 = v`.
pub(crate) fn walk_log_prior(theta: &[f64], v: f64, gamma: f64) -> f64 {
    if gamma < 0.0 {
        return f64::NEG_INFINITY;
    }
    let g = gamma.max(GAMMA_FLOOR);
    let var = g * g;
    let mut prev = v;
    let mut acc = 0.0;
    for &th in theta {
        acc += normal_lpdf(th, prev, var);
        prev = th;
    }
    acc
}

/// Sum of poll log-densities under `spec`.
pub fn log_likelihood(spec: &ModelSpec, params: &ParamState, data: &PollDataset) -> Result<f64> {
    params.check_consistent(spec, data)?;
    if spec.family == ModelFamily::Linear {
        if let Some(c) = data.contests.iter().find(|c| !(c.v > 0.0 && c.v < 1.0)) {
            return Err(Error::Domain(c.v));
        }
    }
    if spec.likelihood == LikelihoodMode::PriorOnly {
        return Ok(0.0);
    }
    let index = data.contest_index();
    let mut acc = 0.0;
    for (i, poll) in data.polls.iter().enumerate() {
        let r = index[&poll.contest_id];
        let cp = &params.contests[r];
        let v = data.contests[r].v;
        let p = poll_mean(spec, cp, poll, v)?;
        let var = match spec.likelihood {
            LikelihoodMode::PlugIn => poll_variance(poll.y, poll.n, cp.tau),
            _ => poll_variance(p, poll.n, cp.tau),
        };
        if var <= 0.0 {
            return Err(Error::DegenerateLikelihood { poll: i });
        }
        acc += normal_lpdf(poll.y, p, var);
    }
    Ok(acc)
}

/// Joint log prior density. Pinned parameters contribute nothing at their
/// pinned value and `-inf` anywhere else.
pub fn log_prior(spec: &ModelSpec, params: &ParamState, data: &PollDataset) -> Result<f64> {
    params.check_consistent(spec, data)?;
    let hp = &spec.hyperpriors;
    let h = &params.hyper;
    let fixed = &spec.fixed;
    let mut acc = 0.0;

    match fixed.mu_alpha {
        Some(m) if m != h.mu_alpha => return Ok(f64::NEG_INFINITY),
        Some(_) => {}
        None => acc += normal_lpdf(h.mu_alpha, 0.0, hp.mu_alpha_sd.powi(2)),
    }
    match fixed.sigma_alpha {
        Some(s) if s != h.sigma_alpha => return Ok(f64::NEG_INFINITY),
        Some(_) => {}
        None => acc += half_normal_lpdf(h.sigma_alpha, hp.sigma_alpha_scale),
    }
    acc += half_normal_lpdf(h.sigma_tau, hp.sigma_tau_scale);
    if spec.has_walk() {
        acc += half_normal_lpdf(h.sigma_gamma, hp.sigma_gamma_scale);
    }
    if spec.has_beta() {
        acc += normal_lpdf(h.mu_beta, 0.0, hp.mu_beta_sd.powi(2));
        acc += half_normal_lpdf(h.sigma_beta, hp.sigma_beta_scale);
    }
    if !acc.is_finite() || h.sigma_alpha <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }

    for (cp, contest) in params.contests.iter().zip(&data.contests) {
        acc += normal_lpdf(cp.alpha, h.mu_alpha, h.sigma_alpha.powi(2));
        match fixed.tau {
            Some(t) if t != cp.tau => return Ok(f64::NEG_INFINITY),
            Some(_) => {}
            None => acc += half_normal_lpdf(cp.tau, h.sigma_tau),
        }
        if spec.has_beta() {
            acc += normal_lpdf(cp.beta, h.mu_beta, h.sigma_beta.powi(2));
        }
        if spec.has_walk() {
            match fixed.gamma {
                Some(g) if g != cp.gamma => return Ok(f64::NEG_INFINITY),
                Some(_) => {}
                None => acc += half_normal_lpdf(cp.gamma, h.sigma_gamma),
            }
            acc += walk_log_prior(&cp.theta, contest.v, cp.gamma);
        }
        if !acc.is_finite() {
            return Ok(f64::NEG_INFINITY);
        }
    }
    Ok(acc)
}

/// Expected error of an election-day poll, in percentage points. Positive
/// values mean Republican support is overstated.
pub fn election_day_error(family: ModelFamily, alpha: f64, v: f64) -> Result<f64> {
    match family {
        ModelFamily::Static | ModelFamily::RandomWalk => Ok(100.0 * alpha),
        ModelFamily::Linear => {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Domain(v));
            }
            Ok(100.0 * (inv_logit(logit(v) + alpha) - v))
        }
    }
}

/// Margin of error of an arbitrarily large poll, in percentage points.
pub fn excess_moe(tau: f64) -> f64 {
    100.0 * 2.0 * tau
}
