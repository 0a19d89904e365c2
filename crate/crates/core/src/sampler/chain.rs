//! One Markov chain: the Metropolis-within-Gibbs sweep for every family.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::layout::ParamLayout;
use super::step::{accept, Adaptive, BlockAdaptive, Support};
use super::SamplerConfig;
use crate::domain::{ContestId, PollDataset};
use crate::error::{Error, Result};
use crate::filter::{WalkFilter, WalkObs};
use crate::models::{
    contest_log_lik, half_normal_lpdf, linear_gaussian_log_lik, log_likelihood, log_prior,
    normal_lpdf, raw_mean, walk_log_prior, ContestParams, HyperParams, LikelihoodMode,
    ModelFamily, ModelSpec, ParamState, PollObs,
};

/// Median of a unit half-normal.
const HALF_NORMAL_MEDIAN: f64 = 0.674_489_750_196_081_7;
const HYPER_STEPS: usize = 3;

/// A contest's polls in the form the sampler consumes.
#[derive(Debug, Clone)]
pub(crate) struct ContestData {
    pub id: ContestId,
    pub v: f64,
    pub t_max: u32,
    /// Sorted by day.
    pub polls: Vec<PollObs>,
}

impl ContestData {
    pub fn from_dataset(data: &PollDataset) -> Vec<ContestData> {
        data.polls_by_contest()
            .into_iter()
            .zip(&data.contests)
            .map(|(polls, c)| {
                let mut obs: Vec<PollObs> = polls.into_iter().map(PollObs::from_poll).collect();
                obs.sort_by_key(|o| o.t);
                ContestData {
                    id: c.contest_id.clone(),
                    v: c.v,
                    t_max: obs.iter().map(|o| o.t).max().unwrap_or(0),
                    polls: obs,
                }
            })
            .collect()
    }

    fn has_polls(&self, mode: LikelihoodMode) -> bool {
        mode != LikelihoodMode::PriorOnly && !self.polls.is_empty()
    }
}

fn half_normal_draw<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    (scale * rng.sample::<f64, _>(StandardNormal)).abs()
}

fn normal_draw<R: Rng + ?Sized>(mean: f64, sd: f64, rng: &mut R) -> f64 {
    mean + sd * rng.sample::<f64, _>(StandardNormal)
}

/// Stateless pieces shared by all moves of a fit.
pub(crate) struct Model<'a> {
    pub spec: &'a ModelSpec,
    pub contests: &'a [ContestData],
}

impl Model<'_> {
    fn mode(&self) -> LikelihoodMode {
        self.spec.likelihood
    }

    fn lik(&self, cd: &ContestData, cp: &ContestParams) -> f64 {
        contest_log_lik(self.mode(), self.spec.family, cp, cd.v, &cd.polls)
    }

    /// Target log-likelihood minus the linear-Gaussian surrogate the filter
    /// samples from.
    fn correction(&self, cd: &ContestData, cp: &ContestParams) -> f64 {
        if !cd.has_polls(self.mode()) {
            return 0.0;
        }
        self.lik(cd, cp) - linear_gaussian_log_lik(cp, cd.v, &cd.polls)
    }

    fn fill_obs(&self, cd: &ContestData, tau: f64, out: &mut Vec<WalkObs>) {
        out.clear();
        if self.mode() == LikelihoodMode::PriorOnly {
            return;
        }
        out.extend(cd.polls.iter().map(|o| WalkObs {
            t: o.t,
            y: o.y,
            var: o.plug_in_variance(tau),
        }));
    }
}

/// Starting point: data-informed contest values, hyperparameters at prior
/// medians, pinned values where the model pins them.
pub(crate) fn initial_state(spec: &ModelSpec, contests: &[ContestData]) -> ParamState {
    let hp = &spec.hyperpriors;
    let fx = &spec.fixed;
    let mode = spec.likelihood;
    let states = contests
        .iter()
        .map(|cd| {
            let (alpha, ybar) = if cd.has_polls(mode) {
                let n = cd.polls.len() as f64;
                let ybar = cd.polls.iter().map(|o| o.y).sum::<f64>() / n;
                (ybar - cd.v, ybar)
            } else {
                (0.0, cd.v)
            };
            let theta = if spec.has_walk() {
                (1..=cd.t_max)
                    .map(|t| cd.v + (ybar - cd.v) * t as f64 / cd.t_max as f64)
                    .collect()
            } else {
                Vec::new()
            };
            ContestParams {
                alpha,
                tau: fx.tau.unwrap_or(0.02),
                beta: 0.0,
                gamma: if spec.has_walk() { fx.gamma.unwrap_or(0.005) } else { 0.0 },
                theta,
            }
        })
        .collect();
    ParamState {
        contests: states,
        hyper: HyperParams {
            mu_alpha: fx.mu_alpha.unwrap_or(0.0),
            sigma_alpha: fx.sigma_alpha.unwrap_or(hp.sigma_alpha_scale * HALF_NORMAL_MEDIAN),
            sigma_tau: hp.sigma_tau_scale * HALF_NORMAL_MEDIAN,
            sigma_gamma: if spec.has_walk() {
                hp.sigma_gamma_scale * HALF_NORMAL_MEDIAN
            } else {
                0.0
            },
            mu_beta: 0.0,
            sigma_beta: if spec.has_beta() {
                hp.sigma_beta_scale * HALF_NORMAL_MEDIAN
            } else {
                0.0
            },
        },
    }
}

struct ContestMoves {
    alpha: Adaptive,
    tau: Adaptive,
    beta: Adaptive,
    gamma: Adaptive,
    walk_block: Adaptive,
    latent: Adaptive,
    intercept_slope: BlockAdaptive,
}

struct HyperMoves {
    sigma_alpha: Adaptive,
    sigma_tau: Adaptive,
    sigma_gamma: Adaptive,
    sigma_beta: Adaptive,
}

pub(crate) struct ChainOutput {
    pub values: Vec<f64>,
    pub clamp_activations: u64,
    pub acceptance: Vec<(String, f64)>,
}

/// Everything one chain mutates.
pub(crate) struct Chain<'a> {
    model: Model<'a>,
    config: &'a SamplerConfig,
    pub state: ParamState,
    rng: ChaCha8Rng,
    filter: WalkFilter,
    obs: Vec<WalkObs>,
    theta_buf: Vec<f64>,
    moves: Vec<ContestMoves>,
    hyper: HyperMoves,
    index: usize,
}

impl<'a> Chain<'a> {
    pub fn new(
        model: Model<'a>,
        config: &'a SamplerConfig,
        state: ParamState,
        rng: ChaCha8Rng,
        index: usize,
    ) -> Self {
        let moves = model
            .contests
            .iter()
            .map(|cd| ContestMoves {
                alpha: Adaptive::new(format!("alpha[{}]", cd.id), 0.01),
                tau: Adaptive::new(format!("tau[{}]", cd.id), 0.3),
                beta: Adaptive::new(format!("beta[{}]", cd.id), 0.002),
                gamma: Adaptive::new(format!("gamma[{}]", cd.id), 0.3),
                walk_block: Adaptive::new(format!("walk_block[{}]", cd.id), 1.0),
                latent: Adaptive::new(format!("theta[{}]", cd.id), 1.0),
                intercept_slope: BlockAdaptive::new(
                    format!("alpha_beta[{}]", cd.id),
                    [0.01, 0.001],
                ),
            })
            .collect();
        Chain {
            model,
            config,
            state,
            rng,
            filter: WalkFilter::new(),
            obs: Vec::new(),
            theta_buf: Vec::new(),
            moves,
            hyper: HyperMoves {
                sigma_alpha: Adaptive::new("sigma_alpha", 0.2),
                sigma_tau: Adaptive::new("sigma_tau", 0.2),
                sigma_gamma: Adaptive::new("sigma_gamma", 0.2),
                sigma_beta: Adaptive::new("sigma_beta", 0.2),
            },
            index,
        }
    }

    pub fn run(mut self, layout: &ParamLayout, data: &PollDataset) -> Result<ChainOutput> {
        let spec = self.model.spec;
        let init = log_likelihood(spec, &self.state, data)
            .and_then(|ll| Ok(ll + log_prior(spec, &self.state, data)?));
        match init {
            Ok(x) if x.is_finite() => {}
            Ok(x) => {
                return Err(Error::Initialization {
                    chain: self.index,
                    detail: format!("log density {x}"),
                })
            }
            Err(e) => {
                return Err(Error::Initialization {
                    chain: self.index,
                    detail: e.to_string(),
                })
            }
        }

        let cfg = self.config;
        let iters = cfg.sampling_iters;
        let n_params = layout.len();
        // Column-major: parameter `j` occupies `values[j * iters..(j + 1) * iters]`.
        let mut values = vec![0.0; n_params * iters];
        let mut row = vec![0.0; n_params];
        let mut clamp = 0u64;

        for it in 0..cfg.warmup_iters {
            self.sweep(true)?;
            if (it + 1) % cfg.adapt_window == 0 {
                self.adapt();
            }
        }
        self.check_stalled()?;

        for it in 0..iters {
            self.sweep(false)?;
            layout.flatten(&self.state, &mut row);
            for (j, x) in row.iter().enumerate() {
                values[j * iters + it] = *x;
            }
            clamp += self.clamp_count();
        }

        Ok(ChainOutput {
            values,
            clamp_activations: clamp,
            acceptance: self.acceptance(),
        })
    }

    fn all_adaptive(&self) -> impl Iterator<Item = &Adaptive> {
        self.moves
            .iter()
            .flat_map(|m| {
                [
                    &m.alpha,
                    &m.tau,
                    &m.beta,
                    &m.gamma,
                    &m.walk_block,
                    &m.latent,
                    &m.intercept_slope.stats,
                ]
            })
            .chain([
                &self.hyper.sigma_alpha,
                &self.hyper.sigma_tau,
                &self.hyper.sigma_gamma,
                &self.hyper.sigma_beta,
            ])
    }

    fn acceptance(&self) -> Vec<(String, f64)> {
        self.all_adaptive()
            .filter_map(|a| a.acceptance_rate().map(|r| (a.name.clone(), r)))
            .collect()
    }

    fn check_stalled(&self) -> Result<()> {
        if let Some(a) = self.all_adaptive().find(|a| a.stalled()) {
            return Err(Error::SamplerStalled {
                chain: self.index,
                param: a.name.clone(),
                scale: a.scale(),
            });
        }
        Ok(())
    }

    fn adapt(&mut self) {
        let target = self.config.target_accept_scalar;
        for m in &mut self.moves {
            m.alpha.adapt(target);
            m.tau.adapt(target);
            m.beta.adapt(target);
            m.gamma.adapt(target);
            m.intercept_slope.adapt(0.3);
        }
        let h = &mut self.hyper;
        for a in [&mut h.sigma_alpha, &mut h.sigma_tau, &mut h.sigma_gamma, &mut h.sigma_beta] {
            a.adapt(target);
        }
    }

    fn clamp_count(&self) -> u64 {
        if self.model.spec.family == ModelFamily::Linear || self.model.mode() == LikelihoodMode::PriorOnly {
            return 0;
        }
        let mut n = 0;
        for (cd, cp) in self.model.contests.iter().zip(&self.state.contests) {
            for o in &cd.polls {
                let m = raw_mean(self.model.spec.family, cp, o.t, cd.v);
                if !(0.0..=1.0).contains(&m) {
                    n += 1;
                }
            }
        }
        n
    }

    /// One full Gibbs sweep: every contest, then the hyperparameters.
    pub fn sweep(&mut self, warmup: bool) -> Result<()> {
        for r in 0..self.model.contests.len() {
            if !self.model.contests[r].has_polls(self.model.mode()) {
                self.draw_unobserved_contest(r)?;
                continue;
            }
            match self.model.spec.family {
                ModelFamily::Static => self.static_contest(r, warmup),
                ModelFamily::Linear => self.linear_contest(r, warmup),
                ModelFamily::RandomWalk => self.walk_contest(r, warmup)?,
            }
        }
        self.update_hyper(warmup);
        Ok(())
    }

    /// A contest without polls: every contest-level parameter is drawn
    /// straight from its hierarchical prior.
    fn draw_unobserved_contest(&mut self, r: usize) -> Result<()> {
        let spec = self.model.spec;
        let h = self.state.hyper;
        let rng = &mut self.rng;
        let cp = &mut self.state.contests[r];
        cp.alpha = normal_draw(h.mu_alpha, h.sigma_alpha, rng);
        cp.tau = spec.fixed.tau.unwrap_or_else(|| half_normal_draw(h.sigma_tau, rng));
        if spec.has_beta() {
            cp.beta = normal_draw(h.mu_beta, h.sigma_beta, rng);
        }
        if spec.has_walk() {
            cp.gamma = spec.fixed.gamma.unwrap_or_else(|| half_normal_draw(h.sigma_gamma, rng));
            let cd = &self.model.contests[r];
            self.filter
                .run(cd.v, cd.t_max, cp.gamma, (cp.alpha, 0.0), &[])
                .map_err(|detail| Error::Filter {
                    contest: cd.id.to_string(),
                    detail,
                })?;
            self.filter.sample(rng, &mut cp.theta);
        }
        Ok(())
    }

    fn alpha_prior(&self) -> (f64, f64) {
        (self.state.hyper.mu_alpha, self.state.hyper.sigma_alpha.powi(2))
    }

    fn static_contest(&mut self, r: usize, warmup: bool) {
        let model = &self.model;
        let cd = &model.contests[r];
        let h = self.state.hyper;
        let moves = &mut self.moves[r];
        let cp = &mut self.state.contests[r];
        let rng = &mut self.rng;

        let (mu, var) = (h.mu_alpha, h.sigma_alpha.powi(2));
        let mut lik = model.lik(cd, cp);
        let mut scratch = cp.clone();
        let s = moves.alpha.step(
            cp.alpha,
            lik + normal_lpdf(cp.alpha, mu, var),
            |a| {
                scratch.alpha = a;
                model.lik(cd, &scratch) + normal_lpdf(a, mu, var)
            },
            Support::Real,
            warmup,
            rng,
        );
        if s.accepted {
            cp.alpha = s.value;
            lik = model.lik(cd, cp);
        }
        if model.spec.fixed.tau.is_none() {
            tau_scalar_step(model, cd, cp, lik, h.sigma_tau, &mut moves.tau, warmup, rng);
        }
    }

    fn linear_contest(&mut self, r: usize, warmup: bool) {
        let model = &self.model;
        let cd = &model.contests[r];
        let h = self.state.hyper;
        let moves = &mut self.moves[r];
        let cp = &mut self.state.contests[r];
        let rng = &mut self.rng;

        let a_var = h.sigma_alpha.powi(2);
        let b_var = h.sigma_beta.powi(2);
        let prior = |a: f64, b: f64| normal_lpdf(a, h.mu_alpha, a_var) + normal_lpdf(b, h.mu_beta, b_var);
        let mut lik = model.lik(cd, cp);

        let mut scratch = cp.clone();
        let s = moves.alpha.step(
            cp.alpha,
            lik + prior(cp.alpha, cp.beta),
            |a| {
                scratch.alpha = a;
                model.lik(cd, &scratch) + prior(a, scratch.beta)
            },
            Support::Real,
            warmup,
            rng,
        );
        if s.accepted {
            cp.alpha = s.value;
            lik = s.log_target - prior(cp.alpha, cp.beta);
        }

        let mut scratch = cp.clone();
        let s = moves.beta.step(
            cp.beta,
            lik + prior(cp.alpha, cp.beta),
            |b| {
                scratch.beta = b;
                model.lik(cd, &scratch) + prior(scratch.alpha, b)
            },
            Support::Real,
            warmup,
            rng,
        );
        if s.accepted {
            cp.beta = s.value;
            lik = s.log_target - prior(cp.alpha, cp.beta);
        }

        let block = &mut moves.intercept_slope;
        let prop = block.propose([cp.alpha, cp.beta], rng);
        let mut trial = cp.clone();
        trial.alpha = prop[0];
        trial.beta = prop[1];
        let new_lik = model.lik(cd, &trial);
        let ratio = new_lik + prior(prop[0], prop[1]) - lik - prior(cp.alpha, cp.beta);
        let ok = new_lik.is_finite() && accept(ratio, rng);
        block.stats.record(ok, warmup);
        if ok {
            cp.alpha = prop[0];
            cp.beta = prop[1];
            lik = new_lik;
        }
        if warmup {
            block.observe([cp.alpha, cp.beta]);
        }

        if model.spec.fixed.tau.is_none() {
            tau_scalar_step(model, cd, cp, lik, h.sigma_tau, &mut moves.tau, warmup, rng);
        }
    }

    /// Random-walk contest: joint (alpha, theta) block, collapsed tau and
    /// gamma moves, a scalar alpha move and a latent-only block.
    fn walk_contest(&mut self, r: usize, warmup: bool) -> Result<()> {
        let h = self.state.hyper;
        let alpha_prior = self.alpha_prior();
        let model = &self.model;
        let cd = &model.contests[r];
        let fixed = model.spec.fixed;
        let cp = &mut self.state.contests[r];
        let moves = &mut self.moves[r];
        let rng = &mut self.rng;
        let filter = &mut self.filter;
        let obs = &mut self.obs;
        let buf = &mut self.theta_buf;
        let fail = |detail: String| Error::Filter {
            contest: cd.id.to_string(),
            detail,
        };

        // Joint block draw of (alpha, theta) given tau and gamma.
        model.fill_obs(cd, cp.tau, obs);
        let mut marg = filter.run(cd.v, cd.t_max, cp.gamma, alpha_prior, obs).map_err(fail)?;
        let mut corr = model.correction(cd, cp);
        buf.resize(cd.t_max as usize, 0.0);
        let a_new = filter.sample(rng, buf);
        let (c_new, ok) = mh_swap(model, cd, cp, a_new, buf, corr, 0.0, rng);
        moves.walk_block.record(ok, warmup);
        if ok {
            corr = c_new;
        }

        // tau, marginalising (alpha, theta) under the surrogate.
        if fixed.tau.is_none() {
            let step = moves.tau.scale() * rng.sample::<f64, _>(StandardNormal);
            let tau_new = cp.tau * step.exp();
            model.fill_obs(cd, tau_new, obs);
            let marg_new = filter.run(cd.v, cd.t_max, cp.gamma, alpha_prior, obs).map_err(fail)?;
            let a_new = filter.sample(rng, buf);
            let old_tau = cp.tau;
            let extra = marg_new - marg + half_normal_lpdf(tau_new, h.sigma_tau)
                - half_normal_lpdf(old_tau, h.sigma_tau)
                + step;
            let mut trial = cp.clone();
            trial.tau = tau_new;
            trial.alpha = a_new;
            trial.theta.copy_from_slice(buf);
            let c_trial = model.correction(cd, &trial);
            let ok = c_trial.is_finite() && accept(c_trial - corr + extra, rng);
            moves.tau.record(ok, warmup);
            if ok {
                *cp = trial;
                corr = c_trial;
                marg = marg_new;
            }
        }

        // gamma, same construction.
        if fixed.gamma.is_none() {
            model.fill_obs(cd, cp.tau, obs);
            let step = moves.gamma.scale() * rng.sample::<f64, _>(StandardNormal);
            let gamma_new = cp.gamma * step.exp();
            let marg_new = filter.run(cd.v, cd.t_max, gamma_new, alpha_prior, obs).map_err(fail)?;
            let a_new = filter.sample(rng, buf);
            let extra = marg_new - marg + half_normal_lpdf(gamma_new, h.sigma_gamma)
                - half_normal_lpdf(cp.gamma, h.sigma_gamma)
                + step;
            let mut trial = cp.clone();
            trial.gamma = gamma_new;
            trial.alpha = a_new;
            trial.theta.copy_from_slice(buf);
            let c_trial = model.correction(cd, &trial);
            let ok = c_trial.is_finite() && accept(c_trial - corr + extra, rng);
            moves.gamma.record(ok, warmup);
            if ok {
                *cp = trial;
            }
        }

        // Scalar alpha, centred (theta held) or shifted (theta + alpha held).
        let shift = self.config.reparameterize;
        let target = |c: &ContestParams| {
            model.lik(cd, c) + walk_log_prior(&c.theta, cd.v, c.gamma) + normal_lpdf(c.alpha, alpha_prior.0, alpha_prior.1)
        };
        let current_lp = target(cp);
        let mut scratch = cp.clone();
        let base_alpha = cp.alpha;
        let s = moves.alpha.step(
            cp.alpha,
            current_lp,
            |a| {
                scratch.alpha = a;
                if shift {
                    for (dst, src) in scratch.theta.iter_mut().zip(&cp.theta) {
                        *dst = src + base_alpha - a;
                    }
                }
                target(&scratch)
            },
            Support::Real,
            warmup,
            rng,
        );
        if s.accepted {
            if shift {
                for th in cp.theta.iter_mut() {
                    *th += base_alpha - s.value;
                }
            }
            cp.alpha = s.value;
        }

        // Latent path alone given alpha.
        latent_block_move(model, cd, cp, filter, obs, buf, rng)
            .map(|ok| moves.latent.record(ok, warmup))
    }

    fn update_hyper(&mut self, warmup: bool) {
        let spec = self.model.spec;
        let hp = spec.hyperpriors;
        let rng = &mut self.rng;
        let h = &mut self.state.hyper;
        let contests = &self.state.contests;
        let r = contests.len() as f64;

        if spec.fixed.mu_alpha.is_none() {
            let sum: f64 = contests.iter().map(|c| c.alpha).sum();
            let prec = 1.0 / hp.mu_alpha_sd.powi(2) + r / h.sigma_alpha.powi(2);
            let mean = sum / h.sigma_alpha.powi(2) / prec;
            h.mu_alpha = normal_draw(mean, prec.recip().sqrt(), rng);
        }
        if spec.fixed.sigma_alpha.is_none() {
            let ss: f64 = contests.iter().map(|c| (c.alpha - h.mu_alpha).powi(2)).sum();
            let target = |s: f64| -r * s.ln() - ss / (2.0 * s * s) + half_normal_lpdf(s, hp.sigma_alpha_scale);
            h.sigma_alpha = scale_steps(&mut self.hyper.sigma_alpha, h.sigma_alpha, target, warmup, rng);
        }

        if spec.fixed.tau.is_some() {
            h.sigma_tau = half_normal_draw(hp.sigma_tau_scale, rng);
        } else {
            let ss: f64 = contests.iter().map(|c| c.tau * c.tau).sum();
            let target = |s: f64| -r * s.ln() - ss / (2.0 * s * s) + half_normal_lpdf(s, hp.sigma_tau_scale);
            h.sigma_tau = scale_steps(&mut self.hyper.sigma_tau, h.sigma_tau, target, warmup, rng);
        }

        if spec.has_walk() {
            if spec.fixed.gamma.is_some() {
                h.sigma_gamma = half_normal_draw(hp.sigma_gamma_scale, rng);
            } else {
                let ss: f64 = contests.iter().map(|c| c.gamma * c.gamma).sum();
                let target = |s: f64| -r * s.ln() - ss / (2.0 * s * s) + half_normal_lpdf(s, hp.sigma_gamma_scale);
                h.sigma_gamma = scale_steps(&mut self.hyper.sigma_gamma, h.sigma_gamma, target, warmup, rng);
            }
        }

        if spec.has_beta() {
            let sum: f64 = contests.iter().map(|c| c.beta).sum();
            let prec = 1.0 / hp.mu_beta_sd.powi(2) + r / h.sigma_beta.powi(2);
            h.mu_beta = normal_draw(sum / h.sigma_beta.powi(2) / prec, prec.recip().sqrt(), rng);
            let ss: f64 = contests.iter().map(|c| (c.beta - h.mu_beta).powi(2)).sum();
            let target = |s: f64| -r * s.ln() - ss / (2.0 * s * s) + half_normal_lpdf(s, hp.sigma_beta_scale);
            h.sigma_beta = scale_steps(&mut self.hyper.sigma_beta, h.sigma_beta, target, warmup, rng);
        }
    }
}

fn scale_steps<R: Rng + ?Sized>(
    ad: &mut Adaptive,
    mut x: f64,
    target: impl Fn(f64) -> f64,
    warmup: bool,
    rng: &mut R,
) -> f64 {
    let mut lp = target(x);
    for _ in 0..HYPER_STEPS {
        let s = ad.step(x, lp, &target, Support::Positive, warmup, rng);
        x = s.value;
        lp = s.log_target;
    }
    x
}

#[allow(clippy::too_many_arguments)]
fn tau_scalar_step<R: Rng + ?Sized>(
    model: &Model<'_>,
    cd: &ContestData,
    cp: &mut ContestParams,
    lik: f64,
    sigma_tau: f64,
    ad: &mut Adaptive,
    warmup: bool,
    rng: &mut R,
) {
    let mut scratch = cp.clone();
    let s = ad.step(
        cp.tau,
        lik + half_normal_lpdf(cp.tau, sigma_tau),
        |t| {
            scratch.tau = t;
            model.lik(cd, &scratch) + half_normal_lpdf(t, sigma_tau)
        },
        Support::Positive,
        warmup,
        rng,
    );
    if s.accepted {
        cp.tau = s.value;
    }
}

/// Accept or reject replacing `(alpha, theta)` by a surrogate draw. `extra`
/// carries any further log-ratio terms. Returns the new correction term and
/// whether the move was taken.
#[allow(clippy::too_many_arguments)]
fn mh_swap<R: Rng + ?Sized>(
    model: &Model<'_>,
    cd: &ContestData,
    cp: &mut ContestParams,
    alpha: f64,
    theta: &[f64],
    corr_old: f64,
    extra: f64,
    rng: &mut R,
) -> (f64, bool) {
    let old_alpha = cp.alpha;
    let old_theta = std::mem::replace(&mut cp.theta, theta.to_vec());
    cp.alpha = alpha;
    let corr_new = model.correction(cd, cp);
    if corr_new.is_finite() && accept(corr_new - corr_old + extra, rng) {
        (corr_new, true)
    } else {
        cp.alpha = old_alpha;
        cp.theta = old_theta;
        (corr_old, false)
    }
}

/// Redraws `theta` given `alpha`, `tau` and `gamma`. The draw is exact under
/// the plug-in likelihood and serves as an independence proposal otherwise.
pub(crate) fn latent_block_move<R: Rng + ?Sized>(
    model: &Model<'_>,
    cd: &ContestData,
    cp: &mut ContestParams,
    filter: &mut WalkFilter,
    obs: &mut Vec<WalkObs>,
    buf: &mut Vec<f64>,
    rng: &mut R,
) -> Result<bool> {
    model.fill_obs(cd, cp.tau, obs);
    filter
        .run(cd.v, cd.t_max, cp.gamma, (cp.alpha, 0.0), obs)
        .map_err(|detail| Error::Filter {
            contest: cd.id.to_string(),
            detail,
        })?;
    buf.resize(cd.t_max as usize, 0.0);
    let alpha = filter.sample(rng, buf);
    let corr = model.correction(cd, cp);
    Ok(mh_swap(model, cd, cp, alpha, buf, corr, 0.0, rng).1)
}
