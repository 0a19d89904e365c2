//! Adaptive Metropolis-within-Gibbs sampler with Kalman-filter block moves
//! for the random-walk latent paths.

mod chain;
pub mod diagnostics;
pub mod layout;
pub mod step;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{PollDataset, WindowConfig};
use crate::error::{Error, Result};
use crate::filter::WalkFilter;
use crate::models::{ContestParams, ModelFamily, ModelSpec};
use crate::par::{derive_seed, map_indexed, Exec};

use chain::{initial_state, Chain, ContestData, Model};
pub use diagnostics::{ess, ess_chains, split_rhat, DiagnosticFlag, Summary};
pub use layout::{ContestField, HyperField, ParamKind, ParamLayout};
pub use step::{update_scalar, Adaptive, ScalarStep, Support};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    pub warmup_iters: usize,
    pub sampling_iters: usize,
    pub seed: u64,
    pub target_accept_scalar: f64,
    /// Warmup iterations between scale adaptations.
    pub adapt_window: usize,
    /// Move the random-walk intercept with `theta + alpha` held fixed.
    pub reparameterize: bool,
    /// Keep latent path draws in the output.
    pub store_latent: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            chains: 4,
            warmup_iters: 1000,
            sampling_iters: 1000,
            seed: 20_250_101,
            target_accept_scalar: 0.44,
            adapt_window: 50,
            reparameterize: true,
            store_latent: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.chains == 0 {
            return bad("chains must be at least 1");
        }
        if self.sampling_iters < 4 {
            return bad("sampling_iters must be at least 4");
        }
        if self.adapt_window == 0 {
            return bad("adapt_window must be positive");
        }
        if !(self.target_accept_scalar > 0.0 && self.target_accept_scalar < 1.0) {
            return bad("target_accept_scalar must lie in (0, 1)");
        }
        Ok(())
    }
}

/// Stored post-warmup draws of one chain, column-major by parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDraws {
    pub iters: usize,
    pub values: Vec<f64>,
}

impl ChainDraws {
    pub fn param(&self, j: usize) -> &[f64] {
        &self.values[j * self.iters..(j + 1) * self.iters]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub spec: ModelSpec,
    pub window: Option<WindowConfig>,
    pub seed: u64,
    pub config: SamplerConfig,
    /// Stored draws times polls whose mean had to be clamped into [0, 1].
    pub clamp_activations: u64,
    pub wall_time_secs: f64,
    /// Post-warmup acceptance rate per move, chain by chain.
    pub acceptance: Vec<Vec<(String, f64)>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub layout: ParamLayout,
    pub chains: Vec<ChainDraws>,
    /// Aligned with `layout.names`.
    pub summaries: Vec<Summary>,
    pub metadata: FitMetadata,
}

impl FitResult {
    pub fn draws(&self, j: usize) -> Vec<&[f64]> {
        self.chains.iter().map(|c| c.param(j)).collect()
    }

    pub fn summary(&self, name: &str) -> Option<&Summary> {
        self.layout.index_of(name).map(|j| &self.summaries[j])
    }

    pub fn contest_summary(&self, contest: usize, field: ContestField) -> Option<&Summary> {
        self.layout
            .contest_field(contest, field)
            .map(|j| &self.summaries[j])
    }

    pub fn hyper_summary(&self, field: HyperField) -> Option<&Summary> {
        self.layout.hyper(field).map(|j| &self.summaries[j])
    }

    /// Pooled draws of one parameter across chains.
    pub fn pooled(&self, j: usize) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.param(j).iter().copied()).collect()
    }

    /// Worst split R-hat over sampled, non-latent parameters, with its name.
    pub fn max_rhat(&self) -> Option<(&str, f64)> {
        let fixed = &self.metadata.spec.fixed;
        self.layout
            .kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| match k {
                ParamKind::Latent { .. } => false,
                ParamKind::Contest { field: ContestField::Tau, .. } => fixed.tau.is_none(),
                ParamKind::Contest { field: ContestField::Gamma, .. } => fixed.gamma.is_none(),
                ParamKind::Hyper(HyperField::MuAlpha) => fixed.mu_alpha.is_none(),
                ParamKind::Hyper(HyperField::SigmaAlpha) => fixed.sigma_alpha.is_none(),
                _ => true,
            })
            .filter_map(|(j, _)| self.summaries[j].rhat.map(|r| (self.layout.names[j].as_str(), r)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Runs all chains, in parallel when the `parallel` feature is enabled.
pub fn fit(spec: &ModelSpec, data: &PollDataset, config: &SamplerConfig) -> Result<FitResult> {
    fit_exec(spec, data, config, Exec::default())
}

pub fn fit_exec(
    spec: &ModelSpec,
    data: &PollDataset,
    config: &SamplerConfig,
    exec: Exec,
) -> Result<FitResult> {
    let started = Instant::now();
    spec.validate()?;
    config.validate()?;
    data.validate()?;
    if data.contests.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if spec.family == ModelFamily::Linear {
        if let Some(c) = data.contests.iter().find(|c| !(c.v > 0.0 && c.v < 1.0)) {
            return Err(Error::Domain(c.v));
        }
    }
    let contests = ContestData::from_dataset(data);
    let layout = ParamLayout::new(spec, data, config.store_latent && spec.has_walk());
    let init = initial_state(spec, &contests);

    let outputs = map_indexed(config.chains, exec, |k| {
        let rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[k as u64]));
        let model = Model {
            spec,
            contests: &contests,
        };
        Chain::new(model, config, init.clone(), rng, k).run(&layout, data)
    });
    let outputs = outputs.into_iter().collect::<Result<Vec<_>>>()?;

    let iters = config.sampling_iters;
    let mut clamp = 0;
    let mut acceptance = Vec::with_capacity(outputs.len());
    let chains: Vec<ChainDraws> = outputs
        .into_iter()
        .map(|o| {
            clamp += o.clamp_activations;
            acceptance.push(o.acceptance);
            ChainDraws {
                iters,
                values: o.values,
            }
        })
        .collect();
    let summaries = (0..layout.len())
        .map(|j| {
            let per_chain: Vec<&[f64]> = chains.iter().map(|c| c.param(j)).collect();
            Summary::from_chains(&per_chain)
        })
        .collect();

    Ok(FitResult {
        layout,
        chains,
        summaries,
        metadata: FitMetadata {
            spec: *spec,
            window: None,
            seed: config.seed,
            config: config.clone(),
            clamp_activations: clamp,
            wall_time_secs: started.elapsed().as_secs_f64(),
            acceptance,
        },
    })
}

/// Redraws the latent path of contest `contest` given its other
/// parameters. Under the plug-in likelihood this is an exact draw from the
/// full conditional; otherwise the draw is accepted or rejected against the
/// exact target, and the current path is returned on rejection.
pub fn update_latent_block<R: Rng + ?Sized>(
    spec: &ModelSpec,
    contest: usize,
    params: &ContestParams,
    data: &PollDataset,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if !spec.has_walk() {
        return Err(Error::InvalidConfig(
            "latent block update needs the random-walk model".into(),
        ));
    }
    let contests = ContestData::from_dataset(data);
    let cd = contests.get(contest).ok_or_else(|| {
        Error::InconsistentParams(format!("no contest at position {contest}"))
    })?;
    if params.theta.len() != cd.t_max as usize {
        return Err(Error::InconsistentParams(format!(
            "{} has {} latent days, expected {}",
            cd.id,
            params.theta.len(),
            cd.t_max
        )));
    }
    let model = Model {
        spec,
        contests: &contests,
    };
    let mut cp = params.clone();
    let mut filter = WalkFilter::new();
    chain::latent_block_move(&model, cd, &mut cp, &mut filter, &mut Vec::new(), &mut Vec::new(), rng)?;
    Ok(cp.theta)
}
