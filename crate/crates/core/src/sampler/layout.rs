use serde::{Deserialize, Serialize};

use crate::domain::{ContestId, PollDataset};
use crate::models::{ContestParams, HyperParams, ModelSpec, ParamState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContestField {
    Alpha,
    Tau,
    Beta,
    Gamma,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HyperField {
    MuAlpha,
    SigmaAlpha,
    SigmaTau,
    SigmaGamma,
    MuBeta,
    SigmaBeta,
}

impl HyperField {
    pub fn label(self) -> &'static str {
        match self {
            HyperField::MuAlpha => "mu_alpha",
            HyperField::SigmaAlpha => "sigma_alpha",
            HyperField::SigmaTau => "sigma_tau",
            HyperField::SigmaGamma => "sigma_gamma",
            HyperField::MuBeta => "mu_beta",
            HyperField::SigmaBeta => "sigma_beta",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    Contest { contest: usize, field: ContestField },
    Latent { contest: usize, day: u32 },
    Hyper(HyperField),
}

/// Flat parameter ordering used for stored draws.
///
/// Per contest: `alpha`, `tau`, then `beta` (linear) or `gamma` and the
/// latent days (random walk); hyperparameters follow all contests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub names: Vec<String>,
    pub kinds: Vec<ParamKind>,
    contest_offsets: Vec<usize>,
    hyper_offset: usize,
}

impl ParamLayout {
    pub fn new(spec: &ModelSpec, data: &PollDataset, store_latent: bool) -> Self {
        let t_max = data.max_days();
        let mut names = Vec::new();
        let mut kinds = Vec::new();
        let mut contest_offsets = Vec::with_capacity(data.contests.len());
        let mut push = |name: String, kind: ParamKind| {
            names.push(name);
            kinds.push(kind);
        };
        let mut count = 0;
        for (r, c) in data.contests.iter().enumerate() {
            contest_offsets.push(count);
            let id = &c.contest_id;
            let mut fields = vec![(ContestField::Alpha, "alpha"), (ContestField::Tau, "tau")];
            if spec.has_beta() {
                fields.push((ContestField::Beta, "beta"));
            }
            if spec.has_walk() {
                fields.push((ContestField::Gamma, "gamma"));
            }
            for (field, label) in fields {
                push(format!("{label}[{id}]"), ParamKind::Contest { contest: r, field });
                count += 1;
            }
            if spec.has_walk() && store_latent {
                for day in 1..=t_max[r] {
                    push(format!("theta[{id}][{day}]"), ParamKind::Latent { contest: r, day });
                    count += 1;
                }
            }
        }
        let hyper_offset = count;
        let mut hyper = vec![HyperField::MuAlpha, HyperField::SigmaAlpha, HyperField::SigmaTau];
        if spec.has_walk() {
            hyper.push(HyperField::SigmaGamma);
        }
        if spec.has_beta() {
            hyper.extend([HyperField::MuBeta, HyperField::SigmaBeta]);
        }
        for h in hyper {
            push(h.label().to_string(), ParamKind::Hyper(h));
        }
        ParamLayout {
            names,
            kinds,
            contest_offsets,
            hyper_offset,
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn contest_field(&self, contest: usize, field: ContestField) -> Option<usize> {
        let start = *self.contest_offsets.get(contest)?;
        let end = self
            .contest_offsets
            .get(contest + 1)
            .copied()
            .unwrap_or(self.hyper_offset);
        (start..end).find(|&i| matches!(self.kinds[i], ParamKind::Contest { field: f, .. } if f == field))
    }

    pub fn hyper(&self, field: HyperField) -> Option<usize> {
        (self.hyper_offset..self.len()).find(|&i| self.kinds[i] == ParamKind::Hyper(field))
    }

    pub fn contest_id<'a>(&self, data: &'a PollDataset, contest: usize) -> &'a ContestId {
        &data.contests[contest].contest_id
    }

    /// Writes `state` into `out` following this layout.
    pub(crate) fn flatten(&self, state: &ParamState, out: &mut [f64]) {
        for (slot, kind) in out.iter_mut().zip(&self.kinds) {
            *slot = match *kind {
                ParamKind::Contest { contest, field } => {
                    let c = &state.contests[contest];
                    match field {
                        ContestField::Alpha => c.alpha,
                        ContestField::Tau => c.tau,
                        ContestField::Beta => c.beta,
                        ContestField::Gamma => c.gamma,
                    }
                }
                ParamKind::Latent { contest, day } => state.contests[contest].theta[day as usize - 1],
                ParamKind::Hyper(h) => hyper_value(&state.hyper, h),
            };
        }
    }

    /// Rebuilds a parameter state from one flat draw. Latent days are only
    /// present when they were stored.
    pub fn unflatten(&self, values: &[f64], n_contests: usize) -> ParamState {
        let mut contests = vec![ContestParams::default(); n_contests];
        let mut hyper = HyperParams::default();
        for (&x, kind) in values.iter().zip(&self.kinds) {
            match *kind {
                ParamKind::Contest { contest, field } => {
                    let c = &mut contests[contest];
                    match field {
                        ContestField::Alpha => c.alpha = x,
                        ContestField::Tau => c.tau = x,
                        ContestField::Beta => c.beta = x,
                        ContestField::Gamma => c.gamma = x,
                    }
                }
                ParamKind::Latent { contest, .. } => contests[contest].theta.push(x),
                ParamKind::Hyper(h) => match h {
                    HyperField::MuAlpha => hyper.mu_alpha = x,
                    HyperField::SigmaAlpha => hyper.sigma_alpha = x,
                    HyperField::SigmaTau => hyper.sigma_tau = x,
                    HyperField::SigmaGamma => hyper.sigma_gamma = x,
                    HyperField::MuBeta => hyper.mu_beta = x,
                    HyperField::SigmaBeta => hyper.sigma_beta = x,
                },
            }
        }
        ParamState { contests, hyper }
    }
}

fn hyper_value(h: &HyperParams, field: HyperField) -> f64 {
    match field {
        HyperField::MuAlpha => h.mu_alpha,
        HyperField::SigmaAlpha => h.sigma_alpha,
        HyperField::SigmaTau => h.sigma_tau,
        HyperField::SigmaGamma => h.sigma_gamma,
        HyperField::MuBeta => h.mu_beta,
        HyperField::SigmaBeta => h.sigma_beta,
    }
}
