//! Resolved run configurations. Values come from command-line flags, then a
//! TOML file, then built-in defaults.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{default_grid, parse_grid};
use crate::error::{Error, Result};
use crate::models::{FixedParams, HyperPriorConfig, LikelihoodMode, ModelFamily, ModelSpec};
use crate::sampler::SamplerConfig;
use crate::simulate::{AlphaSpec, Dynamics, SimConfig, VoteSpec};

use super::{FitArgs, SimulateArgs};

/// Contents of a `--config` file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub model: Option<String>,
    pub window: Option<u32>,
    pub grid: Option<String>,
    pub per_model_t: Option<String>,
    pub year: Option<i32>,
    pub likelihood: Option<LikelihoodMode>,
    pub fixed: FixedParams,
    pub hyperpriors: HyperPriorConfig,
    pub sampler: SamplerConfig,
    pub simulate: SimSettings,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    fn load_opt(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

/// Fully resolved settings for `fit` and `sweep`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelRun {
    pub models: Vec<ModelFamily>,
    /// Single window; `None` keeps every poll (fit) or uses the grid (sweep).
    pub window: Option<u32>,
    pub grid: Vec<u32>,
    pub per_model_t: Vec<(ModelFamily, u32)>,
    pub year: Option<i32>,
    pub likelihood: LikelihoodMode,
    pub fixed: FixedParams,
    pub hyperpriors: HyperPriorConfig,
    pub sampler: SamplerConfig,
}

impl ModelRun {
    pub fn resolve(args: &FitArgs) -> Result<Self> {
        let file = FileConfig::load_opt(args.config.as_deref())?;
        let models = parse_models(args.model.as_deref().or(file.model.as_deref()).unwrap_or("rw"))?;
        let grid = match args.grid.as_deref().or(file.grid.as_deref()) {
            Some(g) => parse_grid(g)?,
            None => default_grid(),
        };
        let per_model_t = match args.per_model_t.as_deref().or(file.per_model_t.as_deref()) {
            Some(text) => parse_per_model(text)?,
            None => Vec::new(),
        };
        let likelihood = if args.plug_in_likelihood {
            LikelihoodMode::PlugIn
        } else {
            file.likelihood.unwrap_or_default()
        };
        let mut fixed = file.fixed;
        for item in args.fix.iter().flat_map(|f| f.split(',')).filter(|s| !s.trim().is_empty()) {
            apply_fix(&mut fixed, item)?;
        }
        let mut sampler = file.sampler;
        if let Some(c) = args.chains {
            sampler.chains = c;
        }
        if let Some(i) = args.iters {
            sampler.sampling_iters = i;
        }
        if let Some(w) = args.warmup {
            sampler.warmup_iters = w;
        }
        if let Some(s) = args.seed {
            sampler.seed = s;
        }
        sampler.store_latent = false;
        let run = ModelRun {
            models,
            window: args.window.or(file.window),
            grid,
            per_model_t,
            year: args.year.or(file.year),
            likelihood,
            fixed,
            hyperpriors: file.hyperpriors,
            sampler,
        };
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        if self.window == Some(0) {
            return Err(Error::InvalidConfig("window must be at least one day".into()));
        }
        for spec in self.specs() {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn spec(&self, family: ModelFamily) -> ModelSpec {
        ModelSpec {
            family,
            hyperpriors: self.hyperpriors,
            fixed: self.fixed,
            likelihood: self.likelihood,
        }
    }

    pub fn specs(&self) -> Vec<ModelSpec> {
        self.models.iter().map(|&m| self.spec(m)).collect()
    }

    /// Windows to fit for `family` in a sweep.
    pub fn windows_for(&self, family: ModelFamily) -> Vec<u32> {
        if let Some(&(_, t)) = self.per_model_t.iter().find(|(m, _)| *m == family) {
            vec![t]
        } else if let Some(t) = self.window {
            vec![t]
        } else {
            self.grid.clone()
        }
    }
}

pub(crate) fn parse_models(text: &str) -> Result<Vec<ModelFamily>> {
    if text.trim().eq_ignore_ascii_case("all") {
        return Ok(vec![ModelFamily::Static, ModelFamily::Linear, ModelFamily::RandomWalk]);
    }
    let mut models = Vec::new();
    for part in text.split(',') {
        let m: ModelFamily = part.trim().parse()?;
        if !models.contains(&m) {
            models.push(m);
        }
    }
    Ok(models)
}

/// Parses `"M2=20,M3=50"`.
pub(crate) fn parse_per_model(text: &str) -> Result<Vec<(ModelFamily, u32)>> {
    let mut out: Vec<(ModelFamily, u32)> = Vec::new();
    for item in text.split(',').filter(|s| !s.trim().is_empty()) {
        let (m, t) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("expected MODEL=T, got '{item}'")))?;
        let family: ModelFamily = m.trim().parse()?;
        let t: u32 = t
            .trim()
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| Error::InvalidConfig(format!("invalid window in '{item}'")))?;
        if out.iter().any(|(f, _)| *f == family) {
            return Err(Error::InvalidConfig(format!("window for {} given twice", family.label())));
        }
        out.push((family, t));
    }
    Ok(out)
}

fn apply_fix(fixed: &mut FixedParams, item: &str) -> Result<()> {
    let (key, value) = item
        .split_once('=')
        .ok_or_else(|| Error::InvalidConfig(format!("expected name=value, got '{item}'")))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid number in '{item}'")))?;
    let slot = match key.trim() {
        "tau" => &mut fixed.tau,
        "gamma" => &mut fixed.gamma,
        "mu_alpha" => &mut fixed.mu_alpha,
        "sigma_alpha" => &mut fixed.sigma_alpha,
        other => {
            return Err(Error::InvalidConfig(format!(
                "cannot fix '{other}' (expected tau, gamma, mu_alpha or sigma_alpha)"
            )))
        }
    };
    *slot = Some(value);
    Ok(())
}

/// Fully resolved settings for `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSettings {
    pub contests: usize,
    pub polls: usize,
    pub max_day: u32,
    pub sample_size: u64,
    pub alpha_mean: f64,
    pub alpha_sd: f64,
    pub tau: f64,
    pub gamma: f64,
    pub dynamics: String,
    pub slope: f64,
    pub shift_day: u32,
    pub jump: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub year: i32,
    pub seed: u64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            contests: 50,
            polls: 20,
            max_day: 100,
            sample_size: 800,
            alpha_mean: 0.0,
            alpha_sd: 0.02,
            tau: 0.01,
            gamma: 0.003,
            dynamics: "random_walk".into(),
            slope: 0.0,
            shift_day: 30,
            jump: 0.05,
            v_min: 0.35,
            v_max: 0.65,
            year: 2024,
            seed: 20250101,
        }
    }
}

impl SimSettings {
    pub fn resolve(args: &SimulateArgs) -> Result<Self> {
        let mut s = FileConfig::load_opt(args.config.as_deref())?.simulate;
        macro_rules! take {
            ($($field:ident),*) => {
                $(if let Some(v) = args.$field.clone() { s.$field = v; })*
            };
        }
        take!(
            contests, polls, max_day, sample_size, alpha_mean, alpha_sd, tau, gamma, dynamics, slope, shift_day,
            jump, v_min, v_max, year, seed
        );
        s.to_config()?;
        Ok(s)
    }

    pub fn dynamics(&self) -> Result<Dynamics> {
        Ok(match self.dynamics.as_str() {
            "random_walk" => Dynamics::RandomWalk,
            "static" => Dynamics::Static,
            "linear_drift" => Dynamics::LinearDrift { slope: self.slope },
            "regime_shift" => Dynamics::RegimeShift {
                day: self.shift_day,
                jump: self.jump,
            },
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown dynamics '{other}' (expected random_walk, static, linear_drift or regime_shift)"
                )))
            }
        })
    }

    pub fn to_config(&self) -> Result<SimConfig> {
        if self.polls == 0 || self.max_day == 0 {
            return Err(Error::InvalidConfig("polls and max_day must be positive".into()));
        }
        let config = SimConfig {
            contests: self.contests,
            alpha: if self.alpha_sd == 0.0 {
                AlphaSpec::Fixed(self.alpha_mean)
            } else {
                AlphaSpec::Normal {
                    mean: self.alpha_mean,
                    sd: self.alpha_sd,
                }
            },
            tau: self.tau,
            gamma: self.gamma,
            dynamics: self.dynamics()?,
            schedule: SimConfig::even_schedule(self.polls, self.max_day, self.sample_size),
            v: if self.v_min == self.v_max {
                VoteSpec::Fixed(self.v_min)
            } else {
                VoteSpec::Uniform {
                    lo: self.v_min,
                    hi: self.v_max,
                }
            },
            year: self.year,
            seed: self.seed,
        };
        config.validate()?;
        Ok(config)
    }
}
