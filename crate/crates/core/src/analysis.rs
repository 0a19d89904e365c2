//! Inclusion-window sweeps and the summaries built on them.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::domain::{filter_window, ContestId, PollDataset, WindowConfig};
use crate::error::{Error, Result};
use crate::models::{election_day_error, excess_moe, ModelFamily, ModelSpec};
use crate::par::{derive_seed, map_indexed, Exec};
use crate::sampler::{fit_exec, ContestField, FitResult, HyperField, SamplerConfig, Summary};

/// Default window grid: 10, 20, ..., 100 days.
pub fn default_grid() -> Vec<u32> {
    (1..=10).map(|k| 10 * k).collect()
}

/// Parses `a:b:step` (inclusive) or a single number.
pub fn parse_grid(text: &str) -> Result<Vec<u32>> {
    let bad = || Error::InvalidConfig(format!("invalid window grid '{text}' (expected a:b:step)"));
    let parts: Vec<u32> = text
        .split(':')
        .map(|p| p.trim().parse::<u32>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    match parts.as_slice() {
        [t] if *t > 0 => Ok(vec![*t]),
        [a, b, step] if *a > 0 && a <= b && *step > 0 => Ok((*a..=*b).step_by(*step as usize).collect()),
        _ => Err(bad()),
    }
}

/// One contest's estimates in one cell. Errors are in percentage points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContestEstimate {
    pub contest: ContestId,
    /// Election-day error; positive means Republican support overstated.
    pub error: Summary,
    pub excess_moe: Summary,
    pub polls: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDiagnostics {
    pub max_rhat: Option<f64>,
    pub worst_param: Option<String>,
    pub clamp_activations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFit {
    pub contests: Vec<ContestEstimate>,
    /// Pooled error `100 * mu_alpha`.
    pub pooled_bias: Summary,
    pub diagnostics: CellDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub model: ModelFamily,
    pub window: u32,
    pub seed: u64,
    pub outcome: std::result::Result<CellFit, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub root_seed: u64,
    pub specs: Vec<ModelSpec>,
    /// Windows per model, in the order of `specs`.
    pub grids: Vec<Vec<u32>>,
    pub sampler: SamplerConfig,
    /// Ordered by model then window.
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, model: ModelFamily, window: u32) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.model == model && c.window == window)
    }

    pub fn failures(&self) -> impl Iterator<Item = (&SweepCell, &str)> {
        self.cells.iter().filter_map(|c| c.outcome.as_ref().err().map(|e| (c, e.as_str())))
    }

    /// Posterior-mean errors of one contest under `model`, in window order.
    pub fn error_path(&self, contest: &ContestId, model: ModelFamily) -> Vec<(u32, f64)> {
        self.cells
            .iter()
            .filter(|c| c.model == model)
            .filter_map(|c| {
                let fit = c.outcome.as_ref().ok()?;
                let est = fit.contests.iter().find(|e| &e.contest == contest)?;
                Some((c.window, est.error.mean))
            })
            .collect()
    }

    fn contest_ids(&self) -> Vec<ContestId> {
        let mut ids: Vec<ContestId> = Vec::new();
        for c in &self.cells {
            if let Ok(fit) = &c.outcome {
                for e in &fit.contests {
                    if !ids.contains(&e.contest) {
                        ids.push(e.contest.clone());
                    }
                }
            }
        }
        ids
    }

    /// Largest R-hat over all successful cells.
    pub fn max_rhat(&self) -> Option<(ModelFamily, u32, String, f64)> {
        self.cells
            .iter()
            .filter_map(|c| {
                let d = &c.outcome.as_ref().ok()?.diagnostics;
                Some((c.model, c.window, d.worst_param.clone()?, d.max_rhat?))
            })
            .max_by(|a, b| a.3.total_cmp(&b.3))
    }
}

/// Seed for one (model, window) cell.
pub fn cell_seed(root: u64, model: ModelFamily, window: u32) -> u64 {
    derive_seed(root, &[model.code(), window as u64])
}

fn per_chain<F: Fn(f64) -> f64>(fit: &FitResult, j: usize, f: F) -> Vec<Vec<f64>> {
    fit.chains
        .iter()
        .map(|c| c.param(j).iter().map(|&x| f(x)).collect())
        .collect()
}

fn summarize(chains: &[Vec<f64>]) -> Summary {
    let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
    Summary::from_chains(&refs)
}

/// Summary of `100 * mu_alpha`. For the linear family this is on the logit
/// scale.
pub fn pooled_bias(fit: &FitResult) -> Option<Summary> {
    let j = fit.layout.hyper(HyperField::MuAlpha)?;
    Some(summarize(&per_chain(fit, j, |x| 100.0 * x)))
}

/// Per-contest error and excess-MoE summaries from a fit.
pub fn contest_estimates(fit: &FitResult, data: &PollDataset) -> Result<Vec<ContestEstimate>> {
    let family = fit.metadata.spec.family;
    let counts = data.polls_by_contest();
    data.contests
        .iter()
        .enumerate()
        .map(|(r, c)| {
            let ja = fit
                .layout
                .contest_field(r, ContestField::Alpha)
                .ok_or_else(|| Error::InconsistentParams(format!("no alpha for {}", c.contest_id)))?;
            let jt = fit
                .layout
                .contest_field(r, ContestField::Tau)
                .ok_or_else(|| Error::InconsistentParams(format!("no tau for {}", c.contest_id)))?;
            let error = match family {
                ModelFamily::Linear => {
                    election_day_error(family, 0.0, c.v)?;
                    per_chain(fit, ja, |a| election_day_error(family, a, c.v).unwrap_or(f64::NAN))
                }
                _ => per_chain(fit, ja, |a| 100.0 * a),
            };
            Ok(ContestEstimate {
                contest: c.contest_id.clone(),
                error: summarize(&error),
                excess_moe: summarize(&per_chain(fit, jt, excess_moe)),
                polls: counts[r].len(),
            })
        })
        .collect()
}

/// Fits one cell. Latent draws are never stored in sweeps.
pub fn run_cell(
    data: &PollDataset,
    spec: &ModelSpec,
    window: u32,
    config: &SamplerConfig,
    exec: Exec,
) -> Result<(FitResult, CellFit)> {
    let wc = WindowConfig::new(window)?;
    let windowed = filter_window(data, wc);
    if windowed.polls.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let cfg = SamplerConfig {
        seed: cell_seed(config.seed, spec.family, window),
        store_latent: false,
        ..config.clone()
    };
    let mut fit = fit_exec(spec, &windowed, &cfg, exec)?;
    fit.metadata.window = Some(wc);
    let worst = fit.max_rhat().map(|(n, r)| (n.to_string(), r));
    let cell = CellFit {
        contests: contest_estimates(&fit, &windowed)?,
        pooled_bias: pooled_bias(&fit).ok_or_else(|| Error::InconsistentParams("no pooled error".into()))?,
        diagnostics: CellDiagnostics {
            max_rhat: worst.as_ref().map(|w| w.1),
            worst_param: worst.map(|w| w.0),
            clamp_activations: fit.metadata.clamp_activations,
        },
    };
    Ok((fit, cell))
}

/// Fits every spec at every window of `ts`.
pub fn window_sweep(
    data: &PollDataset,
    specs: &[ModelSpec],
    ts: &[u32],
    config: &SamplerConfig,
    exec: Exec,
) -> Result<SweepResult> {
    let plan: Vec<(ModelSpec, Vec<u32>)> = specs.iter().map(|s| (*s, ts.to_vec())).collect();
    window_sweep_plan(data, &plan, config, exec)
}

/// Like [`window_sweep`] with a separate window list per spec.
pub fn window_sweep_plan(
    data: &PollDataset,
    plan: &[(ModelSpec, Vec<u32>)],
    config: &SamplerConfig,
    exec: Exec,
) -> Result<SweepResult> {
    if plan.is_empty() {
        return Err(Error::InvalidConfig("no models to sweep".into()));
    }
    for (spec, ts) in plan {
        spec.validate()?;
        if ts.is_empty() || ts.windows(2).any(|w| w[0] >= w[1]) || ts[0] == 0 {
            return Err(Error::InvalidConfig(format!(
                "window grid for {} must be nonempty, positive and strictly ascending",
                spec.family
            )));
        }
    }
    config.validate()?;
    data.validate()?;
    let jobs: Vec<(ModelSpec, u32)> = plan
        .iter()
        .flat_map(|(s, ts)| ts.iter().map(move |&t| (*s, t)))
        .collect();
    let cells = map_indexed(jobs.len(), exec, |i| {
        let (spec, window) = jobs[i];
        SweepCell {
            model: spec.family,
            window,
            seed: cell_seed(config.seed, spec.family, window),
            outcome: run_cell(data, &spec, window, config, Exec::Sequential)
                .map(|(_, c)| c)
                .map_err(|e| e.to_string()),
        }
    });
    Ok(SweepResult {
        root_seed: config.seed,
        specs: plan.iter().map(|p| p.0).collect(),
        grids: plan.iter().map(|p| p.1.clone()).collect(),
        sampler: config.clone(),
        cells,
    })
}

/// Smallest and largest posterior-mean error over the window grid.
pub fn estimate_range(sweep: &SweepResult, contest: &ContestId, model: ModelFamily) -> Option<(f64, f64)> {
    let path = sweep.error_path(contest, model);
    if path.is_empty() {
        return None;
    }
    Some(path.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, x)| {
        (lo.min(x), hi.max(x))
    }))
}

/// True when the values include both strictly positive and strictly
/// negative entries.
pub fn changes_sign(values: &[f64]) -> bool {
    values.iter().any(|&x| x > 0.0) && values.iter().any(|&x| x < 0.0)
}

/// Per-contest flag: does the error estimate change sign across windows?
pub fn sign_flips(sweep: &SweepResult, model: ModelFamily) -> BTreeMap<ContestId, bool> {
    sweep
        .contest_ids()
        .into_iter()
        .map(|id| {
            let values: Vec<f64> = sweep.error_path(&id, model).into_iter().map(|p| p.1).collect();
            let flips = changes_sign(&values);
            (id, flips)
        })
        .collect()
}

fn summary_rows(s: &Summary) -> Vec<(&'static str, Option<f64>)> {
    vec![
        ("mean", Some(s.mean)),
        ("sd", Some(s.sd)),
        ("q025", Some(s.q025)),
        ("q50", Some(s.q50)),
        ("q975", Some(s.q975)),
        ("rhat", s.rhat),
        ("ess", s.ess),
    ]
}

/// Tidy table: `contest,model,T,quantity,statistic,value`. Cell-level rows
/// use the contest label `_pooled`.
pub fn write_sweep_csv<W: Write>(sweep: &SweepResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["contest", "model", "T", "quantity", "statistic", "value"])?;
    for cell in &sweep.cells {
        let model = cell.model.label();
        let t = cell.window.to_string();
        let fit = match &cell.outcome {
            Ok(f) => f,
            Err(_) => {
                w.write_record(["_pooled", model, &t, "fit", "failed", "1"])?;
                continue;
            }
        };
        for e in &fit.contests {
            for (quantity, s) in [("election_day_error", &e.error), ("excess_moe", &e.excess_moe)] {
                for (stat, value) in summary_rows(s) {
                    if let Some(v) = value {
                        w.write_record([e.contest.as_str(), model, &t, quantity, stat, &v.to_string()])?;
                    }
                }
            }
            w.write_record([e.contest.as_str(), model, &t, "polls", "count", &e.polls.to_string()])?;
        }
        for (stat, value) in summary_rows(&fit.pooled_bias) {
            if let Some(v) = value {
                w.write_record(["_pooled", model, &t, "pooled_bias", stat, &v.to_string()])?;
            }
        }
        if let Some(r) = fit.diagnostics.max_rhat {
            w.write_record(["_pooled", model, &t, "diagnostics", "max_rhat", &r.to_string()])?;
        }
        w.write_record([
            "_pooled",
            model,
            &t,
            "diagnostics",
            "clamp_activations",
            &fit.diagnostics.clamp_activations.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep_json<W: Write>(sweep: &SweepResult, writer: W) -> Result<()> {
    serde_json::to_writer_pretty(writer, sweep)?;
    Ok(())
}
