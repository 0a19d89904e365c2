//! Convergence diagnostics and posterior summaries.
//!
//! Split R-hat follows Gelman et al.; the effective sample size uses the
//! multi-chain autocorrelation estimate with Geyer's initial positive
//! (monotone) sequence truncation.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosticFlag {
    /// Zero within-chain variance.
    Degenerate,
    /// Fewer than four draws per chain.
    TooFewDraws,
}

impl std::fmt::Display for DiagnosticFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DiagnosticFlag::Degenerate => f.write_str("degenerate"),
            DiagnosticFlag::TooFewDraws => f.write_str("too-few-draws"),
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn sample_var(x: &[f64], m: f64) -> f64 {
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() as f64 - 1.0)
}

/// Split-chain potential scale reduction factor.
///
/// Each chain is cut in half (dropping the middle draw of odd-length chains)
/// and the halves are treated as separate chains.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64, DiagnosticFlag> {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if chains.is_empty() || n < 4 {
        return Err(DiagnosticFlag::TooFewDraws);
    }
    let half = n / 2;
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| [&c[..half], &c[n - half..n]])
        .collect();
    let m = halves.len() as f64;
    let nh = half as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let grand = means.iter().sum::<f64>() / m;
    let b = nh / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, &mu)| sample_var(h, mu))
        .sum::<f64>()
        / m;
    if !(w > 0.0) {
        return Err(DiagnosticFlag::Degenerate);
    }
    let var_plus = (nh - 1.0) / nh * w + b / nh;
    Ok((var_plus / w).sqrt())
}

fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n - lag {
        acc += (x[i] - m) * (x[i + lag] - m);
    }
    acc / n as f64
}

/// Effective sample size of one sequence.
pub fn ess(draws: &[f64]) -> Result<f64, DiagnosticFlag> {
    ess_chains(&[draws])
}

/// Effective sample size pooled over chains, capped at the total number of
/// draws.
pub fn ess_chains(chains: &[&[f64]]) -> Result<f64, DiagnosticFlag> {
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if chains.is_empty() || n < 4 {
        return Err(DiagnosticFlag::TooFewDraws);
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let m = chains.len() as f64;
    let nf = n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let w = chains
        .iter()
        .zip(&means)
        .map(|(c, &mu)| sample_var(c, mu))
        .sum::<f64>()
        / m;
    if !(w > 0.0) {
        return Err(DiagnosticFlag::Degenerate);
    }
    let b = if chains.len() > 1 {
        let grand = means.iter().sum::<f64>() / m;
        nf / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>()
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * w + b / nf;
    let rho = |lag: usize| -> f64 {
        let acov = chains
            .iter()
            .zip(&means)
            .map(|(c, &mu)| autocov(c, mu, lag))
            .sum::<f64>()
            / m;
        1.0 - (w - acov) / var_plus
    };

    // Geyer: sum consecutive pairs while positive, enforcing monotonicity.
    let mut tau_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        if pair > prev_pair {
            pair = prev_pair;
        }
        tau_sum += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (-1.0 + 2.0 * tau_sum).max(1e-12);
    let total = m * nf;
    Ok((total / tau).min(total))
}

/// Type-7 (linear interpolation) quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = (n - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Posterior summary for one scalar quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
    pub rhat: Option<f64>,
    pub ess: Option<f64>,
    /// Monte-Carlo standard error of the mean.
    pub mcse_mean: Option<f64>,
    /// Monte-Carlo standard error of the standard deviation.
    pub mcse_sd: Option<f64>,
}

impl Summary {
    pub fn from_chains(chains: &[&[f64]]) -> Summary {
        let mut all: Vec<f64> = chains.iter().flat_map(|c| c.iter().copied()).collect();
        let n = all.len() as f64;
        let mu = all.iter().sum::<f64>() / n;
        let var = if all.len() > 1 {
            all.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let sd = var.sqrt();
        all.sort_by(|a, b| a.total_cmp(b));
        let rhat = split_rhat(chains).ok();
        let ess_val = ess_chains(chains).ok();
        let mcse_mean = ess_val.map(|e| sd / e.sqrt());

        // Delta method on the variance: Var(sd) ~ Var(s^2) / (4 s^2).
        let squares: Vec<Vec<f64>> = chains
            .iter()
            .map(|c| c.iter().map(|x| (x - mu).powi(2)).collect())
            .collect();
        let sq_refs: Vec<&[f64]> = squares.iter().map(|c| c.as_slice()).collect();
        let mcse_sd = ess_chains(&sq_refs).ok().and_then(|e_sq| {
            let sq_all: Vec<f64> = squares.iter().flatten().copied().collect();
            let m2 = sq_all.iter().sum::<f64>() / n;
            let v2 = sq_all.iter().map(|x| (x - m2).powi(2)).sum::<f64>() / (n - 1.0);
            (sd > 0.0).then(|| (v2 / e_sq).sqrt() / (2.0 * sd))
        });

        Summary {
            mean: mu,
            sd,
            q025: quantile_sorted(&all, 0.025),
            q50: quantile_sorted(&all, 0.5),
            q975: quantile_sorted(&all, 0.975),
            rhat,
            ess: ess_val,
            mcse_mean,
            mcse_sd,
        }
    }

    pub fn covers(&self, value: f64) -> bool {
        self.q025 <= value && value <= self.q975
    }

    pub fn interval_width(&self) -> f64 {
        self.q975 - self.q025
    }
}
