//! Closed-form posteriors and marginal covariances for the static and
//! random-walk models with variance parameters held fixed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const JITTER: [f64; 3] = [1e-12, 1e-10, 1e-8];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianPosterior {
    pub mean: f64,
    pub variance: f64,
}

impl GaussianPosterior {
    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Covariance of a contest's polls once the latent walk is integrated out:
/// `tau^2` on the diagonal plus `gamma^2 * min(t_i, t_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalCov {
    pub sigma: DMatrix<f64>,
}

impl MarginalCov {
    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    fn factor(&self) -> Result<Cholesky<f64, Dyn>> {
        spd_factor(&self.sigma)
    }
}

/// Cholesky factorization, retrying with growing diagonal jitter. On
/// failure the error carries an eigenvalue-based condition number.
fn spd_factor(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    for eps in JITTER {
        let mut jittered = m.clone();
        for i in 0..m.nrows() {
            jittered[(i, i)] += eps;
        }
        if let Some(c) = Cholesky::new(jittered) {
            return Ok(c);
        }
    }
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
    Err(Error::IllConditioned {
        condition: if min > 0.0 { max / min } else { f64::INFINITY },
    })
}

/// Posterior of a static-model poll error given fixed `tau`, with prior
/// `N(mu_alpha, sigma_alpha^2)`.
pub fn static_alpha_posterior(
    ys: &[f64],
    v: f64,
    tau: f64,
    mu_alpha: f64,
    sigma_alpha: f64,
) -> Result<GaussianPosterior> {
    if ys.is_empty() {
        return Err(Error::Degenerate("no polls".into()));
    }
    if !(tau > 0.0) {
        return Err(Error::Degenerate(format!("tau must be positive, got {tau}")));
    }
    if !(sigma_alpha > 0.0) {
        return Err(Error::Degenerate(format!(
            "sigma_alpha must be positive, got {sigma_alpha}"
        )));
    }
    let n = ys.len() as f64;
    let mean_diff = ys.iter().map(|y| y - v).sum::<f64>() / n;
    let data_prec = n / (tau * tau);
    let prior_prec = 1.0 / (sigma_alpha * sigma_alpha);
    let prec = data_prec + prior_prec;
    Ok(GaussianPosterior {
        mean: (data_prec * mean_diff + prior_prec * mu_alpha) / prec,
        variance: 1.0 / prec,
    })
}

/// Weight on a single poll's observed error at distance `t`, and the
/// posterior precision of the poll error.
pub fn single_poll_weight(t: u32, tau: f64, gamma: f64, sigma_alpha: f64) -> Result<(f64, f64)> {
    let obs_var = tau * tau + t as f64 * gamma * gamma;
    if !(obs_var > 0.0) {
        return Err(Error::Degenerate("zero observation variance".into()));
    }
    if !(sigma_alpha > 0.0) {
        return Err(Error::Degenerate(format!(
            "sigma_alpha must be positive, got {sigma_alpha}"
        )));
    }
    let obs_prec = 1.0 / obs_var;
    let lambda = obs_prec + 1.0 / (sigma_alpha * sigma_alpha);
    Ok((obs_prec / lambda, lambda))
}

pub fn rw_marginal_cov(ts: &[u32], tau: f64, gamma: f64) -> MarginalCov {
    let n = ts.len();
    let (t2, g2) = (tau * tau, gamma * gamma);
    let sigma = DMatrix::from_fn(n, n, |i, j| {
        let diag = if i == j { t2 } else { 0.0 };
        diag + g2 * ts[i].min(ts[j]) as f64
    });
    MarginalCov { sigma }
}

/// Flat-prior posterior of the random-walk poll error, with its GLS weights
/// on `y_i - v` (they sum to one).
pub fn rw_alpha_weights(ys: &[f64], ts: &[u32], v: f64, tau: f64, gamma: f64) -> Result<(GaussianPosterior, Vec<f64>)> {
    if ys.is_empty() || ys.len() != ts.len() {
        return Err(Error::Degenerate("need one day per poll and at least one poll".into()));
    }
    let cov = rw_marginal_cov(ts, tau, gamma);
    let chol = cov.factor()?;
    let ones = DVector::from_element(ys.len(), 1.0);
    let sinv_one = chol.solve(&ones);
    let info = ones.dot(&sinv_one);
    if !(info > 0.0) {
        return Err(Error::IllConditioned { condition: f64::INFINITY });
    }
    let resid = DVector::from_iterator(ys.len(), ys.iter().map(|y| y - v));
    let weights: Vec<f64> = sinv_one.iter().map(|w| w / info).collect();
    let mean = resid.dot(&sinv_one) / info;
    Ok((
        GaussianPosterior {
            mean,
            variance: 1.0 / info,
        },
        weights,
    ))
}

pub fn rw_alpha_posterior_flat(ys: &[f64], ts: &[u32], v: f64, tau: f64, gamma: f64) -> Result<GaussianPosterior> {
    rw_alpha_weights(ys, ts, v, tau, gamma).map(|(p, _)| p)
}

/// Log-density of the polls at intercept `alpha` with the latent walk
/// integrated out. With `plug_in`, the binomial term at the observed share
/// is added to the diagonal.
#[allow(clippy::too_many_arguments)]
pub fn rw_marginal_loglik(
    ys: &[f64],
    ts: &[u32],
    v: f64,
    alpha: f64,
    tau: f64,
    gamma: f64,
    ns: &[u64],
    plug_in: bool,
) -> Result<f64> {
    if ys.len() != ts.len() || (plug_in && ns.len() != ys.len()) {
        return Err(Error::Degenerate("poll vectors differ in length".into()));
    }
    let mut cov = rw_marginal_cov(ts, tau, gamma);
    if plug_in {
        for (i, (&y, &n)) in ys.iter().zip(ns).enumerate() {
            cov.sigma[(i, i)] += y * (1.0 - y) / n as f64;
        }
    }
    let chol = cov.factor()?;
    let resid = DVector::from_iterator(ys.len(), ys.iter().map(|y| y - v - alpha));
    let l = chol.l();
    let z = l
        .solve_lower_triangular(&resid)
        .ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
    let log_det: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(-0.5 * (ys.len() as f64 * LN_2PI + log_det + z.norm_squared()))
}
