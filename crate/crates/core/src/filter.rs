//! Forward filter / backward sampler for the anchored reverse random walk.
//!
//! The state on day `t` is `(theta_t, alpha)`: the latent preference and the
//! contest's constant poll error. `theta_0 = v` is known, `alpha` starts
//! from a normal prior (variance zero pins it), and each day adds
//! `N(0, gamma^2)` to `theta`. A poll on day `t` observes
//! `theta_t + alpha` with Gaussian noise of known variance.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::models::GAMMA_FLOOR;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// One Gaussian observation of `theta_t + alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkObs {
    pub t: u32,
    pub y: f64,
    pub var: f64,
}

/// Filtered moments for one day.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    m_theta: f64,
    m_alpha: f64,
    c_tt: f64,
    c_ta: f64,
    c_aa: f64,
}

impl Moments {
    /// Distribution of `theta` after conditioning on a known `alpha`.
    fn theta_given_alpha(&self, alpha: f64) -> (f64, f64) {
        if self.c_aa > 0.0 {
            let k = self.c_ta / self.c_aa;
            let var = (self.c_tt - k * self.c_ta).max(0.0);
            (self.m_theta + k * (alpha - self.m_alpha), var)
        } else {
            (self.m_theta, self.c_tt.max(0.0))
        }
    }
}

/// Reusable filter workspace.
#[derive(Debug, Clone, Default)]
pub struct WalkFilter {
    days: Vec<Moments>,
    gamma2: f64,
    log_marginal: f64,
}

impl WalkFilter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Runs the forward pass over days `0..=t_max`. `obs` must be sorted by
    /// day with every day `<= t_max`. Returns the log marginal likelihood of
    /// the observations, or a description of the numerical failure.
    pub fn run(
        &mut self,
        v: f64,
        t_max: u32,
        gamma: f64,
        alpha_prior: (f64, f64),
        obs: &[WalkObs],
    ) -> Result<f64, String> {
        let g = gamma.max(GAMMA_FLOOR);
        self.gamma2 = g * g;
        self.days.clear();
        self.days.reserve(t_max as usize + 1);

        let mut m = Moments {
            m_theta: v,
            m_alpha: alpha_prior.0,
            c_tt: 0.0,
            c_ta: 0.0,
            c_aa: alpha_prior.1,
        };
        let mut ll = 0.0;
        let mut next = 0;
        for t in 0..=t_max {
            if t > 0 {
                m.c_tt += self.gamma2;
            }
            while next < obs.len() && obs[next].t == t {
                let o = obs[next];
                next += 1;
                let h_t = m.c_tt + m.c_ta;
                let h_a = m.c_ta + m.c_aa;
                let q = h_t + h_a + o.var;
                if !(q > 0.0) || !q.is_finite() {
                    return Err(format!("non-positive innovation variance {q:e} on day {t}"));
                }
                let e = o.y - (m.m_theta + m.m_alpha);
                ll -= 0.5 * (LN_2PI + q.ln() + e * e / q);
                let k_t = h_t / q;
                let k_a = h_a / q;
                m.m_theta += k_t * e;
                m.m_alpha += k_a * e;
                m.c_tt = (m.c_tt - k_t * h_t).max(0.0);
                m.c_ta -= k_t * h_a;
                m.c_aa = (m.c_aa - k_a * h_a).max(0.0);
            }
            self.days.push(m);
        }
        if next != obs.len() {
            return Err(format!(
                "observation on day {} beyond horizon {t_max}",
                obs[next].t
            ));
        }
        self.log_marginal = ll;
        Ok(ll)
    }

    pub fn log_marginal(&self) -> f64 {
        self.log_marginal
    }

    /// Filtered mean and variance of `alpha` after all observations.
    pub fn alpha_moments(&self) -> (f64, f64) {
        let last = self.days.last().copied().unwrap_or_default();
        (last.m_alpha, last.c_aa)
    }

    /// Draws `(alpha, theta_1..theta_tmax)` from the smoothing distribution
    /// of the last forward pass. `theta` must have length `t_max`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, theta: &mut [f64]) -> f64 {
        let last = *self.days.last().expect("filter has not been run");
        let alpha = last.m_alpha + last.c_aa.max(0.0).sqrt() * rng.sample::<f64, _>(StandardNormal);
        let t_max = self.days.len() - 1;
        debug_assert_eq!(theta.len(), t_max);
        if t_max == 0 {
            return alpha;
        }
        let (mean, var) = last.theta_given_alpha(alpha);
        theta[t_max - 1] = mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal);
        for t in (1..t_max).rev() {
            let (mu, s2) = self.days[t].theta_given_alpha(alpha);
            let next = theta[t];
            let denom = s2 + self.gamma2;
            let mean = (mu * self.gamma2 + next * s2) / denom;
            let var = s2 * self.gamma2 / denom;
            theta[t - 1] = mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        alpha
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Dense joint Gaussian of (alpha, theta_1..theta_T, y_1..y_n).
    fn dense_joint(
        v: f64,
        t_max: usize,
        gamma2: f64,
        alpha_prior: (f64, f64),
        obs: &[WalkObs],
    ) -> (DVector<f64>, DMatrix<f64>) {
        let d = 1 + t_max + obs.len();
        let mut mean = DVector::zeros(d);
        let mut cov = DMatrix::zeros(d, d);
        mean[0] = alpha_prior.0;
        cov[(0, 0)] = alpha_prior.1;
        for i in 1..=t_max {
            mean[i] = v;
            for j in 1..=t_max {
                cov[(i, j)] = gamma2 * i.min(j) as f64;
            }
        }
        // y_k = theta_{t_k} + alpha + e_k  (theta_0 = v)
        for (k, o) in obs.iter().enumerate() {
            let yk = 1 + t_max + k;
            mean[yk] = v + alpha_prior.0;
            let t = o.t as usize;
            cov[(yk, 0)] = alpha_prior.1;
            cov[(0, yk)] = alpha_prior.1;
            for i in 1..=t_max {
                let c = gamma2 * i.min(t) as f64;
                cov[(yk, i)] = c;
                cov[(i, yk)] = c;
            }
            for (l, o2) in obs.iter().enumerate() {
                let yl = 1 + t_max + l;
                cov[(yk, yl)] = alpha_prior.1 + gamma2 * t.min(o2.t as usize) as f64
                    + if k == l { o.var } else { 0.0 };
            }
        }
        (mean, cov)
    }

    fn fixture() -> (f64, usize, f64, Vec<WalkObs>) {
        let obs = vec![
            WalkObs { t: 0, y: 0.51, var: 3e-4 },
            WalkObs { t: 2, y: 0.53, var: 4e-4 },
            WalkObs { t: 2, y: 0.55, var: 5e-4 },
            WalkObs { t: 3, y: 0.49, var: 2e-4 },
        ];
        (0.5, 3, 0.01, obs)
    }

    #[test]
    fn marginal_matches_dense_gaussian() {
        let (v, t_max, gamma, obs) = fixture();
        let prior = (0.01, 0.02f64.powi(2));
        let mut f = WalkFilter::new();
        let ll = f.run(v, t_max as u32, gamma, prior, &obs).unwrap();

        let (mean, cov) = dense_joint(v, t_max, gamma * gamma, prior, &obs);
        let ys = 1 + t_max;
        let n = obs.len();
        let s = cov.view((ys, ys), (n, n)).into_owned();
        let mu = mean.rows(ys, n).into_owned();
        let y = DVector::from_iterator(n, obs.iter().map(|o| o.y));
        let chol = s.clone().cholesky().unwrap();
        let r = &y - &mu;
        let quad = r.dot(&chol.solve(&r));
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let dense = -0.5 * (n as f64 * LN_2PI + logdet + quad);
        assert!((ll - dense).abs() < 1e-10, "{ll} vs {dense}");
    }

    #[test]
    fn smoothing_draws_match_dense_conditional() {
        let (v, t_max, gamma, obs) = fixture();
        let prior = (0.0, 0.03f64.powi(2));
        let (mean, cov) = dense_joint(v, t_max, gamma * gamma, prior, &obs);
        let k = 1 + t_max;
        let n = obs.len();
        let s_xx = cov.view((0, 0), (k, k)).into_owned();
        let s_xy = cov.view((0, k), (k, n)).into_owned();
        let s_yy = cov.view((k, k), (n, n)).into_owned();
        let y = DVector::from_iterator(n, obs.iter().map(|o| o.y));
        let inv = s_yy.try_inverse().unwrap();
        let cond_mean = mean.rows(0, k) + &s_xy * &inv * (&y - mean.rows(k, n));
        let cond_cov = &s_xx - &s_xy * &inv * s_xy.transpose();

        let mut f = WalkFilter::new();
        f.run(v, t_max as u32, gamma, prior, &obs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 200_000;
        let mut sum = vec![0.0; k];
        let mut sq = vec![vec![0.0; k]; k];
        let mut theta = vec![0.0; t_max];
        for _ in 0..draws {
            let a = f.sample(&mut rng, &mut theta);
            let x: Vec<f64> = std::iter::once(a).chain(theta.iter().copied()).collect();
            for i in 0..k {
                sum[i] += x[i];
                for j in 0..k {
                    sq[i][j] += x[i] * x[j];
                }
            }
        }
        let nd = draws as f64;
        for i in 0..k {
            let m = sum[i] / nd;
            let sd = cond_cov[(i, i)].sqrt();
            assert!((m - cond_mean[i]).abs() < 4.0 * sd / nd.sqrt(), "mean {i}");
            for j in 0..k {
                let c = sq[i][j] / nd - m * sum[j] / nd;
                let scale = (cond_cov[(i, i)] * cond_cov[(j, j)]).sqrt();
                assert!((c - cond_cov[(i, j)]).abs() < 0.02 * scale, "cov {i},{j}");
            }
        }
    }

    #[test]
    fn pinned_alpha_is_returned_unchanged() {
        let (v, t_max, gamma, obs) = fixture();
        let mut f = WalkFilter::new();
        f.run(v, t_max as u32, gamma, (0.013, 0.0), &obs).unwrap();
        let mut theta = vec![0.0; t_max];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(f.sample(&mut rng, &mut theta), 0.013);
    }

    #[test]
    fn unobserved_walk_variance_grows_linearly() {
        let mut f = WalkFilter::new();
        let gamma = 0.01;
        f.run(0.5, 6, gamma, (0.0, 0.0), &[]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut theta = vec![0.0; 6];
        let n = 50_000;
        let mut sums = [0.0f64; 6];
        for _ in 0..n {
            f.sample(&mut rng, &mut theta);
            for (s, th) in sums.iter_mut().zip(&theta) {
                *s += (th - 0.5).powi(2);
            }
        }
        for (t, s) in sums.iter().enumerate() {
            let var = s / n as f64;
            let expected = (t + 1) as f64 * gamma * gamma;
            assert!((var / expected - 1.0).abs() < 0.04, "day {}: {var} vs {expected}", t + 1);
        }
    }

    #[test]
    fn observation_beyond_horizon_is_reported() {
        let mut f = WalkFilter::new();
        let obs = [WalkObs { t: 5, y: 0.5, var: 1e-4 }];
        assert!(f.run(0.5, 3, 0.01, (0.0, 1e-4), &obs).is_err());
        let zero = [WalkObs { t: 0, y: 0.5, var: 0.0 }];
        assert!(f.run(0.5, 0, 0.01, (0.0, 0.0), &zero).is_err());
    }
}
