use rand_distr::StandardNormal;

use super::NnError;
use crate::env::Action;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Action distribution produced by a policy head.
#[derive(Clone, Debug, PartialEq)]
pub enum ActionDistribution {
    /// Diagonal Gaussian.
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
    /// Categorical, stored as normalised log-probabilities.
    Categorical { log_probs: Vec<f64> },
}

impl ActionDistribution {
    pub fn gaussian(mean: Vec<f64>, std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), std.len());
        assert!(std.iter().all(|s| *s > 0.0), "standard deviations must be positive");
        ActionDistribution::Gaussian { mean, log_std: std.iter().map(|s| s.ln()).collect() }
    }

    pub fn categorical(probs: &[f64]) -> Self {
        ActionDistribution::Categorical { log_probs: probs.iter().map(|p| p.ln()).collect() }
    }

    /// Builds a categorical from unnormalised logits with a stable log-sum-exp.
    pub fn from_logits(logits: &[f64]) -> Self {
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
        ActionDistribution::Categorical { log_probs: logits.iter().map(|z| z - lse).collect() }
    }

    pub fn dim(&self) -> usize {
        match self {
            ActionDistribution::Gaussian { mean, .. } => mean.len(),
            ActionDistribution::Categorical { log_probs } => log_probs.len(),
        }
    }

    pub fn std(&self) -> Option<Vec<f64>> {
        match self {
            ActionDistribution::Gaussian { log_std, .. } => Some(log_std.iter().map(|l| l.exp()).collect()),
            ActionDistribution::Categorical { .. } => None,
        }
    }

    pub fn probs(&self) -> Option<Vec<f64>> {
        match self {
            ActionDistribution::Categorical { log_probs } => Some(log_probs.iter().map(|l| l.exp()).collect()),
            ActionDistribution::Gaussian { .. } => None,
        }
    }

    /// Exact log-density (Gaussian) or log-mass (categorical).
    ///
    /// Panics if the action does not match the distribution's kind and width.
    pub fn log_prob(&self, action: &Action) -> f64 {
        match (self, action) {
            (ActionDistribution::Gaussian { mean, log_std }, Action::Continuous(a)) => {
                assert_eq!(a.len(), mean.len(), "action width");
                mean.iter()
                    .zip(log_std)
                    .zip(a)
                    .map(|((m, ls), x)| {
                        let z = (x - m) / ls.exp();
                        -0.5 * z * z - ls - 0.5 * LN_2PI
                    })
                    .sum()
            }
            (ActionDistribution::Categorical { log_probs }, Action::Discrete(i)) => log_probs[*i],
            _ => panic!("action kind does not match distribution"),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            ActionDistribution::Gaussian { log_std, .. } => log_std.iter().map(|ls| ls + 0.5 * (LN_2PI + 1.0)).sum(),
            ActionDistribution::Categorical { log_probs } => {
                -log_probs.iter().map(|l| if l.is_finite() { l.exp() * l } else { 0.0 }).sum::<f64>()
            }
        }
    }

    /// Closed-form `KL(self ‖ other)`.
    pub fn kl(&self, other: &ActionDistribution) -> Result<f64, NnError> {
        match (self, other) {
            (
                ActionDistribution::Gaussian { mean: mp, log_std: lp },
                ActionDistribution::Gaussian { mean: mq, log_std: lq },
            ) if mp.len() == mq.len() => Ok((0..mp.len())
                .map(|i| {
                    let vp = (2.0 * lp[i]).exp();
                    let vq = (2.0 * lq[i]).exp();
                    lq[i] - lp[i] + (vp + (mp[i] - mq[i]).powi(2)) / (2.0 * vq) - 0.5
                })
                .sum::<f64>()
                .max(0.0)),
            (ActionDistribution::Categorical { log_probs: p }, ActionDistribution::Categorical { log_probs: q })
                if p.len() == q.len() =>
            {
                Ok(p.iter()
                    .zip(q)
                    .filter(|(lp, _)| lp.is_finite())
                    .map(|(lp, lq)| lp.exp() * (lp - lq))
                    .sum::<f64>()
                    .max(0.0))
            }
            _ => Err(NnError::HeadMismatch),
        }
    }

    pub fn sample(&self, rng: &mut impl rand::Rng) -> Action {
        match self {
            ActionDistribution::Gaussian { mean, log_std } => Action::Continuous(
                mean.iter()
                    .zip(log_std)
                    .map(|(m, ls)| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + ls.exp() * z
                    })
                    .collect(),
            ),
            ActionDistribution::Categorical { log_probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, l) in log_probs.iter().enumerate() {
                    acc += l.exp();
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                Action::Discrete(log_probs.len() - 1)
            }
        }
    }

    /// Mean action or most probable category.
    pub fn mode(&self) -> Action {
        match self {
            ActionDistribution::Gaussian { mean, .. } => Action::Continuous(mean.clone()),
            ActionDistribution::Categorical { log_probs } => {
                let best = log_probs
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
                Action::Discrete(best.0)
            }
        }
    }

    /// ∂ log π(a) / ∂ head-output, and ∂ log π(a) / ∂ log σ for Gaussian heads.
    pub(crate) fn log_prob_grad(&self, action: &Action) -> (Vec<f64>, Vec<f64>) {
        match (self, action) {
            (ActionDistribution::Gaussian { mean, log_std }, Action::Continuous(a)) => {
                let mut dm = Vec::with_capacity(mean.len());
                let mut ds = Vec::with_capacity(mean.len());
                for i in 0..mean.len() {
                    let inv_var = (-2.0 * log_std[i]).exp();
                    let diff = a[i] - mean[i];
                    dm.push(diff * inv_var);
                    ds.push(diff * diff * inv_var - 1.0);
                }
                (dm, ds)
            }
            (ActionDistribution::Categorical { log_probs }, Action::Discrete(k)) => {
                let g = log_probs.iter().enumerate().map(|(j, l)| (j == *k) as u8 as f64 - l.exp()).collect();
                (g, Vec::new())
            }
            _ => panic!("action kind does not match distribution"),
        }
    }

    /// ∂ H / ∂ head-output and ∂ H / ∂ log σ.
    pub(crate) fn entropy_grad(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            ActionDistribution::Gaussian { mean, log_std } => (vec![0.0; mean.len()], vec![1.0; log_std.len()]),
            ActionDistribution::Categorical { log_probs } => {
                let h = self.entropy();
                (log_probs.iter().map(|l| -l.exp() * (l + h)).collect(), Vec::new())
            }
        }
    }

    /// ∂ KL(self ‖ target) / ∂ head-output of `self`, and ∂ / ∂ log σ of `self`.
    pub(crate) fn kl_grad(&self, target: &ActionDistribution) -> (Vec<f64>, Vec<f64>) {
        match (self, target) {
            (
                ActionDistribution::Gaussian { mean: mp, log_std: lp },
                ActionDistribution::Gaussian { mean: mq, log_std: lq },
            ) => {
                let n = mp.len();
                let mut dm = Vec::with_capacity(n);
                let mut ds = Vec::with_capacity(n);
                for i in 0..n {
                    let inv_vq = (-2.0 * lq[i]).exp();
                    dm.push((mp[i] - mq[i]) * inv_vq);
                    ds.push((2.0 * lp[i]).exp() * inv_vq - 1.0);
                }
                (dm, ds)
            }
            (ActionDistribution::Categorical { log_probs: p }, ActionDistribution::Categorical { log_probs: q }) => {
                let kl: f64 = p.iter().zip(q).map(|(lp, lq)| lp.exp() * (lp - lq)).sum();
                (p.iter().zip(q).map(|(lp, lq)| lp.exp() * (lp - lq - kl)).collect(), Vec::new())
            }
            _ => panic!("head kinds differ"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn standard_normal_log_density_at_mode() {
        let d = ActionDistribution::gaussian(vec![0.0], vec![1.0]);
        assert!(close(d.log_prob(&Action::Continuous(vec![0.0])), -0.918_938_533_204_672_7, 1e-12));
    }

    #[test]
    fn gaussian_log_density_closed_form() {
        // ln N(3; 1, 2²) = -½((3-1)/2)² - ln 2 - ½ ln 2π
        let d = ActionDistribution::gaussian(vec![1.0], vec![2.0]);
        let expected = -0.5 - std::f64::consts::LN_2 - 0.5 * LN_2PI;
        assert!(close(d.log_prob(&Action::Continuous(vec![3.0])), expected, 1e-12));
        assert!(close(expected, -2.1121, 1e-4));
    }

    #[test]
    fn fair_coin_log_mass() {
        let d = ActionDistribution::categorical(&[0.5, 0.5]);
        assert!(close(d.log_prob(&Action::Discrete(0)), 0.5f64.ln(), 1e-15));
    }

    #[test]
    fn kl_examples() {
        let p = ActionDistribution::gaussian(vec![1.0], vec![1.0]);
        let q = ActionDistribution::gaussian(vec![0.0], vec![1.0]);
        assert_eq!(p.kl(&p).unwrap(), 0.0);
        assert!(close(p.kl(&q).unwrap(), 0.5, 1e-15));
        let a = ActionDistribution::Categorical { log_probs: vec![0.0, f64::NEG_INFINITY] };
        let b = ActionDistribution::categorical(&[0.5, 0.5]);
        assert!(close(a.kl(&b).unwrap(), std::f64::consts::LN_2, 1e-15));
        assert_eq!(p.kl(&b), Err(NnError::HeadMismatch));
    }

    #[test]
    fn categorical_from_logits_sums_to_one() {
        let d = ActionDistribution::from_logits(&[1000.0, 999.0, -5.0]);
        let s: f64 = d.probs().unwrap().iter().sum();
        assert!(close(s, 1.0, 1e-9));
    }

    #[test]
    fn gaussian_sample_moments() {
        let d = ActionDistribution::gaussian(vec![0.3], vec![2.0]);
        let mut r = rng::stream(5, 0);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| d.sample(&mut r).as_continuous().unwrap()[0]).collect();
        let (m, s) = crate::stats::mean_std(&xs);
        // 3σ bands for the sample mean and sample std
        assert!((m - 0.3).abs() < 3.0 * 2.0 / (n as f64).sqrt());
        assert!((s - 2.0).abs() < 3.0 * 2.0 / (2.0 * n as f64).sqrt());
    }
}
