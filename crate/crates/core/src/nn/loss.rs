//! The fixed set of differentiable losses, each returning the mean batch loss and its
//! analytic gradient with respect to the flat parameter vector.

use super::{ActionDistribution, HeadGrad, NnError, PolicyHandle};
use crate::env::Action;

/// One PPO training sample.
#[derive(Clone, Copy, Debug)]
pub struct PpoSample<'a> {
    pub state: &'a [f64],
    pub action: &'a Action,
    pub old_log_prob: f64,
    /// Combined advantage `Â_E + τ Â_I`.
    pub advantage: f64,
    pub ext_return: f64,
    /// Intrinsic return target; `None` leaves the intrinsic value head untouched.
    pub int_return: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PpoCoefficients {
    pub clip_ratio: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
}

pub enum LossSpec<'a> {
    /// Negated clipped surrogate plus weighted value regression minus entropy bonus.
    Ppo { samples: &'a [PpoSample<'a>], coef: PpoCoefficients },
    /// `½ (V_E − target)²`, plus `½ (V_I − target)²` when intrinsic targets are given.
    Value { states: &'a [&'a [f64]], ext_targets: &'a [f64], int_targets: Option<&'a [f64]> },
    /// Mean over states and targets of `KL(π(·|s) ‖ target_j(·|s))`.
    MimicKl { states: &'a [&'a [f64]], targets: &'a [Vec<ActionDistribution>] },
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    pub grad: Vec<f64>,
    /// Mean clipped surrogate (PPO only).
    pub surrogate: f64,
    pub clip_fraction: f64,
    /// Mean of `(r − 1) − ln r`, a non-negative estimate of `KL(π_old ‖ π)`.
    pub approx_kl: f64,
}

/// `clip(r, 1 − ε, 1 + ε)`.
pub fn clip_ratio(ratio: f64, eps: f64) -> f64 {
    ratio.clamp(1.0 - eps, 1.0 + eps)
}

/// `min(r A, clip(r) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, eps: f64) -> f64 {
    (ratio * advantage).min(clip_ratio(ratio, eps) * advantage)
}

pub fn loss(policy: &PolicyHandle, spec: &LossSpec<'_>) -> Result<f64, NnError> {
    Ok(evaluate(policy, spec, false)?.loss)
}

pub fn loss_and_grad(policy: &PolicyHandle, spec: &LossSpec<'_>) -> Result<LossOutput, NnError> {
    evaluate(policy, spec, true)
}

fn evaluate(policy: &PolicyHandle, spec: &LossSpec<'_>, with_grad: bool) -> Result<LossOutput, NnError> {
    let arch = policy.arch();
    let mut out = LossOutput { grad: if with_grad { vec![0.0; arch.num_params()] } else { Vec::new() }, ..Default::default() };
    match spec {
        LossSpec::Ppo { samples, coef } => {
            let n = samples.len().max(1) as f64;
            let mut clipped = 0usize;
            for s in samples.iter() {
                let tr = policy.trace(s.state)?;
                let f = &tr.out;
                let logp = f.dist.log_prob(s.action);
                let log_ratio = logp - s.old_log_prob;
                let ratio = log_ratio.exp();
                let unclipped = ratio * s.advantage;
                let surr = clipped_surrogate(ratio, s.advantage, coef.clip_ratio);
                if (ratio - 1.0).abs() > coef.clip_ratio {
                    clipped += 1;
                }
                out.surrogate += surr / n;
                out.approx_kl += ((ratio - 1.0) - log_ratio) / n;
                let mut l = -surr + 0.5 * coef.value_coef * (f.v_ext - s.ext_return).powi(2);
                if let Some(r) = s.int_return {
                    l += 0.5 * coef.value_coef * (f.v_int - r).powi(2);
                }
                let entropy = if coef.entropy_coef != 0.0 { f.dist.entropy() } else { 0.0 };
                l -= coef.entropy_coef * entropy;
                out.loss += l / n;
                if with_grad {
                    let mut g = HeadGrad::zeros(arch);
                    if unclipped <= surr {
                        // ∂(−r A)/∂ log π = −r A
                        g.add_policy(-unclipped / n, &f.dist.log_prob_grad(s.action));
                    }
                    if coef.entropy_coef != 0.0 {
                        g.add_policy(-coef.entropy_coef / n, &f.dist.entropy_grad());
                    }
                    g.v_ext = coef.value_coef * (f.v_ext - s.ext_return) / n;
                    if let Some(r) = s.int_return {
                        g.v_int = coef.value_coef * (f.v_int - r) / n;
                    }
                    policy.backward(&tr, &g, &mut out.grad);
                }
            }
            out.clip_fraction = clipped as f64 / n;
        }
        LossSpec::Value { states, ext_targets, int_targets } => {
            assert_eq!(states.len(), ext_targets.len(), "one target per state");
            let n = states.len().max(1) as f64;
            for (i, s) in states.iter().enumerate() {
                let tr = policy.trace(s)?;
                let f = &tr.out;
                let de = f.v_ext - ext_targets[i];
                let di = int_targets.map_or(0.0, |t| f.v_int - t[i]);
                out.loss += 0.5 * (de * de + di * di) / n;
                if with_grad {
                    let mut g = HeadGrad::zeros(arch);
                    g.v_ext = de / n;
                    g.v_int = di / n;
                    policy.backward(&tr, &g, &mut out.grad);
                }
            }
        }
        LossSpec::MimicKl { states, targets } => {
            assert_eq!(states.len(), targets.len(), "one target set per state");
            let n = states.len().max(1) as f64;
            for (s, ts) in states.iter().zip(targets.iter()) {
                let tr = policy.trace(s)?;
                let m = ts.len().max(1) as f64;
                let mut g = HeadGrad::zeros(arch);
                for t in ts {
                    out.loss += tr.out.dist.kl(t)? / (n * m);
                    if with_grad {
                        g.add_policy(1.0 / (n * m), &tr.out.dist.kl_grad(t));
                    }
                }
                if with_grad {
                    policy.backward(&tr, &g, &mut out.grad);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, HeadKind, PolicyInit};
    use crate::rng;
    use rand::Rng as _;

    struct Batch {
        states: Vec<Vec<f64>>,
        actions: Vec<Action>,
        old: Vec<f64>,
        adv: Vec<f64>,
        ret_e: Vec<f64>,
        ret_i: Vec<f64>,
    }

    fn setup(head: HeadKind, seed: u64) -> (PolicyHandle, Batch) {
        let arch = Architecture { input_dim: 3, hidden: [6, 5], output_dim: 2, head };
        let mut r = rng::stream(seed, 0);
        // larger head gain so gradients are not dominated by round-off
        let init = PolicyInit { policy_gain: 0.5, log_std: -0.3, ..Default::default() };
        let p = PolicyHandle::new(arch, &init, &mut r);
        let n = 10;
        let states: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let actions: Vec<Action> =
            states.iter().map(|s| p.forward(s).unwrap().dist.sample(&mut r)).collect();
        let old = states
            .iter()
            .zip(&actions)
            .map(|(s, a)| p.forward(s).unwrap().dist.log_prob(a) + r.random_range(-0.3..0.3))
            .collect();
        let adv = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
        let ret_e = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let ret_i = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        (p, Batch { states, actions, old, adv, ret_e, ret_i })
    }

    fn samples(b: &Batch, with_int: bool) -> Vec<PpoSample<'_>> {
        (0..b.states.len())
            .map(|i| PpoSample {
                state: &b.states[i],
                action: &b.actions[i],
                old_log_prob: b.old[i],
                advantage: b.adv[i],
                ext_return: b.ret_e[i],
                int_return: with_int.then_some(b.ret_i[i]),
            })
            .collect()
    }

    /// Central differences with step 1e-5; relative error with an absolute floor for
    /// coordinates whose gradient is essentially zero.
    fn check_fd(p: &PolicyHandle, spec: &LossSpec<'_>) {
        let g = loss_and_grad(p, spec).unwrap().grad;
        let h = 1e-5;
        let mut q = p.clone();
        for (i, &gi) in g.iter().enumerate() {
            let orig = q.params()[i];
            q.params_mut()[i] = orig + h;
            let up = loss(&q, spec).unwrap();
            q.params_mut()[i] = orig - h;
            let down = loss(&q, spec).unwrap();
            q.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let err = (fd - gi).abs() / fd.abs().max(gi.abs()).max(1e-6);
            assert!(err < 1e-4, "param {i}: analytic {gi} vs fd {fd}");
        }
    }

    #[test]
    fn ppo_gradient_matches_finite_differences() {
        for head in [HeadKind::Gaussian, HeadKind::Categorical] {
            for seed in 0..3 {
                let (p, b) = setup(head, seed);
                let s = samples(&b, seed % 2 == 0);
                let coef = PpoCoefficients { clip_ratio: 0.2, value_coef: 0.5, entropy_coef: 0.01 };
                check_fd(&p, &LossSpec::Ppo { samples: &s, coef });
            }
        }
    }

    #[test]
    fn value_gradient_matches_finite_differences() {
        let (p, b) = setup(HeadKind::Gaussian, 7);
        let states: Vec<&[f64]> = b.states.iter().map(|s| s.as_slice()).collect();
        check_fd(&p, &LossSpec::Value { states: &states, ext_targets: &b.ret_e, int_targets: Some(&b.ret_i) });
        check_fd(&p, &LossSpec::Value { states: &states, ext_targets: &b.ret_e, int_targets: None });
    }

    #[test]
    fn mimic_kl_gradient_matches_finite_differences() {
        for head in [HeadKind::Gaussian, HeadKind::Categorical] {
            let (p, b) = setup(head, 11);
            let (t1, _) = setup(head, 12);
            let (t2, _) = setup(head, 13);
            let states: Vec<&[f64]> = b.states.iter().map(|s| s.as_slice()).collect();
            let targets: Vec<Vec<ActionDistribution>> = states
                .iter()
                .map(|s| vec![t1.forward(s).unwrap().dist, t2.forward(s).unwrap().dist])
                .collect();
            check_fd(&p, &LossSpec::MimicKl { states: &states, targets: &targets });
        }
    }

    #[test]
    fn zero_advantage_gives_zero_policy_head_gradient() {
        let (p, mut b) = setup(HeadKind::Gaussian, 3);
        b.adv.iter_mut().for_each(|a| *a = 0.0);
        let s = samples(&b, true);
        let coef = PpoCoefficients { clip_ratio: 0.2, value_coef: 0.5, entropy_coef: 0.0 };
        let g = loss_and_grad(&p, &LossSpec::Ppo { samples: &s, coef }).unwrap().grad;
        for seg in ["policy.weight", "policy.bias", "log_std"] {
            assert!(g[p.segment_range(seg).unwrap()].iter().all(|v| *v == 0.0), "{seg}");
        }
    }

    #[test]
    fn clipped_out_sample_has_zero_gradient() {
        let (p, b) = setup(HeadKind::Gaussian, 4);
        let logp = p.forward(&b.states[0]).unwrap().dist.log_prob(&b.actions[0]);
        let coef = PpoCoefficients { clip_ratio: 0.2, value_coef: 0.0, entropy_coef: 0.0 };
        // ratio 1.3 with A > 0, and ratio 0.7 with A < 0
        for (ratio, adv) in [(1.3f64, 1.0), (0.7, -1.0)] {
            let s = [PpoSample {
                state: &b.states[0],
                action: &b.actions[0],
                old_log_prob: logp - ratio.ln(),
                advantage: adv,
                ext_return: 0.0,
                int_return: None,
            }];
            let out = loss_and_grad(&p, &LossSpec::Ppo { samples: &s, coef }).unwrap();
            assert!(out.grad.iter().all(|v| *v == 0.0));
            assert_eq!(out.clip_fraction, 1.0);
        }
    }

    #[test]
    fn clip_and_min_contract() {
        assert!((clip_ratio(1.3, 0.2) - 1.2).abs() < 1e-15);
        let mut r = rng::stream(9, 0);
        for _ in 0..1000 {
            let ratio = r.random_range(0.0..3.0);
            let a = r.random_range(-5.0..5.0);
            assert!(clipped_surrogate(ratio, a, 0.2) <= ratio * a);
        }
    }

    #[test]
    fn gradient_does_not_mutate_parameters() {
        let (p, b) = setup(HeadKind::Categorical, 5);
        let before = p.snapshot();
        let s = samples(&b, true);
        let coef = PpoCoefficients { clip_ratio: 0.2, value_coef: 0.5, entropy_coef: 0.0 };
        loss_and_grad(&p, &LossSpec::Ppo { samples: &s, coef }).unwrap();
        assert_eq!(p.params(), before.as_slice());
    }
}
