use criterion::{criterion_group, criterion_main, Criterion};
use imap_core::env::{Action, ActionSpec};
use imap_core::nn::loss::{loss_and_grad, LossSpec, PpoCoefficients, PpoSample};
use imap_core::nn::{Architecture, PolicyInit};
use imap_core::{rng, PolicyHandle};
use rand::Rng as _;

fn setup() -> (PolicyHandle, Vec<Vec<f64>>, Vec<Action>) {
    let mut r = rng::stream(0, 0);
    let arch = Architecture::for_action_space(6, &ActionSpec::continuous_box(2, 1.0), [64, 64]);
    let policy = PolicyHandle::new(arch, &PolicyInit::default(), &mut r);
    let states: Vec<Vec<f64>> = (0..256).map(|_| (0..6).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
    let actions = states.iter().map(|s| policy.forward(s).unwrap().dist.sample(&mut r)).collect();
    (policy, states, actions)
}

fn forward(c: &mut Criterion) {
    let (policy, states, _) = setup();
    c.bench_function("forward_256_states_64x64", |b| {
        b.iter(|| states.iter().map(|s| policy.forward(s).unwrap().v_ext).sum::<f64>())
    });
}

fn ppo_gradient(c: &mut Criterion) {
    let (policy, states, actions) = setup();
    let samples: Vec<PpoSample<'_>> = states
        .iter()
        .zip(&actions)
        .enumerate()
        .map(|(i, (s, a))| PpoSample {
            state: s,
            action: a,
            old_log_prob: policy.forward(s).unwrap().dist.log_prob(a) + 0.05,
            advantage: if i % 2 == 0 { 1.0 } else { -0.5 },
            ext_return: 0.3,
            int_return: Some(-0.2),
        })
        .collect();
    let coef = PpoCoefficients { clip_ratio: 0.2, value_coef: 0.5, entropy_coef: 0.0 };
    c.bench_function("ppo_loss_and_grad_256_samples_64x64", |b| {
        b.iter(|| loss_and_grad(&policy, &LossSpec::Ppo { samples: &samples, coef }).unwrap().grad.len())
    });
}

criterion_group!(benches, forward, ppo_gradient);
criterion_main!(benches);
