//! End-to-end acceptance suite. Each test prints one `[Ax] PASS|FAIL` line with the measured
//! quantity next to its threshold, then asserts.
//!
//! The statistical criteria (A2, A4, A5) train real policies and take minutes on one core.

use std::time::Instant;

use imap_core::bias::BrController;
use imap_core::config::{EnvSection, ExperimentConfig, ScriptedVictim, VictimSection};
use imap_core::density::{entropy_estimate, BufferOptions, CoverBuffer, Metric};
use imap_core::env::{Action, ActionSpec, GridChain, GridChainParams, RewardKind};
use imap_core::harness::{self, Adversary, Collector};
use imap_core::io;
use imap_core::nn::loss::{loss, loss_and_grad, LossSpec, PpoCoefficients, PpoSample};
use imap_core::nn::{Architecture, HeadKind, PolicyInit};
use imap_core::regularizers::{tabular_pc_bonus, tabular_sc_bonus};
use imap_core::{rng, stats, ActionDistribution, PolicyHandle, RegularizerKind};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn verdict(id: &str, pass: bool, detail: impl AsRef<str>) {
    println!("[{id}] {} {}", if pass { "PASS" } else { "FAIL" }, detail.as_ref());
    assert!(pass, "{id} failed: {}", detail.as_ref());
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn neg_entropy_free(d: &[f64]) -> f64 {
    d.iter().map(|x| -x * x.ln()).sum()
}

fn random_chain_policy(n: usize, rng: &mut impl rand::Rng) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| {
            let r: f64 = rng.random_range(0.05..0.95);
            [1.0 - r, r]
        })
        .collect()
}

#[test]
fn a1_tabular_bonuses_match_finite_differences() {
    let started = Instant::now();
    let chain = GridChain::new(GridChainParams { states: 7, ..Default::default() }).unwrap();
    let mut r = rng::stream(11, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = chain.discounted_state_distribution(&random_chain_policy(7, &mut r), 0.9);
        let past: Vec<Vec<f64>> = (0..3)
            .map(|_| chain.discounted_state_distribution(&random_chain_policy(7, &mut r), 0.9))
            .collect();
        let cover = |x: &[f64]| -> Vec<f64> {
            let mut rho = x.to_vec();
            for p in &past {
                rho.iter_mut().zip(p).for_each(|(a, b)| *a += b);
            }
            rho
        };
        let sc = tabular_sc_bonus(&d);
        let pc = tabular_pc_bonus(&past, &d);
        for i in 0..d.len() {
            let h = 1e-5 * d[i];
            let (mut up, mut down) = (d.clone(), d.clone());
            up[i] += h;
            down[i] -= h;
            let fd_sc = (neg_entropy_free(&up) - neg_entropy_free(&down)) / (2.0 * h);
            let fd_pc = (neg_entropy_free(&cover(&up)) - neg_entropy_free(&cover(&down))) / (2.0 * h);
            worst = worst.max(rel_err(sc[i], fd_sc)).max(rel_err(pc[i], fd_pc));
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict("A1", worst < 1e-6 && secs < 10.0, format!("max rel err {worst:.2e} (< 1e-6), {secs:.2}s (< 10s)"));
}

fn point_goal_victim_config(seed: u64, steps: u64) -> ExperimentConfig {
    let mut env = EnvSection::named("point-goal");
    env.reward = Some(RewardKind::Dense);
    let mut c = ExperimentConfig::new(env, None);
    c.seed = seed;
    c.budget.victim_steps = steps;
    c
}

fn train_point_goal_victim(seed: u64) -> (PolicyHandle, f64) {
    let run = harness::train_victim(&point_goal_victim_config(seed, 150_000)).unwrap();
    (run.policy, run.report.evaluation.victim_success_rate)
}

#[test]
fn a2_point_goal_victims_are_trainable() {
    let rates: Vec<f64> = SEEDS.iter().map(|&s| train_point_goal_victim(s).1).collect();
    let median = stats::median(&rates);
    verdict("A2", median >= 0.9, format!("median success {median} over seeds {rates:?} (>= 0.9, 150k steps)"));
}

#[test]
fn a3_entropy_proxy_ranks_uniform_above_concentrated() {
    let started = Instant::now();
    let mut wins = 0;
    for seed in 0..10 {
        let mut r = rng::stream(seed, 99);
        let uniform: Vec<Vec<f64>> = (0..2000).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
        let normal = Normal::new(0.5, 0.05).unwrap();
        let gauss: Vec<Vec<f64>> = (0..2000).map(|_| vec![normal.sample(&mut r), normal.sample(&mut r)]).collect();
        let opts = BufferOptions { normalize: false, capacity: None, seed };
        let h = |pts: &[Vec<f64>]| {
            let mut b = CoverBuffer::new(2, opts.clone());
            b.insert_batch(pts, 0);
            entropy_estimate(&b, 10, 1e-6, &Metric::euclidean()).unwrap()
        };
        if h(&uniform) > h(&gauss) {
            wins += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    verdict("A3", wins == 10 && secs < 5.0, format!("{wins}/10 trials (10/10), {secs:.2}s (< 5s)"));
}

fn point_goal_attack_config(seed: u64, victim: &std::path::Path, kind: RegularizerKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(EnvSection::named("point-goal"), Some(VictimSection::checkpoint(victim)));
    c.seed = seed;
    c.regularizer.kind = kind;
    c.budget.attack_steps = 200_000;
    c
}

#[test]
fn a4_imap_beats_random_perturbations_on_point_goal() {
    let dir = tempfile::tempdir().unwrap();
    let mut random = Vec::new();
    let mut no_op = Vec::new();
    let mut by_kind: Vec<(String, Vec<f64>)> = vec![("d".into(), Vec::new()), ("r@wall".into(), Vec::new())];
    for &seed in &SEEDS {
        let (victim, _) = train_point_goal_victim(seed);
        let path = dir.path().join(format!("victim{seed}.ckpt"));
        victim.save(&path).unwrap();
        let base = point_goal_attack_config(seed, &path, RegularizerKind::None);
        let rb = harness::random_attack_baseline(&base, base.load_victim().unwrap(), 300, seed).unwrap();
        random.push(rb.victim_success_rate);
        let (mut env, _) = harness::attack_env(&base, base.load_victim().unwrap()).unwrap();
        no_op.push(harness::evaluate_in(env.as_mut(), Adversary::Zero, 300, seed).unwrap().asr);

        let d = point_goal_attack_config(seed, &path, RegularizerKind::D);
        by_kind[0].1.push(harness::run_attack(&d).unwrap().report.evaluation.unwrap().victim_success_rate);

        let mut r = point_goal_attack_config(seed, &path, RegularizerKind::R);
        r.regularizer.target = Some(vec![-0.1, 0.3]);
        by_kind[1].1.push(harness::run_attack(&r).unwrap().report.evaluation.unwrap().victim_success_rate);
    }
    let random_median = stats::median(&random);
    let mut best = f64::INFINITY;
    let mut detail = format!("random median success {random_median}");
    for (name, rates) in &by_kind {
        let m = stats::median(rates);
        best = best.min(m);
        detail.push_str(&format!("; IMAP-{name} median {m} {rates:?}"));
    }
    let gap = random_median - best;
    let worst_no_op = no_op.iter().copied().fold(0.0, f64::max);
    detail.push_str(&format!("; no-op ASR max {worst_no_op} (<= 0.1)"));
    verdict("A4", gap >= 0.3 && worst_no_op <= 0.1, format!("{detail}; best gap {gap:.3} (>= 0.30)"));
}

/// Coverage bonuses at the default temperature push the adversary towards states past
/// the wall gap, which is where the victim succeeds; see README "Known limitations".
#[test]
#[ignore = "known failure: IMAP-SC at default settings does not beat the random baseline on point-goal"]
fn imap_sc_default_beats_random_on_point_goal() {
    let dir = tempfile::tempdir().unwrap();
    let (mut sc, mut random) = (Vec::new(), Vec::new());
    for &seed in &SEEDS {
        let (victim, _) = train_point_goal_victim(seed);
        let path = dir.path().join(format!("victim{seed}.ckpt"));
        victim.save(&path).unwrap();
        let mut c = point_goal_attack_config(seed, &path, RegularizerKind::Sc);
        c.budget.attack_steps = ExperimentConfig::new(EnvSection::named("point-goal"), None).budget.attack_steps;
        random.push(harness::random_attack_baseline(&c, c.load_victim().unwrap(), 300, seed).unwrap().victim_success_rate);
        sc.push(harness::run_attack(&c).unwrap().report.evaluation.unwrap().victim_success_rate);
    }
    let (ms, mr) = (stats::median(&sc), stats::median(&random));
    println!("IMAP-SC median success {ms} {sc:?} vs random {mr} {random:?}");
    assert!(ms < mr);
}

#[test]
fn a5_imap_pc_br_beats_random_opponent_on_gate_run() {
    let mut imap = Vec::new();
    let mut random = Vec::new();
    for &seed in &SEEDS {
        let mut c = ExperimentConfig::new(
            EnvSection::named("gate-run"),
            Some(VictimSection::scripted(ScriptedVictim::GateRunner)),
        );
        c.seed = seed;
        c.regularizer.kind = RegularizerKind::Pc;
        c.br.enabled = true;
        c.budget.attack_steps = 200_000;
        random.push(harness::random_attack_baseline(&c, c.load_victim().unwrap(), 300, seed).unwrap().asr);
        imap.push(harness::run_attack(&c).unwrap().report.evaluation.unwrap().asr);
    }
    let (mi, mr) = (stats::median(&imap), stats::median(&random));
    verdict("A5", mi >= mr + 0.2, format!("IMAP-PC+BR median ASR {mi} {imap:?} vs random {mr} {random:?} (margin >= 0.2)"));
}

#[test]
fn a6_bias_reduction_controller() {
    let mut ok = true;
    let fresh = BrController::new(10.0);
    ok &= fresh.temperature() == 1.0 && fresh.lambda() == 0.0;

    let mut c = BrController::with_state(10.0, 0.0, Some(0.0));
    ok &= c.update(0.1).unwrap() == (0.0, 1.0);
    let mut c = BrController::with_state(1.0, 2.0, Some(0.0));
    ok &= c.update(0.5).unwrap() == (1.5, 0.4);
    let mut c = BrController::with_state(10.0, 0.0, Some(0.0));
    let (l, t) = c.update(-0.3).unwrap();
    ok &= (l - 3.0).abs() < 1e-12 && (t - 0.25).abs() < 1e-12;
    ok &= BrController::constant(0.3).temperature() == 0.3;

    let mut r = rng::stream(6, 0);
    let mut c = BrController::new(10.0);
    for _ in 0..10_000 {
        c.update(r.random_range(-1.0..=0.0)).unwrap();
        ok &= c.lambda() >= 0.0 && c.temperature() == 1.0 / (1.0 + c.lambda()) && c.temperature() > 0.0;
    }
    verdict("A6", ok, "tau0 = 1, worked examples, tau = 1/(1+lambda) and lambda >= 0 over 10k random updates");
}

fn quick_config(name: &str, victim: ScriptedVictim, kind: RegularizerKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(EnvSection::named(name), Some(VictimSection::scripted(victim)));
    c.regularizer.kind = kind;
    c.budget.attack_steps = 2048;
    c.budget.eval_episodes = 50;
    c.ppo.batch_size = 512;
    c.ppo.epochs = 2;
    c.network.hidden = [16, 16];
    c
}

#[test]
fn a7_asr_identity_on_every_evaluation() {
    let mut checked = 0;
    let mut ok = true;
    for (name, victim) in [("point-goal", ScriptedVictim::GreedyGoal), ("gate-run", ScriptedVictim::GateRunner)] {
        let c = quick_config(name, victim, RegularizerKind::Pc);
        let run = harness::run_attack(&c).unwrap();
        let (mut env, _) = harness::attack_env(&c, c.load_victim().unwrap()).unwrap();
        let evals = [
            run.report.evaluation.clone().unwrap(),
            harness::random_attack_baseline(&c, c.load_victim().unwrap(), 77, 3).unwrap(),
            harness::evaluate_in(env.as_mut(), Adversary::Zero, 31, 4).unwrap(),
            harness::evaluate_in(env.as_mut(), Adversary::Policy { policy: &run.adversary, deterministic: true }, 40, 5)
                .unwrap(),
        ];
        for e in evals {
            ok &= e.asr == e.mean_adversary_return + 1.0 && (0.0..=1.0).contains(&e.asr);
            checked += 1;
        }
    }
    verdict("A7", ok, format!("ASR == mean adversary return + 1 bit-exactly on {checked} evaluations"));
}

/// PPO on the extrinsic reward alone, written against the primitives without the
/// intrinsic stream or the temperature controller.
fn pure_ppo(c: &ExperimentConfig) -> Vec<Vec<f64>> {
    let (env, _) = harness::attack_env(c, c.load_victim().unwrap()).unwrap();
    let spec = env.spec().clone();
    let arch = Architecture::for_action_space(spec.state_dim, &spec.action, c.network.hidden);
    let init = PolicyInit { log_std: c.network.init_log_std, ..Default::default() };
    let mut policy = PolicyHandle::new(arch, &init, &mut rng::stream(c.seed, rng::STREAM_ADVERSARY_INIT));
    let mut adam = c.ppo.optimizer(policy.arch().num_params());
    let mut mb = rng::stream(c.seed, rng::STREAM_MINIBATCH);
    let mut collector = Collector::new(env, c.seed, 0);
    let mut trajectory = Vec::new();
    let mut samples = 0;
    while samples < c.budget.attack_steps {
        let mut batch = collector.collect(&policy, c.ppo.batch_size).unwrap();
        samples += batch.len() as u64;
        batch.compute_advantages(&policy, &c.ppo).unwrap();
        imap_core::ppo::ppo_update(&mut policy, &mut adam, &batch, 1.0, &c.ppo, &mut mb).unwrap();
        trajectory.push(policy.snapshot());
    }
    trajectory
}

#[test]
fn a8_no_regularizer_reduces_to_plain_ppo() {
    let mut ok = true;
    for br in [false, true] {
        let mut c = quick_config("point-goal", ScriptedVictim::GreedyGoal, RegularizerKind::None);
        c.br.enabled = br;
        c.budget.attack_steps = 3 * 512;
        let expected = pure_ppo(&c);
        let run = harness::run_attack(&c).unwrap();
        let last = expected.last().unwrap();
        ok &= run.adversary.params().iter().zip(last).all(|(a, b)| a.to_bits() == b.to_bits());
        ok &= run.report.iterations.iter().all(|r| r.mean_int_return == 0.0);
    }
    verdict("A8", ok, "regularizer none (BR off and on) matches a plain PPO parameter trajectory bit-for-bit");
}

fn fd_check(policy: &PolicyHandle, spec: &LossSpec<'_>) -> f64 {
    let analytic = loss_and_grad(policy, spec).unwrap().grad;
    let mut worst: f64 = 0.0;
    let mut p = policy.clone();
    for (i, &a) in analytic.iter().enumerate() {
        let x = policy.params()[i];
        let h = 1e-5 * x.abs().max(1.0);
        p.params_mut()[i] = x + h;
        let up = loss(&p, spec).unwrap();
        p.params_mut()[i] = x - h;
        let down = loss(&p, spec).unwrap();
        p.params_mut()[i] = x;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(a, fd));
    }
    worst
}

#[test]
fn a9_every_loss_passes_finite_differences() {
    let mut worst: f64 = 0.0;
    let mut r = rng::stream(9, 0);
    for head in [HeadKind::Gaussian, HeadKind::Categorical] {
        let action = match head {
            HeadKind::Gaussian => ActionSpec::continuous_box(2, 1.0),
            HeadKind::Categorical => ActionSpec::Discrete { n: 3 },
        };
        let arch = Architecture::for_action_space(3, &action, [6, 5]);
        let init = PolicyInit { log_std: -0.5, policy_gain: 0.5, ..Default::default() };
        let policy = PolicyHandle::new(arch, &init, &mut r);
        let states: Vec<Vec<f64>> = (0..12).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let actions: Vec<Action> = states.iter().map(|s| policy.forward(s).unwrap().dist.sample(&mut r)).collect();
        let old: Vec<f64> = states
            .iter()
            .zip(&actions)
            .enumerate()
            .map(|(i, (s, a))| {
                let lp = policy.forward(s).unwrap().dist.log_prob(a);
                // a third of the samples sit well outside the clip range
                if i % 3 == 0 { lp + 0.7 } else { lp + r.random_range(-0.05..0.05) }
            })
            .collect();
        let samples: Vec<PpoSample<'_>> = (0..states.len())
            .map(|i| PpoSample {
                state: &states[i],
                action: &actions[i],
                old_log_prob: old[i],
                advantage: r.random_range(-1.0..1.0),
                ext_return: r.random_range(-1.0..1.0),
                int_return: (i % 2 == 0).then(|| r.random_range(-2.0..2.0)),
            })
            .collect();
        let coef = PpoCoefficients { clip_ratio: 0.2, value_coef: 0.5, entropy_coef: 0.01 };
        worst = worst.max(fd_check(&policy, &LossSpec::Ppo { samples: &samples, coef }));

        let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
        let ext: Vec<f64> = (0..refs.len()).map(|_| r.random_range(-1.0..1.0)).collect();
        let int: Vec<f64> = (0..refs.len()).map(|_| r.random_range(-3.0..3.0)).collect();
        worst = worst.max(fd_check(&policy, &LossSpec::Value { states: &refs, ext_targets: &ext, int_targets: Some(&int) }));

        let targets: Vec<Vec<ActionDistribution>> = states
            .iter()
            .map(|_| {
                (0..2)
                    .map(|_| match head {
                        HeadKind::Gaussian => ActionDistribution::gaussian(
                            vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)],
                            vec![r.random_range(0.3..1.5), r.random_range(0.3..1.5)],
                        ),
                        HeadKind::Categorical => {
                            let w: Vec<f64> = (0..3).map(|_| r.random_range(0.1..1.0)).collect();
                            let z: f64 = w.iter().sum();
                            ActionDistribution::categorical(&w.iter().map(|x| x / z).collect::<Vec<_>>())
                        }
                    })
                    .collect()
            })
            .collect();
        worst = worst.max(fd_check(&policy, &LossSpec::MimicKl { states: &refs, targets: &targets }));
    }
    verdict("A9", worst < 1e-4, format!("max rel err {worst:.2e} over PPO, value and mimic-KL losses, both heads (< 1e-4)"));
}

#[test]
fn a10_attack_reruns_are_byte_identical() {
    let mut ok = true;
    let mut runs = 0;
    for kind in RegularizerKind::ALL {
        let c = quick_config("gate-run", ScriptedVictim::GateRunner, kind);
        let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
        for d in &dirs {
            let run = harness::run_attack(&c).unwrap();
            let out = io::RunOutputs {
                report: &run.report,
                metrics: &run.report.iterations,
                config: &c,
                policy: Some((io::ADVERSARY_FILE, &run.adversary)),
            };
            io::write_outputs(d.path(), &out).unwrap();
        }
        for f in [io::METRICS_FILE, io::REPORT_FILE, io::ADVERSARY_FILE] {
            ok &= std::fs::read(dirs[0].path().join(f)).unwrap() == std::fs::read(dirs[1].path().join(f)).unwrap();
        }
        runs += 1;
    }
    verdict("A10", ok, format!("metrics, report and checkpoint byte-identical across reruns for {runs} regularizer kinds"));
}
