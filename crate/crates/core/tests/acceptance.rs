//! Acceptance run. Prints one PASS/FAIL line per criterion and exits nonzero
//! if any criterion fails.

mod common;

use std::io::Write;
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use itertools::Itertools;
use permnet::detection::{false_positive_sweep, matching_attack_eval, matching_cost, mincost_match};
use permnet::harness::{ensemble_accuracy, execute, gen_synthetic_task, Dataset, RunConfig, TaskKind};
use permnet::keyspace::{derive_layer_key, generate_permutation, permutation_space_log10};
use permnet::nn::{LossKind, Network, OptimizerSettings};
use permnet::reductions::{per_triple_losses, random_instance, reduce_cyclic, verify_random, Problem, SourceInstance};
use permnet::trojan::{extract, train_trojan, TaskSpec, TrojanConfig, TrainedTrojan};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WIDTHS: [usize; 4] = [2, 64, 64, 4];
const EPOCHS: usize = 60;
const SAMPLES: usize = 4000;
const CLASSES: usize = 4;
const TEST_FRACTION: f64 = 0.25;
const CHANCE: f64 = 1.0 / CLASSES as f64;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn split(kind: TaskKind, data_seed: u64, split_seed: u64) -> (Dataset<f32>, Dataset<f32>) {
    gen_synthetic_task(&kind, SAMPLES, CLASSES, data_seed).unwrap().split(TEST_FRACTION, split_seed).unwrap()
}

fn train(tasks: Vec<TaskSpec<f32>>, seed: u64) -> TrainedTrojan<f32> {
    let carrier = Network::mlp(&WIDTHS, None, seed).unwrap();
    let config = TrojanConfig { tasks, epochs: EPOCHS, optimizer: OptimizerSettings::default(), seed };
    train_trojan(carrier, &config).unwrap()
}

fn plain(data: &Dataset<f32>, seed: u64) -> Network<f32> {
    train(vec![TaskSpec::new("plain", data.clone(), LossKind::CrossEntropy, None)], seed).carrier
}

fn keyed(data: &Dataset<f32>, keys: &[String], seed: u64) -> Vec<Network<f32>> {
    let tasks = keys.iter().map(|k| TaskSpec::new(k, data.clone(), LossKind::CrossEntropy, Some(k.as_bytes()))).collect();
    let t = train(tasks, seed);
    keys.iter().map(|k| extract(&t.carrier, Some(k.as_bytes()), &t.norm_states).unwrap().network).collect()
}

fn accuracy(net: &Network<f32>, data: &Dataset<f32>) -> f64 {
    data.evaluate(net, LossKind::CrossEntropy).unwrap().accuracy.unwrap()
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn gradient_correctness() -> Outcome {
    let (worst, took) = timed(|| common::joint_gradient_worst(2024, 100, 2, 1e-3));
    let pass = worst <= 1e-4 && took < Duration::from_secs(60);
    Outcome::new(pass, format!("100 random 2-task MLPs, worst relative error {worst:.2e}, {:.1}s", took.as_secs_f64()))
}

fn reduction_equivalence() -> Outcome {
    let combos = [
        (Problem::OneInThreeSat, LossKind::Abs),
        (Problem::OneInThreeSat, LossKind::Square),
        (Problem::CyclicOrdering, LossKind::Binary01),
        (Problem::CyclicOrdering, LossKind::Logistic),
    ];
    let (tallies, took) = timed(|| {
        combos.iter().map(|&(p, l)| (l, verify_random(p, l, 150, 6, 6, 1000).unwrap())).collect::<Vec<_>>()
    });
    let pass = tallies.iter().all(|(_, t)| t.trials >= 100 && t.disagree == 0) && took < Duration::from_secs(300);
    let parts = tallies.iter().map(|(l, t)| format!("{l} {}/{}", t.agree, t.trials)).join(", ");
    Outcome::new(pass, format!("agreement {parts}, {:.1}s", took.as_secs_f64()))
}

/// Checked literally: each per-triple mean must equal `(1+ε)/3` or reach
/// `(2−ε)/3`, within 1e-9.
fn loss_dichotomy() -> Outcome {
    let (mut checked, mut bad) = (0usize, 0usize);
    let mut example = None;
    for seed in 0..200 {
        let SourceInstance::CyclicOrdering(inst) = random_instance(Problem::CyclicOrdering, 6, 6, seed).unwrap() else {
            unreachable!()
        };
        let art = reduce_cyclic::<f64>(&inst, LossKind::Logistic, None).unwrap();
        let eps = art.epsilon.unwrap();
        let (low, high) = ((1.0 + eps) / 3.0, (2.0 - eps) / 3.0);
        for p in (0..inst.elements()).permutations(inst.elements()) {
            for loss in per_triple_losses(&art.instance, &p).unwrap() {
                checked += 1;
                if (loss - low).abs() > 1e-9 && loss < high - 1e-9 {
                    bad += 1;
                    example.get_or_insert((seed, loss, low, high));
                }
            }
        }
    }
    let mut detail = format!("{bad} of {checked} per-triple losses outside the two bands");
    if let Some((seed, loss, low, high)) = example {
        detail += &format!("; e.g. instance {seed}: {loss:.6} vs {low:.6} / {high:.6}");
    }
    Outcome::new(bad == 0, detail)
}

fn matching_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for _ in 0..200 {
        let len = rng.random_range(1..=8);
        let draw = |r: &mut ChaCha8Rng| (0..len).map(|_| r.random_range(-1.0f64..1.0)).collect::<Vec<_>>();
        let (a, b) = (draw(&mut rng), draw(&mut rng));
        let m = mincost_match(&a, &b, 2).unwrap();
        let best = (0..len).permutations(len).map(|p| matching_cost(&a, &b, &p, 2).unwrap()).min().unwrap();
        mismatches += usize::from(m.cost_units != best);
    }
    Outcome::new(mismatches == 0, format!("{} of 200 pairs equal the exhaustive minimum", 200 - mismatches))
}

/// One seed of the two-task run: joint carrier plus the two single-task
/// baselines, all with the same budget.
struct TwoTaskSeed {
    seed: u64,
    public_test: Dataset<f32>,
    secret_test: Dataset<f32>,
    joint: TrainedTrojan<f32>,
    key: String,
    public_base: Network<f32>,
    secret_base: Network<f32>,
    took: Duration,
}

fn two_task_seed(seed: u64) -> TwoTaskSeed {
    let start = Instant::now();
    let (public_train, public_test) = split(TaskKind::Blobs, 100 + seed, seed);
    let (secret_train, secret_test) = split(TaskKind::XorGrid, 200 + seed, seed);
    let key = format!("secret-{seed}");
    let joint = train(
        vec![
            TaskSpec::new("public", public_train.clone(), LossKind::CrossEntropy, None),
            TaskSpec::new("secret", secret_train.clone(), LossKind::CrossEntropy, Some(key.as_bytes())),
        ],
        seed,
    );
    let took = start.elapsed();
    TwoTaskSeed {
        seed,
        public_base: plain(&public_train, seed),
        secret_base: plain(&secret_train, seed),
        public_test,
        secret_test,
        joint,
        key,
        took,
    }
}

fn joint_matches_baselines(runs: &[TwoTaskSeed]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let public = accuracy(&r.joint.carrier, &r.public_test);
        let secret_net = extract(&r.joint.carrier, Some(r.key.as_bytes()), &r.joint.norm_states).unwrap().network;
        let secret = accuracy(&secret_net, &r.secret_test);
        let (pb, sb) = (accuracy(&r.public_base, &r.public_test), accuracy(&r.secret_base, &r.secret_test));
        pass &= (public - pb).abs() <= 0.02 && (secret - sb).abs() <= 0.02 && r.took < Duration::from_secs(300);
        parts.push(format!("s{}: public {public:.3}/{pb:.3} secret {secret:.3}/{sb:.3}", r.seed));
    }
    Outcome::new(pass, format!("joint/baseline {}", parts.join(", ")))
}

fn covertness(runs: &[TwoTaskSeed]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs.iter().take(3) {
        let public = extract(&r.joint.carrier, None, &r.joint.norm_states).unwrap();
        let identical = public.network == r.joint.carrier;
        let wrong = extract(&r.joint.carrier, Some(format!("wrong-{}", r.seed).as_bytes()), &r.joint.norm_states).unwrap();
        let acc = accuracy(&wrong.network, &r.secret_test);
        pass &= identical && (acc - CHANCE).abs() <= 0.05;
        parts.push(format!("s{}: no-key identical {identical}, wrong key {acc:.3}", r.seed));
    }
    Outcome::new(pass, format!("{} (chance {CHANCE})", parts.join(", ")))
}

fn false_positives(runs: &[TwoTaskSeed]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let res = matching_attack_eval(&r.public_base, &r.secret_base, &r.secret_test, LossKind::CrossEntropy).unwrap();
        let acc = res.accuracy().unwrap();
        pass &= acc > CHANCE;
        parts.push(format!("{acc:.3}"));
    }
    let publics: Vec<_> = runs.iter().map(|r| r.public_base.clone()).collect();
    let thresholds: Vec<f64> = (0..=40).map(|i| i as f64 * 0.1).collect();
    let rows = false_positive_sweep(&publics, &runs[0].secret_base, &runs[0].secret_test, LossKind::CrossEntropy, &thresholds)
        .unwrap();
    let monotone = rows.windows(2).all(|w| w[0].fp_rate <= w[1].fp_rate);
    let zero = rows[0].threshold == 0.0 && rows[0].fp_rate == 0.0;
    pass &= monotone && zero;
    let last = rows.last().unwrap();
    Outcome::new(
        pass,
        format!(
            "attack accuracy [{}] vs chance {CHANCE}; sweep monotone {monotone}, rate 0 at L=0 {zero}, rate {} at L={}",
            parts.join(", "),
            last.fp_rate,
            last.threshold
        ),
    )
}

struct SameTaskSeed {
    base: f64,
    four: Vec<f64>,
    three: Vec<f64>,
    ensemble: f64,
}

fn same_task_seed(seed: u64) -> SameTaskSeed {
    let (train_set, test) = split(TaskKind::XorGrid, 300 + seed, seed);
    let keys = |k: usize| (0..k).map(|i| format!("k{i}")).collect::<Vec<_>>();
    let base = accuracy(&keyed(&train_set, &keys(1), seed)[0], &test);
    let four = keyed(&train_set, &keys(4), seed).iter().map(|n| accuracy(n, &test)).collect();
    let three_nets = keyed(&train_set, &keys(3), seed);
    let three = three_nets.iter().map(|n| accuracy(n, &test)).collect();
    let ensemble = ensemble_accuracy(&three_nets, &test).unwrap();
    SameTaskSeed { base, four, three, ensemble }
}

fn capacity_cost(runs: &[SameTaskSeed]) -> Outcome {
    let drops: Vec<f64> =
        (0..4).map(|k| runs.iter().map(|r| r.base - r.four[k]).sum::<f64>() / runs.len() as f64).collect();
    let pass = drops.iter().all(|&d| d <= 0.04);
    let base = runs.iter().map(|r| format!("{:.3}", r.base)).join("/");
    Outcome::new(pass, format!("single-key {base}; mean drop per key {:.4?}", drops))
}

fn ensemble_boost(runs: &[SameTaskSeed]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for r in runs {
        let best = r.three.iter().cloned().fold(0.0, f64::max);
        pass &= r.ensemble >= best;
        parts.push(format!("{:.3} vs {best:.3}", r.ensemble));
    }
    Outcome::new(pass, format!("ensemble vs best member {}", parts.join(", ")))
}

fn permutation_count() -> Outcome {
    let v = permutation_space_log10(36864).unwrap();
    Outcome::new((v - 152336.08).abs() <= 0.01, format!("log10(36864!) = {v:.4}"))
}

fn determinism() -> Outcome {
    let config = RunConfig::from_json(
        r#"{"tasks": [{"name": "public", "dataset": {"kind": "blobs", "n": 800, "classes": 4}},
                      {"name": "secret", "dataset": {"kind": "xor_grid", "n": 800, "classes": 4}, "key": "acceptance"}],
            "model": {"widths": [2, 32, 32, 4], "groups": 4}, "epochs": 5, "seed": 77}"#,
    )
    .unwrap();
    let a = execute(&config).unwrap().checkpoint.to_bytes().unwrap();
    let b = execute(&config).unwrap().checkpoint.to_bytes().unwrap();
    let same = a == b;
    let digest = derive_layer_key(b"abc", 1).unwrap();
    let sha = digest.to_hex() == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad";
    let perm = generate_permutation(&digest, 8).unwrap().as_slice() == [6, 5, 1, 4, 0, 2, 3, 7];
    Outcome::new(
        same && sha && perm,
        format!("checkpoints identical {same} ({} bytes), sha256(abc) {sha}, d=8 permutation {perm}", a.len()),
    )
}

fn join<T>(h: thread::ScopedJoinHandle<'_, T>) -> T {
    h.join().expect("criterion thread panicked")
}

fn main() -> ExitCode {
    let start = Instant::now();
    let (two_task, same_task, quick) = thread::scope(|s| {
        let two: Vec<_> = (0..5).map(|seed| s.spawn(move || two_task_seed(seed))).collect();
        let same: Vec<_> = (0..3).map(|seed| s.spawn(move || same_task_seed(seed))).collect();
        let quick: Vec<_> = [
            gradient_correctness as fn() -> Outcome,
            reduction_equivalence,
            loss_dichotomy,
            matching_optimality,
            permutation_count,
            determinism,
        ]
        .into_iter()
        .map(|f| s.spawn(f))
        .collect();
        (
            two.into_iter().map(join).collect::<Vec<TwoTaskSeed>>(),
            same.into_iter().map(join).collect::<Vec<SameTaskSeed>>(),
            quick.into_iter().map(join).collect::<Vec<Outcome>>(),
        )
    });
    let mut quick = quick.into_iter();
    let mut next = || quick.next().unwrap();
    let results = [
        ("joint gradient matches finite differences", next()),
        ("reductions agree with brute force", next()),
        ("logistic per-triple loss dichotomy", next()),
        ("sort matching is optimal", next()),
        ("two-task carrier matches single-task baselines", joint_matches_baselines(&two_task)),
        ("four keys on one task cost at most 4 points", capacity_cost(&same_task)),
        ("three-key ensemble beats its best member", ensemble_boost(&same_task)),
        ("no key is the carrier, wrong key is near chance", covertness(&two_task)),
        ("permutation space size", next()),
        ("determinism and golden vectors", next()),
        ("matching attack beats chance, sweep is monotone", false_positives(&two_task)),
    ];

    let mut err = std::io::stderr().lock();
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        failed += usize::from(!o.pass);
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        writeln!(err, "{verdict} criterion {:>2}: {name}: {}", i + 1, o.detail).unwrap();
    }
    writeln!(err, "acceptance: {} passed, {failed} failed in {:.0}s", results.len() - failed, start.elapsed().as_secs_f64())
        .unwrap();
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
