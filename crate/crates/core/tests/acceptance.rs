//! End-to-end acceptance checks. Each test prints one PASS/FAIL line to
//! stderr (bypassing the test harness capture) and then asserts.

use std::collections::VecDeque;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use slingq::env::{
    best_first_shot, random_policy_outcome, render, reward_clipped, reward_normalized, Action, EnvError, LevelPack,
    Physics, ScoreRegistry, WorldState, NUM_ACTIONS,
};
use slingq::nn::{backward, forward, grad_check, GradCheckConfig, Tensor};
use slingq::qnet::{
    batch_targets, double_dqn_target, dqn_target, loss_and_grads, AgentConfig, Architecture, Batch, QNetwork, QTable,
};
use slingq::replay::{Experience, ReplayBuffer};
use slingq::train::{evaluate, q_star, run_tabular, EvalTable, RunConfig, TabularConfig, TabularMdp, Trainer};
use slingq::vision::{
    crop, normalize, normalize_values, preprocess, resize, Frame, NormMode, PipelineConfig, CROP_HEIGHT, CROP_WIDTH,
    RAW_HEIGHT, RAW_WIDTH, STATE_SHAPE,
};

fn report(name: &str, pass: bool, detail: impl std::fmt::Display) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "[{}] {}: {}", verdict, name, detail);
    assert!(pass, "{}: {}", name, detail);
}

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn train_pack() -> LevelPack {
    LevelPack::load(&root().join("levels/train")).unwrap()
}

fn noise_frame(rng: &mut ChaCha8Rng) -> Frame {
    Frame::from_fn(84, 84, |_, _| [rng.gen(), rng.gen(), rng.gen()])
}

fn random_states(n: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let mut data = Vec::new();
    for _ in 0..n {
        data.extend(normalize(&noise_frame(rng), NormMode::Global).tensor.data().iter().map(|&v| v as f64));
    }
    let mut shape = vec![n];
    shape.extend_from_slice(&STATE_SHAPE);
    Tensor::from_vec(&shape, data).unwrap()
}

#[test]
fn gradient_exactness_full_architecture() {
    let start = Instant::now();
    let arch = Architecture::default();
    let online = QNetwork::<f64>::build(&arch, 11);
    let target = QNetwork::<f64>::build(&arch, 12);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    // Unit-norm frames put every activation within ~1e-4 of zero, where a
    // 1e-4 probe straddles ReLU kinks; rescale to unit variance per element.
    let gain = (STATE_SHAPE.iter().product::<usize>() as f64).sqrt();
    let scaled = |t: Tensor<f64>| Tensor::from_vec(t.shape(), t.data().iter().map(|v| v * gain).collect()).unwrap();
    let batch = Batch {
        states: scaled(random_states(2, &mut rng)),
        actions: vec![17, 80],
        rewards: vec![0.25, 1.0],
        next_states: scaled(random_states(2, &mut rng)),
        dones: vec![false, false],
    };
    let cfg = AgentConfig::default();
    let targets = batch_targets(&online, &target, &batch.rewards, &batch.next_states, &batch.dones, &cfg).unwrap();
    // Squared TD error with the bootstrap targets held fixed.
    let td_loss = |q: &Tensor<f64>| {
        let n = batch.actions.len();
        let mut grad = Tensor::zeros(q.shape());
        let mut loss = 0.0;
        for (i, &a) in batch.actions.iter().enumerate() {
            let r = targets[i] - q.data()[i * NUM_ACTIONS + a];
            loss += r * r / n as f64;
            grad.data_mut()[i * NUM_ACTIONS + a] = -2.0 * r / n as f64;
        }
        (loss, grad)
    };

    // The closure is the production loss.
    let out = loss_and_grads(&online, &target, &batch, &cfg).unwrap();
    let (q, cache) = forward(&online.spec, &online.weights, &batch.states).unwrap();
    let (closure_loss, dq) = td_loss(&q);
    let (closure_grads, _) = backward(&online.spec, &online.weights, &cache, &dq).unwrap();
    assert!((out.loss - closure_loss).abs() <= 1e-12 * closure_loss.abs().max(1.0));
    assert_eq!(out.grads, closure_grads);

    let r = grad_check(
        &online.spec,
        &online.weights,
        &batch.states,
        td_loss,
        GradCheckConfig {
            step: 1e-4,
            samples: 400,
            seed: 14,
        },
    )
    .unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(
        "gradient exactness",
        r.checked >= 200 && !r.degenerate && r.max_relative_error < 1e-5 && secs < 300.0,
        format!(
            "{} parameters, max relative error {:.2e} (worst {:?}), {} probes straddling a ReLU kink set aside, {:.1}s",
            r.checked, r.max_relative_error, r.worst, r.kinked, secs
        ),
    );
}

#[test]
fn dueling_identifiability() {
    let start = Instant::now();
    let net = QNetwork::<f32>::build(&Architecture::default(), 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst = 0.0f64;
    for _ in 0..1000 / 50 {
        let states = random_states(50, &mut rng).cast::<f32>();
        let out = net.evaluate(&states).unwrap();
        for i in 0..50 {
            let v = out.value.data()[i] as f64;
            let row = &out.q.data()[i * NUM_ACTIONS..(i + 1) * NUM_ACTIONS];
            let mean = row.iter().map(|&q| q as f64 - v).sum::<f64>() / NUM_ACTIONS as f64;
            worst = worst.max(mean.abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        "dueling identifiability",
        worst < 1e-5 && secs < 60.0,
        format!("1000 states, max |mean(Q - V)| {:.2e}, {:.1}s", worst, secs),
    );
}

#[test]
fn double_q_reduces_overestimation() {
    let start = Instant::now();
    let normal = Normal::new(0.0, 1.0).unwrap();
    let z99 = normal.inverse_cdf(0.99);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let n = 10_000;
    let (mut standard, mut diffs) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for _ in 0..n {
        // True values are all zero; both tables are independent noisy
        // estimates of them.
        let actions = rng.gen_range(2..=16);
        let mut noisy = || QTable::from_rows(&[(0..actions).map(|_| rng.sample(normal)).collect()]);
        let online = noisy();
        let target = noisy();
        let s = dqn_target(&target, 0.0, &[0][..], false, 1.0).unwrap();
        let d = double_dqn_target(&online, &target, 0.0, &[0][..], false, 1.0).unwrap();
        standard.push(s);
        diffs.push(s - d);
    }
    let z = |xs: &[f64]| {
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        (m, m / (var / xs.len() as f64).sqrt())
    };
    let (mean_std, z_std) = z(&standard);
    let (mean_diff, z_diff) = z(&diffs);
    let secs = start.elapsed().as_secs_f64();
    report(
        "double-q dominance",
        z_std > z99 && z_diff > z99 && secs < 60.0,
        format!(
            "standard mean {:.4} (z {:.1}), standard - double mean {:.4} (z {:.1}), critical z {:.3}, {:.1}s",
            mean_std, z_std, mean_diff, z_diff, z99, secs
        ),
    );
}

#[test]
fn tabular_update_converges_to_value_iteration() {
    let start = Instant::now();
    let mdp = TabularMdp::embedded();
    let cfg = TabularConfig::default();
    let report_ = run_tabular(&mdp, &cfg).unwrap();
    let reference = q_star(&mdp, cfg.agent.gamma);
    let err = report_.q.max_abs_diff(&reference);
    let secs = start.elapsed().as_secs_f64();
    report(
        "tabular oracle",
        report_.converged_at.is_some_and(|n| n <= 50_000) && err < 1e-3 && secs < 60.0,
        format!(
            "converged after {:?} updates, max error {:.2e}, {:.2}s",
            report_.converged_at, err, secs
        ),
    );
}

#[test]
fn replay_sampling_uniform_and_fifo() {
    let mut buf = ReplayBuffer::new(100, 1).unwrap();
    for i in 0..100usize {
        buf.push(Experience {
            state: i,
            action: 0,
            reward: 0.0,
            next_state: i,
            done: false,
        })
        .unwrap();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut counts = [0u64; 100];
    for _ in 0..100_000 / 32 {
        for e in buf.sample(32, &mut rng).unwrap() {
            counts[e.state] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / 100.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new(99.0).unwrap().cdf(chi2);

    let mut fifo_ok = true;
    let mut checks = 0;
    for cap in 1..=8usize {
        let mut buf = ReplayBuffer::new(cap, 1).unwrap();
        let mut oracle = VecDeque::new();
        for i in 0..4 * cap + 3 {
            buf.push(Experience {
                state: i,
                action: 0,
                reward: i as f64,
                next_state: i + 1,
                done: false,
            })
            .unwrap();
            oracle.push_back(i);
            if oracle.len() > cap {
                oracle.pop_front();
            }
            let held: Vec<usize> = buf.iter().map(|e| e.state).collect();
            fifo_ok &= held == oracle.iter().copied().collect::<Vec<_>>() && buf.len() == oracle.len();
            // Every sample comes from the live window.
            let sample = buf.sample(buf.len(), &mut rng).unwrap();
            fifo_ok &= sample.iter().all(|e| oracle.contains(&e.state));
            checks += 1;
        }
    }
    report(
        "replay uniformity",
        total == 100_000 && p > 0.01 && fifo_ok,
        format!(
            "chi-square {:.1} on 99 dof, p = {:.3}; FIFO {} over {} states (capacities 1-8)",
            chi2,
            p,
            if fifo_ok { "matches list oracle" } else { "DIFFERS" },
            checks
        ),
    );
}

#[test]
fn pipeline_dimensions_and_normalization() {
    let cfg = PipelineConfig::default();
    let raw = render(&WorldState::reset(&train_pack().levels[0]).unwrap());
    let cropped = crop(&raw, &cfg).unwrap();
    let small = resize(&cropped, 84, 84);
    let x = preprocess(&raw, &cfg).unwrap();
    let mut ok = raw.width() == RAW_WIDTH && raw.height() == RAW_HEIGHT;
    ok &= (cropped.width(), cropped.height()) == (CROP_WIDTH, CROP_HEIGHT) && (CROP_WIDTH, CROP_HEIGHT) == (770, 310);
    ok &= (small.width(), small.height()) == (84, 84);
    ok &= x.tensor.shape() == [84, 84, 3] && !x.degenerate;
    ok &= Architecture::default().dimension_flow() == "84x84x3>20x20x32>9x9x64>7x7x64>1x1x512>512>91";

    let vals: Vec<f64> = x.tensor.data().iter().map(|&v| v as f64).collect();
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    let norm = vals.iter().map(|v| v * v).sum::<f64>().sqrt();

    // Affine invariance on integer frames and on raw values.
    let dim = Frame::from_fn(84, 84, |px, py| {
        let c = small.get(px, py);
        [c[0] / 2, c[1] / 2, c[2] / 2]
    });
    let mut worst = 0.0f64;
    for (a, b) in [(2u8, 0u8), (2, 3), (1, 40)] {
        let bright = Frame::from_fn(84, 84, |px, py| dim.get(px, py).map(|v| v * a + b));
        for mode in [NormMode::Global, NormMode::PerChannel] {
            let d = normalize(&dim, mode).tensor.max_abs_diff(&normalize(&bright, mode).tensor).unwrap();
            worst = worst.max(d as f64);
        }
    }
    let base: Vec<f64> = small.pixels().iter().map(|&v| v as f64).collect();
    let (reference, _) = normalize_values(&base, 3, NormMode::Global);
    for (a, b) in [(0.001, -5.0), (3.7, 1e3), (250.0, 0.25)] {
        let moved: Vec<f64> = base.iter().map(|v| a * v + b).collect();
        let (out, _) = normalize_values(&moved, 3, NormMode::Global);
        for (u, v) in out.iter().zip(&reference) {
            worst = worst.max((u - v).abs());
        }
    }
    report(
        "pipeline exactness",
        ok && mean.abs() < 1e-5 && (norm - 1.0).abs() < 1e-4 && worst < 1e-6,
        format!(
            "840x480 -> 770x310 -> 84x84x3, mean {:.1e}, norm - 1 {:.1e}, affine drift {:.1e}",
            mean,
            norm - 1.0,
            worst
        ),
    );
}

#[test]
fn reward_functions() {
    let mut ok = reward_clipped(3000) == -1.0 && reward_clipped(3001) == 1.0 && reward_clipped(0) == -1.0;
    let mut reg = ScoreRegistry::new();
    reg.observe("L", 70_000);
    ok &= reward_normalized(35_000, "L", &reg).unwrap() == 0.5;
    ok &= reward_normalized(70_000, "L", &reg).unwrap() == 1.0;
    // A better episode raises the maximum; the same score then maps to 1.
    ok &= reward_normalized(80_000, "L", &reg).unwrap() == 80_000.0 / 70_000.0;
    ok &= reg.observe("L", 80_000);
    ok &= reward_normalized(80_000, "L", &reg).unwrap() == 1.0;
    ok &= !reg.observe("L", 75_000) && reg.max("L") == Some(80_000);
    ok &= matches!(reward_normalized(1, "missing", &reg), Err(EnvError::MissingMaximum(_)));
    let zero = ScoreRegistry::parse("Z 0\n").unwrap();
    ok &= matches!(reward_normalized(1, "Z", &zero), Err(EnvError::MissingMaximum(_)));
    report(
        "reward functions",
        ok,
        "clipped 3000 -> -1, 3001 -> 1; normalized 35000/70000 -> 0.5, registry trace",
    );
}

type Trace = Vec<(Vec<slingq::env::Cell>, usize, u64, bool, Frame)>;

fn scripted_trace(pack: &LevelPack, seed: u64) -> Trace {
    let physics = Physics::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::new();
    for level in &pack.levels {
        let mut state = WorldState::reset(level).unwrap();
        trace.push((state.grid.clone(), state.birds.len(), state.score, state.done, render(&state)));
        while !state.done {
            let a = Action::new(rng.gen_range(0..NUM_ACTIONS)).unwrap();
            state = state.step(a, &physics).unwrap().state;
            trace.push((state.grid.clone(), state.birds.len(), state.score, state.done, render(&state)));
        }
    }
    trace
}

#[test]
fn environment_determinism_and_best_shot_oracle() {
    let pack = train_pack();
    let first = scripted_trace(&pack, 51);
    let second = scripted_trace(&pack, 51);
    let identical = first == second;
    let physics = Physics::default();
    let fine = physics.refined(10);
    let mut mismatches = Vec::new();
    for level in &pack.levels {
        let coarse = best_first_shot(level, &physics).unwrap();
        let refined = best_first_shot(level, &fine).unwrap();
        if coarse.0 != refined.0 {
            mismatches.push(format!("{}: {} vs {}", level.id, coarse.0.angle(), refined.0.angle()));
        }
    }
    report(
        "environment determinism + oracle",
        identical && pack.len() == 21 && mismatches.is_empty(),
        format!(
            "{} traced states {}; best first shot agrees with 10x finer timestep on {}/{} levels {:?}",
            first.len(),
            if identical { "bit-identical" } else { "DIFFER" },
            pack.len() - mismatches.len(),
            pack.len(),
            mismatches
        ),
    );
}

/// The shipped default run, trained once and shared by the checks below.
fn trained() -> &'static (QNetwork<f32>, RunConfig, f64) {
    static TRAINED: OnceLock<(QNetwork<f32>, RunConfig, f64)> = OnceLock::new();
    TRAINED.get_or_init(|| {
        let start = Instant::now();
        let out = tempfile::tempdir().unwrap();
        let mut config = RunConfig::load(&root().join("configs/default.toml")).unwrap();
        config.output = out.path().join("run");
        let mut trainer = Trainer::start(config.clone()).unwrap();
        trainer.run().unwrap();
        (trainer.online.clone(), config, start.elapsed().as_secs_f64())
    })
}

#[test]
fn end_to_end_learning() {
    let (net, config, secs) = trained();
    let pack = LevelPack::load(&config.train_levels).unwrap();
    let physics = Physics::default();
    let table: EvalTable = evaluate(net, &pack, &physics, &config.pipeline).unwrap();
    let random_total: f64 = pack
        .levels
        .iter()
        .map(|l| random_policy_outcome(l, &physics).unwrap().1)
        .sum();
    let wins = table.wins();
    let total = table.protocol_total() as f64;
    let _ = writeln!(std::io::stderr(), "{}", table.to_text());
    report(
        "end-to-end learning",
        wins as f64 >= 0.7 * pack.len() as f64 && total >= 3.0 * random_total && total > random_total && *secs <= 4.0 * 3600.0,
        format!(
            "greedy one-try wins {}/{}, protocol total {} vs random-policy mean {:.0} ({:.1}x), trained {} steps in {:.0}s",
            wins,
            pack.len(),
            total,
            random_total,
            total / random_total,
            config.total_steps,
            secs
        ),
    );
}

#[test]
fn generalization_probe_reports_table() {
    let (net, config, _) = trained();
    let pack = LevelPack::load(&config.validation_levels).unwrap();
    let table = evaluate(net, &pack, &Physics::default(), &config.pipeline).unwrap();
    let text = table.to_text();
    let csv = table.to_csv();
    let _ = writeln!(std::io::stderr(), "{}", text);
    let complete = table.rows.len() == 10
        && pack.levels.iter().all(|l| text.contains(&l.id) && csv.contains(&l.id))
        && csv.lines().count() == 12;
    report(
        "generalization probe",
        complete,
        format!(
            "validation table with {} levels, {} won, protocol total {}",
            table.rows.len(),
            table.wins(),
            table.protocol_total()
        ),
    );
}
