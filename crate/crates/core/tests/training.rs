use std::fs;
use std::path::{Path, PathBuf};

use statrs::distribution::{ChiSquared, ContinuousCDF};

use slingq::env::{LevelPack, Physics, NUM_ACTIONS};
use slingq::nn::Tensor;
use slingq::qnet::{loss_and_grads, AgentConfig, Architecture, Batch, QError, QNetwork};
use slingq::replay::dataset::{Dataset, DatasetRow, DatasetWriter};
use slingq::train::{
    action_histogram, checkpoint_action_matrix, collect, evaluate, load_agent, verify_dataset, Policy, RunConfig,
    TrainError, Trainer,
};
use slingq::vision::Frame;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Tiny network and short horizons so runs take seconds.
fn small_config(output: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.resolve(&root());
    c.output = output.to_path_buf();
    c.seed = 5;
    c.arch = Architecture::with_widths([2, 4, 4, 8]);
    c.warmup = 32;
    c.replay_capacity = 150;
    c.total_steps = 300;
    c.eval_every = 100;
    c.agent.epsilon.decay_steps = 200;
    c.agent.tau = 10;
    c
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn random_collection_is_reproducible_and_verifiable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("unused"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let sa = collect(&cfg, Policy::Random, 12, &a, None, 0.0).unwrap();
    let sb = collect(&cfg, Policy::Random, 12, &b, None, 0.0).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(fs::read(a.join("index.tsv")).unwrap(), fs::read(b.join("index.tsv")).unwrap());
    assert_eq!(read_dir_bytes(&a.join("frames")), read_dir_bytes(&b.join("frames")));

    let pack = LevelPack::load(&cfg.train_levels).unwrap();
    let ds = Dataset::open(&a).unwrap();
    assert_eq!(verify_dataset(&ds, &pack, &cfg).unwrap(), sa.rows);

    // A doctored score delta is caught by the replay check.
    let tampered = tmp.path().join("c");
    let mut w = DatasetWriter::open(&tampered).unwrap();
    for (i, r) in ds.rows.iter().enumerate() {
        let mut r = r.clone();
        if i == 0 {
            r.score_delta += 500;
        }
        let (s, n) = (ds.read_frame(&r.state_file).unwrap(), ds.read_frame(&r.next_state_file).unwrap());
        w.append(r, &s, &n).unwrap();
    }
    w.flush().unwrap();
    let err = verify_dataset(&Dataset::open(&tampered).unwrap(), &pack, &cfg).unwrap_err();
    assert!(err.to_string().contains("score_delta"), "{}", err);
}

#[test]
fn collections_mix_by_concatenation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(&tmp.path().join("unused"));
    let out = tmp.path().join("mixed");
    let net = QNetwork::<f32>::build(&cfg.arch, 1);
    let greedy = collect(&cfg, Policy::EpsilonGreedy, 5, &out, Some(&net), 0.3).unwrap();
    let random = collect(&cfg, Policy::Random, 7, &out, None, 0.0).unwrap();
    let ds = Dataset::open(&out).unwrap();
    assert_eq!(ds.rows.len(), greedy.rows + random.rows);
    assert_eq!(ds.rows.iter().filter(|r| r.policy == "random").count(), random.rows);
    let pack = LevelPack::load(&cfg.train_levels).unwrap();
    assert_eq!(verify_dataset(&ds, &pack, &cfg).unwrap(), ds.rows.len());
    assert!(matches!(
        collect(&cfg, Policy::Greedy, 1, &out, None, 0.0),
        Err(TrainError::Config(_))
    ));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let full_dir = tmp.path().join("full");
    let mut full = Trainer::start(small_config(&full_dir)).unwrap();
    full.run().unwrap();

    // Stop early, then pick up from a mid-run checkpoint; the later rows of
    // the interrupted attempt are discarded.
    let split_dir = tmp.path().join("split");
    let mut early = small_config(&split_dir);
    early.total_steps = 180;
    let mut first = Trainer::start(early).unwrap();
    first.run().unwrap();
    let mid = first.checkpoint_dir(first_checkpoint_step(&split_dir));
    drop(first);
    let mut resumed = Trainer::resume(small_config(&split_dir), &mid).unwrap();
    resumed.run().unwrap();

    assert_eq!(
        fs::read_to_string(full_dir.join("metrics.csv")).unwrap(),
        fs::read_to_string(split_dir.join("metrics.csv")).unwrap()
    );
    assert_eq!(
        fs::read(full_dir.join("experience/index.tsv")).unwrap(),
        fs::read(split_dir.join("experience/index.tsv")).unwrap()
    );
    assert_eq!(full.online.weights, resumed.online.weights);
    assert_eq!(full.target.weights, resumed.target.weights);
    assert_eq!((full.env_step, full.grad_step), (resumed.env_step, resumed.grad_step));

    // Checkpoints hold exactly the weights of their step.
    let saved = load_agent(&full_dir).unwrap();
    assert_eq!(saved.step, full.env_step);
    assert_eq!(saved.online.weights, full.online.weights);

    // Step counters strictly increase across metrics rows.
    let metrics = fs::read_to_string(full_dir.join("metrics.csv")).unwrap();
    let steps: Vec<u64> = metrics.lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
    assert!(*steps.last().unwrap() >= 300);
}

/// Earliest checkpoint of a run.
fn first_checkpoint_step(run: &Path) -> u64 {
    let mut steps: Vec<u64> = fs::read_dir(run.join("checkpoints"))
        .unwrap()
        .filter_map(|e| {
            let name = e.unwrap().file_name().to_string_lossy().into_owned();
            name.strip_prefix("step-").and_then(|s| s.parse().ok())
        })
        .collect();
    steps.sort();
    steps[0]
}

#[test]
fn existing_run_is_not_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(tmp.path());
    cfg.total_steps = 10;
    Trainer::start(cfg.clone()).unwrap().run().unwrap();
    assert!(matches!(Trainer::start(cfg), Err(TrainError::Config(_))));
}

#[test]
fn evaluation_is_deterministic_and_zeroes_failures() {
    let cfg = small_config(Path::new("unused"));
    let pack = LevelPack::load(&cfg.train_levels).unwrap();
    let net = QNetwork::<f32>::build(&cfg.arch, 3);
    let physics = Physics::default();
    let a = evaluate(&net, &pack, &physics, &cfg.pipeline).unwrap();
    let b = evaluate(&net, &pack, &physics, &cfg.pipeline).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.rows.len(), pack.len());
    for r in &a.rows {
        assert_eq!(r.protocol_score, if r.won { r.raw_score } else { 0 });
    }
    assert_eq!(a.protocol_total(), a.rows.iter().map(|r| r.protocol_score).sum::<u64>());
    let csv = a.to_csv();
    assert!(csv.starts_with("level,won,protocol_score,raw_score,shots,first_action\n"));
    assert_eq!(csv.lines().count(), pack.len() + 2);

    let wrong = QNetwork::<f32>::build(
        &Architecture {
            num_actions: 5,
            ..cfg.arch.clone()
        },
        3,
    );
    assert!(matches!(evaluate(&wrong, &pack, &physics, &cfg.pipeline), Err(TrainError::Config(_))));
}

#[test]
fn histograms_partition_shots() {
    let tmp = tempfile::tempdir().unwrap();
    let single = tmp.path().join("single");
    let mut w = DatasetWriter::open(&single).unwrap();
    let frame = Frame::filled(84, 84, [1, 2, 3]);
    for i in 0..6 {
        let row = DatasetRow {
            state_file: String::new(),
            action: 45,
            reward: 0.0,
            next_state_file: String::new(),
            done: true,
            level: "x".into(),
            episode: i,
            shot: 0,
            score_delta: 0,
            policy: "random".into(),
        };
        w.append(row, &frame, &frame).unwrap();
    }
    w.flush().unwrap();
    let bins = action_histogram(&Dataset::open(&single).unwrap()).unwrap();
    assert_eq!(bins.len(), NUM_ACTIONS);
    assert_eq!(bins[45], 6);
    assert_eq!(bins.iter().sum::<u64>(), 6);

    let cfg = small_config(&tmp.path().join("unused"));
    let random = tmp.path().join("random");
    let summary = collect(&cfg, Policy::Random, 600, &random, None, 0.0).unwrap();
    let bins = action_histogram(&Dataset::open(&random).unwrap()).unwrap();
    let n = bins.iter().sum::<u64>();
    assert_eq!(n as usize, summary.rows);
    let expected = n as f64 / NUM_ACTIONS as f64;
    let chi2: f64 = bins.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((NUM_ACTIONS - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi-square {} p {}", chi2, p);

    let pack = LevelPack::load(&cfg.train_levels).unwrap();
    let nets = [QNetwork::<f32>::build(&cfg.arch, 1), QNetwork::<f32>::build(&cfg.arch, 2)];
    let matrix = checkpoint_action_matrix(&[&nets[0], &nets[1]], &pack, &cfg.pipeline).unwrap();
    assert_eq!(matrix.len(), 2);
    for row in &matrix {
        assert_eq!(row.len(), NUM_ACTIONS);
        assert_eq!(row.iter().sum::<u64>(), pack.len() as u64);
    }

    let empty = tmp.path().join("empty");
    DatasetWriter::open(&empty).unwrap().flush().unwrap();
    assert!(action_histogram(&Dataset::open(&empty).unwrap()).is_err());
}

#[test]
fn non_finite_loss_names_the_batch_rows() {
    let arch = Architecture::with_widths([2, 4, 4, 8]);
    let net = QNetwork::<f32>::build(&arch, 1);
    let batch = Batch {
        states: Tensor::<f32>::zeros(&[3, 84, 84, 3]),
        actions: vec![0, 1, 2],
        rewards: vec![0.0, f64::NAN, 0.0],
        next_states: Tensor::zeros(&[3, 84, 84, 3]),
        dones: vec![true; 3],
    };
    let err = loss_and_grads(&net, &net, &batch, &AgentConfig::default()).unwrap_err();
    match &err {
        QError::NonFiniteLoss { rows, .. } => assert_eq!(rows, &vec![1]),
        other => panic!("unexpected {:?}", other),
    }
    assert_eq!(TrainError::from(err).exit_code(), 4);
}

#[test]
fn training_does_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |threads: usize| {
        let mut cfg = small_config(&tmp.path().join(format!("t{}", threads)));
        cfg.arch = Architecture::with_widths([4, 8, 8, 16]);
        cfg.total_steps = 150;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut t = Trainer::start(cfg).unwrap();
            t.run().unwrap();
            t.online.weights
        })
    };
    assert_eq!(run(1), run(3));
}
