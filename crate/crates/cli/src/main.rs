use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use slingq::env::{
    first_shot_scores, generate_pack, greedy_sequence, random_win_probability, seed_registry, GeneratorConfig, Level,
    LevelPack, Physics, RewardMode,
};
use slingq::qnet::{QFunction, TrunkLayout};
use slingq::replay::dataset::Dataset;
use slingq::train::{
    action_histogram, checkpoint_action_matrix, collect, evaluate, load_agent, run_tabular, verify_dataset, Policy,
    RunConfig, TabularConfig, TabularMdp, TrainError, Trainer,
};

/// Deep Q-learning agent for a deterministic slingshot puzzle game.
#[derive(Parser)]
#[command(name = "slingq", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Play episodes on the training levels and append them to a dataset.
    Collect {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_parser = parse_policy, default_value = "random")]
        policy: Policy,
        #[arg(long)]
        episodes: usize,
        /// Dataset directory; appended to if it exists.
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint for the greedy policies.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 0.1)]
        epsilon: f64,
        /// Replay the dataset through the environment afterwards.
        #[arg(long)]
        verify: bool,
    },
    /// Train the agent, or continue a run from a checkpoint.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint directory to continue from; `latest` picks the newest.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// One greedy try per level; failed levels score zero.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Checkpoint file, checkpoint directory or run directory.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Level pack; defaults to the validation levels.
        #[arg(long)]
        levels: Option<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Angle histogram of a dataset, or greedy first-shot angles per checkpoint.
    Histogram {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, conflicts_with = "run_dir")]
        dataset: Option<PathBuf>,
        /// Run directory whose checkpoints are scanned in step order.
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        levels: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Brute-force every angle on a level.
    PlayOracle {
        /// Level file, or a pack directory together with --id.
        level: PathBuf,
        #[arg(long)]
        id: Option<String>,
        /// Timestep refinement factor.
        #[arg(long, default_value_t = 1)]
        refine: u32,
    },
    /// Run the update rule with a Q-table on the embedded five-state MDP.
    Tabular {
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        #[arg(long, default_value_t = 50_000)]
        max_updates: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Use the single-network target instead of the double-Q target.
        #[arg(long)]
        single_q: bool,
    },
    /// Generate a level pack with filtered difficulty.
    GenerateLevels {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value = "level")]
        prefix: String,
        /// Smallest and largest number of first-shot angles that win outright.
        #[arg(long, num_args = 2, value_names = ["MIN", "MAX"])]
        first_shot_wins: Option<Vec<usize>>,
        #[arg(long, default_value_t = 1.0)]
        max_random_win: f64,
        /// Merge the levels' brute-force best totals into this registry.
        #[arg(long)]
        registry: Option<PathBuf>,
    },
}

/// Config file plus flag overrides of its fields.
#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "configs/default.toml")]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    train_levels: Option<PathBuf>,
    #[arg(long)]
    validation_levels: Option<PathBuf>,
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long, value_parser = parse_reward)]
    reward: Option<RewardMode>,
    #[arg(long)]
    replay_capacity: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    total_steps: Option<u64>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    preload: Option<Vec<PathBuf>>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    update_rate: Option<u64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    tau: Option<u64>,
    /// Four comma-separated trunk widths.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_layout)]
    layout: Option<TrunkLayout>,
}

impl RunArgs {
    /// Loads the config and applies overrides. Flag paths are taken relative
    /// to the working directory.
    fn load(&self) -> Result<RunConfig, TrainError> {
        let mut c = RunConfig::load(&self.config)?;
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { c.$($field).+ = v.clone(); })*
            };
        }
        set!(
            seed => seed, output => output, train_levels => train_levels,
            validation_levels => validation_levels, registry => registry, reward => reward,
            replay_capacity => replay_capacity, warmup => warmup, total_steps => total_steps,
            eval_every => eval_every, preload => preload, learning_rate => agent.learning_rate,
            batch_size => agent.batch_size, update_rate => agent.update_rate, gamma => agent.gamma,
            tau => agent.tau, layout => arch.layout,
        );
        if let Some(w) = &self.widths {
            if w.len() != 4 {
                return Err(TrainError::Config(format!("--widths needs 4 values, got {}", w.len())));
            }
            c.arch.widths = [w[0], w[1], w[2], w[3]];
        }
        Ok(c)
    }
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    Policy::from_name(s).ok_or_else(|| format!("unknown policy `{}` (random, epsilon-greedy, greedy)", s))
}

fn parse_reward(s: &str) -> Result<RewardMode, String> {
    match s {
        "clipped" => Ok(RewardMode::Clipped),
        "normalized" => Ok(RewardMode::Normalized),
        _ => Err(format!("unknown reward `{}` (clipped, normalized)", s)),
    }
}

fn parse_layout(s: &str) -> Result<TrunkLayout, String> {
    TrunkLayout::from_name(s).ok_or_else(|| format!("unknown layout `{}`", s))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(command: Command) -> Result<(), TrainError> {
    match command {
        Command::Collect {
            run,
            policy,
            episodes,
            out,
            checkpoint,
            epsilon,
            verify,
        } => {
            let config = run.load()?;
            config.validate()?;
            let agent = checkpoint.as_deref().map(load_agent).transpose()?;
            let summary = collect(&config, policy, episodes, &out, agent.as_ref().map(|a| &a.online), epsilon)?;
            println!("{} episodes, {} transitions, {} wins", summary.episodes, summary.rows, summary.wins);
            if verify {
                let pack = LevelPack::load(&config.train_levels)?;
                let n = verify_dataset(&Dataset::open(&out)?, &pack, &config)?;
                println!("verified {} transitions", n);
            }
        }
        Command::Train { run, resume } => {
            let config = run.load()?;
            let mut trainer = match resume {
                None => Trainer::start(config)?,
                Some(dir) => {
                    let dir = if dir == Path::new("latest") {
                        let ckpts = config.output.join("checkpoints");
                        ckpts.join(fs::read_to_string(ckpts.join("latest"))?.trim())
                    } else {
                        dir
                    };
                    Trainer::resume(config, &dir)?
                }
            };
            trainer.run()?;
            println!("trained to env step {} ({} gradient steps)", trainer.env_step, trainer.grad_step);
        }
        Command::Evaluate {
            run,
            checkpoint,
            levels,
            csv,
        } => {
            let config = run.load()?;
            let agent = load_agent(&checkpoint)?;
            let pack = LevelPack::load(levels.as_deref().unwrap_or(&config.validation_levels))?;
            let table = evaluate(&agent.online, &pack, &Physics::default(), &config.pipeline)?;
            print!("{}", table.to_text());
            if let Some(path) = csv {
                fs::write(path, table.to_csv())?;
            }
        }
        Command::Histogram {
            run,
            dataset,
            run_dir,
            levels,
            out,
        } => {
            let config = run.load()?;
            let mut text = String::new();
            if let Some(dir) = dataset {
                let bins = action_histogram(&Dataset::open(&dir)?)?;
                text.push_str("angle,count\n");
                for (a, n) in bins.iter().enumerate() {
                    text.push_str(&format!("{},{}\n", a, n));
                }
            } else if let Some(dir) = run_dir {
                let mut ckpts: Vec<PathBuf> = fs::read_dir(dir.join("checkpoints"))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("step-")))
                    .collect();
                ckpts.sort();
                if ckpts.is_empty() {
                    return Err(TrainError::Config(format!("{} has no checkpoints", dir.display())));
                }
                let agents = ckpts.iter().map(|p| load_agent(p)).collect::<Result<Vec<_>, _>>()?;
                let nets: Vec<_> = agents.iter().map(|a| &a.online).collect();
                let pack = LevelPack::load(levels.as_deref().unwrap_or(&config.train_levels))?;
                let matrix = checkpoint_action_matrix(&nets, &pack, &config.pipeline)?;
                text.push_str("step");
                for a in 0..matrix[0].len() {
                    text.push_str(&format!(",a{}", a));
                }
                text.push('\n');
                for (agent, row) in agents.iter().zip(&matrix) {
                    text.push_str(&agent.step.to_string());
                    for n in row {
                        text.push_str(&format!(",{}", n));
                    }
                    text.push('\n');
                }
            } else {
                return Err(TrainError::Config("pass --dataset or --run-dir".into()));
            }
            match out {
                Some(path) => fs::write(path, text)?,
                None => print!("{}", text),
            }
        }
        Command::PlayOracle { level, id, refine } => {
            let level = load_level(&level, id.as_deref())?;
            let physics = Physics::default().refined(refine);
            let scores = first_shot_scores(&level, &physics)?;
            println!("angle,score_delta");
            for (a, s) in scores.iter().enumerate() {
                println!("{},{}", a, s);
            }
            let (shots, total, won) = greedy_sequence(&level, &physics)?;
            let angles: Vec<String> = shots.iter().map(|a| a.angle().to_string()).collect();
            println!("# greedy sequence [{}] total {} won {}", angles.join(" "), total, won);
        }
        Command::Tabular {
            gamma,
            max_updates,
            seed,
            single_q,
        } => {
            let mut cfg = TabularConfig::default();
            cfg.agent.gamma = gamma;
            cfg.agent.double_q = !single_q;
            cfg.max_updates = max_updates;
            cfg.seed = seed;
            let report = run_tabular(&TabularMdp::embedded(), &cfg)?;
            println!("state,action,q,q_star");
            for s in 0..report.q.num_states() {
                for a in 0..QFunction::num_actions(&report.q) {
                    println!("{},{},{:.6},{:.6}", s, a, report.q.get(s, a), report.q_star.get(s, a));
                }
            }
            match report.converged_at {
                Some(n) => println!("# converged after {} updates", n),
                None => println!("# not converged; max error {:.3e} after {} updates", report.max_error, report.updates),
            }
        }
        Command::GenerateLevels {
            out,
            count,
            seed,
            prefix,
            first_shot_wins,
            max_random_win,
            registry,
        } => {
            let mut cfg = GeneratorConfig {
                max_random_win,
                ..GeneratorConfig::default()
            };
            if let Some(w) = first_shot_wins {
                cfg.first_shot_wins = (w[0], w[1]);
            }
            let physics = Physics::default();
            let levels = generate_pack(&prefix, count, &cfg, &physics, &mut ChaCha8Rng::seed_from_u64(seed))?;
            fs::create_dir_all(&out)?;
            for l in &levels {
                fs::write(out.join(format!("{}.lvl", l.id)), l.to_text())?;
                info!("{}: random win probability {:.3}", l.id, random_win_probability(l, &physics)?);
            }
            if let Some(path) = registry {
                let mut reg = if path.exists() {
                    slingq::env::ScoreRegistry::load(&path)?
                } else {
                    Default::default()
                };
                for (id, max) in seed_registry(&levels, &physics)?.iter() {
                    reg.observe(id, max);
                }
                reg.save(&path)?;
            }
            println!("wrote {} levels to {}", levels.len(), out.display());
        }
    }
    Ok(())
}

fn load_level(path: &Path, id: Option<&str>) -> Result<Level, TrainError> {
    if path.is_dir() {
        let pack = LevelPack::load(path)?;
        let id = id.ok_or_else(|| TrainError::Config("--id is required with a level pack".into()))?;
        pack.get(id)
            .cloned()
            .ok_or_else(|| TrainError::Config(format!("no level `{}` in {}", id, path.display())))
    } else {
        Ok(Level::load(path)?)
    }
}
