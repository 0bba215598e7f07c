use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cvpo::harness::{emit_plotdata, evaluate_policy, load_checkpoint, run_training, Algo, EnvName, TrainConfig};
use cvpo::Error;

#[derive(Parser)]
#[command(name = "cvpo", version, about = "Constrained variational policy optimization lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train an agent and write metrics.csv plus a checkpoint into --out.
    Train {
        #[arg(long)]
        env: Option<EnvName>,
        #[arg(long)]
        algo: Option<Algo>,
        /// Flat `key = value` config file; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Extra `key=value` overrides, applied last.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint directory and print a JSON summary.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Act with the policy mode instead of sampling.
        #[arg(long)]
        deterministic: bool,
    },
    /// Reshape metrics CSVs matched by a glob into plot-ready tables.
    Plotdata {
        #[arg(long = "in")]
        input: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 2,
        Error::Numerical(_) | Error::Infeasible(_) => 3,
        _ => 1,
    }
}

fn train(
    env: Option<EnvName>,
    algo: Option<Algo>,
    config: Option<PathBuf>,
    seed: Option<u64>,
    epochs: Option<usize>,
    set: Vec<String>,
    out: PathBuf,
) -> cvpo::Result<()> {
    let mut cfg = match config {
        Some(p) => TrainConfig::from_file(&p)?,
        None => TrainConfig::default(),
    };
    if let Some(e) = env {
        cfg.env = e;
    }
    if let Some(a) = algo {
        cfg.algo = a;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = epochs {
        cfg.epochs = n;
    }
    for kv in &set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    cfg.validate()?;
    let path = run_training(&cfg, &out)?;
    println!("{}", path.display());
    Ok(())
}

fn run(cli: Cli) -> cvpo::Result<()> {
    match cli.cmd {
        Cmd::Train {
            env,
            algo,
            config,
            seed,
            epochs,
            set,
            out,
        } => train(env, algo, config, seed, epochs, set, out),
        Cmd::Eval {
            ckpt,
            episodes,
            seed,
            deterministic,
        } => {
            let (cfg, policy) = load_checkpoint(&ckpt)?;
            let mut env = cfg.build_env()?;
            let s = evaluate_policy(&policy, &mut env, episodes, seed, deterministic)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
            Ok(())
        }
        Cmd::Plotdata { input, out } => {
            let paths: Vec<PathBuf> = glob::glob(&input)
                .map_err(|e| Error::Config(format!("bad glob '{input}': {e}")))?
                .filter_map(|p| p.ok())
                .collect();
            if paths.is_empty() {
                return Err(Error::Config(format!("no files match '{input}'")));
            }
            let f = emit_plotdata(&paths, &out)?;
            for p in [f.long, f.aggregate, f.reward_vs_cost, f.convergence] {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
