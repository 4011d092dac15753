use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pac_algo::selfcheck::run_suite;
use pac_algo::Algo;
use pac_trainer::{
    evaluate, load_learner, matrix_game_report, train_to_dir, EnvConfig, TrainConfig, TrainError, Variant,
};

#[derive(Parser)]
#[command(name = "pac", version, about = "Train and inspect cooperative multi-agent learners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a learner and write metrics.csv, final.ckpt and config.resolved.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Write the matrix-game value report of a checkpoint.
    Report(ReportArgs),
    /// Finite-difference gradient checks over every network and loss.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// TOML config; flags take precedence over its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_algo)]
    algo: Option<Algo>,
    #[arg(long, value_parser = parse_env)]
    env: Option<String>,
    /// Ablation variant of PAC.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Falls back to PAC_SEED, then to the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Rollout threads; 0 collects on the training thread.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// `key.path=value` override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    /// Run config; defaults to config.resolved next to the checkpoint.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_env)]
    env: Option<String>,
    #[arg(long, default_value_t = 32)]
    episodes: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Defaults to report.txt next to the checkpoint.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, hide = true)]
    negative_control: bool,
}

fn parse_algo(s: &str) -> Result<Algo, String> {
    Algo::parse(s).ok_or_else(|| {
        let names: Vec<_> = Algo::ALL.iter().map(|a| a.name()).collect();
        format!("unknown algo `{s}`; valid: {}", names.join(", "))
    })
}

fn parse_env(s: &str) -> Result<String, String> {
    match EnvConfig::preset(s) {
        Some(_) => Ok(s.to_string()),
        None => Err(format!("unknown env `{s}`; valid: {}", EnvConfig::PRESETS.join(", "))),
    }
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).ok_or_else(|| {
        let names: Vec<_> = Variant::ALL.iter().map(|v| v.name()).collect();
        format!("unknown variant `{s}`; valid: {}", names.join(", "))
    })
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        if e.is_config() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn run_config(ckpt: &Path, explicit: Option<&Path>) -> Result<TrainConfig, Failure> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => ckpt.parent().unwrap_or(Path::new(".")).join("config.resolved"),
    };
    Ok(TrainConfig::from_toml(&read(&path)?)?)
}

fn cmd_train(a: TrainArgs) -> Result<(), Failure> {
    let document = a.config.as_deref().map(read).transpose()?;
    let mut overrides = Vec::new();
    if let Some(algo) = a.algo {
        overrides.push(format!("learner.algo=\"{}\"", algo.name()));
    }
    let seed = match a.seed {
        Some(s) => Some(s),
        None => match std::env::var("PAC_SEED") {
            Ok(v) => Some(
                v.parse()
                    .map_err(|_| Failure::Usage(format!("PAC_SEED `{v}` is not an integer")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(s) = seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(w) = a.workers {
        overrides.push(format!("workers={w}"));
    }
    overrides.extend(a.overrides);
    let mut cfg = TrainConfig::resolve(document.as_deref(), a.env.as_deref(), &overrides)?;
    if let Some(v) = a.variant {
        if cfg.learner.algo != Algo::Pac {
            return Err(Failure::Usage("--variant applies to pac only".into()));
        }
        v.apply(&mut cfg.learner);
        cfg.validate()?;
    }
    let outcome = train_to_dir(&cfg, &a.out)?;
    if let Some(last) = outcome.rows.last() {
        let mean = last.test_return_mean.map(|m| m.to_string()).unwrap_or_default();
        println!("env_steps = {}", outcome.env_steps);
        println!("episodes = {}", outcome.episodes);
        println!("test_return_mean = {mean}");
    }
    println!("out = {}", a.out.display());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), Failure> {
    let mut cfg = run_config(&a.ckpt, a.config.as_deref())?;
    if let Some(name) = &a.env {
        cfg.env = EnvConfig::preset(name).expect("validated preset");
    }
    let spec = cfg.env.spec()?;
    let learner = load_learner(&a.ckpt, cfg.learner.clone(), &spec).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut env = cfg.env.build()?;
    let seed = a.seed.unwrap_or_else(|| pac_trainer::train::eval_seed(cfg.seed));
    let s = evaluate(env.as_mut(), &learner.model, &learner.params, a.episodes, seed)?;
    println!("episodes = {}", s.episodes);
    let fields = [
        ("return_mean", s.return_mean),
        ("return_std", s.return_std),
        ("win_rate", s.win_rate),
        ("captures_mean", s.captures_mean),
    ];
    for (k, v) in fields {
        if let Some(v) = v {
            println!("{k} = {v}");
        }
    }
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), Failure> {
    let cfg = run_config(&a.ckpt, a.config.as_deref())?;
    let EnvConfig::MatrixGame(game) = &cfg.env else {
        return Err(Failure::Usage(format!(
            "report needs a matrix_game checkpoint, this run used {}",
            cfg.env.name()
        )));
    };
    let spec = cfg.env.spec()?;
    let learner = load_learner(&a.ckpt, cfg.learner.clone(), &spec).map_err(|e| Failure::Runtime(e.to_string()))?;
    let report = matrix_game_report(&learner, game)?;
    let out = a
        .out
        .unwrap_or_else(|| a.ckpt.parent().unwrap_or(Path::new(".")).join("report.txt"));
    fs::write(&out, report.render()).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    println!("{}", out.display());
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), Failure> {
    let lines = run_suite(a.negative_control).map_err(|e| Failure::Runtime(e.to_string()))?;
    let mut ok = true;
    for l in &lines {
        let verdict = if l.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<24} max_rel_err {:.3e}  coords {:>4}  {verdict}",
            l.name, l.max_relative_error, l.coordinates
        );
        ok &= l.passed();
    }
    if ok {
        Ok(())
    } else {
        Err(Failure::Runtime("gradient check tolerance exceeded".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
