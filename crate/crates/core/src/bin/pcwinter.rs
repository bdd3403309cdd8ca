use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand};
use pcwinter::cli::{
    cmd_aggregate, cmd_check, cmd_eval, cmd_ingest_linqs, cmd_resume, cmd_value, exit_code,
    Completion, Experiment, RunConfig, EXIT_FAILURE, EXIT_OK, OUTPUT_ROOT_ENV,
};
use pcwinter::graph::RandomSplit;
use pcwinter::Error;

#[derive(Parser)]
#[command(
    name = "pcwinter",
    version,
    about = "Graph data valuation with PC-Winter values"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert LINQS citation files, or check an existing dataset directory.
    Ingest(IngestArgs),
    /// Compute data values with one method.
    Value(ConfigArgs),
    /// Rebuild node and edge tables from the player rows of values.csv.
    Aggregate {
        #[arg(long)]
        values: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Node-dropping or edge-adding accuracy curve for value files.
    Eval(EvalArgs),
    /// Continue an interrupted valuation run from its checkpoint.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        max_perms: Option<String>,
        #[arg(long)]
        max_seconds: Option<String>,
    },
}

#[derive(Args)]
struct IngestArgs {
    /// Dataset directory to validate instead of converting.
    #[arg(long, conflicts_with_all = ["content", "cites"])]
    check: Option<PathBuf>,
    #[arg(long, requires = "cites")]
    content: Option<PathBuf>,
    #[arg(long, requires = "content")]
    cites: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    train_per_class: usize,
    #[arg(long, default_value_t = 500)]
    num_val: usize,
    #[arg(long, default_value_t = 1000)]
    num_test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Skip L1 row normalization when checking.
    #[arg(long)]
    raw_features: bool,
}

/// Run settings; each flag overrides the same key in `--config`.
#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// pc-winter | pc-winter-l | pc-winter-p | data-shapley | loo-node |
    /// loo-edge | degree | random | betweenness
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    k: Option<String>,
    /// Per-level truncation ratios, e.g. `0.5,0.7`, or `none`.
    #[arg(long)]
    trunc: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    max_perms: Option<String>,
    #[arg(long)]
    max_seconds: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    conv_window: Option<String>,
    #[arg(long)]
    conv_tol: Option<String>,
    /// Keep going after convergence until a budget runs out.
    #[arg(long)]
    no_convergence_stop: bool,
    #[arg(long)]
    tmc_tolerance: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// Any other `key=value` setting.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Value files; several are averaged.
    #[arg(long, required = true, num_args = 1..)]
    values: Vec<PathBuf>,
    #[arg(long)]
    experiment: String,
    /// unlabeled | labeled | mixed
    #[arg(long)]
    filter: Option<String>,
    #[arg(long)]
    step: Option<String>,
    /// Method name recorded in the manifest.
    #[arg(long)]
    label: Option<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>, Error> {
        let mut out = Vec::new();
        let flags = [
            ("dataset", &self.dataset),
            ("method", &self.method),
            ("k", &self.k),
            ("trunc", &self.trunc),
            ("seed", &self.seed),
            ("max_perms", &self.max_perms),
            ("max_seconds", &self.max_seconds),
            ("lr", &self.lr),
            ("epochs", &self.epochs),
            ("weight_decay", &self.weight_decay),
            ("conv_window", &self.conv_window),
            ("conv_tol", &self.conv_tol),
            ("tmc_tolerance", &self.tmc_tolerance),
            ("out", &self.out),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                out.push((k.to_string(), v.clone()));
            }
        }
        if self.no_convergence_stop {
            out.push(("stop_on_convergence".into(), "false".into()));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            out.push((k.to_string(), v.to_string()));
        }
        Ok(out)
    }

    fn resolve(&self, extra: Vec<(String, String)>) -> Result<RunConfig, Error> {
        let mut overrides = self.overrides()?;
        overrides.extend(extra);
        let mut cfg = RunConfig::resolve(self.config.as_deref(), &overrides)?;
        if let Some(d) = &cfg.dataset {
            if let Ok(abs) = std::fs::canonicalize(d) {
                cfg.dataset = Some(abs);
            }
        }
        Ok(cfg)
    }
}

fn emit(text: &str) -> Result<(), Error> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io {
            path: "<stdout>".into(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn fail(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(exit_code(e) as u8)
}

fn run(cli: Cli) -> Result<i32, Error> {
    match cli.command {
        Command::Ingest(a) => {
            let text = if let Some(dir) = &a.check {
                cmd_check(dir, !a.raw_features)?
            } else {
                let (Some(content), Some(cites), Some(out)) = (&a.content, &a.cites, &a.out) else {
                    return Err(Error::Config(
                        "ingest needs --check DIR or --content, --cites and --out".into(),
                    ));
                };
                let split = RandomSplit {
                    train_per_class: a.train_per_class,
                    num_val: a.num_val,
                    num_test: a.num_test,
                    seed: a.seed,
                };
                cmd_ingest_linqs(content, cites, out, &split)?
            };
            emit(&text)?;
            Ok(EXIT_OK)
        }
        Command::Value(a) => {
            let cfg = a.resolve(Vec::new())?;
            let s = cmd_value(&cfg)?;
            emit(&s.report.to_string())?;
            emit(&format!("output={}\n", s.out_dir.display()))?;
            if s.completion == Completion::BudgetExhausted {
                eprintln!("budget exhausted before convergence; partial values written");
            }
            Ok(s.completion.exit_code())
        }
        Command::Aggregate { values, out } => {
            let dir = cmd_aggregate(&values, out.as_deref())?;
            emit(&format!("output={}\n", dir.display()))?;
            Ok(EXIT_OK)
        }
        Command::Eval(a) => {
            let mut extra = Vec::new();
            if let Some(f) = &a.filter {
                extra.push(("filter".to_string(), f.clone()));
            }
            if let Some(s) = &a.step {
                extra.push(("step".to_string(), s.clone()));
            }
            let cfg = a.config.resolve(extra)?;
            let experiment: Experiment = a.experiment.parse()?;
            let s = cmd_eval(&cfg, &a.values, experiment, a.label.as_deref())?;
            emit("fraction,accuracy_mean,accuracy_std\n")?;
            for p in &s.curve.points {
                emit(&format!(
                    "{},{},{}\n",
                    p.fraction, p.accuracy_mean, p.accuracy_std
                ))?;
            }
            emit(&format!("output={}\n", s.out_dir.display()))?;
            Ok(EXIT_OK)
        }
        Command::Resume {
            checkpoint,
            max_perms,
            max_seconds,
        } => {
            let mut overrides = Vec::new();
            if let Some(v) = max_perms {
                overrides.push(("max_perms".to_string(), v));
            }
            if let Some(v) = max_seconds {
                overrides.push(("max_seconds".to_string(), v));
            }
            let s = cmd_resume(&checkpoint, &overrides)?;
            if s.completion == Completion::NothingToDo {
                emit("run already complete\n")?;
            } else {
                emit(&s.report.to_string())?;
            }
            emit(&format!("output={}\n", s.out_dir.display()))?;
            Ok(s.completion.exit_code())
        }
    }
}

fn init_threads(threads: Option<usize>) -> anyhow::Result<()> {
    if let Some(n) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = init_threads(cli.threads) {
        eprintln!("error: {e:#}");
        return ExitCode::from(EXIT_FAILURE as u8);
    }
    log::debug!(
        "output root: {}",
        std::env::var(OUTPUT_ROOT_ENV).unwrap_or_else(|_| "runs".into())
    );
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => fail(&e),
    }
}
