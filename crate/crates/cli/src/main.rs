use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcl_core::harness::{self, RunFile, SweepConfig};
use pcl_core::validation::{self, Profile};
use pcl_core::Error;

#[derive(Parser)]
#[command(name = "pcl", version, about = "Personalized collaborative learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run config (a single run or a plan with a `runs` array).
    Run(RunArgs),
    /// Execute a sweep config over a heterogeneity and agent-count grid.
    Sweep(RunArgs),
    /// Run the invariant suite and print pass/fail per property.
    Validate {
        /// Smaller sample sizes.
        #[arg(long)]
        quick: bool,
        /// Worker threads, 0 = one per core.
        #[arg(long, default_value_t = 0)]
        threads: usize,
    },
    /// Recompute summary.json from an existing metrics.csv.
    Report {
        #[arg(long = "in", value_name = "METRICS_CSV")]
        input: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Replace the configured seed list with this single seed.
    #[arg(long)]
    seed_override: Option<u64>,
    /// Worker threads, 0 = one per core.
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long)]
    record_every: Option<usize>,
}

impl RunArgs {
    fn apply(&self, cfg: &mut harness::RunConfig) {
        if let Some(s) = self.seed_override {
            cfg.seeds = vec![s];
        }
        if let Some(k) = self.record_every {
            cfg.record_every = k;
        }
    }
}

/// Failure classified by exit code.
enum Failure {
    Config(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config_error() {
            Failure::Config(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

type Outcome = std::result::Result<bool, Failure>;

/// Anything that goes wrong while reading the config file is a config error.
fn loading<T>(r: pcl_core::Result<T>) -> std::result::Result<T, Failure> {
    r.map_err(Failure::Config)
}

fn progress(line: &str) {
    println!("{line}");
}

fn run(args: &RunArgs) -> Outcome {
    let mut file = loading(RunFile::load(&args.config))?;
    for cfg in file.configs_mut() {
        args.apply(cfg);
    }
    file.validate()?;
    let config_value = |name: &Option<String>| -> serde_json::Value {
        match (&file, name) {
            (RunFile::Single(c), _) => serde_json::to_value(c),
            (RunFile::Plan(p), Some(n)) => {
                serde_json::to_value(p.runs.iter().find(|r| &r.name == n).expect("named run"))
            }
            (RunFile::Plan(p), None) => serde_json::to_value(p),
        }
        .expect("config serializes")
    };
    let groups = file.groups();
    let mut all_ok = true;
    harness::with_threads(args.threads, || -> pcl_core::Result<()> {
        for (name, plan) in &groups {
            let out = harness::execute(config_value(name), plan, true, &progress);
            let dir = match name {
                Some(n) => args.out_dir.join(n),
                None => args.out_dir.clone(),
            };
            harness::persist(&out.records, &out.summary, &dir)?;
            all_ok &= out.summary.runs.iter().all(|r| r.error.is_none());
            println!("wrote {}", dir.display());
        }
        Ok(())
    })??;
    Ok(all_ok)
}

fn sweep(args: &RunArgs) -> Outcome {
    let mut cfg: SweepConfig = loading(harness::load_sweep(&args.config))?;
    args.apply(&mut cfg.base);
    let out = harness::with_threads(args.threads, || harness::sweep(&cfg, &progress))??;
    harness::persist(&out.records, &out.summary, &args.out_dir)?;
    println!("wrote {}", args.out_dir.display());
    Ok(out.summary.runs.iter().all(|r| r.error.is_none()))
}

fn validate(quick: bool, threads: usize) -> Outcome {
    let profile = if quick { Profile::quick() } else { Profile::full() };
    let results = harness::with_threads(threads, || validation::run_suite(&profile))?;
    for r in &results {
        let status = if r.passed { "PASS" } else { "FAIL" };
        println!("{status} {}: {}", r.name, r.detail);
    }
    Ok(results.iter().all(|r| r.passed))
}

fn report(input: &Path) -> Outcome {
    let summary = loading(harness::report(input))?;
    let path = input.with_file_name(harness::SUMMARY_FILE);
    harness::atomic_write(&path, &harness::summary_bytes(&summary))?;
    println!("wrote {}", path.display());
    Ok(true)
}

fn exit_code(outcome: Outcome) -> ExitCode {
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => sweep(args),
        Command::Validate { quick, threads } => validate(*quick, *threads),
        Command::Report { input } => report(input),
    };
    exit_code(outcome)
}
