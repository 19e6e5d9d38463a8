use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use perclr::estimators::PairPolicy;
use perclr::experiments::{
    run, write_run, ExperimentConfig, ExperimentKind, RunOutput, SamplerKind,
};
use perclr::{ConfigIssue, Error};

const EXIT_VALIDATION: u8 = 1;
const EXIT_INVARIANT: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// Experiment configuration (JSON); flags override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    #[arg(long, global = true)]
    eps: Option<f64>,
    #[arg(long, global = true, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    replicas: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; falls back to PERCLR_WORKERS, then the number of CPUs.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample configurations and write them as JSON lines.
    Sample {
        #[arg(long, value_enum)]
        sampler: Option<Sampler>,
    },
    /// Estimate Λ(n, β) for every size and β.
    Estimate {
        #[arg(long, value_enum)]
        pair: Option<Pair>,
        #[arg(long, value_enum)]
        sampler: Option<Sampler>,
    },
    /// Harris-coupled β sweep with pathwise monotonicity checks.
    Sweep,
    /// Telescoping decomposition over length scales.
    Continuity {
        #[arg(long, value_delimiter = ',')]
        eps_grid: Option<Vec<f64>>,
    },
    /// Check Russo's formula on random finite models.
    RussoVerify {
        #[arg(long, value_enum, default_value = "default")]
        suite: Suite,
    },
    /// Cut-point means against their exact values.
    Cutpoints,
    /// Block-kernel identity and block-connection frequencies.
    SelfSim,
    /// Distance exponent ladders.
    Theta {
        /// Run the small-β recipe: (1 − θ)/β and the exact derivative column.
        #[arg(long)]
        small_beta: bool,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Sampler {
    Fast,
    Direct,
    Continuum,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Pair {
    Corner,
    FullMax,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Suite {
    Default,
}

#[derive(Parser, Debug)]
#[command(name = "perclr", version, about = "Long-range percolation laboratory")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

impl Command {
    fn kind(&self) -> ExperimentKind {
        match self {
            Command::Sample { .. } => ExperimentKind::Sample,
            Command::Estimate { .. } => ExperimentKind::Estimate,
            Command::Sweep => ExperimentKind::MonotoneSweep,
            Command::Continuity { .. } => ExperimentKind::Continuity,
            Command::RussoVerify { .. } => ExperimentKind::RussoVerify,
            Command::Cutpoints => ExperimentKind::Cutpoints,
            Command::SelfSim => ExperimentKind::SelfSimilarity,
            Command::Theta { small_beta: false } => ExperimentKind::ThetaCurve,
            Command::Theta { small_beta: true } => ExperimentKind::SmallBetaSlope,
        }
    }
}

fn sampler_kind(s: Sampler) -> SamplerKind {
    match s {
        Sampler::Fast => SamplerKind::Fast,
        Sampler::Direct => SamplerKind::Direct,
        Sampler::Continuum => SamplerKind::Continuum,
    }
}

fn build_config(common: &Common, command: &Command) -> Result<ExperimentConfig, Error> {
    let kind = command.kind();
    let mut config = match &common.config {
        Some(path) => {
            let c = ExperimentConfig::load(path)?;
            if c.experiment != kind {
                return Err(Error::Validation(vec![ConfigIssue {
                    path: "experiment".into(),
                    message: format!(
                        "config describes `{}` but the subcommand runs `{}`",
                        c.experiment.name(),
                        kind.name()
                    ),
                }]));
            }
            c
        }
        None => ExperimentConfig::defaults(kind),
    };
    if let Some(b) = common.beta {
        config.betas = vec![b];
    }
    if let Some(bs) = &common.betas {
        config.betas = bs.clone();
    }
    if let Some(e) = common.eps {
        config.eps = Some(e);
        config.eps_grid.clear();
    }
    if let Some(s) = &common.sizes {
        config.sizes = s.clone();
    }
    if let Some(d) = common.dim {
        config.dim = d;
    }
    if let Some(r) = common.replicas {
        config.replicas = r;
    }
    if let Some(s) = common.seed {
        config.seed = Some(s);
    }
    if let Some(o) = &common.out {
        config.output_path = o.clone();
    }
    match command {
        Command::Sample { sampler } => {
            if let Some(s) = sampler {
                config.sampler = Some(sampler_kind(*s));
            }
        }
        Command::Estimate { pair, sampler } => {
            if let Some(p) = pair {
                config.pair_policy = Some(match p {
                    Pair::Corner => PairPolicy::Corner,
                    Pair::FullMax => PairPolicy::FullMax,
                });
            }
            if let Some(s) = sampler {
                config.sampler = Some(sampler_kind(*s));
            }
        }
        Command::Continuity { eps_grid: Some(grid) } => config.eps_grid = grid.clone(),
        _ => {}
    }
    Ok(config)
}

fn worker_count(flag: Option<usize>) -> Result<usize, Error> {
    let invalid = |m: String| {
        Error::Validation(vec![ConfigIssue {
            path: "workers".into(),
            message: m,
        }])
    };
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("PERCLR_WORKERS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| invalid(format!("PERCLR_WORKERS must be a positive integer, got `{v}`")))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        return Err(invalid("worker count must be positive".into()));
    }
    Ok(n)
}

fn summarise(config: &ExperimentConfig, out: &RunOutput) {
    let dir = config.output_path.display();
    for t in &out.tables {
        println!("wrote {dir}/{}", t.name);
    }
    println!("wrote {dir}/report.json");
    println!("wrote {dir}/manifest.json");
    if config.experiment == ExperimentKind::RussoVerify {
        let all = out.report["all_pass"].as_bool().unwrap_or(false);
        let n = out.report["reports"].as_array().map_or(0, |r| r.len());
        println!("russo checks: {n}, all pass: {all}");
    }
}

fn execute(common: &Common, command: &Command) -> Result<(), Error> {
    let config = build_config(common, command)?;
    let workers = worker_count(common.workers)?;
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidInput(e.to_string()))?;
    let started = SystemTime::now();
    let clock = Instant::now();
    let output = pool.install(|| run(&config))?;
    write_run(
        &config.output_path,
        &config,
        &output,
        workers,
        started,
        clock.elapsed().as_secs_f64(),
    )?;
    summarise(&config, &output);
    Ok(())
}

fn report_error(e: &Error) -> u8 {
    match e {
        Error::Validation(issues) => {
            eprintln!("error: invalid configuration");
            for i in issues {
                eprintln!("  at `{}`: {}", i.path, i.message);
            }
            EXIT_VALIDATION
        }
        Error::InvariantViolation(_) => {
            eprintln!("error: {e}");
            EXIT_INVARIANT
        }
        _ => {
            eprintln!("error: {e}");
            EXIT_VALIDATION
        }
    }
}

fn main() -> ExitCode {
    let parsed = Cli::try_parse();
    let cli = match parsed {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                ErrorKind::InvalidSubcommand
                | ErrorKind::MissingSubcommand
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => EXIT_USAGE,
                _ => EXIT_VALIDATION,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli.common, &cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => ExitCode::from(report_error(&e)),
    }
}
