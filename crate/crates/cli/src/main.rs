use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use decaylab::harness::{run_experiment, ExperimentConfig, ExperimentKind, ReportBundle, ReportFormats};

#[derive(Parser)]
#[command(
    name = "decaylab",
    version,
    about = "Decay experiments for controlled Navier-Stokes flows"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build control profiles and check their moment certificates.
    Profiles(Common),
    /// Build the Oseen kernel profile and check its L1 law and tail.
    Kernels(Common),
    /// Heat-semigroup decay of a datum with vanishing moments.
    Lemma1(Common),
    /// Spatial tails of the controlled bilinear term.
    Lemma2(Common),
    /// Controlled and baseline Picard runs with decay fits.
    Simulate(Common),
    /// Re-emit tables and plots from a previous run.
    Report {
        #[command(flatten)]
        common: Common,
        /// Directory holding the earlier results.json.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; defaults are used when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory (overrides the file and the environment).
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Worker threads (0 lets the runtime decide).
    #[arg(short = 'j', long, default_value_t = 0)]
    threads: usize,
    /// Skip SVG plot emission.
    #[arg(long)]
    no_plots: bool,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    dump_config: bool,
}

fn load(kind: ExperimentKind, common: &Common) -> decaylab::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => {
            let mut c = ExperimentConfig::new(kind);
            c.apply_env_override(std::env::var_os(decaylab::harness::OUTPUT_DIR_ENV).map(PathBuf::from));
            c
        }
    };
    if cfg.kind != kind {
        log::warn!("config file is for `{}`, running `{}`", cfg.kind.name(), kind.name());
        cfg.kind = kind;
    }
    if let Some(out) = &common.output {
        cfg.output_dir = out.clone();
    }
    if common.no_plots {
        cfg.plots = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn summarise(bundle: &ReportBundle, dir: &std::path::Path) {
    for e in &bundle.exponents {
        println!(
            "{:<40} slope {:>9.4}  target {:>7.3}  window [{}, {}]  {}",
            e.name,
            e.slope,
            e.target,
            e.window.0,
            e.window.1,
            if e.pass { "pass" } else { "FAIL" }
        );
    }
    for c in &bundle.checks {
        println!(
            "{:<40} value {:>10.3e}  target {:>9.3e}  {}",
            c.name,
            c.value,
            c.target,
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    for n in &bundle.notes {
        println!("note: {n}");
    }
    println!("reports written to {}", dir.display());
}

fn run(cli: Cli) -> decaylab::Result<bool> {
    let (kind, common, input) = match &cli.command {
        Command::Profiles(c) => (ExperimentKind::Profiles, c, None),
        Command::Kernels(c) => (ExperimentKind::Kernels, c, None),
        Command::Lemma1(c) => (ExperimentKind::Lemma1, c, None),
        Command::Lemma2(c) => (ExperimentKind::Lemma2, c, None),
        Command::Simulate(c) => (ExperimentKind::Simulate, c, None),
        Command::Report { common, input } => (ExperimentKind::Report, common, input.clone()),
    };
    let mut cfg = load(kind, common)?;
    if let Some(dir) = input {
        cfg.report.input_dir = dir;
    }
    if common.dump_config {
        print!("{}", cfg.to_toml()?);
        return Ok(true);
    }
    if common.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(common.threads)
            .build_global()
        {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let formats = ReportFormats {
        plots: cfg.plots,
        ..ReportFormats::default()
    };
    let bundle = run_experiment(&cfg, formats)?;
    summarise(&bundle, &cfg.output_dir);
    let failures = bundle.failures();
    for f in &failures {
        eprintln!("tolerance failure: {f}");
    }
    Ok(failures.is_empty())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(e) => {
            eprintln!("error: {e}");
            if let decaylab::Error::NonContraction { .. } = e {
                eprintln!("hint: lower the amplitude or the horizon");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
