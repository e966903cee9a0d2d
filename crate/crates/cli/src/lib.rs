//! Batch front end for the ladder state-transfer experiments.

pub mod config;
pub mod experiments;
pub mod output;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use config::{Experiment, Format};
use output::Metadata;

/// Command line of `qst`.
#[derive(Parser, Debug)]
#[command(name = "qst", version, about = "Quantum state transfer on strongly rung-coupled spin ladders")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: GlobalArgs,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Seed for Haar sampling; required by stochastic experiments unless `haar.seed` is set.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override a config key, e.g. `--set lattice.N=10` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output file (overrides `output.path`); `-` for standard output.
    #[arg(short, long, global = true)]
    output: Option<PathBuf>,
    /// Output format (overrides `output.format`).
    #[arg(long, value_enum, global = true)]
    format: Option<Format>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the experiment named by the config's `experiment` key.
    Run(ConfigArg),
    /// Rung-to-rung fidelity f(t) on the full lattice.
    RrTransfer(ConfigArg),
    /// Fidelity on the effective XXZ chain.
    EffectiveTransfer(ConfigArg),
    /// Encode, transfer and decode a single qubit.
    SingleQubit(ConfigArg),
    /// Single qubit without encoding or decoding.
    BareBaseline(ConfigArg),
    /// Haar-averaged fidelity and its maximum.
    HaarAverage(ConfigArg),
    /// max_t |f - f_eff| per distance.
    Epsilon(ConfigArg),
    /// Maximal fidelities against distance.
    SweepR(ConfigArg),
    /// Maximal fidelity optimized over the coupling box.
    Optimize(ConfigArg),
    /// Entanglement of the rung ground-pair superpositions.
    GgmCurve(ConfigArg),
    /// High-energy overlap and pipeline discrepancy over a 2D slice.
    HighEnergyScan(ConfigArg),
    /// Closed-form effective couplings against the projection oracle.
    ValidateCouplings(ConfigArg),
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// TOML config, or a JSON result whose `config` echo is re-run.
    config: PathBuf,
}

impl Command {
    fn split(&self) -> (Option<Experiment>, &PathBuf) {
        use Command::*;
        match self {
            Run(a) => (None, &a.config),
            RrTransfer(a) => (Some(Experiment::RrTransfer), &a.config),
            EffectiveTransfer(a) => (Some(Experiment::EffectiveTransfer), &a.config),
            SingleQubit(a) => (Some(Experiment::SingleQubit), &a.config),
            BareBaseline(a) => (Some(Experiment::BareBaseline), &a.config),
            HaarAverage(a) => (Some(Experiment::HaarAverage), &a.config),
            Epsilon(a) => (Some(Experiment::Epsilon), &a.config),
            SweepR(a) => (Some(Experiment::SweepR), &a.config),
            Optimize(a) => (Some(Experiment::Optimize), &a.config),
            GgmCurve(a) => (Some(Experiment::GgmCurve), &a.config),
            HighEnergyScan(a) => (Some(Experiment::HighEnergyScan), &a.config),
            ValidateCouplings(a) => (Some(Experiment::ValidateCouplings), &a.config),
        }
    }
}

/// Runs one command; `Ok(Some(_))` reports a completed run whose built-in check failed.
pub fn execute(cli: Cli) -> anyhow::Result<Option<String>> {
    let start = Instant::now();
    if let Some(n) = cli.global.threads {
        anyhow::ensure!(n > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let (forced, path) = cli.command.split();
    let mut tree = config::read_tree(path)?;
    config::fill_default_input(&mut tree)?;
    for o in &cli.global.overrides {
        config::apply_override(&mut tree, o)?;
    }
    if let Some(seed) = cli.global.seed {
        config::apply_override(&mut tree, &format!("haar.seed={seed}"))?;
        // A seed alone does not make a Haar section; drop it again if `n` is missing.
        if tree["haar"].get("n").is_none() {
            tree["haar"].as_object_mut().expect("table").remove("seed");
            if tree["haar"].as_object().is_some_and(|t| t.is_empty()) {
                tree.as_object_mut().expect("table").remove("haar");
            }
        }
    }
    if let Some(p) = &cli.global.output {
        tree["output"]["path"] = serde_json::Value::String(p.display().to_string());
    }
    if let Some(f) = cli.global.format {
        tree["output"]["format"] = serde_json::to_value(f)?;
    }
    let mut config = config::parse(tree)?;
    let experiment = match (forced, config.experiment) {
        (Some(e), _) | (None, Some(e)) => e,
        (None, None) => anyhow::bail!("config has no `experiment` key; name one or use a subcommand"),
    };
    config.experiment = Some(experiment);
    log::info!("running {}", experiment.name());

    let outcome = experiments::run(experiment, &config)?;
    let meta = Metadata {
        experiment: experiment.name(),
        seed: outcome.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        extra: outcome.extra,
    };
    match config.output.path.as_ref().filter(|p| p.as_os_str() != "-") {
        Some(p) => {
            let file = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            let mut w = BufWriter::new(file);
            output::write_result(&mut w, &config, &outcome.table, &meta)?;
            w.flush()?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = BufWriter::new(stdout.lock());
            output::write_result(&mut w, &config, &outcome.table, &meta)?;
            w.flush()?;
        }
    }
    Ok(outcome.failure)
}

/// Parses `args` (program name first), runs, and maps the outcome to an exit code.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(failure)) => {
            eprintln!("check failed: {failure}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
