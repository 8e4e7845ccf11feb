use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spiketrack_core::io::{self, Timings};
use spiketrack_core::{run_experiment, Error, ExperimentConfig, Method};

/// Simulate, track and compare neural modulation-state trackers.
///
/// Every flag can also be set through a `SPIKETRACK_*` environment variable
/// (shown next to each flag); flags win over the environment, and both win
/// over the config file.
#[derive(Debug, Parser)]
#[command(name = "spiketrack", version)]
struct Cli {
    /// Log filter (error, warn, info, debug, trace).
    #[arg(long, global = true, env = "SPIKETRACK_LOG", default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic MC→BC dataset.
    Simulate(RunArgs),
    /// Run the selected method(s) and write estimates, metrics and a record.
    Track(TrackArgs),
    /// Tabulate records from several runs.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Experiment config (TOML or JSON); defaults apply when omitted.
    #[arg(long, env = "SPIKETRACK_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, env = "SPIKETRACK_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "SPIKETRACK_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrackArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, env = "SPIKETRACK_METHOD", value_enum)]
    method: Option<MethodArg>,
    /// Dataset directory written by `simulate`; without it the scenario is
    /// simulated in memory.
    #[arg(long, env = "SPIKETRACK_DATASET")]
    dataset: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Record files or run directories.
    #[arg(required = true)]
    records: Vec<PathBuf>,
    /// Also write `report.csv` here.
    #[arg(long, env = "SPIKETRACK_OUT")]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Gapp,
    Dsmcpp,
    Both,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Gapp => Method::Gapp,
            MethodArg::Dsmcpp => Method::Dsmcpp,
            MethodArg::Both => Method::Both,
        }
    }
}

const DEFAULT_OUT: &str = "spiketrack-out";

fn load_config(args: &RunArgs) -> spiketrack_core::Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => io::read_config(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn simulate(args: &RunArgs) -> spiketrack_core::Result<()> {
    let cfg = load_config(args)?;
    let data = spiketrack_core::make_mc_bc_scenario(&cfg.scenario, cfg.seed)?;
    let dir = out_dir(&cfg);
    io::write_dataset(&dir, &data)?;
    println!(
        "{} neurons, {} bins, switch at bin {} -> {}",
        data.n_neurons(),
        data.n_bins(),
        data.switch_bin,
        dir.display()
    );
    Ok(())
}

fn track(args: &TrackArgs) -> spiketrack_core::Result<()> {
    let mut cfg = load_config(&args.run)?;
    if let Some(m) = args.method {
        cfg.method = m.into();
    }
    if let Some(d) = &args.dataset {
        cfg.dataset = Some(d.clone());
    }
    cfg.validate()?;
    let dir = out_dir(&cfg);

    let t = Instant::now();
    let data = io::load_dataset(&cfg)?;
    let dataset_s = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let exp = run_experiment(data, &cfg)?;
    let run_s = t.elapsed().as_secs_f64();
    let record = io::write_experiment(&dir, &exp, Timings { dataset_s, run_s, write_s: 0.0 })?;

    for m in &record.metrics.methods {
        println!(
            "{:?}: post-switch NMSE {:.4} (px {:.4}, py {:.4}), convergence {:?}",
            m.method, m.nmse_post.combined, m.nmse_post.px, m.nmse_post.py, m.convergence
        );
    }
    println!("wrote {} ({:.1} s)", dir.display(), run_s);
    Ok(())
}

fn label(path: &Path) -> String {
    let p = if path.is_dir() { path } else { path.parent().unwrap_or(path) };
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn report(args: &ReportArgs) -> spiketrack_core::Result<()> {
    let records = args
        .records
        .iter()
        .map(|p| Ok((label(p), io::read_record(p)?)))
        .collect::<spiketrack_core::Result<Vec<_>>>()?;
    let rep = io::build_report(&records)?;
    for w in &rep.warnings {
        log::warn!("{w}");
        eprintln!("warning: {w}");
    }
    print!("{}", rep.render_text());
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.clone(), source: e })?;
        let path = dir.join("report.csv");
        std::fs::write(&path, rep.to_csv()?).map_err(|e| Error::Io { path, source: e })?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log).init();
    let result = match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Track(a) => track(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // Unreadable config files count as config errors too.
            let config = e.is_config_error() || matches!(&e, Error::Io { path, .. } if Some(path) == config_path(&cli).as_ref());
            ExitCode::from(if config { 2 } else { 3 })
        }
    }
}

fn config_path(cli: &Cli) -> Option<PathBuf> {
    match &cli.command {
        Command::Simulate(a) => a.config.clone(),
        Command::Track(a) => a.run.config.clone(),
        Command::Report(_) => None,
    }
}
