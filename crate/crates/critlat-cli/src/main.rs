use clap::{Args, Parser, Subcommand};
use critlat_cli::harness::{self, ExperimentConfig, HarnessError, Params};
use critlat_cli::plot::{emit_plot_data, PlotKind};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "critlat", about = "Lattice Monte Carlo laboratory", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample wired spanning forests and report component statistics.
    Wilson(RunArgs),
    /// Sample the discrete field and report pairing moments.
    Field(RunArgs),
    /// Escape-probability estimators over a shell grid.
    Lerw(RunArgs),
    /// Green function scan, optionally with the lambda constant.
    Green(RunArgs),
    /// Two-sided path sampler.
    Twosided(RunArgs),
    /// Exact small-graph laws.
    Oracle(RunArgs),
    /// Run the release criteria suite and emit the pass/fail table.
    Acceptance(RunArgs),
    /// Render an estimates CSV to SVG plus the plotted slice.
    Plot(PlotArgs),
}

/// Flags override the corresponding fields of `--config`.
#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long)]
    n: Option<i64>,
    /// Comma-separated shell indices, e.g. "2,3,4".
    #[arg(long)]
    n_grid: Option<String>,
    #[arg(long)]
    outer: Option<u64>,
    #[arg(long)]
    inner: Option<u64>,
    #[arg(long)]
    guard_delta: Option<i32>,
    /// "steps" or "shell".
    #[arg(long)]
    horizon: Option<String>,
    #[arg(long)]
    radius: Option<f64>,
    #[arg(long)]
    lambda_radius: Option<u32>,
    #[arg(long)]
    max_attempts: Option<u64>,
    /// Built-in graph name or edge-list path.
    #[arg(long)]
    graph: Option<String>,
    #[arg(long)]
    start: Option<u32>,
    #[arg(long)]
    d: Option<usize>,
}

#[derive(Args)]
struct PlotArgs {
    /// Estimates CSV to render.
    #[arg(long)]
    input: PathBuf,
    /// "pn-hat" or "series".
    #[arg(long, default_value = "series")]
    kind: String,
    /// Output directory for plot.svg and plot_slice.csv.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

fn build_config(name: &str, a: &RunArgs) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &a.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::new(name, 0, PathBuf::from(format!("out/{name}"))),
    };
    cfg.experiment = name.to_string();
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    if let Some(w) = a.workers {
        cfg.workers = Some(w);
    }
    let p: &mut Params = &mut cfg.params;
    if let Some(v) = a.samples {
        p.samples = Some(v);
    }
    if let Some(v) = a.n {
        p.n = Some(v);
    }
    if let Some(grid) = &a.n_grid {
        let parsed: Result<Vec<i64>, _> = grid.split(',').map(|t| t.trim().parse()).collect();
        p.n_grid = Some(parsed.map_err(|e| {
            HarnessError::InvalidParams(format!("n_grid {grid:?}: {e}"))
        })?);
    }
    if let Some(v) = a.outer {
        p.outer = Some(v);
    }
    if let Some(v) = a.inner {
        p.inner = Some(v);
    }
    if let Some(v) = a.guard_delta {
        p.guard_delta = Some(v);
    }
    if let Some(v) = &a.horizon {
        p.horizon = Some(v.clone());
    }
    if let Some(v) = a.radius {
        p.radius = Some(v);
    }
    if let Some(v) = a.lambda_radius {
        p.lambda_radius = Some(v);
    }
    if let Some(v) = a.max_attempts {
        p.max_attempts = Some(v);
    }
    if let Some(v) = &a.graph {
        p.graph = Some(v.clone());
    }
    if let Some(v) = a.start {
        p.start = Some(v);
    }
    if let Some(v) = a.d {
        p.d = Some(v);
    }
    Ok(cfg)
}

fn run_experiment(name: &str, args: &RunArgs) -> Result<bool, HarnessError> {
    let cfg = build_config(name, args)?;
    let manifest = harness::run(&cfg)?;
    println!(
        "{name}: wrote {} artifacts to {} (config {})",
        manifest.outputs.len(),
        cfg.out_dir.display(),
        &manifest.config_hash[..12]
    );
    Ok(manifest.criteria.values().all(|&ok| ok))
}

fn run_plot(a: &PlotArgs) -> Result<(), HarnessError> {
    let kind = PlotKind::parse(&a.kind)?;
    let text = std::fs::read_to_string(&a.input)?;
    let (svg, slice) = emit_plot_data(&text, kind)?;
    std::fs::create_dir_all(&a.out)?;
    std::fs::write(a.out.join("plot.svg"), svg)?;
    std::fs::write(a.out.join("plot_slice.csv"), slice)?;
    println!("plot: wrote plot.svg and plot_slice.csv to {}", a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Wilson(a) => run_experiment("wilson", a),
        Cmd::Field(a) => run_experiment("field", a),
        Cmd::Lerw(a) => run_experiment("lerw", a),
        Cmd::Green(a) => run_experiment("green", a),
        Cmd::Twosided(a) => run_experiment("twosided", a),
        Cmd::Oracle(a) => run_experiment("oracle", a),
        Cmd::Acceptance(a) => run_experiment("acceptance", a),
        Cmd::Plot(a) => run_plot(a).map(|()| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more criteria failed");
            ExitCode::from(10)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
