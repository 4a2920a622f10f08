use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nsdwr::estimator::Enrichment;
use nsdwr::goals::GoalKind;
use nsdwr::report::{execute, exit_code, RunConfig};

/// Goal-oriented adaptive solver for the stationary cylinder benchmark.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Args {
    /// TOML file with run settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Enrichment used by the estimator: p or h.
    #[arg(long)]
    enrichment: Option<String>,
    /// Goal: dp, drag, lift or combined.
    #[arg(long)]
    goal: Option<String>,
    /// Bulk marking fraction.
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    max_dofs: Option<usize>,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Drop the convection term.
    #[arg(long)]
    stokes: bool,
    /// Refine every cell in each step.
    #[arg(long)]
    uniform: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    emit_vtk: bool,
    /// Run p, h and uniform refinement and write figure data.
    #[arg(long)]
    emit_figures: bool,
    #[arg(long)]
    reference_cache: Option<PathBuf>,
    /// Finer uniform level of the reference computation.
    #[arg(long)]
    reference_level: Option<usize>,
}

fn config(args: Args) -> nsdwr::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::from_toml(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = &args.enrichment {
        cfg.enrichment = Enrichment::parse(s)?;
    }
    if let Some(s) = &args.goal {
        cfg.goal = GoalKind::parse(s)?;
    }
    if let Some(t) = args.theta {
        cfg.theta = t;
    }
    if let Some(n) = args.max_dofs {
        cfg.max_dofs = n;
    }
    if let Some(n) = args.max_steps {
        cfg.max_steps = n;
    }
    cfg.stokes |= args.stokes;
    cfg.uniform |= args.uniform;
    cfg.emit_vtk |= args.emit_vtk;
    cfg.emit_figures |= args.emit_figures;
    if let Some(p) = args.out {
        cfg.out = p;
    }
    if let Some(p) = args.reference_cache {
        cfg.reference_cache = p;
    }
    if let Some(l) = args.reference_level {
        cfg.reference_level = l;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = config(args).and_then(|cfg| {
        log::info!("output directory {}", cfg.out.display());
        execute(&cfg)
    });
    match result {
        Ok(out) => {
            for (name, rows) in &out.runs {
                println!("{name}: {} steps", rows.len());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
