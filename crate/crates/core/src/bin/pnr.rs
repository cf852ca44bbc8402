use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pnr_core::checkpoint::{load_checkpoint, save_checkpoint};
use pnr_core::io::{write_atomic, write_json};
use pnr_core::pipeline::{
    fit_field, load_inputs, load_prompt, run_edit_to_dir, run_probe, write_orbit_pngs, write_scenario, RunConfig,
};
use pnr_core::render::CameraRing;
use pnr_core::scenario::{ScenarioKind, SceneStyle};
use pnr_core::{GridDims, PnrError, Result};

#[derive(Parser)]
#[command(name = "pnr", version, about = "Edit voxel radiance fields by perturbation and score distillation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a fresh field to the target views of a prompt.
    Fit(FitArgs),
    /// Run the loss-landscape probe and report the selected perturbation.
    Probe(ProbeArgs),
    /// Probe, perturb, edit and refine a source field.
    Edit(EditArgs),
    /// Render orbit views of a checkpoint.
    Render(RenderArgs),
    /// Write one of the built-in edit scenarios.
    Scenario(ScenarioArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl CommonArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    prompt: Option<PathBuf>,
    /// Output checkpoint.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
}

#[derive(Args)]
struct ProbeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    prompt: Option<PathBuf>,
    /// Output report (JSON).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    edit_steps: Option<usize>,
}

#[derive(Args)]
struct EditArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    source: Option<PathBuf>,
    #[arg(long)]
    prompt: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Fixed perturbation amount; skips the probe.
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    skip_refine: bool,
    #[arg(long)]
    edit_steps: Option<usize>,
    #[arg(long)]
    refine_steps: Option<usize>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 8)]
    views: usize,
    /// Square image size in pixels.
    #[arg(long, default_value_t = 64)]
    resolution: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// color_change, object_added or object_moved.
    #[arg(long)]
    kind: ScenarioKind,
    #[arg(long, default_value_t = 16)]
    grid: usize,
    #[arg(long, default_value_t = 32)]
    resolution: usize,
    #[arg(long, default_value_t = 4)]
    views: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

fn cmd_fit(args: &FitArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(p) = &args.prompt {
        cfg.prompt = Some(p.clone());
    }
    if let Some(n) = args.max_steps {
        cfg.fit.max_steps = n;
    }
    if let Some(n) = args.grid {
        cfg.grid = GridDims::cube(n)?;
    }
    let source = load_prompt(&cfg)?;
    let outcome = fit_field(&source, &cfg)?;
    save_checkpoint(&outcome.params, &args.out)?;
    write_atomic(&args.out.with_extension("csv"), outcome.history.to_csv().as_bytes())?;
    log::info!(
        "fit mse {:.3e} after {} steps",
        outcome.final_mse,
        outcome.history.len()
    );
    if !outcome.converged {
        return Err(PnrError::Numerical(format!(
            "fit did not reach mse {:.3e} (got {:.3e}); partial checkpoint written to {}",
            cfg.fit.mse_threshold,
            outcome.final_mse,
            args.out.display()
        )));
    }
    Ok(())
}

fn cmd_probe(args: &ProbeArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(p) = &args.source {
        cfg.source = Some(p.clone());
    }
    if let Some(p) = &args.prompt {
        cfg.prompt = Some(p.clone());
    }
    if let Some(n) = args.edit_steps {
        cfg.edit_steps = n;
    }
    let (src, source) = load_inputs(&cfg)?;
    let report = run_probe(&src, &source, &cfg)?;
    write_json(&args.out, &report)?;
    println!("eta {}", report.eta);
    Ok(())
}

fn cmd_edit(args: &EditArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(p) = &args.source {
        cfg.source = Some(p.clone());
    }
    if let Some(p) = &args.prompt {
        cfg.prompt = Some(p.clone());
    }
    if let Some(p) = &args.out_dir {
        cfg.out_dir = Some(p.clone());
    }
    if args.eta.is_some() {
        cfg.eta = args.eta;
    }
    if args.skip_refine {
        cfg.skip_refine = true;
    }
    if let Some(n) = args.edit_steps {
        cfg.edit_steps = n;
    }
    if let Some(n) = args.refine_steps {
        cfg.refine.refine_steps = n;
    }
    let out_dir = cfg
        .out_dir
        .clone()
        .ok_or_else(|| PnrError::Config("no output directory given".into()))?;
    let (src, source) = load_inputs(&cfg)?;
    let (_, summary) = run_edit_to_dir(&src, &source, &cfg, &out_dir)?;
    println!(
        "eta {} edit_target_mse {:e} identity_distance {:e}",
        summary.eta, summary.edit_target_mse, summary.identity_distance
    );
    Ok(())
}

fn cmd_render(args: &RenderArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let params = load_checkpoint(&args.checkpoint)?;
    let ring = CameraRing {
        count: args.views,
        width: args.resolution,
        height: args.resolution,
        ..CameraRing::default()
    };
    let written = write_orbit_pngs(&params, &ring, &cfg.render, &args.out_dir)?;
    println!("wrote {} views to {}", written.len(), args.out_dir.display());
    Ok(())
}

fn cmd_scenario(args: &ScenarioArgs) -> Result<()> {
    let ring = CameraRing {
        count: args.views,
        width: args.resolution,
        height: args.resolution,
        ..CameraRing::default()
    };
    let files = write_scenario(
        args.kind,
        GridDims::cube(args.grid)?,
        Default::default(),
        &SceneStyle::default(),
        ring,
        &args.out_dir,
    )?;
    for p in [&files.source, &files.target, &files.prompt, &files.noop_prompt] {
        println!("{}", p.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Edit(a) => cmd_edit(a),
        Command::Render(a) => cmd_render(a),
        Command::Scenario(a) => cmd_scenario(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
