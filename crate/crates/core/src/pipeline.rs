//! End-to-end orchestration: fitting a source field, the probe, and the full
//! probe -> perturb -> edit -> refine run, plus artifact export.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::denoiser::{default_prior_std, PromptDescriptor, PromptSource, PromptSpec, TargetRef};
use crate::distill::{mv_step, LossHistory, NoiseSchedule, StepConfig};
use crate::error::{PnrError, Result};
use crate::field::{perturb, sample_init, Bbox, FieldParams, GridDims, InitDistribution};
use crate::image::Image;
use crate::io::{write_atomic, write_json};
use crate::ipg::{diagnostics_csv, identity_distance, RefineConfig, RefineContext, RefineDiagnostics};
use crate::probe::{probe_and_select, ProbeConfig, ProbeReport};
use crate::render::{orbit_cameras, render, render_loss_grad, Camera, CameraRing, L2Loss, RenderConfig};
use crate::scenario::{build_scenario, Scenario, ScenarioKind, SceneStyle};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub max_steps: usize,
    pub rate: f64,
    /// Stop once the per-pixel MSE over all fit views drops below this.
    pub mse_threshold: f64,
    /// Number of ring cameras used for fitting.
    pub views: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_steps: 600,
            rate: 0.1,
            mse_threshold: 2e-4,
            views: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub grid: GridDims,
    pub bbox: Bbox,
    pub render: RenderConfig,
    pub init: InitDistribution,
    pub schedule: NoiseSchedule,
    pub step: StepConfig,
    pub probe: ProbeConfig,
    pub refine: RefineConfig,
    pub fit: FitConfig,
    pub edit_steps: usize,
    /// Fraction of the edit steps rendered at half resolution.
    pub resolution_milestone: f64,
    /// Fixed perturbation amount; when set the probe is skipped.
    pub eta: Option<f64>,
    pub skip_refine: bool,
    pub seed: u64,
    /// Orbit renders written next to the final checkpoint.
    pub export_views: usize,
    pub source: Option<PathBuf>,
    pub prompt: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            grid: GridDims { nx: 16, ny: 16, nz: 16 },
            bbox: Bbox::default(),
            render: RenderConfig::default(),
            init: InitDistribution::default(),
            schedule: NoiseSchedule::default(),
            step: StepConfig::default(),
            probe: ProbeConfig::default(),
            refine: RefineConfig::default(),
            fit: FitConfig::default(),
            edit_steps: 1500,
            resolution_milestone: 0.5,
            eta: None,
            skip_refine: false,
            seed: 0,
            export_views: 8,
            source: None,
            prompt: None,
            out_dir: None,
        }
    }
}

/// Sub-seeds for the independent random streams of a run.
#[derive(Clone, Copy, Debug)]
pub struct Seeds {
    pub probe: u64,
    pub perturb: u64,
    pub edit: u64,
    pub init: u64,
}

impl Seeds {
    pub fn derive(seed: u64) -> Self {
        let mix = |k: u64| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        Self {
            probe: mix(1),
            perturb: mix(2),
            edit: mix(3),
            init: mix(4),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        GridDims::new(self.grid.nx, self.grid.ny, self.grid.nz)?;
        self.render.validate()?;
        self.init.validate()?;
        self.schedule.validate()?;
        self.step.validate()?;
        self.probe.validate()?;
        self.refine.validate()?;
        if !(0.0..=1.0).contains(&self.resolution_milestone) {
            return Err(PnrError::Config(format!(
                "resolution_milestone must lie in [0, 1], got {}",
                self.resolution_milestone
            )));
        }
        if let Some(eta) = self.eta {
            if !(0.0..=1.0).contains(&eta) {
                return Err(PnrError::Config(format!("eta must lie in [0, 1], got {eta}")));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: RunConfig = crate::io::read_json(path.as_ref())?;
        Ok(cfg)
    }

    pub fn seeds(&self) -> Seeds {
        Seeds::derive(self.seed)
    }

    fn schedule(&self) -> NoiseSchedule {
        self.schedule.with_total_steps(self.edit_steps)
    }

    fn step_with_seed(&self, seed: u64) -> StepConfig {
        StepConfig { seed, ..self.step }
    }

    /// Edit steps rendered at half resolution.
    pub fn half_res_steps(&self) -> usize {
        (self.resolution_milestone * self.edit_steps as f64).round() as usize
    }
}

fn half_res(ring: &CameraRing) -> (usize, usize) {
    ((ring.width / 2).max(1), (ring.height / 2).max(1))
}

/// Prompt and cameras at full and half resolution.
pub struct PromptLevels {
    pub full: (PromptSpec, Vec<Camera>),
    pub half: (PromptSpec, Vec<Camera>),
}

impl PromptLevels {
    pub fn build(source: &PromptSource, cfg: &RenderConfig) -> Result<Self> {
        let (hw, hh) = half_res(&source.ring);
        Ok(Self {
            full: source.build(cfg, source.ring.width, source.ring.height)?,
            half: source.build(cfg, hw, hh)?,
        })
    }
}

/// Per-pixel MSE between renders of `params` and the first (largest-weight
/// first) target of each view, averaged over views.
pub fn edit_target_mse(
    params: &FieldParams,
    prompt: &PromptSpec,
    cameras: &[Camera],
    cfg: &RenderConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for (v, cam) in cameras.iter().enumerate() {
        let img = render(params, cam, cfg)?;
        let comps = prompt.view(v)?.components();
        let best = comps
            .iter()
            .max_by(|a, b| a.weight.total_cmp(&b.weight))
            .expect("views have components");
        total += img.mse(&best.mean)?;
    }
    Ok(total / cameras.len() as f64)
}

/// Mean identity distance between renders of `a` and `b` over `cameras`.
pub fn mean_identity_distance(
    a: &FieldParams,
    b: &FieldParams,
    cameras: &[Camera],
    render_cfg: &RenderConfig,
    refine_cfg: &RefineConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for cam in cameras {
        total += identity_distance(&render(a, cam, render_cfg)?, &render(b, cam, render_cfg)?, refine_cfg)?;
    }
    Ok(total / cameras.len() as f64)
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub params: FieldParams,
    pub history: LossHistory,
    pub final_mse: f64,
    pub converged: bool,
}

/// Fits a fresh field to the prompt's target views by L2 render loss with
/// Adam. The result is quantized to `f32`.
pub fn fit_field(source: &PromptSource, cfg: &RunConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let ring = CameraRing {
        count: cfg.fit.views.max(1),
        ..source.ring
    };
    let fit_source = PromptSource { ring, ..source.clone() };
    let (prompt, cams) = fit_source.build(&cfg.render, ring.width, ring.height)?;
    let targets: Vec<Image> = (0..cams.len())
        .map(|v| {
            let comps = prompt.view(v)?.components();
            let mut mean = Image::zeros(ring.width, ring.height);
            for c in comps {
                for (m, t) in mean.data_mut().iter_mut().zip(c.mean.data()) {
                    *m += c.weight * t;
                }
            }
            Ok(mean)
        })
        .collect::<Result<_>>()?;

    let bbox = source.targets[0].1.bbox();
    let mut params = sample_init(&cfg.init, cfg.grid, bbox, cfg.seeds().init)?;
    let mut adam = Adam::new(params.len(), cfg.fit.rate);
    let mut history = LossHistory::default();
    let pixels = (targets[0].len() * cams.len()) as f64;
    for step in 0..cfg.fit.max_steps {
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for (cam, target) in cams.iter().zip(&targets) {
            let (l, g) = render_loss_grad(&params, cam, &cfg.render, &L2Loss, target)?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b / pixels;
            }
        }
        let mse = 2.0 * loss / pixels;
        history.push(step, mse);
        if mse < cfg.fit.mse_threshold {
            break;
        }
        adam.step(params.raw_mut(), &grad);
        params.check_finite()?;
    }
    params.quantize_f32();
    let final_mse = {
        let mut total = 0.0;
        for (cam, target) in cams.iter().zip(&targets) {
            total += render(&params, cam, &cfg.render)?.mse(target)?;
        }
        total / cams.len() as f64
    };
    Ok(FitOutcome {
        params,
        history,
        converged: final_mse < cfg.fit.mse_threshold,
        final_mse,
    })
}

struct Adam {
    rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, rate: f64) -> Self {
        Self {
            rate,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, x: &mut [f64], g: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..x.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * g[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * g[i] * g[i];
            x[i] -= self.rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

/// Runs only the probe at the half resolution used by the first edit steps.
pub fn run_probe(src: &FieldParams, source: &PromptSource, cfg: &RunConfig) -> Result<ProbeReport> {
    cfg.validate()?;
    let levels = PromptLevels::build(source, &cfg.render)?;
    probe_with_levels(src, &levels, cfg)
}

fn probe_with_levels(src: &FieldParams, levels: &PromptLevels, cfg: &RunConfig) -> Result<ProbeReport> {
    let (prompt, cams) = if cfg.half_res_steps() > 0 {
        &levels.half
    } else {
        &levels.full
    };
    probe_and_select(
        src,
        prompt,
        cams,
        &cfg.render,
        &cfg.step_with_seed(cfg.seeds().probe),
        &cfg.schedule(),
        &cfg.probe,
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub probe_ms: u64,
    pub perturb_ms: u64,
    pub edit_ms: u64,
    pub refine_ms: u64,
}

#[derive(Clone, Debug)]
pub struct EditOutcome {
    pub probe: Option<ProbeReport>,
    pub eta: f64,
    pub perturbed: FieldParams,
    /// Field after the edit phase, before refinement.
    pub edited: FieldParams,
    /// Final field, quantized to `f32`.
    pub final_params: FieldParams,
    pub edit_history: LossHistory,
    pub refine_history: LossHistory,
    pub refine_diagnostics: Vec<RefineDiagnostics>,
    pub timings: PhaseTimings,
    /// Phases in execution order.
    pub phases: Vec<&'static str>,
}

fn ms_since(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

/// Probe -> perturb -> edit -> refine.
pub fn run_edit(src: &FieldParams, source: &PromptSource, cfg: &RunConfig) -> Result<EditOutcome> {
    run_edit_inner(src, source, cfg, None)
}

/// [`run_edit`] that also saves each phase's artifacts into `out_dir` as soon
/// as the phase finishes, so a failing run leaves everything produced up to
/// that point, followed by the remaining artifacts and `summary.json`.
pub fn run_edit_to_dir(
    src: &FieldParams,
    source: &PromptSource,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<(EditOutcome, RunSummary)> {
    let outcome = run_edit_inner(src, source, cfg, Some(out_dir))?;
    let summary = write_edit_artifacts(&outcome, src, source, cfg, out_dir)?;
    Ok((outcome, summary))
}

fn run_edit_inner(
    src: &FieldParams,
    source: &PromptSource,
    cfg: &RunConfig,
    out_dir: Option<&Path>,
) -> Result<EditOutcome> {
    cfg.validate()?;
    let levels = PromptLevels::build(source, &cfg.render)?;
    if levels.full.1.len() != levels.full.0.view_count() {
        return Err(PnrError::Config("camera count differs from prompt view count".into()));
    }
    if let Some(dir) = out_dir {
        save_checkpoint(src, dir.join("source.pnrf"))?;
    }
    let seeds = cfg.seeds();
    let sched = cfg.schedule();
    let mut timings = PhaseTimings::default();
    let mut phases = Vec::new();

    let t = Instant::now();
    let (probe, eta) = match cfg.eta {
        Some(eta) => (None, eta),
        None => {
            phases.push("probe");
            let report = probe_with_levels(src, &levels, cfg)?;
            if let Some(dir) = out_dir {
                write_json(&dir.join("probe.json"), &report)?;
            }
            let eta = report.eta;
            (Some(report), eta)
        }
    };
    timings.probe_ms = ms_since(t);
    log::info!("eta = {eta:.4}");

    let t = Instant::now();
    phases.push("perturb");
    let perturbed = perturb(src, &cfg.init, eta, seeds.perturb)?;
    if let Some(dir) = out_dir {
        save_checkpoint(&perturbed.quantized_f32(), dir.join("perturbed.pnrf"))?;
    }
    timings.perturb_ms = ms_since(t);

    let t = Instant::now();
    phases.push("edit");
    let step_cfg = cfg.step_with_seed(seeds.edit);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.edit);
    let mut current = perturbed.clone();
    let mut edit_history = LossHistory::default();
    let half_steps = cfg.half_res_steps();
    for tau in 0..cfg.edit_steps {
        let (prompt, cams) = if tau < half_steps { &levels.half } else { &levels.full };
        let (next, loss) = mv_step(&current, prompt, cams, &cfg.render, &step_cfg, &sched, tau, &mut rng)?;
        current = next;
        edit_history.push(tau, loss);
        if tau % 100 == 0 {
            log::debug!("edit step {tau}: loss {loss:.4e}");
        }
    }
    if let Some(dir) = out_dir {
        write_atomic(&dir.join("edit_loss.csv"), edit_history.to_csv().as_bytes())?;
        save_checkpoint(&current.quantized_f32(), dir.join("edited.pnrf"))?;
    }
    let edited = current.clone();
    timings.edit_ms = ms_since(t);

    let t = Instant::now();
    let (refine_history, refine_diagnostics) = if cfg.skip_refine {
        (LossHistory::default(), Vec::new())
    } else {
        phases.push("refine");
        let (prompt, cams) = &levels.full;
        let ctx = RefineContext {
            src,
            prompt,
            cameras: cams,
            render_cfg: &cfg.render,
            step_cfg: &step_cfg,
            refine_cfg: &cfg.refine,
            sched: &sched,
            tau_offset: cfg.edit_steps,
        };
        let (refined, history, diags) = ctx.run(&current, &mut rng)?;
        current = refined;
        (history, diags)
    };
    timings.refine_ms = ms_since(t);

    current.quantize_f32();
    Ok(EditOutcome {
        probe,
        eta,
        perturbed,
        edited,
        final_params: current,
        edit_history,
        refine_history,
        refine_diagnostics,
        timings,
        phases,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub prompt_id: String,
    pub eta: f64,
    pub eta_source: String,
    pub phases: Vec<String>,
    pub probe_steps: usize,
    pub edit_steps: usize,
    pub half_resolution_steps: usize,
    pub refine_steps: usize,
    pub edit_target_mse: f64,
    pub identity_distance: f64,
    pub timings: PhaseTimings,
    pub artifacts: Vec<String>,
}

/// Renders `n` orbit views of `params` as `view_000.png`, `view_001.png`, ...
pub fn write_orbit_pngs(
    params: &FieldParams,
    ring: &CameraRing,
    cfg: &RenderConfig,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let cams = orbit_cameras(ring, params.bbox().center())?;
    cams.iter()
        .enumerate()
        .map(|(i, cam)| {
            let path = out_dir.join(format!("view_{i:03}.png"));
            render(params, cam, cfg)?.save_png(&path)?;
            Ok(path)
        })
        .collect()
}

/// Writes every artifact of an edit run into `out_dir` and returns the
/// summary that was written to `summary.json`.
pub fn write_edit_artifacts(
    outcome: &EditOutcome,
    src: &FieldParams,
    source: &PromptSource,
    cfg: &RunConfig,
    out_dir: &Path,
) -> Result<RunSummary> {
    let mut artifacts = Vec::new();
    let mut record = |p: PathBuf| artifacts.push(p.file_name().unwrap().to_string_lossy().into_owned());

    for (name, field) in [
        ("source.pnrf", src.clone()),
        ("perturbed.pnrf", outcome.perturbed.quantized_f32()),
        ("edited.pnrf", outcome.edited.quantized_f32()),
        ("final.pnrf", outcome.final_params.clone()),
    ] {
        let p = out_dir.join(name);
        save_checkpoint(&field, &p)?;
        record(p);
    }
    if let Some(report) = &outcome.probe {
        let p = out_dir.join("probe.json");
        write_json(&p, report)?;
        record(p);
    }
    let p = out_dir.join("edit_loss.csv");
    write_atomic(&p, outcome.edit_history.to_csv().as_bytes())?;
    record(p);
    if !cfg.skip_refine {
        let p = out_dir.join("refine_trace.csv");
        write_atomic(&p, diagnostics_csv(&outcome.refine_diagnostics).as_bytes())?;
        record(p);
    }
    let ring = CameraRing {
        count: cfg.export_views.max(1),
        ..source.ring
    };
    let renders = out_dir.join("renders");
    for p in write_orbit_pngs(&outcome.final_params, &ring, &cfg.render, &renders)? {
        artifacts.push(format!("renders/{}", p.file_name().unwrap().to_string_lossy()));
    }

    let (prompt, cams) = source.build(&cfg.render, source.ring.width, source.ring.height)?;
    let summary = RunSummary {
        prompt_id: source.prompt_id.clone(),
        eta: outcome.eta,
        eta_source: if outcome.probe.is_some() { "probe" } else { "override" }.into(),
        phases: outcome.phases.iter().map(|s| s.to_string()).collect(),
        probe_steps: outcome.probe.as_ref().map_or(0, |r| r.history.len()),
        edit_steps: outcome.edit_history.len(),
        half_resolution_steps: cfg.half_res_steps().min(cfg.edit_steps),
        refine_steps: outcome.refine_history.len(),
        edit_target_mse: edit_target_mse(&outcome.final_params, &prompt, &cams, &cfg.render)?,
        identity_distance: mean_identity_distance(&outcome.final_params, src, &cams, &cfg.render, &cfg.refine)?,
        timings: outcome.timings,
        artifacts: artifacts.clone(),
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Loads the source checkpoint and prompt descriptor named in `cfg`.
pub fn load_inputs(cfg: &RunConfig) -> Result<(FieldParams, PromptSource)> {
    let src_path = cfg
        .source
        .as_ref()
        .ok_or_else(|| PnrError::Config("no source checkpoint given".into()))?;
    let source = load_prompt(cfg)?;
    let src = load_checkpoint(src_path)?;
    if !src.same_shape(&source.targets[0].1) {
        return Err(PnrError::Config(format!(
            "source grid {:?} does not match prompt targets {:?}",
            src.dims(),
            source.targets[0].1.dims()
        )));
    }
    Ok((src, source))
}

pub fn load_prompt(cfg: &RunConfig) -> Result<PromptSource> {
    let prompt_path = cfg
        .prompt
        .as_ref()
        .ok_or_else(|| PnrError::Config("no prompt descriptor given".into()))?;
    let (desc, base) = PromptDescriptor::load(prompt_path)?;
    PromptSource::from_descriptor(&desc, &base)
}

/// Paths written by [`write_scenario`].
#[derive(Clone, Debug)]
pub struct ScenarioFiles {
    pub source: PathBuf,
    pub target: PathBuf,
    /// Prompt whose target is the edited field.
    pub prompt: PathBuf,
    /// Prompt whose target is the source itself.
    pub noop_prompt: PathBuf,
}

/// Writes a built-in scenario as checkpoints plus prompt descriptors.
pub fn write_scenario(
    kind: ScenarioKind,
    dims: GridDims,
    bbox: Bbox,
    style: &SceneStyle,
    ring: CameraRing,
    out_dir: &Path,
) -> Result<ScenarioFiles> {
    let sc = build_scenario(kind, dims, bbox, style);
    let files = ScenarioFiles {
        source: out_dir.join("source.pnrf"),
        target: out_dir.join("target.pnrf"),
        prompt: out_dir.join("prompt.json"),
        noop_prompt: out_dir.join("noop_prompt.json"),
    };
    save_checkpoint(&sc.source, &files.source)?;
    save_checkpoint(&sc.target, &files.target)?;
    for (path, id, ckpt) in [
        (&files.prompt, kind.name().to_string(), "target.pnrf"),
        (&files.noop_prompt, format!("{}_noop", kind.name()), "source.pnrf"),
    ] {
        PromptDescriptor {
            prompt_id: id,
            prior_std: default_prior_std(),
            targets: vec![TargetRef {
                checkpoint: ckpt.into(),
                weight: 1.0,
            }],
            cameras: ring,
        }
        .save(path)?;
    }
    Ok(files)
}

/// In-memory prompt built from a scenario's target field.
pub fn scenario_prompt(scenario: &Scenario, ring: CameraRing) -> PromptSource {
    PromptSource {
        prompt_id: scenario.kind.name().into(),
        prior_std: default_prior_std(),
        targets: vec![(1.0, scenario.target.clone())],
        ring,
    }
}
