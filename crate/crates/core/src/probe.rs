//! Loss-landscape probe that picks the perturbation amount `eta`.
//!
//! A short burst of edit-prompt distillation is run from the source field and
//! its monitoring losses are summarized as the windowed decrease
//! `dL = mean(last window) - mean(first window)`. The perturbation amount is
//! then `max(0, eta_max * (1 - 2^(-(dL + d_min) / d_min)))`: a field that
//! already moves easily under the edit prompt (large decrease) is left alone,
//! one sitting in a basin (flat or rising loss) is pushed toward a fresh
//! initialization.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::denoiser::PromptSpec;
use crate::distill::{run_distillation, NoiseSchedule, StepConfig};
use crate::error::{PnrError, Result};
use crate::field::{perturb, FieldParams, InitDistribution};
use crate::render::{Camera, RenderConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub probe_steps: usize,
    pub window: usize,
    /// Absolute minimum loss decrease. When unset it is derived from the
    /// probe itself as `delta_min_std_factor` times the standard deviation
    /// of the first-window losses.
    pub delta_min: Option<f64>,
    pub delta_min_std_factor: f64,
    pub eta_max: f64,
    /// First-window mean loss at or below which the field already satisfies
    /// the prompt and no perturbation is applied. Zero disables the check.
    pub settled_loss: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            probe_steps: 50,
            window: 10,
            delta_min: None,
            delta_min_std_factor: 10.0,
            eta_max: 0.6,
            settled_loss: 1e-3,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.probe_steps < 2 * self.window {
            return Err(PnrError::Config(format!(
                "probe needs probe_steps >= 2 * window > 0, got {} and {}",
                self.probe_steps, self.window
            )));
        }
        if let Some(d) = self.delta_min {
            if !(d > 0.0 && d.is_finite()) {
                return Err(PnrError::Config(format!("delta_min must be > 0, got {d}")));
            }
        }
        if !(self.delta_min_std_factor > 0.0) {
            return Err(PnrError::Config("delta_min_std_factor must be > 0".into()));
        }
        if !(self.eta_max > 0.0 && self.eta_max <= 1.0) {
            return Err(PnrError::Config(format!(
                "eta_max must lie in (0, 1], got {}",
                self.eta_max
            )));
        }
        if !(self.settled_loss >= 0.0) {
            return Err(PnrError::Config("settled_loss must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub history: Vec<f64>,
    #[serde(rename = "delta_L")]
    pub delta_l: f64,
    pub delta_min: f64,
    pub eta: f64,
    /// True when the first-window loss was already below `settled_loss`.
    pub settled: bool,
    pub duration_ms: u64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Mean of the last `window` losses minus the mean of the first `window`.
pub fn loss_decrease(history: &[f64], window: usize) -> Result<f64> {
    if window == 0 || history.len() < 2 * window {
        return Err(PnrError::Config(format!(
            "loss history of length {} is too short for window {window}",
            history.len()
        )));
    }
    Ok(mean(&history[history.len() - window..]) - mean(&history[..window]))
}

pub fn determine_eta(delta_l: f64, delta_min: f64, eta_max: f64) -> Result<f64> {
    if !(delta_min > 0.0) {
        return Err(PnrError::Config(format!("delta_min must be > 0, got {delta_min}")));
    }
    if !(eta_max > 0.0 && eta_max <= 1.0) {
        return Err(PnrError::Config(format!("eta_max must lie in (0, 1], got {eta_max}")));
    }
    if delta_l.is_nan() {
        return Err(PnrError::Numerical("loss decrease is NaN".into()));
    }
    let exponent = -(delta_l + delta_min) / delta_min;
    Ok((eta_max * (1.0 - exponent.exp2())).max(0.0))
}

/// Minimum loss decrease derived from the first window of the probe.
pub fn adaptive_delta_min(history: &[f64], window: usize, std_factor: f64) -> f64 {
    let head = &history[..window.min(history.len())];
    let m = mean(head);
    let var = if head.len() > 1 {
        head.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (head.len() - 1) as f64
    } else {
        0.0
    };
    // Floor keeps the ratio well defined for perfectly flat histories.
    (std_factor * var.sqrt()).max(1e-12 * m.abs()).max(f64::MIN_POSITIVE)
}

/// Summarizes a probe loss history into a report.
pub fn select_eta(history: Vec<f64>, cfg: &ProbeConfig, duration_ms: u64) -> Result<ProbeReport> {
    cfg.validate()?;
    let delta_l = loss_decrease(&history, cfg.window)?;
    let delta_min = cfg
        .delta_min
        .unwrap_or_else(|| adaptive_delta_min(&history, cfg.window, cfg.delta_min_std_factor));
    let settled = mean(&history[..cfg.window]) <= cfg.settled_loss;
    let eta = if settled {
        0.0
    } else {
        determine_eta(delta_l, delta_min, cfg.eta_max)?
    };
    Ok(ProbeReport {
        history,
        delta_l,
        delta_min,
        eta,
        settled,
        duration_ms,
    })
}

/// Runs `probe_steps` distillation steps with the edit prompt on a copy of
/// `src` and selects `eta`. The probed parameters are discarded.
pub fn probe_and_select(
    src: &FieldParams,
    prompt: &PromptSpec,
    cameras: &[Camera],
    render_cfg: &RenderConfig,
    step_cfg: &StepConfig,
    sched: &NoiseSchedule,
    probe_cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    probe_cfg.validate()?;
    let started = Instant::now();
    let (_, history) = run_distillation(src, prompt, cameras, render_cfg, step_cfg, sched, probe_cfg.probe_steps)?;
    select_eta(history.losses, probe_cfg, started.elapsed().as_millis() as u64)
}

/// Perturbs the pristine source by the amount the probe selected.
pub fn perturb_and_revise_init(
    src: &FieldParams,
    report: &ProbeReport,
    dist: &InitDistribution,
    seed: u64,
) -> Result<FieldParams> {
    perturb(src, dist, report.eta, seed)
}
