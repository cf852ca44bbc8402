//! Exact posterior-mean denoisers under per-view Gaussian-mixture image priors.
//!
//! A prompt assigns every view a mixture `sum_k w_k N(mu_k, s^2 I)`. Under
//! additive noise `N(0, sigma^2 I)` the optimal L2 denoiser is
//!
//! ```text
//! D(y; sigma) = sum_k r_k(y) (s^2 y + sigma^2 mu_k) / (s^2 + sigma^2)
//! r_k(y)     ∝ w_k N(y; mu_k, (s^2 + sigma^2) I)
//! ```
//!
//! which satisfies `D(y; sigma) = y + sigma^2 grad log p_sigma(y)`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint::load_checkpoint;
use crate::error::{PnrError, Result};
use crate::field::FieldParams;
use crate::image::Image;
use crate::render::{orbit_cameras, render, Camera, CameraRing, RenderConfig};

/// Noise standard deviation in pixel-value units.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct NoiseLevel(f64);

impl NoiseLevel {
    pub const ZERO: NoiseLevel = NoiseLevel(0.0);

    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(PnrError::Config(format!(
                "noise level must be finite and >= 0, got {sigma}"
            )));
        }
        Ok(Self(sigma))
    }

    pub fn sigma(self) -> f64 {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Image,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewPrior {
    components: Vec<MixtureComponent>,
}

impl ViewPrior {
    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }
}

/// Prompt identifier plus the per-view image priors it stands for.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSpec {
    prompt_id: String,
    views: Vec<ViewPrior>,
    prior_std: f64,
}

impl PromptSpec {
    /// Builds a prompt from per-view `(weight, target)` lists. Weights are
    /// normalized to sum to one per view.
    pub fn new(prompt_id: impl Into<String>, views: Vec<Vec<(f64, Image)>>, prior_std: f64) -> Result<Self> {
        if !(prior_std > 0.0 && prior_std.is_finite()) {
            return Err(PnrError::Config(format!("prior std must be > 0, got {prior_std}")));
        }
        if views.is_empty() {
            return Err(PnrError::Config("prompt needs at least one view".into()));
        }
        let mut out = Vec::with_capacity(views.len());
        let (w0, h0) = match views[0].first() {
            Some((_, img)) => (img.width(), img.height()),
            None => return Err(PnrError::Config("view 0 has no mixture components".into())),
        };
        for (v, comps) in views.into_iter().enumerate() {
            if comps.is_empty() {
                return Err(PnrError::Config(format!("view {v} has no mixture components")));
            }
            let total: f64 = comps.iter().map(|(w, _)| *w).sum();
            if comps.iter().any(|(w, _)| !(*w > 0.0 && w.is_finite())) {
                return Err(PnrError::Config(format!("view {v}: mixture weights must be positive")));
            }
            let mut components = Vec::with_capacity(comps.len());
            for (w, mean) in comps {
                if mean.width() != w0 || mean.height() != h0 {
                    return Err(PnrError::Dimension(format!(
                        "view {v}: target is {}x{}, expected {w0}x{h0}",
                        mean.width(),
                        mean.height()
                    )));
                }
                components.push(MixtureComponent {
                    weight: w / total,
                    mean,
                });
            }
            out.push(ViewPrior { components });
        }
        Ok(Self {
            prompt_id: prompt_id.into(),
            views: out,
            prior_std,
        })
    }

    pub fn prompt_id(&self) -> &str {
        &self.prompt_id
    }

    pub fn prior_std(&self) -> f64 {
        self.prior_std
    }

    pub fn view_count(&self) -> usize {
        self.views.len()
    }

    pub fn view(&self, view: usize) -> Result<&ViewPrior> {
        self.views
            .get(view)
            .ok_or_else(|| PnrError::Config(format!("prompt has {} views, asked for view {view}", self.views.len())))
    }

    pub fn resolution(&self) -> (usize, usize) {
        let m = &self.views[0].components[0].mean;
        (m.width(), m.height())
    }
}

/// Posterior mean `E[x | y]` for view `view` at noise level `sigma`.
pub fn denoise(prompt: &PromptSpec, view: usize, y: &Image, sigma: NoiseLevel) -> Result<Image> {
    let prior = prompt.view(view)?;
    let (w, h) = prompt.resolution();
    if y.width() != w || y.height() != h {
        return Err(PnrError::Dimension(format!(
            "input is {}x{}, prompt targets are {w}x{h}",
            y.width(),
            y.height()
        )));
    }
    let sigma = sigma.sigma();
    if sigma == 0.0 {
        return Ok(y.clone());
    }
    let s2 = prompt.prior_std * prompt.prior_std;
    let v2 = sigma * sigma;
    let var = s2 + v2;

    let logits: Vec<f64> = prior
        .components
        .iter()
        .map(|c| {
            let d2: f64 = y.data().iter().zip(c.mean.data()).map(|(a, b)| (a - b) * (a - b)).sum();
            c.weight.ln() - 0.5 * d2 / var
        })
        .collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let resp: Vec<f64> = logits.iter().map(|l| (l - max).exp() / norm).collect();

    let mut out = y.map(|v| s2 * v / var);
    for (r, c) in resp.iter().zip(&prior.components) {
        let scale = r * v2 / var;
        for (o, m) in out.data_mut().iter_mut().zip(c.mean.data()) {
            *o += scale * m;
        }
    }
    Ok(out)
}

/// Denoises each `(view, image)` pair independently.
pub fn mv_denoise(prompt: &PromptSpec, views: &[usize], ys: &[Image], sigma: NoiseLevel) -> Result<Vec<Image>> {
    if views.len() != ys.len() {
        return Err(PnrError::Dimension(format!(
            "{} view indices for {} images",
            views.len(),
            ys.len()
        )));
    }
    views
        .iter()
        .zip(ys)
        .map(|(&v, y)| denoise(prompt, v, y, sigma))
        .collect()
}

/// Single-component prompt whose per-view target is the render of `target`.
pub fn make_prompt_from_field(
    prompt_id: impl Into<String>,
    target: &FieldParams,
    cameras: &[Camera],
    cfg: &RenderConfig,
    prior_std: f64,
) -> Result<PromptSpec> {
    make_prompt_from_fields(prompt_id, &[(1.0, target)], cameras, cfg, prior_std)
}

/// Mixture prompt: view `i` gets one component per target field, rendered
/// from `cameras[i]`, with the given (unnormalized) weights.
pub fn make_prompt_from_fields(
    prompt_id: impl Into<String>,
    targets: &[(f64, &FieldParams)],
    cameras: &[Camera],
    cfg: &RenderConfig,
    prior_std: f64,
) -> Result<PromptSpec> {
    if !(prior_std > 0.0) {
        return Err(PnrError::Config(format!("prior std must be > 0, got {prior_std}")));
    }
    if targets.is_empty() {
        return Err(PnrError::Config("prompt needs at least one target field".into()));
    }
    let views = cameras
        .iter()
        .map(|cam| {
            targets
                .iter()
                .map(|(w, field)| Ok((*w, render(field, cam, cfg)?)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    PromptSpec::new(prompt_id, views, prior_std)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetRef {
    /// Checkpoint path, relative to the descriptor file unless absolute.
    pub checkpoint: PathBuf,
    pub weight: f64,
}

/// On-disk prompt: target checkpoints, mixture weights and the camera ring
/// the per-view targets are rendered from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptDescriptor {
    pub prompt_id: String,
    #[serde(default = "default_prior_std")]
    pub prior_std: f64,
    pub targets: Vec<TargetRef>,
    pub cameras: CameraRing,
}

pub fn default_prior_std() -> f64 {
    0.05
}

impl PromptDescriptor {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        let desc: PromptDescriptor = crate::io::read_json(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((desc, base))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_json(path.as_ref(), self)
    }

    pub fn load_targets(&self, base_dir: &Path) -> Result<Vec<(f64, FieldParams)>> {
        if self.targets.is_empty() {
            return Err(PnrError::Config(format!(
                "prompt '{}' lists no targets",
                self.prompt_id
            )));
        }
        self.targets
            .iter()
            .map(|t| {
                let p = if t.checkpoint.is_absolute() {
                    t.checkpoint.clone()
                } else {
                    base_dir.join(&t.checkpoint)
                };
                Ok((t.weight, load_checkpoint(p)?))
            })
            .collect()
    }
}

/// Target fields plus camera ring, renderable into a [`PromptSpec`] at any
/// resolution.
#[derive(Clone, Debug)]
pub struct PromptSource {
    pub prompt_id: String,
    pub prior_std: f64,
    pub targets: Vec<(f64, FieldParams)>,
    pub ring: CameraRing,
}

impl PromptSource {
    pub fn from_descriptor(desc: &PromptDescriptor, base_dir: &Path) -> Result<Self> {
        Ok(Self {
            prompt_id: desc.prompt_id.clone(),
            prior_std: desc.prior_std,
            targets: desc.load_targets(base_dir)?,
            ring: desc.cameras,
        })
    }

    pub fn cameras(&self, width: usize, height: usize) -> Result<Vec<Camera>> {
        let ring = CameraRing {
            width,
            height,
            ..self.ring
        };
        orbit_cameras(&ring, self.targets[0].1.bbox().center())
    }

    pub fn build(&self, cfg: &RenderConfig, width: usize, height: usize) -> Result<(PromptSpec, Vec<Camera>)> {
        let cams = self.cameras(width, height)?;
        let refs: Vec<(f64, &FieldParams)> = self.targets.iter().map(|(w, f)| (*w, f)).collect();
        let prompt = make_prompt_from_fields(self.prompt_id.clone(), &refs, &cams, cfg, self.prior_std)?;
        Ok((prompt, cams))
    }
}
