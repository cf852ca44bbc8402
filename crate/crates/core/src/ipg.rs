//! Identity-preserving refinement: an L1 + multi-scale pyramid distance
//! between renders of the edited and the source field, whose descent
//! direction is added to the distillation velocity with linearly decaying
//! weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::PromptSpec;
use crate::distill::{distill_velocity, LossHistory, NoiseSchedule, StepConfig};
use crate::error::{PnrError, Result};
use crate::field::FieldParams;
use crate::image::Image;
use crate::render::{render, render_loss_grad, Camera, ImageLoss, RenderConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Overall weight of the identity term against the distillation velocity.
    pub identity_weight: f64,
    pub lambda_l1: f64,
    pub lambda_p: f64,
    pub refine_steps: usize,
    pub decay_end_fraction: f64,
    pub levels: usize,
    /// Random ring cameras per IPG evaluation.
    pub ipg_cameras: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            identity_weight: 0.01,
            lambda_l1: 300.0,
            lambda_p: 30000.0,
            refine_steps: 1000,
            decay_end_fraction: 0.5,
            levels: 4,
            ipg_cameras: 1,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.identity_weight >= 0.0 && self.lambda_l1 >= 0.0 && self.lambda_p >= 0.0) {
            return Err(PnrError::Config("identity weights must be >= 0".into()));
        }
        if !(self.decay_end_fraction > 0.0 && self.decay_end_fraction <= 1.0) {
            return Err(PnrError::Config(format!(
                "decay_end_fraction must lie in (0, 1], got {}",
                self.decay_end_fraction
            )));
        }
        if self.levels == 0 {
            return Err(PnrError::Config("pyramid needs at least one level".into()));
        }
        if self.ipg_cameras == 0 {
            return Err(PnrError::Config("ipg_cameras must be >= 1".into()));
        }
        Ok(())
    }

    /// Weight multiplier at refinement step `tau`: one at the start, zero
    /// from `decay_end_fraction * refine_steps` on.
    pub fn lambda_scale(&self, tau: usize) -> f64 {
        let end = self.decay_end_fraction * self.refine_steps as f64;
        if end <= 0.0 {
            return 0.0;
        }
        (1.0 - tau as f64 / end).max(0.0)
    }
}

/// Gaussian pyramid: level 0 is the input, each further level is a
/// `[1 2 1] / 4` separable blur (edge-clamped) followed by 2x decimation.
#[derive(Clone, Debug, PartialEq)]
pub struct PerceptualFeatures {
    pub levels: Vec<Image>,
}

impl PerceptualFeatures {
    pub fn new(img: &Image, levels: usize) -> Self {
        let mut out = Vec::with_capacity(levels);
        out.push(img.clone());
        while out.len() < levels {
            let prev = out.last().unwrap();
            out.push(decimate(&blur(prev)));
        }
        Self { levels: out }
    }
}

fn blur_axis(img: &Image, horizontal: bool) -> Image {
    let (w, h) = (img.width(), img.height());
    let mut out = Image::zeros(w, h);
    let src = img.data();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (a, b) = if horizontal {
                ((y, x.saturating_sub(1)), (y, (x + 1).min(w - 1)))
            } else {
                ((y.saturating_sub(1), x), ((y + 1).min(h - 1), x))
            };
            for c in 0..3 {
                dst[3 * (y * w + x) + c] = 0.25 * src[3 * (a.0 * w + a.1) + c]
                    + 0.5 * src[3 * (y * w + x) + c]
                    + 0.25 * src[3 * (b.0 * w + b.1) + c];
            }
        }
    }
    out
}

fn blur_axis_adjoint(g: &Image, horizontal: bool) -> Image {
    let (w, h) = (g.width(), g.height());
    let mut out = Image::zeros(w, h);
    let src = g.data();
    let dst = out.data_mut();
    for y in 0..h {
        for x in 0..w {
            let (a, b) = if horizontal {
                ((y, x.saturating_sub(1)), (y, (x + 1).min(w - 1)))
            } else {
                ((y.saturating_sub(1), x), ((y + 1).min(h - 1), x))
            };
            for c in 0..3 {
                let v = src[3 * (y * w + x) + c];
                dst[3 * (a.0 * w + a.1) + c] += 0.25 * v;
                dst[3 * (y * w + x) + c] += 0.5 * v;
                dst[3 * (b.0 * w + b.1) + c] += 0.25 * v;
            }
        }
    }
    out
}

fn blur(img: &Image) -> Image {
    blur_axis(&blur_axis(img, true), false)
}

fn blur_adjoint(g: &Image) -> Image {
    blur_axis_adjoint(&blur_axis_adjoint(g, false), true)
}

fn half(n: usize) -> usize {
    (n / 2).max(1)
}

fn decimate(img: &Image) -> Image {
    let (w, h) = (half(img.width()), half(img.height()));
    let mut data = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        for x in 0..w {
            data.extend_from_slice(&img.pixel(2 * x, 2 * y));
        }
    }
    Image::from_data(w, h, data).expect("decimated size is consistent")
}

fn decimate_adjoint(g: &Image, width: usize, height: usize) -> Image {
    let mut out = Image::zeros(width, height);
    for y in 0..g.height() {
        for x in 0..g.width() {
            let p = g.pixel(x, y);
            let i = 3 * (2 * y * width + 2 * x);
            out.data_mut()[i..i + 3].copy_from_slice(&p);
        }
    }
    out
}

/// Maps a gradient on pyramid level `level` back to the input image.
fn pyramid_adjoint(g: &Image, sizes: &[(usize, usize)], level: usize) -> Image {
    let mut cur = g.clone();
    for l in (1..=level).rev() {
        let (w, h) = sizes[l - 1];
        cur = blur_adjoint(&decimate_adjoint(&cur, w, h));
    }
    cur
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `lambda_l1 * mean|a - b| + lambda_p * mean_l mean|pyr_l(a) - pyr_l(b)|`.
pub fn identity_distance(a: &Image, b: &Image, cfg: &RefineConfig) -> Result<f64> {
    IdentityLoss::from(cfg).eval(a, b).map(|(d, _)| d)
}

/// Identity distance as a differentiable image loss.
#[derive(Clone, Copy, Debug)]
pub struct IdentityLoss {
    pub lambda_l1: f64,
    pub lambda_p: f64,
    pub levels: usize,
}

impl From<&RefineConfig> for IdentityLoss {
    fn from(cfg: &RefineConfig) -> Self {
        Self {
            lambda_l1: cfg.lambda_l1,
            lambda_p: cfg.lambda_p,
            levels: cfg.levels.max(1),
        }
    }
}

impl ImageLoss for IdentityLoss {
    fn eval(&self, rendered: &Image, target: &Image) -> Result<(f64, Image)> {
        let diff = rendered.zip_map(target, |a, b| a - b)?;
        let n0 = diff.len() as f64;
        let mut value = self.lambda_l1 * diff.data().iter().map(|d| d.abs()).sum::<f64>() / n0;
        let mut grad = diff.map(|d| self.lambda_l1 * sign(d) / n0);

        if self.lambda_p != 0.0 {
            let pyr = PerceptualFeatures::new(&diff, self.levels);
            let sizes: Vec<(usize, usize)> = pyr.levels.iter().map(|l| (l.width(), l.height())).collect();
            let per_level = self.lambda_p / self.levels as f64;
            for (l, lvl) in pyr.levels.iter().enumerate() {
                let n = lvl.len() as f64;
                value += per_level * lvl.data().iter().map(|d| d.abs()).sum::<f64>() / n;
                let g = lvl.map(|d| per_level * sign(d) / n);
                let back = pyramid_adjoint(&g, &sizes, l);
                for (o, v) in grad.data_mut().iter_mut().zip(back.data()) {
                    *o += v;
                }
            }
        }
        Ok((value, grad))
    }
}

/// Descent direction `-grad_theta d(render(params), render(src))` from `cam`,
/// with the source render held constant. Also returns the distance.
pub fn ipg_grad(
    params: &FieldParams,
    src: &FieldParams,
    cam: &Camera,
    render_cfg: &RenderConfig,
    cfg: &RefineConfig,
) -> Result<(Vec<f64>, f64)> {
    if !params.same_shape(src) {
        return Err(PnrError::Dimension(format!(
            "edited field is {:?}, source is {:?}",
            params.dims(),
            src.dims()
        )));
    }
    let reference = render(src, cam, render_cfg)?;
    let (d, mut g) = render_loss_grad(params, cam, render_cfg, &IdentityLoss::from(cfg), &reference)?;
    for v in &mut g {
        *v = -*v;
    }
    Ok((g, d))
}

/// A camera on the same orbit as `template` (same radius, elevation, target
/// and intrinsics) at a uniformly random azimuth.
pub fn random_orbit_camera<R: Rng + ?Sized>(template: &Camera, rng: &mut R) -> Result<Camera> {
    let c = template.target;
    let d = [
        template.position[0] - c[0],
        template.position[1] - c[1],
        template.position[2] - c[2],
    ];
    let horiz = (d[0] * d[0] + d[2] * d[2]).sqrt();
    let az = 2.0 * std::f64::consts::PI * rng.random::<f64>();
    let (sa, ca) = az.sin_cos();
    Camera::new(
        [c[0] + horiz * sa, c[1] + d[1], c[2] + horiz * ca],
        c,
        template.up,
        template.fov_y,
        template.width,
        template.height,
    )
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineDiagnostics {
    pub step: usize,
    pub monitor_loss: f64,
    pub identity_distance: f64,
    pub lambda_scale: f64,
}

pub fn diagnostics_csv(diags: &[RefineDiagnostics]) -> String {
    let mut out = String::from("step,monitor_loss,identity_distance,lambda_scale\n");
    for d in diags {
        out.push_str(&format!(
            "{},{:e},{:e},{}\n",
            d.step, d.monitor_loss, d.identity_distance, d.lambda_scale
        ));
    }
    out
}

/// The two velocities of a refinement step and their sum.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineVelocity {
    pub edit: Vec<f64>,
    /// IPG descent direction, already multiplied by the decay factor.
    pub identity: Vec<f64>,
    pub total: Vec<f64>,
    pub diagnostics: RefineDiagnostics,
}

/// Shared state of a refinement run.
pub struct RefineContext<'a> {
    pub src: &'a FieldParams,
    pub prompt: &'a PromptSpec,
    pub cameras: &'a [Camera],
    pub render_cfg: &'a RenderConfig,
    pub step_cfg: &'a StepConfig,
    pub refine_cfg: &'a RefineConfig,
    pub sched: &'a NoiseSchedule,
    /// Schedule step of the first refinement step (the edit phase length).
    pub tau_offset: usize,
}

impl RefineContext<'_> {
    pub fn velocity<R: Rng + ?Sized>(
        &self,
        params: &FieldParams,
        tau_refine: usize,
        rng: &mut R,
    ) -> Result<RefineVelocity> {
        let (edit, monitor_loss) = distill_velocity(
            params,
            self.prompt,
            self.cameras,
            self.render_cfg,
            self.step_cfg,
            self.sched,
            self.tau_offset + tau_refine,
            rng,
        )?;
        let decay = self.refine_cfg.lambda_scale(tau_refine);
        let scale = self.refine_cfg.identity_weight * decay;
        let mut identity = vec![0.0; params.len()];
        let mut distance = 0.0;
        let n_cams = self.refine_cfg.ipg_cameras as f64;
        for _ in 0..self.refine_cfg.ipg_cameras {
            let cam = random_orbit_camera(&self.cameras[0], rng)?;
            if scale > 0.0 {
                let (g, d) = ipg_grad(params, self.src, &cam, self.render_cfg, self.refine_cfg)?;
                for (o, v) in identity.iter_mut().zip(&g) {
                    *o += scale * v / n_cams;
                }
                distance += d / n_cams;
            } else {
                let a = render(params, &cam, self.render_cfg)?;
                let b = render(self.src, &cam, self.render_cfg)?;
                distance += identity_distance(&a, &b, self.refine_cfg)? / n_cams;
            }
        }
        let total = edit.iter().zip(&identity).map(|(e, i)| e + i).collect();
        Ok(RefineVelocity {
            edit,
            identity,
            total,
            diagnostics: RefineDiagnostics {
                step: tau_refine,
                monitor_loss,
                identity_distance: distance,
                lambda_scale: decay,
            },
        })
    }

    /// One Euler step along the summed velocity.
    pub fn step<R: Rng + ?Sized>(
        &self,
        params: &FieldParams,
        tau_refine: usize,
        rng: &mut R,
    ) -> Result<(FieldParams, RefineDiagnostics)> {
        let v = self.velocity(params, tau_refine, rng)?;
        let mut next = params.clone();
        next.add_scaled(self.step_cfg.rate, &v.total)?;
        Ok((next, v.diagnostics))
    }

    /// `refine_steps` refinement steps. Returns the final field, the
    /// monitoring-loss history and per-step diagnostics.
    pub fn run<R: Rng + ?Sized>(
        &self,
        params: &FieldParams,
        rng: &mut R,
    ) -> Result<(FieldParams, LossHistory, Vec<RefineDiagnostics>)> {
        self.refine_cfg.validate()?;
        let mut current = params.clone();
        let mut history = LossHistory::default();
        let mut diags = Vec::with_capacity(self.refine_cfg.refine_steps);
        for tau in 0..self.refine_cfg.refine_steps {
            let (next, d) = self.step(&current, tau, rng)?;
            current = next;
            history.push(tau, d.monitor_loss);
            diags.push(d);
        }
        Ok((current, history, diags))
    }
}

/// Single refinement step; see [`RefineContext::step`].
pub fn refine_step<R: Rng + ?Sized>(
    ctx: &RefineContext<'_>,
    params: &FieldParams,
    tau_refine: usize,
    rng: &mut R,
) -> Result<(FieldParams, RefineDiagnostics)> {
    ctx.step(params, tau_refine, rng)
}

/// Full refinement loop; see [`RefineContext::run`].
pub fn run_refinement<R: Rng + ?Sized>(
    ctx: &RefineContext<'_>,
    params: &FieldParams,
    rng: &mut R,
) -> Result<(FieldParams, LossHistory, Vec<RefineDiagnostics>)> {
    ctx.run(params, rng)
}
