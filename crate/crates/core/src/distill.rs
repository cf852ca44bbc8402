//! Score distillation as an explicit-Euler generative ODE over field
//! parameters, with multi-view averaging and an annealed noise-level range.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::denoiser::{denoise, NoiseLevel, PromptSpec};
use crate::error::{PnrError, Result};
use crate::field::FieldParams;
use crate::image::Image;
use crate::render::{apply_image_grad, render, Camera, RenderConfig};

/// Annealed noise-level range. Bounds are fractions of `sigma_max`, moved
/// linearly from `start` to `end` over the first `anneal_end_fraction` of
/// `total_steps` and held at `end` afterwards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSchedule {
    pub start: (f64, f64),
    pub end: (f64, f64),
    pub anneal_end_fraction: f64,
    pub total_steps: usize,
    pub sigma_max: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self {
            start: (0.75, 0.75),
            end: (0.02, 0.4),
            anneal_end_fraction: 0.8,
            total_steps: 1500,
            sigma_max: 0.5,
        }
    }
}

impl NoiseSchedule {
    pub fn with_total_steps(self, total_steps: usize) -> Self {
        Self { total_steps, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| (0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi) && lo <= hi;
        if !ok(self.start) || !ok(self.end) {
            return Err(PnrError::Config(format!(
                "schedule bounds must satisfy 0 <= min <= max <= 1, got {:?} -> {:?}",
                self.start, self.end
            )));
        }
        if self.end.0 > self.start.0 || self.end.1 > self.start.1 {
            return Err(PnrError::Config("schedule bounds must not increase over time".into()));
        }
        if !(self.anneal_end_fraction > 0.0 && self.anneal_end_fraction <= 1.0) {
            return Err(PnrError::Config(format!(
                "anneal_end_fraction must lie in (0, 1], got {}",
                self.anneal_end_fraction
            )));
        }
        if !(self.sigma_max >= 0.0 && self.sigma_max.is_finite()) {
            return Err(PnrError::Config(format!(
                "sigma_max must be >= 0, got {}",
                self.sigma_max
            )));
        }
        Ok(())
    }

    /// Fraction bounds `(f_min, f_max)` in effect at step `tau`.
    pub fn bounds(&self, tau: usize) -> (f64, f64) {
        let anneal_steps = self.anneal_end_fraction * self.total_steps as f64;
        let f = if anneal_steps <= 0.0 {
            1.0
        } else {
            (tau as f64 / anneal_steps).min(1.0)
        };
        (
            (1.0 - f) * self.start.0 + f * self.end.0,
            (1.0 - f) * self.start.1 + f * self.end.1,
        )
    }

    /// Draws a fraction uniformly within the bounds at `tau`.
    pub fn sample_fraction<R: Rng + ?Sized>(&self, tau: usize, rng: &mut R) -> f64 {
        let (lo, hi) = self.bounds(tau);
        let u: f64 = rng.random();
        (lo + (hi - lo) * u).clamp(lo, hi)
    }
}

/// `sigma = sigma_max * U(f_min(tau), f_max(tau))`.
pub fn sample_sigma<R: Rng + ?Sized>(sched: &NoiseSchedule, tau: usize, rng: &mut R) -> NoiseLevel {
    NoiseLevel::new(sched.sigma_max * sched.sample_fraction(tau, rng))
        .expect("validated schedule yields finite non-negative sigma")
}

/// Weighting `omega(sigma)` applied to the denoiser residual.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Unit,
    /// `sigma^2 / (s^2 + sigma^2)` with `s` the prompt's prior std.
    SnrLike,
}

impl Weighting {
    pub fn weight(self, sigma: NoiseLevel, prior_std: f64) -> f64 {
        match self {
            Weighting::Unit => 1.0,
            Weighting::SnrLike => {
                let v = sigma.sigma() * sigma.sigma();
                let s2 = prior_std * prior_std;
                if v + s2 == 0.0 {
                    0.0
                } else {
                    v / (s2 + v)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepConfig {
    pub rate: f64,
    pub weighting: Weighting,
    pub noise_samples: usize,
    pub seed: u64,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            rate: 8.0,
            weighting: Weighting::Unit,
            noise_samples: 1,
            seed: 0,
        }
    }
}

impl StepConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(PnrError::Config(format!(
                "learning rate must be > 0, got {}",
                self.rate
            )));
        }
        if self.noise_samples == 0 {
            return Err(PnrError::Config("noise_samples must be >= 1".into()));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// Per-step monitoring losses, append-only.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub steps: Vec<usize>,
    pub losses: Vec<f64>,
}

impl LossHistory {
    pub fn push(&mut self, step: usize, loss: f64) {
        self.steps.push(step);
        self.losses.push(loss);
    }

    pub fn len(&self) -> usize {
        self.losses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.losses.is_empty()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss\n");
        for (s, l) in self.steps.iter().zip(&self.losses) {
            out.push_str(&format!("{s},{l:e}\n"));
        }
        out
    }
}

/// `omega(sigma) * (D(z + n; sigma) - z)` for one noise draw, together with
/// the monitoring loss `0.5 * mean(residual^2)`.
pub(crate) fn residual_and_loss<R: Rng + ?Sized>(
    prompt: &PromptSpec,
    view: usize,
    z: &Image,
    sigma: NoiseLevel,
    weighting: Weighting,
    rng: &mut R,
) -> Result<(Image, f64)> {
    let s = sigma.sigma();
    let mut noisy = z.clone();
    if s > 0.0 {
        for v in noisy.data_mut() {
            *v += s * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let d = denoise(prompt, view, &noisy, sigma)?;
    let w = weighting.weight(sigma, prompt.prior_std());
    let res = d.zip_map(z, |a, b| w * (a - b))?;
    let loss = 0.5 * res.data().iter().map(|r| r * r).sum::<f64>() / res.len() as f64;
    Ok((res, loss))
}

/// Draws `n ~ N(0, sigma^2 I)` and returns the ascent residual
/// `omega(sigma) * (D(z + n; sigma) - z)`.
pub fn sds_image_residual<R: Rng + ?Sized>(
    prompt: &PromptSpec,
    view: usize,
    z: &Image,
    sigma: NoiseLevel,
    weighting: Weighting,
    rng: &mut R,
) -> Result<Image> {
    residual_and_loss(prompt, view, z, sigma, weighting, rng).map(|(r, _)| r)
}

/// Multi-view distillation velocity at step `tau`: the view average of the
/// residuals pulled back through the renderer. Returns the velocity and the
/// monitoring loss.
pub fn distill_velocity<R: Rng + ?Sized>(
    params: &FieldParams,
    prompt: &PromptSpec,
    cameras: &[Camera],
    render_cfg: &RenderConfig,
    step_cfg: &StepConfig,
    sched: &NoiseSchedule,
    tau: usize,
    rng: &mut R,
) -> Result<(Vec<f64>, f64)> {
    if cameras.len() != prompt.view_count() {
        return Err(PnrError::Config(format!(
            "{} cameras for a {}-view prompt",
            cameras.len(),
            prompt.view_count()
        )));
    }
    let n_views = cameras.len() as f64;
    let n_draws = step_cfg.noise_samples as f64;
    let mut velocity = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (view, cam) in cameras.iter().enumerate() {
        let z = render(params, cam, render_cfg)?;
        let mut acc = Image::zeros(z.width(), z.height());
        for _ in 0..step_cfg.noise_samples {
            let sigma = sample_sigma(sched, tau, rng);
            let (res, l) = residual_and_loss(prompt, view, &z, sigma, step_cfg.weighting, rng)?;
            for (a, r) in acc.data_mut().iter_mut().zip(res.data()) {
                *a += r / n_draws;
            }
            loss += l / (n_draws * n_views);
        }
        let g = apply_image_grad(params, cam, render_cfg, &acc)?;
        for (v, gi) in velocity.iter_mut().zip(&g) {
            *v += gi / n_views;
        }
    }
    Ok((velocity, loss))
}

/// One explicit-Euler step `theta += rate * velocity`.
pub fn mv_step<R: Rng + ?Sized>(
    params: &FieldParams,
    prompt: &PromptSpec,
    cameras: &[Camera],
    render_cfg: &RenderConfig,
    step_cfg: &StepConfig,
    sched: &NoiseSchedule,
    tau: usize,
    rng: &mut R,
) -> Result<(FieldParams, f64)> {
    let (velocity, loss) = distill_velocity(params, prompt, cameras, render_cfg, step_cfg, sched, tau, rng)?;
    let mut next = params.clone();
    next.add_scaled(step_cfg.rate, &velocity)?;
    Ok((next, loss))
}

/// Runs `steps` distillation steps from `tau = 0`, seeded by `step_cfg.seed`.
pub fn run_distillation(
    params: &FieldParams,
    prompt: &PromptSpec,
    cameras: &[Camera],
    render_cfg: &RenderConfig,
    step_cfg: &StepConfig,
    sched: &NoiseSchedule,
    steps: usize,
) -> Result<(FieldParams, LossHistory)> {
    step_cfg.validate()?;
    sched.validate()?;
    let mut rng = step_cfg.rng();
    let mut current = params.clone();
    let mut history = LossHistory::default();
    for tau in 0..steps {
        let (next, loss) = mv_step(&current, prompt, cameras, render_cfg, step_cfg, sched, tau, &mut rng)?;
        current = next;
        history.push(tau, loss);
    }
    Ok((current, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let s = NoiseSchedule::default().with_total_steps(1000);
        assert_eq!(s.bounds(0), (0.75, 0.75));
        assert_eq!(s.bounds(800), (0.02, 0.4));
        assert_eq!(s.bounds(999), (0.02, 0.4));
        let (lo, hi) = s.bounds(400);
        assert!((lo - 0.385).abs() < 1e-12 && (hi - 0.575).abs() < 1e-12);
    }

    #[test]
    fn tau_zero_sigma_is_deterministic() {
        let s = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(sample_sigma(&s, 0, &mut rng).sigma(), 0.75 * s.sigma_max);
        }
    }

    #[test]
    fn schedule_validation() {
        let mut s = NoiseSchedule::default();
        assert!(s.validate().is_ok());
        s.end = (0.8, 0.9);
        assert!(s.validate().is_err());
        s = NoiseSchedule {
            anneal_end_fraction: 0.0,
            ..Default::default()
        };
        assert!(s.validate().is_err());
        s = NoiseSchedule {
            start: (0.5, 0.4),
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn zero_sigma_residual_is_zero() {
        let p = PromptSpec::new("p", vec![vec![(1.0, Image::filled(2, 2, [0.3; 3]))]], 0.05).unwrap();
        let z = Image::filled(2, 2, [0.7; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = sds_image_residual(&p, 0, &z, NoiseLevel::ZERO, Weighting::Unit, &mut rng).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
        let r = sds_image_residual(&p, 0, &z, NoiseLevel::ZERO, Weighting::SnrLike, &mut rng).unwrap();
        assert!(r.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn snr_weighting() {
        let w = Weighting::SnrLike.weight(NoiseLevel::new(0.05).unwrap(), 0.05);
        assert!((w - 0.5).abs() < 1e-15);
        assert_eq!(Weighting::Unit.weight(NoiseLevel::new(3.0).unwrap(), 0.05), 1.0);
    }

    #[test]
    fn history_csv() {
        let mut h = LossHistory::default();
        h.push(0, 1.5);
        h.push(1, 0.25);
        assert_eq!(h.to_csv(), "step,loss\n0,1.5e0\n1,2.5e-1\n");
    }

    #[test]
    fn step_config_validation() {
        assert!(StepConfig {
            rate: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(StepConfig {
            noise_samples: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
