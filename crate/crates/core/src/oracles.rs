//! Brute-force reference computations used to check the analytic and
//! hand-differentiated code paths: Monte-Carlo posterior means, central
//! finite differences, empirical moments and a two-sample KS test.
//!
//! Nothing here calls into the renderer's or denoiser's numerical kernels;
//! the analytic denoiser is only used as the comparison target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::denoiser::{denoise, NoiseLevel, PromptSpec};
use crate::error::{PnrError, Result};
use crate::field::FieldParams;
use crate::image::Image;

pub const DEFAULT_K: f64 = 3.0;
pub const DEFAULT_ABS_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub name: String,
    pub estimate: Vec<f64>,
    pub stderr: Vec<f64>,
    pub samples: usize,
    pub target: Vec<f64>,
    pub k: f64,
    pub abs_tol: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn new(
        name: impl Into<String>,
        estimate: Vec<f64>,
        stderr: Vec<f64>,
        samples: usize,
        target: Vec<f64>,
        k: f64,
        abs_tol: f64,
    ) -> Self {
        let pass = estimate
            .iter()
            .zip(&stderr)
            .zip(&target)
            .all(|((e, s), t)| (e - t).abs() <= k * s + abs_tol);
        Self {
            name: name.into(),
            estimate,
            stderr,
            samples,
            target,
            k,
            abs_tol,
            pass,
        }
    }

    /// Largest `|estimate - target| / stderr` over all entries.
    pub fn worst_z(&self) -> f64 {
        self.estimate
            .iter()
            .zip(&self.stderr)
            .zip(&self.target)
            .map(|((e, s), t)| if *s > 0.0 { (e - t).abs() / s } else { 0.0 })
            .fold(0.0, f64::max)
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Running self-normalized importance sums, kept relative to the largest
/// log-weight seen so far.
#[derive(Clone)]
struct WeightedSums {
    log_max: f64,
    w: f64,
    w2: f64,
    wx: Vec<f64>,
    w2x: Vec<f64>,
    w2xx: Vec<f64>,
}

impl WeightedSums {
    fn new(dim: usize) -> Self {
        Self {
            log_max: f64::NEG_INFINITY,
            w: 0.0,
            w2: 0.0,
            wx: vec![0.0; dim],
            w2x: vec![0.0; dim],
            w2xx: vec![0.0; dim],
        }
    }

    fn rescale(&mut self, new_max: f64) {
        if self.log_max == f64::NEG_INFINITY {
            self.log_max = new_max;
            return;
        }
        let f = (self.log_max - new_max).exp();
        let f2 = f * f;
        self.w *= f;
        self.w2 *= f2;
        self.wx.iter_mut().for_each(|v| *v *= f);
        self.w2x.iter_mut().for_each(|v| *v *= f2);
        self.w2xx.iter_mut().for_each(|v| *v *= f2);
        self.log_max = new_max;
    }

    fn add(&mut self, log_w: f64, x: &[f64]) {
        if log_w > self.log_max {
            self.rescale(log_w);
        }
        let w = (log_w - self.log_max).exp();
        let w2 = w * w;
        self.w += w;
        self.w2 += w2;
        for i in 0..x.len() {
            self.wx[i] += w * x[i];
            self.w2x[i] += w2 * x[i];
            self.w2xx[i] += w2 * x[i] * x[i];
        }
    }

    fn merge(mut self, mut other: WeightedSums) -> WeightedSums {
        if other.log_max == f64::NEG_INFINITY {
            return self;
        }
        if self.log_max == f64::NEG_INFINITY {
            return other;
        }
        let m = self.log_max.max(other.log_max);
        self.rescale(m);
        other.rescale(m);
        self.w += other.w;
        self.w2 += other.w2;
        for i in 0..self.wx.len() {
            self.wx[i] += other.wx[i];
            self.w2x[i] += other.w2x[i];
            self.w2xx[i] += other.w2xx[i];
        }
        self
    }
}

const MC_CHUNK: usize = 1 << 14;

/// Self-normalized importance estimate of `E[x | y]`: `x` is drawn from the
/// view's mixture prior and weighted by the noise likelihood
/// `N(y; x, sigma^2 I)`. Compared against the analytic denoiser at
/// `k = 3` standard errors plus `1e-6`.
pub fn mc_posterior_mean(
    prompt: &PromptSpec,
    view: usize,
    y: &Image,
    sigma: NoiseLevel,
    samples: usize,
    seed: u64,
) -> Result<OracleReport> {
    if samples < 100 {
        return Err(PnrError::Config(format!("need at least 100 samples, got {samples}")));
    }
    let target = denoise(prompt, view, y, sigma)?.into_data();
    let name = format!("mc_posterior_mean[{}:{view}]", prompt.prompt_id());
    if sigma.sigma() == 0.0 {
        let n = y.len();
        return Ok(OracleReport::new(
            name,
            y.data().to_vec(),
            vec![0.0; n],
            samples,
            target,
            DEFAULT_K,
            DEFAULT_ABS_TOL,
        ));
    }
    let prior = prompt.view(view)?;
    let comps: Vec<(f64, &[f64])> = prior.components().iter().map(|c| (c.weight, c.mean.data())).collect();
    let s = prompt.prior_std();
    let inv_two_var = 1.0 / (2.0 * sigma.sigma() * sigma.sigma());
    let dim = y.len();
    let yd = y.data();

    let chunks = samples.div_ceil(MC_CHUNK);
    let sums = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = MC_CHUNK.min(samples - c * MC_CHUNK);
            let mut acc = WeightedSums::new(dim);
            let mut x = vec![0.0; dim];
            for _ in 0..n {
                let u: f64 = rng.random();
                let mut cum = 0.0;
                let mut mean = comps[comps.len() - 1].1;
                for (w, m) in &comps {
                    cum += w;
                    if u < cum {
                        mean = m;
                        break;
                    }
                }
                let mut d2 = 0.0;
                for i in 0..dim {
                    let z: f64 = rng.sample(StandardNormal);
                    x[i] = mean[i] + s * z;
                    d2 += (yd[i] - x[i]) * (yd[i] - x[i]);
                }
                acc.add(-d2 * inv_two_var, &x);
            }
            acc
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(WeightedSums::new(dim), WeightedSums::merge);

    let ess = sums.w * sums.w / sums.w2;
    if !(ess >= 10.0) {
        return Err(PnrError::Numerical(format!(
            "importance weights degenerate (effective sample size {ess:.1}); use smaller images or a larger sigma"
        )));
    }
    let estimate: Vec<f64> = sums.wx.iter().map(|v| v / sums.w).collect();
    let stderr: Vec<f64> = (0..dim)
        .map(|i| {
            let e = estimate[i];
            let num = sums.w2xx[i] - 2.0 * e * sums.w2x[i] + e * e * sums.w2;
            (num.max(0.0)).sqrt() / sums.w
        })
        .collect();
    Ok(OracleReport::new(
        name,
        estimate,
        stderr,
        samples,
        target,
        DEFAULT_K,
        DEFAULT_ABS_TOL,
    ))
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for each
/// coordinate `i` in `coords`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], coords: &[usize], h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(PnrError::Config(format!("finite-difference step must be > 0, got {h}")));
    }
    let mut work = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            if i >= x.len() {
                return Err(PnrError::Dimension(format!("coordinate {i} out of range {}", x.len())));
            }
            work[i] = x[i] + h;
            let up = f(&work);
            work[i] = x[i] - h;
            let down = f(&work);
            work[i] = x[i];
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Central-difference gradient of a loss over field parameters at the
/// selected raw-parameter coordinates.
pub fn finite_diff_grad(
    loss: impl Fn(&FieldParams) -> f64,
    params: &FieldParams,
    coords: &[usize],
    h: f64,
) -> Result<Vec<f64>> {
    let dims = params.dims();
    let bbox = params.bbox();
    central_difference(
        |raw| {
            let p = FieldParams::from_flat(dims, bbox, raw.to_vec()).expect("perturbed field stays finite");
            loss(&p)
        },
        params.raw(),
        coords,
        h,
    )
}

/// Unbiased per-entry mean and variance over a set of fields.
pub fn empirical_stats(samples: &[FieldParams]) -> Result<(Vec<f64>, Vec<f64>)> {
    if samples.len() < 2 {
        return Err(PnrError::Config(format!(
            "need at least 2 samples, got {}",
            samples.len()
        )));
    }
    let len = samples[0].len();
    if samples.iter().any(|s| s.len() != len) {
        return Err(PnrError::Dimension("samples have different shapes".into()));
    }
    let n = samples.len() as f64;
    let mut mean = vec![0.0; len];
    for s in samples {
        for (m, v) in mean.iter_mut().zip(s.raw()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; len];
    for s in samples {
        for ((acc, v), m) in var.iter_mut().zip(s.raw()).zip(&mean) {
            *acc += (v - m) * (v - m);
        }
    }
    var.iter_mut().for_each(|v| *v /= n - 1.0);
    Ok((mean, var))
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic critical value of the two-sample KS statistic at level `alpha`.
pub fn ks_critical(alpha: f64, n: usize, m: usize) -> f64 {
    let c = (-(0.5 * alpha).ln() / 2.0).sqrt();
    c * ((n + m) as f64 / (n * m) as f64).sqrt()
}
