//! Dense voxel radiance field parameters.
//!
//! Raw parameters are stored pre-activation in one flat vector: the density
//! block (`n` entries) followed by the color block (`3n` entries, RGB
//! interleaved per voxel). Voxel `(x, y, z)` has linear index
//! `x + nx * (y + ny * z)`. Activations (softplus density, sigmoid color) are
//! applied at render time, so raw values are unconstrained reals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{PnrError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl GridDims {
    pub fn new(nx: usize, ny: usize, nz: usize) -> Result<Self> {
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(PnrError::Dimension(format!(
                "grid dims must be positive, got {nx}x{ny}x{nz}"
            )));
        }
        Ok(Self { nx, ny, nz })
    }

    pub fn cube(n: usize) -> Result<Self> {
        Self::new(n, n, n)
    }

    pub fn voxel_count(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn param_count(&self) -> usize {
        4 * self.voxel_count()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }
}

/// Axis-aligned bounding box in world units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bbox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Bbox {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        for a in 0..3 {
            if !(min[a].is_finite() && max[a].is_finite() && min[a] < max[a]) {
                return Err(PnrError::Dimension(format!(
                    "degenerate bbox on axis {a}: [{}, {}]",
                    min[a], max[a]
                )));
            }
        }
        Ok(Self { min, max })
    }

    /// The cube `[-half, half]^3`.
    pub fn centered(half: f64) -> Self {
        Self {
            min: [-half; 3],
            max: [half; 3],
        }
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn extent(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

impl Default for Bbox {
    fn default() -> Self {
        Self::centered(1.0)
    }
}

/// Flat parameter vector of a voxel radiance field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams {
    dims: GridDims,
    bbox: Bbox,
    raw: Vec<f64>,
}

impl FieldParams {
    /// Field with every raw density set to `density` and every raw color
    /// channel set to `color`.
    pub fn filled(dims: GridDims, bbox: Bbox, density: f64, color: f64) -> Self {
        let n = dims.voxel_count();
        let mut raw = vec![density; 4 * n];
        raw[n..].fill(color);
        Self { dims, bbox, raw }
    }

    pub fn from_parts(dims: GridDims, bbox: Bbox, raw_density: Vec<f64>, raw_color: Vec<f64>) -> Result<Self> {
        let n = dims.voxel_count();
        if raw_density.len() != n || raw_color.len() != 3 * n {
            return Err(PnrError::Dimension(format!(
                "expected {n} density and {} color entries, got {} and {}",
                3 * n,
                raw_density.len(),
                raw_color.len()
            )));
        }
        let mut raw = raw_density;
        raw.extend_from_slice(&raw_color);
        let p = Self { dims, bbox, raw };
        p.check_finite()?;
        Ok(p)
    }

    pub fn from_flat(dims: GridDims, bbox: Bbox, raw: Vec<f64>) -> Result<Self> {
        if raw.len() != dims.param_count() {
            return Err(PnrError::Dimension(format!(
                "expected {} raw parameters, got {}",
                dims.param_count(),
                raw.len()
            )));
        }
        let p = Self { dims, bbox, raw };
        p.check_finite()?;
        Ok(p)
    }

    pub fn dims(&self) -> GridDims {
        self.dims
    }

    pub fn bbox(&self) -> Bbox {
        self.bbox
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn raw_mut(&mut self) -> &mut [f64] {
        &mut self.raw
    }

    pub fn density(&self) -> &[f64] {
        &self.raw[..self.dims.voxel_count()]
    }

    pub fn density_mut(&mut self) -> &mut [f64] {
        let n = self.dims.voxel_count();
        &mut self.raw[..n]
    }

    pub fn color(&self) -> &[f64] {
        &self.raw[self.dims.voxel_count()..]
    }

    pub fn color_mut(&mut self) -> &mut [f64] {
        let n = self.dims.voxel_count();
        &mut self.raw[n..]
    }

    pub fn same_shape(&self, other: &FieldParams) -> bool {
        self.dims == other.dims
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.raw.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(PnrError::Numerical(format!("non-finite raw parameter at index {i}"))),
            None => Ok(()),
        }
    }

    /// `self += scale * dir`, rejecting results that leave the finite reals.
    pub fn add_scaled(&mut self, scale: f64, dir: &[f64]) -> Result<()> {
        if dir.len() != self.raw.len() {
            return Err(PnrError::Dimension(format!(
                "update has {} entries, field has {}",
                dir.len(),
                self.raw.len()
            )));
        }
        for (p, d) in self.raw.iter_mut().zip(dir) {
            *p += scale * d;
        }
        self.check_finite()
    }

    /// Rounds every raw value to the nearest `f32`. Checkpoints store 32-bit
    /// payloads, so quantized fields survive a save/load bit-exactly.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.raw {
            *v = f64::from(*v as f32);
        }
    }

    pub fn quantized_f32(&self) -> Self {
        let mut q = self.clone();
        q.quantize_f32();
        q
    }
}

/// Gaussian initialization distribution, one (mean, std) pair per parameter
/// group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitDistribution {
    pub density_mean: f64,
    pub density_std: f64,
    pub color_mean: f64,
    pub color_std: f64,
}

impl InitDistribution {
    pub fn new(density_mean: f64, density_std: f64, color_mean: f64, color_std: f64) -> Result<Self> {
        let d = Self {
            density_mean,
            density_std,
            color_mean,
            color_std,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite();
        if !(ok(self.density_mean) && ok(self.color_mean)) {
            return Err(PnrError::Config("init means must be finite".into()));
        }
        if !(self.density_std > 0.0 && self.density_std.is_finite()) {
            return Err(PnrError::Config(format!(
                "density_std must be > 0, got {}",
                self.density_std
            )));
        }
        if !(self.color_std > 0.0 && self.color_std.is_finite()) {
            return Err(PnrError::Config(format!(
                "color_std must be > 0, got {}",
                self.color_std
            )));
        }
        Ok(())
    }
}

impl Default for InitDistribution {
    fn default() -> Self {
        Self {
            density_mean: 0.0,
            density_std: 0.1,
            color_mean: 0.0,
            color_std: 0.1,
        }
    }
}

/// Draws a fresh random field. Values are rounded to `f32` so a sampled field
/// is exactly representable in a checkpoint.
pub fn sample_init(dist: &InitDistribution, dims: GridDims, bbox: Bbox, seed: u64) -> Result<FieldParams> {
    dist.validate()?;
    GridDims::new(dims.nx, dims.ny, dims.nz)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let density = Normal::new(dist.density_mean, dist.density_std).map_err(|e| PnrError::Config(e.to_string()))?;
    let color = Normal::new(dist.color_mean, dist.color_std).map_err(|e| PnrError::Config(e.to_string()))?;
    let n = dims.voxel_count();
    let mut raw = Vec::with_capacity(4 * n);
    raw.extend((0..n).map(|_| f64::from(density.sample(&mut rng) as f32)));
    raw.extend((0..3 * n).map(|_| f64::from(color.sample(&mut rng) as f32)));
    Ok(FieldParams { dims, bbox, raw })
}

/// Component-wise `(1 - eta) * src + eta * rand`.
pub fn lerp_params(src: &FieldParams, rand: &FieldParams, eta: f64) -> Result<FieldParams> {
    check_eta(eta)?;
    if !src.same_shape(rand) {
        return Err(PnrError::Dimension(format!(
            "cannot interpolate {:?} with {:?}",
            src.dims, rand.dims
        )));
    }
    let raw = src
        .raw
        .iter()
        .zip(&rand.raw)
        .map(|(&s, &r)| (1.0 - eta) * s + eta * r)
        .collect();
    Ok(FieldParams {
        dims: src.dims,
        bbox: src.bbox,
        raw,
    })
}

/// Interpolates the source toward a fresh random initialization drawn with
/// `seed`. The interpolation base is always `src` itself.
pub fn perturb(src: &FieldParams, dist: &InitDistribution, eta: f64, seed: u64) -> Result<FieldParams> {
    check_eta(eta)?;
    let fresh = sample_init(dist, src.dims, src.bbox, seed)?;
    lerp_params(src, &fresh, eta)
}

fn check_eta(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(PnrError::Config(format!("eta must lie in [0, 1], got {eta}")));
    }
    Ok(())
}
