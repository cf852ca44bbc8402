//! Pinhole cameras and emission-absorption volume rendering of a voxel field,
//! with hand-written reverse-mode gradients over the compositing recurrence.

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{PnrError, Result};
use crate::field::{Bbox, FieldParams, GridDims};
use crate::image::Image;

type Vec3 = Vector3<f64>;

/// Rows handled by one gradient buffer. Fixed so the reduction order, and
/// therefore every gradient bit, is independent of the thread count.
const ROWS_PER_CHUNK: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub position: [f64; 3],
    pub target: [f64; 3],
    pub up: [f64; 3],
    /// Vertical field of view in radians.
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        position: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            position,
            target,
            up,
            fov_y,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_y > 0.0 && self.fov_y < std::f64::consts::PI) {
            return Err(PnrError::Config(format!("fov must lie in (0, pi), got {}", self.fov_y)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(PnrError::Dimension("camera resolution must be at least 1x1".into()));
        }
        let fwd = Vec3::from(self.target) - Vec3::from(self.position);
        if fwd.norm() == 0.0 || !fwd.norm().is_finite() {
            return Err(PnrError::Config("camera position coincides with its target".into()));
        }
        if fwd.cross(&Vec3::from(self.up)).norm() <= 1e-12 * fwd.norm() {
            return Err(PnrError::Config(
                "camera up vector is parallel to the view direction".into(),
            ));
        }
        Ok(())
    }

    /// Same pose at a different resolution.
    pub fn with_resolution(&self, width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            ..self.clone()
        }
    }

    fn basis(&self) -> RayBasis {
        let origin = Vec3::from(self.position);
        let forward = (Vec3::from(self.target) - origin).normalize();
        let right = forward.cross(&Vec3::from(self.up)).normalize();
        let up = right.cross(&forward);
        let tan_half = (0.5 * self.fov_y).tan();
        let aspect = self.width as f64 / self.height as f64;
        RayBasis {
            origin,
            forward,
            right: right * (tan_half * aspect),
            up: up * tan_half,
            width: self.width as f64,
            height: self.height as f64,
        }
    }
}

struct RayBasis {
    origin: Vec3,
    forward: Vec3,
    right: Vec3,
    up: Vec3,
    width: f64,
    height: f64,
}

impl RayBasis {
    fn direction(&self, px: usize, py: usize) -> Vec3 {
        let sx = 2.0 * (px as f64 + 0.5) / self.width - 1.0;
        let sy = 1.0 - 2.0 * (py as f64 + 0.5) / self.height;
        (self.forward + self.right * sx + self.up * sy).normalize()
    }
}

/// Parameters of a ring of cameras orbiting a point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraRing {
    pub count: usize,
    pub radius: f64,
    /// Elevation above the horizontal plane, radians.
    pub elevation: f64,
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraRing {
    fn default() -> Self {
        Self {
            count: 4,
            radius: 3.0,
            elevation: 0.35,
            fov_y: 0.75,
            width: 32,
            height: 32,
        }
    }
}

/// `n` cameras evenly spaced in azimuth, all looking at `center`. Azimuth 0
/// sits on the +z axis; y is up.
pub fn orbit_cameras(ring: &CameraRing, center: [f64; 3]) -> Result<Vec<Camera>> {
    if ring.count == 0 {
        return Err(PnrError::Config("camera ring needs at least one camera".into()));
    }
    if !(ring.radius > 0.0) {
        return Err(PnrError::Config(format!(
            "ring radius must be > 0, got {}",
            ring.radius
        )));
    }
    (0..ring.count)
        .map(|k| {
            let az = 2.0 * std::f64::consts::PI * k as f64 / ring.count as f64;
            let (se, ce) = ring.elevation.sin_cos();
            let (sa, ca) = az.sin_cos();
            let pos = [
                center[0] + ring.radius * ce * sa,
                center[1] + ring.radius * se,
                center[2] + ring.radius * ce * ca,
            ];
            Camera::new(pos, center, [0.0, 1.0, 0.0], ring.fov_y, ring.width, ring.height)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub samples: usize,
    pub background: [f64; 3],
    pub near: f64,
    pub far: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            samples: 64,
            background: [1.0, 1.0, 1.0],
            near: 1.2,
            far: 4.8,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples < 2 {
            return Err(PnrError::Config(format!(
                "need at least 2 samples per ray, got {}",
                self.samples
            )));
        }
        if !(self.near < self.far) || !self.near.is_finite() || !self.far.is_finite() {
            return Err(PnrError::Config(format!(
                "need near < far, got {} and {}",
                self.near, self.far
            )));
        }
        Ok(())
    }

    fn step(&self) -> f64 {
        (self.far - self.near) / self.samples as f64
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Trilinear stencil over voxel centers, clamped at the grid boundary.
#[derive(Clone, Copy)]
struct Stencil {
    idx: [usize; 8],
    w: [f64; 8],
}

fn stencil(dims: GridDims, bbox: &Bbox, p: Vec3) -> Stencil {
    let n = [dims.nx, dims.ny, dims.nz];
    let ext = bbox.extent();
    let mut i0 = [0usize; 3];
    let mut i1 = [0usize; 3];
    let mut f = [0.0f64; 3];
    for a in 0..3 {
        if n[a] == 1 {
            continue;
        }
        let u = ((p[a] - bbox.min[a]) / ext[a] * n[a] as f64 - 0.5).clamp(0.0, (n[a] - 1) as f64);
        let lo = (u.floor() as usize).min(n[a] - 2);
        i0[a] = lo;
        i1[a] = lo + 1;
        f[a] = u - lo as f64;
    }
    let mut s = Stencil {
        idx: [0; 8],
        w: [0.0; 8],
    };
    for c in 0..8 {
        let (bx, by, bz) = (c & 1, (c >> 1) & 1, (c >> 2) & 1);
        let x = if bx == 1 { i1[0] } else { i0[0] };
        let y = if by == 1 { i1[1] } else { i0[1] };
        let z = if bz == 1 { i1[2] } else { i0[2] };
        let wx = if bx == 1 { f[0] } else { 1.0 - f[0] };
        let wy = if by == 1 { f[1] } else { 1.0 - f[1] };
        let wz = if bz == 1 { f[2] } else { 1.0 - f[2] };
        s.idx[c] = dims.index(x, y, z);
        s.w[c] = wx * wy * wz;
    }
    s
}

/// Per-sample forward intermediates kept for the backward pass.
struct Sample {
    st: Stencil,
    raw_density: f64,
    alpha: f64,
    color: [f64; 3],
}

struct RayTrace {
    samples: Vec<Sample>,
    /// Transmittance in front of each sample.
    trans: Vec<f64>,
    trans_final: f64,
    rgb: [f64; 3],
}

fn trace_ray(params: &FieldParams, cfg: &RenderConfig, origin: Vec3, dir: Vec3) -> RayTrace {
    let dims = params.dims();
    let bbox = params.bbox();
    let density = params.density();
    let color = params.color();
    let delta = cfg.step();

    let mut samples = Vec::new();
    let mut trans = Vec::new();
    let mut t_acc = 1.0;
    let mut rgb = [0.0; 3];
    for i in 0..cfg.samples {
        let t = cfg.near + (i as f64 + 0.5) * delta;
        let p = origin + dir * t;
        if !bbox.contains([p.x, p.y, p.z]) {
            continue;
        }
        let st = stencil(dims, &bbox, p);
        let mut rd = 0.0;
        let mut rc = [0.0; 3];
        for k in 0..8 {
            let (j, w) = (st.idx[k], st.w[k]);
            rd += w * density[j];
            for (ch, v) in rc.iter_mut().enumerate() {
                *v += w * color[3 * j + ch];
            }
        }
        let sigma = softplus(rd);
        let alpha = -(-sigma * delta).exp_m1();
        let c = rc.map(sigmoid);
        let w = t_acc * alpha;
        for ch in 0..3 {
            rgb[ch] += w * c[ch];
        }
        trans.push(t_acc);
        samples.push(Sample {
            st,
            raw_density: rd,
            alpha,
            color: c,
        });
        t_acc *= 1.0 - alpha;
    }
    for ch in 0..3 {
        rgb[ch] += t_acc * cfg.background[ch];
    }
    RayTrace {
        samples,
        trans,
        trans_final: t_acc,
        rgb,
    }
}

/// Backpropagates `g = dL/dpixel` through one ray into `grad` (flat raw
/// parameter layout).
fn backprop_ray(trace: &RayTrace, cfg: &RenderConfig, g: [f64; 3], n_vox: usize, grad: &mut [f64]) {
    let delta = cfg.step();
    let (dens_grad, col_grad) = grad.split_at_mut(n_vox);
    // rest = g . (sum_{j>i} T_j a_j c_j + T_N bg)
    let mut rest = trace.trans_final * (0..3).map(|c| g[c] * cfg.background[c]).sum::<f64>();
    for (i, s) in trace.samples.iter().enumerate().rev() {
        let t_i = trace.trans[i];
        let w = t_i * s.alpha;
        let gc: f64 = (0..3).map(|c| g[c] * s.color[c]).sum();
        let t_next = t_i * (1.0 - s.alpha);
        let d_sigma = delta * (t_next * gc - rest);
        let d_raw_density = d_sigma * sigmoid(s.raw_density);
        let d_raw_color = [0, 1, 2].map(|c| g[c] * w * s.color[c] * (1.0 - s.color[c]));
        for k in 0..8 {
            let (j, sw) = (s.st.idx[k], s.st.w[k]);
            if sw == 0.0 {
                continue;
            }
            dens_grad[j] += sw * d_raw_density;
            for c in 0..3 {
                col_grad[3 * j + c] += sw * d_raw_color[c];
            }
        }
        rest += w * gc;
    }
}

/// Renders the field from `cam`. Deterministic.
pub fn render(params: &FieldParams, cam: &Camera, cfg: &RenderConfig) -> Result<Image> {
    cam.validate()?;
    cfg.validate()?;
    let basis = cam.basis();
    let w = cam.width;
    let data: Vec<f64> = (0..cam.height)
        .into_par_iter()
        .flat_map_iter(|py| {
            let basis = &basis;
            (0..w).flat_map(move |px| trace_ray(params, cfg, basis.origin, basis.direction(px, py)).rgb)
        })
        .collect();
    Image::from_data(cam.width, cam.height, data)
}

/// Vector-Jacobian product `image_grad^T * d(render)/d(raw params)`.
pub fn apply_image_grad(
    params: &FieldParams,
    cam: &Camera,
    cfg: &RenderConfig,
    image_grad: &Image,
) -> Result<Vec<f64>> {
    cam.validate()?;
    cfg.validate()?;
    if image_grad.width() != cam.width || image_grad.height() != cam.height {
        return Err(PnrError::Dimension(format!(
            "image gradient is {}x{}, camera renders {}x{}",
            image_grad.width(),
            image_grad.height(),
            cam.width,
            cam.height
        )));
    }
    let basis = cam.basis();
    let n_vox = params.dims().voxel_count();
    let n_par = params.len();
    let w = cam.width;
    let rows: Vec<usize> = (0..cam.height).collect();
    let partials: Vec<Vec<f64>> = rows
        .par_chunks(ROWS_PER_CHUNK)
        .map(|chunk| {
            let mut grad = vec![0.0; n_par];
            for &py in chunk {
                for px in 0..w {
                    let g = image_grad.pixel(px, py);
                    if g == [0.0; 3] {
                        continue;
                    }
                    let trace = trace_ray(params, cfg, basis.origin, basis.direction(px, py));
                    backprop_ray(&trace, cfg, g, n_vox, &mut grad);
                }
            }
            grad
        })
        .collect();
    let mut total = vec![0.0; n_par];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            *t += p;
        }
    }
    Ok(total)
}

/// A differentiable scalar loss on a rendered image.
pub trait ImageLoss {
    /// Returns the loss and its gradient with respect to `rendered`.
    fn eval(&self, rendered: &Image, target: &Image) -> Result<(f64, Image)>;
}

/// `0.5 * ||rendered - target||^2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct L2Loss;

impl ImageLoss for L2Loss {
    fn eval(&self, rendered: &Image, target: &Image) -> Result<(f64, Image)> {
        let diff = rendered.zip_map(target, |a, b| a - b)?;
        let loss = 0.5 * diff.data().iter().map(|d| d * d).sum::<f64>();
        Ok((loss, diff))
    }
}

/// Loss value and exact gradient with respect to every raw parameter.
pub fn render_loss_grad(
    params: &FieldParams,
    cam: &Camera,
    cfg: &RenderConfig,
    loss: &dyn ImageLoss,
    target: &Image,
) -> Result<(f64, Vec<f64>)> {
    if target.width() != cam.width || target.height() != cam.height {
        return Err(PnrError::Dimension(format!(
            "target is {}x{}, camera renders {}x{}",
            target.width(),
            target.height(),
            cam.width,
            cam.height
        )));
    }
    let img = render(params, cam, cfg)?;
    let (value, img_grad) = loss.eval(&img, target)?;
    let grad = apply_image_grad(params, cam, cfg, &img_grad)?;
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(PnrError::Numerical(format!("non-finite gradient at parameter {i}")));
    }
    Ok((value, grad))
}
