use pnr_core::field::sample_init;
use pnr_core::render::{
    apply_image_grad, orbit_cameras, render, render_loss_grad, Camera, CameraRing, L2Loss, RenderConfig,
};
use pnr_core::{Bbox, FieldParams, GridDims, Image, InitDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn lively_field(n: usize, seed: u64) -> FieldParams {
    let dist = InitDistribution::new(0.5, 1.5, 0.0, 1.0).unwrap();
    sample_init(&dist, GridDims::cube(n).unwrap(), Bbox::default(), seed).unwrap()
}

fn front_cam(res: usize) -> Camera {
    Camera::new([0.0, 0.3, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 0.7, res, res).unwrap()
}

fn random_image(w: usize, h: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..3 * w * h).map(|_| rng.random::<f64>() - 0.5).collect();
    Image::from_data(w, h, data).unwrap()
}

#[test]
fn vjp_is_linear_in_the_image_gradient() {
    let p = lively_field(4, 1);
    let cam = front_cam(8);
    let cfg = RenderConfig::default();
    let (g1, g2) = (random_image(8, 8, 2), random_image(8, 8, 3));
    let sum = g1.zip_map(&g2, |a, b| a + b).unwrap();
    let a = apply_image_grad(&p, &cam, &cfg, &g1).unwrap();
    let b = apply_image_grad(&p, &cam, &cfg, &g2).unwrap();
    let ab = apply_image_grad(&p, &cam, &cfg, &sum).unwrap();
    for i in 0..ab.len() {
        assert!((ab[i] - a[i] - b[i]).abs() < 1e-10, "entry {i}");
    }
}

#[test]
fn l2_gradient_is_vjp_of_the_difference() {
    let p = lively_field(4, 4);
    let cam = front_cam(8);
    let cfg = RenderConfig::default();
    let target = random_image(8, 8, 5).map(|v| v + 0.5);
    let (_, grad) = render_loss_grad(&p, &cam, &cfg, &L2Loss, &target).unwrap();
    let diff = render(&p, &cam, &cfg).unwrap().zip_map(&target, |a, b| a - b).unwrap();
    let vjp = apply_image_grad(&p, &cam, &cfg, &diff).unwrap();
    for (g, v) in grad.iter().zip(&vjp) {
        assert!((g - v).abs() < 1e-8);
    }
}

#[test]
fn loss_and_gradient_vanish_at_the_target() {
    let p = lively_field(4, 6);
    let cam = front_cam(8);
    let cfg = RenderConfig::default();
    let target = render(&p, &cam, &cfg).unwrap();
    let (loss, grad) = render_loss_grad(&p, &cam, &cfg, &L2Loss, &target).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grad.iter().all(|g| *g == 0.0));
}

#[test]
fn voxels_outside_every_ray_get_no_gradient() {
    let p = lively_field(8, 7);
    // Narrow frustum through the center never reaches the grid corners.
    let cam = Camera::new([0.0, 0.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0], 0.05, 6, 6).unwrap();
    let cfg = RenderConfig::default();
    let g = apply_image_grad(&p, &cam, &cfg, &Image::filled(6, 6, [1.0, -0.5, 0.25])).unwrap();
    let dims = p.dims();
    let n_vox = dims.voxel_count();
    for (x, y, z) in [(0, 0, 0), (7, 7, 7), (0, 7, 0), (7, 0, 7)] {
        let j = dims.index(x, y, z);
        assert_eq!(g[j], 0.0);
        for c in 0..3 {
            assert_eq!(g[n_vox + 3 * j + c], 0.0);
        }
    }
    assert!(g.iter().any(|v| *v != 0.0));
}

#[test]
fn renders_are_deterministic_and_in_range() {
    let p = lively_field(6, 8);
    let ring = CameraRing {
        count: 4,
        width: 12,
        height: 12,
        ..CameraRing::default()
    };
    let cfg = RenderConfig::default();
    for cam in orbit_cameras(&ring, [0.0; 3]).unwrap() {
        let a = render(&p, &cam, &cfg).unwrap();
        let b = render(&p, &cam, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn doubling_samples_barely_changes_a_smooth_field() {
    let dims = GridDims::cube(6).unwrap();
    let dist = InitDistribution::new(0.0, 0.3, 0.0, 0.3).unwrap();
    let p = sample_init(&dist, dims, Bbox::default(), 9).unwrap();
    let cam = front_cam(10);
    let coarse = RenderConfig {
        samples: 128,
        ..RenderConfig::default()
    };
    let fine = RenderConfig { samples: 256, ..coarse };
    let a = render(&p, &cam, &coarse).unwrap();
    let b = render(&p, &cam, &fine).unwrap();
    let worst = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-2, "largest pixel change {worst}");
}

#[test]
fn empty_field_renders_background() {
    let p = FieldParams::filled(GridDims::cube(4).unwrap(), Bbox::default(), -40.0, 0.0);
    let cfg = RenderConfig {
        background: [0.2, 0.4, 0.6],
        ..RenderConfig::default()
    };
    let img = render(&p, &front_cam(5), &cfg).unwrap();
    for y in 0..5 {
        for x in 0..5 {
            let px = img.pixel(x, y);
            for (v, b) in px.iter().zip(cfg.background) {
                assert!((v - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn mismatched_gradient_image_is_rejected() {
    let p = lively_field(4, 10);
    let err = apply_image_grad(&p, &front_cam(8), &RenderConfig::default(), &Image::zeros(7, 8));
    assert!(err.is_err());
}
