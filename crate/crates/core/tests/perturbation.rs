use pnr_core::field::{lerp_params, perturb, sample_init};
use pnr_core::oracles::empirical_stats;
use pnr_core::probe::{perturb_and_revise_init, ProbeReport};
use pnr_core::{Bbox, FieldParams, GridDims, InitDistribution};

const SAMPLES: usize = 10_000;

fn source() -> FieldParams {
    let dims = GridDims::cube(2).unwrap();
    let raw = (0..dims.param_count()).map(|i| 0.25 * i as f64 - 2.0).collect();
    FieldParams::from_flat(dims, Bbox::default(), raw).unwrap()
}

fn draws(src: &FieldParams, dist: &InitDistribution, eta: f64) -> Vec<FieldParams> {
    (0..SAMPLES as u64)
        .map(|s| perturb(src, dist, eta, s).unwrap())
        .collect()
}

fn std_for(i: usize, n_vox: usize, dist: &InitDistribution) -> f64 {
    if i < n_vox {
        dist.density_std
    } else {
        dist.color_std
    }
}

#[test]
fn variance_scales_with_eta_squared() {
    let src = source();
    let dist = InitDistribution::new(0.3, 0.5, -0.2, 0.8).unwrap();
    let n_vox = src.dims().voxel_count();
    for eta in [0.3, 1.0] {
        let (_, var) = empirical_stats(&draws(&src, &dist, eta)).unwrap();
        for (i, v) in var.iter().enumerate() {
            let want = eta * eta * std_for(i, n_vox, &dist).powi(2);
            assert!((v / want - 1.0).abs() < 0.05, "eta {eta} entry {i}: {v} vs {want}");
        }
    }
}

#[test]
fn mean_interpolates_toward_the_init_mean() {
    let src = source();
    let dist = InitDistribution::new(0.3, 0.5, -0.2, 0.8).unwrap();
    let n_vox = src.dims().voxel_count();
    let eta = 0.6;
    let (mean, _) = empirical_stats(&draws(&src, &dist, eta)).unwrap();
    for (i, (m, s)) in mean.iter().zip(src.raw()).enumerate() {
        let mu = if i < n_vox { dist.density_mean } else { dist.color_mean };
        let want = (1.0 - eta) * s + eta * mu;
        let stderr = eta * std_for(i, n_vox, &dist) / (SAMPLES as f64).sqrt();
        assert!((m - want).abs() < 4.0 * stderr, "entry {i}");
    }
}

#[test]
fn endpoints_are_source_and_fresh_init() {
    let src = source();
    let dist = InitDistribution::default();
    assert_eq!(perturb(&src, &dist, 0.0, 5).unwrap(), src);
    let fresh = sample_init(&dist, src.dims(), src.bbox(), 5).unwrap();
    assert_eq!(perturb(&src, &dist, 1.0, 5).unwrap(), fresh);
    assert_eq!(
        lerp_params(&src, &fresh, 0.4).unwrap(),
        perturb(&src, &dist, 0.4, 5).unwrap()
    );
}

#[test]
fn probe_report_eta_drives_the_perturbation() {
    let src = source();
    let dist = InitDistribution::default();
    let report = ProbeReport {
        history: vec![1.0; 50],
        delta_l: -0.1,
        delta_min: 0.1,
        eta: 0.35,
        settled: false,
        duration_ms: 0,
    };
    let a = perturb_and_revise_init(&src, &report, &dist, 9).unwrap();
    assert_eq!(a, perturb(&src, &dist, 0.35, 9).unwrap());
    assert_eq!(a, perturb_and_revise_init(&src, &report, &dist, 9).unwrap());
    assert_ne!(a, perturb_and_revise_init(&src, &report, &dist, 10).unwrap());
}

#[test]
fn out_of_range_eta_is_rejected() {
    let src = source();
    let dist = InitDistribution::default();
    assert!(perturb(&src, &dist, -0.01, 0).is_err());
    assert!(perturb(&src, &dist, 1.01, 0).is_err());
    let other = FieldParams::filled(GridDims::cube(3).unwrap(), Bbox::default(), 0.0, 0.0);
    assert!(lerp_params(&src, &other, 0.5).is_err());
}
