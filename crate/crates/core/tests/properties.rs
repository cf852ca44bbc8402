use pnr_core::checkpoint::{decode, encode};
use pnr_core::denoiser::{denoise, NoiseLevel, PromptSpec};
use pnr_core::field::lerp_params;
use pnr_core::ipg::{identity_distance, RefineConfig};
use pnr_core::probe::{determine_eta, loss_decrease};
use pnr_core::render::{render, Camera, RenderConfig};
use pnr_core::{Bbox, FieldParams, GridDims, Image};
use proptest::prelude::*;

fn field(n: usize) -> impl Strategy<Value = FieldParams> {
    let dims = GridDims::cube(n).unwrap();
    prop::collection::vec(-6.0..6.0f64, dims.param_count())
        .prop_map(move |raw| FieldParams::from_flat(dims, Bbox::default(), raw).unwrap())
}

fn image(w: usize, h: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(0.0..1.0f64, 3 * w * h).prop_map(move |d| Image::from_data(w, h, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lerp_is_symmetric(a in field(2), b in field(2), eta in 0.0..=1.0f64) {
        let ab = lerp_params(&a, &b, eta).unwrap();
        let ba = lerp_params(&b, &a, 1.0 - eta).unwrap();
        for (x, y) in ab.raw().iter().zip(ba.raw()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn eta_is_monotone_in_the_loss_decrease(x in -50.0..50.0f64, dx in 0.0..10.0f64, dmin in 1e-3..10.0f64, emax in 0.01..=1.0f64) {
        let lo = determine_eta(x * dmin, dmin, emax).unwrap();
        let hi = determine_eta((x + dx) * dmin, dmin, emax).unwrap();
        prop_assert!(hi >= lo);
        prop_assert!(lo >= 0.0 && lo < emax);
    }

    #[test]
    fn eta_is_scale_invariant(r in -20.0..20.0f64, dmin in 1e-3..10.0f64, c in 1e-3..1e3f64) {
        let a = determine_eta(r * dmin, dmin, 0.6).unwrap();
        let b = determine_eta(r * dmin * c, dmin * c, 0.6).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn eta_vanishes_for_decreases_beyond_delta_min(r in 1.0..1e6f64, dmin in 1e-6..1e3f64) {
        prop_assert_eq!(determine_eta(-r * dmin, dmin, 0.6).unwrap(), 0.0);
    }

    #[test]
    fn eta_saturates_for_huge_increases(dmin in 1e-6..1e3f64, emax in 0.01..=1.0f64) {
        prop_assert!(determine_eta(1e9 * dmin, dmin, emax).unwrap() > 0.999 * emax);
    }

    #[test]
    fn increasing_histories_have_positive_decrease(start in -10.0..10.0f64, steps in prop::collection::vec(1e-3..1.0f64, 20..60)) {
        let mut h = vec![start];
        for s in &steps {
            h.push(h.last().unwrap() + s);
        }
        prop_assert!(loss_decrease(&h, 10).unwrap() > 0.0);
    }

    #[test]
    fn checkpoints_round_trip(f in field(3)) {
        let q = f.quantized_f32();
        prop_assert_eq!(decode(&encode(&q)).unwrap(), q);
    }

    #[test]
    fn identity_distance_is_a_pseudometric(a in image(8, 8), b in image(8, 8), c in image(8, 8)) {
        let cfg = RefineConfig { lambda_p: 0.0, ..RefineConfig::default() };
        let ab = identity_distance(&a, &b, &cfg).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(identity_distance(&a, &a, &cfg).unwrap(), 0.0);
        prop_assert!((ab - identity_distance(&b, &a, &cfg).unwrap()).abs() < 1e-9);
        let ac = identity_distance(&a, &c, &cfg).unwrap();
        let cb = identity_distance(&c, &b, &cfg).unwrap();
        prop_assert!(ab <= ac + cb + 1e-9);
        // The pyramid term is symmetric and non-negative too.
        let full = RefineConfig::default();
        let d = identity_distance(&a, &b, &full).unwrap();
        prop_assert!(d >= ab);
        prop_assert!((d - identity_distance(&b, &a, &full).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn rendered_pixels_stay_in_the_unit_range(f in field(3), az in 0.0..std::f64::consts::TAU) {
        let cam = Camera::new([3.0 * az.sin(), 0.8, 3.0 * az.cos()], [0.0; 3], [0.0, 1.0, 0.0], 0.7, 5, 5).unwrap();
        let img = render(&f, &cam, &RenderConfig::default()).unwrap();
        prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn denoiser_output_lies_between_input_and_mean(y in 0.0..1.0f64, mu in 0.0..1.0f64, s in 0.01..0.5f64, sigma in 0.0..1.0f64) {
        let prompt = PromptSpec::new("p", vec![vec![(1.0, Image::filled(1, 1, [mu; 3]))]], s).unwrap();
        let d = denoise(&prompt, 0, &Image::filled(1, 1, [y; 3]), NoiseLevel::new(sigma).unwrap()).unwrap();
        let v = d.data()[0];
        prop_assert!(v >= y.min(mu) - 1e-12 && v <= y.max(mu) + 1e-12);
    }
}
