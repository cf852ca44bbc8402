use pnr_core::denoiser::{denoise, mv_denoise, NoiseLevel, PromptSpec};
use pnr_core::oracles::mc_posterior_mean;
use pnr_core::Image;

fn gray(w: usize, h: usize, v: f64) -> Image {
    Image::filled(w, h, [v; 3])
}

#[test]
fn single_gaussian_closed_form() {
    // mu = 0, s = 1, sigma = 1, y = 2: posterior mean is 1.
    let prompt = PromptSpec::new("unit", vec![vec![(1.0, gray(1, 1, 0.0))]], 1.0).unwrap();
    let d = denoise(&prompt, 0, &gray(1, 1, 2.0), NoiseLevel::new(1.0).unwrap()).unwrap();
    for v in d.data() {
        assert!((v - 1.0).abs() < 1e-12);
    }
}

#[test]
fn single_gaussian_matches_monte_carlo() {
    let prompt = PromptSpec::new("unit", vec![vec![(1.0, gray(1, 1, 0.0))]], 1.0).unwrap();
    let report = mc_posterior_mean(
        &prompt,
        0,
        &gray(1, 1, 2.0),
        NoiseLevel::new(1.0).unwrap(),
        1_000_000,
        11,
    )
    .unwrap();
    assert!(report.pass, "worst z {}", report.worst_z());
}

#[test]
fn two_component_mixture_matches_monte_carlo() {
    let a = Image::from_data(2, 2, (0..12).map(|i| 0.05 * i as f64).collect()).unwrap();
    let b = Image::from_data(2, 2, (0..12).map(|i| 0.8 - 0.04 * i as f64).collect()).unwrap();
    let prompt = PromptSpec::new("pair", vec![vec![(0.3, a), (0.7, b)]], 0.1).unwrap();
    let y = Image::from_data(2, 2, (0..12).map(|i| 0.4 + 0.01 * i as f64).collect()).unwrap();
    let report = mc_posterior_mean(&prompt, 0, &y, NoiseLevel::new(0.3).unwrap(), 1_000_000, 12).unwrap();
    assert!(report.pass, "worst z {}", report.worst_z());
}

#[test]
fn zero_noise_returns_the_input() {
    let prompt = PromptSpec::new("p", vec![vec![(1.0, gray(3, 2, 0.9))]], 0.05).unwrap();
    let y = Image::from_data(3, 2, (0..18).map(|i| i as f64 / 18.0).collect()).unwrap();
    assert_eq!(denoise(&prompt, 0, &y, NoiseLevel::new(0.0).unwrap()).unwrap(), y);
    let report = mc_posterior_mean(&prompt, 0, &y, NoiseLevel::new(0.0).unwrap(), 1000, 1).unwrap();
    assert!(report.pass);
}

#[test]
fn output_moves_from_input_to_prior_mean_as_noise_grows() {
    let mu = gray(2, 2, 0.2);
    let prompt = PromptSpec::new("p", vec![vec![(1.0, mu)]], 0.05).unwrap();
    let y = gray(2, 2, 0.9);
    let mut last = 0.9;
    for k in 1..=20 {
        let d = denoise(&prompt, 0, &y, NoiseLevel::new(0.02 * k as f64).unwrap()).unwrap();
        let v = d.data()[0];
        assert!(v < last && v > 0.2);
        last = v;
    }
}

#[test]
fn views_are_denoised_independently() {
    let prompt = PromptSpec::new(
        "two",
        vec![vec![(1.0, gray(2, 2, 0.1))], vec![(1.0, gray(2, 2, 0.8))]],
        0.1,
    )
    .unwrap();
    let y = gray(2, 2, 0.5);
    let s = NoiseLevel::new(0.2).unwrap();
    let both = mv_denoise(&prompt, &[0, 1], &[y.clone(), y.clone()], s).unwrap();
    assert_eq!(both[0], denoise(&prompt, 0, &y, s).unwrap());
    assert_eq!(both[1], denoise(&prompt, 1, &y, s).unwrap());
    assert!(both[0].data()[0] < 0.5 && both[1].data()[0] > 0.5);
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(NoiseLevel::new(-0.1).is_err());
    assert!(NoiseLevel::new(f64::NAN).is_err());
    let prompt = PromptSpec::new("p", vec![vec![(1.0, gray(2, 2, 0.5))]], 0.1).unwrap();
    assert!(denoise(&prompt, 1, &gray(2, 2, 0.5), NoiseLevel::new(0.1).unwrap()).is_err());
    assert!(denoise(&prompt, 0, &gray(3, 2, 0.5), NoiseLevel::new(0.1).unwrap()).is_err());
    assert!(PromptSpec::new("p", vec![vec![(0.0, gray(2, 2, 0.5))]], 0.1).is_err());
    assert!(PromptSpec::new("p", vec![vec![(1.0, gray(2, 2, 0.5))]], 0.0).is_err());
}
