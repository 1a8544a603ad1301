use kneecast::signal::{
    apply_filter, design_butterworth, preprocess_window, standardize_full, ChannelKind, FilterSpec, PreprocessConfig,
};
use proptest::prelude::*;

/// Share of signal power above `cutoff_hz`, from a direct DFT of the
/// Hann-tapered signal. The taper keeps the jump between the window's two
/// ends from leaking into high bins.
fn power_fraction_above(x: &[f64], fs: f64, cutoff_hz: f64) -> f64 {
    let n = x.len();
    let tapered: Vec<f64> = x
        .iter()
        .enumerate()
        .map(|(t, v)| v * (0.5 - 0.5 * (2.0 * std::f64::consts::PI * t as f64 / n as f64).cos()))
        .collect();
    let (mut total, mut above) = (0.0, 0.0);
    for k in 0..=n / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (t, v) in tapered.iter().enumerate() {
            let ang = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
            re += v * ang.cos();
            im += v * ang.sin();
        }
        let p = re * re + im * im;
        total += p;
        if k as f64 * fs / n as f64 > cutoff_hz {
            above += p;
        }
    }
    above / total
}

fn emg_pre_decimation(x: &[f64]) -> Vec<f64> {
    let cfg = PreprocessConfig::default();
    let cond = cfg.filters().unwrap().condition(x, ChannelKind::Emg);
    standardize_full(&cond, cfg.window.decimation(), cfg.epsilon)
}

fn row_stats(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let m = row.iter().sum::<f64>() / n;
    (m, (row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
}

#[test]
fn emg_of_80hz_sine_is_below_30hz() {
    let x: Vec<f64> = (0..2000).map(|i| (2.0 * std::f64::consts::PI * 80.0 * i as f64 / 1000.0).sin()).collect();
    let y = emg_pre_decimation(&x);
    let frac = power_fraction_above(&y, 1000.0, 30.0);
    assert!(frac < 0.01, "power above 30 Hz: {frac}");
}

fn filter_specs() -> impl Strategy<Value = FilterSpec> {
    (1usize..=8, 1.0f64..400.0, any::<bool>()).prop_map(|(order, fc, hp)| {
        if hp {
            FilterSpec::high_pass(order, fc, 1000.0)
        } else {
            FilterSpec::low_pass(order, fc, 1000.0)
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn filtering_is_causal(spec in filter_specs(), x in prop::collection::vec(-10.0f64..10.0, 64), cut in 0usize..64, noise in prop::collection::vec(-10.0f64..10.0, 64)) {
        let c = design_butterworth(&spec).unwrap();
        let mut y = x.clone();
        y[cut..].copy_from_slice(&noise[cut..]);
        let (a, b) = (apply_filter(&c, &x), apply_filter(&c, &y));
        prop_assert_eq!(a.len(), x.len());
        prop_assert_eq!(&a[..cut], &b[..cut]);
    }

    #[test]
    fn filtering_is_deterministic(spec in filter_specs(), x in prop::collection::vec(-10.0f64..10.0, 128)) {
        let c = design_butterworth(&spec).unwrap();
        prop_assert_eq!(apply_filter(&c, &x), apply_filter(&c, &x));
    }

    #[test]
    fn impulse_response_decays(order in 1usize..=5, fc in 1.0f64..250.0, hp in any::<bool>()) {
        let spec = if hp { FilterSpec::high_pass(order, fc, 1000.0) } else { FilterSpec::low_pass(order, fc, 1000.0) };
        let c = design_butterworth(&spec).unwrap();
        let start = (10.0 * 1000.0 / fc).ceil() as usize + 1;
        let mut x = vec![0.0; start + 200];
        x[0] = 1.0;
        let h = apply_filter(&c, &x);
        prop_assert!(h[start..].iter().all(|v| v.abs() < 1e-6), "{:?}", spec);
    }

    /// High orders and cutoffs near Nyquist ring longer; the bound then
    /// scales with the distance of the cutoff from either band edge.
    #[test]
    fn impulse_response_decays_any_design(spec in filter_specs()) {
        let c = design_butterworth(&spec).unwrap();
        let edge = spec.cutoff_hz.min(500.0 - spec.cutoff_hz);
        let start = (20.0 * 1000.0 / edge).ceil() as usize + 1;
        let mut x = vec![0.0; start + 200];
        x[0] = 1.0;
        let h = apply_filter(&c, &x);
        prop_assert!(h[start..].iter().all(|v| v.abs() < 1e-6), "{:?}", spec);
    }

    #[test]
    fn windows_are_standardized(seed in any::<u64>(), scale in 0.01f64..100.0, offset in -50.0f64..50.0) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let chans: Vec<Vec<f64>> = (0..5).map(|_| (0..2000).map(|_| offset + scale * rng.random_range(-1.0..1.0)).collect()).collect();
        let raw: Vec<&[f64]> = chans.iter().map(Vec::as_slice).collect();
        let kinds = [ChannelKind::Emg, ChannelKind::Emg, ChannelKind::Emg, ChannelKind::Emg, ChannelKind::Kinematic];
        let w = preprocess_window(&raw, &kinds, &PreprocessConfig::default(), 1999).unwrap();
        for row in w.emg.chunks(200).chain(std::iter::once(&w.kinematic[..])) {
            prop_assert_eq!(row.len(), 200);
            let (m, s) = row_stats(row);
            prop_assert!(m.abs() < 1e-9);
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn no_aliasing_power_above_50hz(seed in any::<u64>(), scale in 0.05f64..5.0) {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = (0..2000).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); scale * z }).collect();
        let y = emg_pre_decimation(&x);
        let frac = power_fraction_above(&y, 1000.0, 50.0);
        prop_assert!(frac < 1e-3, "power above 50 Hz: {}", frac);
    }
}
