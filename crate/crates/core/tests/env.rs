use std::f64::consts::TAU;

use cac_core::env::*;
use cac_core::rng::stream;
use proptest::prelude::*;

/// One-sample Kolmogorov-Smirnov statistic against uniform [lo, hi].
fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn camera_distance_marginal_is_uniform() {
    let dist = EnvDistribution::default();
    let mut rng = stream(11, "ks");
    let xs: Vec<f64> = (0..100_000).map(|_| sample_env(&dist, None, &mut rng).camera_distance).collect();
    let d = ks_uniform(xs, 1.0, 6.0);
    assert!(d < 0.01, "KS statistic {d}");
}

#[test]
fn hundred_thousand_draws_within_bounds() {
    let dist = EnvDistribution::default();
    let mut rng = stream(12, "bounds");
    for _ in 0..100_000 {
        let e = sample_env(&dist, None, &mut rng);
        assert!(dist.contains(&e), "{e:?}");
        assert!((1.0..=6.0).contains(&e.camera_distance));
        assert!(e.translation.iter().all(|t| (-0.05..=0.05).contains(t)));
        assert!((0.5..=2.0).contains(&e.light_mul));
        assert!(e.channel_mul.iter().all(|m| (0.7..=1.3).contains(m)));
        assert!((0.0..=0.1).contains(&e.noise_std));
    }
}

#[test]
fn free_regime_covers_every_azimuth_bin() {
    let dist = EnvDistribution::default();
    let mut rng = stream(13, "bins");
    let mut bins = [0usize; 12];
    for _ in 0..10_000 {
        let v = sample_viewpoint(&ViewpointRegime::Free, &dist, &mut rng);
        bins[((v.azimuth.to_degrees() / 30.0) as usize).min(11)] += 1;
    }
    assert!(bins.iter().all(|&c| c > 0), "{bins:?}");
}

#[test]
fn restricted_azimuths_stay_near_side_axis() {
    let dist = EnvDistribution::default();
    let mut rng = stream(14, "rv");
    let (mut left, mut right) = (0, 0);
    for _ in 0..100_000 {
        let v = sample_viewpoint(&ViewpointRegime::restricted_default(), &dist, &mut rng);
        assert!(angle_from_side_axis(v.azimuth) <= 60f64.to_radians() + 1e-12);
        assert!((0.0..TAU).contains(&v.azimuth));
        if (v.azimuth - SIDE_AXIS[1]).abs() <= 60f64.to_radians() + 1e-12 {
            right += 1;
        } else {
            left += 1;
        }
    }
    assert!(left > 0 && right > 0);
}

#[test]
fn same_seed_same_stream() {
    let dist = EnvDistribution::default();
    let draw = |seed| {
        let mut rng = stream(seed, "det");
        (0..100).map(|_| sample_env_in_regime(&dist, &ViewpointRegime::Free, None, &mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(draw(3), draw(3));
    assert_ne!(draw(3), draw(4));
}

proptest! {
    #[test]
    fn regime_samples_within_bounds(seed in any::<u64>(), alpha in 0.0f64..359.0, restricted in any::<bool>()) {
        let dist = EnvDistribution::default();
        let regime = if restricted { ViewpointRegime::Restricted { alpha_deg: alpha } } else { ViewpointRegime::Free };
        let mut rng = stream(seed, "prop");
        for preset in [None, Some(Brightness::Bright), Some(Brightness::Dark)] {
            let e = sample_env_in_regime(&dist, &regime, preset, &mut rng);
            // restricted support is a subset of the free support
            prop_assert!(dist.contains(&e));
            prop_assert!(dist.light_mul_for(preset).contains(e.light_mul));
            if restricted {
                prop_assert!(angle_from_side_axis(e.azimuth) <= alpha.to_radians() / 2.0 + 1e-9);
            }
        }
    }
}
