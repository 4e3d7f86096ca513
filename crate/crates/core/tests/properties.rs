use doa_feedback::corrector::{CorrectorConfig, CorrectorState};
use doa_feedback::quality::{gate, smooth};
use doa_feedback::scene::{fractional_delay, ArrayGeometry, DEFAULT_SPEED_OF_SOUND};
use doa_feedback::spectral::{istft, stft};
use proptest::prelude::*;

fn rel_rms(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Sum of a few sinusoids below a quarter of the sample rate.
fn band_limited(len: usize, tones: &[(f64, f64, f64)]) -> Vec<f64> {
    (0..len)
        .map(|n| {
            tones
                .iter()
                .map(|&(f, a, p)| a * (2.0 * std::f64::consts::PI * f * n as f64 + p).sin())
                .sum()
        })
        .collect()
}

fn tone() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.005f64..0.2, 0.1f64..1.0, 0.0f64..std::f64::consts::TAU)
}

fn rotate(p: [f64; 2], phi: f64) -> [f64; 2] {
    let (s, c) = phi.sin_cos();
    [c * p[0] - s * p[1], s * p[0] + c * p[1]]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn stft_reconstructs_interior(x in prop::collection::vec(-1.0f64..1.0, 4096..6000)) {
        let grid = stft(&x, 512, 128, 16_000).unwrap();
        let y = istft(&grid).unwrap();
        let (a, b) = (512, x.len().min(y.len()) - 512);
        prop_assert!(rel_rms(&y[a..b], &x[a..b]) <= 1e-6);
    }

    #[test]
    fn stft_is_linear(
        x in prop::collection::vec(-1.0f64..1.0, 2048),
        y in prop::collection::vec(-1.0f64..1.0, 2048),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let gm = stft(&mix, 256, 64, 16_000).unwrap();
        let gx = stft(&x, 256, 64, 16_000).unwrap();
        let gy = stft(&y, 256, 64, 16_000).unwrap();
        for ((m, p), q) in gm.data.iter().zip(&gx.data).zip(&gy.data) {
            prop_assert!((m - (p * a + q * b)).norm() < 1e-9);
        }
    }

    #[test]
    fn fractional_delay_round_trip(
        tones in prop::collection::vec(tone(), 1..4),
        tau in -20.0f64..20.0,
    ) {
        let x = band_limited(4000, &tones);
        let back = fractional_delay(&fractional_delay(&x, tau), -tau);
        let interior = 200..3800;
        prop_assert!(rel_rms(&back[interior.clone()], &x[interior]) <= 1e-3);
    }

    #[test]
    fn steering_delays_are_rotation_equivariant(doa in -180.0f64..180.0, phi in -180.0f64..180.0) {
        let g = ArrayGeometry::default_triangular();
        let rotated: Vec<[f64; 2]> =
            g.mic_positions().iter().map(|&p| rotate(p, phi.to_radians())).collect();
        let r = ArrayGeometry::new(rotated, g.speed_of_sound()).unwrap();
        let a = g.steering_delays(doa);
        let b = r.steering_delays(doa + phi);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn steering_delay_spread_is_bounded(doa in -180.0f64..360.0) {
        let g = ArrayGeometry::default_triangular();
        let d = g.steering_delays(doa);
        let spread = d.iter().cloned().fold(f64::MIN, f64::max) - d.iter().cloned().fold(f64::MAX, f64::min);
        prop_assert!(spread <= g.max_pairwise_distance() / g.speed_of_sound() + 1e-15);
        prop_assert!(spread <= 0.18 / DEFAULT_SPEED_OF_SOUND + 1e-12);
        prop_assert!(spread <= 5.248e-4);
    }

    #[test]
    fn smoothing_is_a_convex_combination(prev in -50.0f64..60.0, raw in -50.0f64..60.0, alpha in 0.0f64..1.0) {
        let s = smooth(prev, raw, alpha);
        prop_assert!(s >= prev.min(raw) - 1e-12 && s <= prev.max(raw) + 1e-12);
    }

    #[test]
    fn smoothing_approaches_a_constant_geometrically(start in -40.0f64..40.0, c in -40.0f64..40.0, alpha in 0.05f64..0.95) {
        let mut s = start;
        for k in 1..=20 {
            s = smooth(s, c, alpha);
            let expected = c + (start - c) * alpha.powi(k);
            prop_assert!((s - expected).abs() <= 1e-9 * (1.0 + start.abs() + c.abs()));
        }
    }

    #[test]
    fn gate_is_monotone(total in 1usize..500, frac in 0.0f64..1.0) {
        let n = ((total as f64) * frac) as usize;
        if gate(n, total) {
            prop_assert!(gate(n + 1, total));
        }
    }

    #[test]
    fn corrector_second_moment_stays_non_negative_and_deterministic(
        theta in -90.0f64..90.0,
        qs in prop::collection::vec(-40.0f64..60.0, 1..60),
        bias in any::<bool>(),
    ) {
        let cfg = CorrectorConfig { bias_correction: bias, ..CorrectorConfig::default() };
        let mut a = CorrectorState::new(theta);
        let mut b = CorrectorState::new(theta);
        for &q in &qs {
            let ta = a.step(q, &cfg).unwrap();
            let tb = b.step(q, &cfg).unwrap();
            prop_assert!(a.grad_v >= 0.0);
            prop_assert_eq!(ta.to_bits(), tb.to_bits());
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn first_update_pushes_against_the_gradient(theta in 0.5f64..60.0, q in -40.0f64..60.0) {
        let cfg = CorrectorConfig::default();
        let mut s = CorrectorState::new(theta);
        let next = s.step(q, &cfg).unwrap();
        // Pivoted quality 100 - q > 0 over a positive angle step gives g > 0.
        let expected = cfg.eta * (1.0 - cfg.beta_m) / (1.0 - cfg.beta_v).sqrt();
        prop_assert!(next < theta);
        prop_assert!(((theta - next) - expected).abs() < 1e-6);
    }
}
