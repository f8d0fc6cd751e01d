use std::f64::consts::PI;

use eepn::analysis::{estimate_phase_error, fit_polynomial, CpsdConfig, FrequencyPhaseProfile, PolynomialPhase};
use eepn::channel::{cd_response, complex_gaussian, FiberSpec};
use eepn::dsp::{ComplexSignal, FrequencyGrid, GridOrdering};
use eepn::experiment::run::wrap;
use eepn::experiment::{Preset, RunConfig};
use eepn::mitigation::{design_allpass, reverse_block, AllpassConfig};
use eepn::phase_noise::{apply_phase, generate_wiener_phase};
use eepn::transceiver::{bps, generate_symbols, merge_round_robin, split_round_robin, BpsConfig, Constellation};
use eepn::Complex64;
use proptest::prelude::*;

const RS: f64 = 180e9;

fn in_band_profile(phase: impl Fn(f64) -> f64) -> FrequencyPhaseProfile {
    let g = FrequencyGrid::monotone(256, RS);
    let frequencies: Vec<f64> = g.frequencies.iter().copied().filter(|f| f.abs() <= 0.95 * RS / 2.0).collect();
    FrequencyPhaseProfile {
        phase: frequencies.iter().map(|f| phase(f / (RS / 2.0))).collect(),
        weight: vec![1.0; frequencies.len()],
        grid: FrequencyGrid {
            frequencies,
            resolution: g.resolution,
            ordering: GridOrdering::Monotone,
        },
        symbol_rate: RS,
    }
}

fn energy(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cd_response_is_unit_modulus(n in 8usize..4096, length in 0.0f64..10_000.0, d in -30.0f64..30.0) {
        let fiber = FiberSpec::new(d, length, 1550.0).unwrap();
        let h = cd_response(&fiber, &FrequencyGrid::fft_ordered(n, 360e9));
        for v in h {
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn phase_rotation_preserves_energy(seed in any::<u64>(), n in 2usize..5000, lw in 0.0f64..1e7) {
        let x = complex_gaussian(n, 1.0, seed);
        let s = ComplexSignal::new(x, 1e9).unwrap();
        let t = generate_wiener_phase(n, lw, 1e-9, seed ^ 1).unwrap();
        let r = apply_phase(&s, &t).unwrap();
        prop_assert!((r.energy() - s.energy()).abs() <= 1e-12 * s.energy());
    }

    #[test]
    fn complex_scale_moves_only_the_constant(seed in any::<u64>(), mag in 0.05f64..20.0, arg in -3.0f64..3.0) {
        let x = generate_symbols(4096, Constellation::Qam16, RS, seed).unwrap();
        let y = x.with_symbols(complex_gaussian(4096, 0.1, seed ^ 7).iter().zip(&x.symbols).map(|(n, s)| s + n).collect());
        let scale = Complex64::from_polar(mag, arg);
        let ys = y.with_symbols(y.symbols.iter().map(|v| v * scale).collect());
        let cfg = CpsdConfig::for_rolloff(0.05);
        let a = estimate_phase_error(&x, &y, 0..4096, &cfg).unwrap();
        let b = estimate_phase_error(&x, &ys, 0..4096, &cfg).unwrap();
        let shift = b.phase[0] - a.phase[0];
        prop_assert!((wrap(shift) - arg).abs() < 1e-9);
        for (p, q) in a.phase.iter().zip(&b.phase) {
            prop_assert!((q - p - shift).abs() < 1e-9);
        }
    }

    #[test]
    fn fit_residual_is_monotone_in_order(c in prop::collection::vec(-1.0f64..1.0, 6), noise_seed in any::<u64>()) {
        let noise = complex_gaussian(256, 0.01, noise_seed);
        let clean = in_band_profile(|u| c.iter().enumerate().map(|(k, a)| a * (k as f64 * 1.7 * u).sin()).sum::<f64>());
        let prof = clean.with_phase(clean.phase.iter().zip(&noise).map(|(p, n)| p + n.re).collect());
        let mut last = f64::INFINITY;
        for order in 0..=PolynomialPhase::MAX_ORDER {
            let r = fit_polynomial(&prof, order).unwrap().residual_rms;
            prop_assert!(r <= last + 1e-12, "order {order}: {r} > {last}");
            last = r;
        }
    }

    #[test]
    fn negated_design_undoes_reversal(a in -0.5f64..0.5, b in -0.4f64..0.4, c in -0.3f64..0.3, seed in any::<u64>()) {
        let x = generate_symbols(8192, Constellation::Qam16, RS, seed).unwrap();
        let t = in_band_profile(|u| a * u + b * u * u + c * (2.0 * u).sin());
        let neg = t.with_phase(t.phase.iter().map(|p| -p).collect());
        let cfg = AllpassConfig::default();
        let fwd = design_allpass(&t, &cfg).unwrap();
        let back = design_allpass(&neg, &cfg).unwrap();
        let once = reverse_block(&x.symbols, 0..8192, &fwd).unwrap();
        let twice = reverse_block(&once, 0..8192, &back).unwrap();
        let r = 200..8000;
        let diff: Vec<Complex64> = twice[r.clone()].iter().zip(&x.symbols[r.clone()]).map(|(p, q)| p - q).collect();
        let db = 10.0 * (energy(&diff) / energy(&x.symbols[r])).log10();
        prop_assert!(db < -40.0, "{db}");
    }

    #[test]
    fn bps_constant_offset_gives_constant_estimate(offset in -0.7f64..0.7, seed in any::<u64>()) {
        let x = generate_symbols(3000, Constellation::Qam16, 1.0, seed).unwrap();
        let rot = Complex64::from_polar(1.0, offset);
        let y = x.with_symbols(x.symbols.iter().map(|v| v * rot).collect());
        let (_, est) = bps(&y, &BpsConfig::default()).unwrap();
        let first = est.phases[0];
        prop_assert!(est.phases.iter().all(|&p| p == first));
        prop_assert!((first - offset).abs() <= BpsConfig::default().quantization_step());
    }

    #[test]
    fn round_robin_split_merge_is_identity(seed in any::<u64>(), n in 1usize..16, per in 1usize..64) {
        let x = complex_gaussian(n * per, 1.0, seed);
        prop_assert_eq!(merge_round_robin(&split_round_robin(&x, n)), x);
    }

    #[test]
    fn wrap_stays_in_principal_interval(p in -1e3f64..1e3) {
        let w = wrap(p);
        prop_assert!(w > -PI - 1e-12 && w <= PI + 1e-12);
        prop_assert!(((p - w) / (2.0 * PI) - ((p - w) / (2.0 * PI)).round()).abs() < 1e-9);
    }

    #[test]
    fn config_text_round_trips(
        seed in any::<u64>(),
        length in 1.0f64..10_000.0,
        snr in 0.0f64..30.0,
        lw in 1.0f64..1e4,
        n_sub in 0usize..16,
        mitigation in any::<bool>(),
        desk in any::<bool>(),
    ) {
        let mut c = RunConfig::preset(if desk { Preset::Desk } else { Preset::Paper });
        c.master_seed = seed;
        c.fiber.length = length;
        c.snr_db = snr;
        c.linewidth = lw * 1e3;
        c.subcarriers = (n_sub > 0).then_some(n_sub);
        if !mitigation {
            c.mitigation = None;
        }
        let other = if desk { Preset::Paper } else { Preset::Desk };
        let back = RunConfig::from_text(other, &c.to_text()).unwrap();
        prop_assert_eq!(back, c);
    }
}
