//! Property-based invariants across the pipeline.

use oxiline::baseline::{undersample, FeatureVector};
use oxiline::calibrate::{match_line, CalibrationSet, PatientLine, TrainingSet};
use oxiline::evaluate::{bland_altman, quantile, quartiles};
use oxiline::preprocess::{
    detect_extrema, detrend, moving_average, segment_windows, ExtremumKind, PpgRecord, ProbeSite,
    WindowingParams,
};
use proptest::prelude::*;
use std::f64::consts::TAU;

fn series_strategy() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1000.0f64..1000.0, 1..300)
}

proptest! {
    #[test]
    fn moving_average_stays_within_bounds(x in series_strategy(), len in 1usize..80) {
        let out = moving_average(&x, len).unwrap();
        let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(out.len(), x.len());
        for v in out {
            prop_assert!(v >= lo && v <= hi);
        }
    }

    #[test]
    fn moving_average_constant_fixed_point(c in -1000.0f64..1000.0, n in 1usize..200, len in 1usize..64) {
        let x = vec![c; n];
        prop_assert_eq!(moving_average(&x, len).unwrap(), x);
    }

    #[test]
    fn detrend_eliminates_affine_offsets(
        x in prop::collection::vec(-10.0f64..10.0, 120..400),
        a in 0.1f64..50.0,
        b in -100.0f64..100.0,
    ) {
        let rate = 100.0;
        let scaled: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let left = detrend(&scaled, rate).unwrap();
        let right = detrend(&x, rate).unwrap();
        for (l, r) in left.iter().zip(&right) {
            prop_assert!((l - a * r).abs() <= 1e-9 * (1.0 + a.abs() * 10.0 + b.abs()));
        }
    }

    #[test]
    fn extrema_indices_scale_invariant(scale in 0.01f64..100.0, freq in 0.9f64..2.5) {
        let rate = 200.0;
        let x: Vec<f64> = (0..1600)
            .map(|k| (TAU * freq * k as f64 / rate).sin() + 0.3 * (TAU * 0.2 * k as f64 / rate).sin())
            .collect();
        let scaled: Vec<f64> = x.iter().map(|v| scale * v).collect();
        let a = detect_extrema(&x, rate).unwrap();
        let b = detect_extrema(&scaled, rate).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn extrema_alternate_strictly(seed in 0u64..500) {
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let rate = 200.0;
        let freq = rng.gen_range(0.9..2.2);
        let x: Vec<f64> = (0..1400)
            .map(|k| (TAU * freq * k as f64 / rate).sin() + 0.15 * rng.gen_range(-1.0..1.0))
            .collect();
        let ex = detect_extrema(&x, rate).unwrap();
        for pair in ex.windows(2) {
            prop_assert!(pair[1].index > pair[0].index);
            prop_assert!(pair[1].kind != pair[0].kind);
        }
        if !ex.is_empty() {
            let peaks = ex.iter().filter(|e| e.kind == ExtremumKind::Peak).count();
            prop_assert!(peaks >= 2);
        }
    }

    #[test]
    fn windows_cover_and_match_slices(extra in 0usize..4000, rate_idx in 0usize..2) {
        let rate = [200.0, 600.0][rate_idx];
        let l = (4.0 * rate) as usize;
        let n = l + extra;
        let red: Vec<f64> = (0..n).map(|k| 2.0 + 0.1 * (TAU * 1.3 * k as f64 / rate).sin()).collect();
        let ir: Vec<f64> = (0..n).map(|k| 3.0 + 0.2 * (TAU * 1.3 * k as f64 / rate).sin()).collect();
        let rec = PpgRecord { patient_id: "p".into(), rate, red, ir, site: ProbeSite::Finger };
        let ws = segment_windows(&rec, &WindowingParams::default()).unwrap();
        let hop = (l as f64 * 0.75).round() as usize;
        prop_assert_eq!(ws.len(), (n - l) / hop + 1);
        // Every sample below the last window's end is inside some window.
        let covered_end = l + hop * (ws.len() - 1);
        prop_assert!(covered_end <= n);
        for (k, w) in ws.iter().enumerate() {
            prop_assert_eq!(w.start_index, k * hop);
            prop_assert_eq!(&w.raw_red[..], &rec.red[w.start_index..w.start_index + l]);
        }
        // Consecutive windows overlap, so coverage has no gaps.
        prop_assert!(hop <= l);
    }

    #[test]
    fn quartiles_match_sort_oracle(data in prop::collection::vec(-50.0f64..50.0, 1..13)) {
        let (q1, med, q3) = quartiles(&data).unwrap();
        let mut sorted = data.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // Independent evaluation of the same interpolation definition.
        let oracle = |q: f64| {
            let h = (sorted.len() - 1) as f64 * q;
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(sorted.len() - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        };
        prop_assert_eq!(q1, oracle(0.25));
        prop_assert_eq!(med, oracle(0.5));
        prop_assert_eq!(q3, oracle(0.75));
    }

    #[test]
    fn quantile_is_monotone_in_q(data in prop::collection::vec(-50.0f64..50.0, 2..40)) {
        let mut sorted = data.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut prev = f64::NEG_INFINITY;
        for i in 0..=10 {
            let v = quantile(&sorted, i as f64 / 10.0).unwrap();
            prop_assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn loa_width_is_exact_and_band_monotone(
        diffs in prop::collection::vec(-3.0f64..3.0, 3..200),
    ) {
        let y = vec![92.0; diffs.len()];
        let p: Vec<f64> = diffs.iter().map(|d| 92.0 + d).collect();
        let r = bland_altman(&y, &p, 2.0).unwrap();
        prop_assert!((r.loa_high - r.loa_low - 2.0 * 1.96 * r.sd_diff).abs() <= 1e-12);
        prop_assert!(r.loa_low <= r.mean_diff && r.mean_diff <= r.loa_high);
        // Narrowing the band never admits more points.
        let mut prev = f64::INFINITY;
        for band in [3.0, 2.0, 1.0, 0.5, 0.1] {
            let within = bland_altman(&y, &p, band).unwrap().pct_within_band;
            prop_assert!(within <= prev);
            prev = within;
        }
    }

    #[test]
    fn match_line_is_permutation_invariant(seed in 0u64..300) {
        use rand::seq::SliceRandom;
        use rand::Rng;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(3..10);
        let mut lines = Vec::new();
        for i in 0..n {
            lines.push(PatientLine {
                patient_id: format!("p{i:02}"),
                slope: rng.gen_range(-34.0..-18.0),
                intercept: rng.gen_range(106.0..128.0),
                n_points: 10,
                fit_r2: 1.0,
            });
        }
        let mut points = Vec::new();
        for i in 0..5 {
            let spo2 = 90.0 + i as f64 * 1.25;
            points.push((rng.gen_range(0.3..2.2), spo2));
        }
        let baseline_choice = {
            let t = TrainingSet::new(lines.clone(), 15.0, vec![]).unwrap();
            let g = CalibrationSet::new(points.clone()).unwrap();
            match_line(&g, &t).unwrap().patient_id.clone()
        };
        for _ in 0..3 {
            let mut shuffled_lines = lines.clone();
            shuffled_lines.shuffle(&mut rng);
            let mut shuffled_points = points.clone();
            shuffled_points.shuffle(&mut rng);
            let t = TrainingSet::new(shuffled_lines, 15.0, vec![]).unwrap();
            let g = CalibrationSet::new(shuffled_points).unwrap();
            prop_assert_eq!(&match_line(&g, &t).unwrap().patient_id, &baseline_choice);
        }
    }

    #[test]
    fn undersample_classes_come_out_equal(seed in 0u64..200, sizes in prop::collection::vec(1usize..40, 2..6)) {
        let mut data = Vec::new();
        for (c, &count) in sizes.iter().enumerate() {
            for i in 0..count {
                data.push(FeatureVector {
                    r_value: 0.5 + i as f64 * 0.001,
                    red_ac: 0.02,
                    red_dc: 2.0,
                    ir_ac: 0.06,
                    ir_dc: 3.0,
                    red_ac_over_dc: 0.01,
                    ir_ac_over_dc: 0.02,
                    heart_rate_hz: 1.2,
                    label: 80.0 + c as f64,
                });
            }
        }
        let out = undersample(&data, seed).unwrap();
        let min = *sizes.iter().min().unwrap();
        prop_assert_eq!(out.len(), min * sizes.len());
        for (c, _) in sizes.iter().enumerate() {
            let label = 80.0 + c as f64;
            prop_assert_eq!(out.iter().filter(|f| f.label == label).count(), min);
        }
    }
}
