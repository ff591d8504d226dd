use std::f64::consts::TAU;

use cathlab::hemo::*;

fn cosine(period: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let t: Vec<f64> = (0..n).map(|i| i as f64 * period / n as f64).collect();
    let v = t.iter().map(|t| 100.0 + 50.0 * (TAU * t / period).cos()).collect();
    (t, v)
}

/// Composite Simpson integral of sampled flow.
fn simpson(q: &[(f64, f64)]) -> f64 {
    assert!(q.len() % 2 == 1);
    let h = q[1].0 - q[0].0;
    let mut s = q[0].1 + q[q.len() - 1].1;
    for (i, &(_, v)) in q.iter().enumerate().take(q.len() - 1).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

#[test]
fn flow_integral_matches_volume_drop() {
    for period in [0.6, 0.85, 1.2] {
        let (t, v) = cosine(period, 20);
        let c = build_periodic_curve(&t, &v, period).unwrap();
        let (o, cl) = valve_events(&c, 0.05).unwrap();
        let q = flow_rate(&c, o, cl, 2001).unwrap();
        let drop = c.volume(o) - c.volume(cl);
        assert!((simpson(&q) - drop).abs() <= 0.005 * drop);
    }
}

#[test]
fn per_matches_analytic_slope() {
    let period = 0.9;
    let (t, v) = cosine(period, 20);
    for c in [build_curve(&t, &v).unwrap(), build_periodic_curve(&t, &v, period).unwrap()] {
        let (o, cl) = valve_events(&c, 0.05).unwrap();
        let r = peak_rates(&c, o, cl).unwrap();
        let want = 100.0 * std::f64::consts::PI / period;
        assert!((r.per_ml_s.abs() - want).abs() <= 0.01 * want, "{} {want}", r.per_ml_s);
        assert!(r.t_per_s >= o && r.t_per_s <= cl);
    }
}

#[test]
fn report_from_sphere_meshes() {
    // Spheres whose volumes follow the cosine curve.
    let period = 1.0;
    let (t, v) = cosine(period, 20);
    let meshes: Vec<_> = v
        .iter()
        .map(|ml| {
            let r = (ml * 1000.0 * 3.0 / (4.0 * std::f64::consts::PI)).cbrt();
            cathlab::volume::mesh::icosphere(r, 5)
        })
        .collect();
    let c = curve_from_meshes(&t, &meshes, Some(period)).unwrap();
    let r = hemodynamics_report(&c, 60.0, &HemoOptions::default()).unwrap();
    // Icosphere volumes run ~0.1% low at 5 subdivisions.
    assert!((r.edv_ml - 150.0).abs() < 0.5 && (r.esv_ml - 50.0).abs() < 0.3, "{r:?}");
    assert_eq!(r.sv_ml, r.edv_ml - r.esv_ml);
}

#[test]
fn ecg_sweep_detects_every_beat() {
    for (k, hr) in [45.0, 51.0, 60.0, 75.0, 90.0, 105.0, 120.0].into_iter().enumerate() {
        for seed in 0..3u64 {
            let (trace, truth) = synthesize_ecg(&EcgSynthParams {
                hr_bpm: hr,
                duration_s: 30.0,
                sample_rate_hz: 360.0,
                snr_db: Some(10.0),
                rr_jitter: 0.03,
                baseline_mv: 0.15,
                seed: seed + 10 * k as u64,
            })
            .unwrap();
            let found = &trace.r_peaks_s;
            let hits = truth.iter().filter(|t| found.iter().any(|f| (f - *t).abs() < 0.05)).count();
            assert_eq!(hits, truth.len(), "hr {hr} seed {seed}: missed beats");
            assert_eq!(found.len(), truth.len(), "hr {hr} seed {seed}: false positives");
            let m = heart_rates(found).unwrap().mean_bpm;
            let m0 = heart_rates(&truth).unwrap().mean_bpm;
            assert!((m - m0).abs() < 0.5, "hr {hr}: {m} vs {m0}");
        }
    }
}

#[test]
fn default_generator_rate_is_51_bpm() {
    let (trace, _) = synthesize_ecg(&EcgSynthParams::default()).unwrap();
    assert!((trace.heart_rates().unwrap().mean_bpm - 51.0).abs() < 0.5);
}
