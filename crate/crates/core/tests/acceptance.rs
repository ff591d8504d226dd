//! Acceptance run: one line per criterion, then a summary.
//!
//! Runs without the libtest harness so every criterion reports even when an
//! earlier one fails. Exits non-zero if a criterion fails that is not listed
//! in `KNOWN_GAPS`.

mod common;

use std::f64::consts::{PI, TAU};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use nalgebra::{Matrix3, Point3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tower::ServiceExt;

use cathlab::drr::{build_octree, render_drr};
use cathlab::dynamics::{compute_skinning_weights, deform_mesh, interpolate_phase, register_volumes, RegistrationParams, RigidTransform};
use cathlab::enhance::{cnr, edge_fwhm, enhance_pipeline, EnhanceParams};
use cathlab::geometry::{angles_from_direction, direction_from_angles, project_point, projection_matrix, rotation_primary, rotation_secondary, CArmPose};
use cathlab::hemo::*;
use cathlab::image::Image2D;
use cathlab::metrics::*;
use cathlab::service::{generate_scene, router, AppState, Config, Scene, SceneSpec};
use cathlab::stereo::{reconstruct_from_centerlines, reconstruct_guidewire, CameraModel, Centerline2D, CenterlineParams, StereoParams};
use cathlab::volume::mesh::icosphere;
use cathlab::volume::phantom::Motion;
use cathlab::volume::{generate_vessel_phantom, AttenuationVolume, CenterlineSpec, PhantomSpec};
use common::*;

/// Criteria that fail with the faithful implementation; see the README.
const KNOWN_GAPS: &[&str] = &["enhancement"];

type Criterion = (&'static str, u64, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn within(limit: Duration, o: Outcome, took: Duration) -> Outcome {
    let ok = took <= limit;
    let detail = format!("{}; {:.2} s (limit {} s)", o.detail, took.as_secs_f64(), limit.as_secs());
    outcome(o.pass && ok, detail)
}

fn geometry() -> Outcome {
    let n = 50;
    let (mut angle_err, mut ortho_err) = (0.0f64, 0.0f64);
    let ortho = |r: &Matrix3<f64>| (r.transpose() * r - Matrix3::identity()).abs().max();
    for i in 0..n {
        let a = -PI + TAU * (i as f64 + 0.5) / n as f64;
        for j in 0..n {
            let b = -1.4 + 2.8 * (j as f64 + 0.5) / n as f64;
            let (a2, b2) = angles_from_direction(&direction_from_angles(a, b)).unwrap();
            let da = (a2 - a + PI).rem_euclid(TAU) - PI;
            angle_err = angle_err.max(da.abs()).max((b2 - b).abs());
            ortho_err = ortho_err.max(ortho(&rotation_primary(a))).max(ortho(&rotation_secondary(b, a)));
        }
    }
    outcome(
        angle_err <= 1e-9 && ortho_err <= 1e-12,
        format!("max angle error {angle_err:.2e}, max orthonormality error {ortho_err:.2e}"),
    )
}

fn random_volume(n: usize, seed: u64) -> AttenuationVolume {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..n * n * n).map(|_| rng.gen_range(0.0..0.01f32)).collect();
    AttenuationVolume::centered([n; 3], Vector3::repeat(1.0), data).unwrap()
}

fn drr_slab() -> Outcome {
    let cube = AttenuationVolume::centered([50; 3], Vector3::repeat(2.0), vec![0.01; 50 * 50 * 50]).unwrap();
    let pose = CArmPose::default();
    let img = render_drr(&cube, &pose, None).unwrap();
    let (cu, cv) = (pose.n_u / 2, pose.n_v / 2);
    let centre = img.get(cu, cv) as f64;

    let small = CArmPose::default().with_angles_deg(23.0, -11.0).with_detector(64, 64);
    let (a, b) = (random_volume(64, 1), random_volume(64, 2));
    let sum_data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    let sum = AttenuationVolume::centered([64; 3], Vector3::repeat(1.0), sum_data).unwrap();
    let scaled = AttenuationVolume::centered([64; 3], Vector3::repeat(1.0), a.data().iter().map(|x| 2.5 * x).collect()).unwrap();
    let ra = render_drr(&a, &small, None).unwrap();
    let rb = render_drr(&b, &small, None).unwrap();
    let rs = render_drr(&sum, &small, None).unwrap();
    let rk = render_drr(&scaled, &small, None).unwrap();
    let sup = (0..ra.pixels().len())
        .map(|i| (rs.pixels()[i] as f64 - ra.pixels()[i] as f64 - rb.pixels()[i] as f64).abs())
        .fold(0.0, f64::max);
    let lin = (0..ra.pixels().len())
        .map(|i| (rk.pixels()[i] as f64 - 2.5 * ra.pixels()[i] as f64).abs())
        .fold(0.0, f64::max);
    outcome(
        (centre - 1.0).abs() <= 1e-6 && sup <= 1e-6 && lin <= 1e-6,
        format!("central pixel {centre:.9}, superposition {sup:.2e}, linearity {lin:.2e}"),
    )
}

fn octree() -> Outcome {
    let mut spec = PhantomSpec::straight_tube(3.0, 80.0, [256, 256, 256], 0.5);
    spec.centerline = CenterlineSpec::Spline {
        points: vec![[-40.0, -10.0, -20.0], [-10.0, 15.0, 0.0], [15.0, -5.0, 10.0], [40.0, 10.0, 25.0]],
    };
    let p = generate_vessel_phantom(&spec).unwrap();
    let empty = p.volume.data().iter().filter(|&&v| v == 0.0).count() as f64 / p.volume.len() as f64;
    let tree = build_octree(&p.volume, 0.0);
    let pose = CArmPose::default().with_angles_deg(30.0, 20.0).with_detector(512, 512);
    let t = Instant::now();
    let naive = render_drr(&p.volume, &pose, None).unwrap();
    let t_naive = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let accel = render_drr(&p.volume, &pose, Some(&tree)).unwrap();
    let t_accel = t.elapsed().as_secs_f64();
    let diff = naive.pixels().iter().zip(accel.pixels()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
    let speedup = t_naive / t_accel;
    outcome(
        empty >= 0.6 && diff <= 1e-6 && speedup >= 1.5,
        format!(
            "{:.2}% empty, max diff {diff:.1e}, speedup {speedup:.2}x ({t_naive:.2} s vs {t_accel:.2} s, {} threads)",
            100.0 * empty,
            rayon::current_num_threads()
        ),
    )
}

fn simpson(q: &[(f64, f64)]) -> f64 {
    let h = q[1].0 - q[0].0;
    let mut s = q[0].1 + q[q.len() - 1].1;
    for (i, &(_, v)) in q.iter().enumerate().take(q.len() - 1).skip(1) {
        s += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    s * h / 3.0
}

fn hemodynamics() -> Outcome {
    let period = 0.8;
    let t: Vec<f64> = (0..20).map(|i| i as f64 * period / 20.0).collect();
    let v: Vec<f64> = t.iter().map(|t| 100.0 + 50.0 * (TAU * t / period).cos()).collect();
    let c = build_periodic_curve(&t, &v, period).unwrap();
    let e = edv_esv(&c);
    let (o, cl) = valve_events(&c, 0.05).unwrap();
    let per = peak_rates(&c, o, cl).unwrap().per_ml_s.abs();
    let per_want = 100.0 * PI / period;
    let q = flow_rate(&c, o, cl, 2001).unwrap();
    let drop = c.volume(o) - c.volume(cl);
    let q_err = (simpson(&q) - drop).abs() / drop;

    let s = stroke_cardiac_output(150.0, 55.0, 51.0).unwrap();
    let pass = (e.edv_ml - 150.0).abs() <= 0.2
        && (e.esv_ml - 50.0).abs() <= 0.2
        && (per - per_want).abs() <= 0.01 * per_want
        && q_err <= 0.005
        && s.sv_ml == 95.0
        && (s.ef_pct - 63.33).abs() <= 0.01
        && (s.co_l_min - 4.845).abs() <= 0.001;
    outcome(
        pass,
        format!(
            "EDV {:.3}, ESV {:.3}, PER {per:.2} vs {per_want:.2}, flow integral error {:.3}%, SV {} EF {:.3} CO {:.4}",
            e.edv_ml,
            e.esv_ml,
            100.0 * q_err,
            s.sv_ml,
            s.ef_pct,
            s.co_l_min
        ),
    )
}

fn mesh_volume_check() -> Outcome {
    let s = icosphere(10.0, 4);
    let v = mesh_volume(&s).unwrap() * 1000.0;
    let want = 4.0 / 3.0 * PI * 1000.0;
    let rot = UnitQuaternion::from_euler_angles(0.4, -1.1, 2.3);
    let moved = s.transformed(|p| rot * p + Vector3::new(120.0, -35.0, 80.0));
    let vm = mesh_volume(&moved).unwrap() * 1000.0;
    let inv = (vm - v).abs() / v;
    outcome(
        (v - want).abs() <= 0.01 * want && inv <= 1e-9,
        format!("{} faces, {v:.2} mm3 vs {want:.2}, rigid motion change {inv:.1e}", s.triangles.len()),
    )
}

fn skinning() -> Outcome {
    let bar_mesh = bar([20, 4, 4]);
    let cases = [
        ("bar", bar_mesh.clone(), bar_end_handles(&bar_mesh, 20.0)),
        ("tube", tube(), tube_handles(&tube())),
        ("branched", branched_tube(), branched_handles(&branched_tube())),
    ];
    let (mut pou, mut bounds, mut rigid, mut max_v) = (0.0f64, 0.0f64, 0.0f64, 0);
    let t = RigidTransform {
        rotation: UnitQuaternion::from_euler_angles(0.3, -0.7, 1.1),
        translation: Vector3::new(4.0, -2.5, 10.0),
    };
    let mut mid = f64::NAN;
    for (name, mesh, h) in &cases {
        max_v = max_v.max(mesh.vertices.len());
        let w = compute_skinning_weights(mesh, h).unwrap();
        for v in 0..w.n_vertices() {
            let row = w.row(v);
            pou = pou.max((row.iter().sum::<f64>() - 1.0).abs());
            for &x in row {
                bounds = bounds.max(-x).max(x - 1.0);
            }
        }
        let out = deform_mesh(mesh, &w, &vec![t; h.len()]).unwrap();
        for (a, b) in mesh.vertices.iter().zip(&out.vertices) {
            rigid = rigid.max((t.apply(a) - b).norm());
        }
        if *name == "bar" {
            mid = (0..mesh.vertices.len())
                .filter(|&v| (mesh.vertices[v].x - 10.0).abs() < 1e-9)
                .map(|v| (w.weight(v, 0) - 0.5).abs())
                .fold(0.0, f64::max);
        }
    }
    outcome(
        max_v <= 5000 && pou <= 1e-6 && bounds <= 1e-9 && rigid <= 1e-9 && mid <= 1e-6,
        format!(
            "max {max_v} vertices, unity {pou:.1e}, bound excess {bounds:.1e}, rigid {rigid:.1e}, midplane |w-0.5| {mid:.1e}"
        ),
    )
}

fn blob(n: usize, center: [f64; 3], sigma: f64) -> AttenuationVolume {
    let mut data = vec![0.0f32; n * n * n];
    for k in 0..n {
        for j in 0..n {
            for i in 0..n {
                let d2 = (i as f64 - center[0]).powi(2) + (j as f64 - center[1]).powi(2) + (k as f64 - center[2]).powi(2);
                data[i + n * (j + n * k)] = (0.02 * (-d2 / (2.0 * sigma * sigma)).exp()) as f32;
            }
        }
    }
    AttenuationVolume::new([n; 3], Vector3::repeat(1.0), Point3::origin(), data).unwrap()
}

fn registration() -> Outcome {
    let n = 64;
    let c = n as f64 / 2.0 - 1.0;
    let i1 = blob(n, [c, c, c], 6.0);
    let i2 = blob(n, [c + 3.0, c, c], 6.0);
    let r = register_volumes(&i1, &i2, &RegistrationParams::default()).unwrap();
    let monotone = r.energies.windows(2).all(|w| w[1] <= w[0]);
    let peak = i1.max_value();
    let d = r.field.mean_displacement(|i| i1.data()[i] > 0.1 * peak);
    let err = (d - Vector3::new(3.0, 0.0, 0.0)).norm();
    let a0 = interpolate_phase(&i1, &r.field, 0.0).unwrap();
    let identical = a0.data().iter().zip(i1.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    outcome(
        err < 0.3 && identical && monotone,
        format!(
            "mean displacement error {err:.3} voxel, a=0 bit-identical {identical}, energy monotone {monotone} ({} steps)",
            r.energies.len()
        ),
    )
}

fn stereo() -> Outcome {
    let n = 512;
    let mut spec = PhantomSpec::straight_tube(0.5, 60.0, [128, 128, 288], 0.25);
    spec.centerline = CenterlineSpec::Spline {
        points: vec![[-6.0, -4.0, -30.0], [4.0, 3.0, -15.0], [-3.0, 5.0, 0.0], [5.0, -4.0, 15.0], [-2.0, 2.0, 30.0]],
    };
    spec.vessel = 0.5;
    spec.motion = Some(Motion {
        amplitude_mm: 4.0,
        direction: [1.0, 1.0, 0.0],
    });
    let p1 = CArmPose::default().with_detector(n, n);
    let p2 = CArmPose::default().with_angles_deg(90.0, 0.0).with_detector(n, n);
    let (c1, c2) = (CameraModel::from_carm(&p1).unwrap(), CameraModel::from_carm(&p2).unwrap());
    let presets = [(34.3, 29.7), (-30.2, 0.2), (-32.4, -0.3), (-32.4, -32.1)];
    let mask_r = spec.radius_mm * p1.focal_px().0 / p1.spd_mm;

    let mut worst_mte = 0.0f64;
    let mut worst_dsc_count = usize::MAX;
    let mut dscs = Vec::new();
    for phase in [0.0, 0.25, 0.5, 0.75] {
        let ph = generate_vessel_phantom(&spec.at_phase(phase)).unwrap();
        let tree = build_octree(&ph.volume, 0.0);
        let i1 = render_drr(&ph.volume, &p1, Some(&tree)).unwrap().map(|d| (-d).exp());
        let i2 = render_drr(&ph.volume, &p2, Some(&tree)).unwrap().map(|d| (-d).exp());
        let rec = match reconstruct_guidewire(&i1, &i2, &c1, &c2, &StereoParams::default()) {
            Ok(r) => r,
            Err(e) => return outcome(false, format!("phase {phase}: {e}")),
        };
        let pts = rec.curve.sample(400);
        worst_mte = worst_mte.max(curve_mte(&pts, &ph.centerline, 200).unwrap());
        let mut ok = 0;
        for (a, b) in presets {
            let cam = CameraModel::from_carm(&CArmPose::default().with_angles_deg(a, b).with_detector(n, n)).unwrap();
            let flat = |v: &[Point3<f64>]| -> Vec<Point3<f64>> {
                v.iter().map(|x| cam.project(x).unwrap()).map(|q| Point3::new(q.x, q.y, 0.0)).collect()
            };
            let d = dice(&polyline_mask(&flat(&pts), n, n, mask_r), &polyline_mask(&flat(&ph.centerline), n, n, mask_r)).unwrap();
            dscs.push(d);
            ok += usize::from(d >= 0.75);
        }
        worst_dsc_count = worst_dsc_count.min(ok);
    }

    // noise-free round trip from exact projections of a helix
    let helix: Vec<Point3<f64>> = (0..200)
        .map(|i| {
            let s = i as f64 / 199.0;
            let th = 3.0 * PI * s;
            Point3::new(15.0 * th.cos(), 15.0 * th.sin(), -30.0 + 60.0 * s)
        })
        .collect();
    let cl = |cam: &CameraModel| {
        let uv: Vec<_> = helix.iter().map(|x| cam.project(x).unwrap()).collect();
        Centerline2D::from_polyline(&uv, n, n, &CenterlineParams::default()).unwrap()
    };
    let rt = reconstruct_from_centerlines(&cl(&c1), &cl(&c2), &c1, &c2, None, &StereoParams::default()).unwrap();
    let s = rt.curve.sample(2000);
    let dev = s
        .iter()
        .map(|p| cathlab::bspline::point_polyline_distance(p, &helix))
        .chain(helix.iter().map(|p| cathlab::bspline::point_polyline_distance(p, &s)))
        .fold(0.0, f64::max);
    let min_dsc = dscs.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        worst_mte < 1.0 && worst_dsc_count >= 3 && dev < 0.1,
        format!(
            "worst MTE {worst_mte:.3} mm, DSC >= 0.75 in at least {worst_dsc_count}/4 presets per phase (min {min_dsc:.3}), round trip {dev:.4} mm"
        ),
    )
}

fn next_permutation(p: &mut [usize]) -> bool {
    let Some(i) = (1..p.len()).rev().find(|&i| p[i - 1] < p[i]) else {
        return false;
    };
    let j = (i..p.len()).rev().find(|&j| p[j] > p[i - 1]).unwrap();
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut pt = || Point3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
    let mut w_exact = true;
    for _ in 0..5 {
        let a: Vec<_> = (0..8).map(|_| pt()).collect();
        let b: Vec<_> = (0..8).map(|_| pt()).collect();
        let mut perm: Vec<usize> = (0..8).collect();
        let mut best = f64::INFINITY;
        loop {
            let s: f64 = (0..8).map(|i| (a[i] - b[perm[i]]).norm()).sum();
            best = best.min(s / 8.0);
            if !next_permutation(&mut perm) {
                break;
            }
        }
        w_exact &= wasserstein_trajectories(&a, &b).unwrap() == best;
    }

    // 4x4 masks with 3 and 4 pixels set, 2 shared: 2*2/(3+4)
    let m1: Vec<bool> = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0].iter().map(|&x| x == 1).collect();
    let m2: Vec<bool> = [0, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0].iter().map(|&x| x == 1).collect();
    let dsc_ok = dice(&m1, &m2).unwrap() == 4.0 / 7.0;

    let p: Vec<_> = (0..4).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
    let q: Vec<_> = [1.0, 0.0, 2.0, 0.0].iter().enumerate().map(|(i, &y)| Point3::new(i as f64, y, 0.0)).collect();
    let mte_ok = mean_trajectory_error(&p, &q).unwrap() == 0.75;
    let me_ok = max_error_pct(&p, &q, 3.0).unwrap() == 2.0 / 3.0 * 100.0;

    let mut overall = 0.0f64;
    for _ in 0..50 {
        let line = |len: f64, wiggle: f64| -> Vec<Point3<f64>> {
            (0..20).map(|i| Point3::new(len * i as f64 / 19.0, wiggle * (i as f64).sin(), 0.0)).collect()
        };
        let v = VesselDescriptor::new(line(rng.gen_range(50.0..70.0), rng.gen_range(0.0..3.0)), (0..10).map(|_| rng.gen_range(2.0..4.0)).collect(), Some(rng.gen_range(30.0..90.0))).unwrap();
        let r = VesselDescriptor::new(line(60.0, 1.0), vec![3.0; 10], Some(60.0)).unwrap();
        let c = morphological_consistency(&v, &r).unwrap();
        overall = overall.max((c.c_overall - (0.3 * c.c_l + 0.3 * c.c_d + 0.2 * c.c_t + 0.2 * c.c_theta)).abs());
    }
    outcome(
        w_exact && dsc_ok && mte_ok && me_ok && overall <= 1e-12,
        format!("W1 vs brute force exact {w_exact}, DSC {dsc_ok}, MTE {mte_ok}, ME {me_ok}, overall residual {overall:.1e}"),
    )
}

fn enhancement() -> Outcome {
    let mut spec = PhantomSpec::straight_tube(1.5, 60.0, [96, 96, 96], 0.8);
    spec.centerline = CenterlineSpec::Spline {
        points: vec![[-30.0, 0.0, -15.0], [-10.0, 5.0, 5.0], [10.0, -5.0, -5.0], [30.0, 0.0, 15.0]],
    };
    spec.background = 0.002;
    let ph = generate_vessel_phantom(&spec).unwrap();
    let n = 256;
    let pose = CArmPose::default().with_detector(n, n);
    let clean = render_drr(&ph.volume, &pose, None).unwrap();
    let pm = projection_matrix(&pose);
    let pts: Vec<_> = ph.centerline.iter().map(|c| project_point(&pm, c).unwrap()).collect();
    let rpx = spec.radius_mm * pose.focal_px().0 / pose.spd_mm;
    let dist = |x: usize, y: usize| {
        pts.iter()
            .map(|q| ((q.x - x as f64 - 0.5).powi(2) + (q.y - y as f64 - 0.5).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min)
    };
    let d = Image2D::from_fn(n, n, |x, y| dist(x, y) as f32);
    let fg = d.map(|v| if (v as f64) <= 0.6 * rpx { 1.0 } else { 0.0 });
    let bg = d.map(|v| if (v as f64) >= 3.0 * rpx + 3.0 { 1.0 } else { 0.0 });
    // noise sd a quarter of the peak vessel line integral
    let sd = 0.25 * 2.0 * spec.radius_mm * spec.vessel as f64;
    let params = EnhanceParams::default();
    let mut ratios = Vec::new();
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        let mut noisy = clean.clone();
        for v in noisy.pixels_mut() {
            *v = (*v as f64 + noise.sample(&mut rng)) as f32;
        }
        let out = enhance_pipeline(&noisy, None, &params).unwrap();
        ratios.push(cnr(&out, &fg, &bg).unwrap() / cnr(&noisy, &fg, &bg).unwrap());
    }
    let good = ratios.iter().filter(|&&r| r >= 1.2).count();

    let step = Image2D::from_fn(64, 64, |x, _| {
        let t = (x as f64 - 32.0) / 2.0;
        (0.5 * (1.0 + erf(t / 2f64.sqrt()))) as f32
    });
    let out = enhance_pipeline(&step, None, &params).unwrap();
    let row = |img: &Image2D| (0..64).map(|x| img.get(x, 32) as f64).collect::<Vec<_>>();
    let (fb, fa) = (edge_fwhm(&row(&step)).unwrap(), edge_fwhm(&row(&out)).unwrap());
    let rs: Vec<String> = ratios.iter().map(|r| format!("{r:.2}")).collect();
    outcome(
        good >= 9 && fa <= fb,
        format!("CNR ratio >= 1.2 in {good}/10 seeds [{}], edge FWHM {fb:.3} -> {fa:.3} px", rs.join(" ")),
    )
}

/// Abramowitz-Stegun 7.1.26, |error| < 1.5e-7.
fn erf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.3275911 * x.abs());
    let y = 1.0 - (((((1.061405429 * t - 1.453152027) * t) + 1.421413741) * t - 0.284496736) * t + 0.254829592) * t * (-x * x).exp();
    y.copysign(x)
}

fn ecg() -> Outcome {
    let (mut missed, mut extra, mut hr_err) = (0usize, 0usize, 0.0f64);
    for (k, hr) in [45.0, 60.0, 75.0, 90.0, 105.0, 120.0].into_iter().enumerate() {
        for seed in 0..3u64 {
            let (trace, truth) = synthesize_ecg(&EcgSynthParams {
                hr_bpm: hr,
                duration_s: 30.0,
                sample_rate_hz: 360.0,
                snr_db: Some(10.0),
                rr_jitter: 0.03,
                baseline_mv: 0.15,
                seed: 100 + seed + 10 * k as u64,
            })
            .unwrap();
            let found = &trace.r_peaks_s;
            let hits = truth.iter().filter(|t| found.iter().any(|f| (f - *t).abs() < 0.05)).count();
            missed += truth.len() - hits;
            extra += found.len().saturating_sub(hits);
            let m = heart_rates(found).unwrap().mean_bpm;
            let m0 = heart_rates(&truth).unwrap().mean_bpm;
            hr_err = hr_err.max((m - m0).abs());
        }
    }
    let hand = heart_rates(&[0.0, 1.0, 2.2]).unwrap().mean_bpm;
    outcome(
        missed == 0 && extra == 0 && hr_err < 0.5 && (hand - 600.0 / 11.0).abs() < 1e-9,
        format!("missed {missed}, false positives {extra}, max mean-HR error {hr_err:.3} bpm, hand case {hand:.3} bpm"),
    )
}

async fn api_get(app: &axum::Router, uri: &str) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(Request::get(uri).body(Body::empty()).unwrap()).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

fn service() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let spec_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenes/straight_tube.json");
    let spec = SceneSpec::from_json(&std::fs::read_to_string(spec_path).unwrap()).unwrap();
    let dir = tmp.path().join(&spec.id);
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = Config::default();
    generate_scene(&spec, &dir, &cfg).unwrap();
    let scene = Scene::load(&dir, &cfg.renderer).unwrap();
    let app = router(Arc::new(AppState::new(cfg, vec![scene]).unwrap()));

    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let uri = "/api/render?alpha_deg=-20&beta_deg=15&phase=0&w=160&h=120";
    let ((s1, a), (s2, b)) = rt.block_on(async { (api_get(&app, uri).await, api_get(&app, uri).await) });

    let png = tmp.path().join("cli.png");
    let out = Command::new(env!("CARGO_BIN_EXE_cathlab"))
        .args(["render", "--scene", dir.to_str().unwrap(), "--alpha", "-20", "--beta", "15", "--phase", "0"])
        .args(["--width", "160", "--height", "120", "--out", png.to_str().unwrap()])
        .env_remove("CATHLAB_WORKSPACE")
        .output()
        .unwrap();
    let cli = std::fs::read(&png).unwrap_or_default();
    let api_same = s1 == StatusCode::OK && s2 == StatusCode::OK && a == b;
    let cli_same = out.status.success() && cli == a;
    outcome(
        api_same && cli_same,
        format!("repeated API renders identical {api_same}, CLI PNG identical to API {cli_same} ({} bytes)", a.len()),
    )
}

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("geometry", 1, geometry),
        ("drr-slab", 10, drr_slab),
        ("octree", 120, octree),
        ("hemodynamics", 5, hemodynamics),
        ("mesh-volume", 2, mesh_volume_check),
        ("skinning", 30, skinning),
        ("registration", 60, registration),
        ("stereo", 180, stereo),
        ("metrics", 30, metrics),
        ("enhancement", 60, enhancement),
        ("ecg", 10, ecg),
        ("service", 60, service),
    ];
    let mut failed = Vec::new();
    for (name, limit, run) in criteria {
        let t = Instant::now();
        let o = run();
        let o = within(Duration::from_secs(limit), o, t.elapsed());
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(name);
        }
    }
    let unexpected: Vec<_> = failed.iter().filter(|n| !KNOWN_GAPS.contains(n)).collect();
    println!("{} of 12 criteria passed; known gaps: {}", 12 - failed.len(), KNOWN_GAPS.join(", "));
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
