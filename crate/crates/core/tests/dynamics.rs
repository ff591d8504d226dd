mod common;

use cathlab::dynamics::*;
use cathlab::hemo::{synthesize_ecg, EcgSynthParams};
use cathlab::volume::AttenuationVolume;
use common::*;
use nalgebra::{Point3, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check_invariants(w: &SkinningWeights, h: &HandleSet) {
    for v in 0..w.n_vertices() {
        let row = w.row(v);
        assert!(row.iter().all(|&x| (-1e-9..=1.0 + 1e-9).contains(&x)));
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
    for (b, vs) in h.vertices.iter().enumerate() {
        assert!(vs.iter().all(|&v| w.weight(v, b) == 1.0));
    }
}

#[test]
fn weights_satisfy_invariants_on_test_meshes() {
    let bar_mesh = bar([24, 4, 4]);
    let cases = [
        (bar_mesh.clone(), bar_end_handles(&bar_mesh, 24.0)),
        (tube(), tube_handles(&tube())),
        (branched_tube(), branched_handles(&branched_tube())),
    ];
    for (mesh, h) in &cases {
        assert!(mesh.vertices.len() <= 5000);
        let w = compute_skinning_weights(mesh, h).unwrap();
        check_invariants(&w, h);
    }
}

#[test]
fn single_global_transform_is_reproduced_exactly() {
    let mesh = branched_tube();
    let h = branched_handles(&mesh);
    let w = compute_skinning_weights(&mesh, &h).unwrap();
    let t = RigidTransform {
        rotation: UnitQuaternion::from_euler_angles(0.3, -0.7, 1.1),
        translation: Vector3::new(4.0, -2.5, 10.0),
    };
    let out = deform_mesh(&mesh, &w, &vec![t; h.len()]).unwrap();
    for (a, b) in mesh.vertices.iter().zip(&out.vertices) {
        assert!((t.apply(a) - b).norm() <= 1e-9);
    }
}

#[test]
fn mirrored_handles_give_mirrored_weights() {
    let mesh = branched_tube();
    let h = branched_handles(&mesh);
    let w = compute_skinning_weights(&mesh, &h).unwrap();
    let mirror = mirror_map(&mesh, |p| Point3::new(p.x, -p.y, p.z));
    let mut checked = 0;
    for (v, m) in mirror.iter().enumerate() {
        let m = m.expect("grid is mirror symmetric");
        assert!((w.weight(v, 0) - w.weight(m, 0)).abs() < 1e-6);
        assert!((w.weight(v, 1) - w.weight(m, 2)).abs() < 1e-6);
        checked += 1;
    }
    assert_eq!(checked, mesh.vertices.len());
}

#[test]
fn symmetric_bar_midplane_is_half() {
    let mesh = bar([20, 4, 4]);
    let w = compute_skinning_weights(&mesh, &bar_end_handles(&mesh, 20.0)).unwrap();
    let mid: Vec<usize> = (0..mesh.vertices.len()).filter(|&v| (mesh.vertices[v].x - 10.0).abs() < 1e-9).collect();
    assert_eq!(mid.len(), 25);
    for v in mid {
        assert!((w.weight(v, 0) - 0.5).abs() <= 1e-6);
    }
}

#[test]
fn blend_of_two_translations() {
    let mesh = bar([2, 1, 1]);
    let w = SkinningWeights {
        n_handles: 2,
        values: mesh.vertices.iter().flat_map(|_| [0.25, 0.75]).collect(),
    };
    let (d1, d2) = (Vector3::new(4.0, 0.0, 0.0), Vector3::new(0.0, -8.0, 2.0));
    let out = deform_mesh(&mesh, &w, &[RigidTransform::translation(d1), RigidTransform::translation(d2)]).unwrap();
    let want = d1 * 0.25 + d2 * 0.75;
    for (a, b) in mesh.vertices.iter().zip(&out.vertices) {
        assert!((b - a - want).norm() < 1e-12);
    }
    assert!(deform_mesh(&mesh, &w, &[RigidTransform::identity()]).is_err());
}

#[test]
fn keyposes_round_trip_through_json() {
    let mut h = HandleSet::new(vec![vec![0, 1], vec![5]]);
    h.keyposes = vec![
        vec![RigidTransform::identity(); 2],
        vec![
            RigidTransform::rotation_about(&Point3::new(1.0, 0.0, 0.0), &Vector3::y(), 0.2).unwrap(),
            RigidTransform::translation(Vector3::new(0.0, 0.0, 1.5)),
        ],
    ];
    let back: HandleSet = serde_json::from_str(&serde_json::to_string(&h).unwrap()).unwrap();
    assert_eq!(back.vertices, h.vertices);
    for (a, b) in back.keyposes.iter().flatten().zip(h.keyposes.iter().flatten()) {
        assert!((a.rotation.coords - b.rotation.coords).norm() < 1e-15);
        assert!((a.translation - b.translation).norm() < 1e-12);
    }
    let half = h.pose_at(0.5).unwrap();
    assert!((half[1].translation.z - 0.75).abs() < 1e-12);
}

fn random_feasible(n: usize, h: &HandleSet, rng: &mut ChaCha8Rng) -> SkinningWeights {
    let nh = h.len();
    let mut owner = vec![usize::MAX; n];
    for (b, vs) in h.vertices.iter().enumerate() {
        for &v in vs {
            owner[v] = b;
        }
    }
    let mut values = Vec::with_capacity(n * nh);
    for &o in &owner {
        if o != usize::MAX {
            values.extend((0..nh).map(|b| f64::from(u8::from(b == o))));
        } else {
            let r: Vec<f64> = (0..nh).map(|_| rng.gen_range(0.0..1.0)).collect();
            let s: f64 = r.iter().sum();
            values.extend(r.iter().map(|x| x / s));
        }
    }
    SkinningWeights { n_handles: nh, values }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn solved_energy_beats_random_feasible_fields(seed in 0u64..10_000, nh in 2usize..4) {
        let mesh = bar([6, 3, 3]);
        let n = mesh.vertices.len();
        prop_assert!(n <= 200);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = std::collections::BTreeSet::new();
        let mut handles = Vec::new();
        while handles.len() < nh {
            let v = rng.gen_range(0..n);
            if picked.insert(v) {
                handles.push(vec![v]);
            }
        }
        let h = HandleSet::new(handles);
        let w = compute_skinning_weights(&mesh, &h).unwrap();
        let q = biharmonic_operator(&mesh).unwrap();
        let e = skinning_energy(&q, &w);
        for _ in 0..100 {
            let r = random_feasible(n, &h, &mut rng);
            prop_assert!(e <= skinning_energy(&q, &r));
        }
    }

    #[test]
    fn pose_blend_stays_rigid(t in 0.0f64..1.0, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let p1 = vec![RigidTransform { rotation: UnitQuaternion::from_euler_angles(a, 0.2, -b), translation: Vector3::new(a, b, 1.0) }];
        let p2 = vec![RigidTransform { rotation: UnitQuaternion::from_euler_angles(-b, a, 0.5), translation: Vector3::new(0.0, 2.0 * a, b) }];
        let m = interpolate_pose(&p1, &p2, t).unwrap();
        let r = m[0].rotation.to_rotation_matrix().into_inner();
        prop_assert!((r.transpose() * r - nalgebra::Matrix3::identity()).norm() < 1e-12);
        prop_assert!((m[0].translation - (p1[0].translation * (1.0 - t) + p2[0].translation * t)).norm() < 1e-12);
    }
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

#[test]
fn known_shift_is_recovered() {
    let n = 32;
    let c = n as f64 / 2.0 - 1.0;
    let i1 = blob(n, [c, c, c], 4.0);
    let i2 = blob(n, [c + 2.0, c, c], 4.0);
    let r = register_volumes(&i1, &i2, &RegistrationParams::default()).unwrap();
    assert!(r.energies.windows(2).all(|w| w[1] <= w[0]));
    let peak = i1.max_value();
    let d = r.field.mean_displacement(|i| i1.data()[i] > 0.1 * peak);
    assert!((d - Vector3::new(2.0, 0.0, 0.0)).norm() < 0.3, "{d:?}");

    // a = 1 reproduces the second phase
    let warped = interpolate_phase(&i1, &r.field, 1.0).unwrap();
    let mae = warped.data().iter().zip(i2.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / warped.len() as f64;
    assert!(mae < 0.05 * peak as f64, "{mae}");
}

#[test]
fn half_phase_translates_by_half() {
    let n = 32;
    let i1 = blob(n, [12.0, 15.0, 15.0], 3.0);
    let f = DeformationField::uniform(&i1, Vector3::new(6.0, 0.0, 0.0));
    let half = interpolate_phase(&i1, &f, 0.5).unwrap();
    // integer-shift cross-correlation along x
    let corr = |s: i64| -> f64 {
        let mut acc = 0.0;
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let src = i as i64 - s;
                    if (0..n as i64).contains(&src) {
                        acc += half.get(i, j, k) as f64 * i1.get(src as usize, j, k) as f64;
                    }
                }
            }
        }
        acc
    };
    let best = (-6..=6).max_by(|&a, &b| corr(a).total_cmp(&corr(b))).unwrap();
    assert_eq!(best, 3);
}

#[test]
fn phase_interpolation_is_continuous() {
    let i1 = blob(20, [9.0, 10.0, 8.0], 3.0);
    let f = DeformationField::uniform(&i1, Vector3::new(2.0, -1.0, 0.5));
    let l2 = |a: f64, b: f64| {
        let (x, y) = (interpolate_phase(&i1, &f, a).unwrap(), interpolate_phase(&i1, &f, b).unwrap());
        x.data().iter().zip(y.data()).map(|(p, q)| ((p - q) as f64).powi(2)).sum::<f64>().sqrt()
    };
    let big = l2(0.4, 0.401);
    let small = l2(0.4, 0.4001);
    assert!(big < 1e-3 && small < big);
}

#[test]
fn grid_mismatch_is_rejected() {
    let a = blob(8, [4.0; 3], 2.0);
    let b = blob(9, [4.0; 3], 2.0);
    assert!(register_volumes(&a, &b, &RegistrationParams::default()).is_err());
    assert!(interpolate_phase(&a, &DeformationField::zeros_like(&b), 0.5).is_err());
}

#[test]
fn clock_follows_synthetic_ecg() {
    let (ecg, truth) = synthesize_ecg(&EcgSynthParams {
        hr_bpm: 75.0,
        duration_s: 10.0,
        ..Default::default()
    })
    .unwrap();
    let clock = phase_clock(&ecg, 20).unwrap();
    for w in ecg.r_peaks_s.windows(2) {
        assert_eq!(clock.ecg_phase(w[0]), 0.0);
        let mid = clock.model_phase_at(0.5 * (w[0] + w[1]));
        assert!((mid.rr_fraction - 0.505).abs() < 1e-9);
        let before = clock.model_phase_at(w[1] - 1e-6);
        assert!(before.ecg_phase > 0.999 && before.ecg_phase < 1.0);
    }
    assert!(truth.len() >= 2);
}
