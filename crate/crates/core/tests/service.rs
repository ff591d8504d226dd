use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use nalgebra::Point3;
use serde_json::{json, Value};
use tower::ServiceExt;

use cathlab::geometry::{project_point, projection_matrix};
use cathlab::hemo::{synthesize_ecg, EcgSynthParams};
use cathlab::image::{decode_pgm, load_raw, Image2D};
use cathlab::metrics::VesselDescriptor;
use cathlab::service::scene::{cosine_ventricle, VentricleSpec};
use cathlab::service::{generate_scene, router, AppState, Config, RenderRequest, Scene, SceneSpec};
use cathlab::volume::phantom::Motion;
use cathlab::volume::{save_mesh, CenterlineSpec};

const BIN: &str = env!("CARGO_BIN_EXE_cathlab");

fn bundled_spec() -> SceneSpec {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenes/straight_tube.json");
    SceneSpec::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn make_scene(dir: &Path, spec: &SceneSpec) -> PathBuf {
    let out = dir.join(&spec.id);
    std::fs::create_dir_all(&out).unwrap();
    generate_scene(spec, &out, &Config::default()).unwrap();
    out
}

fn cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("CATHLAB_WORKSPACE").output().unwrap()
}

fn stderr_error(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.trim()).unwrap_or_else(|_| panic!("stderr is not JSON: {text}"))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Raw 16-bit samples of a grayscale PNG.
fn png_samples(bytes: &[u8]) -> (usize, usize, Vec<u16>) {
    let dec = png::Decoder::new(bytes);
    let mut reader = dec.read_info().unwrap();
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).unwrap();
    assert_eq!(info.bit_depth, png::BitDepth::Sixteen);
    let s = buf[..info.buffer_size()].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    (info.width as usize, info.height as usize, s)
}

#[test]
fn cli_render_band_follows_projected_centerline() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = bundled_spec();
    let scene = make_scene(tmp.path(), &spec);
    for (alpha, beta) in [(0.0, 0.0), (25.0, -15.0)] {
        let img_path = tmp.path().join(format!("r_{alpha}_{beta}.pgm"));
        let out = cli(&["render", "--scene", p(&scene), "--alpha", &alpha.to_string(), "--beta", &beta.to_string(), "--out", p(&img_path)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let img = decode_pgm(&std::fs::read(&img_path).unwrap()).unwrap();
        let pose = spec.pose.with_angles_deg(alpha, beta);
        let pm = projection_matrix(&pose);
        let a = project_point(&pm, &Point3::new(-40.0, 0.0, 6.0)).unwrap();
        let b = project_point(&pm, &Point3::new(40.0, 0.0, 6.0)).unwrap();
        assert!((b.x - a.x).abs() > (b.y - a.y).abs(), "tube should run along detector columns");
        let mut checked = 0;
        for col in (img.width() / 2 - 40)..(img.width() / 2 + 40) {
            let u = col as f64 + 0.5;
            let v_line = a.y + (b.y - a.y) * (u - a.x) / (b.x - a.x);
            let (mut sw, mut swy) = (0.0, 0.0);
            for row in 0..img.height() {
                let w = img.get(col, row) as f64;
                sw += w;
                swy += w * (row as f64 + 0.5);
            }
            assert!(sw > 0.0);
            assert!((swy / sw - v_line).abs() < 0.5, "col {col}: band at {} vs {v_line}", swy / sw);
            checked += 1;
        }
        assert_eq!(checked, 80);
    }
}

#[test]
fn cli_hemo_on_cosine_cycle() {
    let tmp = tempfile::tempdir().unwrap();
    let meshes = tmp.path().join("meshes");
    std::fs::create_dir_all(&meshes).unwrap();
    for (k, m) in cosine_ventricle(&VentricleSpec::default()).unwrap().iter().enumerate() {
        save_mesh(m, meshes.join(format!("m{k:02}.obj"))).unwrap();
    }
    let (ecg, _) = synthesize_ecg(&EcgSynthParams {
        hr_bpm: 75.0,
        duration_s: 12.0,
        ..Default::default()
    })
    .unwrap();
    let ecg_path = tmp.path().join("ecg.csv");
    ecg.save_csv(&ecg_path).unwrap();
    let report = tmp.path().join("report.json");
    let out = cli(&["hemo", "--meshes", p(&meshes), "--ecg", p(&ecg_path), "--out", p(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert!((r["edv_ml"].as_f64().unwrap() - 150.0).abs() <= 0.2, "{r}");
    assert!((r["esv_ml"].as_f64().unwrap() - 50.0).abs() <= 0.2, "{r}");
    assert!((r["mean_hr_bpm"].as_f64().unwrap() - 75.0).abs() < 0.5);
}

#[test]
fn cli_metrics_identical_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let centerline: Vec<Point3<f64>> = (0..40)
        .map(|i| {
            let s = i as f64 / 39.0;
            Point3::new(-30.0 + 60.0 * s, 8.0 * (3.0 * s).sin(), 4.0 * s)
        })
        .collect();
    let v = VesselDescriptor::new(centerline, vec![3.2, 3.0, 2.6, 2.4], Some(55.0)).unwrap();
    let path = tmp.path().join("v.json");
    std::fs::write(&path, serde_json::to_string(&v).unwrap()).unwrap();
    let out_path = tmp.path().join("m.json");
    let out = cli(&["metrics", "--ref", p(&path), "--test", p(&path), "--out", p(&out_path)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    for k in ["C_L", "C_D", "C_T", "C_theta", "C_overall"] {
        assert_eq!(m[k].as_f64(), Some(100.0), "{k}");
    }
    assert_eq!(m["DSC"].as_f64(), Some(1.0));
    assert_eq!(m["MTE"].as_f64(), Some(0.0));
    assert_eq!(m["ME_pct"].as_f64(), Some(0.0));
}

#[test]
fn cli_exit_codes_and_error_json() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(&["render", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_error(&out)["error"]["kind"], "usage");

    let out = cli(&["render", "--scene", p(&tmp.path().join("missing")), "--out", "x.pgm"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out)["error"]["kind"], "io");

    let scene = make_scene(tmp.path(), &bundled_spec());
    let out = cli(&["render", "--scene", p(&scene), "--beta", "95", "--out", p(&tmp.path().join("x.pgm"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_error(&out)["error"]["kind"], "invalid_pose");

    let out = cli(&["sequence", "--scene", p(&scene), "--pose", "nope", "--frames", "2", "--out", p(&tmp.path().join("seq"))]);
    assert_eq!(out.status.code(), Some(1));

    let out = cli(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
}

#[test]
fn cli_sequence_writes_indexed_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = bundled_spec();
    spec.pose = spec.pose.with_detector(64, 64);
    let scene = make_scene(tmp.path(), &spec);
    let dir = tmp.path().join("seq");
    let out = cli(&["sequence", "--scene", p(&scene), "--pose", "10,-5", "--frames", "5", "--fps", "4", "--out", p(&dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let index: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(dir.join("frames.json")).unwrap()).unwrap();
    assert_eq!(index.len(), 5);
    // 60 bpm ECG sampled at 4 fps: quarter-cycle phase steps
    let ph: Vec<f64> = index.iter().map(|f| f["phase"]["ecg_phase"].as_f64().unwrap()).collect();
    for w in ph.windows(2) {
        let d = (w[1] - w[0]).rem_euclid(1.0);
        assert!((d - 0.25).abs() < 0.02, "{ph:?}");
    }
    for f in &index {
        assert!(dir.join(f["file"].as_str().unwrap()).is_file());
    }
}

fn moving_spec() -> SceneSpec {
    let mut spec = bundled_spec();
    spec.id = "moving".into();
    spec.phantom.dims = [64, 48, 48];
    spec.phantom.centerline = CenterlineSpec::Line {
        start: [-28.0, 0.0, 6.0],
        end: [28.0, 0.0, 6.0],
    };
    spec.phantom.motion = Some(Motion {
        amplitude_mm: 4.0,
        direction: [0.0, 0.0, 1.0],
    });
    spec.phases = Some(5);
    spec.ventricle = None;
    spec.pose = spec.pose.with_detector(96, 96);
    spec
}

#[test]
fn phase_volumes_are_hit_exactly_and_blended_between() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = make_scene(tmp.path(), &moving_spec());
    let cfg = Config::default();
    let sc = Scene::load(&dir, &cfg.renderer).unwrap();
    assert_eq!(sc.n_phases(), 5);
    let at = |phase: f64| sc.render(&RenderRequest { phase, ..Default::default() }, &cfg).unwrap();
    let (v1, _) = sc.volume_at(0.25).unwrap();
    let direct = cathlab::drr::render_drr(&v1, &sc.pose_for(&RenderRequest::default()).unwrap(), None).unwrap();
    let via_scene = at(0.25);
    for (a, b) in direct.pixels().iter().zip(via_scene.pixels()) {
        assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
    }
    let (mid, _) = sc.volume_at(0.375).unwrap();
    let (v2, _) = sc.volume_at(0.5).unwrap();
    for ((m, a), b) in mid.data().iter().zip(v1.data()).zip(v2.data()) {
        assert!((m - 0.5 * (a + b)).abs() <= 1e-6);
    }
    assert!(sc.volume_at(1.5).is_err());
}

fn app(dirs: &[PathBuf]) -> (axum::Router, Arc<AppState>) {
    let cfg = Config::default();
    let scenes = dirs.iter().map(|d| Scene::load(d, &cfg.renderer).unwrap()).collect();
    let st = Arc::new(AppState::new(cfg, scenes).unwrap());
    (router(st.clone()), st)
}

async fn get(app: &axum::Router, uri: &str) -> (StatusCode, Vec<u8>) {
    let res = app.clone().oneshot(Request::get(uri).body(Body::empty()).unwrap()).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn post_json(app: &axum::Router, uri: &str, body: &Value) -> (StatusCode, Value) {
    let req = Request::post(uri)
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test]
async fn api_render_is_deterministic_and_matches_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let scene = make_scene(tmp.path(), &bundled_spec());
    let (app, _) = app(std::slice::from_ref(&scene));
    let uri = "/api/render?alpha_deg=12.5&beta_deg=-7&phase=0.3&w=128&h=96";
    let (s1, a) = get(&app, uri).await;
    let (s2, b) = get(&app, uri).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a, b, "identical queries must give identical bytes");

    let pgm = tmp.path().join("cli.pgm");
    let raw = tmp.path().join("cli.raw");
    for out in [&pgm, &raw] {
        let o = cli(&[
            "render", "--scene", p(&scene), "--alpha", "12.5", "--beta", "-7", "--phase", "0.3", "--width", "128", "--height", "96", "--out", p(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let (w, h, api) = png_samples(&a);
    let cli_img = decode_pgm(&std::fs::read(&pgm).unwrap()).unwrap();
    assert_eq!((w, h), (cli_img.width(), cli_img.height()));
    assert!(api.iter().zip(cli_img.pixels()).all(|(&x, &y)| x as f32 == y));

    // float buffers before encoding are identical too
    let cfg = Config::default();
    let sc = Scene::load(&scene, &cfg.renderer).unwrap();
    let req = RenderRequest {
        alpha_deg: 12.5,
        beta_deg: -7.0,
        phase: 0.3,
        width: Some(128),
        height: Some(96),
        ..Default::default()
    };
    let engine = sc.render(&req, &cfg).unwrap();
    let from_cli: Image2D = load_raw(&raw).unwrap();
    assert!(engine.pixels().iter().zip(from_cli.pixels()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn reloading_a_scene_reproduces_renders() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = bundled_spec();
    spec.pose = spec.pose.with_detector(96, 96);
    let dir = make_scene(tmp.path(), &spec);
    let cfg = Config::default();
    let req = RenderRequest {
        alpha_deg: -20.0,
        beta_deg: 30.0,
        enhance: true,
        ..Default::default()
    };
    let a = Scene::load(&dir, &cfg.renderer).unwrap().render(&req, &cfg).unwrap();
    let b = Scene::load(&dir, &cfg.renderer).unwrap().render(&req, &cfg).unwrap();
    assert_eq!(a, b);
}

#[tokio::test]
async fn api_status_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = bundled_spec();
    spec.pose = spec.pose.with_detector(64, 64);
    let scene = make_scene(tmp.path(), &spec);
    let (app, _) = app(&[scene]);
    let cases = [
        ("/api/render?beta_deg=95", StatusCode::UNPROCESSABLE_ENTITY),
        ("/api/render?alpha_deg=abc", StatusCode::BAD_REQUEST),
        ("/api/render?phase=1.5", StatusCode::BAD_REQUEST),
        ("/api/render?w=1", StatusCode::BAD_REQUEST),
        ("/api/render?w=100000", StatusCode::BAD_REQUEST),
        ("/api/render?scene=nope", StatusCode::NOT_FOUND),
        ("/api/scene?scene=nope", StatusCode::NOT_FOUND),
        ("/api/ecg?from=5&to=1", StatusCode::BAD_REQUEST),
        ("/api/stream?fps=0", StatusCode::BAD_REQUEST),
        ("/api/stream?fps=1000", StatusCode::BAD_REQUEST),
        ("/api/frame/999", StatusCode::NOT_FOUND),
        ("/api/frame/x", StatusCode::BAD_REQUEST),
        ("/api/session?id=ghost", StatusCode::NOT_FOUND),
    ];
    for (uri, want) in cases {
        let (status, body) = get(&app, uri).await;
        assert_eq!(status, want, "{uri}");
        let v: Value = serde_json::from_slice(&body).unwrap();
        assert!(v["error"]["kind"].is_string(), "{uri}: {v}");
    }
}

#[tokio::test]
async fn api_scene_ecg_and_hemodynamics() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = bundled_spec();
    spec.pose = spec.pose.with_detector(64, 64);
    let scene = make_scene(tmp.path(), &spec);
    let bare = make_scene(tmp.path(), &moving_spec());
    let (app, _) = app(&[scene, bare]);

    let (s, body) = get(&app, "/api/scene").await;
    assert_eq!(s, StatusCode::OK);
    let info: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(info["id"], "straight-tube");
    assert_eq!(info["dims"], json!([96, 64, 64]));
    assert_eq!(info["scenes"], json!(["moving", "straight-tube"]));
    assert!((info["ecg"]["mean_hr_bpm"].as_f64().unwrap() - 60.0).abs() < 0.5);

    let (s, body) = get(&app, "/api/ecg?from=2&to=4").await;
    assert_eq!(s, StatusCode::OK);
    let ecg: Value = serde_json::from_slice(&body).unwrap();
    let t = ecg["t_s"].as_array().unwrap();
    assert_eq!(t.len(), ecg["mv"].as_array().unwrap().len());
    assert!(t.iter().all(|x| (2.0..4.0).contains(&x.as_f64().unwrap())));
    assert_eq!(ecg["r_peaks_s"].as_array().unwrap().len(), 2);

    let (s, body) = get(&app, "/api/hemodynamics").await;
    assert_eq!(s, StatusCode::OK);
    let h: Value = serde_json::from_slice(&body).unwrap();
    assert!((h["edv_ml"].as_f64().unwrap() - 150.0).abs() <= 0.2);
    assert!((h["esv_ml"].as_f64().unwrap() - 50.0).abs() <= 0.2);
    let (s, _) = get(&app, "/api/hemodynamics?scene=moving").await;
    assert_eq!(s, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn api_concurrent_session_posts_conflict() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = bundled_spec();
    spec.pose = spec.pose.with_detector(64, 64);
    let scene = make_scene(tmp.path(), &spec);
    let (app, _) = app(&[scene]);
    let a = json!({ "revision": 0, "pose": { "alpha_deg": 30.0, "beta_deg": 0.0 } });
    let b = json!({ "revision": 0, "pose": { "alpha_deg": -30.0, "beta_deg": 10.0 } });
    let ((sa, va), (sb, vb)) = tokio::join!(post_json(&app, "/api/session", &a), post_json(&app, "/api/session", &b));
    let mut statuses = [sa.as_u16(), sb.as_u16()];
    statuses.sort();
    assert_eq!(statuses, [200, 409], "{va} {vb}");

    let (s, body) = get(&app, "/api/session").await;
    assert_eq!(s, StatusCode::OK);
    let cur: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(cur["revision"], 1);

    // an out-of-range pose is rejected and leaves the session untouched
    let (s, v) = post_json(&app, "/api/session", &json!({ "revision": 1, "pose": { "alpha_deg": 0.0, "beta_deg": 95.0 } })).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY, "{v}");
    let (s, v) = post_json(&app, "/api/session", &json!({ "revision": 1, "playing": true })).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["revision"], 2);
    let (s, _) = post_json(&app, "/api/session", &json!({ "pose": {} })).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn api_stream_announces_fetchable_frames() {
    let tmp = tempfile::tempdir().unwrap();
    let mut spec = bundled_spec();
    spec.pose = spec.pose.with_detector(64, 64);
    let scene = make_scene(tmp.path(), &spec);
    let (app, st) = app(&[scene]);
    let (s, _) = post_json(&app, "/api/session", &json!({ "revision": 0, "pose": { "alpha_deg": 15.0, "beta_deg": 5.0 }, "playing": true })).await;
    assert_eq!(s, StatusCode::OK);

    let res = app
        .clone()
        .oneshot(Request::get("/api/stream?fps=50&session=default").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(res.status(), StatusCode::OK);
    assert_eq!(res.headers()["content-type"], "text/event-stream");
    let mut body = res.into_body();
    let mut events = Vec::new();
    let mut text = String::new();
    while events.len() < 3 {
        let frame = body.frame().await.unwrap().unwrap();
        if let Ok(data) = frame.into_data() {
            text.push_str(&String::from_utf8_lossy(&data));
        }
        while let Some(end) = text.find("\n\n") {
            let chunk: String = text.drain(..end + 2).collect();
            if let Some(line) = chunk.lines().find_map(|l| l.strip_prefix("data: ")) {
                events.push(serde_json::from_str::<Value>(line).unwrap());
            }
        }
    }
    let ids: Vec<u64> = events.iter().map(|e| e["frame_id"].as_u64().unwrap()).collect();
    assert!(ids.windows(2).all(|w| w[1] > w[0]));
    for e in &events {
        let ph = e["phase"]["ecg_phase"].as_f64().unwrap();
        assert!((0.0..1.0).contains(&ph));
    }
    let last = *ids.last().unwrap();
    assert_eq!(st.sessions.get("default").unwrap().last_frame_id, Some(last));

    let (s, png1) = get(&app, &format!("/api/frame/{}", ids[0])).await;
    assert_eq!(s, StatusCode::OK);
    let (s, png2) = get(&app, &format!("/api/frame/{}", ids[0])).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(png1, png2);
    let (w, h, _) = png_samples(&png1);
    assert_eq!((w, h), (64, 64));
}

#[test]
fn cli_stereo_reconstructs_rendered_wire() {
    use cathlab::drr::render_drr;
    use cathlab::geometry::CArmPose;
    use cathlab::image::save_pgm;
    use cathlab::bspline::point_polyline_distance;
    use cathlab::stereo::{CameraModel, StereoRig};
    use cathlab::volume::{generate_vessel_phantom, PhantomSpec};

    let tmp = tempfile::tempdir().unwrap();
    let mut spec = PhantomSpec::straight_tube(1.0, 50.0, [64, 64, 128], 0.5);
    spec.centerline = CenterlineSpec::Spline {
        points: vec![[-5.0, -3.0, -25.0], [3.0, 2.0, -10.0], [-2.0, 4.0, 5.0], [4.0, -3.0, 20.0]],
    };
    spec.vessel = 0.5;
    let ph = generate_vessel_phantom(&spec).unwrap();
    let poses = [CArmPose::default().with_detector(512, 512), CArmPose::default().with_angles_deg(90.0, 0.0).with_detector(512, 512)];
    let names = ["l.pgm", "r.pgm"];
    for (pose, name) in poses.iter().zip(names) {
        let img = render_drr(&ph.volume, pose, None).unwrap().map(|d| (-d).exp());
        save_pgm(&img, tmp.path().join(name)).unwrap();
    }
    let rig = StereoRig {
        left: CameraModel::from_carm(&poses[0]).unwrap(),
        right: CameraModel::from_carm(&poses[1]).unwrap(),
    };
    let rig_path = tmp.path().join("rig.json");
    std::fs::write(&rig_path, serde_json::to_string(&rig).unwrap()).unwrap();
    let curve_path = tmp.path().join("curve.json");
    let csv_path = tmp.path().join("curve.csv");
    for out in [&curve_path, &csv_path] {
        let o = cli(&[
            "stereo",
            "--left",
            p(&tmp.path().join("l.pgm")),
            "--right",
            p(&tmp.path().join("r.pgm")),
            "--rig",
            p(&rig_path),
            "--out",
            p(out),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let curve: cathlab::bspline::BSplineCurve = serde_json::from_str(&std::fs::read_to_string(&curve_path).unwrap()).unwrap();
    let pts = curve.sample(400);
    let mean_dist = pts.iter().map(|x| point_polyline_distance(x, &ph.centerline)).sum::<f64>() / pts.len() as f64;
    assert!(mean_dist < 0.5, "mean distance {mean_dist}");
    // the curve covers the wire apart from skeleton end erosion
    let coverage = curve.length() / ph.centerline_length();
    assert!(coverage > 0.9, "coverage {coverage}");
    let mut rdr = csv::Reader::from_path(&csv_path).unwrap();
    let rows: Vec<Vec<f64>> = rdr.records().map(|r| r.unwrap().iter().map(|v| v.parse().unwrap()).collect()).collect();
    assert!(rows.len() > 50);
    let first = curve.eval(0.0);
    assert!((rows[0][1] - first.x).abs() < 1e-9 && (rows[0][3] - first.z).abs() < 1e-9);
}
