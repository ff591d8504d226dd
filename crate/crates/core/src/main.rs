use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use nalgebra::Point3;
use serde::Deserialize;
use serde_json::json;

use cathlab::bspline::BSplineCurve;
use cathlab::geometry::{project_point, projection_matrix, CArmPose};
use cathlab::hemo::{load_mesh_sequence, report_from_mesh_cycle, EcgTrace};
use cathlab::image::{load_image, save_image};
use cathlab::metrics::{dice, morphological_consistency, polyline_mask, trajectory_metrics, MetricsReport, VesselDescriptor};
use cathlab::service::config::resolve_scene_dir;
use cathlab::service::http::error_body;
use cathlab::service::{generate_scene, AppState, Config, RenderRequest, Scene, SceneSpec};
use cathlab::stereo::{reconstruct_guidewire, StereoRig};
use cathlab::volume::io::{read_json, write_json};
use cathlab::Error;

#[derive(Parser)]
#[command(name = "cathlab", version, about = "Virtual cath-lab engine")]
struct Cli {
    /// Configuration file (defaults to $CATHLAB_WORKSPACE/cathlab.json).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthetic phantoms.
    Phantom {
        #[command(subcommand)]
        cmd: PhantomCmd,
    },
    /// Render one DRR.
    Render {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        alpha: f64,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        beta: f64,
        /// ECG phase in [0, 1].
        #[arg(long, default_value_t = 0.0)]
        phase: f64,
        #[arg(long)]
        enhance: bool,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        /// .pgm, .png, or raw float32 with a JSON sidecar.
        #[arg(long)]
        out: PathBuf,
    },
    /// ECG-synchronized frame sequence.
    Sequence {
        #[arg(long)]
        scene: PathBuf,
        /// "alpha,beta" in degrees.
        #[arg(long, default_value = "0,0", allow_hyphen_values = true)]
        pose: String,
        #[arg(long)]
        frames: usize,
        /// Frame rate; defaults to the configured stream rate.
        #[arg(long)]
        fps: Option<f64>,
        /// ECG time of the first frame.
        #[arg(long, default_value_t = 0.0)]
        start: f64,
        #[arg(long)]
        enhance: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Hemodynamics from a mesh cycle and an ECG.
    Hemo {
        #[arg(long)]
        meshes: PathBuf,
        #[arg(long)]
        ecg: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a guidewire from a stereo pair.
    Stereo {
        #[arg(long)]
        left: PathBuf,
        #[arg(long)]
        right: PathBuf,
        #[arg(long)]
        rig: PathBuf,
        /// .json (B-spline) or .csv (sampled points).
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Compare a test curve or vessel against a reference.
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API.
    Serve {
        /// Scene directory or workspace scene id; repeat for several.
        #[arg(long, required = true)]
        scene: Vec<PathBuf>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        bind: Option<String>,
    },
    /// Write the default configuration.
    Config {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum PhantomCmd {
    /// Write a scene directory from a scene or phantom spec.
    Gen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure {
            code: if e.is_internal() { 3 } else { 2 },
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        kind: "usage".into(),
        message: msg.into(),
    }
}

type CliResult = Result<serde_json::Value, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            return fail(usage(e.render().to_string().trim_end()));
        }
    };
    let result = Config::discover(cli.config.as_deref()).map_err(Failure::from).and_then(|cfg| run(cli.cmd, cfg));
    match result {
        Ok(summary) => {
            if !summary.is_null() {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(f) => fail(f),
    }
}

fn fail(f: Failure) -> ExitCode {
    eprintln!("{}", error_body(&f.kind, &f.message));
    ExitCode::from(f.code)
}

fn load_scene(arg: &Path, cfg: &Config) -> Result<Scene, Failure> {
    Ok(Scene::load(resolve_scene_dir(arg), &cfg.renderer)?)
}

fn run(cmd: Cmd, cfg: Config) -> CliResult {
    match cmd {
        Cmd::Phantom {
            cmd: PhantomCmd::Gen { spec, out },
        } => {
            let text = std::fs::read_to_string(&spec).map_err(|e| Failure::from(Error::io(&spec, e)))?;
            let spec = SceneSpec::from_json(&text)?;
            std::fs::create_dir_all(&out).map_err(|e| Failure::from(Error::io(&out, e)))?;
            let m = generate_scene(&spec, &out, &cfg)?;
            Ok(json!({ "scene": m.id, "dir": out, "phases": m.phases.len() }))
        }
        Cmd::Render {
            scene,
            alpha,
            beta,
            phase,
            enhance,
            width,
            height,
            out,
        } => {
            let sc = load_scene(&scene, &cfg)?;
            let req = RenderRequest {
                alpha_deg: alpha,
                beta_deg: beta,
                phase,
                enhance,
                width,
                height,
            };
            let img = sc.render(&req, &cfg)?;
            save_image(&img, &out)?;
            let (lo, hi) = img.min_max();
            Ok(json!({ "out": out, "width": img.width(), "height": img.height(), "min": lo, "max": hi }))
        }
        Cmd::Sequence {
            scene,
            pose,
            frames,
            fps,
            start,
            enhance,
            out,
        } => {
            let (alpha, beta) = parse_pose(&pose)?;
            let fps = fps.unwrap_or(cfg.service.stream_fps);
            if !(fps > 0.0 && start.is_finite()) {
                return Err(usage("--fps must be > 0 and --start finite"));
            }
            let sc = load_scene(&scene, &cfg)?;
            std::fs::create_dir_all(&out).map_err(|e| Failure::from(Error::io(&out, e)))?;
            let mut index = Vec::with_capacity(frames);
            for i in 0..frames {
                let t = start + i as f64 / fps;
                let phase = sc.clock.model_phase_at(t);
                let req = RenderRequest {
                    alpha_deg: alpha,
                    beta_deg: beta,
                    phase: phase.ecg_phase,
                    enhance,
                    ..Default::default()
                };
                let file = format!("frame_{i:04}.pgm");
                save_image(&sc.render(&req, &cfg)?, out.join(&file))?;
                index.push(json!({ "frame": i, "file": file, "t_s": t, "phase": phase }));
            }
            write_json(&out.join("frames.json"), &index)?;
            Ok(json!({ "out": out, "frames": frames }))
        }
        Cmd::Hemo { meshes, ecg, out } => {
            let m = load_mesh_sequence(&meshes)?;
            let ecg = EcgTrace::load_csv(&ecg)?;
            let report = report_from_mesh_cycle(&m, &ecg, &cfg.hemo)?;
            write_json(&out, &report)?;
            Ok(serde_json::to_value(report).map_err(Error::from)?)
        }
        Cmd::Stereo {
            left,
            right,
            rig,
            out,
            diagnostics,
        } => {
            let (l, r) = (load_image(&left)?, load_image(&right)?);
            let rig: StereoRig = read_json(&rig)?;
            let rec = reconstruct_guidewire(&l, &r, &rig.left, &rig.right, &cfg.stereo)?;
            if out.extension().is_some_and(|e| e == "csv") {
                write_curve_csv(&rec.curve, &out)?;
            } else {
                write_json(&out, &rec.curve)?;
            }
            if let Some(d) = diagnostics {
                write_json(&d, &rec.diagnostics)?;
            }
            Ok(serde_json::to_value(&rec.diagnostics).map_err(Error::from)?)
        }
        Cmd::Metrics { reference, test, out } => {
            let r: CurveInput = read_json(&reference)?;
            let t: CurveInput = read_json(&test)?;
            let report = compare(&t, &r, &cfg)?;
            write_json(&out, &report)?;
            Ok(serde_json::to_value(report).map_err(Error::from)?)
        }
        Cmd::Serve { scene, port, bind } => {
            let scenes = scene.iter().map(|s| load_scene(s, &cfg)).collect::<Result<Vec<_>, _>>()?;
            let bind = bind.unwrap_or_else(|| cfg.service.bind.clone());
            let port = port.unwrap_or(cfg.service.port);
            let addr: SocketAddr = format!("{bind}:{port}")
                .parse()
                .map_err(|_| usage(format!("bad bind address {bind}:{port}")))?;
            let state = Arc::new(AppState::new(cfg, scenes)?);
            let rt = tokio::runtime::Runtime::new().map_err(|e| internal(format!("runtime: {e}")))?;
            eprintln!("listening on http://{addr}");
            rt.block_on(cathlab::service::serve(state, addr)).map_err(|e| internal(format!("server: {e}")))?;
            Ok(serde_json::Value::Null)
        }
        Cmd::Config { out } => {
            cfg.save(&out)?;
            Ok(json!({ "out": out }))
        }
    }
}

fn internal(message: String) -> Failure {
    Failure {
        code: 3,
        kind: "internal".into(),
        message,
    }
}

fn parse_pose(s: &str) -> Result<(f64, f64), Failure> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(usage(format!("--pose expects \"alpha,beta\" in degrees, got {s:?}"))),
        },
        _ => Err(usage(format!("--pose expects \"alpha,beta\" in degrees, got {s:?}"))),
    }
}

fn write_curve_csv(curve: &BSplineCurve, path: &Path) -> cathlab::Result<()> {
    let n = (curve.length().ceil() as usize * 4).max(2);
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let fmt = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    w.write_record(["u", "x_mm", "y_mm", "z_mm"]).map_err(fmt)?;
    for i in 0..n {
        let u = i as f64 / (n - 1) as f64;
        let p = curve.eval(u);
        w.write_record([u, p.x, p.y, p.z].map(|v| v.to_string())).map_err(fmt)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Accepted inputs: a vessel descriptor, a B-spline curve, `{"points": [...]}`
/// or a bare point array.
#[derive(Deserialize)]
#[serde(untagged)]
enum CurveInput {
    Vessel(VesselDescriptor),
    Curve(BSplineCurve),
    Points { points: Vec<Point3<f64>> },
    Bare(Vec<Point3<f64>>),
}

impl CurveInput {
    fn points(&self) -> Vec<Point3<f64>> {
        match self {
            CurveInput::Vessel(v) => v.centerline.clone(),
            CurveInput::Curve(c) => c.sample((c.length().ceil() as usize * 4).max(200)),
            CurveInput::Points { points } | CurveInput::Bare(points) => points.clone(),
        }
    }
}

fn compare(test: &CurveInput, reference: &CurveInput, cfg: &Config) -> cathlab::Result<MetricsReport> {
    let (p, q) = (test.points(), reference.points());
    let mut report = trajectory_metrics(&p, &q, cfg.metrics.resample_points)?;
    // DSC of the two curves projected through the default pose
    let pose = CArmPose::default();
    let pm = projection_matrix(&pose);
    let project = |pts: &[Point3<f64>]| -> cathlab::Result<Vec<Point3<f64>>> {
        pts.iter().map(|x| project_point(&pm, x).map(|u| Point3::new(u.x, u.y, 0.0))).collect()
    };
    if let (Ok(a), Ok(b)) = (project(&p), project(&q)) {
        let r = cfg.metrics.dsc_radius_px;
        report.dsc = Some(dice(&polyline_mask(&a, pose.n_u, pose.n_v, r), &polyline_mask(&b, pose.n_u, pose.n_v, r))?);
    }
    if let (CurveInput::Vessel(v), CurveInput::Vessel(r)) = (test, reference) {
        report = report.with_consistency(&morphological_consistency(v, r)?);
    }
    Ok(report)
}
