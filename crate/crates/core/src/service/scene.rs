//! Scene directories: phase volumes, optional registration fields and mesh
//! cycle, an ECG trace and a `scene.json` manifest.

use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::drr::{build_octree, render_drr, EmptySpaceOctree};
use crate::dynamics::{interpolate_phase, phase_rr_fraction, register_volumes, DeformationField, ModelPhase, PhaseClock};
use crate::enhance::{enhance_pipeline, EnhanceParams};
use crate::error::{Error, Result};
use crate::geometry::CArmPose;
use crate::hemo::{mesh_volume, report_from_mesh_cycle, synthesize_ecg, EcgSynthParams, EcgTrace, HemoOptions, HemodynamicsReport};
use crate::image::Image2D;
use crate::volume::io::{read_json, write_json};
use crate::volume::mesh::icosphere;
use crate::volume::{generate_vessel_phantom, load_volume, save_mesh, save_volume, AttenuationVolume, PhantomSpec, SurfaceMesh};

use super::config::{Config, RendererConfig};

pub const MANIFEST: &str = "scene.json";

/// Contents of `scene.json`. Paths are relative to the scene directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub id: String,
    /// Phase volumes in model-phase order.
    pub phases: Vec<String>,
    /// Optional fields registering phase `k` onto `k + 1`; without them
    /// in-between phases blend intensities linearly.
    #[serde(default)]
    pub fields: Vec<String>,
    pub ecg: String,
    /// Directory of `*.obj` meshes sampling one cardiac cycle.
    #[serde(default)]
    pub meshes: Option<String>,
    #[serde(default)]
    pub pose: CArmPose,
    #[serde(default)]
    pub enhance: Option<EnhanceParams>,
    #[serde(default)]
    pub ground_truth: Option<String>,
}

/// One render: angles in degrees, ECG phase in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderRequest {
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub phase: f64,
    pub enhance: bool,
    pub width: Option<usize>,
    pub height: Option<usize>,
}

impl Default for RenderRequest {
    fn default() -> Self {
        RenderRequest {
            alpha_deg: 0.0,
            beta_deg: 0.0,
            phase: 0.0,
            enhance: false,
            width: None,
            height: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EcgSummary {
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub r_peaks: usize,
    pub mean_hr_bpm: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SceneInfo {
    pub id: String,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub phases: usize,
    pub phase_rr_fractions: Vec<f64>,
    pub registered: bool,
    pub pose: CArmPose,
    pub ecg: EcgSummary,
    pub meshes: usize,
}

pub struct Scene {
    pub dir: PathBuf,
    pub manifest: SceneManifest,
    volumes: Vec<AttenuationVolume>,
    octrees: Vec<Option<EmptySpaceOctree>>,
    fields: Vec<DeformationField>,
    pub ecg: EcgTrace,
    pub clock: PhaseClock,
    pub meshes: Vec<SurfaceMesh>,
    renderer: RendererConfig,
}

impl std::fmt::Debug for Scene {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scene").field("dir", &self.dir).field("id", &self.manifest.id).finish_non_exhaustive()
    }
}

fn rel(dir: &Path, p: &str) -> PathBuf {
    dir.join(p)
}

impl Scene {
    pub fn load(dir: impl AsRef<Path>, renderer: &RendererConfig) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let manifest: SceneManifest = read_json(&dir.join(MANIFEST))?;
        if manifest.id.is_empty() {
            return Err(Error::Format("scene id must not be empty".into()));
        }
        if manifest.phases.is_empty() {
            return Err(Error::InsufficientData("scene lists no phase volumes".into()));
        }
        let volumes = manifest
            .phases
            .iter()
            .map(|p| load_volume(rel(&dir, p)))
            .collect::<Result<Vec<_>>>()?;
        for v in &volumes[1..] {
            volumes[0].check_same_grid(v)?;
        }
        let fields = manifest
            .fields
            .iter()
            .map(|p| DeformationField::load(rel(&dir, p)))
            .collect::<Result<Vec<_>>>()?;
        if !fields.is_empty() && fields.len() + 1 != volumes.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} phase volumes need {} fields, found {}",
                volumes.len(),
                volumes.len() - 1,
                fields.len()
            )));
        }
        for f in &fields {
            f.check_grid(&volumes[0])?;
        }
        let ecg = EcgTrace::load_csv(rel(&dir, &manifest.ecg))?;
        let clock = PhaseClock::new(ecg.r_peaks_s.clone(), volumes.len().max(2))?;
        let meshes = match &manifest.meshes {
            Some(m) => crate::hemo::load_mesh_sequence(&rel(&dir, m))?,
            None => Vec::new(),
        };
        manifest.pose.validate()?;
        let octrees = volumes
            .iter()
            .map(|v| renderer.octree.then(|| build_octree(v, renderer.empty_threshold)))
            .collect();
        Ok(Scene {
            dir,
            manifest,
            volumes,
            octrees,
            fields,
            ecg,
            clock,
            meshes,
            renderer: renderer.clone(),
        })
    }

    pub fn id(&self) -> &str {
        &self.manifest.id
    }

    pub fn n_phases(&self) -> usize {
        self.volumes.len()
    }

    pub fn info(&self) -> SceneInfo {
        let v = &self.volumes[0];
        let n = self.n_phases();
        SceneInfo {
            id: self.manifest.id.clone(),
            dims: v.dims(),
            spacing_mm: v.spacing().into(),
            origin_mm: v.origin().coords.into(),
            phases: n,
            phase_rr_fractions: (0..n).map(|k| phase_rr_fraction(k, n)).collect(),
            registered: !self.fields.is_empty(),
            pose: self.manifest.pose,
            ecg: EcgSummary {
                duration_s: self.ecg.duration_s(),
                sample_rate_hz: self.ecg.sample_rate_hz,
                r_peaks: self.ecg.r_peaks_s.len(),
                mean_hr_bpm: self.ecg.heart_rates().ok().map(|h| h.mean_bpm),
            },
            meshes: self.meshes.len(),
        }
    }

    /// Detector pose for a request, validated.
    pub fn pose_for(&self, req: &RenderRequest) -> Result<CArmPose> {
        let base = self.manifest.pose;
        let pose = base
            .with_angles_deg(req.alpha_deg, req.beta_deg)
            .with_detector(req.width.unwrap_or(base.n_u), req.height.unwrap_or(base.n_v));
        pose.validate()?;
        Ok(pose)
    }

    /// Volume at ECG phase `phase`, with its octree when one applies.
    pub fn volume_at(&self, phase: f64) -> Result<(Cow<'_, AttenuationVolume>, Option<Cow<'_, EmptySpaceOctree>>)> {
        if !(0.0..=1.0).contains(&phase) {
            return Err(Error::InvalidParameter(format!("phase must be in [0, 1], got {phase}")));
        }
        let n = self.n_phases();
        if n == 1 {
            return Ok((Cow::Borrowed(&self.volumes[0]), self.octrees[0].as_ref().map(Cow::Borrowed)));
        }
        let mp = ModelPhase::from_ecg_phase(phase, n);
        let k = mp.phase_index;
        if mp.fraction == 0.0 {
            return Ok((Cow::Borrowed(&self.volumes[k]), self.octrees[k].as_ref().map(Cow::Borrowed)));
        }
        let vol = if self.fields.is_empty() {
            let f = mp.fraction as f32;
            self.volumes[k].zip_with(&self.volumes[k + 1], |a, b| a * (1.0 - f) + b * f)?
        } else {
            interpolate_phase(&self.volumes[k], &self.fields[k], mp.fraction)?
        };
        let tree = self.renderer.octree.then(|| Cow::Owned(build_octree(&vol, self.renderer.empty_threshold)));
        Ok((Cow::Owned(vol), tree))
    }

    pub fn enhance_params<'a>(&'a self, cfg: &'a Config) -> &'a EnhanceParams {
        self.manifest.enhance.as_ref().unwrap_or(&cfg.enhance)
    }

    /// The single rendering path shared by the CLI and the HTTP service.
    pub fn render(&self, req: &RenderRequest, cfg: &Config) -> Result<Image2D> {
        if !(req.alpha_deg.is_finite() && req.beta_deg.is_finite() && req.phase.is_finite()) {
            return Err(Error::InvalidParameter("render parameters must be finite".into()));
        }
        let pose = self.pose_for(req)?;
        let (vol, tree) = self.volume_at(req.phase)?;
        let img = render_drr(&vol, &pose, tree.as_deref())?;
        if req.enhance {
            enhance_pipeline(&img, None, self.enhance_params(cfg))
        } else {
            Ok(img)
        }
    }

    pub fn hemodynamics(&self, opts: &HemoOptions) -> Result<HemodynamicsReport> {
        if self.meshes.is_empty() {
            return Err(Error::InsufficientData(format!("scene {:?} has no mesh cycle", self.manifest.id)));
        }
        report_from_mesh_cycle(&self.meshes, &self.ecg, opts)
    }
}

/// Analytic ventricle: spheres whose volume follows
/// `mid + amp cos(2 pi k / n)` over one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VentricleSpec {
    pub edv_ml: f64,
    pub esv_ml: f64,
    pub frames: usize,
}

impl Default for VentricleSpec {
    fn default() -> Self {
        VentricleSpec {
            edv_ml: 150.0,
            esv_ml: 50.0,
            frames: 20,
        }
    }
}

/// Sphere meshes sampling the cosine volume cycle; each mesh volume is exact.
pub fn cosine_ventricle(spec: &VentricleSpec) -> Result<Vec<SurfaceMesh>> {
    if !(spec.edv_ml > spec.esv_ml && spec.esv_ml > 0.0) || spec.frames < 4 {
        return Err(Error::InvalidParameter("ventricle needs edv > esv > 0 and >= 4 frames".into()));
    }
    let unit = icosphere(1.0, 3);
    let v0 = mesh_volume(&unit)?;
    let (mid, amp) = (0.5 * (spec.edv_ml + spec.esv_ml), 0.5 * (spec.edv_ml - spec.esv_ml));
    Ok((0..spec.frames)
        .map(|k| {
            let v = mid + amp * (std::f64::consts::TAU * k as f64 / spec.frames as f64).cos();
            let s = (v / v0).cbrt();
            SurfaceMesh {
                vertices: unit.vertices.iter().map(|p| Point3::from(p.coords * s)).collect(),
                triangles: unit.triangles.clone(),
            }
        })
        .collect())
}

fn default_id() -> String {
    "phantom".into()
}

/// Everything `phantom gen` needs to write a scene directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default = "default_id")]
    pub id: String,
    pub phantom: PhantomSpec,
    /// Phase volumes; defaults to 1 for a static phantom and 10 with motion.
    #[serde(default)]
    pub phases: Option<usize>,
    #[serde(default)]
    pub ecg: EcgSynthParams,
    #[serde(default)]
    pub pose: CArmPose,
    #[serde(default)]
    pub enhance: Option<EnhanceParams>,
    #[serde(default)]
    pub ventricle: Option<VentricleSpec>,
    /// Register consecutive phases so in-between phases are warped rather
    /// than blended.
    #[serde(default)]
    pub register: bool,
}

impl SceneSpec {
    pub fn from_phantom(phantom: PhantomSpec) -> Self {
        SceneSpec {
            id: default_id(),
            phantom,
            phases: None,
            ecg: EcgSynthParams::default(),
            pose: CArmPose::default(),
            enhance: None,
            ventricle: None,
            register: false,
        }
    }

    /// Parse either a full scene spec or a bare phantom spec.
    pub fn from_json(text: &str) -> Result<Self> {
        match serde_json::from_str::<SceneSpec>(text) {
            Ok(s) => Ok(s),
            Err(e) => serde_json::from_str::<PhantomSpec>(text)
                .map(SceneSpec::from_phantom)
                .map_err(|_| Error::Format(format!("scene spec: {e}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseTruth {
    pub rr_fraction: f64,
    /// Motion phase the volume was generated at.
    pub motion_phase: f64,
    pub centerline_mm: Vec<Point3<f64>>,
    pub radii_mm: Vec<f64>,
    pub length_mm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: PhantomSpec,
    pub phases: Vec<PhaseTruth>,
    #[serde(default)]
    pub r_peaks_s: Vec<f64>,
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Write a complete scene directory from a spec and return its manifest.
pub fn generate_scene(spec: &SceneSpec, out: &Path, cfg: &Config) -> Result<SceneManifest> {
    spec.phantom.validate()?;
    spec.pose.validate()?;
    let n = spec.phases.unwrap_or(if spec.phantom.motion.is_some() { 10 } else { 1 });
    if n == 0 {
        return Err(Error::InvalidParameter("phases must be >= 1".into()));
    }
    mkdir(&out.join("volume"))?;
    let mut manifest = SceneManifest {
        id: spec.id.clone(),
        phases: Vec::new(),
        fields: Vec::new(),
        ecg: "ecg.csv".into(),
        meshes: None,
        pose: spec.pose,
        enhance: spec.enhance.clone(),
        ground_truth: Some("ground_truth.json".into()),
    };
    let mut truth = Vec::with_capacity(n);
    let mut volumes = Vec::with_capacity(n);
    for k in 0..n {
        let rr = phase_rr_fraction(k, n);
        let motion_phase = rr.rem_euclid(1.0);
        let ph = generate_vessel_phantom(&spec.phantom.at_phase(motion_phase))?;
        let name = format!("volume/phase_{k:02}.raw");
        save_volume(&ph.volume, out.join(&name))?;
        if k == 0 {
            save_mesh(&ph.surface, out.join("surface.obj"))?;
        }
        manifest.phases.push(name);
        truth.push(PhaseTruth {
            rr_fraction: rr,
            motion_phase,
            length_mm: ph.centerline_length(),
            centerline_mm: ph.centerline,
            radii_mm: ph.radii,
        });
        if spec.register {
            volumes.push(ph.volume);
        }
    }
    for k in 1..volumes.len() {
        let r = register_volumes(&volumes[k - 1], &volumes[k], &cfg.dynamics.registration)?;
        let name = format!("volume/field_{:02}_{k:02}.raw", k - 1);
        r.field.save(out.join(&name))?;
        manifest.fields.push(name);
    }
    let (ecg, _) = synthesize_ecg(&spec.ecg)?;
    ecg.save_csv(out.join(&manifest.ecg))?;
    if let Some(v) = &spec.ventricle {
        mkdir(&out.join("meshes"))?;
        for (k, m) in cosine_ventricle(v)?.iter().enumerate() {
            save_mesh(m, out.join(format!("meshes/frame_{k:02}.obj")))?;
        }
        manifest.meshes = Some("meshes".into());
    }
    write_json(
        &out.join("ground_truth.json"),
        &GroundTruth {
            spec: spec.phantom.clone(),
            phases: truth,
            r_peaks_s: ecg.r_peaks_s.clone(),
        },
    )?;
    write_json(&out.join(MANIFEST), &manifest)?;
    Ok(manifest)
}
