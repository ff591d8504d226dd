//! Workspace configuration: one JSON file, every tunable with its default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::RegistrationParams;
use crate::enhance::EnhanceParams;
use crate::error::{Error, Result};
use crate::hemo::HemoOptions;
use crate::stereo::StereoParams;
use crate::volume::io::{read_json, write_json};

/// Environment variable naming the default workspace root.
pub const WORKSPACE_ENV: &str = "CATHLAB_WORKSPACE";
/// Config file name inside a workspace.
pub const CONFIG_FILE: &str = "cathlab.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RendererConfig {
    /// Skip empty space with the min-max octree.
    pub octree: bool,
    /// Octree nodes whose maximum is at or below this are skipped.
    pub empty_threshold: f32,
}

impl Default for RendererConfig {
    fn default() -> Self {
        RendererConfig {
            octree: true,
            empty_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct DynamicsConfig {
    pub registration: RegistrationParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Arc-length stations used to pair trajectories.
    pub resample_points: usize,
    /// Distal offset for bifurcation tangents, mm.
    pub bifurcation_distal_mm: f64,
    /// Half-width of the projected curve masks used for DSC, px.
    pub dsc_radius_px: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            resample_points: 100,
            bifurcation_distal_mm: 5.0,
            dsc_radius_px: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Default SSE pacing when the client does not ask for a rate.
    pub stream_fps: f64,
    pub max_fps: f64,
    /// Largest accepted detector side for API renders.
    pub max_detector_px: usize,
    /// Rendered frames kept for `/api/frame/{id}`.
    pub frame_cache: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            bind: "127.0.0.1".into(),
            port: 8080,
            stream_fps: 10.0,
            max_fps: 60.0,
            max_detector_px: 2048,
            frame_cache: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub renderer: RendererConfig,
    pub enhance: EnhanceParams,
    pub stereo: StereoParams,
    pub hemo: HemoOptions,
    pub dynamics: DynamicsConfig,
    pub metrics: MetricsConfig,
    pub service: ServiceConfig,
}

impl Config {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let c: Config = read_json(path.as_ref())?;
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    /// Explicit file, else `$CATHLAB_WORKSPACE/cathlab.json` when present,
    /// else defaults.
    pub fn discover(explicit: Option<&Path>) -> Result<Self> {
        if let Some(p) = explicit {
            return Config::load(p);
        }
        if let Some(ws) = workspace_root() {
            let p = ws.join(CONFIG_FILE);
            if p.is_file() {
                return Config::load(p);
            }
        }
        Ok(Config::default())
    }

    pub fn validate(&self) -> Result<()> {
        self.enhance.validate()?;
        self.stereo.matching.validate()?;
        let s = &self.service;
        if !(s.stream_fps > 0.0 && s.max_fps >= s.stream_fps) {
            return Err(Error::InvalidParameter("service: need 0 < stream_fps <= max_fps".into()));
        }
        if s.max_detector_px < 2 {
            return Err(Error::InvalidParameter("service: max_detector_px must be >= 2".into()));
        }
        if self.metrics.resample_points < 2 {
            return Err(Error::InvalidParameter("metrics: resample_points must be >= 2".into()));
        }
        Ok(())
    }
}

pub fn workspace_root() -> Option<PathBuf> {
    std::env::var_os(WORKSPACE_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// A scene argument is a directory path, or a scene id under the workspace.
pub fn resolve_scene_dir(arg: &Path) -> PathBuf {
    if arg.is_dir() {
        return arg.to_path_buf();
    }
    match workspace_root() {
        Some(ws) if arg.is_relative() && ws.join(arg).is_dir() => ws.join(arg),
        _ => arg.to_path_buf(),
    }
}
