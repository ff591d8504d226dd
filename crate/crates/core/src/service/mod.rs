//! Operational shell: configuration, scene directories, sessions and the
//! HTTP API.

pub mod config;
pub mod http;
pub mod scene;
pub mod session;

pub use config::Config;
pub use http::{router, serve, AppState};
pub use scene::{generate_scene, RenderRequest, Scene, SceneManifest, SceneSpec};
