//! Viewer sessions with optimistic revision checks.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub scene: String,
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub enhance: bool,
    pub playing: bool,
    /// ECG time shown when playback (re)started.
    pub ecg_offset_s: f64,
    pub last_frame_id: Option<u64>,
    /// Bumped on every accepted mutation.
    pub revision: u64,
}

/// A mutation. `revision` must equal the session's current revision (0 for a
/// session that does not exist yet).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionUpdate {
    #[serde(default = "default_session")]
    pub id: String,
    pub revision: u64,
    #[serde(default)]
    pub scene: Option<String>,
    #[serde(default)]
    pub pose: Option<PoseUpdate>,
    #[serde(default)]
    pub enhance: Option<bool>,
    #[serde(default)]
    pub playing: Option<bool>,
    #[serde(default)]
    pub ecg_offset_s: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseUpdate {
    pub alpha_deg: f64,
    pub beta_deg: f64,
}

pub fn default_session() -> String {
    "default".into()
}

#[derive(Debug)]
pub enum UpdateError {
    Conflict { current: u64 },
    Invalid(crate::Error),
}

struct Entry {
    session: Session,
    /// Wall clock at the last playback (re)start.
    started: Instant,
}

#[derive(Default)]
pub struct SessionRegistry {
    inner: Mutex<HashMap<String, Entry>>,
}

impl SessionRegistry {
    pub fn get(&self, id: &str) -> Option<Session> {
        self.inner.lock().unwrap().get(id).map(|e| e.session.clone())
    }

    /// Apply `u` atomically. `check` validates the resulting session before
    /// it is stored; `default_scene` names the scene of a new session.
    pub fn update(
        &self,
        u: &SessionUpdate,
        default_scene: &str,
        check: impl FnOnce(&Session) -> Result<()>,
    ) -> std::result::Result<Session, UpdateError> {
        let mut map = self.inner.lock().unwrap();
        let now = Instant::now();
        let current = map.get(&u.id);
        let current_rev = current.map_or(0, |e| e.session.revision);
        if u.revision != current_rev {
            return Err(UpdateError::Conflict { current: current_rev });
        }
        let mut s = match current {
            Some(e) => {
                let mut s = e.session.clone();
                // freeze the playback position before changing anything
                s.ecg_offset_s = ecg_time(&e.session, e.started, now);
                s
            }
            None => Session {
                id: u.id.clone(),
                scene: default_scene.to_string(),
                alpha_deg: 0.0,
                beta_deg: 0.0,
                enhance: false,
                playing: false,
                ecg_offset_s: 0.0,
                last_frame_id: None,
                revision: 0,
            },
        };
        if let Some(sc) = &u.scene {
            s.scene = sc.clone();
        }
        if let Some(p) = u.pose {
            s.alpha_deg = p.alpha_deg;
            s.beta_deg = p.beta_deg;
        }
        if let Some(e) = u.enhance {
            s.enhance = e;
        }
        if let Some(p) = u.playing {
            s.playing = p;
        }
        if let Some(t) = u.ecg_offset_s {
            s.ecg_offset_s = t;
        }
        check(&s).map_err(UpdateError::Invalid)?;
        s.revision = current_rev + 1;
        map.insert(
            u.id.clone(),
            Entry {
                session: s.clone(),
                started: now,
            },
        );
        Ok(s)
    }

    /// Current ECG time of a session and a snapshot of it.
    pub fn now(&self, id: &str) -> Option<(Session, f64)> {
        let map = self.inner.lock().unwrap();
        map.get(id).map(|e| (e.session.clone(), ecg_time(&e.session, e.started, Instant::now())))
    }

    /// Record a frame without bumping the revision.
    pub fn set_last_frame(&self, id: &str, frame: u64) {
        if let Some(e) = self.inner.lock().unwrap().get_mut(id) {
            e.session.last_frame_id = Some(frame);
        }
    }
}

fn ecg_time(s: &Session, started: Instant, now: Instant) -> f64 {
    if s.playing {
        s.ecg_offset_s + now.duration_since(started).as_secs_f64()
    } else {
        s.ecg_offset_s
    }
}
