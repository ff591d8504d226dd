//! Mapping from ECG time to the model's phase cycle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hemo::ecg::EcgTrace;

/// Start of the model cycle, in R-R fractions.
pub const CYCLE_START: f64 = -0.05;
/// End of the model cycle, in R-R fractions.
pub const CYCLE_END: f64 = 1.06;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseClock {
    pub r_peaks_s: Vec<f64>,
    pub n_phases: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPhase {
    /// `(t - t_R) / RRI` in `[0, 1)`.
    pub ecg_phase: f64,
    /// Position in the model cycle as a fraction of R-R, in `[-0.05, 1.06)`.
    pub rr_fraction: f64,
    /// Lower model phase of the bracketing pair.
    pub phase_index: usize,
    /// Blend towards `phase_index + 1`, in `[0, 1)`.
    pub fraction: f64,
}

impl ModelPhase {
    /// Continuous keypose position `phase_index + fraction`.
    pub fn position(&self) -> f64 {
        self.phase_index as f64 + self.fraction
    }

    /// Model phase for an ECG phase in `[0, 1]` on an `n_phases` cycle
    /// (`n_phases >= 2`).
    pub fn from_ecg_phase(ecg_phase: f64, n_phases: usize) -> Self {
        let last = (n_phases - 1) as f64;
        let pos = ecg_phase * last;
        let phase_index = (pos.floor().max(0.0) as usize).min(n_phases - 2);
        ModelPhase {
            ecg_phase,
            rr_fraction: CYCLE_START + (CYCLE_END - CYCLE_START) * ecg_phase,
            phase_index,
            fraction: pos - phase_index as f64,
        }
    }
}

/// R-R fraction at which model phase `k` of `n_phases` sits.
pub fn phase_rr_fraction(k: usize, n_phases: usize) -> f64 {
    if n_phases < 2 {
        return 0.0;
    }
    CYCLE_START + (CYCLE_END - CYCLE_START) * k as f64 / (n_phases - 1) as f64
}

pub fn phase_clock(ecg: &EcgTrace, n_phases: usize) -> Result<PhaseClock> {
    PhaseClock::new(ecg.r_peaks_s.clone(), n_phases)
}

impl PhaseClock {
    pub fn new(r_peaks_s: Vec<f64>, n_phases: usize) -> Result<Self> {
        if r_peaks_s.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "phase clock needs at least 2 R peaks, found {}",
                r_peaks_s.len()
            )));
        }
        if n_phases < 2 {
            return Err(Error::InvalidParameter("phase clock needs at least 2 phases".into()));
        }
        if r_peaks_s.windows(2).any(|w| !(w[1] > w[0])) || r_peaks_s.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidParameter("R peaks must be finite and strictly increasing".into()));
        }
        Ok(PhaseClock { r_peaks_s, n_phases })
    }

    /// ECG phase in `[0, 1)`. Before the first and after the last peak the
    /// nearest R-R interval is repeated.
    pub fn ecg_phase(&self, t: f64) -> f64 {
        let p = &self.r_peaks_s;
        let k = p.partition_point(|&r| r <= t);
        let (r0, rri) = if k == 0 {
            (p[0], p[1] - p[0])
        } else if k == p.len() {
            (p[k - 1], p[k - 1] - p[k - 2])
        } else {
            (p[k - 1], p[k] - p[k - 1])
        };
        let phi = ((t - r0) / rri).rem_euclid(1.0);
        // rem_euclid can round up to exactly 1.0 for tiny negative inputs
        if phi >= 1.0 {
            0.0
        } else {
            phi
        }
    }

    /// Affine map of the ECG phase onto the model cycle; phase `k` sits at
    /// R-R fraction `-0.05 + 1.11 k / (n - 1)`.
    pub fn model_phase_at(&self, t: f64) -> ModelPhase {
        ModelPhase::from_ecg_phase(self.ecg_phase(t), self.n_phases)
    }
}
