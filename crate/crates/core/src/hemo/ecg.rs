//! ECG traces: synthetic generation, R-peak detection and heart rate.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EcgTrace {
    pub sample_rate_hz: f64,
    pub samples_mv: Vec<f64>,
    pub r_peaks_s: Vec<f64>,
}

impl EcgTrace {
    /// Build a trace and detect its R peaks.
    pub fn from_samples(sample_rate_hz: f64, samples_mv: Vec<f64>) -> Result<Self> {
        let r_peaks_s = detect_r_peaks(sample_rate_hz, &samples_mv)?;
        Ok(EcgTrace {
            sample_rate_hz,
            samples_mv,
            r_peaks_s,
        })
    }

    pub fn duration_s(&self) -> f64 {
        self.samples_mv.len() as f64 / self.sample_rate_hz
    }

    pub fn time_of(&self, i: usize) -> f64 {
        i as f64 / self.sample_rate_hz
    }

    /// Samples `(t, mV)` with `from <= t < to`.
    pub fn window(&self, from: f64, to: f64) -> Vec<(f64, f64)> {
        let a = (from.max(0.0) * self.sample_rate_hz).ceil() as usize;
        let b = ((to * self.sample_rate_hz).ceil().max(0.0) as usize).min(self.samples_mv.len());
        (a..b.max(a)).map(|i| (self.time_of(i), self.samples_mv[i])).collect()
    }

    pub fn heart_rates(&self) -> Result<HeartRates> {
        heart_rates(&self.r_peaks_s)
    }

    /// Read a `time_s,mv` CSV (header optional) with uniform sampling and
    /// detect R peaks.
    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let mut t = Vec::new();
        let mut v = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            let parse = |k: usize| rec.get(k).and_then(|s| s.parse::<f64>().ok());
            match (parse(0), parse(1)) {
                (Some(a), Some(b)) => {
                    t.push(a);
                    v.push(b);
                }
                _ if line == 0 => continue,
                _ => return Err(Error::Format(format!("{}: bad row {}", path.display(), line + 1))),
            }
        }
        if t.len() < 2 {
            return Err(Error::InsufficientData(format!("{}: fewer than 2 samples", path.display())));
        }
        let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
        if !(dt > 0.0) || t.windows(2).any(|w| ((w[1] - w[0]) - dt).abs() > 1e-3 * dt) {
            return Err(Error::Format(format!("{}: samples must be uniformly spaced", path.display())));
        }
        Self::from_samples(1.0 / dt, v)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("time_s,mv\n");
        for (i, v) in self.samples_mv.iter().enumerate() {
            s.push_str(&format!("{},{}\n", self.time_of(i), v));
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeartRates {
    pub rri_s: Vec<f64>,
    pub instantaneous_bpm: Vec<f64>,
    /// `60 (n - 1) / sum(RRI)`.
    pub mean_bpm: f64,
}

pub fn heart_rates(peaks_s: &[f64]) -> Result<HeartRates> {
    if peaks_s.len() < 2 {
        return Err(Error::InsufficientData("heart rate needs at least 2 R peaks".into()));
    }
    let rri: Vec<f64> = peaks_s.windows(2).map(|w| w[1] - w[0]).collect();
    if rri.iter().any(|&r| r <= 0.0) {
        return Err(Error::InvalidParameter("R-peak times must increase".into()));
    }
    let total: f64 = rri.iter().sum();
    Ok(HeartRates {
        instantaneous_bpm: rri.iter().map(|r| 60.0 / r).collect(),
        mean_bpm: 60.0 * rri.len() as f64 / total,
        rri_s: rri,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EcgSynthParams {
    pub hr_bpm: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    /// Signal-to-noise ratio of added white noise; `None` is noise-free.
    pub snr_db: Option<f64>,
    /// Relative standard deviation of beat-to-beat RR variation.
    pub rr_jitter: f64,
    /// Amplitude (mV) of a 0.3 Hz baseline wander.
    pub baseline_mv: f64,
    pub seed: u64,
}

impl Default for EcgSynthParams {
    fn default() -> Self {
        EcgSynthParams {
            hr_bpm: 51.0,
            duration_s: 20.0,
            sample_rate_hz: 500.0,
            snr_db: None,
            rr_jitter: 0.0,
            baseline_mv: 0.0,
            seed: 0,
        }
    }
}

/// (offset from R in units of sqrt(RR) s, amplitude mV, width s) per wave.
const WAVES: [(f64, f64, f64); 5] = [
    (-0.2, 0.15, 0.025),
    (-0.028, -0.12, 0.008),
    (0.0, 1.2, 0.010),
    (0.03, -0.25, 0.009),
    (0.3, 0.35, 0.06),
];

/// Sum-of-Gaussians PQRST trace. Returns the trace (peaks detected) and the
/// true R-peak times.
pub fn synthesize_ecg(p: &EcgSynthParams) -> Result<(EcgTrace, Vec<f64>)> {
    if !(p.hr_bpm > 0.0 && p.duration_s > 0.0 && p.sample_rate_hz > 0.0 && p.rr_jitter >= 0.0) {
        return Err(Error::InvalidParameter("ECG synthesis needs positive rate, duration and HR".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let rr0 = 60.0 / p.hr_bpm;
    let jitter = Normal::new(0.0, p.rr_jitter.max(f64::MIN_POSITIVE)).expect("valid sd");
    let mut peaks = Vec::new();
    let mut t = 0.35 * rr0;
    while t < p.duration_s - 0.3 * rr0 {
        peaks.push(t);
        let f = if p.rr_jitter > 0.0 { (1.0 + jitter.sample(&mut rng)).clamp(0.7, 1.3) } else { 1.0 };
        t += rr0 * f;
    }
    let n = (p.duration_s * p.sample_rate_hz).round() as usize;
    let mut clean = vec![0.0; n];
    for (k, &tr) in peaks.iter().enumerate() {
        let rr = peaks.get(k + 1).map_or(rr0, |nx| nx - tr);
        let s = rr.sqrt();
        for &(off, amp, w) in &WAVES {
            let c = tr + if off.abs() > 0.1 { off * s } else { off };
            let lo = (((c - 5.0 * w) * p.sample_rate_hz).floor().max(0.0)) as usize;
            let hi = (((c + 5.0 * w) * p.sample_rate_hz).ceil().max(0.0) as usize).min(n);
            for (i, v) in clean.iter_mut().enumerate().take(hi).skip(lo) {
                let d = i as f64 / p.sample_rate_hz - c;
                *v += amp * (-(d * d) / (2.0 * w * w)).exp();
            }
        }
    }
    let mut samples = clean.clone();
    if p.baseline_mv != 0.0 {
        for (i, v) in samples.iter_mut().enumerate() {
            *v += p.baseline_mv * (std::f64::consts::TAU * 0.3 * i as f64 / p.sample_rate_hz).sin();
        }
    }
    if let Some(snr) = p.snr_db {
        let power = clean.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
        let sd = (power / 10f64.powf(snr / 10.0)).sqrt();
        let noise = Normal::new(0.0, sd).map_err(|e| Error::InvalidParameter(e.to_string()))?;
        for v in samples.iter_mut() {
            *v += noise.sample(&mut rng);
        }
    }
    let trace = EcgTrace::from_samples(p.sample_rate_hz, samples)?;
    Ok((trace, peaks))
}

/// Second-order Butterworth section (RBJ cookbook form).
#[derive(Debug, Clone, Copy)]
struct Biquad {
    b: [f64; 3],
    a: [f64; 2],
}

impl Biquad {
    fn new(fc: f64, fs: f64, highpass: bool) -> Self {
        let w0 = std::f64::consts::TAU * fc / fs;
        let alpha = w0.sin() / std::f64::consts::SQRT_2;
        let c = w0.cos();
        let a0 = 1.0 + alpha;
        let b = if highpass {
            [(1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0]
        } else {
            [(1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0]
        };
        Biquad {
            b: [b[0] / a0, b[1] / a0, b[2] / a0],
            a: [-2.0 * c / a0, (1.0 - alpha) / a0],
        }
    }

    fn run(&self, x: &[f64]) -> Vec<f64> {
        let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
        x.iter()
            .map(|&x0| {
                let y0 = self.b[0] * x0 + self.b[1] * x1 + self.b[2] * x2 - self.a[0] * y1 - self.a[1] * y2;
                x2 = x1;
                x1 = x0;
                y2 = y1;
                y1 = y0;
                y0
            })
            .collect()
    }
}

/// Zero-phase band-pass (forward and backward) with odd-reflection padding.
fn bandpass(x: &[f64], fs: f64, lo: f64, hi: f64) -> Vec<f64> {
    let pad = ((0.5 * fs) as usize).min(x.len() - 1);
    let mut ext = Vec::with_capacity(x.len() + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    let last = x[x.len() - 1];
    ext.extend((1..=pad).map(|i| 2.0 * last - x[x.len() - 1 - i]));
    let stages = [Biquad::new(lo, fs, true), Biquad::new(hi, fs, false)];
    let mut y = ext;
    for s in &stages {
        y = s.run(&y);
    }
    y.reverse();
    for s in &stages {
        y = s.run(&y);
    }
    y.reverse();
    y[pad..pad + x.len()].to_vec()
}

/// R-peak times (s): 5-25 Hz zero-phase band-pass, squared derivative,
/// 150 ms moving-window integration, threshold at half the rolling maximum
/// (3 s centered window, floor 5% of the global maximum), 200 ms refractory
/// period. Peaks are located at the band-passed maximum (positive R
/// polarity) with parabolic refinement.
pub fn detect_r_peaks(sample_rate_hz: f64, samples: &[f64]) -> Result<Vec<f64>> {
    let fs = sample_rate_hz;
    if !(fs >= 100.0) {
        return Err(Error::InvalidParameter(format!("ECG sample rate must be >= 100 Hz, got {fs}")));
    }
    if (samples.len() as f64) < 2.0 * fs {
        return Err(Error::InsufficientData("R-peak detection needs at least 2 s of signal".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("ECG samples must be finite".into()));
    }
    let n = samples.len();
    let bp = bandpass(samples, fs, 5.0, 25.0);
    let energy: Vec<f64> = (0..n)
        .map(|i| {
            let g = |k: isize| bp[(i as isize + k).clamp(0, n as isize - 1) as usize];
            let d = (2.0 * g(2) + g(1) - g(-1) - 2.0 * g(-2)) * fs / 8.0;
            d * d
        })
        .collect();
    let half = ((0.075 * fs) as usize).max(1);
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + energy[i];
    }
    let integ: Vec<f64> = (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(half), (i + half + 1).min(n));
            (prefix[b] - prefix[a]) / (b - a) as f64
        })
        .collect();
    let global = integ.iter().copied().fold(0.0, f64::max);
    if global <= 0.0 {
        return Err(Error::InsufficientData("flat ECG: no R peaks".into()));
    }
    let w = (1.5 * fs) as usize;
    let rolling = rolling_max(&integ, w);
    let floor = 0.05 * global;
    let mut candidates: Vec<(usize, f64)> = Vec::new();
    let mut i = 0;
    while i < n {
        let thr = (0.5 * rolling[i]).max(floor);
        if integ[i] > thr {
            let start = i;
            while i < n && integ[i] > (0.5 * rolling[i]).max(floor) {
                i += 1;
            }
            let (a, b) = (start.saturating_sub(half), (i + half).min(n));
            let k = (a..b).max_by(|&p, &q| bp[p].total_cmp(&bp[q])).unwrap();
            let strength = integ[start..i].iter().copied().fold(0.0, f64::max);
            candidates.push((k, strength));
        } else {
            i += 1;
        }
    }
    let refractory = (0.2 * fs) as usize;
    let mut kept: Vec<(usize, f64)> = Vec::new();
    for c in candidates {
        match kept.last_mut() {
            Some(last) if c.0 < last.0 + refractory => {
                if c.1 > last.1 {
                    *last = c;
                }
            }
            _ => kept.push(c),
        }
    }
    if kept.is_empty() {
        return Err(Error::InsufficientData("no R peaks found".into()));
    }
    Ok(kept
        .iter()
        .map(|&(k, _)| {
            let off = if k > 0 && k + 1 < n {
                let (a, b, c) = (bp[k - 1], bp[k], bp[k + 1]);
                let den = a - 2.0 * b + c;
                if den < 0.0 {
                    (0.5 * (a - c) / den).clamp(-0.5, 0.5)
                } else {
                    0.0
                }
            } else {
                0.0
            };
            (k as f64 + off) / fs
        })
        .collect())
}

/// Centered rolling maximum with half-width `w`.
fn rolling_max(x: &[f64], w: usize) -> Vec<f64> {
    use std::collections::VecDeque;
    let n = x.len();
    let mut out = vec![0.0; n];
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for (i, o) in out.iter_mut().enumerate() {
        let hi = (i + w).min(n - 1);
        while next <= hi {
            while dq.back().is_some_and(|&j| x[j] <= x[next]) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        while dq.front().is_some_and(|&j| j + w < i) {
            dq.pop_front();
        }
        *o = x[*dq.front().unwrap()];
    }
    out
}
