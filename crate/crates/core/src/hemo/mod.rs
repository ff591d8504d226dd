//! Hemodynamic quantification: ventricular volumes from meshes, the
//! volume-time curve and its derived indices, valve and aortic measures, and
//! ECG heart-rate analysis.

pub mod ecg;
pub mod spline;

use std::path::Path;

use nalgebra::{Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::SurfaceMesh;

pub use ecg::{detect_r_peaks, heart_rates, synthesize_ecg, EcgSynthParams, EcgTrace, HeartRates};
pub use spline::CubicSpline;

/// Enclosed volume of a closed, outward-oriented surface in ml (mesh in mm).
pub fn mesh_volume(mesh: &SurfaceMesh) -> Result<f64> {
    mesh.require_closed()?;
    let v = mesh.signed_volume();
    if v < 0.0 {
        return Err(Error::Orientation(format!(
            "surface encloses a negative volume ({v:.6} mm^3); normals point inward"
        )));
    }
    Ok(v / 1000.0)
}

/// Cubic-spline volume-time curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeTimeCurve {
    pub times_s: Vec<f64>,
    pub volumes_ml: Vec<f64>,
    pub spline: CubicSpline,
    /// Length of the curve's domain: the cycle duration for periodic curves,
    /// the sample span otherwise.
    pub cycle_s: f64,
}

/// Natural cubic spline through the samples.
pub fn build_curve(times: &[f64], volumes: &[f64]) -> Result<VolumeTimeCurve> {
    if times.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "volume-time curve needs at least 4 samples, got {}",
            times.len()
        )));
    }
    let spline = CubicSpline::natural(times, volumes)?;
    let (a, b) = spline.domain();
    Ok(VolumeTimeCurve {
        times_s: times.to_vec(),
        volumes_ml: volumes.to_vec(),
        spline,
        cycle_s: b - a,
    })
}

/// Periodic cubic spline: the samples cover one cycle of length `cycle_s`
/// starting at `times[0]`.
pub fn build_periodic_curve(times: &[f64], volumes: &[f64], cycle_s: f64) -> Result<VolumeTimeCurve> {
    if times.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "volume-time curve needs at least 4 samples, got {}",
            times.len()
        )));
    }
    let spline = CubicSpline::periodic(times, volumes, cycle_s)?;
    Ok(VolumeTimeCurve {
        times_s: times.to_vec(),
        volumes_ml: volumes.to_vec(),
        spline,
        cycle_s,
    })
}

const DENSE: usize = 4000;

impl VolumeTimeCurve {
    pub fn domain(&self) -> (f64, f64) {
        self.spline.domain()
    }

    pub fn volume(&self, t: f64) -> f64 {
        self.spline.eval(t)
    }

    pub fn dvdt(&self, t: f64) -> f64 {
        self.spline.derivative(t)
    }

    fn check_window(&self, t0: f64, t1: f64) -> Result<()> {
        let (a, b) = self.domain();
        let eps = 1e-12 * (b - a);
        if !(t0 < t1 && t0 >= a - eps && t1 <= b + eps) {
            return Err(Error::Bounds(format!("window [{t0}, {t1}] not inside curve domain [{a}, {b}]")));
        }
        Ok(())
    }

    fn argmax_on(&self, f: impl Fn(f64) -> f64, t0: f64, t1: f64) -> (f64, f64) {
        let knots: Vec<f64> = self.spline.knots().to_vec();
        spline::global_max(f, t0, t1, DENSE, &knots)
    }

    /// CSV with `time_s,volume_ml` rows sampled at `n` points.
    pub fn to_csv(&self, n: usize) -> String {
        let (a, b) = self.domain();
        let mut s = String::from("time_s,volume_ml\n");
        for i in 0..n.max(2) {
            let t = a + (b - a) * i as f64 / (n.max(2) - 1) as f64;
            s.push_str(&format!("{t},{}\n", self.volume(t)));
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extrema {
    pub edv_ml: f64,
    pub esv_ml: f64,
    pub t_edv_s: f64,
    pub t_esv_s: f64,
}

/// Global maximum (EDV) and minimum (ESV) of the curve over its domain.
pub fn edv_esv(curve: &VolumeTimeCurve) -> Extrema {
    let (a, b) = curve.domain();
    let (t_edv, edv) = curve.argmax_on(|t| curve.volume(t), a, b);
    let (t_esv, neg) = curve.argmax_on(|t| -curve.volume(t), a, b);
    Extrema {
        edv_ml: edv,
        esv_ml: -neg,
        t_edv_s: t_edv,
        t_esv_s: t_esv,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrokeIndices {
    pub sv_ml: f64,
    pub co_l_min: f64,
    pub ef_pct: f64,
}

/// SV = EDV - ESV, CO = SV * HR / 1000 (L/min), EF = SV / EDV * 100.
pub fn stroke_cardiac_output(edv_ml: f64, esv_ml: f64, hr_bpm: f64) -> Result<StrokeIndices> {
    if !(esv_ml > 0.0 && edv_ml > esv_ml) {
        return Err(Error::InvalidParameter(format!("need EDV > ESV > 0, got {edv_ml} / {esv_ml}")));
    }
    if !(hr_bpm > 0.0 && hr_bpm.is_finite()) {
        return Err(Error::InvalidParameter(format!("heart rate must be > 0, got {hr_bpm}")));
    }
    let sv = edv_ml - esv_ml;
    Ok(StrokeIndices {
        sv_ml: sv,
        co_l_min: sv * hr_bpm / 1000.0,
        ef_pct: sv / edv_ml * 100.0,
    })
}

/// `Q(t) = -dV/dt` sampled at `n` evenly spaced times on `[t_avo, t_avc]`.
pub fn flow_rate(curve: &VolumeTimeCurve, t_avo: f64, t_avc: f64, n: usize) -> Result<Vec<(f64, f64)>> {
    curve.check_window(t_avo, t_avc)?;
    let n = n.max(2);
    Ok((0..n)
        .map(|i| {
            let t = t_avo + (t_avc - t_avo) * i as f64 / (n - 1) as f64;
            (t, -curve.dvdt(t))
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakRates {
    /// Most negative dV/dt in the ejection window (ml/s, negative).
    pub per_ml_s: f64,
    pub t_per_s: f64,
    /// Largest dV/dt outside the ejection window (ml/s).
    pub pfr_ml_s: f64,
    pub t_pfr_s: f64,
}

/// Diastolic sub-intervals of the curve domain outside `[t_avo, t_avc]`.
fn diastole(curve: &VolumeTimeCurve, t_avo: f64, t_avc: f64) -> Vec<(f64, f64)> {
    let (a, b) = curve.domain();
    [(t_avc, b), (a, t_avo)].into_iter().filter(|(s, e)| e > s).collect()
}

pub fn peak_rates(curve: &VolumeTimeCurve, t_avo: f64, t_avc: f64) -> Result<PeakRates> {
    curve.check_window(t_avo, t_avc)?;
    let (t_per, neg) = curve.argmax_on(|t| -curve.dvdt(t), t_avo, t_avc);
    let mut pfr = (f64::NAN, f64::NEG_INFINITY);
    for (s, e) in diastole(curve, t_avo, t_avc) {
        let c = curve.argmax_on(|t| curve.dvdt(t), s, e);
        if c.1 > pfr.1 {
            pfr = c;
        }
    }
    if pfr.0.is_nan() {
        // Ejection window covers the whole domain: no diastole sampled.
        pfr = (t_avc, curve.dvdt(t_avc));
    }
    Ok(PeakRates {
        per_ml_s: -neg,
        t_per_s: t_per,
        pfr_ml_s: pfr.1,
        t_pfr_s: pfr.0,
    })
}

/// Aortic valve opening/closing times: around the steepest descent, the
/// first and last times where `|dV/dt|` is at least `fraction` of `|PER|`
/// within the contiguous descending stretch.
pub fn valve_events(curve: &VolumeTimeCurve, fraction: f64) -> Result<(f64, f64)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParameter("valve-event fraction must be in (0, 1)".into()));
    }
    let (a, b) = curve.domain();
    let (t_per, neg) = curve.argmax_on(|t| -curve.dvdt(t), a, b);
    if neg <= 0.0 {
        return Err(Error::Undefined("curve never decreases; no ejection phase".into()));
    }
    let level = fraction * neg;
    let step = (b - a) / DENSE as f64;
    // Walk outward from t_per while the slope stays above the level, then
    // bisect the crossing.
    let above = |t: f64| -curve.dvdt(t) >= level;
    let crossing = |inside: f64, outside: f64| {
        let (mut i, mut o) = (inside, outside);
        for _ in 0..60 {
            let mid = 0.5 * (i + o);
            if above(mid) {
                i = mid;
            } else {
                o = mid;
            }
        }
        i
    };
    let mut lo = t_per;
    let t_avo = loop {
        let next = lo - step;
        if next <= a {
            break if above(a) { a } else { crossing(lo, a) };
        }
        if !above(next) {
            break crossing(lo, next);
        }
        lo = next;
    };
    let mut hi = t_per;
    let t_avc = loop {
        let next = hi + step;
        if next >= b {
            break if above(b) { b } else { crossing(hi, b) };
        }
        if !above(next) {
            break crossing(hi, next);
        }
        hi = next;
    };
    Ok((t_avo, t_avc))
}

/// Area (cm^2) enclosed by a closed, near-planar boundary loop given in mm,
/// measured on its least-squares plane.
pub fn effective_orifice_area(boundary: &[Point3<f64>]) -> Result<f64> {
    if boundary.len() < 3 {
        return Err(Error::InsufficientData("orifice boundary needs at least 3 points".into()));
    }
    let n = boundary.len() as f64;
    let c = boundary.iter().fold(Vector3::zeros(), |s, p| s + p.coords) / n;
    let mut cov = nalgebra::Matrix3::<f64>::zeros();
    for p in boundary {
        let d = p.coords - c;
        cov += d * d.transpose();
    }
    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let e1 = eig.eigenvectors.column(order[0]).into_owned();
    let e2 = eig.eigenvectors.column(order[1]).into_owned();
    let pts: Vec<Vector2<f64>> = boundary
        .iter()
        .map(|p| {
            let d = p.coords - c;
            Vector2::new(d.dot(&e1), d.dot(&e2))
        })
        .collect();
    if self_intersects(&pts) {
        return Err(Error::Degenerate("orifice boundary loop self-intersects".into()));
    }
    let twice: f64 = (0..pts.len())
        .map(|i| {
            let (p, q) = (pts[i], pts[(i + 1) % pts.len()]);
            p.x * q.y - q.x * p.y
        })
        .sum();
    let area = 0.5 * twice.abs();
    if area == 0.0 {
        return Err(Error::Degenerate("orifice boundary encloses no area".into()));
    }
    Ok(area / 100.0)
}

fn self_intersects(p: &[Vector2<f64>]) -> bool {
    let n = p.len();
    let cross = |o: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>| (a - o).perp(&(b - o));
    for i in 0..n {
        let (a, b) = (p[i], p[(i + 1) % n]);
        for j in i + 1..n {
            // skip edges sharing a vertex
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (c, d) = (p[j], p[(j + 1) % n]);
            let d1 = cross(c, d, a);
            let d2 = cross(c, d, b);
            let d3 = cross(a, b, c);
            let d4 = cross(a, b, d);
            if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
                return true;
            }
        }
    }
    false
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regurgitation {
    pub rv_ml: f64,
    pub sv_eff_ml: f64,
}

/// RV = trapezoid integral of `max(0, Q)` over the sampled diastolic flow
/// `(t, Q)`; `SV_eff = SV - RV`.
pub fn regurgitant_volume(q_diastole: &[(f64, f64)], sv_ml: f64) -> Result<Regurgitation> {
    if q_diastole.len() < 2 {
        return Err(Error::InsufficientData("diastolic flow needs at least 2 samples".into()));
    }
    if q_diastole.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::InvalidParameter("flow sample times must increase".into()));
    }
    let rv: f64 = q_diastole
        .windows(2)
        .map(|w| 0.5 * (w[0].1.max(0.0) + w[1].1.max(0.0)) * (w[1].0 - w[0].0))
        .sum();
    Ok(Regurgitation {
        rv_ml: rv,
        sv_eff_ml: sv_ml - rv,
    })
}

/// Cross-sectional area samples `A(z, t)`: `areas_cm2[k][i]` at `times_s[k]`
/// and `z_cm[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaProfile {
    pub z_cm: Vec<f64>,
    pub times_s: Vec<f64>,
    pub areas_cm2: Vec<Vec<f64>>,
}

fn lerp_table(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let i = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1) - 1;
    let f = if xs.len() == 1 { 0.0 } else { (x - xs[i]) / (xs[i + 1] - xs[i]) };
    ys[i] + f * (ys[i + 1] - ys[i])
}

impl AreaProfile {
    fn validate(&self) -> Result<()> {
        if self.z_cm.len() < 2 || self.times_s.is_empty() {
            return Err(Error::InsufficientData("area profile needs >= 2 stations and >= 1 time".into()));
        }
        if self.areas_cm2.len() != self.times_s.len() || self.areas_cm2.iter().any(|r| r.len() != self.z_cm.len()) {
            return Err(Error::DimensionMismatch("area table does not match z/time grid".into()));
        }
        if self.z_cm.windows(2).any(|w| w[1] <= w[0]) || self.times_s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter("z and time grids must increase".into()));
        }
        Ok(())
    }

    /// Area row at time `t`, linear in time between samples.
    pub fn at_time(&self, t: f64) -> Result<Vec<f64>> {
        self.validate()?;
        let (t0, t1) = (self.times_s[0], *self.times_s.last().unwrap());
        if t < t0 || t > t1 {
            return Err(Error::Bounds(format!("time {t} outside [{t0}, {t1}]")));
        }
        if self.times_s.len() == 1 {
            return Ok(self.areas_cm2[0].clone());
        }
        Ok((0..self.z_cm.len())
            .map(|i| {
                let col: Vec<f64> = self.areas_cm2.iter().map(|r| r[i]).collect();
                lerp_table(&self.times_s, &col, t)
            })
            .collect())
    }
}

/// `integral over [z1, z2] of A(z, t_sys) - A(z, t_dia) dz` in ml (cm^2 * cm),
/// trapezoid rule with linear interpolation at the interval ends.
pub fn aortic_distension(profile: &AreaProfile, z1: f64, z2: f64, t_sys: f64, t_dia: f64) -> Result<f64> {
    profile.validate()?;
    let z = &profile.z_cm;
    if !(z1 < z2) || z1 < z[0] || z2 > *z.last().unwrap() {
        return Err(Error::Bounds(format!("[{z1}, {z2}] not covered by the z grid")));
    }
    let sys = profile.at_time(t_sys)?;
    let dia = profile.at_time(t_dia)?;
    let diff: Vec<f64> = sys.iter().zip(&dia).map(|(s, d)| s - d).collect();
    let mut pts = vec![(z1, lerp_table(z, &diff, z1))];
    pts.extend(z.iter().zip(&diff).filter(|(&zi, _)| zi > z1 && zi < z2).map(|(&zi, &d)| (zi, d)));
    pts.push((z2, lerp_table(z, &diff, z2)));
    Ok(pts.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HemoOptions {
    /// Fraction of |PER| that marks valve opening/closing.
    pub valve_fraction: f64,
    /// Explicit valve times; override the derived ones when set.
    pub t_avo_s: Option<f64>,
    pub t_avc_s: Option<f64>,
    /// Flow samples per second used for integrals.
    pub samples_per_s: f64,
}

impl Default for HemoOptions {
    fn default() -> Self {
        HemoOptions {
            valve_fraction: 0.05,
            t_avo_s: None,
            t_avc_s: None,
            samples_per_s: 2000.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HemodynamicsReport {
    pub edv_ml: f64,
    pub esv_ml: f64,
    pub sv_ml: f64,
    pub ef_pct: f64,
    pub co_l_min: f64,
    pub per_ml_s: f64,
    pub pfr_ml_s: f64,
    pub t_avo_s: f64,
    pub t_avc_s: f64,
    pub rv_ml: f64,
    pub sv_eff_ml: f64,
    pub mean_hr_bpm: f64,
}

fn sample_flow(curve: &VolumeTimeCurve, s: f64, e: f64, per_s: f64) -> Vec<(f64, f64)> {
    let n = (((e - s) * per_s).ceil() as usize).max(2);
    (0..=n)
        .map(|i| {
            let t = s + (e - s) * i as f64 / n as f64;
            (t, -curve.dvdt(t))
        })
        .collect()
}

/// Full report from a volume-time curve and a mean heart rate. Diastolic
/// flow uses `Q = -dV/dt` extended over the whole cycle.
pub fn hemodynamics_report(curve: &VolumeTimeCurve, mean_hr_bpm: f64, opts: &HemoOptions) -> Result<HemodynamicsReport> {
    let ext = edv_esv(curve);
    let idx = stroke_cardiac_output(ext.edv_ml, ext.esv_ml, mean_hr_bpm)?;
    let (t_avo, t_avc) = match (opts.t_avo_s, opts.t_avc_s) {
        (Some(o), Some(c)) => (o, c),
        (o, c) => {
            let (do_, dc) = valve_events(curve, opts.valve_fraction)?;
            (o.unwrap_or(do_), c.unwrap_or(dc))
        }
    };
    let rates = peak_rates(curve, t_avo, t_avc)?;
    let mut rv = 0.0;
    for (s, e) in diastole(curve, t_avo, t_avc) {
        rv += regurgitant_volume(&sample_flow(curve, s, e, opts.samples_per_s), 0.0)?.rv_ml;
    }
    Ok(HemodynamicsReport {
        edv_ml: ext.edv_ml,
        esv_ml: ext.esv_ml,
        sv_ml: idx.sv_ml,
        ef_pct: idx.ef_pct,
        co_l_min: idx.co_l_min,
        per_ml_s: rates.per_ml_s,
        pfr_ml_s: rates.pfr_ml_s,
        t_avo_s: t_avo,
        t_avc_s: t_avc,
        rv_ml: rv,
        sv_eff_ml: idx.sv_ml - rv,
        mean_hr_bpm,
    })
}

/// Volume-time curve from per-phase closed meshes at the given times
/// (periodic when `cycle_s` is given).
pub fn curve_from_meshes(times: &[f64], meshes: &[SurfaceMesh], cycle_s: Option<f64>) -> Result<VolumeTimeCurve> {
    if times.len() != meshes.len() {
        return Err(Error::DimensionMismatch(format!("{} times vs {} meshes", times.len(), meshes.len())));
    }
    let vols = meshes.iter().map(mesh_volume).collect::<Result<Vec<_>>>()?;
    match cycle_s {
        Some(c) => build_periodic_curve(times, &vols, c),
        None => build_curve(times, &vols),
    }
}

/// Report for one cardiac cycle sampled by `meshes` at evenly spaced times
/// over the mean R-R interval of `ecg`.
pub fn report_from_mesh_cycle(meshes: &[SurfaceMesh], ecg: &EcgTrace, opts: &HemoOptions) -> Result<HemodynamicsReport> {
    let hr = ecg.heart_rates()?;
    let rri = 60.0 / hr.mean_bpm;
    let n = meshes.len();
    let times: Vec<f64> = (0..n).map(|k| rri * k as f64 / n as f64).collect();
    let curve = curve_from_meshes(&times, meshes, Some(rri))?;
    hemodynamics_report(&curve, hr.mean_bpm, opts)
}

/// Load `*.obj` meshes from a directory in file-name order.
pub fn load_mesh_sequence(dir: &Path) -> Result<Vec<SurfaceMesh>> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("obj")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InsufficientData(format!("no .obj meshes in {}", dir.display())));
    }
    files.iter().map(crate::volume::load_mesh).collect()
}
