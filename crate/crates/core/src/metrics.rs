//! Morphological consistency between vessel descriptors and similarity
//! metrics between trajectories (Dice, MTE, W1, maximum error).

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vessel centerline (mm or px), diameters at stations along it, and an
/// optional bifurcation angle in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VesselDescriptor {
    pub centerline: Vec<Point3<f64>>,
    pub diameters: Vec<f64>,
    #[serde(default)]
    pub bifurcation_angle_deg: Option<f64>,
}

pub fn polyline_length(p: &[Point3<f64>]) -> f64 {
    p.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

impl VesselDescriptor {
    pub fn new(centerline: Vec<Point3<f64>>, diameters: Vec<f64>, bifurcation_angle_deg: Option<f64>) -> Result<Self> {
        let d = VesselDescriptor {
            centerline,
            diameters,
            bifurcation_angle_deg,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.centerline.len() < 2 {
            return Err(Error::InsufficientData("descriptor centerline needs >= 2 points".into()));
        }
        if self.diameters.is_empty() || self.diameters.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::InvalidParameter("diameters must be nonempty and > 0".into()));
        }
        if !(self.chord() > 0.0) {
            return Err(Error::Degenerate("centerline endpoints coincide (zero chord)".into()));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        polyline_length(&self.centerline)
    }

    pub fn chord(&self) -> f64 {
        (self.centerline[self.centerline.len() - 1] - self.centerline[0]).norm()
    }

    /// Path length over chord length.
    pub fn tortuosity(&self) -> f64 {
        self.length() / self.chord()
    }

    /// Copy with diameters linearly resampled to `n` stations.
    pub fn with_stations(&self, n: usize) -> Self {
        let mut d = self.clone();
        d.diameters = resample_values(&self.diameters, n);
        d
    }
}

/// Linear resampling of evenly spaced values to `n` evenly spaced stations.
pub fn resample_values(v: &[f64], n: usize) -> Vec<f64> {
    if v.len() == 1 || n == 1 {
        return vec![v[0]; n];
    }
    (0..n)
        .map(|i| {
            let x = i as f64 * (v.len() - 1) as f64 / (n - 1) as f64;
            let k = (x.floor() as usize).min(v.len() - 2);
            let f = x - k as f64;
            v[k] * (1.0 - f) + v[k + 1] * f
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Consistency {
    #[serde(rename = "C_L")]
    pub c_l: f64,
    #[serde(rename = "C_D")]
    pub c_d: f64,
    #[serde(rename = "C_T")]
    pub c_t: f64,
    #[serde(rename = "C_theta")]
    pub c_theta: f64,
    #[serde(rename = "C_overall")]
    pub c_overall: f64,
}

fn clamp_pct(x: f64) -> f64 {
    x.clamp(0.0, 100.0)
}

/// Percent consistency of a virtual descriptor `v` against a reference `r`.
/// Each component is clamped to [0, 100]; a bifurcation angle missing from
/// both descriptors scores 100.
pub fn morphological_consistency(v: &VesselDescriptor, r: &VesselDescriptor) -> Result<Consistency> {
    v.validate()?;
    r.validate()?;
    if v.diameters.len() != r.diameters.len() {
        return Err(Error::DimensionMismatch(format!(
            "diameter stations differ ({} vs {}); resample first",
            v.diameters.len(),
            r.diameters.len()
        )));
    }
    let (lv, lr) = (v.length(), r.length());
    let c_l = clamp_pct((1.0 - (lv - lr).abs() / lr) * 100.0);
    let n = r.diameters.len() as f64;
    let rel: f64 = v
        .diameters
        .iter()
        .zip(&r.diameters)
        .map(|(dv, dr)| (dv - dr).abs() / dr)
        .sum::<f64>()
        / n;
    let c_d = clamp_pct((1.0 - rel) * 100.0);
    let (tv, tr) = (v.tortuosity(), r.tortuosity());
    let c_t = clamp_pct((1.0 - (tv - tr).abs() / tr) * 100.0);
    let c_theta = match (v.bifurcation_angle_deg, r.bifurcation_angle_deg) {
        (Some(a), Some(b)) => clamp_pct((1.0 - (a - b).abs() / 180.0) * 100.0),
        (None, None) => 100.0,
        _ => {
            return Err(Error::InvalidParameter(
                "bifurcation angle given for only one descriptor".into(),
            ))
        }
    };
    Ok(Consistency {
        c_l,
        c_d,
        c_t,
        c_theta,
        c_overall: 0.3 * c_l + 0.3 * c_d + 0.2 * c_t + 0.2 * c_theta,
    })
}

/// Angle (degrees) between the directions from `at` to the points
/// `distal` arc length along each daughter branch (branches start near `at`).
pub fn bifurcation_angle_deg(at: &Point3<f64>, a: &[Point3<f64>], b: &[Point3<f64>], distal: f64) -> Result<f64> {
    let da = point_at_arclength(a, distal)? - at;
    let db = point_at_arclength(b, distal)? - at;
    if da.norm() == 0.0 || db.norm() == 0.0 {
        return Err(Error::Degenerate("branch direction has zero length".into()));
    }
    Ok(da.angle(&db).to_degrees())
}

fn point_at_arclength(p: &[Point3<f64>], s: f64) -> Result<Point3<f64>> {
    if p.len() < 2 {
        return Err(Error::InsufficientData("branch needs >= 2 points".into()));
    }
    let mut acc = 0.0;
    for w in p.windows(2) {
        let l = (w[1] - w[0]).norm();
        if acc + l >= s && l > 0.0 {
            return Ok(w[0] + (w[1] - w[0]) * ((s - acc) / l));
        }
        acc += l;
    }
    Ok(p[p.len() - 1])
}

/// `2|X ∩ Y| / (|X| + |Y|)`.
pub fn dice(x: &[bool], y: &[bool]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!("mask sizes {} vs {}", x.len(), y.len())));
    }
    let (mut a, mut b, mut both) = (0usize, 0usize, 0usize);
    for (&p, &q) in x.iter().zip(y) {
        a += p as usize;
        b += q as usize;
        both += (p && q) as usize;
    }
    if a + b == 0 {
        return Err(Error::Undefined("Dice of two empty masks".into()));
    }
    Ok(2.0 * both as f64 / (a + b) as f64)
}

/// Points evenly spaced by arc length along a polyline (`n >= 2`).
pub fn resample_polyline(p: &[Point3<f64>], n: usize) -> Result<Vec<Point3<f64>>> {
    if p.is_empty() {
        return Err(Error::InsufficientData("empty trajectory".into()));
    }
    if n < 2 || p.len() == 1 {
        return Ok(vec![p[0]; n.max(1)]);
    }
    let total = polyline_length(p);
    (0..n).map(|i| point_at_arclength(p, total * i as f64 / (n - 1) as f64)).collect()
}

fn check_pair(p: &[Point3<f64>], q: &[Point3<f64>]) -> Result<()> {
    if p.is_empty() || q.is_empty() {
        return Err(Error::InsufficientData("empty trajectory".into()));
    }
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch(format!(
            "trajectories have {} and {} points; resample first",
            p.len(),
            q.len()
        )));
    }
    Ok(())
}

/// Mean distance between corresponding points.
pub fn mean_trajectory_error(p: &[Point3<f64>], q: &[Point3<f64>]) -> Result<f64> {
    check_pair(p, q)?;
    Ok(p.iter().zip(q).map(|(a, b)| (a - b).norm()).sum::<f64>() / p.len() as f64)
}

/// Both curves resampled to `n` arc-length stations, then MTE.
pub fn curve_mte(p: &[Point3<f64>], q: &[Point3<f64>], n: usize) -> Result<f64> {
    mean_trajectory_error(&resample_polyline(p, n)?, &resample_polyline(q, n)?)
}

/// Exact W1 between uniform empirical measures of equal size: the optimal
/// assignment cost divided by N.
pub fn wasserstein_trajectories(p: &[Point3<f64>], q: &[Point3<f64>]) -> Result<f64> {
    check_pair(p, q)?;
    let n = p.len();
    let cost: Vec<f64> = p.iter().flat_map(|a| q.iter().map(move |b| (a - b).norm())).collect();
    let assign = hungarian(&cost, n);
    Ok(assign.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>() / n as f64)
}

/// `max ||p_i - q_i|| / L * 100`.
pub fn max_error_pct(p: &[Point3<f64>], q: &[Point3<f64>], length: f64) -> Result<f64> {
    check_pair(p, q)?;
    if !(length > 0.0) {
        return Err(Error::InvalidParameter(format!("guidewire length must be > 0, got {length}")));
    }
    let m = p.iter().zip(q).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    Ok(m / length * 100.0)
}

/// Minimum-cost perfect assignment for a square row-major cost matrix
/// (shortest augmenting paths with potentials, O(n^3)). Returns the column
/// assigned to each row.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    assert_eq!(cost.len(), n * n);
    let inf = f64::INFINITY;
    // 1-based arrays; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut owner = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut rows = vec![0usize; n];
    for j in 1..=n {
        if owner[j] > 0 {
            rows[owner[j] - 1] = j - 1;
        }
    }
    rows
}

/// Binary mask of pixels whose centers lie within `radius` px of a 2D
/// polyline (x, y taken from the points).
pub fn polyline_mask(points: &[Point3<f64>], width: usize, height: usize, radius: f64) -> Vec<bool> {
    let mut mask = vec![false; width * height];
    let r = radius.max(0.0);
    for w in points.windows(2).chain(if points.len() == 1 { Some(&points[0..1]) } else { None }) {
        let (a, b) = (w[0], *w.last().unwrap());
        let x0 = ((a.x.min(b.x) - r - 1.0).floor().max(0.0)) as usize;
        let x1 = ((a.x.max(b.x) + r + 1.0).ceil().max(0.0) as usize).min(width);
        let y0 = ((a.y.min(b.y) - r - 1.0).floor().max(0.0)) as usize;
        let y1 = ((a.y.max(b.y) + r + 1.0).ceil().max(0.0) as usize).min(height);
        let (dx, dy) = (b.x - a.x, b.y - a.y);
        let len2 = dx * dx + dy * dy;
        for y in y0..y1 {
            for x in x0..x1 {
                let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                let t = if len2 > 0.0 { (((px - a.x) * dx + (py - a.y) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
                let (cx, cy) = (a.x + t * dx - px, a.y + t * dy - py);
                if cx * cx + cy * cy <= r * r {
                    mask[y * width + x] = true;
                }
            }
        }
    }
    mask
}

/// Every metric of a trajectory comparison plus optional morphology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct MetricsReport {
    #[serde(rename = "C_L", skip_serializing_if = "Option::is_none")]
    pub c_l: Option<f64>,
    #[serde(rename = "C_D", skip_serializing_if = "Option::is_none")]
    pub c_d: Option<f64>,
    #[serde(rename = "C_T", skip_serializing_if = "Option::is_none")]
    pub c_t: Option<f64>,
    #[serde(rename = "C_theta", skip_serializing_if = "Option::is_none")]
    pub c_theta: Option<f64>,
    #[serde(rename = "C_overall", skip_serializing_if = "Option::is_none")]
    pub c_overall: Option<f64>,
    #[serde(rename = "DSC", skip_serializing_if = "Option::is_none")]
    pub dsc: Option<f64>,
    #[serde(rename = "MTE", skip_serializing_if = "Option::is_none")]
    pub mte: Option<f64>,
    #[serde(rename = "W1", skip_serializing_if = "Option::is_none")]
    pub w1: Option<f64>,
    #[serde(rename = "ME_pct", skip_serializing_if = "Option::is_none")]
    pub me_pct: Option<f64>,
}

impl MetricsReport {
    pub fn with_consistency(mut self, c: &Consistency) -> Self {
        self.c_l = Some(c.c_l);
        self.c_d = Some(c.c_d);
        self.c_t = Some(c.c_t);
        self.c_theta = Some(c.c_theta);
        self.c_overall = Some(c.c_overall);
        self
    }
}

/// Resample both trajectories to `n` points and compute MTE, W1 and ME
/// (ME against the reference length `q`).
pub fn trajectory_metrics(p: &[Point3<f64>], q: &[Point3<f64>], n: usize) -> Result<MetricsReport> {
    let (a, b) = (resample_polyline(p, n)?, resample_polyline(q, n)?);
    let length = polyline_length(q);
    Ok(MetricsReport {
        mte: Some(mean_trajectory_error(&a, &b)?),
        w1: Some(wasserstein_trajectories(&a, &b)?),
        me_pct: if length > 0.0 { Some(max_error_pct(&a, &b, length)?) } else { None },
        ..Default::default()
    })
}
