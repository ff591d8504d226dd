//! Synthetic vessel phantoms: a tube of constant attenuation swept along a
//! 3D curve, with optional stenoses and a periodic "beating" displacement.

use std::f64::consts::PI;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::mesh::SurfaceMesh;
use super::AttenuationVolume;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CenterlineSpec {
    Line {
        start: [f64; 3],
        end: [f64; 3],
    },
    /// Catmull-Rom spline through the given points.
    Spline { points: Vec<[f64; 3]> },
    /// Helix around the z axis through `center`, centered in z.
    Helix {
        center: [f64; 3],
        radius_mm: f64,
        pitch_mm: f64,
        turns: f64,
    },
}

impl CenterlineSpec {
    /// Curve point at normalized parameter `s` in [0, 1].
    pub fn point(&self, s: f64) -> Point3<f64> {
        match self {
            CenterlineSpec::Line { start, end } => {
                let a = Point3::from(*start);
                let b = Point3::from(*end);
                a + (b - a) * s
            }
            CenterlineSpec::Spline { points } => catmull_rom(points, s),
            CenterlineSpec::Helix {
                center,
                radius_mm,
                pitch_mm,
                turns,
            } => {
                let th = 2.0 * PI * turns * s;
                Point3::new(
                    center[0] + radius_mm * th.cos(),
                    center[1] + radius_mm * th.sin(),
                    center[2] + (s - 0.5) * pitch_mm * turns,
                )
            }
        }
    }

    /// Closed-form length where one exists.
    pub fn analytic_length(&self) -> Option<f64> {
        match self {
            CenterlineSpec::Line { start, end } => Some((Point3::from(*end) - Point3::from(*start)).norm()),
            CenterlineSpec::Helix {
                radius_mm,
                pitch_mm,
                turns,
                ..
            } => Some(turns.abs() * ((2.0 * PI * radius_mm).powi(2) + pitch_mm * pitch_mm).sqrt()),
            CenterlineSpec::Spline { .. } => None,
        }
    }
}

fn catmull_rom(points: &[[f64; 3]], s: f64) -> Point3<f64> {
    let n = points.len();
    match n {
        0 => return Point3::origin(),
        1 => return Point3::from(points[0]),
        _ => {}
    }
    let p = |i: isize| -> Vector3<f64> {
        // reflect past the ends so the end tangents follow the first/last chord
        if i < 0 {
            2.0 * Vector3::from(points[0]) - Vector3::from(points[1])
        } else if i as usize >= n {
            2.0 * Vector3::from(points[n - 1]) - Vector3::from(points[n - 2])
        } else {
            Vector3::from(points[i as usize])
        }
    };
    let x = s.clamp(0.0, 1.0) * (n - 1) as f64;
    let seg = (x.floor() as usize).min(n - 2);
    let t = x - seg as f64;
    let i = seg as isize;
    let (p0, p1, p2, p3) = (p(i - 1), p(i), p(i + 1), p(i + 2));
    let t2 = t * t;
    let t3 = t2 * t;
    let v = 0.5
        * (2.0 * p1 + (p2 - p0) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t3);
    Point3::from(v)
}

/// Gaussian narrowing of the lumen centered at normalized arc position `at`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stenosis {
    pub at: f64,
    /// Fractional radius reduction at the center, in [0, 1).
    pub severity: f64,
    /// Gaussian sigma along the centerline in mm.
    pub width_mm: f64,
}

/// Periodic displacement `A * sin(pi s) * (1 - cos(2 pi phase)) / 2 * dir`.
/// Ends of the vessel stay fixed, the middle moves most, and phase 0 is rest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub amplitude_mm: f64,
    pub direction: [f64; 3],
}

impl Motion {
    pub fn offset(&self, s: f64, phase: f64) -> Vector3<f64> {
        let d = Vector3::from(self.direction);
        let n = d.norm();
        if n == 0.0 {
            return Vector3::zeros();
        }
        let w = 0.5 * (1.0 - (2.0 * PI * phase).cos());
        d / n * (self.amplitude_mm * (PI * s).sin() * w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub centerline: CenterlineSpec,
    pub radius_mm: f64,
    #[serde(default)]
    pub stenoses: Vec<Stenosis>,
    #[serde(default)]
    pub background: f32,
    pub vessel: f32,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    /// Center of voxel (0,0,0). `None` centers the grid so that the world
    /// origin (the isocenter) falls on the center of voxel `dims / 2`.
    #[serde(default)]
    pub origin_mm: Option<[f64; 3]>,
    #[serde(default)]
    pub motion: Option<Motion>,
    /// Cardiac phase in [0, 1) at which `motion` is evaluated.
    #[serde(default)]
    pub phase: f64,
}

impl PhantomSpec {
    pub fn straight_tube(radius_mm: f64, length_mm: f64, dims: [usize; 3], spacing_mm: f64) -> Self {
        PhantomSpec {
            centerline: CenterlineSpec::Line {
                start: [-length_mm / 2.0, 0.0, 0.0],
                end: [length_mm / 2.0, 0.0, 0.0],
            },
            radius_mm,
            stenoses: Vec::new(),
            background: 0.0,
            vessel: 0.02,
            dims,
            spacing_mm: [spacing_mm; 3],
            origin_mm: None,
            motion: None,
            phase: 0.0,
        }
    }

    pub fn at_phase(&self, phase: f64) -> Self {
        PhantomSpec {
            phase,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius_mm.is_finite() && self.radius_mm > 0.0) {
            return Err(Error::InvalidParameter("vessel radius must be > 0".into()));
        }
        for s in &self.stenoses {
            if !(0.0..1.0).contains(&s.severity) || !(s.width_mm > 0.0) {
                return Err(Error::InvalidParameter(
                    "stenosis severity must be in [0,1) and width > 0".into(),
                ));
            }
        }
        if !(self.background >= 0.0 && self.vessel >= 0.0) {
            return Err(Error::InvalidParameter("attenuation values must be >= 0".into()));
        }
        if let CenterlineSpec::Spline { points } = &self.centerline {
            if points.len() < 2 {
                return Err(Error::Degenerate("spline centerline needs >= 2 points".into()));
            }
        }
        Ok(())
    }

    fn curve_point(&self, s: f64) -> Point3<f64> {
        let p = self.centerline.point(s);
        match &self.motion {
            Some(m) => p + m.offset(s, self.phase),
            None => p,
        }
    }

    fn empty_volume(&self) -> Result<AttenuationVolume> {
        let n: usize = self.dims.iter().product();
        let spacing = Vector3::from(self.spacing_mm);
        let data = vec![self.background; n];
        match self.origin_mm {
            Some(o) => AttenuationVolume::new(self.dims, spacing, Point3::from(o), data),
            None => {
                let o = Point3::from(Vector3::from_fn(|i, _| -((self.dims[i] / 2) as f64) * spacing[i]));
                AttenuationVolume::new(self.dims, spacing, o, data)
            }
        }
    }
}

/// Generated phantom plus its analytic ground truth.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: AttenuationVolume,
    /// Dense centerline samples (spacing at most a quarter voxel).
    pub centerline: Vec<Point3<f64>>,
    /// Lumen radius at each centerline sample.
    pub radii: Vec<f64>,
    pub surface: SurfaceMesh,
}

impl Phantom {
    pub fn centerline_length(&self) -> f64 {
        polyline_length(&self.centerline)
    }
}

pub fn polyline_length(points: &[Point3<f64>]) -> f64 {
    points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
}

/// Dense samples of the (displaced) centerline with arc-length step
/// at most `max_step`.
fn sample_curve(spec: &PhantomSpec, max_step: f64) -> Vec<Point3<f64>> {
    const COARSE: usize = 4096;
    let coarse: Vec<Point3<f64>> = (0..=COARSE)
        .map(|i| spec.curve_point(i as f64 / COARSE as f64))
        .collect();
    let approx_len = polyline_length(&coarse);
    // Parameter speed is not uniform for splines; oversample by 2x.
    let n = ((approx_len / max_step).ceil() as usize * 2).max(COARSE);
    (0..=n).map(|i| spec.curve_point(i as f64 / n as f64)).collect()
}

pub fn generate_vessel_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let mut volume = spec.empty_volume()?;
    let min_spacing = spec.spacing_mm.iter().copied().fold(f64::INFINITY, f64::min);
    let centerline = sample_curve(spec, min_spacing / 4.0);
    let length = polyline_length(&centerline);
    if length <= min_spacing * 1e-6 {
        return Err(Error::Degenerate("centerline has zero length".into()));
    }

    let (lo, hi) = volume.bounds();
    for p in &centerline {
        if (0..3).any(|k| p[k] < lo[k] || p[k] > hi[k]) {
            return Err(Error::Bounds(format!(
                "centerline point ({:.2}, {:.2}, {:.2}) lies outside the volume",
                p.x, p.y, p.z
            )));
        }
    }

    let mut arc = Vec::with_capacity(centerline.len());
    let mut acc = 0.0;
    arc.push(0.0);
    for w in centerline.windows(2) {
        acc += (w[1] - w[0]).norm();
        arc.push(acc);
    }
    let radii: Vec<f64> = arc
        .iter()
        .map(|&a| {
            let dip: f64 = spec
                .stenoses
                .iter()
                .map(|st| {
                    let d = a - st.at * length;
                    st.severity * (-0.5 * (d / st.width_mm).powi(2)).exp()
                })
                .sum();
            spec.radius_mm * (1.0 - dip).max(0.05)
        })
        .collect();

    voxelize(&mut volume, &centerline, &radii, spec.vessel);
    let surface = tube_surface(&centerline, &radii, 24);
    Ok(Phantom {
        volume,
        centerline,
        radii,
        surface,
    })
}

/// Mark voxels whose center lies within the local radius of the polyline.
/// Projections beyond the first/last sample are excluded, giving flat end caps.
fn voxelize(volume: &mut AttenuationVolume, centerline: &[Point3<f64>], radii: &[f64], value: f32) {
    let dims = volume.dims();
    let spacing = volume.spacing();
    let mut inside = vec![false; volume.len()];
    let nseg = centerline.len() - 1;
    let (first, last) = (centerline[0], centerline[nseg]);
    let t_first = (centerline[1] - first).normalize();
    let t_last = (last - centerline[nseg - 1]).normalize();
    for s in 0..nseg {
        let (a, b) = (centerline[s], centerline[s + 1]);
        let (ra, rb) = (radii[s], radii[s + 1]);
        let d = b - a;
        let len2 = d.norm_squared();
        let rmax = ra.max(rb);
        let va = volume.to_voxel(&a);
        let vb = volume.to_voxel(&b);
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        let mut empty = false;
        for k in 0..3 {
            let pad = rmax / spacing[k] + 1.0;
            let l = (va[k].min(vb[k]) - pad).floor().max(0.0);
            let h = (va[k].max(vb[k]) + pad).ceil().min(dims[k] as f64 - 1.0);
            if h < l {
                empty = true;
                break;
            }
            lo[k] = l as usize;
            hi[k] = h as usize;
        }
        if empty {
            continue;
        }
        for k in lo[2]..=hi[2] {
            for j in lo[1]..=hi[1] {
                for i in lo[0]..=hi[0] {
                    let idx = volume.index(i, j, k);
                    if inside[idx] {
                        continue;
                    }
                    let c = volume.voxel_center(i, j, k);
                    if (c - first).dot(&t_first) < 0.0 || (c - last).dot(&t_last) > 0.0 {
                        continue;
                    }
                    let t = if len2 > 0.0 { ((c - a).dot(&d) / len2).clamp(0.0, 1.0) } else { 0.0 };
                    let r = ra + (rb - ra) * t;
                    if (c - (a + d * t)).norm_squared() <= r * r {
                        inside[idx] = true;
                    }
                }
            }
        }
    }
    let data: Vec<f32> = volume
        .data()
        .iter()
        .zip(&inside)
        .map(|(&bg, &m)| if m { value } else { bg })
        .collect();
    *volume = AttenuationVolume::new(dims, spacing, volume.origin(), data).expect("same grid, valid values");
}

/// Closed tube surface with flat caps, outward oriented. Ring frames are
/// propagated by rotation-minimizing double reflection.
pub fn tube_surface(centerline: &[Point3<f64>], radii: &[f64], segments: usize) -> SurfaceMesh {
    // Thin the dense samples to rings roughly a quarter radius apart.
    let rmin = radii.iter().copied().fold(f64::INFINITY, f64::min).max(1e-6);
    let mut ring_idx = vec![0usize];
    let mut since = 0.0;
    for i in 1..centerline.len() {
        since += (centerline[i] - centerline[i - 1]).norm();
        if since >= 0.25 * rmin || i == centerline.len() - 1 {
            ring_idx.push(i);
            since = 0.0;
        }
    }
    let pts: Vec<Point3<f64>> = ring_idx.iter().map(|&i| centerline[i]).collect();
    let rs: Vec<f64> = ring_idx.iter().map(|&i| radii[i]).collect();
    let n = pts.len();
    let tangent = |i: usize| -> Vector3<f64> {
        let a = pts[i.saturating_sub(1)];
        let b = pts[(i + 1).min(n - 1)];
        (b - a).normalize()
    };

    let t0 = tangent(0);
    let helper = if t0.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let mut normal = t0.cross(&helper).normalize();
    let mut frames = vec![(t0, normal)];
    for i in 1..n {
        let (ti, ri) = frames[i - 1];
        let v1 = pts[i] - pts[i - 1];
        let c1 = v1.norm_squared();
        let tn = tangent(i);
        if c1 > 0.0 {
            let rl = ri - v1 * (2.0 / c1 * v1.dot(&ri));
            let tl = ti - v1 * (2.0 / c1 * v1.dot(&ti));
            let v2 = tn - tl;
            let c2 = v2.norm_squared();
            normal = if c2 > 0.0 { rl - v2 * (2.0 / c2 * v2.dot(&rl)) } else { rl };
        }
        normal = (normal - tn * tn.dot(&normal)).normalize();
        frames.push((tn, normal));
    }

    let mut vertices = Vec::with_capacity(n * segments + 2);
    for i in 0..n {
        let (t, nrm) = frames[i];
        let b = t.cross(&nrm);
        for k in 0..segments {
            let th = 2.0 * PI * k as f64 / segments as f64;
            vertices.push(pts[i] + (nrm * th.cos() + b * th.sin()) * rs[i]);
        }
    }
    let c0 = vertices.len();
    vertices.push(pts[0]);
    let c1 = vertices.len();
    vertices.push(pts[n - 1]);

    let mut triangles = Vec::new();
    let id = |i: usize, k: usize| i * segments + (k % segments);
    for i in 0..n - 1 {
        for k in 0..segments {
            triangles.push([id(i, k), id(i + 1, k), id(i + 1, k + 1)]);
            triangles.push([id(i, k), id(i + 1, k + 1), id(i, k + 1)]);
        }
    }
    for k in 0..segments {
        triangles.push([c0, id(0, k), id(0, k + 1)]);
        triangles.push([c1, id(n - 1, k + 1), id(n - 1, k)]);
    }
    let mesh = SurfaceMesh { vertices, triangles };
    if mesh.signed_volume() < 0.0 {
        mesh.flipped()
    } else {
        mesh
    }
}
