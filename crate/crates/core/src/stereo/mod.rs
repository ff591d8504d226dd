//! Stereo guidewire reconstruction: segmentation, centerlines, epipolar
//! matching, triangulation and a robust cubic B-spline fit.

pub mod camera;
pub mod centerline;
pub mod matching;

use nalgebra::{Point2, Point3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use camera::{epipolar_line, fundamental_matrix, ray_angle_deg, triangulate, CameraModel};
pub use centerline::{extract_centerline, Centerline2D, CenterlineParams, CurvePoint};
pub use matching::{densify_matches, match_cost, match_curves_dp, MatchParams, MatchResult};

use crate::bspline::{chord_parameters, fit_bspline, point_polyline_distance, BSplineCurve};
use crate::error::{Error, Result};
use crate::filters::{otsu_threshold, threshold, vesselness_multiscale};
use crate::image::Image2D;

/// A reconstructed device: clamped uniform cubic B-spline in world mm.
pub type GuidewireCurve = BSplineCurve;

/// Two calibrated views.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoRig {
    pub left: CameraModel,
    pub right: CameraModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub iterations: usize,
    pub seed: u64,
    /// Weight of the bending energy, scaled by the point count.
    pub smoothness: f64,
    /// Inlier threshold never drops below this distance.
    pub inlier_floor_mm: f64,
    pub min_inliers: usize,
    /// Points drawn per hypothesis; `None` uses the control-point count + 2.
    pub sample_size: Option<usize>,
    pub refine_rounds: usize,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            iterations: 100,
            seed: 0,
            smoothness: 1e-4,
            inlier_floor_mm: 0.05,
            min_inliers: 8,
            sample_size: None,
            refine_rounds: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RansacReport {
    pub inliers: Vec<usize>,
    pub outliers: Vec<usize>,
    /// Robust residual scale of the final fit.
    pub sigma_mm: f64,
    pub threshold_mm: f64,
    pub max_inlier_distance_mm: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Control-point count for `n` samples.
pub fn control_point_count(n: usize) -> usize {
    (n / 10).max(8)
}

fn fit_subset(points: &[Point3<f64>], idx: &[usize], m: usize, smooth: f64) -> Result<BSplineCurve> {
    let sub: Vec<Point3<f64>> = idx.iter().map(|&i| points[i]).collect();
    let u = chord_parameters(&sub);
    fit_bspline(&sub, &u, m, smooth)
}

/// Distances to the curve extended along its end tangents, so that points
/// beyond a clamped end are not penalized for the end's position.
fn residuals(curve: &BSplineCurve, points: &[Point3<f64>]) -> Vec<f64> {
    let mut dense = curve.sample((40 * curve.control_points.len()).max(400));
    let reach = crate::metrics::polyline_length(&dense).max(1.0);
    if let (Some(t0), Some(t1)) = (curve.derivative(0.0).try_normalize(0.0), curve.derivative(1.0).try_normalize(0.0)) {
        let (a, b) = (dense[0] - t0 * reach, dense[dense.len() - 1] + t1 * reach);
        dense.insert(0, a);
        dense.push(b);
    }
    points.iter().map(|p| point_polyline_distance(p, &dense)).collect()
}

/// Robust scale `1.4826 * median(|r|)` over `idx` and the resulting
/// `max(3 sigma, floor)` threshold.
fn threshold_of(res: &[f64], idx: &[usize], floor: f64) -> (f64, f64) {
    let mut r: Vec<f64> = idx.iter().map(|&i| res[i]).collect();
    let sigma = 1.4826 * median(&mut r);
    (sigma, (3.0 * sigma).max(floor))
}

/// Least-squares cubic B-spline through ordered points with RANSAC outlier
/// rejection (seeded, deterministic).
pub fn fit_bspline_ransac(points: &[Point3<f64>], p: &RansacParams) -> Result<(GuidewireCurve, RansacReport)> {
    let n = points.len();
    let need = p.min_inliers.max(4);
    if n < need {
        return Err(Error::InsufficientData(format!("B-spline fit needs >= {need} points, got {n}")));
    }
    let m = control_point_count(n);
    let all: Vec<usize> = (0..n).collect();
    let k = p.sample_size.unwrap_or(m + 2).clamp(need.min(n), n);
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);

    // Hypotheses are ranked by their median residual over all points (robust
    // to up to half the points being outliers); the winner's residuals give
    // the first 3-sigma inlier set.
    let score = |idx: &[usize]| -> Result<(f64, Vec<f64>)> {
        let curve = fit_subset(points, idx, m.min(idx.len()), p.smoothness)?;
        let res = residuals(&curve, points);
        let mut r = res.clone();
        Ok((median(&mut r), res))
    };
    let mut best = score(&all)?;
    for _ in 0..p.iterations {
        // one point per stratum of the ordering, so every hypothesis spans the curve
        let idx: Vec<usize> = (0..k).map(|j| rng.gen_range(j * n / k..(j + 1) * n / k)).collect();
        let Ok(cand) = score(&idx) else { continue };
        if cand.0 < best.0 {
            best = cand;
        }
    }
    let (_, thr0) = threshold_of(&best.1, &all, p.inlier_floor_mm);
    let mut inliers: Vec<usize> = all.iter().copied().filter(|&i| best.1[i] <= thr0).collect();
    let mut curve;
    let mut round = 0;
    loop {
        if inliers.len() < need {
            return Err(Error::InsufficientData(format!(
                "only {} inliers after RANSAC (need {need})",
                inliers.len()
            )));
        }
        curve = fit_subset(points, &inliers, m.min(inliers.len()), p.smoothness)?;
        let res = residuals(&curve, points);
        let (sigma, thr) = threshold_of(&res, &inliers, p.inlier_floor_mm);
        let next: Vec<usize> = all.iter().copied().filter(|&i| res[i] <= thr).collect();
        round += 1;
        if next == inliers || round >= p.refine_rounds.max(1) {
            let max_d = inliers.iter().map(|&i| res[i]).fold(0.0, f64::max);
            let outliers = all.iter().copied().filter(|i| inliers.binary_search(i).is_err()).collect();
            let report = RansacReport {
                inliers,
                outliers,
                sigma_mm: sigma,
                threshold_mm: thr,
                max_inlier_distance_mm: max_d,
            };
            return Ok((curve, report));
        }
        inliers = next;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StereoParams {
    /// Frangi scales in pixels.
    pub vessel_sigmas: Vec<f64>,
    pub frangi_beta: f64,
    /// Invert images first (dark devices on a bright field).
    pub invert: bool,
    pub centerline: CenterlineParams,
    pub matching: MatchParams,
    pub ransac: RansacParams,
    /// Median ray convergence below this angle flags the result as degraded.
    pub degraded_angle_deg: f64,
}

impl Default for StereoParams {
    fn default() -> Self {
        StereoParams {
            vessel_sigmas: vec![1.0, 2.0, 3.0],
            frangi_beta: 0.5,
            invert: true,
            centerline: CenterlineParams::default(),
            matching: MatchParams::default(),
            ransac: RansacParams::default(),
            degraded_angle_deg: 15.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StereoDiagnostics {
    pub mask_pixels: [usize; 2],
    pub centerline_length_px: [f64; 2],
    pub key_points: [usize; 2],
    pub matched_key_points: usize,
    pub unmatched_fraction: f64,
    pub c2_reversed: bool,
    pub correspondences: usize,
    pub triangulated: usize,
    pub median_ray_angle_deg: f64,
    pub inliers: usize,
    pub outliers: usize,
    pub max_inlier_distance_mm: f64,
    pub degraded: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reconstruction {
    pub curve: GuidewireCurve,
    /// Triangulated points in the order of the first centerline.
    pub points: Vec<Point3<f64>>,
    pub diagnostics: StereoDiagnostics,
}

/// Polarity-corrected, normalized working image.
pub fn prepare_image(img: &Image2D, p: &StereoParams) -> Image2D {
    if p.invert {
        img.inverted().normalized()
    } else {
        img.normalized()
    }
}

/// Binary device mask: multiscale Frangi response above its Otsu level.
pub fn segment_device(work: &Image2D, p: &StereoParams) -> Result<Image2D> {
    let v = vesselness_multiscale(work, &p.vessel_sigmas, p.frangi_beta)?;
    let (_, hi) = v.min_max();
    if hi <= 0.0 {
        return Ok(Image2D::zeros(work.width(), work.height()));
    }
    Ok(threshold(&v, otsu_threshold(&v)))
}

/// Match, triangulate and fit from two centerlines. `images` (if given)
/// feed the NCC term and must already be polarity-corrected.
pub fn reconstruct_from_centerlines(
    c1: &Centerline2D,
    c2: &Centerline2D,
    cam1: &CameraModel,
    cam2: &CameraModel,
    images: Option<matching::ImagePair<'_>>,
    p: &StereoParams,
) -> Result<Reconstruction> {
    let mut diag = StereoDiagnostics {
        centerline_length_px: [c1.length(), c2.length()],
        key_points: [c1.points.len(), c2.points.len()],
        ..Default::default()
    };
    let m = match_curves_dp(c1, c2, cam1, cam2, images, &p.matching)?;
    diag.matched_key_points = m.matches.len();
    diag.unmatched_fraction = m.unmatched_fraction;
    diag.c2_reversed = m.c2_reversed;
    let pairs = densify_matches(c1, c2, cam1, cam2, &m, &p.matching)?;
    diag.correspondences = pairs.len();
    let mut points = Vec::with_capacity(pairs.len());
    let mut angles = Vec::with_capacity(pairs.len());
    for (a, b) in &pairs {
        if let Ok(x) = triangulate(cam1, cam2, a, b) {
            points.push(x);
            angles.push(ray_angle_deg(cam1, cam2, a, b));
        }
    }
    diag.triangulated = points.len();
    if points.is_empty() {
        return Err(Error::Degenerate("no correspondence could be triangulated".into()));
    }
    diag.median_ray_angle_deg = median(&mut angles);
    if diag.median_ray_angle_deg < p.degraded_angle_deg {
        diag.degraded = true;
        diag.warnings.push(format!(
            "triangulation poorly conditioned: median ray angle {:.1} deg < {:.1} deg",
            diag.median_ray_angle_deg, p.degraded_angle_deg
        ));
    }
    let (curve, rep) = fit_bspline_ransac(&points, &p.ransac)?;
    diag.inliers = rep.inliers.len();
    diag.outliers = rep.outliers.len();
    diag.max_inlier_distance_mm = rep.max_inlier_distance_mm;
    Ok(Reconstruction {
        curve,
        points,
        diagnostics: diag,
    })
}

/// Full pipeline on a synchronized image pair.
pub fn reconstruct_guidewire(
    img1: &Image2D,
    img2: &Image2D,
    cam1: &CameraModel,
    cam2: &CameraModel,
    p: &StereoParams,
) -> Result<Reconstruction> {
    let w1 = prepare_image(img1, p);
    let w2 = prepare_image(img2, p);
    let m1 = segment_device(&w1, p)?;
    let m2 = segment_device(&w2, p)?;
    let count = |m: &Image2D| m.pixels().iter().filter(|&&v| v > 0.5).count();
    let mask_pixels = [count(&m1), count(&m2)];
    let c1 = extract_centerline(&m1, &p.centerline)?;
    let c2 = extract_centerline(&m2, &p.centerline)?;
    let mut r = reconstruct_from_centerlines(&c1, &c2, cam1, cam2, Some((&w1, &w2)), p)?;
    r.diagnostics.mask_pixels = mask_pixels;
    Ok(r)
}

/// Project 3D points through a camera, failing on any point behind it.
pub fn project_polyline(cam: &CameraModel, pts: &[Point3<f64>]) -> Result<Vec<Point2<f64>>> {
    pts.iter().map(|x| cam.project(x)).collect()
}
