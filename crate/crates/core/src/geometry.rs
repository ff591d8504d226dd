//! C-arm angular model and projection geometry.
//!
//! World coordinates are millimetres with the origin at the isocenter. The
//! primary angle `alpha` rotates about the world z axis (positive = LAO), the
//! secondary angle `beta` tilts about the rotated x axis (positive = CRAN).
//!
//! The beam direction (source towards detector) at the neutral pose is
//! `(0, -1, 0)`. With that choice `direction_from_angles` and
//! `angles_from_direction` are exact inverses and `v_z = sin(beta)`.
//!
//! Detector pixels are square with pitch `FD / (sqrt(2) * n)`, i.e. `FD` is the
//! diagonal of a square detector. The focal length in pixels is therefore
//! `sqrt(2) * n * SID / FD`. The isocenter with zero table offset projects to
//! pixel `(n_u / 2, n_v / 2)`; pixel `i` covers `[i, i + 1)`.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Matrix3x4, Point2, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Neutral beam direction.
pub const NEUTRAL_DIRECTION: Vector3<f64> = Vector3::new(0.0, -1.0, 0.0);

/// Initial secondary rotation axis before the primary rotation is applied.
const SECONDARY_AXIS: Vector3<f64> = Vector3::new(-1.0, 0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseFile", into = "PoseFile")]
pub struct CArmPose {
    /// Primary angle in radians, positive towards LAO.
    pub alpha: f64,
    /// Secondary angle in radians, positive towards CRAN.
    pub beta: f64,
    pub sid_mm: f64,
    pub spd_mm: f64,
    /// Detector diagonal length.
    pub fd_mm: f64,
    pub n_u: usize,
    pub n_v: usize,
    pub table_mm: Vector3<f64>,
}

/// On-disk pose: angles in degrees.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct PoseFile {
    alpha_deg: f64,
    beta_deg: f64,
    sid_mm: f64,
    spd_mm: f64,
    fd_mm: f64,
    n_u: usize,
    n_v: usize,
    table_mm: [f64; 3],
}

impl TryFrom<PoseFile> for CArmPose {
    type Error = Error;

    fn try_from(f: PoseFile) -> Result<Self> {
        let pose = CArmPose {
            alpha: f.alpha_deg.to_radians(),
            beta: f.beta_deg.to_radians(),
            sid_mm: f.sid_mm,
            spd_mm: f.spd_mm,
            fd_mm: f.fd_mm,
            n_u: f.n_u,
            n_v: f.n_v,
            table_mm: Vector3::from(f.table_mm),
        };
        pose.validate()?;
        Ok(pose)
    }
}

impl From<CArmPose> for PoseFile {
    fn from(p: CArmPose) -> Self {
        PoseFile {
            alpha_deg: p.alpha.to_degrees(),
            beta_deg: p.beta.to_degrees(),
            sid_mm: p.sid_mm,
            spd_mm: p.spd_mm,
            fd_mm: p.fd_mm,
            n_u: p.n_u,
            n_v: p.n_v,
            table_mm: p.table_mm.into(),
        }
    }
}

impl Default for CArmPose {
    fn default() -> Self {
        CArmPose {
            alpha: 0.0,
            beta: 0.0,
            sid_mm: 1200.0,
            spd_mm: 800.0,
            fd_mm: 300.0 * std::f64::consts::SQRT_2,
            n_u: 512,
            n_v: 512,
            table_mm: Vector3::zeros(),
        }
    }
}

impl CArmPose {
    pub fn with_angles_deg(mut self, alpha_deg: f64, beta_deg: f64) -> Self {
        self.alpha = alpha_deg.to_radians();
        self.beta = beta_deg.to_radians();
        self
    }

    pub fn with_detector(mut self, n_u: usize, n_v: usize) -> Self {
        self.n_u = n_u;
        self.n_v = n_v;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.beta, self.sid_mm, self.spd_mm, self.fd_mm]
            .iter()
            .chain(self.table_mm.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidPose("non-finite field".into()));
        }
        if !(self.spd_mm > 0.0 && self.sid_mm > self.spd_mm) {
            return Err(Error::InvalidPose(format!(
                "require sid > spd > 0 (sid={}, spd={})",
                self.sid_mm, self.spd_mm
            )));
        }
        if self.fd_mm <= 0.0 {
            return Err(Error::InvalidPose("detector diagonal must be positive".into()));
        }
        if self.n_u < 2 || self.n_v < 2 {
            return Err(Error::InvalidPose("detector needs at least 2x2 pixels".into()));
        }
        if self.beta.abs() >= FRAC_PI_2 {
            return Err(Error::InvalidPose(format!(
                "|beta| must be below 90 degrees (got {:.3} deg)",
                self.beta.to_degrees()
            )));
        }
        Ok(())
    }

    /// Focal lengths in pixels, `(f_u, f_v)`.
    pub fn focal_px(&self) -> (f64, f64) {
        let k = std::f64::consts::SQRT_2 * self.sid_mm / self.fd_mm;
        (k * self.n_u as f64, k * self.n_v as f64)
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.n_u as f64 / 2.0, self.n_v as f64 / 2.0)
    }

    /// Rotation taking world vectors into the detector/source frame
    /// (x along detector columns, y along rows, z along the beam).
    pub fn world_to_camera_rotation(&self) -> Matrix3<f64> {
        let gantry = rotation_secondary(self.beta, self.alpha) * rotation_primary(self.alpha);
        neutral_camera_basis().transpose() * gantry.transpose()
    }

    pub fn beam_direction(&self) -> Vector3<f64> {
        direction_from_angles(self.alpha, self.beta)
    }

    pub fn source_position(&self) -> Point3<f64> {
        Point3::from(self.table_mm - self.spd_mm * self.beam_direction())
    }

    /// World position of a continuous detector coordinate `(u, v)`.
    pub fn detector_point(&self, u: f64, v: f64) -> Point3<f64> {
        let (fu, fv) = self.focal_px();
        let (cu, cv) = self.principal_point();
        let cam = Vector3::new(
            (u - cu) * self.sid_mm / fu,
            (v - cv) * self.sid_mm / fv,
            self.sid_mm - self.spd_mm,
        );
        Point3::from(self.world_to_camera_rotation().transpose() * cam + self.table_mm)
    }
}

/// Rotation about the world z axis by the primary angle.
pub fn rotation_primary(alpha: f64) -> Matrix3<f64> {
    let (s, c) = alpha.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Cross-product matrix: `skew(u) * w == u x w`.
pub fn skew(u: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -u.z, u.y, u.z, 0.0, -u.x, -u.y, u.x, 0.0)
}

/// Rodrigues rotation by `beta` about `R_alpha * (-1, 0, 0)`.
pub fn rotation_secondary(beta: f64, alpha: f64) -> Matrix3<f64> {
    let u = rotation_primary(alpha) * SECONDARY_AXIS;
    let (s, c) = beta.sin_cos();
    Matrix3::identity() * c + (u * u.transpose()) * (1.0 - c) + skew(&u) * s
}

pub fn direction_from_angles(alpha: f64, beta: f64) -> Vector3<f64> {
    rotation_secondary(beta, alpha) * rotation_primary(alpha) * NEUTRAL_DIRECTION
}

/// Inverse of [`direction_from_angles`]. `v` is normalised internally.
///
/// Returns `alpha` in `(-pi, pi]`. On the `v_y = 0` line the result is
/// `+pi/2` for `v_x >= 0` and `-pi/2` otherwise.
pub fn angles_from_direction(v: &Vector3<f64>) -> Result<(f64, f64)> {
    let n = v.norm();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::InvalidParameter("direction must be a nonzero finite vector".into()));
    }
    let v = v / n;
    if v.z.abs() >= 1.0 || (v.x == 0.0 && v.y == 0.0) {
        return Err(Error::DegeneratePose);
    }
    let alpha = if v.y == 0.0 {
        if v.x >= 0.0 {
            FRAC_PI_2
        } else {
            -FRAC_PI_2
        }
    } else {
        // Quadrant-aware form of arctan(-v_x / v_y) for the (0, -1, 0) neutral beam.
        v.x.atan2(-v.y)
    };
    Ok((alpha, v.z.asin()))
}

fn neutral_camera_basis() -> Matrix3<f64> {
    // Columns: detector u axis, detector v axis, beam direction.
    Matrix3::from_columns(&[
        Vector3::new(-1.0, 0.0, 0.0),
        Vector3::new(0.0, 0.0, -1.0),
        NEUTRAL_DIRECTION,
    ])
}

/// Homogeneous 3x4 world-to-pixel map.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionMatrix(pub Matrix3x4<f64>);

impl ProjectionMatrix {
    pub fn intrinsics(pose: &CArmPose) -> Matrix3<f64> {
        let (fu, fv) = pose.focal_px();
        let (cu, cv) = pose.principal_point();
        Matrix3::new(fu, 0.0, cu, 0.0, fv, cv, 0.0, 0.0, 1.0)
    }

    pub fn scaled(&self, k: f64) -> Self {
        ProjectionMatrix(self.0 * k)
    }
}

pub fn projection_matrix(pose: &CArmPose) -> ProjectionMatrix {
    let r = pose.world_to_camera_rotation();
    let t = -(r * pose.table_mm) + Vector3::new(0.0, 0.0, pose.spd_mm);
    let mut ext = Matrix3x4::zeros();
    ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    ext.set_column(3, &t);
    ProjectionMatrix(ProjectionMatrix::intrinsics(pose) * ext)
}

pub fn project_point(pm: &ProjectionMatrix, x: &Point3<f64>) -> Result<Point2<f64>> {
    let h = pm.0 * x.to_homogeneous();
    let scale = pm.0.fixed_view::<1, 3>(2, 0).norm();
    if h.z.abs() <= 1e-12 * scale.max(1.0) {
        return Err(Error::ProjectionDegenerate);
    }
    Ok(Point2::new(h.x / h.z, h.y / h.z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, PI};

    fn assert_vec(a: Vector3<f64>, b: Vector3<f64>, tol: f64) {
        assert!((a - b).norm() < tol, "{a:?} != {b:?}");
    }

    #[test]
    fn primary_rotation_examples() {
        assert_eq!(rotation_primary(0.0), Matrix3::identity());
        assert_vec(
            rotation_primary(FRAC_PI_2) * Vector3::y(),
            Vector3::new(-1.0, 0.0, 0.0),
            1e-15,
        );
        let prod = rotation_primary(0.7) * rotation_primary(-0.7);
        assert!((prod - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn secondary_rotation_examples() {
        for a in [-2.0, 0.0, 0.4, 3.0] {
            assert!((rotation_secondary(0.0, a) - Matrix3::identity()).norm() < 1e-15);
        }
        assert_vec(
            rotation_secondary(FRAC_PI_2, 0.0) * Vector3::z(),
            Vector3::y(),
            1e-15,
        );
        let u = Vector3::new(-1.0, 0.0, 0.0);
        assert_eq!(skew(&u) * u, Vector3::zeros());
        // fixed axis
        let a = 1.1;
        let axis = rotation_primary(a) * u;
        assert_vec(rotation_secondary(0.8, a) * axis, axis, 1e-15);
    }

    #[test]
    fn direction_examples() {
        assert_vec(direction_from_angles(0.0, 0.0), NEUTRAL_DIRECTION, 1e-15);
        let v = direction_from_angles(0.0, FRAC_PI_4);
        // matrix product evaluated by hand: (0, -cos b, sin b)
        assert_vec(v, Vector3::new(0.0, -FRAC_PI_4.cos(), FRAC_PI_4.sin()), 1e-15);
        for i in 0..20 {
            for j in 0..20 {
                let a = -PI + (i as f64 + 0.5) * 2.0 * PI / 20.0;
                let b = -1.5 + (j as f64 + 0.5) * 3.0 / 20.0;
                let v = direction_from_angles(a, b);
                assert!((v.norm() - 1.0).abs() < 1e-12);
                assert!((v.z - b.sin()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn angle_extraction_examples() {
        let (a, b) = angles_from_direction(&Vector3::new(0.0, -1.0, 0.0)).unwrap();
        assert_eq!((a, b), (0.0, 0.0));
        let (a, b) = angles_from_direction(&Vector3::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!((a, b), (FRAC_PI_2, 0.0));
        let (a, _) = angles_from_direction(&Vector3::new(-1.0, 0.0, 0.0)).unwrap();
        assert_eq!(a, -FRAC_PI_2);
        let (a, b) = angles_from_direction(&direction_from_angles(0.3, -0.5)).unwrap();
        assert!((a - 0.3).abs() < 1e-12 && (b + 0.5).abs() < 1e-12);
        assert!(matches!(
            angles_from_direction(&Vector3::z()),
            Err(Error::DegeneratePose)
        ));
    }

    #[test]
    fn neutral_projection_hits_center() {
        let pose = CArmPose::default().with_detector(400, 300);
        let pm = projection_matrix(&pose);
        let p = project_point(&pm, &Point3::origin()).unwrap();
        assert!((p.x - 200.0).abs() < 1e-9 && (p.y - 150.0).abs() < 1e-9);
    }

    #[test]
    fn magnification_law() {
        let pose = CArmPose::default();
        let pm = projection_matrix(&pose);
        let gain = std::f64::consts::SQRT_2 * pose.n_u as f64 * pose.sid_mm
            / (pose.fd_mm * pose.spd_mm);
        let c = project_point(&pm, &Point3::origin()).unwrap();
        // x and z are in-plane at the isocenter depth for the neutral pose
        for d in [Vector3::new(10.0, 0.0, 0.0), Vector3::new(0.0, 0.0, 10.0)] {
            let p = project_point(&pm, &Point3::from(d)).unwrap();
            assert!(((p - c).norm() - 10.0 * gain).abs() < 1e-9);
        }
    }

    #[test]
    fn table_shift_moves_origin_like_negative_point() {
        let mut pose = CArmPose::default().with_angles_deg(20.0, -10.0);
        let base = projection_matrix(&pose);
        let expected = project_point(&base, &Point3::new(-5.0, 0.0, 0.0)).unwrap();
        pose.table_mm = Vector3::new(5.0, 0.0, 0.0);
        let got = project_point(&projection_matrix(&pose), &Point3::origin()).unwrap();
        assert!((got - expected).norm() < 1e-9);
    }

    #[test]
    fn projection_invariances() {
        let pose = CArmPose::default().with_angles_deg(34.3, 29.7);
        let pm = projection_matrix(&pose);
        let x = Point3::new(12.0, -7.0, 30.0);
        let p = project_point(&pm, &x).unwrap();
        let p2 = project_point(&pm.scaled(2.0), &x).unwrap();
        assert!((p - p2).norm() < 1e-9);
        // collinear with the source
        let s = pose.source_position();
        let y = s + (x - s) * 1.7;
        let q = project_point(&pm, &y).unwrap();
        assert!((p - q).norm() < 1e-9);
        assert!(matches!(project_point(&pm, &s), Err(Error::ProjectionDegenerate)));
    }

    #[test]
    fn detector_point_projects_back() {
        let pose = CArmPose::default().with_angles_deg(-30.2, 0.2);
        let pm = projection_matrix(&pose);
        let d = pose.detector_point(100.5, 400.25);
        let p = project_point(&pm, &d).unwrap();
        assert!((p.x - 100.5).abs() < 1e-8 && (p.y - 400.25).abs() < 1e-8);
        let m = pm.0.fixed_view::<3, 3>(0, 0).into_owned();
        assert!(m.determinant().abs() > 0.0);
    }

    #[test]
    fn pose_json_round_trip_and_validation() {
        let pose = CArmPose::default().with_angles_deg(34.3, 29.7);
        let s = serde_json::to_string(&pose).unwrap();
        assert!(s.contains("alpha_deg"));
        let back: CArmPose = serde_json::from_str(&s).unwrap();
        assert!((back.alpha - pose.alpha).abs() < 1e-12);
        let bad = r#"{"alpha_deg":0,"beta_deg":95,"sid_mm":1200,"spd_mm":800,
            "fd_mm":400,"n_u":64,"n_v":64,"table_mm":[0,0,0]}"#;
        assert!(serde_json::from_str::<CArmPose>(bad).is_err());
    }
}
