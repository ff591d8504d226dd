//! Pinhole cameras with radial/tangential distortion, epipolar geometry and
//! linear triangulation.

use nalgebra::{Matrix3, Matrix3x4, Matrix4, Point2, Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CArmPose, ProjectionMatrix};

/// World-to-camera pinhole model. Pixel coordinates are continuous, with
/// pixel `i` covering `[i, i + 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraFile", into = "CameraFile")]
pub struct CameraModel {
    pub k: Matrix3<f64>,
    /// `[k1, k2, p1, p2]`.
    pub d: [f64; 4],
    pub r: Matrix3<f64>,
    pub t: Vector3<f64>,
}

#[derive(Serialize, Deserialize)]
struct CameraFile {
    #[serde(rename = "K")]
    k: [[f64; 3]; 3],
    #[serde(rename = "D", default)]
    d: [f64; 4],
    #[serde(rename = "R")]
    r: [[f64; 3]; 3],
    t: [f64; 3],
}

fn rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    [0, 1, 2].map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]])
}

fn from_rows(a: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| a[i][j])
}

impl TryFrom<CameraFile> for CameraModel {
    type Error = Error;
    fn try_from(f: CameraFile) -> Result<Self> {
        CameraModel::new(from_rows(&f.k), f.d, from_rows(&f.r), Vector3::from(f.t))
    }
}

impl From<CameraModel> for CameraFile {
    fn from(c: CameraModel) -> Self {
        CameraFile {
            k: rows(&c.k),
            d: c.d,
            r: rows(&c.r),
            t: c.t.into(),
        }
    }
}

impl CameraModel {
    pub fn new(k: Matrix3<f64>, d: [f64; 4], r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let finite = k.iter().chain(r.iter()).chain(t.iter()).chain(d.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter("camera has non-finite entries".into()));
        }
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 || k[(2, 2)] != 1.0 {
            return Err(Error::InvalidParameter("K must be upper triangular with K[2][2] = 1".into()));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0) {
            return Err(Error::InvalidParameter("focal lengths must be positive".into()));
        }
        if (r.transpose() * r - Matrix3::identity()).norm() > 1e-9 || (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter("R must be a rotation (orthonormal, det 1)".into()));
        }
        Ok(CameraModel { k, d, r, t })
    }

    /// The ideal (distortion-free) camera of a C-arm pose; the source is the
    /// camera center.
    pub fn from_carm(pose: &CArmPose) -> Result<Self> {
        pose.validate()?;
        let r = pose.world_to_camera_rotation();
        let t = -(r * pose.table_mm) + Vector3::new(0.0, 0.0, pose.spd_mm);
        CameraModel::new(ProjectionMatrix::intrinsics(pose), [0.0; 4], r, t)
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(-(self.r.transpose() * self.t))
    }

    /// `K [R | t]`, valid for undistorted pixels.
    pub fn projection_matrix(&self) -> Matrix3x4<f64> {
        let mut ext = Matrix3x4::zeros();
        ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r);
        ext.set_column(3, &self.t);
        self.k * ext
    }

    fn distort(&self, n: Vector2<f64>) -> Vector2<f64> {
        let [k1, k2, p1, p2] = self.d;
        let (x, y) = (n.x, n.y);
        let r2 = x * x + y * y;
        let radial = 1.0 + k1 * r2 + k2 * r2 * r2;
        Vector2::new(
            x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x),
            y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y,
        )
    }

    fn to_pixel(&self, n: Vector2<f64>) -> Point2<f64> {
        let p = self.k * Vector3::new(n.x, n.y, 1.0);
        Point2::new(p.x, p.y)
    }

    fn to_normalized(&self, px: &Point2<f64>) -> Vector2<f64> {
        let k = &self.k;
        let y = (px.y - k[(1, 2)]) / k[(1, 1)];
        let x = (px.x - k[(0, 2)] - k[(0, 1)] * y) / k[(0, 0)];
        Vector2::new(x, y)
    }

    /// Distorted pixel of a world point; points at or behind the camera plane
    /// are an error.
    pub fn project(&self, x: &Point3<f64>) -> Result<Point2<f64>> {
        let c = self.r * x.coords + self.t;
        if c.z <= 1e-9 {
            return Err(Error::ProjectionDegenerate);
        }
        Ok(self.to_pixel(self.distort(Vector2::new(c.x / c.z, c.y / c.z))))
    }

    /// Remove lens distortion from a pixel (fixed-point inversion).
    pub fn undistort(&self, px: &Point2<f64>) -> Point2<f64> {
        if self.d == [0.0; 4] {
            return *px;
        }
        let target = self.to_normalized(px);
        let mut n = target;
        for _ in 0..100 {
            let step = target - (self.distort(n) - n) - n;
            n += step;
            if step.norm() < 1e-14 {
                break;
            }
        }
        self.to_pixel(n)
    }

    /// Unit direction (world frame) of the ray through an undistorted pixel.
    pub fn ray_direction(&self, px: &Point2<f64>) -> Vector3<f64> {
        let n = self.to_normalized(px);
        (self.r.transpose() * Vector3::new(n.x, n.y, 1.0)).normalize()
    }
}

/// `F` with `x2^T F x1 = 0` for corresponding undistorted pixels.
pub fn fundamental_matrix(cam1: &CameraModel, cam2: &CameraModel) -> Result<Matrix3<f64>> {
    let r = cam2.r * cam1.r.transpose();
    let t = cam2.t - r * cam1.t;
    if t.norm() <= 1e-9 * (cam1.t.norm() + cam2.t.norm()).max(1.0) {
        return Err(Error::Degenerate("cameras share a center; epipolar geometry undefined".into()));
    }
    let e = crate::geometry::skew(&t) * r;
    let k1i = cam1.k.try_inverse().ok_or_else(|| Error::Numerical("K1 not invertible".into()))?;
    let k2i = cam2.k.try_inverse().ok_or_else(|| Error::Numerical("K2 not invertible".into()))?;
    Ok(k2i.transpose() * e * k1i)
}

/// Epipolar line `(a, b, c)` in image 2 for pixel `p1`, scaled so that
/// `a x + b y + c` is a signed pixel distance.
pub fn epipolar_line(f: &Matrix3<f64>, p1: &Point2<f64>) -> Vector3<f64> {
    let l = f * Vector3::new(p1.x, p1.y, 1.0);
    let n = (l.x * l.x + l.y * l.y).sqrt();
    if n > 0.0 {
        l / n
    } else {
        l
    }
}

/// Angle in degrees between the two viewing rays of a correspondence.
pub fn ray_angle_deg(cam1: &CameraModel, cam2: &CameraModel, p1: &Point2<f64>, p2: &Point2<f64>) -> f64 {
    let c = cam1.ray_direction(p1).dot(&cam2.ray_direction(p2)).clamp(-1.0, 1.0);
    c.acos().to_degrees()
}

/// Linear (DLT) triangulation from two undistorted pixels.
pub fn triangulate(cam1: &CameraModel, cam2: &CameraModel, p1: &Point2<f64>, p2: &Point2<f64>) -> Result<Point3<f64>> {
    let baseline = (cam1.center() - cam2.center()).norm();
    let scale = cam1.center().coords.norm().max(cam2.center().coords.norm()).max(1.0);
    if baseline <= 1e-9 * scale {
        return Err(Error::Degenerate("zero baseline: camera centers coincide".into()));
    }
    if ray_angle_deg(cam1, cam2, p1, p2) < 1e-7 {
        return Err(Error::Degenerate("viewing rays are parallel".into()));
    }
    let mut a = Matrix4::<f64>::zeros();
    for (k, (cam, p)) in [(cam1, p1), (cam2, p2)].into_iter().enumerate() {
        // Normalized image coordinates keep the system well conditioned.
        let n = cam.to_normalized(p);
        let mut ext = Matrix3x4::zeros();
        ext.fixed_view_mut::<3, 3>(0, 0).copy_from(&cam.r);
        ext.set_column(3, &cam.t);
        let r0 = ext.row(2) * n.x - ext.row(0);
        let r1 = ext.row(2) * n.y - ext.row(1);
        a.set_row(2 * k, &(r0 / r0.norm()));
        a.set_row(2 * k + 1, &(r1 / r1.norm()));
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or_else(|| Error::Numerical("triangulation SVD failed".into()))?;
    let (imin, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|x, y| x.1.total_cmp(y.1))
        .expect("4 singular values");
    let h = v_t.row(imin).transpose();
    if h[3].abs() <= 1e-12 * h.norm() {
        return Err(Error::Degenerate("triangulated point at infinity".into()));
    }
    Ok(Point3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}
