//! Volumes, meshes and synthetic phantoms.

pub mod io;
pub mod mesh;
pub mod phantom;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

pub use io::{load_volume, save_volume};
pub use mesh::{load_mesh, load_tet_mesh, save_mesh, save_tet_mesh, SurfaceMesh, TetMesh};
pub use phantom::{generate_vessel_phantom, CenterlineSpec, Phantom, PhantomSpec};

/// Regular grid of X-ray attenuation coefficients (1/mm), x-fastest order.
///
/// `origin_mm` is the world position of the *center* of voxel (0, 0, 0); voxel
/// `(i, j, k)` covers `origin + ([i, j, k] -/+ 0.5) * spacing`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationVolume {
    dims: [usize; 3],
    spacing_mm: Vector3<f64>,
    origin_mm: Point3<f64>,
    data: Vec<f32>,
}

impl AttenuationVolume {
    pub fn new(
        dims: [usize; 3],
        spacing_mm: Vector3<f64>,
        origin_mm: Point3<f64>,
        data: Vec<f32>,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidParameter(format!("volume dims must be >= 1, got {dims:?}")));
        }
        if spacing_mm.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidParameter("voxel spacing must be positive".into()));
        }
        if origin_mm.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("origin must be finite".into()));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::SizeMismatch {
                expected,
                found: data.len(),
            });
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "attenuation must be finite and non-negative (found {bad})"
            )));
        }
        Ok(AttenuationVolume {
            dims,
            spacing_mm,
            origin_mm,
            data,
        })
    }

    pub fn zeros(dims: [usize; 3], spacing_mm: Vector3<f64>, origin_mm: Point3<f64>) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, spacing_mm, origin_mm, vec![0.0; n])
    }

    /// Grid centered on the world origin.
    pub fn centered(dims: [usize; 3], spacing_mm: Vector3<f64>, data: Vec<f32>) -> Result<Self> {
        let origin = Point3::from(Vector3::from_fn(|i, _| {
            -(dims[i] as f64 - 1.0) * 0.5 * spacing_mm[i]
        }));
        Self::new(dims, spacing_mm, origin, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Vector3<f64> {
        self.spacing_mm
    }

    pub fn origin(&self) -> Point3<f64> {
        self.origin_mm
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.index(i, j, k)]
    }

    /// Apply `f` to every voxel value. Results must stay finite and >= 0.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(
            self.dims,
            self.spacing_mm,
            self.origin_mm,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    pub fn zip_with(&self, other: &Self, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        self.check_same_grid(other)?;
        Self::new(
            self.dims,
            self.spacing_mm,
            self.origin_mm,
            self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.dims != other.dims
            || (self.spacing_mm - other.spacing_mm).norm() > 1e-9
            || (self.origin_mm - other.origin_mm).norm() > 1e-9
        {
            return Err(Error::DimensionMismatch("volumes are on different grids".into()));
        }
        Ok(())
    }

    /// World-space center of a voxel.
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Point3<f64> {
        self.origin_mm + self.spacing_mm.component_mul(&Vector3::new(i as f64, j as f64, k as f64))
    }

    /// Axis-aligned box covered by the voxels.
    pub fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        let half = self.spacing_mm * 0.5;
        let lo = self.origin_mm - half;
        let extent = Vector3::new(self.dims[0] as f64, self.dims[1] as f64, self.dims[2] as f64)
            .component_mul(&self.spacing_mm);
        (lo, lo + extent)
    }

    /// Continuous voxel coordinates of a world point (voxel centers at integers).
    pub fn to_voxel(&self, p: &Point3<f64>) -> Vector3<f64> {
        (p - self.origin_mm).component_div(&self.spacing_mm)
    }

    /// Trilinear sample at continuous voxel coordinates; outside the grid the
    /// volume is zero.
    pub fn sample_voxel(&self, x: f64, y: f64, z: f64) -> f64 {
        trilinear(&self.data, self.dims, x, y, z)
    }

    pub fn sample_world(&self, p: &Point3<f64>) -> f64 {
        let v = self.to_voxel(p);
        self.sample_voxel(v.x, v.y, v.z)
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }
}

/// Trilinear interpolation with zero padding outside `[0, dim - 1]`.
pub(crate) fn trilinear(data: &[f32], dims: [usize; 3], x: f64, y: f64, z: f64) -> f64 {
    let fx = x.floor();
    let fy = y.floor();
    let fz = z.floor();
    let (tx, ty, tz) = (x - fx, y - fy, z - fz);
    let (ix, iy, iz) = (fx as i64, fy as i64, fz as i64);
    let at = |i: i64, j: i64, k: i64| -> f64 {
        if i < 0 || j < 0 || k < 0 || i >= dims[0] as i64 || j >= dims[1] as i64 || k >= dims[2] as i64 {
            0.0
        } else {
            data[i as usize + dims[0] * (j as usize + dims[1] * k as usize)] as f64
        }
    };
    let mut acc = 0.0;
    for (dk, wz) in [(0, 1.0 - tz), (1, tz)] {
        if wz == 0.0 {
            continue;
        }
        for (dj, wy) in [(0, 1.0 - ty), (1, ty)] {
            if wy == 0.0 {
                continue;
            }
            for (di, wx) in [(0, 1.0 - tx), (1, tx)] {
                if wx == 0.0 {
                    continue;
                }
                acc += wx * wy * wz * at(ix + di, iy + dj, iz + dk);
            }
        }
    }
    acc
}
