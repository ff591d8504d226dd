//! Dense deformable registration between phase volumes and deformation-based
//! phase interpolation.

use std::path::Path;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::gaussian_taps;
use crate::volume::io::{read_grid, write_grid, GridHeader};
use crate::volume::{trilinear, AttenuationVolume};

/// Displacement `u(x)` in mm per voxel of a grid: `phi(x) = x + u(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub dims: [usize; 3],
    pub spacing_mm: Vector3<f64>,
    pub origin_mm: Point3<f64>,
    pub displacement_mm: Vec<Vector3<f64>>,
}

impl DeformationField {
    pub fn zeros_like(vol: &AttenuationVolume) -> Self {
        DeformationField {
            dims: vol.dims(),
            spacing_mm: vol.spacing(),
            origin_mm: vol.origin(),
            displacement_mm: vec![Vector3::zeros(); vol.len()],
        }
    }

    pub fn uniform(vol: &AttenuationVolume, d_mm: Vector3<f64>) -> Self {
        DeformationField {
            displacement_mm: vec![d_mm; vol.len()],
            ..DeformationField::zeros_like(vol)
        }
    }

    pub fn check_grid(&self, vol: &AttenuationVolume) -> Result<()> {
        if self.dims != vol.dims() || self.spacing_mm != vol.spacing() || self.origin_mm != vol.origin() {
            return Err(Error::DimensionMismatch("deformation field and volume grids differ".into()));
        }
        if self.displacement_mm.len() != vol.len() {
            return Err(Error::SizeMismatch {
                expected: vol.len(),
                found: self.displacement_mm.len(),
            });
        }
        Ok(())
    }

    pub fn mean_displacement(&self, mask: impl Fn(usize) -> bool) -> Vector3<f64> {
        let (sum, n) = self
            .displacement_mm
            .iter()
            .enumerate()
            .filter(|(i, _)| mask(*i))
            .fold((Vector3::zeros(), 0usize), |(s, n), (_, d)| (s + d, n + 1));
        if n == 0 {
            Vector3::zeros()
        } else {
            sum / n as f64
        }
    }

    /// Raw float32 x3 payload plus JSON sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = GridHeader::new(self.dims, self.spacing_mm, self.origin_mm, 3);
        let values: Vec<f32> = self.displacement_mm.iter().flat_map(|d| [d.x as f32, d.y as f32, d.z as f32]).collect();
        write_grid(path.as_ref(), &header, &values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (h, values) = read_grid(path.as_ref())?;
        if h.components != 3 {
            return Err(Error::Format(format!("expected a 3-component grid, found {}", h.components)));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("deformation field contains non-finite values".into()));
        }
        Ok(DeformationField {
            dims: h.dims,
            spacing_mm: Vector3::from(h.spacing_mm),
            origin_mm: Point3::from(h.origin_mm),
            displacement_mm: values
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationParams {
    /// Weight of the smoothness term `mean |grad u|^2` (u in voxels).
    pub lambda: f64,
    /// Gaussian smoothing of each update, voxels.
    pub update_sigma: f64,
    /// Per resolution level.
    pub max_iterations: usize,
    /// Stop when the relative energy decrease of an accepted step is below this.
    pub tolerance: f64,
    /// Largest voxel displacement of the first trial step.
    pub initial_step: f64,
    /// Resolution levels (each halves the grid); 1 disables the pyramid.
    pub levels: usize,
}

impl Default for RegistrationParams {
    fn default() -> Self {
        RegistrationParams {
            lambda: 1e-2,
            update_sigma: 1.5,
            max_iterations: 100,
            tolerance: 1e-5,
            initial_step: 1.0,
            levels: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub field: DeformationField,
    /// Energy before the first step and after every accepted step.
    pub energies: Vec<f64>,
    pub converged: bool,
}

struct Grid {
    dims: [usize; 3],
}

impl Grid {
    fn len(&self) -> usize {
        self.dims.iter().product()
    }

    fn coords(&self, i: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }
}

/// Central-difference gradient in voxel units (one-sided at the borders).
fn gradient(data: &[f32], dims: [usize; 3]) -> Vec<Vector3<f64>> {
    let g = Grid { dims };
    (0..g.len())
        .into_par_iter()
        .map(|i| {
            let c = g.coords(i);
            let mut out = Vector3::zeros();
            for ax in 0..3 {
                let stride = match ax {
                    0 => 1,
                    1 => dims[0],
                    _ => dims[0] * dims[1],
                };
                if dims[ax] < 2 {
                    continue;
                }
                let (lo, hi, h) = if c[ax] == 0 {
                    (i, i + stride, 1.0)
                } else if c[ax] + 1 == dims[ax] {
                    (i - stride, i, 1.0)
                } else {
                    (i - stride, i + stride, 2.0)
                };
                out[ax] = (data[hi] as f64 - data[lo] as f64) / h;
            }
            out
        })
        .collect()
}

/// Separable Gaussian smoothing of a vector field with clamped borders.
fn smooth_field(field: &[Vector3<f64>], dims: [usize; 3], sigma: f64) -> Vec<Vector3<f64>> {
    if sigma <= 0.0 {
        return field.to_vec();
    }
    let taps = gaussian_taps(sigma);
    let r = taps.len() / 2;
    let mut cur = field.to_vec();
    for ax in 0..3 {
        let stride = [1, dims[0], dims[0] * dims[1]][ax];
        let n = dims[ax];
        // line starts: all voxels whose coordinate along `ax` is zero
        let starts: Vec<usize> = (0..cur.len()).filter(|&i| (i / stride).is_multiple_of(n)).collect();
        let src = &cur;
        let lines: Vec<Vec<Vector3<f64>>> = starts
            .par_iter()
            .map(|&s0| {
                let mut padded = Vec::with_capacity(n + 2 * r);
                padded.extend(std::iter::repeat_n(src[s0], r));
                padded.extend((0..n).map(|t| src[s0 + t * stride]));
                padded.extend(std::iter::repeat_n(src[s0 + (n - 1) * stride], r));
                (0..n)
                    .map(|t| {
                        let mut acc = Vector3::zeros();
                        for (q, w) in taps.iter().enumerate() {
                            acc += padded[t + q] * *w;
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        let mut next = vec![Vector3::zeros(); cur.len()];
        for (&s0, line) in starts.iter().zip(lines) {
            for (t, v) in line.into_iter().enumerate() {
                next[s0 + t * stride] = v;
            }
        }
        cur = next;
    }
    cur
}

struct Problem {
    dims: [usize; 3],
    fixed: Vec<f32>,
    moving: Vec<f32>,
    moving_grad: Vec<Vector3<f64>>,
    scale: f64,
    lambda: f64,
}

impl Problem {
    fn new(dims: [usize; 3], fixed: Vec<f32>, moving: Vec<f32>, scale: f64, lambda: f64) -> Self {
        Problem {
            moving_grad: gradient(&moving, dims),
            dims,
            fixed,
            moving,
            scale,
            lambda,
        }
    }

    fn warped(&self, u_vox: &[Vector3<f64>]) -> Vec<f64> {
        let g = Grid { dims: self.dims };
        let dims = self.dims;
        (0..g.len())
            .into_par_iter()
            .map(|i| {
                let c = g.coords(i);
                let u = u_vox[i];
                trilinear(&self.moving, dims, c[0] as f64 + u.x, c[1] as f64 + u.y, c[2] as f64 + u.z)
            })
            .collect()
    }

    fn smoothness(&self, u: &[Vector3<f64>]) -> f64 {
        let g = Grid { dims: self.dims };
        let dims = self.dims;
        let s: f64 = (0..g.len())
            .into_par_iter()
            .map(|i| {
                let c = g.coords(i);
                let mut acc = 0.0;
                for (ax, stride) in [1, dims[0], dims[0] * dims[1]].into_iter().enumerate() {
                    if c[ax] + 1 < dims[ax] {
                        acc += (u[i + stride] - u[i]).norm_squared();
                    }
                }
                acc
            })
            .sum();
        s / g.len() as f64
    }

    /// Energy `mean((I1 - I2(phi))^2) / scale^2 + lambda * mean |grad u|^2`.
    fn energy(&self, u: &[Vector3<f64>]) -> f64 {
        self.energy_and_warp(u).0
    }

    fn energy_and_warp(&self, u: &[Vector3<f64>]) -> (f64, Vec<f64>) {
        let w = self.warped(u);
        let n = w.len() as f64;
        let ssd: f64 = self.fixed.par_iter().zip(&w).map(|(&a, b)| (a as f64 - b).powi(2)).sum();
        let e = ssd / (n * self.scale * self.scale) + if self.lambda > 0.0 { self.lambda * self.smoothness(u) } else { 0.0 };
        (e, w)
    }

    /// Negative energy gradient (descent direction), voxel units.
    fn descent(&self, u: &[Vector3<f64>], w: &[f64]) -> Vec<Vector3<f64>> {
        let g = Grid { dims: self.dims };
        let dims = self.dims;
        let n = g.len() as f64;
        let k = 2.0 / (n * self.scale * self.scale);
        (0..g.len())
            .into_par_iter()
            .map(|i| {
                let c = g.coords(i);
                let p = Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) + u[i];
                let grad = sample_vector(&self.moving_grad, dims, &p);
                let r = self.fixed[i] as f64 - w[i];
                let mut d = grad * (k * r);
                if self.lambda > 0.0 {
                    // -dR/du = (2 lambda / n) * discrete Laplacian (Neumann).
                    let mut lap = Vector3::zeros();
                    for (ax, stride) in [1, dims[0], dims[0] * dims[1]].into_iter().enumerate() {
                        if c[ax] + 1 < dims[ax] {
                            lap += u[i + stride] - u[i];
                        }
                        if c[ax] > 0 {
                            lap += u[i - stride] - u[i];
                        }
                    }
                    d += lap * (2.0 * self.lambda / n);
                }
                d
            })
            .collect()
    }

    /// Descent from `u` until the relative decrease drops below the
    /// tolerance; returns the accepted energies (starting with `E(u)`).
    fn descend(&self, u: &mut Vec<Vector3<f64>>, p: &RegistrationParams) -> (Vec<f64>, bool) {
        let (mut e, mut w) = self.energy_and_warp(u);
        let mut energies = vec![e];
        let mut step = p.initial_step;
        let mut converged = e == 0.0;
        let mut iterations = 0;
        while !converged && iterations < p.max_iterations {
            iterations += 1;
            let d = smooth_field(&self.descent(u, &w), self.dims, p.update_sigma);
            let dmax = d.iter().map(|v| v.norm()).fold(0.0, f64::max);
            if dmax == 0.0 || !dmax.is_finite() {
                converged = true;
                break;
            }
            let mut accepted = false;
            while step > 1e-4 {
                let trial: Vec<Vector3<f64>> = u.iter().zip(&d).map(|(a, b)| a + b * (step / dmax)).collect();
                let (et, wt) = self.energy_and_warp(&trial);
                if et < e {
                    let rel = (e - et) / e;
                    *u = trial;
                    e = et;
                    w = wt;
                    energies.push(e);
                    accepted = true;
                    step = (step * 1.5).min(4.0 * p.initial_step);
                    converged = rel < p.tolerance;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                converged = true;
            }
        }
        (energies, converged)
    }
}

/// 2x2x2 block average (odd trailing slices are averaged with fewer samples).
fn downsample(data: &[f32], dims: [usize; 3]) -> (Vec<f32>, [usize; 3]) {
    let nd = dims.map(|d| d.div_ceil(2));
    let mut sum = vec![0.0f64; nd.iter().product()];
    let mut count = vec![0u32; sum.len()];
    for k in 0..dims[2] {
        for j in 0..dims[1] {
            for i in 0..dims[0] {
                let o = i / 2 + nd[0] * (j / 2 + nd[1] * (k / 2));
                sum[o] += data[i + dims[0] * (j + dims[1] * k)] as f64;
                count[o] += 1;
            }
        }
    }
    (sum.iter().zip(&count).map(|(s, &c)| (s / c as f64) as f32).collect(), nd)
}

/// Prolong a coarse displacement (coarse voxels) to the fine grid (fine voxels).
fn upsample(u: &[Vector3<f64>], coarse: [usize; 3], fine: [usize; 3]) -> Vec<Vector3<f64>> {
    let g = Grid { dims: fine };
    (0..g.len())
        .into_par_iter()
        .map(|i| {
            let c = g.coords(i);
            // fine voxel centre in coarse voxel coordinates
            let p = Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64) * 0.5 - Vector3::repeat(0.25);
            let p = Vector3::new(
                p.x.clamp(0.0, (coarse[0] - 1) as f64),
                p.y.clamp(0.0, (coarse[1] - 1) as f64),
                p.z.clamp(0.0, (coarse[2] - 1) as f64),
            );
            sample_vector(u, coarse, &p) * 2.0
        })
        .collect()
}

/// Trilinear sample of a vector field with zero padding.
fn sample_vector(field: &[Vector3<f64>], dims: [usize; 3], p: &Vector3<f64>) -> Vector3<f64> {
    let (fx, fy, fz) = (p.x.floor(), p.y.floor(), p.z.floor());
    let (tx, ty, tz) = (p.x - fx, p.y - fy, p.z - fz);
    let mut acc = Vector3::zeros();
    for (dk, wz) in [(0i64, 1.0 - tz), (1, tz)] {
        for (dj, wy) in [(0i64, 1.0 - ty), (1, ty)] {
            for (di, wx) in [(0i64, 1.0 - tx), (1, tx)] {
                let (i, j, k) = (fx as i64 + di, fy as i64 + dj, fz as i64 + dk);
                if i < 0 || j < 0 || k < 0 || i >= dims[0] as i64 || j >= dims[1] as i64 || k >= dims[2] as i64 {
                    continue;
                }
                let idx = i as usize + dims[0] * (j as usize + dims[1] * k as usize);
                acc += field[idx] * (wx * wy * wz);
            }
        }
    }
    acc
}

/// Find `u` with `I2(x + u(x)) ~ I1(x)`: gradient descent with Gaussian
/// smoothed updates and a backtracking line search, coarse to fine over a
/// block-average pyramid. Energies are reported on the full-resolution grid
/// and never increase.
pub fn register_volumes(i1: &AttenuationVolume, i2: &AttenuationVolume, p: &RegistrationParams) -> Result<Registration> {
    i1.check_same_grid(i2)?;
    if !(p.lambda >= 0.0) || !(p.update_sigma >= 0.0) || !(p.initial_step > 0.0) || !(p.tolerance >= 0.0) {
        return Err(Error::InvalidParameter("registration parameters must be non-negative (step > 0)".into()));
    }
    let range = i1.max_value().max(i2.max_value()) as f64;
    let scale = if range > 0.0 { range } else { 1.0 };
    let mut levels = vec![(i1.data().to_vec(), i2.data().to_vec(), i1.dims())];
    while levels.len() < p.levels.max(1) {
        let (a, b, d) = levels.last().unwrap();
        if d.iter().any(|&n| n < 8) {
            break;
        }
        let (a2, nd) = downsample(a, *d);
        let (b2, _) = downsample(b, *d);
        levels.push((a2, b2, nd));
    }
    let mut u: Option<(Vec<Vector3<f64>>, [usize; 3])> = None;
    let mut result = (Vec::new(), false);
    let mut final_u = Vec::new();
    for (k, (a, b, dims)) in levels.into_iter().enumerate().rev() {
        let problem = Problem::new(dims, a, b, scale, p.lambda);
        let zero = vec![Vector3::zeros(); dims.iter().product()];
        let mut cur = match u.take() {
            Some((c, cd)) => {
                let up = upsample(&c, cd, dims);
                // keep the energy sequence monotone at the finest level
                if k == 0 && problem.energy(&up) > problem.energy(&zero) {
                    zero
                } else {
                    up
                }
            }
            None => zero,
        };
        let r = problem.descend(&mut cur, p);
        if k == 0 {
            result = r;
            final_u = cur;
        } else {
            u = Some((cur, dims));
        }
    }
    let sp = i1.spacing();
    let mut energies = result.0;
    if let Some(first) = energies.first().copied() {
        // also record the energy of the zero field the search started from
        let zero_e = Problem::new(i1.dims(), i1.data().to_vec(), i2.data().to_vec(), scale, p.lambda)
            .energy(&vec![Vector3::zeros(); i1.len()]);
        if zero_e > first {
            energies.insert(0, zero_e);
        }
    }
    Ok(Registration {
        field: DeformationField {
            dims: i1.dims(),
            spacing_mm: sp,
            origin_mm: i1.origin(),
            displacement_mm: final_u.iter().map(|v| v.component_mul(&sp)).collect(),
        },
        energies,
        converged: result.1,
    })
}

/// Intermediate phase `I(x) = I1(x - a u(x))`; `a = 0` returns `i1` unchanged.
/// Samples falling outside the grid read as zero.
pub fn interpolate_phase(i1: &AttenuationVolume, field: &DeformationField, a: f64) -> Result<AttenuationVolume> {
    field.check_grid(i1)?;
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::InvalidParameter(format!("phase fraction {a} outside [0, 1]")));
    }
    if a == 0.0 {
        return Ok(i1.clone());
    }
    let dims = i1.dims();
    let g = Grid { dims };
    let sp = i1.spacing();
    let data = i1.data();
    let out: Vec<f32> = (0..g.len())
        .into_par_iter()
        .map(|i| {
            let c = g.coords(i);
            let u = field.displacement_mm[i].component_div(&sp) * a;
            trilinear(data, dims, c[0] as f64 - u.x, c[1] as f64 - u.y, c[2] as f64 - u.z) as f32
        })
        .collect();
    AttenuationVolume::new(dims, sp, i1.origin(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(n: usize, center: [f64; 3], sigma: f64) -> AttenuationVolume {
        let mut data = vec![0.0f32; n * n * n];
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    let d2 = (i as f64 - center[0]).powi(2) + (j as f64 - center[1]).powi(2) + (k as f64 - center[2]).powi(2);
                    data[i + n * (j + n * k)] = (0.02 * (-d2 / (2.0 * sigma * sigma)).exp()) as f32;
                }
            }
        }
        AttenuationVolume::new([n; 3], Vector3::repeat(1.0), Point3::origin(), data).unwrap()
    }

    #[test]
    fn identical_volumes_need_no_displacement() {
        let v = blob(16, [8.0; 3], 3.0);
        let r = register_volumes(&v, &v, &RegistrationParams::default()).unwrap();
        assert_eq!(r.energies, vec![0.0]);
        assert!(r.field.displacement_mm.iter().all(|d| *d == Vector3::zeros()));
    }

    #[test]
    fn zero_fraction_is_identity() {
        let v = blob(12, [5.0, 6.0, 7.0], 2.0);
        let f = DeformationField::uniform(&v, Vector3::new(1.3, -0.4, 2.0));
        let out = interpolate_phase(&v, &f, 0.0).unwrap();
        assert_eq!(out.data(), v.data());
    }

    #[test]
    fn field_round_trips_through_disk() {
        let v = blob(6, [3.0; 3], 1.0);
        let mut f = DeformationField::uniform(&v, Vector3::new(0.5, -1.25, 2.0));
        f.displacement_mm[7] = Vector3::new(-3.0, 0.125, 9.5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("field.raw");
        f.save(&path).unwrap();
        assert_eq!(DeformationField::load(&path).unwrap(), f);
    }

    #[test]
    fn smoothing_preserves_constant_fields() {
        let dims = [5, 4, 3];
        let f = vec![Vector3::new(1.0, -2.0, 0.5); 60];
        let s = smooth_field(&f, dims, 1.5);
        assert!(s.iter().all(|v| (v - f[0]).norm() < 1e-12));
    }
}
