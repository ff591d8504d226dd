//! Ray-cast digitally reconstructed radiographs.
//!
//! Each pixel is the exact line integral of attenuation along the segment
//! from the X-ray source to the pixel center on the detector, computed by
//! voxel-exact grid traversal. Intensities are raw line integrals.

pub mod octree;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::CArmPose;
use crate::image::Image2D;
use crate::volume::AttenuationVolume;

pub use octree::{build_octree, EmptySpaceOctree};

/// Detector tile edge length used as the parallel work unit.
pub const TILE: usize = 32;

/// Sum of attenuation times path length over the voxels crossed by the
/// segment `source -> target`. Returns 0 when the segment misses the volume.
pub fn cast_ray_integral(vol: &AttenuationVolume, source: &Point3<f64>, target: &Point3<f64>) -> f64 {
    integrate(vol, None, source, target)
}

/// As [`cast_ray_integral`], skipping octree nodes that hold no attenuation.
pub fn cast_ray_integral_accel(
    vol: &AttenuationVolume,
    octree: &EmptySpaceOctree,
    source: &Point3<f64>,
    target: &Point3<f64>,
) -> f64 {
    integrate(vol, Some(octree), source, target)
}

/// Parametric interval where `g0 + t * dg` lies inside `[0, n]` per axis,
/// intersected with `[0, 1]`.
fn clip_to_box(g0: &Vector3<f64>, dg: &Vector3<f64>, lo: [f64; 3], hi: [f64; 3]) -> Option<(f64, f64)> {
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for a in 0..3 {
        if dg[a] == 0.0 {
            if g0[a] < lo[a] || g0[a] > hi[a] {
                return None;
            }
        } else {
            let ta = (lo[a] - g0[a]) / dg[a];
            let tb = (hi[a] - g0[a]) / dg[a];
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
    }
    (t0 < t1).then_some((t0, t1))
}

fn integrate(
    vol: &AttenuationVolume,
    octree: Option<&EmptySpaceOctree>,
    source: &Point3<f64>,
    target: &Point3<f64>,
) -> f64 {
    let dims = vol.dims();
    let n = [dims[0] as f64, dims[1] as f64, dims[2] as f64];
    let (corner, _) = vol.bounds();
    let sp = vol.spacing();
    // Grid coordinates: voxel i spans [i, i + 1).
    let g0 = (source - corner).component_div(&sp);
    let dg = (target - source).component_div(&sp);
    let length = (target - source).norm();
    if length == 0.0 {
        return 0.0;
    }
    let Some((t_in, t_out)) = clip_to_box(&g0, &dg, [0.0; 3], n) else {
        return 0.0;
    };
    let data = vol.data();
    let (sx, sxy) = (dims[0], dims[0] * dims[1]);
    let nudge = 1e-9 * (t_out - t_in);

    let mut acc = 0.0f64;
    let mut t = t_in;
    'outer: while t < t_out {
        // (Re)start the traversal at t. The voxel is located slightly past t
        // so that a start exactly on a face picks the voxel being entered.
        let probe = t + nudge.min(0.5 * (t_out - t));
        let mut idx = [0i64; 3];
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            let p = g0[a] + dg[a] * probe;
            idx[a] = (p.floor() as i64).clamp(0, dims[a] as i64 - 1);
            if dg[a] > 0.0 {
                step[a] = 1;
                t_max[a] = (idx[a] as f64 + 1.0 - g0[a]) / dg[a];
                t_delta[a] = 1.0 / dg[a];
            } else if dg[a] < 0.0 {
                step[a] = -1;
                t_max[a] = (idx[a] as f64 - g0[a]) / dg[a];
                t_delta[a] = -1.0 / dg[a];
            }
        }
        loop {
            if let Some(tree) = octree {
                let v = [idx[0] as usize, idx[1] as usize, idx[2] as usize];
                if let Some(level) = tree.skippable_level(v) {
                    let size = tree.node_size(level);
                    let mut t_exit = f64::INFINITY;
                    for a in 0..3 {
                        if dg[a] != 0.0 {
                            let b = (v[a] / size * size) as f64;
                            let face = if dg[a] > 0.0 { (b + size as f64).min(n[a]) } else { b };
                            t_exit = t_exit.min((face - g0[a]) / dg[a]);
                        }
                    }
                    if t_exit > t {
                        t = t_exit;
                        continue 'outer;
                    }
                }
            }
            let axis = if t_max[0] < t_max[1] {
                if t_max[0] < t_max[2] {
                    0
                } else {
                    2
                }
            } else if t_max[1] < t_max[2] {
                1
            } else {
                2
            };
            let t_next = t_max[axis].min(t_out);
            let rho = data[idx[0] as usize + sx * idx[1] as usize + sxy * idx[2] as usize] as f64;
            acc += rho * (t_next - t);
            t = t_next;
            if t >= t_out {
                break 'outer;
            }
            idx[axis] += step[axis];
            if idx[axis] < 0 || idx[axis] >= dims[axis] as i64 {
                break 'outer;
            }
            t_max[axis] += t_delta[axis];
        }
    }
    acc * length
}

/// Render the full detector for `pose`. With `accel`, empty octree nodes are
/// skipped; the octree must have been built from `vol`.
pub fn render_drr(vol: &AttenuationVolume, pose: &CArmPose, accel: Option<&EmptySpaceOctree>) -> Result<Image2D> {
    pose.validate()?;
    if let Some(tree) = accel {
        if tree.volume_dims() != vol.dims() {
            return Err(Error::DimensionMismatch(format!(
                "octree built for {:?}, volume is {:?}",
                tree.volume_dims(),
                vol.dims()
            )));
        }
    }
    let (w, h) = (pose.n_u, pose.n_v);
    let source = pose.source_position();
    let tiles_x = w.div_ceil(TILE);
    let tiles_y = h.div_ceil(TILE);
    let tiles: Vec<(usize, Vec<f32>)> = (0..tiles_x * tiles_y)
        .into_par_iter()
        .map(|tile| {
            let (tx, ty) = (tile % tiles_x, tile / tiles_x);
            let (x0, y0) = (tx * TILE, ty * TILE);
            let (x1, y1) = ((x0 + TILE).min(w), (y0 + TILE).min(h));
            let mut buf = Vec::with_capacity((x1 - x0) * (y1 - y0));
            for y in y0..y1 {
                for x in x0..x1 {
                    let target = pose.detector_point(x as f64 + 0.5, y as f64 + 0.5);
                    buf.push(integrate(vol, accel, &source, &target) as f32);
                }
            }
            (tile, buf)
        })
        .collect();
    let mut pixels = vec![0.0f32; w * h];
    for (tile, buf) in tiles {
        let (tx, ty) = (tile % tiles_x, tile / tiles_x);
        let (x0, y0) = (tx * TILE, ty * TILE);
        let x1 = (x0 + TILE).min(w);
        let tw = x1 - x0;
        for (r, row) in buf.chunks(tw).enumerate() {
            let start = (y0 + r) * w + x0;
            pixels[start..start + tw].copy_from_slice(row);
        }
    }
    Image2D::new(w, h, pixels)
}
