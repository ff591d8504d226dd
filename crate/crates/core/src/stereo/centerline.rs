//! Binary mask to ordered 2D centerline: thinning, longest skeleton path,
//! B-spline smoothing and curvature-adaptive key points.

use std::collections::{BinaryHeap, VecDeque};

use nalgebra::{Point2, Point3, Vector2};
use serde::{Deserialize, Serialize};

use crate::bspline::{chord_parameters, fit_bspline, DEGREE};
use crate::error::{Error, Result};
use crate::image::Image2D;

const NEIGHBORS: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CenterlineParams {
    pub key_min_px: f64,
    pub key_max_px: f64,
    /// Key-point spacing is `gain / curvature` before clamping.
    pub curvature_gain: f64,
    /// Second-difference penalty weight on the 2D spline control points.
    pub smoothness: f64,
    /// Target knot span length of the 2D spline.
    pub span_px: f64,
    pub dense_step_px: f64,
    /// A side branch longer than this fraction of the main path means the
    /// skeleton has no dominant path.
    pub max_branch_fraction: f64,
}

impl Default for CenterlineParams {
    fn default() -> Self {
        CenterlineParams {
            key_min_px: 3.0,
            key_max_px: 25.0,
            curvature_gain: 2.0,
            smoothness: 1e-4,
            span_px: 5.0,
            dense_step_px: 0.5,
            max_branch_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub pos: Point2<f64>,
    /// Unit tangent in the direction of increasing arc length.
    pub tangent: Vector2<f64>,
    /// Unsigned curvature in 1/px.
    pub curvature: f64,
    pub arc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centerline2D {
    pub width: usize,
    pub height: usize,
    /// Curvature-adaptive key points, ordered along the curve.
    pub points: Vec<CurvePoint>,
    /// The smoothed curve sampled every `dense_step_px`.
    pub dense: Vec<CurvePoint>,
}

impl Centerline2D {
    pub fn length(&self) -> f64 {
        self.dense.last().map_or(0.0, |p| p.arc)
    }

    /// Smooth an ordered polyline (pixel coordinates) and place key points.
    pub fn from_polyline(points: &[Point2<f64>], width: usize, height: usize, p: &CenterlineParams) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InsufficientData("centerline has no points".into()));
        }
        let dense = smooth_dense(points, p)?;
        let key = key_points(&dense, p);
        Ok(Centerline2D {
            width,
            height,
            points: key,
            dense,
        })
    }

    /// Reversed copy (arc length measured from the other end).
    pub fn reversed(&self) -> Self {
        let total = self.length();
        let flip = |v: &Vec<CurvePoint>| {
            v.iter()
                .rev()
                .map(|c| CurvePoint {
                    tangent: -c.tangent,
                    arc: total - c.arc,
                    ..*c
                })
                .collect()
        };
        Centerline2D {
            width: self.width,
            height: self.height,
            points: flip(&self.points),
            dense: flip(&self.dense),
        }
    }
}

fn lift(p: &Point2<f64>) -> Point3<f64> {
    Point3::new(p.x, p.y, 0.0)
}

fn smooth_dense(points: &[Point2<f64>], p: &CenterlineParams) -> Result<Vec<CurvePoint>> {
    let lifted: Vec<Point3<f64>> = points.iter().map(lift).collect();
    let raw_len = crate::metrics::polyline_length(&lifted);
    if points.len() < 4 || raw_len == 0.0 {
        // Too short to smooth: use the points as given.
        let n = points.len();
        let dir = if n > 1 { (points[n - 1] - points[0]).try_normalize(0.0) } else { None };
        let t = dir.unwrap_or(Vector2::new(1.0, 0.0));
        let mut arc = 0.0;
        return Ok(points
            .iter()
            .enumerate()
            .map(|(i, q)| {
                if i > 0 {
                    arc += (q - points[i - 1]).norm();
                }
                CurvePoint {
                    pos: *q,
                    tangent: t,
                    curvature: 0.0,
                    arc,
                }
            })
            .collect());
    }
    let u = chord_parameters(&lifted);
    let m = ((raw_len / p.span_px).ceil() as usize + DEGREE).max(8).min(points.len());
    let curve = fit_bspline(&lifted, &u, m, p.smoothness)?;
    let n = ((raw_len / p.dense_step_px).ceil() as usize).max(2) + 1;
    let mut out: Vec<CurvePoint> = Vec::with_capacity(n);
    for i in 0..n {
        let s = i as f64 / (n - 1) as f64;
        let pos = curve.eval(s);
        let d1 = curve.derivative(s);
        let tangent = Vector2::new(d1.x, d1.y).try_normalize(0.0).unwrap_or(Vector2::new(1.0, 0.0));
        let arc = match out.last() {
            Some(prev) => prev.arc + (Point2::new(pos.x, pos.y) - prev.pos).norm(),
            None => 0.0,
        };
        out.push(CurvePoint {
            pos: Point2::new(pos.x, pos.y),
            tangent,
            curvature: curve.curvature(s),
            arc,
        });
    }
    Ok(out)
}

/// Walk the dense curve placing key points `clamp(gain / kappa, min, max)`
/// apart; the last dense point is always a key point.
fn key_points(dense: &[CurvePoint], p: &CenterlineParams) -> Vec<CurvePoint> {
    let spacing = |k: f64| {
        let s = if k > 0.0 { p.curvature_gain / k } else { f64::INFINITY };
        s.clamp(p.key_min_px, p.key_max_px)
    };
    let mut out = vec![dense[0]];
    let mut next = dense[0].arc + spacing(dense[0].curvature);
    for c in &dense[1..] {
        if c.arc >= next {
            out.push(*c);
            next = c.arc + spacing(c.curvature);
        }
    }
    let last = *dense.last().unwrap();
    let prev = out.last().unwrap().arc;
    if last.arc > prev {
        if last.arc - prev < 0.5 * p.key_min_px && out.len() > 1 {
            out.pop();
        }
        out.push(last);
    }
    out
}

/// Zhang-Suen thinning of a binary mask to an 8-connected one-pixel skeleton.
pub fn zhang_suen_thin(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut m = mask.to_vec();
    let at = |m: &[bool], x: isize, y: isize| -> bool {
        x >= 0 && y >= 0 && (x as usize) < width && (y as usize) < height && m[y as usize * width + x as usize]
    };
    loop {
        let mut changed = false;
        for pass in 0..2 {
            let mut remove = Vec::new();
            for y in 0..height as isize {
                for x in 0..width as isize {
                    if !at(&m, x, y) {
                        continue;
                    }
                    // P2..P9 clockwise from north.
                    let nb: [bool; 8] = [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)]
                        .map(|(dx, dy)| at(&m, x + dx, y + dy));
                    let b = nb.iter().filter(|v| **v).count();
                    let a = (0..8).filter(|&i| !nb[i] && nb[(i + 1) % 8]).count();
                    let (p2, p4, p6, p8) = (nb[0], nb[2], nb[4], nb[6]);
                    let cond = if pass == 0 {
                        !(p2 && p4 && p6) && !(p4 && p6 && p8)
                    } else {
                        !(p2 && p4 && p8) && !(p2 && p6 && p8)
                    };
                    if (2..=6).contains(&b) && a == 1 && cond {
                        remove.push(y as usize * width + x as usize);
                    }
                }
            }
            changed |= !remove.is_empty();
            for i in remove {
                m[i] = false;
            }
        }
        if !changed {
            return m;
        }
    }
}

fn neighbors(i: usize, width: usize, height: usize) -> impl Iterator<Item = (usize, f64)> {
    let (x, y) = ((i % width) as isize, (i / width) as isize);
    NEIGHBORS.iter().filter_map(move |&(dx, dy)| {
        let (nx, ny) = (x + dx, y + dy);
        (nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height)
            .then(|| (ny as usize * width + nx as usize, if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 }))
    })
}

/// Keep only the largest 8-connected component.
pub fn largest_component(mask: &[bool], width: usize, height: usize) -> Vec<bool> {
    let mut label = vec![usize::MAX; mask.len()];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || label[start] != usize::MAX {
            continue;
        }
        let mut comp = vec![start];
        label[start] = start;
        let mut q = VecDeque::from([start]);
        while let Some(i) = q.pop_front() {
            for (j, _) in neighbors(i, width, height) {
                if mask[j] && label[j] == usize::MAX {
                    label[j] = start;
                    comp.push(j);
                    q.push_back(j);
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    let mut out = vec![false; mask.len()];
    for i in best {
        out[i] = true;
    }
    out
}

#[derive(PartialEq)]
struct Node(f64, usize);
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Node {
    fn cmp(&self, o: &Self) -> std::cmp::Ordering {
        o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
    }
}

/// Geodesic distances and predecessors over skeleton pixels.
fn dijkstra(skel: &[bool], width: usize, height: usize, src: usize, blocked: Option<&[bool]>) -> (Vec<f64>, Vec<usize>) {
    let mut dist = vec![f64::INFINITY; skel.len()];
    let mut prev = vec![usize::MAX; skel.len()];
    let mut heap = BinaryHeap::new();
    dist[src] = 0.0;
    heap.push(Node(0.0, src));
    while let Some(Node(d, i)) = heap.pop() {
        if d > dist[i] {
            continue;
        }
        for (j, w) in neighbors(i, width, height) {
            if !skel[j] || blocked.is_some_and(|b| b[j]) {
                continue;
            }
            if d + w < dist[j] {
                dist[j] = d + w;
                prev[j] = i;
                heap.push(Node(d + w, j));
            }
        }
    }
    (dist, prev)
}

fn farthest(dist: &[f64]) -> (usize, f64) {
    dist.iter()
        .enumerate()
        .filter(|(_, d)| d.is_finite())
        .fold((usize::MAX, -1.0), |b, (i, &d)| if d > b.1 { (i, d) } else { b })
}

/// Longest geodesic path through a connected skeleton (double sweep), plus
/// the length of the longest branch hanging off it.
pub fn longest_path(skel: &[bool], width: usize, height: usize) -> Result<(Vec<usize>, f64, f64)> {
    let start = skel
        .iter()
        .position(|&v| v)
        .ok_or_else(|| Error::InsufficientData("empty skeleton".into()))?;
    let (d0, _) = dijkstra(skel, width, height, start, None);
    let (a, _) = farthest(&d0);
    let (da, prev) = dijkstra(skel, width, height, a, None);
    let (b, len) = farthest(&da);
    let mut path = vec![b];
    while *path.last().unwrap() != a {
        path.push(prev[*path.last().unwrap()]);
    }
    path.reverse();
    // Longest branch: geodesic reach into the skeleton from the path while
    // never re-entering it.
    let mut on_path = vec![false; skel.len()];
    path.iter().for_each(|&i| on_path[i] = true);
    let mut branch = 0.0f64;
    let mut seen = on_path.clone();
    for &p in &path {
        for (j, w) in neighbors(p, width, height) {
            if skel[j] && !seen[j] {
                let (dj, _) = dijkstra(skel, width, height, j, Some(&on_path));
                let (_, reach) = farthest(&dj);
                dj.iter().enumerate().filter(|(_, d)| d.is_finite()).for_each(|(k, _)| seen[k] = true);
                branch = branch.max(reach + w);
            }
        }
    }
    Ok((path, len.max(0.0), branch))
}

/// Ordered centerline of the dominant curve in a binary mask (`> 0.5`).
pub fn extract_centerline(mask: &Image2D, p: &CenterlineParams) -> Result<Centerline2D> {
    let (w, h) = (mask.width(), mask.height());
    let bits: Vec<bool> = mask.pixels().iter().map(|&v| v > 0.5).collect();
    if !bits.iter().any(|&b| b) {
        return Err(Error::InsufficientData("vessel mask is empty".into()));
    }
    let comp = largest_component(&bits, w, h);
    let skel = zhang_suen_thin(&comp, w, h);
    let (path, len, branch) = longest_path(&skel, w, h)?;
    if len > 0.0 && branch > p.max_branch_fraction * len {
        return Err(Error::Degenerate(format!(
            "branching skeleton: side branch {branch:.1} px vs main path {len:.1} px"
        )));
    }
    let pts: Vec<Point2<f64>> = path
        .iter()
        .map(|&i| Point2::new((i % w) as f64 + 0.5, (i / w) as f64 + 0.5))
        .collect();
    Centerline2D::from_polyline(&pts, w, h, p)
}
