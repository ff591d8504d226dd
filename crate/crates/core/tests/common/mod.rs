#![allow(dead_code)]

use cathlab::dynamics::HandleSet;
use cathlab::volume::mesh::tetrahedralize_grid;
use cathlab::volume::TetMesh;
use nalgebra::Point3;

fn segment_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let d = b - a;
    let t = ((p - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
    (p - (a + d * t)).norm()
}

/// Solid box of unit cells, `cells[0]` long in x.
pub fn bar(cells: [usize; 3]) -> TetMesh {
    tetrahedralize_grid(cells, 1.0, Point3::origin(), |_| true)
}

/// Handles on the two end faces of a bar of length `len`.
pub fn bar_end_handles(mesh: &TetMesh, len: f64) -> HandleSet {
    let left = (0..mesh.vertices.len()).filter(|&v| mesh.vertices[v].x < 0.5).collect();
    let right = (0..mesh.vertices.len()).filter(|&v| mesh.vertices[v].x > len - 0.5).collect();
    HandleSet::new(vec![left, right])
}

/// Cells whose centres lie within `radius` of any segment; the grid is
/// symmetric about the planes y = 0 and z = 0.
pub fn capsules(segments: &[[Point3<f64>; 2]], radius: f64, x_range: (f64, f64), half_yz: (usize, usize)) -> TetMesh {
    let nx = (x_range.1 - x_range.0).ceil() as usize;
    let origin = Point3::new(x_range.0, -(half_yz.0 as f64), -(half_yz.1 as f64));
    tetrahedralize_grid([nx, 2 * half_yz.0, 2 * half_yz.1], 1.0, origin, |c| {
        segments.iter().any(|s| segment_distance(c, &s[0], &s[1]) <= radius)
    })
}

/// Solid tube of radius 4 along x in [0, 30].
pub fn tube() -> TetMesh {
    capsules(&[[Point3::new(0.0, 0.0, 0.0), Point3::new(30.0, 0.0, 0.0)]], 4.0, (-1.0, 31.0), (5, 5))
}

/// Trunk along x in [0, 18] splitting into two mirror branches.
pub fn branched_tube() -> TetMesh {
    let j = Point3::new(18.0, 0.0, 0.0);
    capsules(
        &[
            [Point3::new(0.0, 0.0, 0.0), j],
            [j, Point3::new(32.0, 11.0, 0.0)],
            [j, Point3::new(32.0, -11.0, 0.0)],
        ],
        3.0,
        (-1.0, 36.0),
        (15, 4),
    )
}

/// Vertices within `r` of each segment, nearest segment wins.
pub fn bind(mesh: &TetMesh, segs: &[[Point3<f64>; 2]], r: f64) -> HandleSet {
    HandleSet::bind_segments(mesh, segs, r).unwrap()
}

pub fn tube_handles(mesh: &TetMesh) -> HandleSet {
    let p = |x: f64| Point3::new(x, 0.0, 0.0);
    bind(mesh, &[[p(0.0), p(3.0)], [p(13.5), p(16.5)], [p(27.0), p(30.0)]], 1.5)
}

pub fn branched_handles(mesh: &TetMesh) -> HandleSet {
    bind(
        mesh,
        &[
            [Point3::new(0.0, 0.0, 0.0), Point3::new(3.0, 0.0, 0.0)],
            [Point3::new(29.0, 9.0, 0.0), Point3::new(32.0, 11.0, 0.0)],
            [Point3::new(29.0, -9.0, 0.0), Point3::new(32.0, -11.0, 0.0)],
        ],
        1.5,
    )
}

/// Index of the vertex at the mirror image of `p` under `f`, if any.
pub fn mirror_map(mesh: &TetMesh, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> Vec<Option<usize>> {
    use std::collections::HashMap;
    let key = |p: &Point3<f64>| ((p.x * 4.0).round() as i64, (p.y * 4.0).round() as i64, (p.z * 4.0).round() as i64);
    let index: HashMap<_, _> = mesh.vertices.iter().enumerate().map(|(i, p)| (key(p), i)).collect();
    mesh.vertices.iter().map(|p| index.get(&key(&f(p))).copied()).collect()
}
