//! Triangle and tetrahedral meshes.
//!
//! Surface meshes are read and written as an OBJ subset (`v` and `f` lines,
//! 1-based indices). Tet meshes use a plain text list of `v x y z` and
//! `t i j k l` lines with 0-based indices.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SurfaceMesh {
    pub vertices: Vec<Point3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

/// Edge-manifold and orientation summary of a surface mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    /// Undirected edges used by exactly one triangle.
    pub boundary_edges: usize,
    /// Undirected edges used by more than two triangles.
    pub non_manifold_edges: usize,
    /// Interior edges traversed in the same direction by both triangles.
    pub inconsistent_edges: usize,
}

impl Topology {
    pub fn is_closed(&self) -> bool {
        self.boundary_edges == 0 && self.non_manifold_edges == 0
    }

    pub fn is_consistently_oriented(&self) -> bool {
        self.inconsistent_edges == 0
    }
}

impl SurfaceMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for t in &triangles {
            for &i in t {
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, len: n });
                }
            }
        }
        Ok(SurfaceMesh { vertices, triangles })
    }

    pub fn topology(&self) -> Topology {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for t in &self.triangles {
            for e in 0..3 {
                *directed.entry((t[e], t[(e + 1) % 3])).or_default() += 1;
            }
        }
        let mut undirected: HashMap<(usize, usize), usize> = HashMap::new();
        for (&(a, b), &c) in &directed {
            *undirected.entry((a.min(b), a.max(b))).or_default() += c;
        }
        let mut topo = Topology {
            boundary_edges: 0,
            non_manifold_edges: 0,
            inconsistent_edges: 0,
        };
        for (&(a, b), &c) in &undirected {
            match c {
                1 => topo.boundary_edges += 1,
                2 => {
                    if directed.get(&(a, b)).copied().unwrap_or(0) != 1 {
                        topo.inconsistent_edges += 1;
                    }
                }
                _ => topo.non_manifold_edges += 1,
            }
        }
        topo
    }

    /// Error unless every edge is shared by exactly two triangles.
    pub fn require_closed(&self) -> Result<Topology> {
        let topo = self.topology();
        if topo.non_manifold_edges > 0 {
            return Err(Error::NotClosed(format!("{} non-manifold edges", topo.non_manifold_edges)));
        }
        if topo.boundary_edges > 0 {
            return Err(Error::NotClosed(format!("{} boundary edges", topo.boundary_edges)));
        }
        Ok(topo)
    }

    pub fn translated(&self, d: &Vector3<f64>) -> Self {
        SurfaceMesh {
            vertices: self.vertices.iter().map(|p| p + d).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn transformed(&self, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> Self {
        SurfaceMesh {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn flipped(&self) -> Self {
        SurfaceMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
        }
    }

    /// Signed enclosed volume in mm^3 (divergence theorem), without any
    /// topology checks.
    pub fn signed_volume(&self) -> f64 {
        // Reference point at the vertex centroid keeps the sum well conditioned
        // far from the origin.
        let c = self.centroid();
        self.triangles
            .iter()
            .map(|t| {
                let a = self.vertices[t[0]] - c;
                let b = self.vertices[t[1]] - c;
                let d = self.vertices[t[2]] - c;
                a.dot(&b.cross(&d))
            })
            .sum::<f64>()
            / 6.0
    }

    pub fn centroid(&self) -> Point3<f64> {
        if self.vertices.is_empty() {
            return Point3::origin();
        }
        let sum: Vector3<f64> = self.vertices.iter().map(|p| p.coords).sum();
        Point3::from(sum / self.vertices.len() as f64)
    }
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<SurfaceMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_obj(&text)
}

pub fn parse_obj(text: &str) -> Result<SurfaceMesh> {
    let mut vertices = Vec::new();
    let mut faces: Vec<Vec<i64>> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
                if c.len() != 3 {
                    return Err(Error::Format(format!("line {}: vertex needs 3 coordinates", lineno + 1)));
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("f") => {
                let idx: Vec<i64> = it
                    .map(|tok| tok.split('/').next().unwrap_or("").parse::<i64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
                if idx.len() < 3 {
                    return Err(Error::Format(format!("line {}: face needs 3 indices", lineno + 1)));
                }
                faces.push(idx);
            }
            _ => {}
        }
    }
    let n = vertices.len();
    let mut triangles = Vec::new();
    for f in faces {
        let resolved: Vec<usize> = f
            .iter()
            .map(|&i| {
                let r = if i > 0 { i - 1 } else { n as i64 + i };
                if r < 0 || r >= n as i64 {
                    Err(Error::IndexOutOfRange {
                        index: i.unsigned_abs() as usize,
                        len: n,
                    })
                } else {
                    Ok(r as usize)
                }
            })
            .collect::<Result<_>>()?;
        // fan-triangulate polygons
        for k in 1..resolved.len() - 1 {
            triangles.push([resolved[0], resolved[k], resolved[k + 1]]);
        }
    }
    SurfaceMesh::new(vertices, triangles)
}

pub fn save_mesh(mesh: &SurfaceMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.triangles {
        let _ = writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TetMesh {
    pub vertices: Vec<Point3<f64>>,
    pub tets: Vec<[usize; 4]>,
}

/// Relative tolerance (against the cubed mean edge length) for degenerate tets.
const DEGENERATE_TET_TOL: f64 = 1e-10;

impl TetMesh {
    pub fn new(vertices: Vec<Point3<f64>>, tets: Vec<[usize; 4]>) -> Result<Self> {
        let n = vertices.len();
        for t in &tets {
            for &i in t {
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, len: n });
                }
            }
        }
        let mesh = TetMesh { vertices, tets };
        for (k, t) in mesh.tets.iter().enumerate() {
            let vol = mesh.tet_volume(k).abs();
            let mut edge = 0.0;
            for a in 0..4 {
                for b in a + 1..4 {
                    edge += (mesh.vertices[t[a]] - mesh.vertices[t[b]]).norm();
                }
            }
            let scale = (edge / 6.0).powi(3);
            if vol <= DEGENERATE_TET_TOL * scale {
                return Err(Error::Degenerate(format!("tet {k} has (near) zero volume")));
            }
        }
        Ok(mesh)
    }

    /// Signed volume of tet `k`.
    pub fn tet_volume(&self, k: usize) -> f64 {
        let t = self.tets[k];
        let a = self.vertices[t[0]];
        let b = self.vertices[t[1]] - a;
        let c = self.vertices[t[2]] - a;
        let d = self.vertices[t[3]] - a;
        b.dot(&c.cross(&d)) / 6.0
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|k| self.tet_volume(k).abs()).sum()
    }

    /// Vertex adjacency through tet edges.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for t in &self.tets {
            for a in 0..4 {
                for b in 0..4 {
                    if a != b {
                        adj[t[a]].push(t[b]);
                    }
                }
            }
        }
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
        }
        adj
    }

    /// Connected component label per vertex, plus the component count.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let adj = self.neighbors();
        let mut label = vec![usize::MAX; self.vertices.len()];
        let mut count = 0;
        for start in 0..self.vertices.len() {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = count;
            while let Some(v) = stack.pop() {
                for &w in &adj[v] {
                    if label[w] == usize::MAX {
                        label[w] = count;
                        stack.push(w);
                    }
                }
            }
            count += 1;
        }
        (label, count)
    }
}

pub fn load_tet_mesh(path: impl AsRef<Path>) -> Result<TetMesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_tet(&text)
}

pub fn parse_tet(text: &str) -> Result<TetMesh> {
    let mut vertices = Vec::new();
    let mut tets = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let bad = |e: String| Error::Format(format!("line {}: {e}", lineno + 1));
        match it.next() {
            Some("v") => {
                let c: Vec<f64> = it
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(format!("{e}")))?;
                if c.len() != 3 {
                    return Err(bad("vertex needs 3 coordinates".into()));
                }
                vertices.push(Point3::new(c[0], c[1], c[2]));
            }
            Some("t") => {
                let c: Vec<usize> = it
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(format!("{e}")))?;
                if c.len() != 4 {
                    return Err(bad("tet needs 4 indices".into()));
                }
                tets.push([c[0], c[1], c[2], c[3]]);
            }
            Some(tok) if tok.starts_with('#') => {}
            None => {}
            Some(other) => return Err(bad(format!("unknown record {other:?}"))),
        }
    }
    TetMesh::new(vertices, tets)
}

pub fn save_tet_mesh(mesh: &TetMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in &mesh.tets {
        let _ = writeln!(s, "t {} {} {} {}", t[0], t[1], t[2], t[3]);
    }
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Closed, outward-oriented icosphere.
pub fn icosphere(radius: f64, subdivisions: usize) -> SurfaceMesh {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vector3<f64>> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vector3::new(x, y, z).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| -> usize {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let ab = mid(f[0], f[1], &mut verts);
            let bc = mid(f[1], f[2], &mut verts);
            let ca = mid(f[2], f[0], &mut verts);
            next.push([f[0], ab, ca]);
            next.push([f[1], bc, ab]);
            next.push([f[2], ca, bc]);
            next.push([ab, bc, ca]);
        }
        faces = next;
    }
    SurfaceMesh {
        vertices: verts.into_iter().map(|v| Point3::from(v * radius)).collect(),
        triangles: faces,
    }
}

/// Tetrahedralize the cells of a regular grid whose centers satisfy `inside`.
///
/// Every cube is split into five tets. The split is chosen from the global
/// parity of the cube corners, so neighbouring cubes share face diagonals and
/// the result is conforming. Reflecting the grid across a plane with an even
/// number of cells on each side maps the tetrahedralization onto itself.
pub fn tetrahedralize_grid(
    cells: [usize; 3],
    spacing: f64,
    origin: Point3<f64>,
    inside: impl Fn(&Point3<f64>) -> bool,
) -> TetMesh {
    let (nx, ny, nz) = (cells[0], cells[1], cells[2]);
    let corner_id = |i: usize, j: usize, k: usize| i + (nx + 1) * (j + (ny + 1) * k);
    let mut remap: HashMap<usize, usize> = HashMap::new();
    let mut vertices = Vec::new();
    let mut tets = Vec::new();
    let mut vid = |i: usize, j: usize, k: usize, vertices: &mut Vec<Point3<f64>>| -> usize {
        *remap.entry(corner_id(i, j, k)).or_insert_with(|| {
            vertices.push(origin + Vector3::new(i as f64, j as f64, k as f64) * spacing);
            vertices.len() - 1
        })
    };
    const CORNERS: [(usize, usize, usize); 8] = [
        (0, 0, 0),
        (1, 0, 0),
        (0, 1, 0),
        (1, 1, 0),
        (0, 0, 1),
        (1, 0, 1),
        (0, 1, 1),
        (1, 1, 1),
    ];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let center = origin + Vector3::new(i as f64 + 0.5, j as f64 + 0.5, k as f64 + 0.5) * spacing;
                if !inside(&center) {
                    continue;
                }
                let ids: Vec<usize> = CORNERS
                    .iter()
                    .map(|&(a, b, c)| vid(i + a, j + b, k + c, &mut vertices))
                    .collect();
                let even: Vec<usize> = (0..8)
                    .filter(|&c| {
                        let (a, b, d) = CORNERS[c];
                        (i + a + j + b + k + d) % 2 == 0
                    })
                    .collect();
                let odd: Vec<usize> = (0..8).filter(|c| !even.contains(c)).collect();
                tets.push([ids[even[0]], ids[even[1]], ids[even[2]], ids[even[3]]]);
                for &o in &odd {
                    let (a, b, c) = CORNERS[o];
                    let nbrs: Vec<usize> = even
                        .iter()
                        .copied()
                        .filter(|&e| {
                            let (x, y, z) = CORNERS[e];
                            a.abs_diff(x) + b.abs_diff(y) + c.abs_diff(z) == 1
                        })
                        .collect();
                    tets.push([ids[o], ids[nbrs[0]], ids[nbrs[1]], ids[nbrs[2]]]);
                }
            }
        }
    }
    // orient every tet positively
    for t in &mut tets {
        let a = vertices[t[0]];
        let vol = (vertices[t[1]] - a).dot(&(vertices[t[2]] - a).cross(&(vertices[t[3]] - a)));
        if vol < 0.0 {
            t.swap(2, 3);
        }
    }
    TetMesh { vertices, tets }
}
