//! Bounded biharmonic skinning weights on tetrahedral meshes, rigid handle
//! transforms and linear blend skinning.

use nalgebra::{Matrix3, Point3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::sparse::{EnvelopeCholesky, SparseSym};
use crate::error::{Error, Result};
use crate::volume::TetMesh;

/// `x -> R x + t` in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        RigidTransform::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(d: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: UnitQuaternion::identity(),
            translation: d,
        }
    }

    /// Rotation by `angle` about the axis through `center`.
    pub fn rotation_about(center: &Point3<f64>, axis: &Vector3<f64>, angle: f64) -> Result<Self> {
        let axis = nalgebra::Unit::try_new(*axis, 1e-12)
            .ok_or_else(|| Error::InvalidParameter("rotation axis must be nonzero".into()))?;
        let rotation = UnitQuaternion::from_axis_angle(&axis, angle);
        Ok(RigidTransform {
            rotation,
            translation: center.coords - rotation * center.coords,
        })
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    pub fn then(&self, next: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: next.rotation * self.rotation,
            translation: next.rotation * self.translation + next.translation,
        }
    }
}

/// Per-handle transforms for one pose.
pub type HandlePose = Vec<RigidTransform>;

/// Mesh vertices bound rigidly to each handle, plus the keyposes of the cycle.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct HandleSet {
    pub vertices: Vec<Vec<usize>>,
    #[serde(default)]
    pub keyposes: Vec<HandlePose>,
}

impl HandleSet {
    pub fn new(vertices: Vec<Vec<usize>>) -> Self {
        HandleSet {
            vertices,
            keyposes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Bind every vertex within `radius` of a segment to its nearest segment.
    pub fn bind_segments(mesh: &TetMesh, segments: &[[Point3<f64>; 2]], radius: f64) -> Result<Self> {
        let mut vertices = vec![Vec::new(); segments.len()];
        for (v, p) in mesh.vertices.iter().enumerate() {
            let best = segments
                .iter()
                .enumerate()
                .map(|(b, s)| (b, segment_distance(p, s)))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((b, d)) = best {
                if d <= radius {
                    vertices[b].push(v);
                }
            }
        }
        let h = HandleSet::new(vertices);
        h.validate(mesh.vertices.len())?;
        Ok(h)
    }

    /// Handle-set invariants: nonempty, disjoint, in range; keyposes sized.
    pub fn validate(&self, n_vertices: usize) -> Result<()> {
        if self.vertices.is_empty() {
            return Err(Error::InvalidParameter("at least one handle is required".into()));
        }
        let mut owner = vec![usize::MAX; n_vertices];
        for (b, vs) in self.vertices.iter().enumerate() {
            if vs.is_empty() {
                return Err(Error::InvalidParameter(format!("handle {b} binds no vertices")));
            }
            for &v in vs {
                if v >= n_vertices {
                    return Err(Error::IndexOutOfRange {
                        index: v,
                        len: n_vertices,
                    });
                }
                if owner[v] != usize::MAX && owner[v] != b {
                    return Err(Error::InvalidParameter(format!("vertex {v} bound to handles {} and {b}", owner[v])));
                }
                owner[v] = b;
            }
        }
        for (k, pose) in self.keyposes.iter().enumerate() {
            if pose.len() != self.vertices.len() {
                return Err(Error::DimensionMismatch(format!(
                    "keypose {k} has {} transforms for {} handles",
                    pose.len(),
                    self.vertices.len()
                )));
            }
            if pose.iter().any(|t| (t.rotation.norm() - 1.0).abs() > 1e-6 || !t.translation.iter().all(|v| v.is_finite())) {
                return Err(Error::InvalidParameter(format!("keypose {k} has an invalid transform")));
            }
        }
        Ok(())
    }

    /// Pose at a continuous keypose position `s` in `[0, keyposes - 1]`.
    pub fn pose_at(&self, s: f64) -> Result<HandlePose> {
        let n = self.keyposes.len();
        if n == 0 {
            return Err(Error::InsufficientData("handle set has no keyposes".into()));
        }
        let s = s.clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 1);
        if i + 1 == n {
            return Ok(self.keyposes[i].clone());
        }
        interpolate_pose(&self.keyposes[i], &self.keyposes[i + 1], s - i as f64)
    }
}

fn segment_distance(p: &Point3<f64>, s: &[Point3<f64>; 2]) -> f64 {
    let d = s[1] - s[0];
    let l2 = d.norm_squared();
    let t = if l2 > 0.0 { ((p - s[0]).dot(&d) / l2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (s[0] + d * t)).norm()
}

/// `t = 0` and `t = 1` return the endpoints exactly; translations blend
/// linearly, rotations by slerp.
pub fn interpolate_pose(p1: &[RigidTransform], p2: &[RigidTransform], t: f64) -> Result<HandlePose> {
    if p1.len() != p2.len() {
        return Err(Error::DimensionMismatch(format!("poses have {} and {} handles", p1.len(), p2.len())));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("interpolation parameter {t} outside [0, 1]")));
    }
    if t == 0.0 {
        return Ok(p1.to_vec());
    }
    if t == 1.0 {
        return Ok(p2.to_vec());
    }
    Ok(p1
        .iter()
        .zip(p2)
        .map(|(a, b)| RigidTransform {
            rotation: a.rotation.slerp(&b.rotation, t),
            translation: a.translation * (1.0 - t) + b.translation * t,
        })
        .collect())
}

/// Row-major `vertex x handle` weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkinningWeights {
    pub n_handles: usize,
    pub values: Vec<f64>,
}

impl SkinningWeights {
    pub fn n_vertices(&self) -> usize {
        self.values.len().checked_div(self.n_handles).unwrap_or(0)
    }

    pub fn weight(&self, v: usize, b: usize) -> f64 {
        self.values[v * self.n_handles + b]
    }

    pub fn row(&self, v: usize) -> &[f64] {
        &self.values[v * self.n_handles..(v + 1) * self.n_handles]
    }

    /// Weights of handle `b` over all vertices.
    pub fn column(&self, b: usize) -> Vec<f64> {
        (0..self.n_vertices()).map(|v| self.weight(v, b)).collect()
    }
}

/// Discrete biharmonic operator `K M^-1 K`: `K` is the P1 finite-element
/// stiffness matrix (the cotangent Laplacian of the tet mesh) and `M` the
/// lumped mass.
pub fn biharmonic_operator(mesh: &TetMesh) -> Result<SparseSym> {
    let n = mesh.vertices.len();
    let mut k = SparseSym::new(n);
    let mut mass = vec![0.0; n];
    for t in &mesh.tets {
        let p: Vec<Point3<f64>> = t.iter().map(|&i| mesh.vertices[i]).collect();
        let d = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
        let vol = d.determinant().abs() / 6.0;
        let inv = d
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("degenerate tetrahedron in skinning mesh".into()))?;
        // Barycentric gradients: rows of D^-1 for vertices 1..3.
        let mut g = [Vector3::zeros(); 4];
        for r in 0..3 {
            g[r + 1] = inv.row(r).transpose();
        }
        g[0] = -(g[1] + g[2] + g[3]);
        for a in 0..4 {
            mass[t[a]] += vol / 4.0;
            for b in 0..4 {
                k.add(t[a], t[b], vol * g[a].dot(&g[b]));
            }
        }
    }
    if mass.iter().any(|&m| m <= 0.0) {
        return Err(Error::IllPosed("mesh has vertices that belong to no tetrahedron".into()));
    }
    let inv_mass: Vec<f64> = mass.iter().map(|m| 1.0 / m).collect();
    Ok(k.sandwich(&inv_mass))
}

/// Total biharmonic energy `sum_b w_b^T Q w_b`.
pub fn skinning_energy(q: &SparseSym, w: &SkinningWeights) -> f64 {
    (0..w.n_handles).map(|b| q.quad_form(&w.column(b))).sum()
}

const MAX_ACTIVE_SET_ROUNDS: usize = 100;

/// Bounded biharmonic weights: per handle, minimize `w^T Q w` subject to
/// `0 <= w <= 1`, `w = 1` on the handle's vertices and `0` on other handles,
/// with an active-set loop; rows are renormalized to sum to one afterwards.
pub fn compute_skinning_weights(mesh: &TetMesh, handles: &HandleSet) -> Result<SkinningWeights> {
    let n = mesh.vertices.len();
    handles.validate(n)?;
    let (label, count) = mesh.components();
    let mut anchored = vec![false; count];
    for vs in &handles.vertices {
        for &v in vs {
            anchored[label[v]] = true;
        }
    }
    if let Some(c) = anchored.iter().position(|a| !a) {
        return Err(Error::IllPosed(format!("mesh component {c} contains no handle vertex")));
    }
    let q = biharmonic_operator(mesh)?;
    let nh = handles.len();
    let mut owner = vec![usize::MAX; n];
    for (b, vs) in handles.vertices.iter().enumerate() {
        for &v in vs {
            owner[v] = b;
        }
    }
    let diag_scale = (0..n).map(|i| q.get(i, i).abs()).fold(0.0, f64::max);
    let tol = 1e-12 * diag_scale.max(1e-300);

    let mut values = vec![0.0; n * nh];
    for b in 0..nh {
        let w = solve_bounded(&q, &owner, b, tol)?;
        for v in 0..n {
            values[v * nh + b] = w[v];
        }
    }
    for v in 0..n {
        let row = &mut values[v * nh..(v + 1) * nh];
        if owner[v] != usize::MAX {
            row.iter_mut().enumerate().for_each(|(b, x)| *x = f64::from(u8::from(b == owner[v])));
            continue;
        }
        row.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
        let s: f64 = row.iter().sum();
        if !(s > 0.0) {
            return Err(Error::Numerical(format!("vertex {v} received zero total weight")));
        }
        row.iter_mut().for_each(|x| *x /= s);
    }
    Ok(SkinningWeights { n_handles: nh, values })
}

#[derive(Clone, Copy, PartialEq)]
enum State {
    Handle,
    Free,
    Lower,
    Upper,
}

fn solve_bounded(q: &SparseSym, owner: &[usize], b: usize, tol: f64) -> Result<Vec<f64>> {
    let n = owner.len();
    let mut state: Vec<State> = owner.iter().map(|&o| if o == usize::MAX { State::Free } else { State::Handle }).collect();
    let fixed_value = |v: usize, s: State| match s {
        State::Handle => f64::from(u8::from(owner[v] == b)),
        State::Upper => 1.0,
        _ => 0.0,
    };
    let mut w = vec![0.0; n];
    for round in 0..MAX_ACTIVE_SET_ROUNDS {
        let free: Vec<usize> = (0..n).filter(|&v| state[v] == State::Free).collect();
        for v in 0..n {
            if state[v] != State::Free {
                w[v] = fixed_value(v, state[v]);
            }
        }
        if !free.is_empty() {
            let mut rhs = vec![0.0; n];
            for &i in &free {
                rhs[i] = -q.row(i).filter(|&(j, _)| state[j] != State::Free).map(|(j, a)| a * w[j]).sum::<f64>();
            }
            let chol = EnvelopeCholesky::factor(q, &free)?;
            chol.solve_in_place(&mut rhs);
            for &i in &free {
                w[i] = rhs[i];
            }
        }
        let mut changed = false;
        for &i in &free {
            if w[i] < -1e-12 {
                state[i] = State::Lower;
                changed = true;
            } else if w[i] > 1.0 + 1e-12 {
                state[i] = State::Upper;
                changed = true;
            }
        }
        if changed {
            continue;
        }
        // Release bound constraints whose multipliers have the wrong sign.
        let grad = q.mul_vec(&w);
        for v in 0..n {
            match state[v] {
                State::Lower if grad[v] < -tol => {
                    state[v] = State::Free;
                    changed = true;
                }
                State::Upper if grad[v] > tol => {
                    state[v] = State::Free;
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            return Ok(w);
        }
        if round + 1 == MAX_ACTIVE_SET_ROUNDS {
            break;
        }
    }
    // Out of rounds: the last iterate is feasible up to clamping.
    Ok(w)
}

/// Linear blend skinning: `v' = sum_b w_b(v) T_b(v)`.
pub fn deform_mesh(mesh: &TetMesh, weights: &SkinningWeights, pose: &[RigidTransform]) -> Result<TetMesh> {
    if weights.n_vertices() != mesh.vertices.len() || weights.n_handles != pose.len() {
        return Err(Error::DimensionMismatch(format!(
            "weights are {}x{}, mesh has {} vertices and pose {} handles",
            weights.n_vertices(),
            weights.n_handles,
            mesh.vertices.len(),
            pose.len()
        )));
    }
    let vertices = mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(v, p)| {
            let mut acc = Vector3::zeros();
            for (b, t) in pose.iter().enumerate() {
                let wb = weights.weight(v, b);
                if wb != 0.0 {
                    acc += t.apply(p).coords * wb;
                }
            }
            Point3::from(acc)
        })
        .collect();
    Ok(TetMesh {
        vertices,
        tets: mesh.tets.clone(),
    })
}
