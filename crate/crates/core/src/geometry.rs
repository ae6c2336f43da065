//! Mesh representation, rigid-transform algebra, vertex normals and principal axes.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Matrix4, Rotation3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Triangle surface mesh with edge adjacency and cached per-vertex normals.
#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    adjacency: Vec<Vec<usize>>,
    normals: Vec<Vec3>,
    isolated: Vec<usize>,
}

/// Per-vertex normals together with the vertices that received no usable normal.
#[derive(Debug, Clone)]
pub struct VertexNormals {
    pub normals: Vec<Vec3>,
    /// Vertices without incident faces (or whose incident faces cancel); their
    /// normal is the zero vector.
    pub isolated: Vec<usize>,
}

impl TriMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::InvalidMesh("mesh has no vertices".into()));
        }
        let n = vertices.len();
        for (i, tri) in triangles.iter().enumerate() {
            if let Some(&bad) = tri.iter().find(|&&v| v >= n) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {i} references vertex {bad}, but the mesh has {n} vertices"
                )));
            }
        }
        if let Some(v) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh(format!("vertex {v} is not finite")));
        }
        let VertexNormals { normals, isolated } = compute_vertex_normals(&vertices, &triangles)?;
        let adjacency = build_adjacency(n, &triangles);
        Ok(Self {
            vertices,
            triangles,
            adjacency,
            normals,
            isolated,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Sorted, deduplicated edge neighbours of every vertex.
    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn isolated_vertices(&self) -> &[usize] {
        &self.isolated
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    /// Same surface with reversed triangle winding, so every normal flips.
    pub fn flipped(&self) -> TriMesh {
        let mut out = self.clone();
        for tri in &mut out.triangles {
            tri.swap(1, 2);
        }
        for n in &mut out.normals {
            *n = -*n;
        }
        out
    }

    pub fn transformed(&self, t: &RigidTransform) -> TriMesh {
        let mut out = self.clone();
        for v in &mut out.vertices {
            *v = t.apply(v);
        }
        for n in &mut out.normals {
            *n = t.apply_normal(n);
        }
        out
    }

    /// Axis-aligned bounds `(min, max)`.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }
}

fn build_adjacency(n: usize, triangles: &[[usize; 3]]) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); n];
    for &[a, b, c] in triangles {
        for (p, q) in [(a, b), (b, c), (c, a)] {
            if p != q {
                adj[p].push(q);
                adj[q].push(p);
            }
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    adj
}

/// Area-weighted vertex normals. Each face contributes its unnormalised cross
/// product (twice its area times its unit normal) to its three corners, in
/// triangle order.
pub fn compute_vertex_normals(vertices: &[Vec3], triangles: &[[usize; 3]]) -> Result<VertexNormals> {
    if triangles.is_empty() {
        return Err(Error::InvalidMesh("mesh has no triangles".into()));
    }
    let mut acc = vec![Vec3::zeros(); vertices.len()];
    let mut any_area = false;
    for &[a, b, c] in triangles {
        let cross = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
        if cross.norm_squared() > 0.0 {
            any_area = true;
        }
        acc[a] += cross;
        acc[b] += cross;
        acc[c] += cross;
    }
    if !any_area {
        return Err(Error::Degenerate("every triangle has zero area".into()));
    }
    let mut isolated = Vec::new();
    let normals = acc
        .into_iter()
        .enumerate()
        .map(|(i, n)| {
            let len = n.norm();
            if len > 0.0 && len.is_finite() {
                n / len
            } else {
                isolated.push(i);
                Vec3::zeros()
            }
        })
        .collect();
    Ok(VertexNormals { normals, isolated })
}

/// Proper rigid motion `p ↦ R·p + t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Matrix3::identity(), t)
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Normals transform by the inverse transpose of the linear part, which for
    /// a rotation is the rotation itself.
    pub fn apply_normal(&self, n: &Vec3) -> Vec3 {
        self.rotation * n
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Rotation about `pivot` instead of the origin: `p ↦ pivot + R·(p − pivot)`.
    pub fn about_pivot(rotation: Matrix3<f64>, translation: Vec3, pivot: &Vec3) -> RigidTransform {
        RigidTransform {
            rotation,
            translation: pivot - rotation * pivot + translation,
        }
    }

    pub fn to_matrix4(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Row-major 4×4 homogeneous matrix.
    pub fn to_rows(&self) -> [[f64; 4]; 4] {
        let m = self.to_matrix4();
        std::array::from_fn(|r| std::array::from_fn(|c| m[(r, c)]))
    }

    pub fn from_rows(rows: &[[f64; 4]; 4]) -> Result<RigidTransform> {
        let rotation = Matrix3::from_fn(|r, c| rows[r][c]);
        let translation = Vec3::new(rows[0][3], rows[1][3], rows[2][3]);
        let t = RigidTransform::new(rotation, translation);
        if !t.is_proper(1e-6) {
            return Err(Error::InvalidArgument("matrix is not a proper rigid transform".into()));
        }
        Ok(t)
    }

    /// Orthonormality and unit determinant of the rotation, within `tol`.
    pub fn is_proper(&self, tol: f64) -> bool {
        let err = (self.rotation * self.rotation.transpose() - Matrix3::identity()).amax();
        err <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }
}

/// Six pose parameters: extrinsic X-then-Y-then-Z rotation angles in radians
/// (`R = Rz·Ry·Rx`) and a translation in millimetres.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransformParams {
    pub rx: f64,
    pub ry: f64,
    pub rz: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl TransformParams {
    pub fn new(rx: f64, ry: f64, rz: f64, tx: f64, ty: f64, tz: f64) -> Self {
        Self {
            rx: wrap_angle(rx),
            ry: wrap_angle(ry),
            rz: wrap_angle(rz),
            tx,
            ty,
            tz,
        }
    }

    pub fn from_degrees(rx: f64, ry: f64, rz: f64, tx: f64, ty: f64, tz: f64) -> Self {
        Self::new(rx.to_radians(), ry.to_radians(), rz.to_radians(), tx, ty, tz)
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    /// Raw parameter vector, without angle wrapping (optimizer space).
    pub fn to_array(&self) -> [f64; 6] {
        [self.rx, self.ry, self.rz, self.tx, self.ty, self.tz]
    }

    pub fn to_transform(&self) -> RigidTransform {
        params_to_transform(self)
    }

    pub fn from_transform(t: &RigidTransform) -> Self {
        transform_to_params(t)
    }
}

/// Wraps an angle into (−π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub fn params_to_transform(p: &TransformParams) -> RigidTransform {
    rotation_from_raw(p.rx, p.ry, p.rz, Vec3::new(p.tx, p.ty, p.tz))
}

/// Like [`params_to_transform`] but straight from an unwrapped parameter array.
pub fn transform_from_array(a: &[f64]) -> RigidTransform {
    rotation_from_raw(a[0], a[1], a[2], Vec3::new(a[3], a[4], a[5]))
}

fn rotation_from_raw(rx: f64, ry: f64, rz: f64, t: Vec3) -> RigidTransform {
    // from_euler_angles(roll, pitch, yaw) builds Rz(yaw)·Ry(pitch)·Rx(roll).
    let r = Rotation3::from_euler_angles(rx, ry, rz);
    RigidTransform::new(r.into_inner(), t)
}

/// Inverse of [`params_to_transform`]; `ry` comes back in [−π/2, π/2].
pub fn transform_to_params(t: &RigidTransform) -> TransformParams {
    let (rx, ry, rz) = Rotation3::from_matrix_unchecked(t.rotation).euler_angles();
    TransformParams::new(rx, ry, rz, t.translation.x, t.translation.y, t.translation.z)
}

/// Geodesic rotation angle (radians) between two rotations.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let rel = a.transpose() * b;
    ((rel.trace() - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
}

/// Principal axes of a point set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    pub mean: Vec3,
    /// Descending, non-negative.
    pub eigenvalues: [f64; 3],
    /// Orthonormal and right-handed: `eigenvectors[2] = eigenvectors[0] × eigenvectors[1]`.
    pub eigenvectors: [Vec3; 3],
}

pub fn pca_axes(mesh: &TriMesh) -> Result<PcaResult> {
    pca_points(mesh.vertices())
}

/// Population-covariance PCA (divides by |V|). Eigenvector signs are fixed so
/// that the largest-magnitude component of v0 and v1 is positive; v2 completes
/// a right-handed frame.
pub fn pca_points(points: &[Vec3]) -> Result<PcaResult> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("PCA of an empty point set".into()));
    }
    let n = points.len() as f64;
    let mean = points.iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = order.map(|i| eig.eigenvalues[i].max(0.0));
    let mut v0: Vec3 = eig.eigenvectors.column(order[0]).into();
    let mut v1: Vec3 = eig.eigenvectors.column(order[1]).into();
    v0 = canonical_sign(v0.normalize());
    // Re-orthogonalise against v0 before fixing the sign.
    v1 = (v1 - v0 * v0.dot(&v1)).normalize();
    v1 = canonical_sign(v1);
    let v2 = v0.cross(&v1);
    Ok(PcaResult {
        mean,
        eigenvalues,
        eigenvectors: [v0, v1, v2],
    })
}

fn canonical_sign(v: Vec3) -> Vec3 {
    let i = v.iamax();
    if v[i] < 0.0 {
        -v
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn unit_cube() -> TriMesh {
        let v = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(1.0, 1.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
            Vec3::new(1.0, 0.0, 1.0),
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(0.0, 1.0, 1.0),
            // face-interior vertex on the top face
            Vec3::new(0.5, 0.5, 1.0),
        ];
        let t = vec![
            [0, 2, 1],
            [0, 3, 2],
            [4, 5, 8],
            [5, 6, 8],
            [6, 7, 8],
            [7, 4, 8],
            [0, 1, 5],
            [0, 5, 4],
            [1, 2, 6],
            [1, 6, 5],
            [2, 3, 7],
            [2, 7, 6],
            [3, 0, 4],
            [3, 4, 7],
        ];
        TriMesh::new(v, t).unwrap()
    }

    #[test]
    fn face_interior_vertex_takes_face_normal() {
        let m = unit_cube();
        assert!((m.normals()[8] - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn single_triangle_normals() {
        let m = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap();
        for n in m.normals() {
            assert!((n - Vec3::z()).norm() < 1e-15);
        }
    }

    #[test]
    fn isolated_vertex_is_flagged() {
        let m = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(5.0, 5.0, 5.0)],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(m.isolated_vertices(), &[3]);
        assert_eq!(m.normals()[3], Vec3::zeros());
    }

    #[test]
    fn degenerate_mesh_is_rejected() {
        let err = TriMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0],
            vec![[0, 1, 2]],
        );
        assert!(matches!(err, Err(Error::Degenerate(_))));
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let err = TriMesh::new(vec![Vec3::zeros(), Vec3::x(), Vec3::y()], vec![[0, 1, 3]]);
        assert!(matches!(err, Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn adjacency_is_symmetric() {
        let m = unit_cube();
        for (i, nb) in m.adjacency().iter().enumerate() {
            for &j in nb {
                assert!(m.adjacency()[j].binary_search(&i).is_ok());
            }
        }
    }

    #[test]
    fn params_identity_and_quarter_turn() {
        let t = params_to_transform(&TransformParams::default());
        assert_eq!(t.rotation, Matrix3::identity());
        assert_eq!(t.translation, Vec3::zeros());
        let q = params_to_transform(&TransformParams::new(0.0, 0.0, PI / 2.0, 0.0, 0.0, 0.0));
        assert!((q.apply(&Vec3::x()) - Vec3::y()).norm() < 1e-12);
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = TransformParams::new(
                rng.gen_range(-PI + 1e-6..PI),
                rng.gen_range(-PI / 2.0 + 1e-6..PI / 2.0 - 1e-6),
                rng.gen_range(-PI + 1e-6..PI),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
            );
            let q = transform_to_params(&params_to_transform(&p));
            for (a, b) in p.to_array().iter().zip(q.to_array()) {
                assert!(close(*a, b, 1e-9), "{p:?} vs {q:?}");
            }
        }
    }

    #[test]
    fn rotation_convention_is_z_y_x() {
        let (a, b, c) = (0.3, -0.2, 0.7);
        let t = params_to_transform(&TransformParams::new(a, b, c, 0.0, 0.0, 0.0));
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, a.cos(), -a.sin(), 0.0, a.sin(), a.cos());
        let ry = Matrix3::new(b.cos(), 0.0, b.sin(), 0.0, 1.0, 0.0, -b.sin(), 0.0, b.cos());
        let rz = Matrix3::new(c.cos(), -c.sin(), 0.0, c.sin(), c.cos(), 0.0, 0.0, 0.0, 1.0);
        assert!((t.rotation - rz * ry * rx).amax() < 1e-14);
    }

    #[test]
    fn inverse_and_compose() {
        assert_eq!(RigidTransform::identity().inverse(), RigidTransform::identity());
        let pure = RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(pure.apply_normal(&Vec3::z()), Vec3::z());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let t = params_to_transform(&TransformParams::new(
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
                rng.gen_range(-PI..PI),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
                rng.gen_range(-100.0..100.0),
            ));
            let p = Vec3::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
            let back = t.inverse().compose(&t).apply(&p);
            assert!((back - p).norm() < 1e-9);
            assert!(t.is_proper(1e-9));
        }
    }

    #[test]
    fn about_pivot_fixes_pivot() {
        let r = params_to_transform(&TransformParams::new(0.4, 0.1, -0.3, 0.0, 0.0, 0.0)).rotation;
        let pivot = Vec3::new(3.0, -2.0, 7.0);
        let t = RigidTransform::about_pivot(r, Vec3::zeros(), &pivot);
        assert!((t.apply(&pivot) - pivot).norm() < 1e-12);
    }

    #[test]
    fn matrix_rows_round_trip() {
        let t = params_to_transform(&TransformParams::new(0.1, 0.2, 0.3, 4.0, 5.0, 6.0));
        let back = RigidTransform::from_rows(&t.to_rows()).unwrap();
        assert!((back.rotation - t.rotation).amax() < 1e-15);
        assert_eq!(back.translation, t.translation);
    }

    #[test]
    fn wrap_angle_range() {
        assert!(close(wrap_angle(PI), PI, 1e-15));
        assert!(close(wrap_angle(-PI), PI, 1e-15));
        assert!(close(wrap_angle(3.0 * PI / 2.0), -PI / 2.0, 1e-12));
    }

    #[test]
    fn pca_coplanar() {
        let pts: Vec<Vec3> = (0..50)
            .map(|i| Vec3::new((i % 7) as f64 * 1.3, (i / 7) as f64 * 0.7 + (i % 3) as f64, 3.0))
            .collect();
        let r = pca_points(&pts).unwrap();
        assert!(r.eigenvalues[2].abs() < 1e-9);
        assert!((r.eigenvectors[2].z.abs() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pca_collinear() {
        let pts: Vec<Vec3> = (0..20).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect();
        let r = pca_points(&pts).unwrap();
        assert!(r.eigenvalues[1].abs() < 1e-9 && r.eigenvalues[2].abs() < 1e-9);
        assert!((r.eigenvectors[0].x.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pca_empty_is_error() {
        assert!(pca_points(&[]).is_err());
    }
}
