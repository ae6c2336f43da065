//! Normal–gradient similarity between mesh vertices and the CT volume, and the
//! per-cluster local optimisation built on it.

use serde::{Deserialize, Serialize};

use crate::cluster::Cluster;
use crate::error::{Error, Result};
use crate::geometry::{transform_from_array, RigidTransform, TransformParams, TriMesh, Vec3};
use crate::optimize::{nelder_mead, SimplexOptions};
use crate::volume::CtVolume;

/// `L = −Σ ⟨R·n(v), ∇I(T(v))⟩` over `members` with `T = P(params) ∘ base`.
/// Lower is better: normals point into the tissue, along increasing intensity.
/// Members are summed in ascending index order.
pub fn similarity(
    mesh: &TriMesh,
    vol: &CtVolume,
    members: &[usize],
    base: &RigidTransform,
    params: &TransformParams,
) -> Result<f64> {
    let obj = Objective::new(mesh, members, base, Vec3::zeros())?;
    Ok(obj.value(vol, &params.to_array()))
}

/// Members pre-transformed by the base pose, relative to a rotation pivot. The
/// candidate pose is `Tr(pivot) ∘ P(params) ∘ Tr(−pivot) ∘ base`.
#[derive(Debug, Clone)]
pub struct Objective {
    points: Vec<Vec3>,
    normals: Vec<Vec3>,
    pivot: Vec3,
    base: RigidTransform,
}

impl Objective {
    pub fn new(mesh: &TriMesh, members: &[usize], base: &RigidTransform, pivot: Vec3) -> Result<Objective> {
        if members.is_empty() {
            return Err(Error::InvalidArgument("similarity needs at least one vertex".into()));
        }
        let mut idx = members.to_vec();
        idx.sort_unstable();
        idx.dedup();
        let (v, n) = (mesh.vertices(), mesh.normals());
        if let Some(&bad) = idx.iter().find(|&&i| i >= v.len()) {
            return Err(Error::InvalidArgument(format!("vertex index {bad} out of range")));
        }
        Ok(Objective {
            points: idx.iter().map(|&i| base.apply(&v[i]) - pivot).collect(),
            normals: idx.iter().map(|&i| base.apply_normal(&n[i])).collect(),
            pivot,
            base: *base,
        })
    }

    /// Pivot placed at the members' centroid under the base pose.
    pub fn centered(mesh: &TriMesh, members: &[usize], base: &RigidTransform) -> Result<Objective> {
        let zero = Objective::new(mesh, members, base, Vec3::zeros())?;
        let c = zero.points.iter().sum::<Vec3>() / zero.points.len() as f64;
        Objective::new(mesh, members, base, c)
    }

    pub fn value(&self, vol: &CtVolume, params: &[f64]) -> f64 {
        let p = transform_from_array(params);
        let shift = self.pivot + p.translation;
        let mut sum = 0.0;
        for (q, n) in self.points.iter().zip(&self.normals) {
            let x = p.rotation * q + shift;
            sum += (p.rotation * n).dot(&vol.gradient(&x));
        }
        -sum
    }

    /// Full transform (mesh → CT) for the given parameters.
    pub fn transform(&self, params: &[f64]) -> RigidTransform {
        let p = transform_from_array(params);
        RigidTransform::about_pivot(p.rotation, p.translation, &self.pivot).compose(&self.base)
    }

    pub fn minimize(&self, vol: &CtVolume, start: &TransformParams, opts: &SimplexOptions) -> Result<Fit> {
        let r = nelder_mead(|x| self.value(vol, x), &start.to_array(), &opts.pose_steps(), opts)?;
        Ok(Fit {
            transform: self.transform(&r.x),
            params: TransformParams::from_array([r.x[0], r.x[1], r.x[2], r.x[3], r.x[4], r.x[5]]),
            value: r.value,
            evals: r.evals,
            converged: r.converged,
        })
    }
}

/// Outcome of one local optimisation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fit {
    pub transform: RigidTransform,
    pub params: TransformParams,
    pub value: f64,
    pub evals: usize,
    pub converged: bool,
}

/// Optimises one cluster from its initial perturbation, rotating about the
/// cluster's centroid under `base`.
pub fn optimize_cluster(
    mesh: &TriMesh,
    vol: &CtVolume,
    cluster: &Cluster,
    base: &RigidTransform,
    opts: &SimplexOptions,
) -> Result<Fit> {
    Objective::centered(mesh, &cluster.members, base)?.minimize(vol, &cluster.init_perturbation, opts)
}
