//! Vertex clusters seeded on the crowns and their stochastic augmentation.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{TransformParams, TriMesh, Vec3};
use crate::projection::PlaneFrame;

/// Smallest accepted cluster.
pub const MIN_CLUSTER_SIZE: usize = 10;
/// Seeds are drawn from vertices in this lowest fraction of normalised depth.
pub const SEED_DEPTH_FRACTION: f64 = 0.3;
/// Augmented copies per base cluster.
pub const AUGMENT_COPIES: usize = 3;
/// Bound on each random initial rotation angle of an augmented cluster.
pub const AUGMENT_MAX_ANGLE_DEG: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: usize,
    pub center_vertex: usize,
    pub radius: f64,
    /// Vertex indices in ascending order.
    pub members: Vec<usize>,
    /// Starting parameters for this cluster's local optimisation.
    pub init_perturbation: TransformParams,
    /// Base cluster an augmented cluster was derived from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
}

impl Cluster {
    pub fn centroid(&self, mesh: &TriMesh) -> Vec3 {
        let v = mesh.vertices();
        self.members.iter().map(|&i| v[i]).sum::<Vec3>() / self.members.len() as f64
    }
}

/// Breadth-first growth over mesh adjacency, admitting vertices within `radius`
/// (Euclidean) of the center. Returns the members in ascending order.
pub fn grow_members(mesh: &TriMesh, center: usize, radius: f64) -> Vec<usize> {
    let verts = mesh.vertices();
    let adj = mesh.adjacency();
    let c = verts[center];
    let mut seen = vec![false; verts.len()];
    let mut queue = VecDeque::from([center]);
    seen[center] = true;
    let mut members = Vec::new();
    while let Some(v) = queue.pop_front() {
        members.push(v);
        for &w in &adj[v] {
            if !seen[w] && (verts[w] - c).norm() <= radius {
                seen[w] = true;
                queue.push_back(w);
            }
        }
    }
    members.sort_unstable();
    members
}

/// Grows a cluster around `center`; `None` when it has fewer than
/// [`MIN_CLUSTER_SIZE`] members.
pub fn grow_cluster(mesh: &TriMesh, center: usize, radius: f64, id: usize) -> Option<Cluster> {
    let members = grow_members(mesh, center, radius);
    (members.len() >= MIN_CLUSTER_SIZE).then(|| Cluster {
        id,
        center_vertex: center,
        radius,
        members,
        init_perturbation: TransformParams::default(),
        parent: None,
    })
}

/// Base clusters: seeds are crown vertices (normalised depth in the lowest
/// 30%), visited shallowest first, accepted when at least `radius` from
/// every accepted center and when their cluster reaches the minimum size.
pub fn generate_clusters(mesh: &TriMesh, frame: &PlaneFrame, radius: f64) -> Result<Vec<Cluster>> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("cluster radius must be positive, got {radius}")));
    }
    let verts = mesh.vertices();
    let mut seeds: Vec<(f64, usize)> = verts
        .iter()
        .enumerate()
        .map(|(i, p)| (frame.normalized_depth_of(p), i))
        .filter(|(d, _)| *d <= SEED_DEPTH_FRACTION)
        .collect();
    seeds.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut clusters: Vec<Cluster> = Vec::new();
    for (_, s) in seeds {
        if clusters.iter().any(|c| (verts[c.center_vertex] - verts[s]).norm() < radius) {
            continue;
        }
        if let Some(c) = grow_cluster(mesh, s, radius, clusters.len()) {
            clusters.push(c);
        }
    }
    if clusters.is_empty() {
        return Err(Error::MeshTooSmall { radius });
    }
    Ok(clusters)
}

/// Adds [`AUGMENT_COPIES`] perturbed copies of every base cluster. Each copy's
/// center is offset in a uniformly random direction by a uniform length below
/// `radius` and snapped to the nearest member of the base cluster; its initial
/// rotation is uniform in ±10° per axis with zero translation. A copy whose
/// regrown cluster is too small falls back to the base center.
///
/// Output: the base clusters unchanged, followed by the copies with ids
/// continuing from the last base id.
pub fn augment_stochastic(clusters: &[Cluster], mesh: &TriMesh, radius: f64, seed: u64) -> Vec<Cluster> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let verts = mesh.vertices();
    let max_angle = AUGMENT_MAX_ANGLE_DEG.to_radians();
    let mut out = clusters.to_vec();
    let mut next_id = clusters.iter().map(|c| c.id + 1).max().unwrap_or(0);
    for base in clusters {
        for _ in 0..AUGMENT_COPIES {
            let dir = random_unit(&mut rng);
            let len = rng.gen_range(0.0..radius);
            let target = verts[base.center_vertex] + dir * len;
            let snapped = base
                .members
                .iter()
                .copied()
                .min_by(|&a, &b| (verts[a] - target).norm_squared().total_cmp(&(verts[b] - target).norm_squared()))
                .unwrap_or(base.center_vertex);
            let angles: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-max_angle..=max_angle));
            let mut c = grow_cluster(mesh, snapped, radius, next_id).unwrap_or_else(|| Cluster {
                id: next_id,
                ..base.clone()
            });
            c.init_perturbation = TransformParams::new(angles[0], angles[1], angles[2], 0.0, 0.0, 0.0);
            c.parent = Some(base.id);
            out.push(c);
            next_id += 1;
        }
    }
    out
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vec3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Compact description of a cluster for JSON export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub id: usize,
    pub center_vertex: usize,
    pub center: Vec3,
    pub radius: f64,
    pub member_count: usize,
    pub init_perturbation: TransformParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<usize>,
}

impl ClusterSummary {
    pub fn of(c: &Cluster, mesh: &TriMesh) -> ClusterSummary {
        ClusterSummary {
            id: c.id,
            center_vertex: c.center_vertex,
            center: mesh.vertices()[c.center_vertex],
            radius: c.radius,
            member_count: c.members.len(),
            init_perturbation: c.init_perturbation,
            parent: c.parent,
        }
    }
}
