//! Mutual coherency between locally optimised clusters and the greedy
//! elimination that keeps the three most mutually consistent ones.

use serde::{Deserialize, Serialize};

use crate::cluster::Cluster;
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, TriMesh};
use crate::optimize::SimplexOptions;
use crate::similarity::{Fit, Objective};
use crate::volume::CtVolume;

/// Clusters kept by the elimination.
pub const SURVIVORS: usize = 3;

/// Mean displacement between two transforms over a cluster's vertices.
pub fn cluster_distance(mesh: &TriMesh, members: &[usize], t1: &RigidTransform, t2: &RigidTransform) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    let v = mesh.vertices();
    let sum: f64 = members.iter().map(|&i| (t1.apply(&v[i]) - t2.apply(&v[i])).norm()).sum();
    sum / members.len() as f64
}

/// How far `Cj` moves when registered with `Ti` instead of its own `Tj`.
pub fn mutual_coherency(mesh: &TriMesh, cj: &Cluster, ti: &RigidTransform, tj: &RigidTransform) -> f64 {
    cluster_distance(mesh, &cj.members, ti, tj)
}

/// `c_i`: the sum of the two smallest `e(Ci, Cj)` over the other `alive`
/// clusters, taken in ascending id order so ties resolve to the lower id.
/// `e` is indexed by position in the id-sorted cluster list.
pub fn coherency_error(e: &[Vec<f64>], ids: &[usize], alive: &[usize], i: usize) -> f64 {
    let mut others: Vec<(f64, usize)> = alive.iter().filter(|&&j| j != i).map(|&j| (e[i][j], ids[j])).collect();
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    others.iter().take(2).map(|x| x.0).sum()
}

/// One elimination round: the removed cluster and every alive cluster's error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EliminationStep {
    pub removed: usize,
    pub removed_error: f64,
    /// `(id, c_i)` for every cluster alive at the start of the round.
    pub errors: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    /// Surviving cluster ids, ascending.
    pub survivors: Vec<usize>,
    /// Final `c_i` of each survivor, aligned with `survivors`.
    pub errors: Vec<f64>,
    pub log: Vec<EliminationStep>,
}

/// Removes the cluster with the largest coherency error (ties: lowest id),
/// recomputing errors after each removal, until three remain.
/// `transforms[k]` belongs to `clusters[k]`; input order does not matter.
pub fn select_optimal_clusters(mesh: &TriMesh, clusters: &[Cluster], transforms: &[RigidTransform]) -> Result<Selection> {
    if clusters.len() != transforms.len() {
        return Err(Error::InvalidArgument(format!(
            "{} clusters but {} transforms",
            clusters.len(),
            transforms.len()
        )));
    }
    if clusters.len() < SURVIVORS {
        return Err(Error::TooFewClusters(clusters.len()));
    }
    let mut order: Vec<usize> = (0..clusters.len()).collect();
    order.sort_by_key(|&k| clusters[k].id);
    let ids: Vec<usize> = order.iter().map(|&k| clusters[k].id).collect();
    let n = order.len();
    // e[i][j] = e(Ci, Cj) = d(Cj; Ti, Tj), fixed across rounds.
    let mut e = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let (ci, cj) = (order[i], order[j]);
                e[i][j] = mutual_coherency(mesh, &clusters[cj], &transforms[ci], &transforms[cj]);
            }
        }
    }

    let mut alive: Vec<usize> = (0..n).collect();
    let mut log = Vec::new();
    loop {
        let errors: Vec<f64> = alive.iter().map(|&i| coherency_error(&e, &ids, &alive, i)).collect();
        if alive.len() <= SURVIVORS {
            return Ok(Selection {
                survivors: alive.iter().map(|&i| ids[i]).collect(),
                errors,
                log,
            });
        }
        let mut worst = 0;
        for k in 1..alive.len() {
            if errors[k] > errors[worst] {
                worst = k;
            }
        }
        log.push(EliminationStep {
            removed: ids[alive[worst]],
            removed_error: errors[worst],
            errors: alive.iter().zip(&errors).map(|(&i, &c)| (ids[i], c)).collect(),
        });
        alive.remove(worst);
    }
}

/// Final refinement over the union of the survivors' vertices, starting from
/// the survivor transform with the smallest coherency error (ties: lowest id).
pub fn final_registration(
    mesh: &TriMesh,
    vol: &CtVolume,
    clusters: &[Cluster],
    transforms: &[RigidTransform],
    selection: &Selection,
    opts: &SimplexOptions,
) -> Result<Fit> {
    let pos = |id: usize| -> Result<usize> {
        clusters
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::InvalidArgument(format!("survivor {id} is not among the clusters")))
    };
    let mut best = 0;
    for k in 1..selection.survivors.len() {
        let better = selection.errors[k] < selection.errors[best]
            || (selection.errors[k] == selection.errors[best] && selection.survivors[k] < selection.survivors[best]);
        if better {
            best = k;
        }
    }
    let base = transforms[pos(selection.survivors[best])?];
    let mut members = Vec::new();
    for &id in &selection.survivors {
        members.extend_from_slice(&clusters[pos(id)?].members);
    }
    members.sort_unstable();
    members.dedup();
    Objective::centered(mesh, &members, &base)?.minimize(vol, &Default::default(), opts)
}
