#![allow(dead_code)]

use dentreg::cluster::Cluster;
use dentreg::geometry::{params_to_transform, RigidTransform, TransformParams, TriMesh, Vec3};
use rand::Rng;

/// Strip of `n` vertices along x with a wiggle so clusters are not collinear.
pub fn strip_mesh(n: usize) -> TriMesh {
    let verts: Vec<Vec3> = (0..n)
        .map(|i| {
            let t = i as f64 * 0.5;
            Vec3::new(t, (t * 0.4).sin() * 3.0, (t * 0.9).cos() * 1.5 + (i % 2) as f64)
        })
        .collect();
    let tris = (0..n - 2).map(|i| [i, i + 1, i + 2]).collect();
    TriMesh::new(verts, tris).unwrap()
}

pub fn plain_cluster(id: usize, members: Vec<usize>) -> Cluster {
    Cluster {
        id,
        center_vertex: members[0],
        radius: 10.0,
        members,
        init_perturbation: TransformParams::default(),
        parent: None,
    }
}

pub fn random_transform(rng: &mut impl Rng, max_rad: f64, max_mm: f64) -> RigidTransform {
    params_to_transform(&TransformParams::new(
        rng.gen_range(-max_rad..=max_rad),
        rng.gen_range(-max_rad..=max_rad),
        rng.gen_range(-max_rad..=max_rad),
        rng.gen_range(-max_mm..=max_mm),
        rng.gen_range(-max_mm..=max_mm),
        rng.gen_range(-max_mm..=max_mm),
    ))
}

/// Independent elimination written straight from the definitions: distances
/// by explicit per-vertex loops, every round rebuilt from scratch.
/// Returns the removal order and the survivors.
pub fn brute_force_elimination(mesh: &TriMesh, clusters: &[Cluster], ts: &[RigidTransform]) -> (Vec<usize>, Vec<usize>, Vec<Vec<(usize, f64)>>) {
    let v = mesh.vertices();
    let e = |i: usize, j: usize| -> f64 {
        let mut s = 0.0;
        for &m in &clusters[j].members {
            let a = ts[i].apply(&v[m]);
            let b = ts[j].apply(&v[m]);
            s += (a - b).norm();
        }
        s / clusters[j].members.len() as f64
    };
    let mut alive: Vec<usize> = (0..clusters.len()).collect();
    alive.sort_by_key(|&k| clusters[k].id);
    let mut removed = Vec::new();
    let mut rounds = Vec::new();
    while alive.len() > 3 {
        let mut cs = Vec::new();
        for &i in &alive {
            let mut vals: Vec<(f64, usize)> = alive.iter().filter(|&&j| j != i).map(|&j| (e(i, j), clusters[j].id)).collect();
            // two smallest, lower id first on ties
            vals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            cs.push((clusters[i].id, vals[0].0 + vals[1].0));
        }
        let mut worst = 0;
        for k in 0..cs.len() {
            if cs[k].1 > cs[worst].1 || (cs[k].1 == cs[worst].1 && cs[k].0 < cs[worst].0) {
                worst = k;
            }
        }
        removed.push(cs[worst].0);
        rounds.push(cs);
        alive.remove(worst);
    }
    (removed, alive.iter().map(|&k| clusters[k].id).collect(), rounds)
}
