//! Iso-surface extraction and classic point-to-point ICP, used as the baseline.

use kiddo::{KdTree, SquaredEuclidean};
use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};
use crate::volume::CtVolume;

/// Intensity separating bone and teeth from soft tissue.
pub const DEFAULT_ISO: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

/// The vertex set marching cubes would produce: one point per grid edge whose
/// end values straddle `iso`, placed by linear interpolation. Cells are
/// "inside" where the value is at least `iso`.
pub fn extract_isosurface(vol: &CtVolume, iso: f64) -> Result<PointCloud> {
    let [nx, ny, nz] = vol.dims();
    let data = vol.data();
    let mut points = Vec::new();
    let mut edge = |a: (usize, usize, usize), b: (usize, usize, usize)| {
        let va = data[vol.index(a.0, a.1, a.2)];
        let vb = data[vol.index(b.0, b.1, b.2)];
        if (va >= iso) != (vb >= iso) {
            let t = (iso - va) / (vb - va);
            let pa = vol.voxel_center(a.0, a.1, a.2);
            let pb = vol.voxel_center(b.0, b.1, b.2);
            points.push(pa + (pb - pa) * t);
        }
    };
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                if i + 1 < nx {
                    edge((i, j, k), (i + 1, j, k));
                }
                if j + 1 < ny {
                    edge((i, j, k), (i, j + 1, k));
                }
                if k + 1 < nz {
                    edge((i, j, k), (i, j, k + 1));
                }
            }
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyLevelSet(iso));
    }
    Ok(PointCloud { points })
}

/// Least-squares rigid motion taking `src[i]` onto `dst[i]` (cross-covariance SVD).
pub fn fit_rigid(src: &[Vec3], dst: &[Vec3]) -> RigidTransform {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
    let v = vt.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let r = v * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, if sign == 0.0 { 1.0 } else { sign })) * u.transpose();
    RigidTransform::new(r, cd - r * cs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub transform: RigidTransform,
    pub iterations: usize,
    /// Correspondence RMS before each update, then after the last one.
    pub rms_history: Vec<f64>,
}

/// Point-to-point ICP of `source` onto `target` starting at `init`. Stops when
/// the correspondence RMS changes by less than `tol` or after `max_iter` updates.
pub fn icp(source: &PointCloud, target: &PointCloud, init: &RigidTransform, max_iter: usize, tol: f64) -> Result<IcpResult> {
    if source.points.is_empty() || target.points.is_empty() {
        return Err(Error::InvalidArgument("ICP needs non-empty point clouds".into()));
    }
    let mut tree: KdTree<f64, 3> = KdTree::with_capacity(target.points.len());
    for (i, p) in target.points.iter().enumerate() {
        tree.add(&[p.x, p.y, p.z], i as u64);
    }
    let correspond = |t: &RigidTransform| -> (Vec<Vec3>, Vec<Vec3>, f64) {
        let moved: Vec<Vec3> = source.points.iter().map(|p| t.apply(p)).collect();
        let matches: Vec<(Vec3, f64)> = moved
            .par_iter()
            .map(|q| {
                let nn = tree.nearest_one::<SquaredEuclidean>(&[q.x, q.y, q.z]);
                (target.points[nn.item as usize], nn.distance)
            })
            .collect();
        let rms = (matches.iter().map(|m| m.1).sum::<f64>() / matches.len() as f64).sqrt();
        (moved, matches.into_iter().map(|m| m.0).collect(), rms)
    };

    let mut t = *init;
    let (mut moved, mut dst, mut rms) = correspond(&t);
    let mut history = vec![rms];
    let mut iterations = 0;
    while iterations < max_iter {
        let step = fit_rigid(&moved, &dst);
        t = step.compose(&t);
        iterations += 1;
        let next = correspond(&t);
        (moved, dst) = (next.0, next.1);
        let change = (rms - next.2).abs();
        rms = next.2;
        history.push(rms);
        if change < tol {
            break;
        }
    }
    Ok(IcpResult {
        transform: t,
        iterations,
        rms_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{params_to_transform, TransformParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_volume() -> CtVolume {
        CtVolume::from_fn([61, 61, 61], Vec3::new(0.5, 0.5, 0.5), Vec3::new(-15.0, -15.0, -15.0), |p| {
            if p.norm() <= 10.0 {
                2000.0
            } else {
                0.0
            }
        })
        .unwrap()
    }

    #[test]
    fn sphere_level_set() {
        let vol = sphere_volume();
        let cloud = extract_isosurface(&vol, 1000.0).unwrap();
        assert!(cloud.points.len() > 1000);
        for p in &cloud.points {
            assert!((p.norm() - 10.0).abs() <= 0.25 + 1e-9, "{}", p.norm());
        }
    }

    #[test]
    fn iso_above_max_is_empty() {
        assert!(matches!(extract_isosurface(&sphere_volume(), 5000.0), Err(Error::EmptyLevelSet(_))));
    }

    #[test]
    fn rigid_fit_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let t = params_to_transform(&TransformParams::new(
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
            ));
            let src: Vec<Vec3> = (0..30)
                .map(|_| Vec3::new(rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
                .collect();
            let dst: Vec<Vec3> = src.iter().map(|p| t.apply(p)).collect();
            let fit = fit_rigid(&src, &dst);
            assert!((fit.rotation - t.rotation).norm() < 1e-9);
            assert!((fit.translation - t.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn self_registration_recovers_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pts: Vec<Vec3> = (0..2000)
            .map(|_| {
                let (u, v): (f64, f64) = (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU));
                let r = (1.0 - u * u).sqrt();
                Vec3::new(12.0 * r * v.cos(), 7.0 * r * v.sin(), 4.0 * u)
            })
            .collect();
        let source = PointCloud { points: pts.clone() };
        let truth = params_to_transform(&TransformParams::from_degrees(4.0, -3.0, 5.0, 1.0, -0.5, 0.7));
        let target = PointCloud {
            points: pts.iter().map(|p| truth.apply(p)).collect(),
        };
        let init = params_to_transform(&TransformParams::from_degrees(3.0, -2.0, 3.5, 0.6, -0.2, 0.4));
        let r = icp(&source, &target, &init, 100, 1e-9).unwrap();
        for w in r.rms_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{:?}", r.rms_history);
        }
        assert!(*r.rms_history.last().unwrap() < 1e-3);
    }

    #[test]
    fn exact_init_stays_put() {
        let pts: Vec<Vec3> = (0..200).map(|i| Vec3::new((i % 10) as f64, (i / 10) as f64, ((i * 7) % 5) as f64)).collect();
        let c = PointCloud { points: pts };
        let r = icp(&c, &c, &RigidTransform::identity(), 100, 1e-6).unwrap();
        assert!(r.iterations <= 1);
        assert!((r.transform.rotation - Matrix3::identity()).norm() < 1e-9);
    }
}
