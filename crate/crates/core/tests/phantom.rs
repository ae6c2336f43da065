use dentreg::geometry::Vec3;
use dentreg::icp::{extract_isosurface, DEFAULT_ISO};
use dentreg::phantom::*;
use dentreg::pose::Jaw;
use dentreg::similarity::similarity;
use dentreg::geometry::TransformParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn up(jaw: Jaw) -> Vec3 {
    match jaw {
        Jaw::Lower => Vec3::z(),
        Jaw::Upper => -Vec3::z(),
    }
}

/// Core centre of a tooth in CT coordinates.
fn core(t: &ToothSpec, jaw: Jaw) -> Vec3 {
    let p = Vec3::new(t.center[0], t.center[1], t.base_z + 0.55 * t.height);
    match jaw {
        Jaw::Lower => p,
        Jaw::Upper => Vec3::new(-p.x, p.y, -p.z),
    }
}

#[test]
fn same_seed_is_bit_identical() {
    let cfg = PhantomConfig {
        seed: 3,
        artifact_tooth_fraction: 0.3,
        mesh_noise_sigma: 0.05,
        ..Default::default()
    };
    let a = generate_phantom(&cfg).unwrap();
    let b = generate_phantom(&cfg).unwrap();
    assert_eq!(a.0.data(), b.0.data());
    assert_eq!(a.1.vertices(), b.1.vertices());
    assert_eq!(a.2, b.2);
}

#[test]
fn intensities_at_core_and_soft_tissue() {
    let cfg = PhantomConfig::default();
    let (vol, _, truth) = generate_phantom(&cfg).unwrap();
    for t in &truth.teeth {
        assert!((vol.sample(&core(t, truth.jaw)) - cfg.tooth_hu).abs() < 1e-6);
    }
    let o = vol.origin();
    assert_eq!(vol.sample(&(o + Vec3::new(0.5, 0.5, vol.spacing().z * (vol.dims()[2] - 2) as f64))), cfg.soft_hu);
}

#[test]
fn nothing_below_the_bone_floor() {
    for jaw in [Jaw::Lower, Jaw::Upper] {
        let cfg = PhantomConfig { jaw, ..Default::default() };
        let (vol, _, _) = generate_phantom(&cfg).unwrap();
        let [nx, ny, nz] = vol.dims();
        let k = if jaw == Jaw::Lower { 0 } else { nz - 1 };
        let start = vol.index(0, 0, k);
        let slice = &vol.data()[start..start + nx * ny];
        assert!(slice.iter().all(|&v| v == cfg.soft_hu), "{jaw:?}");
    }
}

#[test]
fn landmarks_sit_on_crown_tips() {
    for jaw in [Jaw::Lower, Jaw::Upper] {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = PhantomConfig {
            seed: 7,
            jaw,
            gt_params: random_gt_params(&mut rng, 15.0, 10.0),
            ..Default::default()
        };
        let (vol, _, truth) = generate_phantom(&cfg).unwrap();
        assert_eq!(truth.landmarks.len(), 10);
        let mid = (cfg.soft_hu + cfg.tooth_hu) / 2.0;
        let s = vol.spacing().x;
        for l in &truth.landmarks {
            let p = truth.gt_transform.apply(l);
            assert!(vol.sample(&(p - up(jaw) * s)) > mid, "{jaw:?}: inside value too low at {p}");
            assert!(vol.sample(&(p + up(jaw) * s)) < mid, "{jaw:?}: outside value too high at {p}");
        }
    }
}

#[test]
fn ground_truth_beats_perturbations() {
    let cfg = PhantomConfig { seed: 1, ..Default::default() };
    let (vol, mesh, truth) = generate_phantom(&cfg).unwrap();
    let all: Vec<usize> = (0..mesh.vertex_count()).collect();
    let at_gt = similarity(&mesh, &vol, &all, &truth.gt_transform, &TransformParams::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut wins = 0;
    for _ in 0..50 {
        let p = random_gt_params(&mut rng, 5.0, 2.0);
        if at_gt < similarity(&mesh, &vol, &all, &truth.gt_transform, &p).unwrap() {
            wins += 1;
        }
    }
    assert!(wins >= 48, "{wins}/50");
}

#[test]
fn artifacts_stay_local_and_sharpen_gradients() {
    let cfg = PhantomConfig {
        seed: 4,
        artifact_tooth_fraction: 0.3,
        ..Default::default()
    };
    let (dirty, _, truth) = generate_phantom(&cfg).unwrap();
    let (clean, _, clean_truth) = generate_phantom(&PhantomConfig {
        artifact_tooth_fraction: 0.0,
        ..cfg.clone()
    })
    .unwrap();
    assert_eq!(inject_artifacts(&clean, &clean_truth, &cfg).data(), clean.data());
    assert_eq!(inject_artifacts(&clean, &truth, &cfg).data(), dirty.data());
    let metal: Vec<Vec3> = truth.teeth.iter().filter(|t| t.artifact).map(|t| core(t, truth.jaw)).collect();
    assert!(!metal.is_empty());
    let [nx, ny, nz] = clean.dims();
    let mut changed = 0;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = clean.index(i, j, k);
                if clean.data()[idx] != dirty.data()[idx] {
                    changed += 1;
                    let p = clean.voxel_center(i, j, k);
                    assert!(metal.iter().any(|c| (p - c).norm() <= ARTIFACT_REACH));
                }
            }
        }
    }
    assert!(changed > 0);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut g_clean, mut g_dirty) = (0.0, 0.0);
    for c in &metal {
        for _ in 0..200 {
            let p = c + Vec3::new(rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0), rng.gen_range(-4.0..4.0));
            g_clean += clean.gradient(&p).norm();
            g_dirty += dirty.gradient(&p).norm();
        }
    }
    assert!(g_dirty > g_clean);
}

#[test]
fn clean_iso_surface_hugs_the_anatomy() {
    let (vol, _, _) = generate_phantom(&PhantomConfig::default()).unwrap();
    let cloud = extract_isosurface(&vol, DEFAULT_ISO).unwrap();
    let s = vol.spacing().x;
    let mut checked = 0;
    let mut ok = 0;
    for p in cloud.points.iter().step_by(7) {
        // An iso point separates a soft-tissue side from a bone/tooth side.
        let g = vol.gradient(p);
        assert!(g.norm() > 0.0);
        let n = g.normalize();
        checked += 1;
        if vol.sample(&(p - n * s)) < DEFAULT_ISO && vol.sample(&(p + n * s)) > DEFAULT_ISO {
            ok += 1;
        }
    }
    // Narrow gaps between crowns can put a second surface within a voxel.
    assert!(ok as f64 >= 0.98 * checked as f64, "{ok}/{checked}");
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        PhantomConfig { bone_hu: 3000.0, ..Default::default() },
        PhantomConfig { artifact_tooth_fraction: 1.5, ..Default::default() },
        PhantomConfig { tooth_count: 13, ..Default::default() },
        PhantomConfig { voxel_spacing: 0.0, ..Default::default() },
    ];
    for cfg in bad {
        assert!(generate_phantom(&cfg).unwrap_err().is_input_error());
    }
    let crowded = PhantomConfig { arch_width: 20.0, arch_depth: 10.0, ..Default::default() };
    assert!(matches!(generate_phantom(&crowded), Err(dentreg::Error::OverlappingTeeth(_))));
}
