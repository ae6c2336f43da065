use dentreg::eval::landmark_error;
use dentreg::phantom::*;
use dentreg::pipeline::*;
use dentreg::pose::Jaw;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn phantom(seed: u64, jaw: Jaw, fraction: f64) -> (dentreg::CtVolume, dentreg::TriMesh, PhantomTruth) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_phantom(&PhantomConfig {
        seed,
        jaw,
        artifact_tooth_fraction: fraction,
        gt_params: random_gt_params(&mut rng, 15.0, 10.0),
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn recovers_both_jaws_from_exact_cues() {
    for (seed, jaw) in [(21, Jaw::Lower), (22, Jaw::Upper)] {
        let (vol, mesh, truth) = phantom(seed, jaw, 0.0);
        let mut reg = register(&mesh, &vol, jaw, Some(&truth.gt_cues), &RegisterOptions::default()).unwrap();
        let ev = reg.report.evaluate(&truth.landmarks, &truth.gt_transform).unwrap();
        assert!(ev.mean_mm <= 0.5, "{jaw:?}: {} mm", ev.mean_mm);
        assert_eq!(reg.report.counts.augmented, 3 * reg.report.counts.base);
        assert_eq!(reg.report.survivors.len(), 3);
        assert_eq!(reg.report.elimination_log.len(), reg.clusters.len() - 3);
    }
}

#[test]
fn report_serialises_with_expected_fields() {
    let (vol, mesh, truth) = phantom(23, Jaw::Lower, 0.3);
    let mut reg = register(&mesh, &vol, Jaw::Lower, Some(&truth.gt_cues), &RegisterOptions::default()).unwrap();
    reg.report.evaluate(&truth.landmarks, &truth.gt_transform).unwrap();
    let json = serde_json::to_value(&reg.report).unwrap();
    for key in ["method", "initial_params", "final_params", "final_transform", "counts", "survivors", "elimination_log", "seed", "config", "evaluation", "runtime_s"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    assert_eq!(json["evaluation"]["per_landmark_mm"].as_array().unwrap().len(), 10);
    let back: dentreg::eval::RegistrationReport = serde_json::from_value(json).unwrap();
    assert_eq!(back, reg.report);
}

#[test]
fn thread_count_does_not_change_results() {
    let (vol, mesh, truth) = phantom(24, Jaw::Lower, 0.3);
    let run = |threads| {
        let opts = RegisterOptions { threads: Some(threads), ..Default::default() };
        register(&mesh, &vol, Jaw::Lower, Some(&truth.gt_cues), &opts).unwrap().report.without_runtimes()
    };
    let (a, b) = (run(1), run(4));
    let strip = |mut r: dentreg::eval::RegistrationReport| {
        r.config["threads"] = serde_json::Value::Null;
        serde_json::to_string(&r).unwrap()
    };
    assert_eq!(strip(a), strip(b));
}

#[test]
fn icp_baseline_improves_a_perturbed_start() {
    let (vol, mesh, truth) = phantom(25, Jaw::Lower, 0.0);
    let start = random_gt_params(&mut ChaCha8Rng::seed_from_u64(1), 2.0, 1.5).to_transform().compose(&truth.gt_transform);
    let report = register_icp(&mesh, &vol, &start).unwrap();
    let before = landmark_error(&truth.landmarks, &start, &truth.gt_transform).unwrap().1;
    let after = landmark_error(&truth.landmarks, &report.final_transform, &truth.gt_transform).unwrap().1;
    assert!(after < before && after < 0.5, "{before} -> {after}");
}

#[test]
fn bad_options_are_rejected() {
    let (vol, mesh, truth) = phantom(26, Jaw::Lower, 0.0);
    for opts in [
        RegisterOptions { radius: 0.0, ..Default::default() },
        RegisterOptions { threads: Some(0), ..Default::default() },
    ] {
        let err = register(&mesh, &vol, Jaw::Lower, Some(&truth.gt_cues), &opts).unwrap_err();
        assert!(err.is_input_error());
    }
}
