//! Landmark error, run reports and the radius sweep table.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::coherency::EliminationStep;
use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, TransformParams, Vec3};

pub const LANDMARK_COUNT: usize = 10;

/// Per-landmark distances `‖truth(l) − estimated(l)‖` and their mean.
pub fn landmark_error(landmarks: &[Vec3], estimated: &RigidTransform, truth: &RigidTransform) -> Result<(Vec<f64>, f64)> {
    if landmarks.len() != LANDMARK_COUNT {
        return Err(Error::LandmarkCount(landmarks.len()));
    }
    let per: Vec<f64> = landmarks.iter().map(|l| (truth.apply(l) - estimated.apply(l)).norm()).collect();
    let mean = per.iter().sum::<f64>() / LANDMARK_COUNT as f64;
    Ok((per, mean))
}

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimes {
    pub projection: f64,
    pub pose: f64,
    pub clusters: f64,
    pub cluster_optimization: f64,
    pub coherency: f64,
    pub final_optimization: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterCounts {
    pub base: usize,
    pub augmented: usize,
    pub surviving: usize,
}

/// Landmark evaluation against a known ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkEvaluation {
    pub per_landmark_mm: Vec<f64>,
    pub mean_mm: f64,
    pub initial_mean_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationReport {
    pub method: String,
    pub initial_params: TransformParams,
    pub final_params: TransformParams,
    /// Mesh → CT.
    pub final_transform: RigidTransform,
    pub final_value: f64,
    pub counts: ClusterCounts,
    pub survivors: Vec<usize>,
    pub elimination_log: Vec<EliminationStep>,
    pub seed: u64,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evaluation: Option<LandmarkEvaluation>,
    pub runtime_s: StageTimes,
}

impl RegistrationReport {
    /// Fills in the landmark evaluation for a known ground truth.
    pub fn evaluate(&mut self, landmarks: &[Vec3], truth: &RigidTransform) -> Result<&LandmarkEvaluation> {
        let (per, mean) = landmark_error(landmarks, &self.final_transform, truth)?;
        let (_, initial) = landmark_error(landmarks, &self.initial_params.to_transform(), truth)?;
        Ok(self.evaluation.insert(LandmarkEvaluation {
            per_landmark_mm: per,
            mean_mm: mean,
            initial_mean_mm: initial,
        }))
    }

    /// JSON with all wall-clock fields zeroed, for reproducibility checks.
    pub fn without_runtimes(&self) -> RegistrationReport {
        RegistrationReport {
            runtime_s: StageTimes::default(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub radius_mm: f64,
    pub mean_error_mm: f64,
    pub runtime_s: f64,
    pub seed: u64,
}

pub const SWEEP_CSV_HEADER: &str = "radius_mm,mean_error_mm,runtime_s,seed";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.radius_mm, r.mean_error_mm, r.runtime_s, r.seed);
    }
    out
}

/// Per-radius cohort means of error and runtime, in input radius order.
pub fn sweep_summary(rows: &[SweepRow]) -> Vec<(f64, f64, f64)> {
    let mut radii: Vec<f64> = Vec::new();
    for r in rows {
        if !radii.contains(&r.radius_mm) {
            radii.push(r.radius_mm);
        }
    }
    radii
        .into_iter()
        .map(|rad| {
            let sel: Vec<&SweepRow> = rows.iter().filter(|r| r.radius_mm == rad).collect();
            let n = sel.len() as f64;
            (
                rad,
                sel.iter().map(|r| r.mean_error_mm).sum::<f64>() / n,
                sel.iter().map(|r| r.runtime_s).sum::<f64>() / n,
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::params_to_transform;

    fn landmarks() -> Vec<Vec3> {
        (0..10).map(|i| Vec3::new(i as f64, (i * i) as f64 * 0.1, -(i as f64))).collect()
    }

    #[test]
    fn identical_transforms_give_zero() {
        let t = params_to_transform(&TransformParams::new(0.1, 0.2, 0.3, 1.0, 2.0, 3.0));
        let (per, mean) = landmark_error(&landmarks(), &t, &t).unwrap();
        assert!(per.iter().all(|&e| e == 0.0) && mean == 0.0);
    }

    #[test]
    fn pure_translation_gives_its_length() {
        let t = RigidTransform::identity();
        let e = RigidTransform::from_translation(Vec3::new(0.0, 2.0, 0.0));
        let (per, mean) = landmark_error(&landmarks(), &e, &t).unwrap();
        assert!(per.iter().all(|&x| (x - 2.0).abs() < 1e-12));
        assert!((mean - 2.0).abs() < 1e-12);
    }

    #[test]
    fn wrong_landmark_count() {
        let t = RigidTransform::identity();
        assert!(matches!(landmark_error(&landmarks()[..9], &t, &t), Err(Error::LandmarkCount(9))));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let rows = [SweepRow {
            radius_mm: 10.0,
            mean_error_mm: 0.25,
            runtime_s: 1.5,
            seed: 3,
        }];
        let csv = sweep_csv(&rows);
        assert_eq!(csv, "radius_mm,mean_error_mm,runtime_s,seed\n10,0.25,1.5,3\n");
        assert_eq!(sweep_summary(&rows), vec![(10.0, 0.25, 1.5)]);
    }
}
