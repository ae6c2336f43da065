//! End-to-end registration: projection, pose cues, initial alignment, cluster
//! optimisation, coherency selection and final refinement.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{augment_stochastic, generate_clusters, Cluster};
use crate::coherency::{final_registration, select_optimal_clusters, Selection};
use crate::error::{Error, Result};
use crate::eval::{ClusterCounts, RegistrationReport, StageTimes};
use crate::geometry::{pca_axes, RigidTransform, TransformParams, TriMesh};
use crate::icp::{extract_isosurface, icp, PointCloud, DEFAULT_ISO};
use crate::optimize::SimplexOptions;
use crate::pose::{
    ct_cue_frame, heuristic_pose_estimate, initial_transform, model_cue_frame, CueFile, CueSource, ImageKind, Jaw,
    PoseCue,
};
use crate::projection::{depth_image, PlaneFrame, DEFAULT_DEPTH_PIXEL_SIZE};
use crate::similarity::{optimize_cluster, Fit};
use crate::volume::{mip_project_x, CtVolume, Image2D};

pub const DEFAULT_RADIUS: f64 = 10.0;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegisterOptions {
    pub radius: f64,
    pub seed: u64,
    pub stochastic: bool,
    pub simplex: SimplexOptions,
    /// Worker threads for the per-cluster stage; `None` uses the global pool.
    pub threads: Option<usize>,
    pub depth_pixel_size: f64,
}

impl Default for RegisterOptions {
    fn default() -> Self {
        RegisterOptions {
            radius: DEFAULT_RADIUS,
            seed: DEFAULT_SEED,
            stochastic: true,
            simplex: SimplexOptions::default(),
            threads: None,
            depth_pixel_size: DEFAULT_DEPTH_PIXEL_SIZE,
        }
    }
}

impl RegisterOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("radius must be positive, got {}", self.radius)));
        }
        if !(self.depth_pixel_size > 0.0) {
            return Err(Error::InvalidArgument("depth pixel size must be positive".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidArgument("threads must be at least 1".into()));
        }
        self.simplex.validate()
    }
}

/// Projections, the cues used, and the pose they imply.
#[derive(Debug, Clone)]
pub struct InitialPose {
    pub transform: RigidTransform,
    pub depth: Image2D,
    pub frame: PlaneFrame,
    pub mip: Image2D,
    pub model_cue: PoseCue,
    pub ct_cue: PoseCue,
    /// Seconds spent rendering both projections and on the cues plus alignment.
    pub projection_s: f64,
    pub pose_s: f64,
}

/// Renders both projections, takes cues from `cues` where present (falling
/// back to the heuristic estimator) and lifts them into the initial transform.
pub fn initial_pose(
    mesh: &TriMesh,
    vol: &CtVolume,
    jaw: Jaw,
    cues: Option<&CueFile>,
    pixel_size: f64,
) -> Result<InitialPose> {
    let start = Instant::now();
    let (depth, own_frame) = depth_image(mesh, &pca_axes(mesh)?, pixel_size)?;
    let frame = cues.and_then(|c| c.frame).unwrap_or(own_frame);
    let mip = mip_project_x(vol);
    let projection_s = start.elapsed().as_secs_f64();
    let ct_source = CueSource::ct_for(jaw);
    let model_cue = match cues.and_then(|c| c.find(CueSource::ModelDepth)) {
        Some(c) => *c,
        None => heuristic_pose_estimate(&depth, ImageKind::Depth)?[0],
    };
    let ct_cue = match cues.and_then(|c| c.find(ct_source)) {
        Some(c) => *c,
        None => *heuristic_pose_estimate(&mip, ImageKind::Mip)?
            .iter()
            .find(|c| c.source == ct_source)
            .expect("MIP estimate yields both jaws"),
    };
    let transform = initial_transform(
        &model_cue_frame(&frame, &depth, &model_cue),
        &ct_cue_frame(&mip, vol, &ct_cue, jaw),
    )?;
    Ok(InitialPose {
        transform,
        depth,
        frame,
        mip,
        model_cue,
        ct_cue,
        projection_s,
        pose_s: start.elapsed().as_secs_f64() - projection_s,
    })
}

/// Everything a registration run produced.
#[derive(Debug, Clone)]
pub struct Registration {
    pub report: RegistrationReport,
    pub initial: RigidTransform,
    pub clusters: Vec<Cluster>,
    pub cluster_fits: Vec<Fit>,
    pub selection: Selection,
    pub final_fit: Fit,
}

/// Full pipeline from mesh, volume and optional cue file.
pub fn register(
    mesh: &TriMesh,
    vol: &CtVolume,
    jaw: Jaw,
    cues: Option<&CueFile>,
    opts: &RegisterOptions,
) -> Result<Registration> {
    opts.validate()?;
    let init = initial_pose(mesh, vol, jaw, cues, opts.depth_pixel_size)?;
    let mut reg = register_from(mesh, vol, &init.transform, &init.frame, opts)?;
    let t = &mut reg.report.runtime_s;
    t.projection = init.projection_s;
    t.pose = init.pose_s;
    t.total += init.projection_s + init.pose_s;
    Ok(reg)
}

/// Cluster stage onward, from a given initial pose and depth frame.
pub fn register_from(
    mesh: &TriMesh,
    vol: &CtVolume,
    initial: &RigidTransform,
    frame: &PlaneFrame,
    opts: &RegisterOptions,
) -> Result<Registration> {
    opts.validate()?;
    let mut times = StageTimes::default();
    let t0 = Instant::now();
    let base = generate_clusters(mesh, frame, opts.radius)?;
    let n_base = base.len();
    let clusters = if opts.stochastic {
        augment_stochastic(&base, mesh, opts.radius, opts.seed)
    } else {
        base
    };
    if clusters.len() < 3 {
        return Err(Error::TooFewClusters(clusters.len()));
    }
    times.clusters = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let run = || -> Result<Vec<Fit>> {
        clusters
            .par_iter()
            .map(|c| optimize_cluster(mesh, vol, c, initial, &opts.simplex))
            .collect()
    };
    let fits = match opts.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start {n} threads: {e}")))?
            .install(run)?,
        None => run()?,
    };
    times.cluster_optimization = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let transforms: Vec<RigidTransform> = fits.iter().map(|f| f.transform).collect();
    let selection = select_optimal_clusters(mesh, &clusters, &transforms)?;
    times.coherency = t2.elapsed().as_secs_f64();

    let t3 = Instant::now();
    let final_fit = final_registration(mesh, vol, &clusters, &transforms, &selection, &opts.simplex)?;
    times.final_optimization = t3.elapsed().as_secs_f64();
    times.total = t0.elapsed().as_secs_f64();

    let report = RegistrationReport {
        method: if opts.stochastic { "clusters" } else { "clusters_no_stochastic" }.into(),
        initial_params: TransformParams::from_transform(initial),
        final_params: TransformParams::from_transform(&final_fit.transform),
        final_transform: final_fit.transform,
        final_value: final_fit.value,
        counts: ClusterCounts {
            base: n_base,
            augmented: clusters.len() - n_base,
            surviving: selection.survivors.len(),
        },
        survivors: selection.survivors.clone(),
        elimination_log: selection.log.clone(),
        seed: opts.seed,
        config: serde_json::to_value(opts).expect("options serialise"),
        evaluation: None,
        runtime_s: times,
    };
    Ok(Registration {
        report,
        initial: *initial,
        clusters,
        cluster_fits: fits,
        selection,
        final_fit,
    })
}

/// The baseline: ICP of the mesh vertices onto the CT iso-surface from `initial`.
pub fn register_icp(mesh: &TriMesh, vol: &CtVolume, initial: &RigidTransform) -> Result<RegistrationReport> {
    let start = Instant::now();
    let target = extract_isosurface(vol, DEFAULT_ISO)?;
    let source = PointCloud {
        points: mesh.vertices().to_vec(),
    };
    let r = icp(&source, &target, initial, 100, 1e-6)?;
    let total = start.elapsed().as_secs_f64();
    Ok(RegistrationReport {
        method: "icp".into(),
        initial_params: TransformParams::from_transform(initial),
        final_params: TransformParams::from_transform(&r.transform),
        final_transform: r.transform,
        final_value: *r.rms_history.last().expect("history is non-empty"),
        counts: ClusterCounts::default(),
        survivors: Vec::new(),
        elimination_log: Vec::new(),
        seed: 0,
        config: serde_json::json!({ "iso": DEFAULT_ISO, "max_iter": 100, "tol": 1e-6 }),
        evaluation: None,
        runtime_s: StageTimes {
            total,
            final_optimization: total,
            ..Default::default()
        },
    })
}
