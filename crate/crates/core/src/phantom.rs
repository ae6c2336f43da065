//! Synthetic dental-arch phantoms: a CT volume, the matching surface mesh
//! moved by a known pose, landmarks, exact pose cues and artifact masks.
//!
//! Geometry is built in a jaw-local frame (x left→right, y posterior→anterior,
//! z toward the crowns of a lower jaw) with the arch symmetric about x = 0.
//! The upper jaw is the same geometry turned 180° about y, so its crowns
//! face −z. The CT grid is centred on x = 0, which puts the MIP plane on the
//! arch's plane of symmetry.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pca_axes, RigidTransform, TransformParams, TriMesh, Vec3};
use crate::pose::{CueFile, CueSource, Jaw, PoseCue};
use crate::projection::{depth_image, PlaneFrame, DEFAULT_DEPTH_PIXEL_SIZE};
use crate::volume::{CtVolume, Image2D};

/// Mesiodistal crown width ranges (mm) from the midline backwards.
const TOOTH_WIDTHS: [(f64, f64); 8] = [
    (4.6, 5.4),
    (4.8, 5.6),
    (5.6, 6.4),
    (5.8, 6.6),
    (5.8, 6.6),
    (8.0, 8.8),
    (7.6, 8.4),
    (7.0, 7.8),
];
/// Buccolingual crown width ranges (mm), same order.
const TOOTH_DEPTHS: [(f64, f64); 8] = [
    (5.5, 6.5),
    (5.5, 6.5),
    (7.0, 8.0),
    (7.0, 8.0),
    (7.2, 8.2),
    (9.5, 10.5),
    (9.2, 10.2),
    (8.8, 9.8),
];
const TOOTH_GAP: f64 = 0.5;
/// Crown footprint superellipse exponent and vertical profile exponent.
const FOOTPRINT_EXP: f64 = 2.5;
const PROFILE_EXP: f64 = 3.0;
/// Streaks and metal blooming never reach farther than this from a metal core (mm).
pub const ARTIFACT_REACH: f64 = 25.0;
/// Exponential decay length of streak amplitude away from the core (mm).
const STREAK_DECAY: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub arch_width: f64,
    pub arch_depth: f64,
    pub tooth_count: usize,
    /// Crown height range above the gum line (mm).
    pub crown_height: (f64, f64),
    /// Crown base depth below the gum line (mm).
    pub crown_embed: f64,
    /// Half-width of the bone ridge around the arch (mm).
    pub bone_half_width: f64,
    pub bone_height: f64,
    /// Half-width of the scanned gingiva band around the arch (mm).
    pub mesh_half_width: f64,
    pub jaw: Jaw,
    pub soft_hu: f64,
    pub bone_hu: f64,
    pub tooth_hu: f64,
    pub metal_hu: f64,
    pub artifact_tooth_fraction: f64,
    pub streak_count: usize,
    pub streak_intensity: f64,
    /// Scale of the metal core relative to the crown footprint.
    pub metal_bloom: f64,
    pub voxel_spacing: f64,
    /// Width of the smooth intensity transition across material boundaries (mm).
    pub edge_width: f64,
    pub mesh_spacing: f64,
    pub mesh_noise_sigma: f64,
    /// Pose applied to the mesh after generation; registration must recover its inverse.
    pub gt_params: TransformParams,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            arch_width: 60.0,
            arch_depth: 40.0,
            tooth_count: 14,
            crown_height: (5.5, 7.0),
            crown_embed: 1.0,
            bone_half_width: 12.0,
            bone_height: 12.0,
            mesh_half_width: 7.5,
            jaw: Jaw::Lower,
            soft_hu: 0.0,
            bone_hu: 1400.0,
            tooth_hu: 2200.0,
            metal_hu: 8000.0,
            artifact_tooth_fraction: 0.0,
            streak_count: 12,
            streak_intensity: 3000.0,
            metal_bloom: 1.3,
            voxel_spacing: 0.4,
            edge_width: 1.2,
            mesh_spacing: 0.6,
            mesh_noise_sigma: 0.0,
            gt_params: TransformParams::default(),
            seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.soft_hu < self.bone_hu && self.bone_hu < self.tooth_hu && self.tooth_hu < self.metal_hu) {
            return bad("intensities must satisfy soft < bone < tooth < metal".into());
        }
        if !(0.0..=1.0).contains(&self.artifact_tooth_fraction) {
            return bad(format!("artifact_tooth_fraction {} outside [0, 1]", self.artifact_tooth_fraction));
        }
        if self.tooth_count % 2 != 0 || !(10..=2 * TOOTH_WIDTHS.len()).contains(&self.tooth_count) {
            return bad(format!("tooth_count must be even and in 10..=16, got {}", self.tooth_count));
        }
        let positive = [
            ("arch_width", self.arch_width),
            ("arch_depth", self.arch_depth),
            ("voxel_spacing", self.voxel_spacing),
            ("edge_width", self.edge_width),
            ("mesh_spacing", self.mesh_spacing),
            ("bone_half_width", self.bone_half_width),
            ("bone_height", self.bone_height),
            ("mesh_half_width", self.mesh_half_width),
            ("crown_height", self.crown_height.0),
            ("metal_bloom", self.metal_bloom),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if self.crown_height.1 < self.crown_height.0 {
            return bad("crown_height range is reversed".into());
        }
        if !(self.mesh_noise_sigma >= 0.0) || !(self.streak_intensity >= 0.0) || self.crown_embed < 0.0 {
            return bad("mesh_noise_sigma, streak_intensity and crown_embed must be non-negative".into());
        }
        if self.mesh_half_width > self.bone_half_width {
            return bad("mesh_half_width must not exceed bone_half_width".into());
        }
        Ok(())
    }
}

/// One crown, in the jaw-local frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToothSpec {
    pub center: [f64; 2],
    /// Angle of the arch tangent at the tooth.
    pub tangent_angle: f64,
    /// Half-widths along the tangent and across the arch.
    pub half_width: f64,
    pub half_depth: f64,
    pub base_z: f64,
    pub height: f64,
    pub artifact: bool,
    /// Angular offset of the streak pattern.
    pub streak_phase: f64,
}

impl ToothSpec {
    fn local(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.center[0], y - self.center[1]);
        let (c, s) = (self.tangent_angle.cos(), self.tangent_angle.sin());
        (dx * c + dy * s, -dx * s + dy * c)
    }

    /// Crown top height at (x, y), if inside the footprint.
    fn top(&self, x: f64, y: f64) -> Option<f64> {
        let (u, v) = self.local(x, y);
        let rho = (u / self.half_width).abs().powf(FOOTPRINT_EXP) + (v / self.half_depth).abs().powf(FOOTPRINT_EXP);
        (rho < 1.0).then(|| self.base_z + self.height * (1.0 - rho).powf(1.0 / PROFILE_EXP))
    }

    pub fn tip(&self) -> Vec3 {
        Vec3::new(self.center[0], self.center[1], self.base_z + self.height)
    }

    /// Centre of the metal core of an artifact tooth.
    fn core_center(&self) -> Vec3 {
        Vec3::new(self.center[0], self.center[1], self.base_z + 0.55 * self.height)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomTruth {
    pub jaw: Jaw,
    /// Mesh → CT.
    pub gt_transform: RigidTransform,
    pub gt_params: TransformParams,
    /// Crown tips in mesh coordinates.
    pub landmarks: Vec<Vec3>,
    /// Exact cues for the mesh depth image and the CT projection.
    pub gt_cues: CueFile,
    /// Per mesh vertex: lies on an artifact tooth.
    #[serde(with = "mask_as_ids")]
    pub artifact_mask: Vec<bool>,
    /// Arch centre in CT coordinates.
    pub arch_center: Vec3,
    pub teeth: Vec<ToothSpec>,
}

impl PhantomTruth {
    pub fn artifact_vertex_ids(&self) -> Vec<usize> {
        self.artifact_mask.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i).collect()
    }
}

mod mask_as_ids {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Ids {
        vertex_count: usize,
        artifact_vertex_ids: Vec<usize>,
    }

    pub fn serialize<S: Serializer>(mask: &[bool], s: S) -> Result<S::Ok, S::Error> {
        Ids {
            vertex_count: mask.len(),
            artifact_vertex_ids: mask.iter().enumerate().filter(|(_, &a)| a).map(|(i, _)| i).collect(),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<bool>, D::Error> {
        let ids = Ids::deserialize(d)?;
        let mut mask = vec![false; ids.vertex_count];
        for i in ids.artifact_vertex_ids {
            if i >= mask.len() {
                return Err(serde::de::Error::custom(format!("artifact vertex id {i} out of range")));
            }
            mask[i] = true;
        }
        Ok(mask)
    }
}

/// Dense polyline of the parabolic arch `x = w/2·t, y = d/2 − d·t²`.
struct Arch {
    points: Vec<[f64; 2]>,
    /// Cumulative arc length at each point.
    arc: Vec<f64>,
}

impl Arch {
    fn new(width: f64, depth: f64) -> Arch {
        let n = 4001;
        let mut points = Vec::with_capacity(n);
        let mut arc = Vec::with_capacity(n);
        for k in 0..n {
            let t = -1.0 + 2.0 * k as f64 / (n - 1) as f64;
            let p = [0.5 * width * t, 0.5 * depth - depth * t * t];
            let s = match points.last() {
                Some(q) => arc[k - 1] + dist2(&p, q),
                None => 0.0,
            };
            points.push(p);
            arc.push(s);
        }
        Arch { points, arc }
    }

    fn length(&self) -> f64 {
        *self.arc.last().unwrap()
    }

    /// Point and tangent angle at arc length `s`.
    fn at(&self, s: f64) -> ([f64; 2], f64) {
        let k = self.arc.partition_point(|&a| a < s).clamp(1, self.points.len() - 1);
        let (a, b) = (self.points[k - 1], self.points[k]);
        let f = ((s - self.arc[k - 1]) / (self.arc[k] - self.arc[k - 1])).clamp(0.0, 1.0);
        ([a[0] + f * (b[0] - a[0]), a[1] + f * (b[1] - a[1])], (b[1] - a[1]).atan2(b[0] - a[0]))
    }

    /// Distance from (x, y) to the arch.
    fn distance(&self, x: f64, y: f64) -> f64 {
        let mut best = (f64::INFINITY, 0);
        for (k, p) in self.points.iter().enumerate().step_by(8) {
            let d = (p[0] - x).powi(2) + (p[1] - y).powi(2);
            if d < best.0 {
                best = (d, k);
            }
        }
        let lo = best.1.saturating_sub(8);
        let hi = (best.1 + 8).min(self.points.len() - 1);
        let mut d2 = f64::INFINITY;
        for k in lo..hi {
            let (a, b) = (self.points[k], self.points[k + 1]);
            let (ex, ey) = (b[0] - a[0], b[1] - a[1]);
            let t = (((x - a[0]) * ex + (y - a[1]) * ey) / (ex * ex + ey * ey)).clamp(0.0, 1.0);
            d2 = d2.min((a[0] + t * ex - x).powi(2) + (a[1] + t * ey - y).powi(2));
        }
        d2.sqrt()
    }
}

fn dist2(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Jaw-local surface model shared by the mesh and the volume.
struct Anatomy {
    arch: Arch,
    teeth: Vec<ToothSpec>,
    ridge_k: f64,
    bone_half_width: f64,
    floor_z: f64,
}

impl Anatomy {
    fn build(cfg: &PhantomConfig, rng: &mut ChaCha8Rng) -> Result<Anatomy> {
        let arch = Arch::new(cfg.arch_width, cfg.arch_depth);
        let half = cfg.tooth_count / 2;
        let mid = arch.length() / 2.0;
        let mut side = Vec::with_capacity(half);
        let mut s = TOOTH_GAP / 2.0;
        for k in 0..half {
            let w = rng.gen_range(TOOTH_WIDTHS[k].0..=TOOTH_WIDTHS[k].1);
            let d = rng.gen_range(TOOTH_DEPTHS[k].0..=TOOTH_DEPTHS[k].1);
            let h = rng.gen_range(cfg.crown_height.0..=cfg.crown_height.1);
            side.push((s + w / 2.0, w / 2.0, d / 2.0, h));
            s += w + TOOTH_GAP;
        }
        if s - TOOTH_GAP / 2.0 > mid {
            return Err(Error::OverlappingTeeth(format!(
                "{} teeth need {:.1} mm per side but the arch half-length is {:.1} mm",
                cfg.tooth_count, s, mid
            )));
        }
        // Left side from the back, then the mirrored right side.
        let mut teeth = Vec::with_capacity(cfg.tooth_count);
        let order: Vec<(f64, usize)> = (0..half)
            .rev()
            .map(|k| (-1.0, k))
            .chain((0..half).map(|k| (1.0, k)))
            .collect();
        for (sign, k) in order {
            let (off, hw, hd, h) = side[k];
            let (c, ang) = arch.at(mid + sign * off);
            teeth.push(ToothSpec {
                center: c,
                tangent_angle: ang,
                half_width: hw,
                half_depth: hd,
                base_z: -cfg.crown_embed,
                height: h + cfg.crown_embed,
                artifact: false,
                streak_phase: 0.0,
            });
        }
        for pair in teeth.windows(2) {
            let gap = dist2(&pair[0].center, &pair[1].center) - pair[0].half_width - pair[1].half_width;
            if gap < 0.1 {
                return Err(Error::OverlappingTeeth(format!(
                    "crowns at ({:.1}, {:.1}) and ({:.1}, {:.1}) overlap",
                    pair[0].center[0], pair[0].center[1], pair[1].center[0], pair[1].center[1]
                )));
            }
        }
        let n_art = (cfg.artifact_tooth_fraction * cfg.tooth_count as f64).round() as usize;
        let mut idx: Vec<usize> = (0..teeth.len()).collect();
        idx.shuffle(rng);
        for &i in &idx[..n_art] {
            teeth[i].artifact = true;
            teeth[i].streak_phase = rng.gen_range(0.0..std::f64::consts::TAU);
        }
        Ok(Anatomy {
            arch,
            teeth,
            ridge_k: cfg.bone_height / cfg.bone_half_width.powi(2),
            bone_half_width: cfg.bone_half_width,
            floor_z: -cfg.bone_height,
        })
    }

    /// Bone/gum ridge height, or `None` off the ridge.
    fn ridge(&self, d: f64) -> Option<f64> {
        (d <= self.bone_half_width).then(|| -self.ridge_k * d * d)
    }

    /// (ridge height, crown top) at a column.
    fn column(&self, x: f64, y: f64) -> (Option<f64>, Option<f64>) {
        let r = self.ridge(self.arch.distance(x, y));
        let t = self.teeth.iter().find_map(|t| {
            let (u, v) = t.local(x, y);
            if u.abs() < t.half_width && v.abs() < t.half_depth {
                t.top(x, y)
            } else {
                None
            }
        });
        (r, t)
    }

    fn surface(&self, x: f64, y: f64) -> Option<f64> {
        match self.column(x, y) {
            (Some(r), Some(t)) => Some(r.max(t)),
            (r, t) => r.or(t),
        }
    }

    fn arch_center(&self) -> [f64; 2] {
        let n = self.teeth.len() as f64;
        [0.0, self.teeth.iter().map(|t| t.center[1]).sum::<f64>() / n]
    }
}

/// Jaw-local → CT world: identity for the lower jaw, a half turn about y for the upper.
fn jaw_transform(jaw: Jaw) -> RigidTransform {
    match jaw {
        Jaw::Lower => RigidTransform::identity(),
        Jaw::Upper => RigidTransform::new(nalgebra::Matrix3::from_diagonal(&Vec3::new(-1.0, 1.0, -1.0)), Vec3::zeros()),
    }
}

fn smooth_step(phi: f64, width: f64) -> f64 {
    let s = (phi / width + 0.5).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Generates the clean or artifact-laden phantom. A pure function of `cfg`.
pub fn generate_phantom(cfg: &PhantomConfig) -> Result<(CtVolume, TriMesh, PhantomTruth)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let anatomy = Anatomy::build(cfg, &mut rng)?;
    let jaw = jaw_transform(cfg.jaw);

    let clean = voxelize(cfg, &anatomy);
    let ct_mesh = build_mesh(cfg, &anatomy, &jaw, &mut rng)?;

    let mesh_pose = cfg.gt_params.to_transform();
    let gt_transform = mesh_pose.inverse();
    let mesh = ct_mesh.transformed(&mesh_pose);

    let artifact_mask: Vec<bool> = ct_mesh
        .vertices()
        .iter()
        .map(|p| {
            let l = jaw.inverse().apply(p);
            anatomy.teeth.iter().any(|t| t.artifact && near_footprint(t, l.x, l.y, 1.0))
        })
        .collect();

    let landmarks = landmark_teeth(cfg.tooth_count)
        .into_iter()
        .map(|i| mesh_pose.apply(&jaw.apply(&anatomy.teeth[i].tip())))
        .collect();
    let ac = anatomy.arch_center();
    let arch_center = Vec3::new(ac[0], ac[1], 0.0);

    let mut truth = PhantomTruth {
        jaw: cfg.jaw,
        gt_transform,
        gt_params: cfg.gt_params,
        landmarks,
        gt_cues: CueFile {
            cues: Vec::new(),
            frame: None,
            image_ref: None,
        },
        artifact_mask,
        arch_center,
        teeth: anatomy.teeth.clone(),
    };
    truth.gt_cues = ground_truth_cues(&mesh, &clean, &truth)?;
    let vol = inject_artifacts(&clean, &truth, cfg);
    Ok((vol, mesh, truth))
}

/// Teeth whose tips serve as the ten landmarks: five per side, spread from
/// the midline backwards.
fn landmark_teeth(tooth_count: usize) -> Vec<usize> {
    let half = tooth_count / 2;
    let mut out = Vec::with_capacity(10);
    for j in 0..5 {
        let k = ((j * (half - 1)) as f64 / 4.0).round() as usize;
        out.push(half - 1 - k);
        out.push(half + k);
    }
    out.sort_unstable();
    out
}

fn near_footprint(t: &ToothSpec, x: f64, y: f64, margin: f64) -> bool {
    let (u, v) = t.local(x, y);
    let (a, b) = (t.half_width + margin, t.half_depth + margin);
    (u / a).abs().powf(FOOTPRINT_EXP) + (v / b).abs().powf(FOOTPRINT_EXP) < 1.0
}

fn volume_grid(cfg: &PhantomConfig, anatomy: &Anatomy) -> ([usize; 3], Vec3, Vec3) {
    let s = cfg.voxel_spacing;
    let margin = 2.0;
    let half_x = cfg.arch_width / 2.0 + cfg.bone_half_width + margin;
    let y0 = -cfg.arch_depth / 2.0 - cfg.bone_half_width - margin;
    let y1 = cfg.arch_depth / 2.0 + cfg.bone_half_width + margin;
    let top = anatomy.teeth.iter().map(|t| t.base_z + t.height).fold(0.0, f64::max) + margin + 1.0;
    let bottom = anatomy.floor_z - margin;
    let nx = (2.0 * half_x / s).ceil() as usize + 1;
    let ny = ((y1 - y0) / s).ceil() as usize + 1;
    let nz = ((top - bottom) / s).ceil() as usize + 1;
    let ox = -((nx - 1) as f64) * s / 2.0;
    let oz = match cfg.jaw {
        Jaw::Lower => bottom,
        Jaw::Upper => -top,
    };
    ([nx, ny, nz], Vec3::new(s, s, s), Vec3::new(ox, y0, oz))
}

/// Column data for the voxelizer: surface heights and slope factors.
struct ColumnInfo {
    ridge: Option<(f64, f64)>,
    crown: Option<(f64, f64)>,
}

fn slope_factor(f: impl Fn(f64, f64) -> Option<f64>, x: f64, y: f64, h: f64) -> f64 {
    let e = 0.05;
    let gx = match (f(x + e, y), f(x - e, y)) {
        (Some(a), Some(b)) => (a - b) / (2.0 * e),
        (Some(a), None) => (a - h) / e,
        (None, Some(b)) => (h - b) / e,
        _ => 0.0,
    };
    let gy = match (f(x, y + e), f(x, y - e)) {
        (Some(a), Some(b)) => (a - b) / (2.0 * e),
        (Some(a), None) => (a - h) / e,
        (None, Some(b)) => (h - b) / e,
        _ => 0.0,
    };
    (1.0 + gx * gx + gy * gy).sqrt()
}

fn voxelize(cfg: &PhantomConfig, anatomy: &Anatomy) -> CtVolume {
    let (dims, spacing, origin) = volume_grid(cfg, anatomy);
    let [nx, ny, nz] = dims;
    let sx = if cfg.jaw == Jaw::Upper { -1.0 } else { 1.0 };
    let columns: Vec<ColumnInfo> = (0..nx * ny)
        .map(|c| {
            let (i, j) = (c % nx, c / nx);
            let (x, y) = (sx * (origin.x + i as f64 * spacing.x), origin.y + j as f64 * spacing.y);
            let (r, t) = anatomy.column(x, y);
            let ridge_fn = |x: f64, y: f64| anatomy.ridge(anatomy.arch.distance(x, y));
            let crown_fn = |x: f64, y: f64| anatomy.column(x, y).1;
            ColumnInfo {
                ridge: r.map(|h| (h, slope_factor(ridge_fn, x, y, h))),
                crown: t.map(|h| (h, slope_factor(crown_fn, x, y, h))),
            }
        })
        .collect();
    let w = cfg.edge_width;
    let mut data = vec![cfg.soft_hu; nx * ny * nz];
    for k in 0..nz {
        let zw = origin.z + k as f64 * spacing.z;
        let z = if cfg.jaw == Jaw::Upper { -zw } else { zw };
        let floor = smooth_step(z - anatomy.floor_z, w);
        for j in 0..ny {
            for i in 0..nx {
                let col = &columns[j * nx + i];
                let a_r = col.ridge.map_or(0.0, |(h, f)| smooth_step((h - z) / f, w)) * floor;
                let a_t = col.crown.map_or(0.0, |(h, f)| smooth_step((h - z) / f, w)) * floor;
                let occupied = a_r.max(a_t);
                data[(k * ny + j) * nx + i] =
                    cfg.soft_hu * (1.0 - occupied) + cfg.bone_hu * a_r + cfg.tooth_hu * (a_t - a_r).max(0.0);
            }
        }
    }
    CtVolume::new(dims, spacing, origin, data)
        .expect("phantom grid is valid")
        .with_background(cfg.soft_hu)
}

fn build_mesh(cfg: &PhantomConfig, anatomy: &Anatomy, jaw: &RigidTransform, rng: &mut ChaCha8Rng) -> Result<TriMesh> {
    let h = cfg.mesh_spacing;
    let half_x = cfg.arch_width / 2.0 + cfg.mesh_half_width + h;
    let nx = (2.0 * half_x / h).ceil() as usize + 1;
    let y0 = -cfg.arch_depth / 2.0 - cfg.mesh_half_width - h;
    let ny = ((cfg.arch_depth + 2.0 * cfg.mesh_half_width + 2.0 * h) / h).ceil() as usize + 1;
    let x0 = -((nx - 1) as f64) * h / 2.0;

    let mut index = vec![usize::MAX; nx * ny];
    let mut verts = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let (x, y) = (x0 + i as f64 * h, y0 + j as f64 * h);
            if anatomy.arch.distance(x, y) <= cfg.mesh_half_width {
                if let Some(z) = anatomy.surface(x, y) {
                    index[j * nx + i] = verts.len();
                    verts.push(jaw.apply(&Vec3::new(x, y, z)));
                }
            }
        }
    }
    let mut tris = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let q = [index[j * nx + i], index[j * nx + i + 1], index[(j + 1) * nx + i], index[(j + 1) * nx + i + 1]];
            if q.iter().all(|&v| v != usize::MAX) {
                // Wound so normals point away from the crowns, into the tissue.
                tris.push([q[0], q[2], q[1]]);
                tris.push([q[1], q[2], q[3]]);
            }
        }
    }
    // Drop grid points that ended up in no triangle.
    let mut used = vec![false; verts.len()];
    tris.iter().flatten().for_each(|&v| used[v] = true);
    let mut remap = vec![usize::MAX; verts.len()];
    let mut kept = Vec::with_capacity(verts.len());
    for (i, v) in verts.into_iter().enumerate() {
        if used[i] {
            remap[i] = kept.len();
            kept.push(v);
        }
    }
    let mut verts = kept;
    let tris: Vec<[usize; 3]> = tris.into_iter().map(|t| t.map(|v| remap[v])).collect();
    if cfg.mesh_noise_sigma > 0.0 {
        let normal = Normal::new(0.0, cfg.mesh_noise_sigma).expect("sigma is finite");
        for v in &mut verts {
            *v += Vec3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        }
    }
    TriMesh::new(verts, tris)
}

/// Adds metal cores and streaks around the truth's artifact teeth. Voxels
/// farther than [`ARTIFACT_REACH`] from every metal core are left untouched.
pub fn inject_artifacts(vol: &CtVolume, truth: &PhantomTruth, cfg: &PhantomConfig) -> CtVolume {
    let jaw = jaw_transform(truth.jaw);
    let metal: Vec<(&ToothSpec, Vec3)> =
        truth.teeth.iter().filter(|t| t.artifact).map(|t| (t, jaw.apply(&t.core_center()))).collect();
    if metal.is_empty() {
        return vol.clone();
    }
    let mut out = vol.clone();
    let [nx, ny, nz] = vol.dims();
    let w = cfg.edge_width;
    let streaks = cfg.streak_count.max(1);
    for (t, c) in &metal {
        // Bloomed core: an ellipsoid around the crown.
        let b = cfg.metal_bloom;
        let axes = Vec3::new(b * t.half_width, b * t.half_depth, 0.6 * t.height);
        let zr = axes.z;
        let s = vol.spacing();
        let o = vol.origin();
        let lo = |a: f64, oo: f64, ss: f64| (((a - ARTIFACT_REACH - oo) / ss).floor().max(0.0)) as usize;
        let hi = |a: f64, oo: f64, ss: f64, n: usize| ((((a + ARTIFACT_REACH - oo) / ss).ceil()) as usize).min(n - 1);
        let (ci, cj, ck) = (lo(c.x, o.x, s.x), lo(c.y, o.y, s.y), lo(c.z, o.z, s.z));
        let (di, dj, dk) = (hi(c.x, o.x, s.x, nx), hi(c.y, o.y, s.y, ny), hi(c.z, o.z, s.z, nz));
        let (ca, sa) = (t.tangent_angle.cos(), t.tangent_angle.sin());
        let flip = if truth.jaw == Jaw::Upper { -1.0 } else { 1.0 };
        for k in ck..=dk {
            for j in cj..=dj {
                for i in ci..=di {
                    let p = vol.voxel_center(i, j, k);
                    let d = p - c;
                    let dist = d.norm();
                    if dist > ARTIFACT_REACH {
                        continue;
                    }
                    // Core membership in the tooth's frame (x mirrored for the upper jaw).
                    let (lx, ly) = (flip * d.x, d.y);
                    let u = lx * ca + ly * sa;
                    let v = -lx * sa + ly * ca;
                    let e = ((u / axes.x).powi(2) + (v / axes.y).powi(2) + (d.z / axes.z).powi(2)).sqrt();
                    let core = smooth_step((1.0 - e) * axes.x.min(axes.y), w);
                    let idx = out.index(i, j, k);
                    let mut val = out.data()[idx];
                    val += (cfg.metal_hu - val) * core;
                    // Alternating bright/dark rays in axial planes through the core.
                    let r = (d.x * d.x + d.y * d.y).sqrt();
                    let outside = r - axes.x.max(axes.y);
                    if outside > 0.0 && d.z.abs() < zr + w {
                        let theta = d.y.atan2(d.x) - t.streak_phase;
                        let sector = std::f64::consts::TAU / streaks as f64;
                        let kf = (theta / sector).round();
                        let off = (theta - kf * sector) * r;
                        let sign = if (kf as i64).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                        let falloff = (-outside / STREAK_DECAY).exp() * (1.0 - dist / ARTIFACT_REACH).max(0.0);
                        let zfade = smooth_step(zr - d.z.abs(), w);
                        val += sign * cfg.streak_intensity * (-(off * off) / (2.0 * 0.6 * 0.6)).exp() * falloff * zfade;
                    }
                    out.data_mut()[idx] = val;
                }
            }
        }
    }
    out
}

/// Exact cues for a phantom: the model cue on the mesh's own depth frame and
/// the CT cue on the x-MIP, describing the same occlusal line through the arch
/// centre so that `initial_transform` of the lifted pair reproduces the ground truth.
pub fn ground_truth_cues(mesh: &TriMesh, vol: &CtVolume, truth: &PhantomTruth) -> Result<CueFile> {
    let (_, frame) = depth_image(mesh, &pca_axes(mesh)?, DEFAULT_DEPTH_PIXEL_SIZE)?;
    let g = truth.gt_transform;
    let normal_ct = g.apply_normal(&frame.normal);
    let origin_ct = g.apply(&frame.origin);
    let x_mid = vol.center().x;
    let yc = truth.arch_center.y;
    if normal_ct.z.abs() < 1e-6 {
        return Err(Error::Degenerate("occlusal plane is vertical in the CT".into()));
    }
    let z = origin_ct.z - (normal_ct.x * (x_mid - origin_ct.x) + normal_ct.y * (yc - origin_ct.y)) / normal_ct.z;
    let p_ct = Vec3::new(x_mid, yc, z);
    let mut d_ct = Vec3::x().cross(&normal_ct).normalize();
    if d_ct.y < 0.0 {
        d_ct = -d_ct;
    }
    let ps = vol.spacing().y.min(vol.spacing().z);
    let o = vol.origin();
    let ct_cue = PoseCue {
        source: CueSource::ct_for(truth.jaw),
        point: [(p_ct.y - o.y) / ps, (p_ct.z - o.z) / ps],
        angle: d_ct.z.atan2(d_ct.y),
    };
    let inv = g.inverse();
    let p_model = inv.apply(&p_ct);
    let d_model = inv.apply_normal(&d_ct);
    let model_cue = PoseCue {
        source: CueSource::ModelDepth,
        point: frame.project(&p_model),
        angle: frame.angle_of(&d_model),
    };
    Ok(CueFile {
        cues: vec![model_cue, ct_cue],
        frame: Some(frame),
        image_ref: None,
    })
}

/// Renders the depth image a phantom's model cue refers to.
pub fn phantom_depth_image(mesh: &TriMesh) -> Result<(Image2D, PlaneFrame)> {
    depth_image(mesh, &pca_axes(mesh)?, DEFAULT_DEPTH_PIXEL_SIZE)
}

/// Cues with uniform noise of up to `max_mm` on every point coordinate and
/// `max_deg` on every angle, as a stand-in for an imperfect cue estimator.
pub fn noisy_cues(cues: &CueFile, vol: &CtVolume, rng: &mut impl Rng, max_mm: f64, max_deg: f64) -> CueFile {
    let ct_px = vol.spacing().y.min(vol.spacing().z);
    let model_px = cues.frame.map_or(DEFAULT_DEPTH_PIXEL_SIZE, |f| f.pixel_size);
    let mut out = cues.clone();
    for c in &mut out.cues {
        let px = if c.source == CueSource::ModelDepth { model_px } else { ct_px };
        for v in &mut c.point {
            *v += rng.gen_range(-max_mm..=max_mm) / px;
        }
        c.angle += rng.gen_range(-max_deg..=max_deg).to_radians();
    }
    out
}

/// Random ground-truth pose within ±`max_deg` per axis and ±`max_mm` per translation.
pub fn random_gt_params(rng: &mut impl Rng, max_deg: f64, max_mm: f64) -> TransformParams {
    let r = max_deg.to_radians();
    TransformParams::new(
        rng.gen_range(-r..=r),
        rng.gen_range(-r..=r),
        rng.gen_range(-r..=r),
        rng.gen_range(-max_mm..=max_mm),
        rng.gen_range(-max_mm..=max_mm),
        rng.gen_range(-max_mm..=max_mm),
    )
}
