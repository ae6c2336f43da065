//! Pose cues: 2D line cues on the depth image and CT projection, their JSON
//! exchange format, a moment-based heuristic estimator, and the initial
//! transform built from a matched pair of cues.

use std::fs;
use std::path::Path;

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geometry::{RigidTransform, Vec3};
use crate::projection::{lift_ct_cue, lift_model_cue, PlaneFrame};
use crate::volume::{CtVolume, Image2D};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Jaw {
    Upper,
    Lower,
}

impl std::str::FromStr for Jaw {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "upper" => Ok(Jaw::Upper),
            "lower" => Ok(Jaw::Lower),
            _ => Err(Error::InvalidArgument(format!("jaw must be `upper` or `lower`, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueSource {
    ModelDepth,
    CtMipUpper,
    CtMipLower,
}

impl CueSource {
    pub fn as_str(self) -> &'static str {
        match self {
            CueSource::ModelDepth => "model_depth",
            CueSource::CtMipUpper => "ct_mip_upper",
            CueSource::CtMipLower => "ct_mip_lower",
        }
    }

    pub fn ct_for(jaw: Jaw) -> CueSource {
        match jaw {
            Jaw::Upper => CueSource::CtMipUpper,
            Jaw::Lower => CueSource::CtMipLower,
        }
    }
}

/// A point on the salient line and the line's angle, both in image pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseCue {
    pub source: CueSource,
    #[serde(rename = "point_px")]
    pub point: [f64; 2],
    #[serde(rename = "angle_rad")]
    pub angle: f64,
}

/// Contents of a pose-cue JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueFile {
    pub cues: Vec<PoseCue>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<PlaneFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

impl CueFile {
    pub fn find(&self, source: CueSource) -> Option<&PoseCue> {
        self.cues.iter().find(|c| c.source == source)
    }
}

pub fn save_pose_cues(path: impl AsRef<Path>, file: &CueFile) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(file).expect("cue file serialises");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_pose_cues(path: impl AsRef<Path>) -> Result<CueFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pose_cues(&text)
}

/// Parses and validates cue JSON; schema errors name the offending field.
pub fn parse_pose_cues(text: &str) -> Result<CueFile> {
    let root: Value = serde_json::from_str(text).map_err(|e| schema("$", e.to_string()))?;
    let obj = root.as_object().ok_or_else(|| schema("$", "expected an object"))?;
    let cues = obj
        .get("cues")
        .ok_or_else(|| schema("cues", "missing field"))?
        .as_array()
        .ok_or_else(|| schema("cues", "expected an array"))?;
    let mut out = Vec::with_capacity(cues.len());
    for (i, c) in cues.iter().enumerate() {
        let at = |f: &str| format!("cues[{i}].{f}");
        let c = c.as_object().ok_or_else(|| schema(&format!("cues[{i}]"), "expected an object"))?;
        let source = match c.get("source").map(|v| v.as_str()) {
            None => return Err(schema(&at("source"), "missing field")),
            Some(Some("model_depth")) => CueSource::ModelDepth,
            Some(Some("ct_mip_upper")) => CueSource::CtMipUpper,
            Some(Some("ct_mip_lower")) => CueSource::CtMipLower,
            Some(_) => return Err(schema(&at("source"), "expected model_depth, ct_mip_upper or ct_mip_lower")),
        };
        let pt = c.get("point_px").ok_or_else(|| schema(&at("point_px"), "missing field"))?;
        let point = match pt.as_array().map(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<_>>>()) {
            Some(Some(v)) if v.len() == 2 && v.iter().all(|x| x.is_finite()) => [v[0], v[1]],
            _ => return Err(schema(&at("point_px"), "expected two finite numbers")),
        };
        let angle = c
            .get("angle_rad")
            .ok_or_else(|| schema(&at("angle_rad"), "missing field"))?
            .as_f64()
            .filter(|a| a.is_finite())
            .ok_or_else(|| schema(&at("angle_rad"), "expected a finite number"))?;
        out.push(PoseCue { source, point, angle });
    }
    let frame = match obj.get("frame") {
        None | Some(Value::Null) => None,
        Some(v) => Some(serde_json::from_value(v.clone()).map_err(|e| schema("frame", e.to_string()))?),
    };
    let image_ref = match obj.get("image_ref") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(schema("image_ref", "expected a string")),
    };
    Ok(CueFile { cues: out, frame, image_ref })
}

fn schema(path: &str, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.to_string(),
        message: message.into(),
    }
}

/// Which image a heuristic estimate runs on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageKind {
    Depth,
    Mip,
}

impl std::str::FromStr for ImageKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "depth" => Ok(ImageKind::Depth),
            "mip" => Ok(ImageKind::Mip),
            _ => Err(Error::InvalidArgument(format!("image kind must be `depth` or `mip`, got `{s}`"))),
        }
    }
}

/// Normalised depth at or below which a pixel counts as crown.
pub const DEPTH_MASK_LEVEL: f64 = 0.3;
/// MIP intensity quantile above which a pixel counts as occlusal structure.
pub const MIP_QUANTILE: f64 = 0.95;

/// Weighted second moments of a pixel set.
#[derive(Debug, Clone, Copy)]
struct Moments {
    cx: f64,
    cy: f64,
    sxx: f64,
    syy: f64,
    sxy: f64,
}

impl Moments {
    fn of(pixels: &[(f64, f64, f64)]) -> Option<Moments> {
        let w: f64 = pixels.iter().map(|p| p.2).sum();
        if pixels.is_empty() || !(w > 0.0) {
            return None;
        }
        let cx = pixels.iter().map(|p| p.0 * p.2).sum::<f64>() / w;
        let cy = pixels.iter().map(|p| p.1 * p.2).sum::<f64>() / w;
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for &(x, y, wt) in pixels {
            sxx += wt * (x - cx) * (x - cx);
            syy += wt * (y - cy) * (y - cy);
            sxy += wt * (x - cx) * (y - cy);
        }
        Some(Moments {
            cx,
            cy,
            sxx: sxx / w,
            syy: syy / w,
            sxy: sxy / w,
        })
    }

    /// Angle of the major axis, in (−π/2, π/2].
    fn major_angle(&self) -> f64 {
        axis_angle(0.5 * (2.0 * self.sxy).atan2(self.sxx - self.syy))
    }
}

fn axis_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut a = a % PI;
    if a <= -PI / 2.0 {
        a += PI;
    } else if a > PI / 2.0 {
        a -= PI;
    }
    a
}

/// Moment-based stand-in for the learned pose regressor.
///
/// `Depth`: pixels at normalised depth ≤ 0.3 (crowns) weighted by `1 − depth`.
/// The cue sits at their centroid and runs along whichever second-moment axis
/// the mask is most mirror-symmetric about, i.e. the arch midline; ties go to
/// the major axis. `Mip`: pixels at or above the 95th intensity percentile,
/// split into upper/lower halves at the row centroid (rows grow with z), each
/// yielding its centroid and major axis. Returns `[upper, lower]` for MIPs.
pub fn heuristic_pose_estimate(img: &Image2D, kind: ImageKind) -> Result<Vec<PoseCue>> {
    match kind {
        ImageKind::Depth => {
            let pix = depth_mask(img);
            let m = Moments::of(&pix).ok_or_else(|| Error::NoSalientStructure("depth image".into()))?;
            let major = m.major_angle();
            let minor = axis_angle(major + std::f64::consts::FRAC_PI_2);
            let angle = if mirror_score(&pix, &m, minor) > mirror_score(&pix, &m, major) + 1e-9 {
                minor
            } else {
                major
            };
            Ok(vec![PoseCue {
                source: CueSource::ModelDepth,
                point: [m.cx, m.cy],
                angle,
            }])
        }
        ImageKind::Mip => {
            let (lo, hi) = img.min_max();
            if !(hi > lo) {
                return Err(Error::NoSalientStructure("MIP image is constant".into()));
            }
            let mut sorted = img.values.clone();
            sorted.sort_by(f64::total_cmp);
            let q = sorted[((sorted.len() - 1) as f64 * MIP_QUANTILE).round() as usize];
            let pix: Vec<(f64, f64, f64)> = pixels(img)
                .filter(|&(_, _, v)| v >= q && v > lo)
                .collect();
            let all = Moments::of(&pix).ok_or_else(|| Error::NoSalientStructure("MIP image".into()))?;
            let upper: Vec<_> = pix.iter().copied().filter(|p| p.1 > all.cy).collect();
            let lower: Vec<_> = pix.iter().copied().filter(|p| p.1 <= all.cy).collect();
            let mut cues = Vec::with_capacity(2);
            for (set, source) in [(upper, CueSource::CtMipUpper), (lower, CueSource::CtMipLower)] {
                let m = Moments::of(&set)
                    .ok_or_else(|| Error::NoSalientStructure(format!("{} half of MIP image", source.as_str())))?;
                cues.push(PoseCue {
                    source,
                    point: [m.cx, m.cy],
                    angle: m.major_angle(),
                });
            }
            Ok(cues)
        }
    }
}

fn pixels(img: &Image2D) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
    img.values
        .iter()
        .enumerate()
        .map(move |(i, &v)| ((i % img.width) as f64, (i / img.width) as f64, v))
}

fn depth_mask(img: &Image2D) -> Vec<(f64, f64, f64)> {
    pixels(img)
        .filter(|&(_, _, v)| v <= DEPTH_MASK_LEVEL)
        .map(|(x, y, v)| (x, y, 1.0 - v))
        .collect()
}

/// Fraction of mask weight whose mirror image across the axis through the
/// centroid also lands on the mask.
fn mirror_score(pix: &[(f64, f64, f64)], m: &Moments, angle: f64) -> f64 {
    use std::collections::HashSet;
    let set: HashSet<(i64, i64)> = pix.iter().map(|p| (p.0 as i64, p.1 as i64)).collect();
    let (c, s) = (angle.cos(), angle.sin());
    let (mut hit, mut total) = (0.0, 0.0);
    for &(x, y, w) in pix {
        let (dx, dy) = (x - m.cx, y - m.cy);
        let along = dx * c + dy * s;
        let (rx, ry) = (m.cx + 2.0 * along * c - dx, m.cy + 2.0 * along * s - dy);
        total += w;
        if set.contains(&(rx.round() as i64, ry.round() as i64)) {
            hit += w;
        }
    }
    if total > 0.0 {
        hit / total
    } else {
        0.0
    }
}

/// Turns a model-depth axis into a direction pointing anterior: toward the
/// side of the centroid where mask pixels lie close to the axis (the incisor
/// region; the posterior side of the axis is the open interior of the arch).
pub fn resolve_model_direction(depth: &Image2D, cue: &PoseCue) -> f64 {
    let pix = depth_mask(depth);
    let (c, s) = (cue.angle.cos(), cue.angle.sin());
    let perp: Vec<f64> = pix.iter().map(|p| (p.0 - cue.point[0]) * -s + (p.1 - cue.point[1]) * c).collect();
    let spread = (perp.iter().map(|d| d * d).sum::<f64>() / perp.len().max(1) as f64).sqrt();
    let band = (0.25 * spread).max(2.0);
    let mut sum = 0.0;
    for (p, d) in pix.iter().zip(&perp) {
        if d.abs() <= band {
            sum += (p.0 - cue.point[0]) * c + (p.1 - cue.point[1]) * s;
        }
    }
    if sum < 0.0 {
        cue.angle + std::f64::consts::PI
    } else {
        cue.angle
    }
}

/// Turns a CT-projection axis into a direction pointing anterior (+y).
pub fn resolve_ct_direction(angle: f64) -> f64 {
    if angle.cos() < 0.0 {
        angle + std::f64::consts::PI
    } else {
        angle
    }
}

/// A cue lifted into 3D: a point, an in-plane direction and the plane normal.
/// For the model the normal points to the crown side; for the CT it points
/// from the jaw toward the occlusal plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CueFrame3D {
    pub point: Vec3,
    pub direction: Vec3,
    pub plane_normal: Vec3,
}

/// Model-side 3D frame from a depth-image cue, with the direction resolved anterior.
pub fn model_cue_frame(frame: &PlaneFrame, depth: &Image2D, cue: &PoseCue) -> CueFrame3D {
    let angle = resolve_model_direction(depth, cue);
    let (point, direction) = lift_model_cue(frame, cue.point, angle);
    CueFrame3D {
        point,
        direction,
        plane_normal: frame.normal,
    }
}

/// CT-side 3D frame from a MIP cue. The normal lies in the sagittal plane,
/// perpendicular to the direction, pointing +z for the lower jaw and −z for the upper.
pub fn ct_cue_frame(mip: &Image2D, vol: &CtVolume, cue: &PoseCue, jaw: Jaw) -> CueFrame3D {
    let angle = resolve_ct_direction(cue.angle);
    let (point, direction) = lift_ct_cue(mip, vol, cue.point, angle);
    let mut n = Vec3::new(0.0, -direction.z, direction.y);
    if (jaw == Jaw::Lower) != (n.z > 0.0) {
        n = -n;
    }
    CueFrame3D {
        point,
        direction,
        plane_normal: n,
    }
}

/// Rigid transform taking the model cue frame onto the CT cue frame: point to
/// point, direction to direction, normal to normal.
pub fn initial_transform(model: &CueFrame3D, ct: &CueFrame3D) -> Result<RigidTransform> {
    let basis = |f: &CueFrame3D, side: &str| -> Result<Matrix3<f64>> {
        let (d, n) = (f.direction, f.plane_normal);
        if (d.norm() - 1.0).abs() > 1e-6 || (n.norm() - 1.0).abs() > 1e-6 || d.dot(&n).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "{side} cue frame is not orthonormal (|d|={:.3e}, |n|={:.3e}, d·n={:.3e})",
                d.norm(),
                n.norm(),
                d.dot(&n)
            )));
        }
        Ok(Matrix3::from_columns(&[d, n, d.cross(&n)]))
    };
    let m = basis(model, "model")?;
    let c = basis(ct, "CT")?;
    let r = c * m.transpose();
    Ok(RigidTransform::new(r, ct.point - r * model.point))
}
