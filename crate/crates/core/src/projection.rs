//! Synthetic depth images of the surface mesh and lifting of 2D cues into 3D.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PcaResult, TriMesh, Vec3};
use crate::volume::{CtVolume, Image2D};

pub const DEFAULT_DEPTH_PIXEL_SIZE: f64 = 0.25;

/// The crown-side face of the mesh's oriented bounding box. Pixel `(x, y)` of
/// the depth image sits at `origin + x·pixel_size·u_axis + y·pixel_size·v_axis`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneFrame {
    pub origin: Vec3,
    pub u_axis: Vec3,
    pub v_axis: Vec3,
    pub normal: Vec3,
    pub pixel_size: f64,
    /// Depth in mm that maps to the normalised value 1.
    pub depth_range: f64,
}

impl PlaneFrame {
    /// Signed distance (mm) from the plane along −normal.
    pub fn depth_of(&self, p: &Vec3) -> f64 {
        -(p - self.origin).dot(&self.normal)
    }

    /// Depth normalised the same way as the depth image.
    pub fn normalized_depth_of(&self, p: &Vec3) -> f64 {
        if self.depth_range > 0.0 {
            self.depth_of(p) / self.depth_range
        } else {
            0.0
        }
    }

    /// Orthogonal projection of a world point to (fractional) pixel coordinates.
    pub fn project(&self, p: &Vec3) -> [f64; 2] {
        let d = p - self.origin;
        [d.dot(&self.u_axis) / self.pixel_size, d.dot(&self.v_axis) / self.pixel_size]
    }

    pub fn pixel_to_world(&self, px: [f64; 2]) -> Vec3 {
        self.origin + self.u_axis * (px[0] * self.pixel_size) + self.v_axis * (px[1] * self.pixel_size)
    }

    /// In-plane unit direction for an image angle measured from the u axis toward v.
    pub fn direction(&self, angle: f64) -> Vec3 {
        self.u_axis * angle.cos() + self.v_axis * angle.sin()
    }

    /// Image angle of an in-plane direction.
    pub fn angle_of(&self, dir: &Vec3) -> f64 {
        dir.dot(&self.v_axis).atan2(dir.dot(&self.u_axis))
    }
}

/// Depth image on the crown-side bounding plane with normal ±v2.
///
/// Every vertex splats into exactly one pixel keeping the minimum depth; empty
/// pixels take the maximum observed depth. The result is normalised to [0, 1].
pub fn depth_image(mesh: &TriMesh, axes: &PcaResult, pixel_size: f64) -> Result<(Image2D, PlaneFrame)> {
    if !(pixel_size > 0.0) {
        return Err(Error::InvalidArgument("depth image pixel size must be positive".into()));
    }
    let scale = axes.eigenvalues[0].max(1e-300).sqrt();
    if axes.eigenvalues[0] <= 0.0 || (axes.eigenvalues[0] + axes.eigenvalues[1]).sqrt() < 1e-9 * scale.max(1.0) {
        return Err(Error::Degenerate("all mesh vertices coincide".into()));
    }
    let normal = crown_side_normal(mesh, axes);
    let u = oriented_major_axis(mesh.vertices(), axes);
    Ok(render_depth(mesh.vertices(), &axes.mean, u, normal, pixel_size))
}

/// Orients v2 toward the crown side. The mesh convention is that vertex
/// normals point into the tissue, so the area-weighted mean normal of an open
/// scan points away from the crowns. Closed or balanced meshes fall back to
/// the depth-image decile-variance rule.
fn crown_side_normal(mesh: &TriMesh, axes: &PcaResult) -> Vec3 {
    let v2 = axes.eigenvectors[2];
    let verts = mesh.vertices();
    let mut area_vec = Vec3::zeros();
    let mut area = 0.0;
    for &[a, b, c] in mesh.triangles() {
        let cr = (verts[b] - verts[a]).cross(&(verts[c] - verts[a]));
        area_vec += cr;
        area += cr.norm();
    }
    let along = area_vec.dot(&v2);
    if area > 0.0 && along.abs() > 0.1 * area {
        return if along > 0.0 { -v2 } else { v2 };
    }
    let u = oriented_major_axis(verts, axes);
    let pos = lowest_decile_variance(&render_depth(verts, &axes.mean, u, v2, DEFAULT_DEPTH_PIXEL_SIZE).0);
    let neg = lowest_decile_variance(&render_depth(verts, &axes.mean, u, -v2, DEFAULT_DEPTH_PIXEL_SIZE).0);
    if neg > pos {
        -v2
    } else {
        v2
    }
}

fn lowest_decile_variance(img: &Image2D) -> f64 {
    let mut vals: Vec<f64> = img.values.iter().copied().filter(|&v| v < 1.0).collect();
    if vals.len() < 2 {
        return 0.0;
    }
    vals.sort_by(f64::total_cmp);
    let n = (vals.len() / 10).max(2);
    let s = &vals[..n];
    let mean = s.iter().sum::<f64>() / n as f64;
    s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64
}

/// v0 with its sign chosen by positive third moment, so the in-plane frame
/// follows the mesh under rigid motion.
fn oriented_major_axis(verts: &[Vec3], axes: &PcaResult) -> Vec3 {
    let v0 = axes.eigenvectors[0];
    let n = verts.len() as f64;
    let (mut m2, mut m3) = (0.0, 0.0);
    for p in verts {
        let a = (p - axes.mean).dot(&v0);
        m2 += a * a;
        m3 += a * a * a;
    }
    let sd = (m2 / n).sqrt();
    let skew = if sd > 0.0 { m3 / n / sd.powi(3) } else { 0.0 };
    if skew < -1e-6 {
        -v0
    } else {
        v0
    }
}

fn render_depth(verts: &[Vec3], mean: &Vec3, u: Vec3, normal: Vec3, pixel_size: f64) -> (Image2D, PlaneFrame) {
    let v = normal.cross(&u);
    let coords: Vec<[f64; 3]> = verts
        .iter()
        .map(|p| {
            let d = p - mean;
            [d.dot(&u), d.dot(&v), d.dot(&normal)]
        })
        .collect();
    let (mut amin, mut amax, mut bmin, mut bmax, mut hmax) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for c in &coords {
        amin = amin.min(c[0]);
        amax = amax.max(c[0]);
        bmin = bmin.min(c[1]);
        bmax = bmax.max(c[1]);
        hmax = hmax.max(c[2]);
    }
    let width = ((amax - amin) / pixel_size).round() as usize + 1;
    let height = ((bmax - bmin) / pixel_size).round() as usize + 1;
    let mut img = Image2D::filled(width, height, pixel_size, f64::INFINITY);
    let mut dmax: f64 = 0.0;
    for c in &coords {
        let x = (((c[0] - amin) / pixel_size).round() as usize).min(width - 1);
        let y = (((c[1] - bmin) / pixel_size).round() as usize).min(height - 1);
        let depth = hmax - c[2];
        dmax = dmax.max(depth);
        if depth < img.get(x, y) {
            img.set(x, y, depth);
        }
    }
    for val in &mut img.values {
        if val.is_infinite() {
            *val = dmax;
        }
        *val = if dmax > 0.0 { *val / dmax } else { 0.0 };
    }
    let frame = PlaneFrame {
        origin: mean + u * amin + v * bmin + normal * hmax,
        u_axis: u,
        v_axis: v,
        normal,
        pixel_size,
        depth_range: dmax,
    };
    (img, frame)
}

/// 3D point on the bounding plane and in-plane unit direction for a model cue.
pub fn lift_model_cue(frame: &PlaneFrame, point2d: [f64; 2], angle: f64) -> (Vec3, Vec3) {
    (frame.pixel_to_world(point2d), frame.direction(angle))
}

/// World x of the MIP image plane: the midpoint of the volume's x extent.
pub fn ct_mid_x(vol: &CtVolume) -> f64 {
    vol.center().x
}

/// 3D point and direction for a cue in the x-axis MIP. The image plane is the
/// world (y, z) plane through the volume's x midpoint; columns follow y and
/// rows follow z.
pub fn lift_ct_cue(mip: &Image2D, vol: &CtVolume, point2d: [f64; 2], angle: f64) -> (Vec3, Vec3) {
    let o = vol.origin();
    let point = Vec3::new(
        ct_mid_x(vol),
        o.y + point2d[0] * mip.pixel_size,
        o.z + point2d[1] * mip.pixel_size,
    );
    (point, Vec3::new(0.0, angle.cos(), angle.sin()))
}

/// Inverse of [`lift_ct_cue`] for the point: MIP pixel coordinates of a world point.
pub fn ct_point_to_pixel(mip: &Image2D, vol: &CtVolume, p: &Vec3) -> [f64; 2] {
    let o = vol.origin();
    [(p.y - o.y) / mip.pixel_size, (p.z - o.z) / mip.pixel_size]
}
