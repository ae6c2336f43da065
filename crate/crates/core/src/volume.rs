//! Regular-grid scalar volumes, 2D projection images, and their file formats.
//!
//! World coordinates are millimetres. Voxel `(i, j, k)` has its centre at
//! `origin + (i·sx, j·sy, k·sz)`. The stored grid follows the patient axes
//! x = left→right, y = posterior→anterior, z = inferior→superior.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, PartialEq)]
pub struct CtVolume {
    dims: [usize; 3],
    spacing: Vec3,
    origin: Vec3,
    data: Vec<f64>,
    background: f64,
}

impl CtVolume {
    /// `data` is x-fastest: index `i + nx·(j + ny·k)`.
    pub fn new(dims: [usize; 3], spacing: Vec3, origin: Vec3, data: Vec<f64>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidVolume(format!("dims {dims:?} contain a zero")));
        }
        if !spacing.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidVolume(format!("spacing {spacing:?} must be positive")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::InvalidVolume(format!(
                "data length {} does not match dims {dims:?} ({n})",
                data.len()
            )));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            data,
            background: 0.0,
        })
    }

    /// Volume filled from a function of world position.
    pub fn from_fn(dims: [usize; 3], spacing: Vec3, origin: Vec3, f: impl Fn(Vec3) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = origin + Vec3::new(i as f64 * spacing.x, j as f64 * spacing.y, k as f64 * spacing.z);
                    data.push(f(p));
                }
            }
        }
        Self::new(dims, spacing, origin, data)
    }

    pub fn with_background(mut self, background: f64) -> Self {
        self.background = background;
        self
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn background(&self) -> f64 {
        self.background
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn voxel(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64 * self.spacing.x, j as f64 * self.spacing.y, k as f64 * self.spacing.z)
    }

    /// World position of the far corner voxel centre.
    pub fn extent_max(&self) -> Vec3 {
        self.voxel_center(self.dims[0] - 1, self.dims[1] - 1, self.dims[2] - 1)
    }

    pub fn center(&self) -> Vec3 {
        (self.origin + self.extent_max()) * 0.5
    }

    /// `(min, max)` of the stored intensities.
    pub fn value_range(&self) -> (f64, f64) {
        let (lo, hi) = self
            .data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        (lo, hi)
    }

    /// Trilinear interpolation at a world point; the background value outside the grid.
    #[inline]
    pub fn sample(&self, p: &Vec3) -> f64 {
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let g = (p[a] - self.origin[a]) / self.spacing[a];
            let n = self.dims[a];
            if !(g >= 0.0 && g <= (n - 1) as f64) {
                return self.background;
            }
            if n == 1 {
                continue;
            }
            let i0 = (g.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = g - i0 as f64;
        }
        let sx = if self.dims[0] > 1 { 1 } else { 0 };
        let sy = if self.dims[1] > 1 { self.dims[0] } else { 0 };
        let sz = if self.dims[2] > 1 { self.dims[0] * self.dims[1] } else { 0 };
        let i000 = self.index(base[0], base[1], base[2]);
        let d = &self.data;
        let v = |o: usize| d[i000 + o];
        let (fx, fy, fz) = (frac[0], frac[1], frac[2]);
        let c00 = v(0) + (v(sx) - v(0)) * fx;
        let c10 = v(sy) + (v(sy + sx) - v(sy)) * fx;
        let c01 = v(sz) + (v(sz + sx) - v(sz)) * fx;
        let c11 = v(sz + sy) + (v(sz + sy + sx) - v(sz + sy)) * fx;
        let c0 = c00 + (c10 - c00) * fy;
        let c1 = c01 + (c11 - c01) * fy;
        c0 + (c1 - c0) * fz
    }

    /// Central-difference gradient of the trilinear field with step
    /// `h = min(spacing)/2`, in intensity per millimetre.
    #[inline]
    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        let h = self.spacing.min() * 0.5;
        let inv = 1.0 / (2.0 * h);
        let mut g = Vec3::zeros();
        for a in 0..3 {
            let mut hi = *p;
            let mut lo = *p;
            hi[a] += h;
            lo[a] -= h;
            g[a] = (self.sample(&hi) - self.sample(&lo)) * inv;
        }
        g
    }
}

pub fn sample_trilinear(vol: &CtVolume, p: &Vec3) -> f64 {
    vol.sample(p)
}

pub fn gradient(vol: &CtVolume, p: &Vec3) -> Vec3 {
    vol.gradient(p)
}

/// Row-major 2D scalar image. Pixel `(x, y)` is column `x`, row `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    pub width: usize,
    pub height: usize,
    /// Millimetres per pixel.
    pub pixel_size: f64,
    pub values: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, pixel_size: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "image of {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if !(pixel_size > 0.0) {
            return Err(Error::InvalidArgument("pixel size must be positive".into()));
        }
        Ok(Self {
            width,
            height,
            pixel_size,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, pixel_size: f64, value: f64) -> Self {
        Self {
            width,
            height,
            pixel_size,
            values: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    /// Affine min–max rescale to [0, 1]; a constant image becomes all zeros.
    pub fn normalize(&mut self) {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        for v in &mut self.values {
            *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
        }
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Bilinear sample in pixel coordinates, clamped to the image.
    pub fn sample_bilinear(&self, x: f64, y: f64) -> f64 {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let a = self.get(x0, y0) + (self.get(x1, y0) - self.get(x0, y0)) * fx;
        let b = self.get(x0, y1) + (self.get(x1, y1) - self.get(x0, y1)) * fx;
        a + (b - a) * fy
    }
}

/// Maximum-intensity projection along x. Output column = y index, row = z
/// index; non-square voxels are resampled to square pixels of `min(sy, sz)`.
/// The result is min–max normalised.
pub fn mip_project_x(vol: &CtVolume) -> Image2D {
    let [nx, ny, nz] = vol.dims();
    let mut raw = Image2D::filled(ny, nz, 1.0, f64::NEG_INFINITY);
    for k in 0..nz {
        for j in 0..ny {
            let start = vol.index(0, j, k);
            let m = vol.data[start..start + nx]
                .iter()
                .fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            raw.set(j, k, m);
        }
    }
    let (sy, sz) = (vol.spacing().y, vol.spacing().z);
    let ps = sy.min(sz);
    let mut img = if sy == sz {
        raw.pixel_size = ps;
        raw
    } else {
        let w = (((ny - 1) as f64 * sy / ps).round() as usize) + 1;
        let h = (((nz - 1) as f64 * sz / ps).round() as usize) + 1;
        let mut out = Image2D::filled(w, h, ps, 0.0);
        for r in 0..h {
            for c in 0..w {
                out.set(c, r, raw.sample_bilinear(c as f64 * ps / sy, r as f64 * ps / sz));
            }
        }
        out
    };
    img.normalize();
    img
}

// ---------------------------------------------------------------------------
// File formats

/// Writes a text header plus a raw little-endian f32 file next to it.
/// The raw file shares the header's stem with a `.raw` extension.
pub fn save_volume(header_path: impl AsRef<Path>, vol: &CtVolume) -> Result<()> {
    let header_path = header_path.as_ref();
    let raw_path = header_path.with_extension("raw");
    let raw_name = raw_path.file_name().unwrap().to_string_lossy().into_owned();
    let [nx, ny, nz] = vol.dims;
    let s = vol.spacing;
    let o = vol.origin;
    let header = format!(
        "# axes: x=left-right y=posterior-anterior z=inferior-superior; origin is the centre of voxel (0,0,0)\n\
         dims: {nx} {ny} {nz}\n\
         spacing: {:?} {:?} {:?}\n\
         origin: {:?} {:?} {:?}\n\
         data_type: f32\n\
         byte_order: little\n\
         data_file: {raw_name}\n",
        s.x, s.y, s.z, o.x, o.y, o.z
    );
    fs::write(header_path, header).map_err(|e| Error::io(header_path, e))?;
    let mut bytes = Vec::with_capacity(vol.data.len() * 4);
    for v in &vol.data {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(&raw_path, bytes).map_err(|e| Error::io(&raw_path, e))
}

pub fn load_volume(header_path: impl AsRef<Path>) -> Result<CtVolume> {
    let header_path = header_path.as_ref();
    let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
    let mut dims = None;
    let mut spacing = None;
    let mut origin = None;
    let mut data_file: Option<PathBuf> = None;
    let perr = |m: String| Error::parse(header_path, m);
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| perr(format!("malformed header line `{line}`")))?;
        let value = value.trim();
        match key.trim() {
            "dims" => dims = Some(parse_triple::<usize>(value).map_err(|m| perr(format!("dims: {m}")))?),
            "spacing" => spacing = Some(parse_triple::<f64>(value).map_err(|m| perr(format!("spacing: {m}")))?),
            "origin" => origin = Some(parse_triple::<f64>(value).map_err(|m| perr(format!("origin: {m}")))?),
            "data_type" if value != "f32" => {
                return Err(perr(format!("data_type: unsupported `{value}` (expected f32)")))
            }
            "byte_order" if value != "little" => {
                return Err(perr(format!("byte_order: unsupported `{value}` (expected little)")))
            }
            "data_file" => data_file = Some(PathBuf::from(value)),
            _ => {}
        }
    }
    let dims = dims.ok_or_else(|| perr("missing field `dims`".into()))?;
    let spacing = spacing.ok_or_else(|| perr("missing field `spacing`".into()))?;
    let origin = origin.ok_or_else(|| perr("missing field `origin`".into()))?;
    let raw_path = match data_file {
        Some(p) if p.is_absolute() => p,
        Some(p) => header_path.parent().unwrap_or(Path::new(".")).join(p),
        None => header_path.with_extension("raw"),
    };
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let n = dims[0] * dims[1] * dims[2];
    if bytes.len() != n * 4 {
        return Err(Error::parse(
            &raw_path,
            format!("expected {} bytes for dims {dims:?}, found {}", n * 4, bytes.len()),
        ));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    CtVolume::new(dims, Vec3::new(spacing[0], spacing[1], spacing[2]), Vec3::new(origin[0], origin[1], origin[2]), data)
        .map_err(|e| Error::parse(header_path, e.to_string()))
}

fn parse_triple<T: std::str::FromStr>(s: &str) -> std::result::Result<[T; 3], String> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    if parts.len() != 3 {
        return Err(format!("expected 3 values, got `{s}`"));
    }
    let mut out = Vec::with_capacity(3);
    for p in parts {
        out.push(p.parse::<T>().map_err(|_| format!("cannot parse `{p}`"))?);
    }
    Ok([out.remove(0), out.remove(0), out.remove(0)])
}

#[derive(Debug, Serialize, Deserialize)]
struct ImageSidecar {
    width: usize,
    height: usize,
    pixel_size: f64,
}

/// 16-bit binary PGM (values in [0,1] scaled to 0..65535) plus a `.json`
/// sidecar with the pixel size.
pub fn save_image(pgm_path: impl AsRef<Path>, img: &Image2D) -> Result<()> {
    let pgm_path = pgm_path.as_ref();
    let mut bytes = format!("P5\n{} {}\n65535\n", img.width, img.height).into_bytes();
    for v in &img.values {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        bytes.extend_from_slice(&q.to_be_bytes());
    }
    fs::write(pgm_path, bytes).map_err(|e| Error::io(pgm_path, e))?;
    let side = pgm_path.with_extension("json");
    let json = serde_json::to_string_pretty(&ImageSidecar {
        width: img.width,
        height: img.height,
        pixel_size: img.pixel_size,
    })
    .expect("sidecar serialises");
    fs::write(&side, json).map_err(|e| Error::io(&side, e))
}

pub fn load_image(pgm_path: impl AsRef<Path>) -> Result<Image2D> {
    let pgm_path = pgm_path.as_ref();
    let bytes = fs::read(pgm_path).map_err(|e| Error::io(pgm_path, e))?;
    let perr = |m: &str| Error::parse(pgm_path, m.to_string());
    // Header: magic, width, height, maxval separated by whitespace, then one
    // whitespace byte before the pixel data.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(perr("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(perr("not a binary PGM (P5)"));
    }
    let width: usize = fields[1].parse().map_err(|_| perr("bad width"))?;
    let height: usize = fields[2].parse().map_err(|_| perr("bad height"))?;
    let maxval: u32 = fields[3].parse().map_err(|_| perr("bad maxval"))?;
    let n = width * height;
    let data = &bytes[pos.min(bytes.len())..];
    let values: Vec<f64> = if maxval > 255 {
        if data.len() < n * 2 {
            return Err(perr("truncated PGM pixel data"));
        }
        data.chunks_exact(2)
            .take(n)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / maxval as f64)
            .collect()
    } else {
        if data.len() < n {
            return Err(perr("truncated PGM pixel data"));
        }
        data[..n].iter().map(|&b| b as f64 / maxval as f64).collect()
    };
    let side = pgm_path.with_extension("json");
    let pixel_size = match fs::read_to_string(&side) {
        Ok(text) => {
            let s: ImageSidecar = serde_json::from_str(&text).map_err(|e| Error::parse(&side, e.to_string()))?;
            s.pixel_size
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => 1.0,
        Err(e) => return Err(Error::io(&side, e)),
    };
    Image2D::new(width, height, pixel_size, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn affine_volume() -> CtVolume {
        CtVolume::from_fn([12, 10, 8], Vec3::new(0.5, 0.7, 0.9), Vec3::new(-2.0, 1.0, 3.0), |p| {
            2.0 * p.x + 3.0 * p.y - p.z
        })
        .unwrap()
    }

    #[test]
    fn rejects_bad_construction() {
        assert!(CtVolume::new([2, 2, 2], Vec3::new(1.0, 0.0, 1.0), Vec3::zeros(), vec![0.0; 8]).is_err());
        assert!(CtVolume::new([2, 2, 2], Vec3::repeat(1.0), Vec3::zeros(), vec![0.0; 7]).is_err());
    }

    #[test]
    fn sample_at_voxel_centre_and_midpoint() {
        let mut data = vec![0.0; 8];
        data[0] = 100.0;
        data[1] = 300.0;
        let v = CtVolume::new([2, 2, 2], Vec3::repeat(1.0), Vec3::zeros(), data).unwrap();
        assert_eq!(v.sample(&Vec3::zeros()), 100.0);
        assert_eq!(v.sample(&Vec3::new(0.5, 0.0, 0.0)), 200.0);
        assert_eq!(v.sample(&Vec3::new(-0.1, 0.0, 0.0)), 0.0);
        let v = v.with_background(-5.0);
        assert_eq!(v.sample(&Vec3::new(3.0, 0.0, 0.0)), -5.0);
    }

    #[test]
    fn trilinear_reproduces_affine_fields() {
        let v = affine_volume();
        let (lo, hi) = (v.origin(), v.extent_max());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let p = Vec3::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y), rng.gen_range(lo.z..hi.z));
            let f = 2.0 * p.x + 3.0 * p.y - p.z;
            assert!((v.sample(&p) - f).abs() < 1e-6, "{p:?}");
        }
    }

    #[test]
    fn gradient_of_affine_field() {
        let v = affine_volume();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (lo, hi) = (v.origin() + Vec3::repeat(1.0), v.extent_max() - Vec3::repeat(1.0));
        for _ in 0..100 {
            let p = Vec3::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y), rng.gen_range(lo.z..hi.z));
            let g = v.gradient(&p);
            assert!((g - Vec3::new(2.0, 3.0, -1.0)).amax() < 1e-6, "{g:?}");
        }
    }

    #[test]
    fn gradient_of_constant_and_step() {
        let c = CtVolume::new([4, 4, 4], Vec3::repeat(1.0), Vec3::zeros(), vec![7.0; 64]).unwrap();
        assert_eq!(c.gradient(&Vec3::repeat(1.5)), Vec3::zeros());
        let s = CtVolume::from_fn([6, 6, 6], Vec3::repeat(1.0), Vec3::zeros(), |p| if p.y >= 3.0 { 1000.0 } else { 0.0 })
            .unwrap();
        let g = s.gradient(&Vec3::new(2.5, 2.5, 2.5));
        assert!(g.y > 0.0 && g.x == 0.0 && g.z == 0.0);
    }

    #[test]
    fn mip_single_hot_voxel_and_constant() {
        let mut v = CtVolume::new([5, 6, 7], Vec3::repeat(0.5), Vec3::zeros(), vec![0.0; 210]).unwrap();
        let idx = v.index(2, 4, 1);
        v.data_mut()[idx] = 10.0;
        let img = mip_project_x(&v);
        assert_eq!((img.width, img.height), (6, 7));
        for r in 0..7 {
            for c in 0..6 {
                let expect = if (c, r) == (4, 1) { 1.0 } else { 0.0 };
                assert_eq!(img.get(c, r), expect);
            }
        }
        let c = CtVolume::new([3, 3, 3], Vec3::repeat(1.0), Vec3::zeros(), vec![4.0; 27]).unwrap();
        assert!(mip_project_x(&c).values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mip_resamples_to_square_pixels() {
        let v = CtVolume::from_fn([2, 5, 3], Vec3::new(1.0, 0.5, 1.0), Vec3::zeros(), |p| p.y + p.z).unwrap();
        let img = mip_project_x(&v);
        assert_eq!(img.pixel_size, 0.5);
        assert_eq!((img.width, img.height), (5, 5));
    }

    #[test]
    fn volume_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.mhd");
        let v = affine_volume();
        save_volume(&p, &v).unwrap();
        let back = load_volume(&p).unwrap();
        assert_eq!(back.dims(), v.dims());
        assert_eq!(back.spacing(), v.spacing());
        assert_eq!(back.origin(), v.origin());
        for (a, b) in back.data().iter().zip(v.data()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn volume_header_missing_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.mhd");
        fs::write(&p, "dims: 2 2 2\norigin: 0 0 0\n").unwrap();
        let err = load_volume(&p).unwrap_err().to_string();
        assert!(err.contains("spacing"), "{err}");
    }

    #[test]
    fn image_round_trip_quantised() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("i.pgm");
        let img = Image2D::new(3, 2, 0.25, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1]).unwrap();
        save_image(&p, &img).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.pixel_size, 0.25);
        for (a, b) in img.values.iter().zip(&back.values) {
            assert!((a - b).abs() <= 0.5 / 65535.0 + 1e-12);
        }
    }
}
