//! Point-cloud data model, file I/O, voxel-grid downsampling, cropping and
//! planar rigid transforms.
//!
//! Coordinates follow the sensor convention: x to the right, y forward,
//! z up, all in meters. The x-y plane is the ground plane.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// A single 3D point in meters. All coordinates are finite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }
}

/// A planar rigid pose: rotation `theta` about z followed by a translation.
///
/// `theta` is always normalized to `(-pi, pi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose2D {
    pub tx: f64,
    pub ty: f64,
    pub theta: f64,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn normalize_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

impl Pose2D {
    pub fn new(tx: f64, ty: f64, theta: f64) -> Self {
        Pose2D {
            tx,
            ty,
            theta: normalize_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Pose2D::new(0.0, 0.0, 0.0)
    }

    /// Applies the pose to a planar point: rotate by `theta`, then translate.
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (c * x - s * y + self.tx, s * x + c * y + self.ty)
    }

    /// Composition `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let (tx, ty) = self.apply(other.tx, other.ty);
        Pose2D::new(tx, ty, self.theta + other.theta)
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.theta.sin_cos();
        // R(-theta) * (-t)
        Pose2D::new(
            -(c * self.tx + s * self.ty),
            -(-s * self.tx + c * self.ty),
            -self.theta,
        )
    }

    pub fn translation_norm(&self) -> f64 {
        self.tx.hypot(self.ty)
    }
}

/// An ordered set of 3D points with an opaque frame identifier and an
/// optional global planar pose.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub frame_id: String,
    pub pose: Option<Pose2D>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>, frame_id: impl Into<String>) -> Self {
        PointCloud {
            points,
            frame_id: frame_id.into(),
            pose: None,
        }
    }

    pub fn with_pose(mut self, pose: Pose2D) -> Self {
        self.pose = Some(pose);
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// On-disk point formats.
///
/// * `XyzAscii`: UTF-8, one point per line, three decimal floats separated by
///   whitespace; lines starting with `#` are ignored.
/// * `XyzBin`: little-endian IEEE-754 f32 triples, no header; the file length
///   must be a multiple of 12 bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    XyzAscii,
    XyzBin,
}

impl CloudFormat {
    /// Picks a format from a file extension: `.xyz` is ASCII, `.xyzb`/`.bin`
    /// is binary.
    pub fn from_path(path: &Path) -> CloudFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("xyzb") | Some("bin") => CloudFormat::XyzBin,
            _ => CloudFormat::XyzAscii,
        }
    }
}

/// Loads a point cloud. Returns the cloud and the number of non-finite
/// rows that were rejected. The frame id is the file stem.
pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<(PointCloud, usize)> {
    let frame_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "cloud".to_string());
    let (points, rejected) = match format {
        CloudFormat::XyzAscii => parse_ascii(path)?,
        CloudFormat::XyzBin => parse_bin(path)?,
    };
    if points.is_empty() {
        return Err(Error::EmptyCloud { path: path.into() });
    }
    Ok((PointCloud::new(points, frame_id), rejected))
}

fn parse_ascii(path: &Path) -> Result<(Vec<Point3>, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut points = Vec::new();
    let mut rejected = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut coords = [0.0f64; 3];
        let mut fields = trimmed.split_whitespace();
        for c in coords.iter_mut() {
            let tok = fields.next().ok_or_else(|| Error::Malformed {
                path: path.into(),
                location: format!("line {}", lineno + 1),
                message: "expected three coordinates".into(),
            })?;
            *c = tok.parse::<f64>().map_err(|_| Error::Malformed {
                path: path.into(),
                location: format!("line {}", lineno + 1),
                message: format!("invalid number {tok:?}"),
            })?;
        }
        if fields.next().is_some() {
            return Err(Error::Malformed {
                path: path.into(),
                location: format!("line {}", lineno + 1),
                message: "more than three coordinates".into(),
            });
        }
        let p = Point3::new(coords[0], coords[1], coords[2]);
        if p.is_finite() {
            points.push(p);
        } else {
            rejected += 1;
        }
    }
    Ok((points, rejected))
}

fn parse_bin(path: &Path) -> Result<(Vec<Point3>, usize)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 12 != 0 {
        return Err(Error::Malformed {
            path: path.into(),
            location: format!("byte offset {}", bytes.len() - bytes.len() % 12),
            message: "file length is not a multiple of 12".into(),
        });
    }
    let mut points = Vec::with_capacity(bytes.len() / 12);
    let mut rejected = 0usize;
    for triple in bytes.chunks_exact(12) {
        let x = f32::from_le_bytes(triple[0..4].try_into().unwrap()) as f64;
        let y = f32::from_le_bytes(triple[4..8].try_into().unwrap()) as f64;
        let z = f32::from_le_bytes(triple[8..12].try_into().unwrap()) as f64;
        let p = Point3::new(x, y, z);
        if p.is_finite() {
            points.push(p);
        } else {
            rejected += 1;
        }
    }
    Ok((points, rejected))
}

/// Writes a cloud to disk. Coordinates are stored as f32 in both formats, so
/// a save/load round trip is exact for clouds whose coordinates are
/// f32-representable (in particular anything previously loaded from disk).
pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let mut out: Vec<u8> = Vec::with_capacity(cloud.len() * 16);
    match format {
        CloudFormat::XyzAscii => {
            for p in &cloud.points {
                writeln!(out, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)
                    .expect("write to Vec cannot fail");
            }
        }
        CloudFormat::XyzBin => {
            for p in &cloud.points {
                out.extend_from_slice(&(p.x as f32).to_le_bytes());
                out.extend_from_slice(&(p.y as f32).to_le_bytes());
                out.extend_from_slice(&(p.z as f32).to_le_bytes());
            }
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Downsamples the cloud on a cubic grid with leaf size `leaf` meters,
/// replacing the points of each occupied voxel by their centroid.
///
/// Output points are ordered by voxel index, so the result is deterministic.
pub fn voxel_filter(cloud: &PointCloud, leaf: f64) -> Result<PointCloud> {
    if !(leaf > 0.0) {
        return Err(Error::InvalidParam(format!(
            "voxel leaf size must be positive, got {leaf}"
        )));
    }
    let mut cells: HashMap<(i64, i64, i64), (f64, f64, f64, u32)> = HashMap::new();
    for p in &cloud.points {
        let key = (
            (p.x / leaf).floor() as i64,
            (p.y / leaf).floor() as i64,
            (p.z / leaf).floor() as i64,
        );
        let acc = cells.entry(key).or_insert((0.0, 0.0, 0.0, 0));
        acc.0 += p.x;
        acc.1 += p.y;
        acc.2 += p.z;
        acc.3 += 1;
    }
    let mut keys: Vec<_> = cells.keys().copied().collect();
    keys.sort_unstable();
    let points = keys
        .iter()
        .map(|k| {
            let (sx, sy, sz, n) = cells[k];
            let n = n as f64;
            Point3::new(sx / n, sy / n, sz / n)
        })
        .collect();
    Ok(PointCloud {
        points,
        frame_id: cloud.frame_id.clone(),
        pose: cloud.pose,
    })
}

/// Keeps exactly the points with `|x| <= half`, `|y| <= half`, `|z| <= half`
/// (boundaries inclusive).
pub fn crop_window(cloud: &PointCloud, half: f64) -> Result<PointCloud> {
    if !(half > 0.0) {
        return Err(Error::InvalidParam(format!(
            "crop window half-size must be positive, got {half}"
        )));
    }
    let points = cloud
        .points
        .iter()
        .copied()
        .filter(|p| p.x.abs() <= half && p.y.abs() <= half && p.z.abs() <= half)
        .collect();
    Ok(PointCloud {
        points,
        frame_id: cloud.frame_id.clone(),
        pose: cloud.pose,
    })
}

/// Rotates every point by `pose.theta` about the z-axis and translates by
/// `(pose.tx, pose.ty)`. The z coordinate is unchanged.
pub fn transform_cloud(cloud: &PointCloud, pose: &Pose2D) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let (x, y) = pose.apply(p.x, p.y);
            Point3::new(x, y, p.z)
        })
        .collect();
    PointCloud {
        points,
        frame_id: cloud.frame_id.clone(),
        pose: cloud.pose,
    }
}
