//! BVFT local descriptors.
//!
//! Keypoints come from a FAST-9 segment test on the BV image. Around each
//! keypoint the MIM patch is canonicalized: a Gaussian-weighted histogram of
//! orientation indices picks the dominant orientation, the patch is rotated
//! by that angle with nearest-neighbor sampling (indices are categorical, so
//! interpolation is meaningless), and the index values are circularly
//! shifted by the dominant index. Sub-grid histograms of the shifted patch
//! concatenate into the descriptor.
//!
//! Orientation labels have period pi, so a rotation by pi is indistinguishable
//! from none; every keypoint therefore carries a second descriptor built from
//! the same patch rotated by pi.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::bvimage::BvImage;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::loggabor::{mim_for_image, FilterBank, Mim};

/// A detected corner, in integer cell coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub u: usize,
    pub v: usize,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescriptorVariant {
    Primary,
    PiFlipped,
}

/// A unit-norm BVFT descriptor attached to a keypoint.
#[derive(Debug, Clone)]
pub struct Descriptor {
    /// Non-negative, L2-normalized, length `subgrids^2 * orientations`.
    pub vector: Vec<f32>,
    pub keypoint: Keypoint,
    pub variant: DescriptorVariant,
    /// The canonicalization angle beta, radians.
    pub dominant_orientation: f64,
}

/// All descriptors of one frame. Descriptors come in primary/pi-flipped
/// pairs sharing a keypoint: entries `2k` and `2k + 1`.
#[derive(Debug, Clone, Default)]
pub struct DescriptorSet {
    pub frame_id: String,
    pub descriptors: Vec<Descriptor>,
}

impl DescriptorSet {
    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn keypoint_count(&self) -> usize {
        self.descriptors.len() / 2
    }

    /// Compares the persisted content (keypoints, variants, vectors);
    /// detector scores and canonicalization angles are not stored on disk.
    pub fn content_eq(&self, other: &DescriptorSet) -> bool {
        self.descriptors.len() == other.descriptors.len()
            && self
                .descriptors
                .iter()
                .zip(&other.descriptors)
                .all(|(a, b)| {
                    a.keypoint.u == b.keypoint.u
                        && a.keypoint.v == b.keypoint.v
                        && a.variant == b.variant
                        && a.vector == b.vector
                })
    }
}

/// Bresenham circle of radius 3 used by the segment test, clockwise from
/// twelve o'clock.
const CIRCLE: [(i32, i32); 16] = [
    (0, -3),
    (1, -3),
    (2, -2),
    (3, -1),
    (3, 0),
    (3, 1),
    (2, 2),
    (1, 3),
    (0, 3),
    (-1, 3),
    (-2, 2),
    (-3, 1),
    (-3, 0),
    (-3, -1),
    (-2, -2),
    (-1, -3),
];

const ARC_LEN: usize = 9;

fn longest_circular_run(flags: &[bool; 16]) -> usize {
    let mut best = 0usize;
    let mut run = 0usize;
    for k in 0..32 {
        if flags[k % 16] {
            run += 1;
            best = best.max(run.min(16));
        } else {
            run = 0;
        }
    }
    best
}

/// FAST-9 segment test at (u, v); returns the corner score, or `None`.
/// The score is the absolute intensity sum over the qualifying arc set.
fn fast_score(intensity: &Array2<f64>, u: usize, v: usize, threshold: f64) -> Option<f64> {
    let center = intensity[[u, v]];
    let mut brighter = [false; 16];
    let mut darker = [false; 16];
    let mut ring = [0.0f64; 16];
    for (k, (du, dv)) in CIRCLE.iter().enumerate() {
        let p = intensity[[(u as i32 + du) as usize, (v as i32 + dv) as usize]];
        ring[k] = p;
        brighter[k] = p > center + threshold;
        darker[k] = p < center - threshold;
    }
    let mut score = f64::NEG_INFINITY;
    let mut is_corner = false;
    if longest_circular_run(&brighter) >= ARC_LEN {
        is_corner = true;
        let s: f64 = (0..16)
            .filter(|&k| brighter[k])
            .map(|k| ring[k] - center - threshold)
            .sum();
        score = score.max(s);
    }
    if longest_circular_run(&darker) >= ARC_LEN {
        is_corner = true;
        let s: f64 = (0..16)
            .filter(|&k| darker[k])
            .map(|k| center - ring[k] - threshold)
            .sum();
        score = score.max(s);
    }
    is_corner.then_some(score)
}

/// FAST-9 corner detection with 3x3 non-maximum suppression on the score.
/// Keypoints whose `patch_size` x `patch_size` patch would exit the image
/// are rejected; of the rest, the `max_keypoints` strongest are kept.
///
/// `threshold` is an intensity delta in `(0, 1)`.
pub fn detect_fast(
    image: &BvImage,
    threshold: f64,
    max_keypoints: usize,
    patch_size: usize,
) -> Vec<Keypoint> {
    let side = image.side();
    if side < 7 {
        return Vec::new();
    }
    let mut scores = Array2::<f64>::from_elem((side, side), f64::NEG_INFINITY);
    for u in 3..side - 3 {
        for v in 3..side - 3 {
            if let Some(s) = fast_score(&image.intensity, u, v, threshold) {
                scores[[u, v]] = s;
            }
        }
    }

    let margin = patch_size / 2;
    if side < patch_size {
        return Vec::new();
    }
    let mut keypoints = Vec::new();
    for u in 3..side - 3 {
        for v in 3..side - 3 {
            let s = scores[[u, v]];
            if s == f64::NEG_INFINITY {
                continue;
            }
            // 3x3 NMS; score ties go to the first pixel in scan order.
            let mut suppressed = false;
            'nms: for du in -1i32..=1 {
                for dv in -1i32..=1 {
                    if du == 0 && dv == 0 {
                        continue;
                    }
                    let (nu, nv) = ((u as i32 + du) as usize, (v as i32 + dv) as usize);
                    let ns = scores[[nu, nv]];
                    if ns > s || (ns == s && (nu, nv) < (u, v)) {
                        suppressed = true;
                        break 'nms;
                    }
                }
            }
            if suppressed {
                continue;
            }
            if u < margin || v < margin || u > side - margin || v > side - margin {
                continue;
            }
            keypoints.push(Keypoint { u, v, score: s });
        }
    }

    keypoints.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .expect("finite scores")
            .then_with(|| (a.u, a.v).cmp(&(b.u, b.v)))
    });
    keypoints.truncate(max_keypoints);
    keypoints
}

/// A canonicalized MIM patch: shifted orientation indices plus validity.
#[derive(Debug, Clone)]
pub struct PatchGrid {
    pub index: Array2<u8>,
    pub valid: Array2<bool>,
}

impl PatchGrid {
    pub fn side(&self) -> usize {
        self.index.nrows()
    }
}

/// Gaussian window over patch offsets, standard deviation `patch_size / 2`
/// per axis.
fn gaussian_window(patch_size: usize) -> Array2<f64> {
    let half = (patch_size / 2) as i32;
    let sigma = patch_size as f64 / 2.0;
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    Array2::from_shape_fn((patch_size, patch_size), |(a, b)| {
        let du = a as i32 - half;
        let dv = b as i32 - half;
        (-((du * du + dv * dv) as f64) * inv_two_sigma_sq).exp()
    })
}

fn dominant_orientation_weighted(
    mim: &Mim,
    keypoint: &Keypoint,
    patch_size: usize,
    weights: &Array2<f64>,
) -> Result<(usize, f64)> {
    let half = (patch_size / 2) as i32;
    let side = mim.side() as i32;
    let mut hist = vec![0.0f64; mim.orientations];
    let mut any_valid = false;
    for a in 0..patch_size {
        let u = keypoint.u as i32 + a as i32 - half;
        if u < 0 || u >= side {
            continue;
        }
        for b in 0..patch_size {
            let v = keypoint.v as i32 + b as i32 - half;
            if v < 0 || v >= side {
                continue;
            }
            let (u, v) = (u as usize, v as usize);
            if !mim.valid[[u, v]] {
                continue;
            }
            any_valid = true;
            hist[mim.index[[u, v]] as usize] += weights[[a, b]];
        }
    }
    if !any_valid {
        return Err(Error::EmptyPatch);
    }
    let mut best = 0usize;
    for (o, &w) in hist.iter().enumerate().skip(1) {
        if w > hist[best] {
            best = o;
        }
    }
    let beta = std::f64::consts::PI * best as f64 / mim.orientations as f64;
    Ok((best, beta))
}

/// Gaussian-weighted histogram mode of the MIM values in the keypoint's
/// patch. Only valid pixels count; the Gaussian is centered on the keypoint
/// with standard deviation `patch_size / 2` per axis. Returns the winning
/// index (ties to the smallest) and the angle `pi * index / orientations`.
pub fn dominant_orientation(
    mim: &Mim,
    keypoint: &Keypoint,
    patch_size: usize,
) -> Result<(usize, f64)> {
    dominant_orientation_weighted(mim, keypoint, patch_size, &gaussian_window(patch_size))
}

/// Extracts the patch around the keypoint with its sample grid rotated by
/// `beta` (nearest neighbor), then shifts every index by `-dominant_index`
/// modulo the orientation count. Samples that leave the image or hit
/// invalid MIM pixels are marked invalid.
pub fn shift_patch(
    mim: &Mim,
    keypoint: &Keypoint,
    dominant_index: usize,
    beta: f64,
    patch_size: usize,
) -> PatchGrid {
    let half = (patch_size / 2) as i32;
    let side = mim.side() as i32;
    let (sb, cb) = beta.sin_cos();
    let no = mim.orientations as i32;
    let shift = dominant_index as i32;
    let mut index = Array2::<u8>::zeros((patch_size, patch_size));
    let mut valid = Array2::from_elem((patch_size, patch_size), false);
    for a in 0..patch_size {
        let du = a as i32 - half;
        for b in 0..patch_size {
            let dv = b as i32 - half;
            // Sample coordinates rotate by +beta in the image's polar sense.
            let su = (keypoint.u as f64 + cb * du as f64 - sb * dv as f64).round();
            let sv = (keypoint.v as f64 + sb * du as f64 + cb * dv as f64).round();
            if su < 0.0 || sv < 0.0 || su >= side as f64 || sv >= side as f64 {
                continue;
            }
            let (su, sv) = (su as usize, sv as usize);
            if !mim.valid[[su, sv]] {
                continue;
            }
            let raw = mim.index[[su, sv]] as i32;
            index[[a, b]] = (raw - shift).rem_euclid(no) as u8;
            valid[[a, b]] = true;
        }
    }
    PatchGrid { index, valid }
}

/// Histogram counts per sub-grid, orientation-minor. Only valid pixels
/// count.
fn subgrid_counts(patch: &PatchGrid, subgrids: usize, orientations: usize) -> Vec<u32> {
    let side = patch.side();
    let cell = side / subgrids;
    let mut counts = vec![0u32; subgrids * subgrids * orientations];
    for a in 0..side {
        for b in 0..side {
            if !patch.valid[[a, b]] {
                continue;
            }
            let sg = (a / cell) * subgrids + b / cell;
            counts[sg * orientations + patch.index[[a, b]] as usize] += 1;
        }
    }
    counts
}

/// Concatenated sub-grid histograms, L2-normalized.
pub fn build_descriptor(
    patch: &PatchGrid,
    subgrids: usize,
    orientations: usize,
) -> Result<Vec<f32>> {
    let side = patch.side();
    if subgrids == 0 || side % subgrids != 0 {
        return Err(Error::InvalidParam(format!(
            "patch side {side} not divisible into {subgrids} sub-grids"
        )));
    }
    let counts = subgrid_counts(patch, subgrids, orientations);
    let norm_sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    if norm_sq == 0.0 {
        return Err(Error::EmptyPatch);
    }
    let norm = norm_sq.sqrt();
    Ok(counts.iter().map(|&c| (c as f64 / norm) as f32).collect())
}

/// Runs the full per-frame pipeline: FAST keypoints, MIM, per-keypoint
/// canonicalization and descriptor assembly. Each surviving keypoint yields
/// two descriptors; the second comes from the patch rotated by a further pi
/// (the index shift is unchanged since orientation labels have period pi).
pub fn describe_frame(
    image: &BvImage,
    bank: &FilterBank,
    config: &PipelineConfig,
    frame_id: impl Into<String>,
) -> Result<DescriptorSet> {
    let frame_id = frame_id.into();
    let keypoints = detect_fast(
        image,
        config.fast_threshold,
        config.max_keypoints,
        config.patch_size,
    );
    let mut set = DescriptorSet {
        frame_id,
        descriptors: Vec::new(),
    };
    if keypoints.is_empty() {
        return Ok(set);
    }
    let mim = mim_for_image(&image.intensity, bank, config.noise_floor)?;
    let weights = gaussian_window(config.patch_size);
    for kp in keypoints {
        let (o_m, beta) =
            match dominant_orientation_weighted(&mim, &kp, config.patch_size, &weights) {
                Ok(r) => r,
                Err(_) => continue,
            };
        let primary = shift_patch(&mim, &kp, o_m, beta, config.patch_size);
        let flipped = shift_patch(
            &mim,
            &kp,
            o_m,
            beta + std::f64::consts::PI,
            config.patch_size,
        );
        let (Ok(vec_a), Ok(vec_b)) = (
            build_descriptor(&primary, config.subgrids, config.orientations),
            build_descriptor(&flipped, config.subgrids, config.orientations),
        ) else {
            continue;
        };
        set.descriptors.push(Descriptor {
            vector: vec_a,
            keypoint: kp,
            variant: DescriptorVariant::Primary,
            dominant_orientation: beta,
        });
        set.descriptors.push(Descriptor {
            vector: vec_b,
            keypoint: kp,
            variant: DescriptorVariant::PiFlipped,
            dominant_orientation: beta,
        });
    }
    Ok(set)
}

// --- serialization -------------------------------------------------------

const BVFT_MAGIC: &[u8; 4] = b"BVFT";
const BVFT_VERSION: u16 = 1;

/// Encodes a descriptor set: magic "BVFT", version u16, keypoint count u32,
/// then per descriptor `u` u16, `v` u16, variant u8 and the f32 vector, all
/// little-endian.
pub fn descriptor_set_to_bytes(set: &DescriptorSet) -> Vec<u8> {
    debug_assert!(set.descriptors.len() % 2 == 0, "descriptors come in pairs");
    let dim = set.descriptors.first().map_or(0, |d| d.vector.len());
    let mut out = Vec::with_capacity(10 + set.descriptors.len() * (5 + 4 * dim));
    out.extend_from_slice(BVFT_MAGIC);
    out.extend_from_slice(&BVFT_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.keypoint_count() as u32).to_le_bytes());
    for d in &set.descriptors {
        out.extend_from_slice(&(d.keypoint.u as u16).to_le_bytes());
        out.extend_from_slice(&(d.keypoint.v as u16).to_le_bytes());
        out.push(match d.variant {
            DescriptorVariant::Primary => 0,
            DescriptorVariant::PiFlipped => 1,
        });
        for &x in &d.vector {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Decodes a descriptor set produced by [`descriptor_set_to_bytes`]. The
/// vector length is inferred from the record size. Detector scores and
/// canonicalization angles are not persisted and read back as zero.
pub fn descriptor_set_from_bytes(bytes: &[u8], frame_id: impl Into<String>) -> Result<DescriptorSet> {
    if bytes.len() < 10 {
        return Err(Error::Truncated("BVFT"));
    }
    if &bytes[0..4] != BVFT_MAGIC {
        return Err(Error::BadMagic { expected: "BVFT" });
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != BVFT_VERSION {
        return Err(Error::BadVersion {
            format: "BVFT",
            found: version,
            expected: BVFT_VERSION,
        });
    }
    let keypoints = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let records = keypoints * 2;
    let body = &bytes[10..];
    let mut set = DescriptorSet {
        frame_id: frame_id.into(),
        descriptors: Vec::with_capacity(records),
    };
    if records == 0 {
        if !body.is_empty() {
            return Err(Error::Truncated("BVFT"));
        }
        return Ok(set);
    }
    if body.len() % records != 0 {
        return Err(Error::Truncated("BVFT"));
    }
    let record_size = body.len() / records;
    if record_size < 5 || (record_size - 5) % 4 != 0 {
        return Err(Error::Truncated("BVFT"));
    }
    let dim = (record_size - 5) / 4;
    for r in 0..records {
        let rec = &body[r * record_size..(r + 1) * record_size];
        let u = u16::from_le_bytes(rec[0..2].try_into().unwrap()) as usize;
        let v = u16::from_le_bytes(rec[2..4].try_into().unwrap()) as usize;
        let variant = match rec[4] {
            0 => DescriptorVariant::Primary,
            1 => DescriptorVariant::PiFlipped,
            other => {
                return Err(Error::Malformed {
                    path: "<bytes>".into(),
                    location: format!("record {r}"),
                    message: format!("bad variant flag {other}"),
                })
            }
        };
        let mut vector = Vec::with_capacity(dim);
        for k in 0..dim {
            vector.push(f32::from_le_bytes(
                rec[5 + 4 * k..9 + 4 * k].try_into().unwrap(),
            ));
        }
        set.descriptors.push(Descriptor {
            vector,
            keypoint: Keypoint { u, v, score: 0.0 },
            variant,
            dominant_orientation: 0.0,
        });
    }
    Ok(set)
}

pub fn save_descriptor_set(set: &DescriptorSet, path: &Path) -> Result<()> {
    fs::write(path, descriptor_set_to_bytes(set)).map_err(|e| Error::io(path, e))
}

pub fn load_descriptor_set(path: &Path) -> Result<DescriptorSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let frame_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "frame".to_string());
    descriptor_set_from_bytes(&bytes, frame_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;
    use std::f64::consts::PI;

    fn image_from(intensity: Array2<f64>) -> BvImage {
        BvImage::from_intensity(intensity, 0.4, 0.2 * 32.0).unwrap()
    }

    fn uniform_mim(side: usize, index: u8, orientations: usize) -> Mim {
        Mim {
            index: Array2::from_elem((side, side), index),
            amp_max: Array2::from_elem((side, side), 1.0),
            valid: Array2::from_elem((side, side), true),
            orientations,
        }
    }

    #[test]
    fn uniform_image_has_no_keypoints() {
        let image = image_from(Array2::from_elem((32, 32), 0.5));
        assert!(detect_fast(&image, 0.06, 100, 8).is_empty());
    }

    #[test]
    fn isolated_bright_cell_is_detected() {
        let mut intensity = Array2::from_elem((32, 32), 0.1);
        intensity[[16, 16]] = 1.0;
        let image = image_from(intensity);
        let kps = detect_fast(&image, 0.06, 100, 8);
        assert_eq!(kps.len(), 1);
        assert_eq!((kps[0].u, kps[0].v), (16, 16));
    }

    #[test]
    fn detector_matches_exhaustive_segment_test_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let mut intensity = Array2::from_elem((48, 48), 0.08);
        for _ in 0..25 {
            let u = rng.gen_range(6..42);
            let v = rng.gen_range(6..42);
            intensity[[u, v]] = rng.gen_range(0.5..1.0);
        }
        let image = image_from(intensity.clone());
        let threshold = 0.06;

        // Oracle: exhaustive segment test + independent NMS replay.
        let mut oracle = Vec::new();
        for u in 3..45usize {
            for v in 3..45usize {
                let Some(s) = fast_score(&intensity, u, v, threshold) else {
                    continue;
                };
                let mut is_max = true;
                for du in -1i32..=1 {
                    for dv in -1i32..=1 {
                        if du == 0 && dv == 0 {
                            continue;
                        }
                        let nu = (u as i32 + du) as usize;
                        let nv = (v as i32 + dv) as usize;
                        if nu < 3 || nv < 3 || nu >= 45 || nv >= 45 {
                            continue;
                        }
                        if let Some(ns) = fast_score(&intensity, nu, nv, threshold) {
                            if ns > s || (ns == s && (nu, nv) < (u, v)) {
                                is_max = false;
                            }
                        }
                    }
                }
                if is_max && (4..=44).contains(&u) && (4..=44).contains(&v) {
                    oracle.push((u, v));
                }
            }
        }
        let mut got: Vec<(usize, usize)> = detect_fast(&image, threshold, 10_000, 8)
            .iter()
            .map(|k| (k.u, k.v))
            .collect();
        got.sort_unstable();
        oracle.sort_unstable();
        assert_eq!(got, oracle);
        assert!(!got.is_empty());
    }

    #[test]
    fn dominant_orientation_constant_patch() {
        let mim = uniform_mim(32, 3, 6);
        let kp = Keypoint {
            u: 16,
            v: 16,
            score: 1.0,
        };
        let (o_m, beta) = dominant_orientation(&mim, &kp, 16).unwrap();
        assert_eq!(o_m, 3);
        assert_abs_diff_eq!(beta, PI / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn dominant_orientation_zero_index_gives_zero_angle() {
        let mim = uniform_mim(32, 0, 6);
        let kp = Keypoint {
            u: 16,
            v: 16,
            score: 1.0,
        };
        let (o_m, beta) = dominant_orientation(&mim, &kp, 16).unwrap();
        assert_eq!(o_m, 0);
        assert_eq!(beta, 0.0);
    }

    #[test]
    fn gaussian_weighting_favors_center_matching_oracle() {
        // Index 2 inside a central disc, index 5 outside: the raw counts
        // favor 5 but the Gaussian window favors 2.
        let side = 33usize;
        let kp = Keypoint {
            u: 16,
            v: 16,
            score: 1.0,
        };
        let patch_size = 32usize;
        let mut mim = uniform_mim(side, 5, 6);
        let mut count2 = 0;
        let mut count5 = 0;
        for u in 0..side {
            for v in 0..side {
                let d2 = (u as f64 - 16.0).powi(2) + (v as f64 - 16.0).powi(2);
                if d2 <= 160.0 {
                    mim.index[[u, v]] = 2;
                    count2 += 1;
                } else {
                    count5 += 1;
                }
            }
        }
        assert!(count5 > count2, "raw counts must favor the outer index");

        // Independent weighted-histogram recount.
        let sigma = patch_size as f64 / 2.0;
        let mut w2 = 0.0;
        let mut w5 = 0.0;
        for du in -16i32..16 {
            for dv in -16i32..16 {
                let u = (kp.u as i32 + du) as usize;
                let v = (kp.v as i32 + dv) as usize;
                let w = (-((du * du + dv * dv) as f64) / (2.0 * sigma * sigma)).exp();
                if mim.index[[u, v]] == 2 {
                    w2 += w;
                } else {
                    w5 += w;
                }
            }
        }
        assert!(w2 > w5, "oracle must favor the center index");
        let (o_m, _) = dominant_orientation(&mim, &kp, patch_size).unwrap();
        assert_eq!(o_m, 2);
    }

    #[test]
    fn dominant_orientation_requires_valid_pixels() {
        let mut mim = uniform_mim(32, 1, 6);
        mim.valid.fill(false);
        let kp = Keypoint {
            u: 16,
            v: 16,
            score: 1.0,
        };
        assert!(matches!(
            dominant_orientation(&mim, &kp, 16),
            Err(Error::EmptyPatch)
        ));
    }

    #[test]
    fn shift_patch_identity_equals_raw_crop() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let mut mim = uniform_mim(40, 0, 6);
        for u in 0..40 {
            for v in 0..40 {
                mim.index[[u, v]] = rng.gen_range(0..6);
            }
        }
        let kp = Keypoint {
            u: 20,
            v: 20,
            score: 1.0,
        };
        let patch = shift_patch(&mim, &kp, 0, 0.0, 16);
        for a in 0..16usize {
            for b in 0..16usize {
                let su = kp.u + a - 8;
                let sv = kp.v + b - 8;
                assert!(patch.valid[[a, b]]);
                assert_eq!(patch.index[[a, b]], mim.index[[su, sv]]);
            }
        }
    }

    #[test]
    fn shift_patch_cancels_constant_dominant_index() {
        let mim = uniform_mim(40, 4, 6);
        let kp = Keypoint {
            u: 20,
            v: 20,
            score: 1.0,
        };
        let patch = shift_patch(&mim, &kp, 4, PI * 4.0 / 6.0, 16);
        for a in 0..16usize {
            for b in 0..16usize {
                if patch.valid[[a, b]] {
                    assert_eq!(patch.index[[a, b]], 0);
                }
            }
        }
    }

    #[test]
    fn descriptor_of_all_zero_patch_hits_only_first_bins() {
        let patch = PatchGrid {
            index: Array2::zeros((12, 12)),
            valid: Array2::from_elem((12, 12), true),
        };
        let vector = build_descriptor(&patch, 6, 6).unwrap();
        assert_eq!(vector.len(), 216);
        let norm: f64 = vector.iter().map(|&x| (x as f64).powi(2)).sum::<f64>();
        assert_abs_diff_eq!(norm.sqrt(), 1.0, epsilon = 1e-6);
        for (k, &x) in vector.iter().enumerate() {
            if k % 6 == 0 {
                assert!(x > 0.0);
            } else {
                assert_eq!(x, 0.0);
            }
        }
    }

    #[test]
    fn descriptor_counts_match_bruteforce_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);
        let side = 24usize;
        let (subgrids, orientations) = (6usize, 6usize);
        let patch = PatchGrid {
            index: Array2::from_shape_fn((side, side), |_| rng.gen_range(0..6u8)),
            valid: Array2::from_shape_fn((side, side), |_| rng.gen_bool(0.8)),
        };
        let counts = subgrid_counts(&patch, subgrids, orientations);
        let cell = side / subgrids;
        let mut oracle = vec![0u32; subgrids * subgrids * orientations];
        for a in 0..side {
            for b in 0..side {
                if patch.valid[[a, b]] {
                    let sg = (a / cell) * subgrids + b / cell;
                    oracle[sg * orientations + patch.index[[a, b]] as usize] += 1;
                }
            }
        }
        assert_eq!(counts, oracle);
    }

    #[test]
    fn descriptor_of_invalid_patch_is_error() {
        let patch = PatchGrid {
            index: Array2::zeros((12, 12)),
            valid: Array2::from_elem((12, 12), false),
        };
        assert!(matches!(
            build_descriptor(&patch, 6, 6),
            Err(Error::EmptyPatch)
        ));
    }

    #[test]
    fn empty_image_describes_to_empty_set() {
        let config = PipelineConfig {
            window_half: 6.4,
            patch_size: 12,
            ..PipelineConfig::default()
        };
        let image = image_from(Array2::zeros((32, 32)));
        let bank = crate::loggabor::build_bank(32, 32, config.loggabor_params()).unwrap();
        let set = describe_frame(&image, &bank, &config, "empty").unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn serialization_round_trip_preserves_content() {
        let set = DescriptorSet {
            frame_id: "f".into(),
            descriptors: vec![
                Descriptor {
                    vector: vec![0.25f32, 0.5, 0.75],
                    keypoint: Keypoint {
                        u: 10,
                        v: 20,
                        score: 3.0,
                    },
                    variant: DescriptorVariant::Primary,
                    dominant_orientation: 0.5,
                },
                Descriptor {
                    vector: vec![0.1f32, 0.2, 0.3],
                    keypoint: Keypoint {
                        u: 10,
                        v: 20,
                        score: 3.0,
                    },
                    variant: DescriptorVariant::PiFlipped,
                    dominant_orientation: 0.5,
                },
            ],
        };
        let bytes = descriptor_set_to_bytes(&set);
        let back = descriptor_set_from_bytes(&bytes, "f").unwrap();
        assert!(set.content_eq(&back));
    }

    #[test]
    fn deserialization_rejects_bad_magic_and_version() {
        let set = DescriptorSet::default();
        let mut bytes = descriptor_set_to_bytes(&set);
        bytes[0] = b'X';
        assert!(matches!(
            descriptor_set_from_bytes(&bytes, "f"),
            Err(Error::BadMagic { .. })
        ));
        let mut bytes = descriptor_set_to_bytes(&set);
        bytes[4] = 9;
        assert!(matches!(
            descriptor_set_from_bytes(&bytes, "f"),
            Err(Error::BadVersion { .. })
        ));
    }

    #[test]
    fn deserialization_rejects_truncation() {
        let set = DescriptorSet {
            frame_id: "f".into(),
            descriptors: vec![
                Descriptor {
                    vector: vec![1.0f32; 8],
                    keypoint: Keypoint {
                        u: 1,
                        v: 2,
                        score: 0.0,
                    },
                    variant: DescriptorVariant::Primary,
                    dominant_orientation: 0.0,
                },
                Descriptor {
                    vector: vec![1.0f32; 8],
                    keypoint: Keypoint {
                        u: 1,
                        v: 2,
                        score: 0.0,
                    },
                    variant: DescriptorVariant::PiFlipped,
                    dominant_orientation: 0.0,
                },
            ],
        };
        let bytes = descriptor_set_to_bytes(&set);
        assert!(descriptor_set_from_bytes(&bytes[..bytes.len() - 3], "f").is_err());
    }
}
