//! Descriptor matching, robust 2D rigid registration of BV image pairs and
//! planar ICP refinement in the metric frame.
//!
//! Image-plane transforms act on center-origin pixel coordinates and use the
//! BV raster convention `u' = cos(t)u + sin(t)v + tu`,
//! `v' = -sin(t)u + cos(t)v + tv`, which is what a counterclockwise rotation
//! of the cloud about +z looks like on the grid (v grows with -y). Under
//! that convention a metric pose maps to pixels as `tu = tx/g`,
//! `tv = -ty/g` with the angle unchanged.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bvft::DescriptorSet;
use crate::error::{Error, Result};
use crate::pointcloud::{normalize_angle, PointCloud, Pose2D};

/// A putative correspondence between descriptor `index_a` of frame A and
/// descriptor `index_b` of frame B.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f64,
}

/// A `(source, target)` planar point correspondence.
pub type PointPair = ((f64, f64), (f64, f64));

/// A rigid transform on center-origin pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageTransform2D {
    /// Rotation angle in `(-pi, pi]`.
    pub theta: f64,
    /// Pixel translation along u.
    pub t_u: f64,
    /// Pixel translation along v.
    pub t_v: f64,
}

impl ImageTransform2D {
    pub fn new(theta: f64, t_u: f64, t_v: f64) -> Self {
        ImageTransform2D {
            theta: normalize_angle(theta),
            t_u,
            t_v,
        }
    }

    pub fn identity() -> Self {
        ImageTransform2D::new(0.0, 0.0, 0.0)
    }

    pub fn apply(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (
            c * p.0 + s * p.1 + self.t_u,
            -s * p.0 + c * p.1 + self.t_v,
        )
    }
}

/// RANSAC output: the winning transform, its inliers and the number of
/// sampling iterations performed.
#[derive(Debug, Clone)]
pub struct RansacResult {
    pub transform: ImageTransform2D,
    pub inliers: Vec<Match>,
    pub iterations_used: usize,
}

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Ratio-test matching. The distance between a keypoint of `a` and a
/// descriptor of `b` is the minimum over the keypoint's two variants; per
/// keypoint of `b` the better of its two descriptors is the candidate. The
/// Lowe test `nearest <= ratio * second` compares the best candidate
/// against the best one from a different keypoint of `b` (the two
/// descriptors of one keypoint describe the same patch up to the pi
/// ambiguity and would otherwise always tie). At most one match per
/// keypoint of `a`.
pub fn match_descriptors(a: &DescriptorSet, b: &DescriptorSet, ratio: f64) -> Vec<Match> {
    let mut matches = Vec::new();
    if a.is_empty() || b.is_empty() {
        return matches;
    }
    for k in 0..a.keypoint_count() {
        let va = &a.descriptors[2 * k].vector;
        let vb = &a.descriptors[2 * k + 1].vector;
        // (dist, index_b, index_a) of the best and second-best b keypoints
        let mut best: Option<(f64, usize, usize)> = None;
        let mut second = f64::INFINITY;
        for kb in 0..b.keypoint_count() {
            let mut d_kp = f64::INFINITY;
            let mut arg = (0usize, 0usize);
            for j in [2 * kb, 2 * kb + 1] {
                let dbv = &b.descriptors[j].vector;
                for (ia, av) in [(2 * k, va), (2 * k + 1, vb)] {
                    let d = sq_dist(av, dbv);
                    if d < d_kp {
                        d_kp = d;
                        arg = (j, ia);
                    }
                }
            }
            match best {
                Some((bd, _, _)) if d_kp >= bd => second = second.min(d_kp),
                _ => {
                    if let Some((bd, _, _)) = best {
                        second = bd;
                    }
                    best = Some((d_kp, arg.0, arg.1));
                }
            }
        }
        if let Some((d, index_b, index_a)) = best {
            if second.is_infinite() {
                continue; // a single candidate keypoint cannot pass a ratio test
            }
            if d.sqrt() <= ratio * second.sqrt() {
                matches.push(Match {
                    index_a,
                    index_b,
                    distance: d.sqrt(),
                });
            }
        }
    }
    matches
}

/// Least-squares rigid fit (rotation + translation, no scale) from point
/// correspondences `(source, target)`, in the image-transform convention.
pub fn estimate_rigid(pairs: &[PointPair]) -> Result<ImageTransform2D> {
    if pairs.len() < 2 {
        return Err(Error::TooFewMatches);
    }
    let n = pairs.len() as f64;
    let (mut pcx, mut pcy, mut qcx, mut qcy) = (0.0, 0.0, 0.0, 0.0);
    for ((px, py), (qx, qy)) in pairs {
        pcx += px;
        pcy += py;
        qcx += qx;
        qcy += qy;
    }
    pcx /= n;
    pcy /= n;
    qcx /= n;
    qcy /= n;

    let mut spread = 0.0f64;
    let (mut sin_acc, mut cos_acc) = (0.0f64, 0.0f64);
    for ((px, py), (qx, qy)) in pairs {
        let (px, py) = (px - pcx, py - pcy);
        let (qx, qy) = (qx - qcx, qy - qcy);
        spread = spread.max(px * px + py * py);
        // Maximizing sum q . R(theta) p under the raster rotation form.
        cos_acc += qx * px + qy * py;
        sin_acc += qx * py - qy * px;
    }
    if spread < 1e-18 {
        return Err(Error::Degenerate(
            "all source points are coincident".into(),
        ));
    }
    let theta = sin_acc.atan2(cos_acc);
    let (s, c) = theta.sin_cos();
    let t_u = qcx - (c * pcx + s * pcy);
    let t_v = qcy - (-s * pcx + c * pcy);
    Ok(ImageTransform2D::new(theta, t_u, t_v))
}

/// Root-mean-square residual of a transform over correspondences.
pub fn rigid_rms(pairs: &[PointPair], transform: &ImageTransform2D) -> f64 {
    if pairs.is_empty() {
        return 0.0;
    }
    let sum: f64 = pairs
        .iter()
        .map(|(p, q)| {
            let t = transform.apply(*p);
            (t.0 - q.0).powi(2) + (t.1 - q.1).powi(2)
        })
        .sum();
    (sum / pairs.len() as f64).sqrt()
}

/// RANSAC knobs. `inlier_px` is the residual radius in pixels.
#[derive(Debug, Clone, Copy)]
pub struct RansacParams {
    pub inlier_px: f64,
    pub max_iters: usize,
    pub confidence: f64,
}

impl Default for RansacParams {
    fn default() -> Self {
        RansacParams {
            inlier_px: 2.5,
            max_iters: 2000,
            confidence: 0.999,
        }
    }
}

/// Robust rigid estimation from matches. `points_a` / `points_b` give the
/// (center-origin) pixel coordinates of each descriptor, indexed like the
/// match fields. Minimal sample size is 2; the final transform is
/// re-estimated on the full inlier set. Deterministic for a fixed seed.
pub fn ransac_rigid(
    matches: &[Match],
    points_a: &[(f64, f64)],
    points_b: &[(f64, f64)],
    params: &RansacParams,
    seed: u64,
) -> Result<RansacResult> {
    if matches.len() < 2 {
        return Err(Error::TooFewMatches);
    }
    let pairs: Vec<((f64, f64), (f64, f64))> = matches
        .iter()
        .map(|m| (points_a[m.index_a], points_b[m.index_b]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = matches.len();
    let mut best_count = 0usize;
    let mut best_transform: Option<ImageTransform2D> = None;
    let mut bound = params.max_iters;
    let mut iterations = 0usize;

    while iterations < bound {
        iterations += 1;
        let i = rng.gen_range(0..n);
        let j = rng.gen_range(0..n);
        if i == j {
            continue;
        }
        let sample = [pairs[i], pairs[j]];
        let Ok(hypothesis) = estimate_rigid(&sample) else {
            continue;
        };
        let count = pairs
            .iter()
            .filter(|(p, q)| {
                let t = hypothesis.apply(*p);
                (t.0 - q.0).hypot(t.1 - q.1) <= params.inlier_px
            })
            .count();
        if count > best_count {
            best_count = count;
            best_transform = Some(hypothesis);
            // Standard adaptive bound on the number of samples.
            let w = count as f64 / n as f64;
            let denom = (1.0 - w * w).max(f64::MIN_POSITIVE).ln();
            if denom < 0.0 {
                let needed = ((1.0 - params.confidence).ln() / denom).ceil();
                bound = bound.min((needed.max(1.0)) as usize);
            }
        }
    }

    let Some(hypothesis) = best_transform else {
        return Err(Error::RegistrationFailed(
            "no valid hypothesis found".into(),
        ));
    };
    if best_count < 3 {
        return Err(Error::RegistrationFailed(format!(
            "best hypothesis has only {best_count} inliers"
        )));
    }

    let collect_inliers = |t: &ImageTransform2D| -> Vec<Match> {
        matches
            .iter()
            .zip(&pairs)
            .filter(|(_, (p, q))| {
                let tp = t.apply(*p);
                (tp.0 - q.0).hypot(tp.1 - q.1) <= params.inlier_px
            })
            .map(|(m, _)| *m)
            .collect()
    };

    // Iterated re-estimation on the full inlier set.
    let mut transform = hypothesis;
    let mut inliers = collect_inliers(&transform);
    for _ in 0..3 {
        let refit_pairs: Vec<_> = inliers
            .iter()
            .map(|m| (points_a[m.index_a], points_b[m.index_b]))
            .collect();
        let Ok(refit) = estimate_rigid(&refit_pairs) else {
            break;
        };
        let refit_inliers = collect_inliers(&refit);
        if refit_inliers.len() < inliers.len() {
            break;
        }
        let unchanged = refit == transform;
        transform = refit;
        inliers = refit_inliers;
        if unchanged {
            break;
        }
    }

    Ok(RansacResult {
        transform,
        inliers,
        iterations_used: iterations,
    })
}

/// Converts an image transform (center-origin pixels) into a metric pose:
/// translation scales by the grid resolution, the v axis flips sign, the
/// angle is preserved.
pub fn pose_from_image_transform(t: &ImageTransform2D, g: f64) -> Pose2D {
    Pose2D::new(g * t.t_u, -g * t.t_v, t.theta)
}

/// Inverse of [`pose_from_image_transform`].
pub fn image_transform_from_pose(pose: &Pose2D, g: f64) -> ImageTransform2D {
    ImageTransform2D::new(pose.theta, pose.tx / g, -pose.ty / g)
}

/// One line of the registration report: frame ids, angle in degrees, metric
/// translation, inlier count, residual RMS.
pub fn report_line(
    frame_a: &str,
    frame_b: &str,
    pose: &Pose2D,
    inliers: usize,
    rms: f64,
) -> String {
    format!(
        "{frame_a},{frame_b},{:.4},{:.4},{:.4},{inliers},{:.4}",
        pose.theta.to_degrees(),
        pose.tx,
        pose.ty,
        rms
    )
}

// --- planar ICP ----------------------------------------------------------

/// Uniform hash grid over planar points for nearest-neighbor lookups
/// bounded by the cell size.
struct PlanarGrid<'a> {
    cell: f64,
    points: &'a [(f64, f64)],
    map: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> PlanarGrid<'a> {
    fn build(points: &'a [(f64, f64)], cell: f64) -> Self {
        let mut map: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, &(x, y)) in points.iter().enumerate() {
            map.entry(((x / cell).floor() as i64, (y / cell).floor() as i64))
                .or_default()
                .push(i);
        }
        PlanarGrid { cell, points, map }
    }

    /// Nearest point within one cell radius (covers distances up to `cell`).
    fn nearest(&self, x: f64, y: f64) -> Option<(usize, f64)> {
        let cx = (x / self.cell).floor() as i64;
        let cy = (y / self.cell).floor() as i64;
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(bucket) = self.map.get(&(cx + dx, cy + dy)) {
                    for &i in bucket {
                        let (px, py) = self.points[i];
                        let d = (px - x).hypot(py - y);
                        if best.is_none_or(|(_, bd)| d < bd) {
                            best = Some((i, d));
                        }
                    }
                }
            }
        }
        best
    }
}

/// Least-squares rigid fit in the metric plane (counterclockwise rotation).
fn fit_rigid_metric(pairs: &[PointPair]) -> Result<Pose2D> {
    if pairs.len() < 2 {
        return Err(Error::TooFewMatches);
    }
    let n = pairs.len() as f64;
    let (mut pcx, mut pcy, mut qcx, mut qcy) = (0.0, 0.0, 0.0, 0.0);
    for ((px, py), (qx, qy)) in pairs {
        pcx += px;
        pcy += py;
        qcx += qx;
        qcy += qy;
    }
    pcx /= n;
    pcy /= n;
    qcx /= n;
    qcy /= n;
    let (mut sin_acc, mut cos_acc) = (0.0f64, 0.0f64);
    for ((px, py), (qx, qy)) in pairs {
        let (px, py) = (px - pcx, py - pcy);
        let (qx, qy) = (qx - qcx, qy - qcy);
        cos_acc += qx * px + qy * py;
        sin_acc += qy * px - qx * py;
    }
    let theta = sin_acc.atan2(cos_acc);
    let (s, c) = theta.sin_cos();
    Ok(Pose2D::new(
        qcx - (c * pcx - s * pcy),
        qcy - (s * pcx + c * pcy),
        theta,
    ))
}

fn ground_projection(cloud: &PointCloud) -> Vec<(f64, f64)> {
    cloud.points.iter().map(|p| (p.x, p.y)).collect()
}

/// Associates transformed source points to their nearest target within the
/// grid's cell radius. The returned cost is the truncated mean residual:
/// distances clamp at the cutoff and average over all source points, so the
/// cost stays continuous when correspondences enter or leave the radius.
fn associate(
    source: &[(f64, f64)],
    target: &PlanarGrid,
    pose: &Pose2D,
) -> (Vec<PointPair>, f64) {
    let cutoff = target.cell;
    let mut pairs = Vec::new();
    let mut sum = 0.0;
    for &(x, y) in source {
        let (tx, ty) = pose.apply(x, y);
        match target.nearest(tx, ty) {
            Some((j, d)) if d < cutoff => {
                pairs.push(((tx, ty), target.points[j]));
                sum += d;
            }
            _ => sum += cutoff,
        }
    }
    let mean = if source.is_empty() {
        f64::INFINITY
    } else {
        sum / source.len() as f64
    };
    (pairs, mean)
}

/// Truncated mean nearest-neighbor residual of `transform_cloud(a, pose)`
/// against `b` over ground-projected points: per-point distances clamp at
/// `max_corr_dist`. `None` when either cloud is empty.
pub fn planar_residual(
    a: &PointCloud,
    b: &PointCloud,
    pose: &Pose2D,
    max_corr_dist: f64,
) -> Option<f64> {
    let src = ground_projection(a);
    let dst = ground_projection(b);
    if src.is_empty() || dst.is_empty() {
        return None;
    }
    let grid = PlanarGrid::build(&dst, max_corr_dist);
    let (_, mean) = associate(&src, &grid, pose);
    Some(mean)
}

/// Planar (3-DoF) point-to-point ICP over ground-projected points.
///
/// Iterates nearest-neighbor association and closed-form rigid
/// re-estimation until the mean residual changes by less than `tol` or
/// `max_iter` total iterations are spent. Association runs coarse-to-fine:
/// the rejection radius shrinks from `max_corr_dist` over a fixed schedule,
/// which culls the wrong nearest neighbors that self-similar regions
/// produce at the full radius. Within a level, updates that would increase
/// the mean residual are rejected; the returned pose never fits worse than
/// `init` under the full radius.
pub fn icp_refine_planar(
    a: &PointCloud,
    b: &PointCloud,
    init: &Pose2D,
    max_iter: usize,
    tol: f64,
    max_corr_dist: f64,
) -> Result<Pose2D> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParam("ICP requires non-empty clouds".into()));
    }
    let src = ground_projection(a);
    let dst = ground_projection(b);

    let mut pose = *init;
    let mut iterations_left = max_iter;
    for level in [1.0, 0.5, 0.25] {
        let cutoff = max_corr_dist * level;
        let grid = PlanarGrid::build(&dst, cutoff);
        let (mut pairs, mut mean) = associate(&src, &grid, &pose);
        while iterations_left > 0 {
            iterations_left -= 1;
            if pairs.len() < 3 {
                break;
            }
            let Ok(delta) = fit_rigid_metric(&pairs) else {
                break;
            };
            let candidate = delta.compose(&pose);
            let (cand_pairs, cand_mean) = associate(&src, &grid, &candidate);
            if cand_pairs.is_empty() || cand_mean > mean {
                break;
            }
            let improvement = mean - cand_mean;
            pose = candidate;
            mean = cand_mean;
            pairs = cand_pairs;
            if improvement < tol {
                break;
            }
        }
    }

    // Never fit worse than the initial guess under the full radius.
    let full = PlanarGrid::build(&dst, max_corr_dist);
    let (_, init_mean) = associate(&src, &full, init);
    let (final_pairs, final_mean) = associate(&src, &full, &pose);
    if final_pairs.is_empty() || final_mean > init_mean {
        pose = *init;
    }
    Ok(pose)
}
