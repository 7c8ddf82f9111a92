//! Evaluation metrics: Top-N recall for place retrieval and RTE/RRE for
//! pose estimates.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::pointcloud::Pose2D;
use crate::retrieval::{query, GlobalDescriptor, KeyframeDb};

/// Top-N recall over a query set. `recall[k]` is the fraction of queries
/// whose ground-truth position lies within `threshold_m` of at least one of
/// the top `k + 1` retrieved keyframes.
#[derive(Debug, Clone)]
pub struct RecallCurve {
    pub recall: Vec<f64>,
    pub threshold_m: f64,
    pub query_count: usize,
}

impl RecallCurve {
    /// Recall at rank `n` (1-based).
    pub fn at(&self, n: usize) -> f64 {
        assert!(n >= 1 && n <= self.recall.len());
        self.recall[n - 1]
    }
}

/// Evaluates Top-N recall. A retrieval at rank k succeeds when the planar
/// distance between the keyframe pose and the query's ground-truth pose is
/// within `threshold_m`.
pub fn eval_recall(
    db: &KeyframeDb,
    queries: &[(GlobalDescriptor, Pose2D)],
    threshold_m: f64,
    n_max: usize,
) -> Result<RecallCurve> {
    if db.is_empty() || queries.is_empty() {
        return Err(Error::InvalidParam(
            "recall evaluation needs a non-empty database and query set".into(),
        ));
    }
    if n_max == 0 {
        return Err(Error::InvalidParam("n_max must be >= 1".into()));
    }
    let poses: HashMap<&str, Pose2D> = db
        .entries
        .iter()
        .map(|e| (e.frame_id.as_str(), e.pose))
        .collect();
    let n_max = n_max.min(db.len());
    let mut hits = vec![0usize; n_max];
    for (q, truth) in queries {
        let ranked = query(db, q, n_max)?;
        let success_rank = ranked.iter().position(|(id, _)| {
            let pose = poses[id.as_str()];
            (pose.tx - truth.tx).hypot(pose.ty - truth.ty) <= threshold_m
        });
        if let Some(rank) = success_rank {
            for slot in hits.iter_mut().skip(rank) {
                *slot += 1;
            }
        }
    }
    let recall = hits
        .iter()
        .map(|&h| h as f64 / queries.len() as f64)
        .collect();
    Ok(RecallCurve {
        recall,
        threshold_m,
        query_count: queries.len(),
    })
}

/// Per-pair relative translation/rotation errors with the 2 m / 5 degree
/// success rule (strict inequalities).
#[derive(Debug, Clone)]
pub struct PoseErrorReport {
    /// Relative translation error per pair, meters.
    pub rte: Vec<f64>,
    /// Relative rotation error per pair, degrees.
    pub rre_deg: Vec<f64>,
    pub success: Vec<bool>,
    pub success_rate: f64,
    /// Mean/std of RTE and RRE over the successful pairs.
    pub mean_rte: f64,
    pub std_rte: f64,
    pub mean_rre_deg: f64,
    pub std_rre_deg: f64,
}

pub const RTE_SUCCESS_M: f64 = 2.0;
pub const RRE_SUCCESS_DEG: f64 = 5.0;

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Compares pose estimates against ground truth. The error pose is
/// `truth^-1 ∘ estimate`; RTE is its translation norm, RRE the absolute
/// normalized angle in degrees.
pub fn eval_pose(estimates: &[Pose2D], truths: &[Pose2D]) -> Result<PoseErrorReport> {
    if estimates.len() != truths.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} estimates vs {} truths",
            estimates.len(),
            truths.len()
        )));
    }
    let mut rte = Vec::with_capacity(estimates.len());
    let mut rre_deg = Vec::with_capacity(estimates.len());
    let mut success = Vec::with_capacity(estimates.len());
    for (est, truth) in estimates.iter().zip(truths) {
        let rel = truth.inverse().compose(est);
        let t = rel.translation_norm();
        let r = rel.theta.abs().to_degrees();
        success.push(t < RTE_SUCCESS_M && r < RRE_SUCCESS_DEG);
        rte.push(t);
        rre_deg.push(r);
    }
    let ok_rte: Vec<f64> = rte
        .iter()
        .zip(&success)
        .filter(|(_, &s)| s)
        .map(|(&v, _)| v)
        .collect();
    let ok_rre: Vec<f64> = rre_deg
        .iter()
        .zip(&success)
        .filter(|(_, &s)| s)
        .map(|(&v, _)| v)
        .collect();
    let (mean_rte, std_rte) = mean_std(&ok_rte);
    let (mean_rre_deg, std_rre_deg) = mean_std(&ok_rre);
    let success_rate = success.iter().filter(|&&s| s).count() as f64 / success.len().max(1) as f64;
    Ok(PoseErrorReport {
        rte,
        rre_deg,
        success,
        success_rate,
        mean_rte,
        std_rte,
        mean_rre_deg,
        std_rre_deg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bvft::DescriptorSet;
    use crate::retrieval::{Dictionary, KeyframeEntry};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn db_with_poses(poses: &[(f64, f64)]) -> KeyframeDb {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let entries = poses
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let raw: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                KeyframeEntry {
                    frame_id: format!("kf{i:03}"),
                    pose: Pose2D::new(x, y, 0.0),
                    global: GlobalDescriptor {
                        weights: raw.iter().map(|v| (v / norm) as f32).collect(),
                    },
                    descriptors: DescriptorSet::default(),
                }
            })
            .collect();
        KeyframeDb {
            dictionary: Dictionary {
                centroids: vec![0.0; 6],
                words: 6,
                dim: 1,
                iterations: 0,
                inertia: 0.0,
            },
            idf: vec![0.0; 6],
            entries,
            keyframe_spacing: 0.0,
        }
    }

    #[test]
    fn self_queries_have_full_recall_at_one() {
        let db = db_with_poses(&[(0.0, 0.0), (30.0, 0.0), (60.0, 0.0)]);
        let queries: Vec<(GlobalDescriptor, Pose2D)> = db
            .entries
            .iter()
            .map(|e| (e.global.clone(), e.pose))
            .collect();
        let curve = eval_recall(&db, &queries, 25.0, 3).unwrap();
        assert_eq!(curve.at(1), 1.0);
    }

    #[test]
    fn zero_threshold_fails_without_duplicates() {
        let db = db_with_poses(&[(0.0, 0.0), (30.0, 0.0), (60.0, 0.0)]);
        // Queries whose poses do not coincide with any keyframe.
        let queries: Vec<(GlobalDescriptor, Pose2D)> = db
            .entries
            .iter()
            .map(|e| (e.global.clone(), Pose2D::new(e.pose.tx + 1.0, 0.0, 0.0)))
            .collect();
        let curve = eval_recall(&db, &queries, 0.0, 3).unwrap();
        assert!(curve.recall.iter().all(|&r| r == 0.0));
    }

    #[test]
    fn recall_matches_exhaustive_oracle_and_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let poses: Vec<(f64, f64)> = (0..20)
            .map(|_| (rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)))
            .collect();
        let db = db_with_poses(&poses);
        let queries: Vec<(GlobalDescriptor, Pose2D)> = (0..15)
            .map(|_| {
                let raw: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..1.0)).collect();
                let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                (
                    GlobalDescriptor {
                        weights: raw.iter().map(|v| (v / norm) as f32).collect(),
                    },
                    Pose2D::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0), 0.0),
                )
            })
            .collect();
        let t = 20.0;
        let curve = eval_recall(&db, &queries, t, 20).unwrap();

        // Oracle: recompute from sorted distances.
        for n in 1..=20usize {
            let mut hits = 0;
            for (q, truth) in &queries {
                let mut ranked: Vec<(String, f64)> = db
                    .entries
                    .iter()
                    .map(|e| (e.frame_id.clone(), e.global.distance(q)))
                    .collect();
                ranked.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| a.0.cmp(&b.0)));
                let ok = ranked.iter().take(n).any(|(id, _)| {
                    let e = db.entries.iter().find(|e| &e.frame_id == id).unwrap();
                    (e.pose.tx - truth.tx).hypot(e.pose.ty - truth.ty) <= t
                });
                if ok {
                    hits += 1;
                }
            }
            assert_abs_diff_eq!(curve.at(n), hits as f64 / 15.0, epsilon = 1e-12);
        }
        for k in 1..curve.recall.len() {
            assert!(curve.recall[k] >= curve.recall[k - 1]);
        }
    }

    #[test]
    fn empty_inputs_are_errors() {
        let db = db_with_poses(&[(0.0, 0.0)]);
        assert!(eval_recall(&db, &[], 25.0, 1).is_err());
        let empty = db_with_poses(&[]);
        let q = vec![(
            GlobalDescriptor {
                weights: vec![0.0; 6],
            },
            Pose2D::identity(),
        )];
        assert!(eval_recall(&empty, &q, 25.0, 1).is_err());
    }

    #[test]
    fn exact_estimate_has_zero_error_and_succeeds() {
        let truth = vec![Pose2D::new(3.0, -2.0, 0.7)];
        let report = eval_pose(&truth, &truth).unwrap();
        assert_abs_diff_eq!(report.rte[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.rre_deg[0], 0.0, epsilon = 1e-12);
        assert!(report.success[0]);
        assert_eq!(report.success_rate, 1.0);
    }

    #[test]
    fn exact_two_meter_offset_fails_strictly() {
        let truth = vec![Pose2D::identity()];
        let est = vec![Pose2D::new(2.0, 0.0, 0.0)];
        let report = eval_pose(&est, &truth).unwrap();
        assert_abs_diff_eq!(report.rte[0], 2.0, epsilon = 1e-12);
        assert!(!report.success[0]);
    }

    #[test]
    fn errors_match_matrix_composition_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let truth = Pose2D::new(
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-3.0..3.0),
            );
            let est = Pose2D::new(
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(-3.0..3.0),
            );
            let report = eval_pose(&[est], &[truth]).unwrap();

            // Oracle: 3x3 homogeneous matrices.
            let mat = |p: &Pose2D| {
                let (s, c) = p.theta.sin_cos();
                [[c, -s, p.tx], [s, c, p.ty], [0.0, 0.0, 1.0]]
            };
            let inv = |m: [[f64; 3]; 3]| {
                // rigid inverse: R^T, -R^T t
                [
                    [m[0][0], m[1][0], -(m[0][0] * m[0][2] + m[1][0] * m[1][2])],
                    [m[0][1], m[1][1], -(m[0][1] * m[0][2] + m[1][1] * m[1][2])],
                    [0.0, 0.0, 1.0],
                ]
            };
            let mul = |a: [[f64; 3]; 3], b: [[f64; 3]; 3]| {
                let mut out = [[0.0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        for (k, row) in b.iter().enumerate() {
                            out[i][j] += a[i][k] * row[j];
                        }
                    }
                }
                out
            };
            let rel = mul(inv(mat(&truth)), mat(&est));
            let expected_rte = (rel[0][2].powi(2) + rel[1][2].powi(2)).sqrt();
            let expected_rre = rel[1][0].atan2(rel[0][0]).abs().to_degrees();
            assert_abs_diff_eq!(report.rte[0], expected_rte, epsilon = 1e-9);
            assert_abs_diff_eq!(report.rre_deg[0], expected_rre, epsilon = 1e-9);
        }
    }

    #[test]
    fn eval_pose_is_invariant_under_common_frame_change() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frame_change = Pose2D::new(12.0, -7.0, 1.9);
        for _ in 0..50 {
            let truth = Pose2D::new(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-3.0..3.0),
            );
            let est = Pose2D::new(
                truth.tx + rng.gen_range(-1.0..1.0),
                truth.ty + rng.gen_range(-1.0..1.0),
                truth.theta + rng.gen_range(-0.05..0.05),
            );
            let base = eval_pose(&[est], &[truth]).unwrap();
            let moved = eval_pose(
                &[frame_change.compose(&est)],
                &[frame_change.compose(&truth)],
            )
            .unwrap();
            assert_abs_diff_eq!(base.rte[0], moved.rte[0], epsilon = 1e-9);
            assert_abs_diff_eq!(base.rre_deg[0], moved.rre_deg[0], epsilon = 1e-9);
        }
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        assert!(eval_pose(&[Pose2D::identity()], &[]).is_err());
    }
}
