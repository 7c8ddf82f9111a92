//! End-to-end composition: cloud -> BV image -> descriptors -> registration.

use crate::bvft::{describe_frame, DescriptorSet};
use crate::bvimage::{build_bv_image, BvImage};
use crate::config::PipelineConfig;
use crate::error::Result;
use crate::loggabor::{build_bank, FilterBank};
use crate::pointcloud::{crop_window, voxel_filter, PointCloud, Pose2D};
use crate::registration::{
    icp_refine_planar, match_descriptors, pose_from_image_transform, ransac_rigid, rigid_rms,
    ImageTransform2D, Match, RansacParams,
};

/// A fully processed frame: windowed and downsampled cloud, BV image and
/// BVFT descriptors.
#[derive(Debug, Clone)]
pub struct Frame {
    pub cloud: PointCloud,
    pub image: BvImage,
    pub descriptors: DescriptorSet,
}

/// Shared state for processing frames of one size: configuration plus the
/// filter bank for that image side. Read-only after construction.
pub struct Pipeline {
    config: PipelineConfig,
    bank: FilterBank,
}

/// Registration of a frame pair. `pose` maps points of frame A into frame
/// B's coordinates.
#[derive(Debug, Clone)]
pub struct PairRegistration {
    pub image_transform: ImageTransform2D,
    /// Metric pose recovered from the image transform alone.
    pub coarse_pose: Pose2D,
    /// Pose after planar ICP refinement.
    pub pose: Pose2D,
    pub matches: Vec<Match>,
    pub inliers: usize,
    /// Pixel RMS over the inlier correspondences.
    pub rms_px: f64,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Pipeline> {
        config.validate()?;
        let side = crate::bvimage::grid_side(config.grid_resolution, config.window_half);
        let bank = build_bank(side, side, config.loggabor_params())?;
        Ok(Pipeline { config, bank })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    /// Crops to the window, voxel-filters and builds the BV image.
    pub fn bv_image(&self, cloud: &PointCloud) -> Result<(PointCloud, BvImage)> {
        let cropped = crop_window(cloud, self.config.window_half)?;
        let filtered = voxel_filter(&cropped, self.config.grid_resolution)?;
        let image = build_bv_image(
            &filtered,
            self.config.grid_resolution,
            self.config.window_half,
        )?;
        Ok((filtered, image))
    }

    /// Full per-frame processing up to descriptors.
    pub fn describe(&self, cloud: &PointCloud) -> Result<Frame> {
        let (filtered, image) = self.bv_image(cloud)?;
        let descriptors = describe_frame(&image, &self.bank, &self.config, &*cloud.frame_id)?;
        Ok(Frame {
            cloud: filtered,
            image,
            descriptors,
        })
    }

    /// Matches two described frames and estimates the relative pose:
    /// ratio-test matching, RANSAC on center-origin pixel coordinates,
    /// metric conversion and planar ICP refinement.
    pub fn register(&self, a: &Frame, b: &Frame, seed: u64) -> Result<PairRegistration> {
        let matches = match_descriptors(&a.descriptors, &b.descriptors, self.config.match_ratio);
        let center = a.image.center();
        let centered = |set: &DescriptorSet| -> Vec<(f64, f64)> {
            set.descriptors
                .iter()
                .map(|d| (d.keypoint.u as f64 - center, d.keypoint.v as f64 - center))
                .collect()
        };
        let points_a = centered(&a.descriptors);
        let points_b = centered(&b.descriptors);
        let params = RansacParams {
            inlier_px: self.config.ransac_inlier_px,
            max_iters: self.config.ransac_max_iters,
            confidence: self.config.ransac_confidence,
        };
        let ransac = ransac_rigid(&matches, &points_a, &points_b, &params, seed)?;
        let coarse_pose = pose_from_image_transform(&ransac.transform, self.config.grid_resolution);
        let pose = icp_refine_planar(
            &a.cloud,
            &b.cloud,
            &coarse_pose,
            self.config.icp_max_iters,
            self.config.icp_tolerance,
            self.config.icp_max_corr_dist,
        )?;
        let inlier_pairs: Vec<_> = ransac
            .inliers
            .iter()
            .map(|m| (points_a[m.index_a], points_b[m.index_b]))
            .collect();
        let rms_px = rigid_rms(&inlier_pairs, &ransac.transform);
        Ok(PairRegistration {
            image_transform: ransac.transform,
            coarse_pose,
            pose,
            inliers: ransac.inliers.len(),
            matches,
            rms_px,
        })
    }

    /// Describe-and-register convenience for a cloud pair.
    pub fn match_pair(
        &self,
        cloud_a: &PointCloud,
        cloud_b: &PointCloud,
        seed: u64,
    ) -> Result<(PairRegistration, Frame, Frame)> {
        let a = self.describe(cloud_a)?;
        let b = self.describe(cloud_b)?;
        let registration = self.register(&a, &b, seed)?;
        Ok((registration, a, b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_state_is_send_and_sync() {
        // Frames may be processed from multiple threads against one
        // read-only pipeline and database.
        fn assert_shareable<T: Send + Sync>() {}
        assert_shareable::<Pipeline>();
        assert_shareable::<Frame>();
        assert_shareable::<crate::loggabor::FilterBank>();
        assert_shareable::<crate::loggabor::Mim>();
        assert_shareable::<crate::retrieval::KeyframeDb>();
    }
}
