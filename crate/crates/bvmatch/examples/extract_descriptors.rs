//! Detect keypoints and extract BVFT descriptors from a frame.
//!
//! ```bash
//! cargo run --release --example extract_descriptors
//! ```

use std::env;
use std::time::Instant;

use bvmatch::bvft::save_descriptor_set;
use bvmatch::pipeline::Pipeline;
use bvmatch::synth::{synth_scene, SceneSpec};
use bvmatch::PipelineConfig;

fn main() -> bvmatch::Result<()> {
    let config = PipelineConfig::default();
    let pipeline = Pipeline::new(config)?;
    let cloud = synth_scene(3, &SceneSpec::default())?;

    let start = Instant::now();
    let frame = pipeline.describe(&cloud)?;
    let elapsed = start.elapsed().as_secs_f64();

    let set = &frame.descriptors;
    println!(
        "{}: {} keypoints -> {} descriptors (a primary/pi-flipped pair each) in {elapsed:.2} s",
        set.frame_id,
        set.keypoint_count(),
        set.len()
    );
    if let Some(first) = set.descriptors.first() {
        println!(
            "first keypoint at cell ({}, {}), dominant orientation {:.0} degrees, vector length {}",
            first.keypoint.u,
            first.keypoint.v,
            first.dominant_orientation.to_degrees(),
            first.vector.len()
        );
    }
    let worst_norm = set
        .descriptors
        .iter()
        .map(|d| {
            let n: f64 = d.vector.iter().map(|&x| (x as f64).powi(2)).sum();
            (n.sqrt() - 1.0).abs()
        })
        .fold(0.0, f64::max);
    println!("worst deviation from unit norm: {worst_norm:.2e}");

    let path = env::temp_dir().join("bvmatch_frame.bvft");
    save_descriptor_set(set, &path)?;
    println!("descriptor record written to {}", path.display());
    Ok(())
}
