//! RTE/RRE evaluation of pose estimates over a batch of registrations.
//!
//! Registers several noisy pairs with known relative poses and scores the
//! estimates with the 2 m / 5 degree success rule.
//!
//! ```bash
//! cargo run --release --example evaluate_errors
//! ```

use std::f64::consts::PI;

use bvmatch::eval::eval_pose;
use bvmatch::pipeline::Pipeline;
use bvmatch::pointcloud::{transform_cloud, Pose2D};
use bvmatch::synth::{synth_scene, SceneSpec};
use bvmatch::PipelineConfig;

fn main() -> bvmatch::Result<()> {
    let config = PipelineConfig {
        window_half: 40.0,
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::new(config)?;
    let spec = SceneSpec {
        half_extent: 25.0,
        ground_extent: 38.0,
        noise_sigma: 0.05,
        ..SceneSpec::default()
    };

    let mut estimates = Vec::new();
    let mut truths = Vec::new();
    for i in 0..10u64 {
        let truth = Pose2D::new(
            (i as f64 * 37.0) % 15.0 - 7.0,
            (i as f64 * 53.0) % 11.0 - 5.0,
            (i % 12) as f64 * PI / 6.0,
        );
        let scan_a = synth_scene(100 + i, &spec)?;
        let scan_b = transform_cloud(&synth_scene(100 + i, &spec)?, &truth);
        match pipeline.match_pair(&scan_a, &scan_b, i) {
            Ok((registration, _, _)) => {
                estimates.push(registration.pose);
                truths.push(truth);
            }
            Err(e) => println!("pair {i}: registration failed ({e})"),
        }
    }

    let report = eval_pose(&estimates, &truths)?;
    println!("pair  RTE (m)  RRE (deg)  success");
    for k in 0..report.rte.len() {
        println!(
            "{k:>4}  {:>7.3}  {:>9.3}  {}",
            report.rte[k], report.rre_deg[k], report.success[k]
        );
    }
    println!(
        "success rate {:.2}, mean RTE {:.3} +/- {:.3} m, mean RRE {:.3} +/- {:.3} deg",
        report.success_rate,
        report.mean_rte,
        report.std_rte,
        report.mean_rre_deg,
        report.std_rre_deg
    );
    Ok(())
}
