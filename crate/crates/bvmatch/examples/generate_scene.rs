//! Generate a synthetic Lidar scene and render its bird's-eye-view image.
//!
//! ```bash
//! cargo run --release --example generate_scene
//! ```

use std::env;

use bvmatch::bvimage::render_pgm;
use bvmatch::pipeline::Pipeline;
use bvmatch::pointcloud::{save_cloud, CloudFormat};
use bvmatch::synth::{synth_scene, SceneSpec};
use bvmatch::PipelineConfig;

fn main() -> bvmatch::Result<()> {
    let spec = SceneSpec {
        pole_count: 20,
        facade_count: 12,
        noise_sigma: 0.02,
        ..SceneSpec::default()
    };
    let cloud = synth_scene(42, &spec)?;
    println!(
        "scene: {} points ({} poles, {} facades, ground grid)",
        cloud.len(),
        spec.pole_count,
        spec.facade_count
    );

    let dir = env::temp_dir();
    let ascii = dir.join("bvmatch_scene.xyz");
    let binary = dir.join("bvmatch_scene.xyzb");
    save_cloud(&cloud, &ascii, CloudFormat::XyzAscii)?;
    save_cloud(&cloud, &binary, CloudFormat::XyzBin)?;
    println!("cloud written to {} and {}", ascii.display(), binary.display());

    // Project to the normalized density image at the default 0.4 m grid.
    let pipeline = Pipeline::new(PipelineConfig::default())?;
    let (filtered, image) = pipeline.bv_image(&cloud)?;
    println!(
        "BV image: {0}x{0} cells, {1} points after the voxel filter, saturation count {2}",
        image.side(),
        filtered.len(),
        image.normalizer
    );
    let pgm = dir.join("bvmatch_scene.pgm");
    render_pgm(&image, &pgm)?;
    println!("render written to {}", pgm.display());
    Ok(())
}
