//! Bag-of-words place recognition over a keyframe database.
//!
//! Simulates a vehicle traversal through a large synthetic world, builds a
//! keyframe database (dictionary, TF-IDF globals, local descriptors),
//! persists it, and queries it with rotated rescans of the keyframes.
//!
//! ```bash
//! cargo run --release --example place_recognition
//! ```

use std::env;
use std::f64::consts::PI;

use bvmatch::eval::eval_recall;
use bvmatch::pipeline::Pipeline;
use bvmatch::pointcloud::{transform_cloud, Pose2D};
use bvmatch::retrieval::{build_database, load_db, query, save_db, train_dictionary};
use bvmatch::synth::{synth_scene, SceneSpec};
use bvmatch::PipelineConfig;

fn main() -> bvmatch::Result<()> {
    let config = PipelineConfig {
        window_half: 20.0,
        patch_size: 48,
        ..PipelineConfig::default()
    };
    let pipeline = Pipeline::new(config)?;

    // One large world; each frame is the world seen from a trajectory pose.
    let world_spec = SceneSpec {
        half_extent: 80.0,
        ground_extent: 100.0,
        pole_count: 160,
        facade_count: 160,
        ..SceneSpec::default()
    };
    let world = synth_scene(4, &world_spec)?;
    println!("world: {} points", world.len());

    let mut frames = Vec::new();
    for i in 0..40usize {
        let (row, col) = (i / 10, i % 10);
        let pose = Pose2D::new(
            -60.0 + 13.0 * col as f64,
            -45.0 + 25.0 * row as f64,
            (i % 4) as f64 * PI / 2.0,
        );
        let mut local = transform_cloud(&world, &pose.inverse());
        local.frame_id = format!("kf{i:03}");
        local.pose = Some(pose);
        frames.push(local);
    }

    // Train the vocabulary on descriptors pooled from the frames.
    let mut vectors = Vec::new();
    for frame in frames.iter().step_by(2) {
        let described = pipeline.describe(frame)?;
        vectors.extend(described.descriptors.descriptors.iter().map(|d| d.vector.clone()));
    }
    println!("training dictionary on {} descriptors", vectors.len());
    let dictionary = train_dictionary(&vectors, 128, 40, 11)?;
    println!(
        "dictionary: {} words, {} iterations, inertia {:.3}",
        dictionary.words, dictionary.iterations, dictionary.inertia
    );

    let db = build_database(&frames, 10.0, dictionary, &pipeline)?;
    println!("database: {} keyframes", db.len());

    let path = env::temp_dir().join("bvmatch_keyframes.bvdb");
    save_db(&db, &path)?;
    let db = load_db(&path)?;
    println!("database persisted to {} and reloaded", path.display());

    // Query with rotated rescans of every keyframe.
    let mut queries = Vec::new();
    let mut top1_self = 0usize;
    for (i, frame) in frames.iter().enumerate() {
        let alpha = ((i % 5) + 1) as f64 * PI / 6.0;
        let rotated = transform_cloud(frame, &Pose2D::new(0.0, 0.0, alpha));
        let described = pipeline.describe(&rotated)?;
        let global = db.global_for(&described.descriptors)?;
        let ranked = query(&db, &global, 3)?;
        if ranked[0].0 == frame.frame_id {
            top1_self += 1;
        }
        queries.push((global, frame.pose.unwrap()));
    }
    println!(
        "rotated rescans retrieving their own keyframe first: {top1_self}/{}",
        frames.len()
    );
    let curve = eval_recall(&db, &queries, 25.0, 5)?;
    for n in 1..=5 {
        println!("recall@{n} = {:.3}", curve.at(n));
    }
    Ok(())
}
