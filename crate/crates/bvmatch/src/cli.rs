//! Command-line entry points composing the pipeline.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime errors.

use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bvft::save_descriptor_set;
use crate::bvimage::{render_index_pgm, render_pgm, write_intensity_csv};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::eval::{eval_pose, eval_recall};
use crate::loggabor::mim_for_image;
use crate::pipeline::Pipeline;
use crate::pointcloud::{load_cloud, save_cloud, CloudFormat, PointCloud, Pose2D};
use crate::registration::report_line;
use crate::retrieval::{
    build_database, load_db, query, save_db, train_dictionary, Dictionary, KeyframeDb,
};
use crate::synth::{synth_scene, SceneSpec};

#[derive(Parser)]
#[command(
    name = "bvmatch",
    about = "Lidar place recognition and 2D pose estimation on bird's-eye-view images",
    version
)]
struct Cli {
    /// Optional key=value config file applied before any --set overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a single config key, e.g. --set window_half=20.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Ascii,
    Bin,
}

impl FormatArg {
    fn cloud_format(self) -> CloudFormat {
        match self {
            FormatArg::Ascii => CloudFormat::XyzAscii,
            FormatArg::Bin => CloudFormat::XyzBin,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// RNG seed; identical seeds reproduce identical scenes.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output cloud path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Ascii)]
    format: FormatArg,
    /// Placement half-extent for structures, meters.
    #[arg(long, default_value_t = 30.0)]
    extent: f64,
    /// Number of random poles.
    #[arg(long, default_value_t = 24)]
    poles: usize,
    /// Number of random facades.
    #[arg(long, default_value_t = 10)]
    facades: usize,
    /// Per-point Gaussian noise sigma, meters.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args)]
struct RenderBvArgs {
    /// Input cloud (.xyz ASCII or .xyzb binary).
    cloud: PathBuf,
    /// Output PGM path.
    #[arg(long)]
    out: PathBuf,
    /// Also dump the intensity matrix as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct DescribeArgs {
    cloud: PathBuf,
    /// Output descriptor file (BVFT record).
    #[arg(long)]
    out: PathBuf,
    /// Optional MIM rendering (PGM, indices scaled to gray).
    #[arg(long)]
    mim_pgm: Option<PathBuf>,
}

#[derive(Args)]
struct TrainDictArgs {
    /// Training clouds.
    #[arg(required = true)]
    clouds: Vec<PathBuf>,
    /// Output database path (dictionary only, zero entries).
    #[arg(long)]
    out: PathBuf,
    /// Dictionary size; defaults to the configured value.
    #[arg(long)]
    words: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap on the number of training descriptors (subsampled evenly).
    #[arg(long, default_value_t = 50_000)]
    max_descriptors: usize,
}

#[derive(Args)]
struct BuildDbArgs {
    /// Frame manifest CSV with header id,path,tx,ty,theta.
    #[arg(long)]
    frames: PathBuf,
    /// Database holding the trained dictionary.
    #[arg(long)]
    dict: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct QueryArgs {
    cloud: PathBuf,
    #[arg(long)]
    db: PathBuf,
    #[arg(long, default_value_t = 5)]
    top: usize,
}

#[derive(Args)]
struct MatchPairArgs {
    cloud_a: PathBuf,
    cloud_b: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the registration report line to this CSV as well.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalRecallArgs {
    #[arg(long)]
    db: PathBuf,
    /// Query manifest CSV with header id,path,tx,ty,theta.
    #[arg(long)]
    queries: PathBuf,
    /// Ground-truth distance threshold, meters.
    #[arg(long, default_value_t = 25.0)]
    threshold: f64,
    /// Largest rank to evaluate.
    #[arg(long, default_value_t = 25)]
    top: usize,
    /// Write the full recall curve as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalPoseArgs {
    /// Estimates CSV with header id,tx,ty,theta.
    #[arg(long)]
    estimates: PathBuf,
    /// Ground-truth CSV with header id,tx,ty,theta.
    #[arg(long)]
    truths: PathBuf,
    /// Write per-pair errors as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene cloud.
    Synth(SynthArgs),
    /// Project a cloud to a BV density image and write a PGM.
    RenderBv(RenderBvArgs),
    /// Extract BVFT descriptors from a cloud.
    Describe(DescribeArgs),
    /// Train a bag-of-words dictionary from clouds.
    TrainDict(TrainDictArgs),
    /// Build a keyframe database from posed frames.
    BuildDb(BuildDbArgs),
    /// Retrieve the best-matching keyframes for a cloud.
    Query(QueryArgs),
    /// Register two clouds and print the relative pose.
    MatchPair(MatchPairArgs),
    /// Evaluate Top-N recall of a database against posed queries.
    EvalRecall(EvalRecallArgs),
    /// Evaluate RTE/RRE of pose estimates against ground truth.
    EvalPose(EvalPoseArgs),
}

/// Parses and runs the CLI. Returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let config = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match run(cli.command, config) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::default();
    if let Some(path) = &cli.config {
        config.merge_file(path)?;
    }
    for assignment in &cli.overrides {
        let (key, value) = assignment.split_once('=').ok_or_else(|| {
            Error::InvalidParam(format!("--set expects key=value, got {assignment:?}"))
        })?;
        config.set(key.trim(), value.trim())?;
    }
    config.validate()?;
    Ok(config)
}

fn run(command: Command, config: PipelineConfig) -> Result<()> {
    match command {
        Command::Synth(args) => cmd_synth(args),
        Command::RenderBv(args) => cmd_render_bv(args, config),
        Command::Describe(args) => cmd_describe(args, config),
        Command::TrainDict(args) => cmd_train_dict(args, config),
        Command::BuildDb(args) => cmd_build_db(args, config),
        Command::Query(args) => cmd_query(args, config),
        Command::MatchPair(args) => cmd_match_pair(args, config),
        Command::EvalRecall(args) => cmd_eval_recall(args, config),
        Command::EvalPose(args) => cmd_eval_pose(args),
    }
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    let (cloud, rejected) = load_cloud(path, CloudFormat::from_path(path))?;
    if rejected > 0 {
        eprintln!("{}: rejected {rejected} non-finite rows", path.display());
    }
    Ok(cloud)
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SceneSpec {
        half_extent: args.extent,
        pole_count: args.poles,
        facade_count: args.facades,
        noise_sigma: args.noise,
        ..SceneSpec::default()
    };
    let cloud = synth_scene(args.seed, &spec)?;
    save_cloud(&cloud, &args.out, args.format.cloud_format())?;
    println!("wrote {} points to {}", cloud.len(), args.out.display());
    Ok(())
}

fn cmd_render_bv(args: RenderBvArgs, config: PipelineConfig) -> Result<()> {
    let cloud = read_cloud(&args.cloud)?;
    let pipeline = Pipeline::new(config)?;
    let (_, image) = pipeline.bv_image(&cloud)?;
    render_pgm(&image, &args.out)?;
    if let Some(csv) = &args.csv {
        write_intensity_csv(&image, csv)?;
    }
    println!(
        "wrote {}x{} BV image to {}",
        image.side(),
        image.side(),
        args.out.display()
    );
    Ok(())
}

fn cmd_describe(args: DescribeArgs, config: PipelineConfig) -> Result<()> {
    let cloud = read_cloud(&args.cloud)?;
    let pipeline = Pipeline::new(config)?;
    let frame = pipeline.describe(&cloud)?;
    save_descriptor_set(&frame.descriptors, &args.out)?;
    if let Some(pgm) = &args.mim_pgm {
        let mim = mim_for_image(
            &frame.image.intensity,
            pipeline.bank(),
            pipeline.config().noise_floor,
        )?;
        render_index_pgm(
            &mim.index,
            pipeline.config().orientations as u8,
            pgm,
        )?;
    }
    println!(
        "described {}: {} keypoints, {} descriptors -> {}",
        frame.descriptors.frame_id,
        frame.descriptors.keypoint_count(),
        frame.descriptors.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_train_dict(args: TrainDictArgs, config: PipelineConfig) -> Result<()> {
    let pipeline = Pipeline::new(config)?;
    let mut vectors: Vec<Vec<f32>> = Vec::new();
    for path in &args.clouds {
        let cloud = read_cloud(path)?;
        let frame = pipeline.describe(&cloud)?;
        vectors.extend(frame.descriptors.descriptors.iter().map(|d| d.vector.clone()));
    }
    if vectors.len() > args.max_descriptors {
        // Even subsampling keeps the selection deterministic.
        let step = vectors.len() as f64 / args.max_descriptors as f64;
        vectors = (0..args.max_descriptors)
            .map(|i| vectors[(i as f64 * step) as usize].clone())
            .collect();
    }
    let words = args.words.unwrap_or(pipeline.config().dict_words);
    let dictionary = train_dictionary(
        &vectors,
        words,
        pipeline.config().kmeans_max_iters,
        args.seed,
    )?;
    println!(
        "trained {} words from {} descriptors in {} iterations (inertia {:.4})",
        dictionary.words,
        vectors.len(),
        dictionary.iterations,
        dictionary.inertia
    );
    let db = KeyframeDb {
        idf: vec![0.0; dictionary.words],
        dictionary,
        entries: Vec::new(),
        keyframe_spacing: pipeline.config().keyframe_spacing,
    };
    save_db(&db, &args.out)?;
    println!("wrote dictionary database to {}", args.out.display());
    Ok(())
}

/// Manifest rows: id, cloud path, tx, ty, theta.
fn read_manifest(path: &Path) -> Result<Vec<(String, PathBuf, Pose2D)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (lineno == 0 && line.starts_with("id,")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 5 {
            return Err(Error::Malformed {
                path: path.into(),
                location: format!("line {}", lineno + 1),
                message: "expected id,path,tx,ty,theta".into(),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Malformed {
                path: path.into(),
                location: format!("line {}", lineno + 1),
                message: format!("invalid number {s:?}"),
            })
        };
        let cloud_path = {
            let p = PathBuf::from(fields[1]);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        rows.push((
            fields[0].to_string(),
            cloud_path,
            Pose2D::new(parse(fields[2])?, parse(fields[3])?, parse(fields[4])?),
        ));
    }
    if rows.is_empty() {
        return Err(Error::Malformed {
            path: path.into(),
            location: "end of file".into(),
            message: "no frame rows".into(),
        });
    }
    Ok(rows)
}

fn load_dictionary(path: &Path) -> Result<Dictionary> {
    Ok(load_db(path)?.dictionary)
}

fn cmd_build_db(args: BuildDbArgs, config: PipelineConfig) -> Result<()> {
    let pipeline = Pipeline::new(config)?;
    let dictionary = load_dictionary(&args.dict)?;
    let rows = read_manifest(&args.frames)?;
    let mut frames = Vec::with_capacity(rows.len());
    for (id, path, pose) in rows {
        let mut cloud = read_cloud(&path)?;
        cloud.frame_id = id;
        cloud.pose = Some(pose);
        frames.push(cloud);
    }
    let db = build_database(
        &frames,
        pipeline.config().keyframe_spacing,
        dictionary,
        &pipeline,
    )?;
    println!(
        "selected {} keyframes from {} frames",
        db.len(),
        frames.len()
    );
    save_db(&db, &args.out)?;
    println!("wrote database to {}", args.out.display());
    Ok(())
}

fn cmd_query(args: QueryArgs, config: PipelineConfig) -> Result<()> {
    let db = load_db(&args.db)?;
    let pipeline = Pipeline::new(config)?;
    let cloud = read_cloud(&args.cloud)?;
    let frame = pipeline.describe(&cloud)?;
    let global = db.global_for(&frame.descriptors)?;
    let ranked = query(&db, &global, args.top)?;
    println!("rank,frame_id,distance");
    for (k, (id, dist)) in ranked.iter().enumerate() {
        println!("{},{},{:.6}", k + 1, id, dist);
    }
    Ok(())
}

fn cmd_match_pair(args: MatchPairArgs, config: PipelineConfig) -> Result<()> {
    let cloud_a = read_cloud(&args.cloud_a)?;
    let cloud_b = read_cloud(&args.cloud_b)?;
    let pipeline = Pipeline::new(config)?;
    let (registration, a, b) = pipeline.match_pair(&cloud_a, &cloud_b, args.seed)?;
    let line = report_line(
        &a.descriptors.frame_id,
        &b.descriptors.frame_id,
        &registration.pose,
        registration.inliers,
        registration.rms_px,
    );
    println!("frame_a,frame_b,theta_deg,tx,ty,inliers,rms_px");
    println!("{line}");
    if let Some(csv) = &args.csv {
        fs::write(
            csv,
            format!("frame_a,frame_b,theta_deg,tx,ty,inliers,rms_px\n{line}\n"),
        )
        .map_err(|e| Error::io(csv, e))?;
    }
    Ok(())
}

fn cmd_eval_recall(args: EvalRecallArgs, config: PipelineConfig) -> Result<()> {
    let db = load_db(&args.db)?;
    let pipeline = Pipeline::new(config)?;
    let rows = read_manifest(&args.queries)?;
    let mut queries = Vec::with_capacity(rows.len());
    for (id, path, pose) in rows {
        let mut cloud = read_cloud(&path)?;
        cloud.frame_id = id;
        let frame = pipeline.describe(&cloud)?;
        queries.push((db.global_for(&frame.descriptors)?, pose));
    }
    let curve = eval_recall(&db, &queries, args.threshold, args.top)?;
    for n in [1, 5, 10, 25] {
        if n <= curve.recall.len() {
            println!("recall@{n} = {:.3}", curve.at(n));
        }
    }
    if let Some(out) = &args.out {
        let mut text = String::from("n,recall\n");
        for (k, r) in curve.recall.iter().enumerate() {
            text.push_str(&format!("{},{:.6}\n", k + 1, r));
        }
        fs::write(out, text).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}

/// Pose rows: id, tx, ty, theta.
fn read_pose_csv(path: &Path) -> Result<Vec<(String, Pose2D)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (lineno == 0 && line.starts_with("id,")) {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::Malformed {
                path: path.into(),
                location: format!("line {}", lineno + 1),
                message: "expected id,tx,ty,theta".into(),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::Malformed {
                path: path.into(),
                location: format!("line {}", lineno + 1),
                message: format!("invalid number {s:?}"),
            })
        };
        rows.push((
            fields[0].to_string(),
            Pose2D::new(parse(fields[1])?, parse(fields[2])?, parse(fields[3])?),
        ));
    }
    Ok(rows)
}

fn cmd_eval_pose(args: EvalPoseArgs) -> Result<()> {
    let estimates = read_pose_csv(&args.estimates)?;
    let truths = read_pose_csv(&args.truths)?;
    let est: Vec<Pose2D> = estimates.iter().map(|(_, p)| *p).collect();
    let tru: Vec<Pose2D> = truths.iter().map(|(_, p)| *p).collect();
    let report = eval_pose(&est, &tru)?;
    println!(
        "pairs={} success_rate={:.3} mean_rte={:.3} std_rte={:.3} mean_rre_deg={:.3} std_rre_deg={:.3}",
        report.rte.len(),
        report.success_rate,
        report.mean_rte,
        report.std_rte,
        report.mean_rre_deg,
        report.std_rre_deg
    );
    if let Some(out) = &args.out {
        let mut text = String::from("id,rte,rre_deg,success\n");
        for (k, (id, _)) in estimates.iter().enumerate() {
            text.push_str(&format!(
                "{},{:.6},{:.6},{}\n",
                id, report.rte[k], report.rre_deg[k], report.success[k]
            ));
        }
        fs::write(out, text).map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}
