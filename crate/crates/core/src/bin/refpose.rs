use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use refpose::bench::{run_benchmark, BenchConfig};
use refpose::descriptor::DescriptorProviderSpec;
use refpose::geometry::FrameJson;
use refpose::io::{read_ply, write_ply};
use refpose::loss::{total_loss, LossManifest};
use refpose::pipeline::{PipelineConfig, PosePipeline};
use refpose::segmatch::{
    assign_proposals, load_proposals, load_references, nms_indices, DEFAULT_CONFIDENCE_FLOOR,
    DEFAULT_IOU_THRESHOLD,
};
use refpose::{Error, Result};

#[derive(Parser)]
#[command(name = "refpose", version, about = "Relative pose between two partial point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory; defaults to printing on stdout where possible.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Descriptor provider id (`occupancy`, `local_shape`).
    #[arg(long)]
    provider: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write benchmark pairs as PLY files with ground-truth JSON.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Only the first N pairs.
        #[arg(long)]
        limit: Option<usize>,
    },
    /// Run the benchmark and write report.csv and report.json.
    Run {
        #[command(flatten)]
        common: Common,
        /// Record per-pair wall time; the report then differs between runs.
        #[arg(long)]
        timing: bool,
    },
    /// Estimate the pose mapping QUERY onto REFERENCE.
    Pose {
        query: PathBuf,
        reference: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Precomputed query features; selects the file provider.
        #[arg(long, requires = "reference_features")]
        query_features: Option<PathBuf>,
        #[arg(long, requires = "query_features")]
        reference_features: Option<PathBuf>,
    },
    /// Assign segmentation proposals to reference objects.
    Segmatch {
        /// JSON list of `{mask, confidence, descriptor}`.
        proposals: PathBuf,
        /// JSON list of `{class_id, descriptor}`.
        references: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_IOU_THRESHOLD)]
        iou_threshold: f64,
        #[arg(long, default_value_t = DEFAULT_CONFIDENCE_FLOOR)]
        confidence_floor: f64,
        #[arg(long, default_value_t = 0.0)]
        min_score: f64,
    },
    /// Evaluate the training losses on dumped correlation fields.
    Loss {
        manifest: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn emit<T: Serialize>(common: &Common, file: &str, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match &common.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join(file), text + "\n")?;
        }
        None => println!("{text}"),
    }
    Ok(())
}

fn bench_config(common: &Common) -> Result<BenchConfig> {
    let mut cfg = match &common.config {
        Some(path) => BenchConfig::load(path)?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(id) = &common.provider {
        cfg.pipeline.descriptor = DescriptorProviderSpec {
            id: id.clone(),
            params: Default::default(),
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn threads(common: &Common) -> usize {
    common
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

#[derive(Serialize)]
struct GroundTruth {
    #[serde(flatten)]
    pose: FrameJson,
    rotation_distance_deg: f64,
    overlap_ratio: f64,
    radius: f64,
    noise_sigma: f64,
    outlier_fraction: f64,
}

fn gen(common: &Common, limit: Option<usize>) -> Result<()> {
    let cfg = bench_config(common)?;
    let dir = common.out_dir.clone().unwrap_or_else(|| PathBuf::from("pairs"));
    fs::create_dir_all(&dir)?;
    let count = limit.map_or(cfg.pair_count(), |l| l.min(cfg.pair_count()));
    for i in 0..count {
        let pair = cfg.pair(i)?;
        write_ply(&dir.join(format!("pair_{i:05}_query.ply")), &pair.query)?;
        write_ply(&dir.join(format!("pair_{i:05}_reference.ply")), &pair.reference)?;
        let gt = GroundTruth {
            pose: FrameJson::from(&pair.gt),
            rotation_distance_deg: pair.rotation_distance_deg,
            overlap_ratio: pair.overlap_ratio,
            radius: pair.radius,
            noise_sigma: pair.noise_sigma,
            outlier_fraction: pair.outlier_fraction,
        };
        fs::write(
            dir.join(format!("pair_{i:05}_gt.json")),
            serde_json::to_string_pretty(&gt)? + "\n",
        )?;
    }
    eprintln!("wrote {count} pairs to {}", dir.display());
    Ok(())
}

fn run(common: &Common, timing: bool) -> Result<()> {
    let cfg = bench_config(common)?;
    let report = run_benchmark(&cfg, threads(common), timing)?;
    let dir = common.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    report.write(&dir)?;
    print!("{}", report.to_csv()?);
    Ok(())
}

fn pose(
    common: &Common,
    query: &Path,
    reference: &Path,
    features: Option<(PathBuf, PathBuf)>,
) -> Result<()> {
    let mut cfg: PipelineConfig = match &common.config {
        Some(path) => read_json(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(id) = &common.provider {
        cfg.descriptor = DescriptorProviderSpec {
            id: id.clone(),
            params: Default::default(),
        };
    }
    if let Some((q, p)) = features {
        cfg.descriptor = DescriptorProviderSpec::file(q, p);
    }
    let pipeline = PosePipeline::new(cfg)?;
    let estimate = with_threads(common, || pipeline.estimate(&read_ply(query)?, &read_ply(reference)?))?;
    emit(common, "pose.json", &estimate)
}

fn with_threads<T: Send>(common: &Common, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads(common))
        .build()
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .install(f)
}

#[derive(Serialize)]
struct SegmatchOutput {
    kept: Vec<usize>,
    assignments: Vec<refpose::segmatch::ProposalAssignment>,
}

fn segmatch(
    common: &Common,
    proposals: &Path,
    references: &Path,
    iou_threshold: f64,
    confidence_floor: f64,
    min_score: f64,
) -> Result<()> {
    let props = load_proposals(proposals)?;
    let refs = load_references(references)?;
    let kept = nms_indices(&props, iou_threshold, confidence_floor)?;
    let survivors: Vec<_> = kept.iter().map(|&i| props[i].clone()).collect();
    let mut assignments = with_threads(common, || assign_proposals(&survivors, &refs, min_score))?;
    // report indices into the manifest, not into the survivor list
    for a in &mut assignments {
        a.proposal = kept[a.proposal];
    }
    emit(common, "assignments.json", &SegmatchOutput { kept, assignments })
}

fn loss(common: &Common, manifest: &Path) -> Result<()> {
    let (m, stages) = LossManifest::load(manifest)?;
    emit(common, "loss.json", &total_loss(&stages, &m.config)?)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen { common, limit } => gen(&common, limit),
        Command::Run { common, timing } => run(&common, timing),
        Command::Pose {
            query,
            reference,
            common,
            query_features,
            reference_features,
        } => pose(&common, &query, &reference, query_features.zip(reference_features)),
        Command::Segmatch {
            proposals,
            references,
            common,
            iou_threshold,
            confidence_floor,
            min_score,
        } => segmatch(&common, &proposals, &references, iou_threshold, confidence_floor, min_score),
        Command::Loss { manifest, common } => loss(&common, &manifest),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
