//! Synthetic benchmark: seeded shapes, two-view pairs binned by rotation
//! distance, pose metrics and per-bin reports.

pub mod metrics;
pub mod pairs;
pub mod shapes;

use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::{PipelineConfig, PosePipeline};

pub use metrics::{mspd, mssd, rotation_error, rotation_error_rad, translation_error, SymmetrySet};
pub use pairs::{make_pair, partial_view, visible_indices, BenchmarkPair, PairSpec};
pub use shapes::{generate_shape, ShapeKind, ShapeSpec};

/// Rotation error assigned to pairs where estimation failed.
pub const FAILURE_ROTATION_DEG: f64 = 180.0;
const MAX_REDRAWS: u64 = 64;

fn default_bins() -> Vec<[f64; 2]> {
    (0..9).map(|i| [10.0 * i as f64, 10.0 * (i + 1) as f64]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Repetition `k` within a bin uses shape `k mod shapes.len()`, with its
    /// seed mixed with the pair seed so every repetition gets a fresh
    /// instance.
    pub shapes: Vec<ShapeSpec>,
    pub bins: Vec<[f64; 2]>,
    pub pairs_per_bin: usize,
    pub noise_sigma: f64,
    pub outlier_fraction: f64,
    pub occlusion_fraction: f64,
    pub partial_views: bool,
    pub overlap_delta: f64,
    /// Pairs with a lower overlap ratio are redrawn.
    pub min_overlap: f64,
    pub pipeline: PipelineConfig,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            shapes: vec![ShapeSpec::default()],
            bins: default_bins(),
            pairs_per_bin: 10,
            noise_sigma: 0.005,
            outlier_fraction: 0.0,
            occlusion_fraction: 0.0,
            partial_views: true,
            overlap_delta: 0.01,
            min_overlap: 0.0,
            pipeline: PipelineConfig::default(),
            seed: 0,
        }
    }
}

impl BenchConfig {
    /// Parses JSON, reporting the line and column of syntax errors and the
    /// offending key for unknown or invalid fields.
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: BenchConfig = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&fs::read_to_string(path)?, path)
    }

    pub fn validate(&self) -> Result<()> {
        let prefixed = |prefix: String| {
            move |e: Error| match e {
                Error::Config { key, message } => Error::config(format!("{prefix}.{key}"), message),
                other => other,
            }
        };
        if self.shapes.is_empty() {
            return Err(Error::config("shapes", "must list at least one shape"));
        }
        for (i, s) in self.shapes.iter().enumerate() {
            s.validate().map_err(prefixed(format!("shapes[{i}]")))?;
        }
        if self.bins.is_empty() {
            return Err(Error::config("bins", "must list at least one bin"));
        }
        for (i, [lo, hi]) in self.bins.iter().enumerate() {
            if !(0.0 <= *lo && lo <= hi && *hi <= 180.0) {
                return Err(Error::config(format!("bins[{i}]"), "must satisfy 0 <= lo <= hi <= 180"));
            }
        }
        if self.pairs_per_bin == 0 {
            return Err(Error::config("pairs_per_bin", "must be positive"));
        }
        let ranges = [
            ("noise_sigma", self.noise_sigma, 0.0..=1.0),
            ("outlier_fraction", self.outlier_fraction, 0.0..=10.0),
            ("occlusion_fraction", self.occlusion_fraction, 0.0..=0.99),
            ("min_overlap", self.min_overlap, 0.0..=1.0),
        ];
        for (key, v, range) in ranges {
            if !range.contains(&v) {
                return Err(Error::config(
                    key,
                    format!("must lie in [{}, {}]", range.start(), range.end()),
                ));
            }
        }
        if !(self.overlap_delta > 0.0) {
            return Err(Error::config("overlap_delta", "must be positive"));
        }
        self.pipeline.validate().map_err(prefixed("pipeline".into()))
    }

    fn pair_spec(&self, bin: [f64; 2]) -> PairSpec {
        PairSpec {
            rot_bin: bin,
            noise_sigma: self.noise_sigma,
            outlier_fraction: self.outlier_fraction,
            occlusion_fraction: self.occlusion_fraction,
            partial_views: self.partial_views,
            overlap_delta: self.overlap_delta,
        }
    }

    /// Pair `index`, redrawn until the overlap floor is met. Repetition `k`
    /// of every bin draws the same shape, model placement, rotation axis and
    /// in-bin angle fraction, so bins differ only in the rotation angle.
    pub fn pair(&self, index: usize) -> Result<BenchmarkPair> {
        let bin = self.bins[index / self.pairs_per_bin];
        let rep = index % self.pairs_per_bin;
        let spec = self.pair_spec(bin);
        let base = self.shapes[rep % self.shapes.len()].clone();
        let mut last = None;
        for attempt in 0..MAX_REDRAWS {
            let seed = derive_seed(derive_seed(self.seed, rep as u64), attempt);
            let shape = ShapeSpec {
                seed: derive_seed(base.seed, seed),
                ..base.clone()
            };
            let pair = make_pair(&shape, &spec, seed)?;
            if pair.overlap_ratio >= self.min_overlap {
                return Ok(pair);
            }
            last = Some(pair.overlap_ratio);
        }
        Err(Error::invalid(format!(
            "pair {index}: no draw reached min_overlap {} (last {:?})",
            self.min_overlap, last
        )))
    }

    pub fn pair_count(&self) -> usize {
        self.bins.len() * self.pairs_per_bin
    }
}

/// Independent stream `stream` of the master seed.
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub index: usize,
    pub bin: usize,
    pub rotation_distance_deg: f64,
    pub overlap_ratio: f64,
    pub rot_err_deg: f64,
    /// Translation error as a fraction of the model radius.
    pub trans_err_rel: f64,
    pub succeeded: bool,
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ms: Option<f64>,
}

impl PairResult {
    pub fn success_at(&self, deg: f64, rel: f64) -> bool {
        self.succeeded && self.rot_err_deg < deg && self.trans_err_rel < rel
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinRow {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub n: usize,
    pub succ_5_5: f64,
    pub succ_10_10: f64,
    pub mean_rot_err: f64,
    pub median_rot_err: f64,
    pub mean_overlap: f64,
    pub std_overlap: f64,
    /// Wall-clock time; only filled when timing is requested, since it would
    /// otherwise make reports differ between runs.
    pub mean_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub bins: Vec<BinRow>,
    pub pairs: Vec<PairResult>,
}

/// Evaluates one pair with an RNG derived from its seed.
pub fn evaluate_pair(
    cfg: &BenchConfig,
    pipeline: &PosePipeline,
    index: usize,
    timing: bool,
) -> Result<PairResult> {
    let pair = cfg.pair(index)?;
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed ^ cfg.pipeline.seed, index as u64 | 1 << 63));
    let outcome = pipeline.estimate_with_rng(&pair.query, &pair.reference, &mut rng);
    let ms = timing.then(|| start.elapsed().as_secs_f64() * 1e3);
    let (rot_err_deg, trans_err_rel, error) = match outcome {
        Ok(est) => (
            rotation_error(&est.pose, &pair.gt),
            translation_error(&est.pose, &pair.gt) / pair.radius,
            None,
        ),
        Err(e) => (FAILURE_ROTATION_DEG, f64::INFINITY, Some(e.to_string())),
    };
    Ok(PairResult {
        index,
        bin: index / cfg.pairs_per_bin,
        rotation_distance_deg: pair.rotation_distance_deg,
        overlap_ratio: pair.overlap_ratio,
        rot_err_deg,
        trans_err_rel,
        succeeded: error.is_none(),
        error,
        ms,
    })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn summarize(bin: [f64; 2], results: &[&PairResult], timing: bool) -> BinRow {
    let n = results.len();
    let rate = |deg, rel| results.iter().filter(|r| r.success_at(deg, rel)).count() as f64 / n as f64;
    let mut errs: Vec<f64> = results.iter().map(|r| r.rot_err_deg).collect();
    errs.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        errs[n / 2]
    } else {
        0.5 * (errs[n / 2 - 1] + errs[n / 2])
    };
    let overlaps: Vec<f64> = results.iter().map(|r| r.overlap_ratio).collect();
    let mo = mean(&overlaps);
    let var = overlaps.iter().map(|o| (o - mo).powi(2)).sum::<f64>() / n as f64;
    BinRow {
        bin_lo: bin[0],
        bin_hi: bin[1],
        n,
        succ_5_5: rate(5.0, 0.05),
        succ_10_10: rate(10.0, 0.10),
        mean_rot_err: mean(&errs),
        median_rot_err: median,
        mean_overlap: mo,
        std_overlap: var.sqrt(),
        mean_ms: if timing {
            Some(mean(&results.iter().filter_map(|r| r.ms).collect::<Vec<_>>()))
        } else {
            None
        },
    }
}

/// Runs every pair on a pool of `threads` workers. Results do not depend on
/// the thread count.
pub fn run_benchmark(cfg: &BenchConfig, threads: usize, timing: bool) -> Result<BenchReport> {
    cfg.validate()?;
    let pipeline = PosePipeline::new(cfg.pipeline.clone())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let pairs: Vec<PairResult> = pool.install(|| {
        (0..cfg.pair_count())
            .into_par_iter()
            .map(|i| evaluate_pair(cfg, &pipeline, i, timing))
            .collect::<Result<_>>()
    })?;
    let bins = cfg
        .bins
        .iter()
        .enumerate()
        .map(|(b, bin)| {
            let members: Vec<&PairResult> = pairs.iter().filter(|r| r.bin == b).collect();
            summarize(*bin, &members, timing)
        })
        .collect();
    Ok(BenchReport { bins, pairs })
}

impl BenchReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &self.bins {
            w.serialize(row).map_err(|e| Error::invalid(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Writes `report.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.csv"), self.to_csv()?)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
