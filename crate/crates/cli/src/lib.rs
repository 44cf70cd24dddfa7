//! Experiment runner: streams a dataset through the streaming embedder or
//! the full-refit baseline and writes a metrics CSV plus per-iteration
//! snapshot files.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{ArgGroup, Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use stream_tsne::baseline::{BaselineRunner, DEFAULT_CAP};
use stream_tsne::ecs::{CutKind, DecayParams};
use stream_tsne::geometry::shoelace_area;
use stream_tsne::metrics::{IterationMetrics, MetricsCollector};
use stream_tsne::pipeline::{EmbeddingState, ProjectionSnapshot, Radius, RunConfig};
use stream_tsne::streamgen::{blob_stream, drift_preset, file_stream, synthetic_drift_stream, LabeledPoint};
use stream_tsne::Error;

/// Dimension of `--blobs` data.
pub const BLOB_DIM: usize = 50;
/// Distance between `--blobs` means, in units of the per-axis deviation.
pub const BLOB_SEPARATION: f64 = 10.0;
pub const DEFAULT_DRIFT_TOTAL: usize = 30_000;
pub const DEFAULT_BLOB_TOTAL: usize = 2_000;

#[derive(Parser, Debug)]
#[command(name = "stream-tsne", version, about = "Streaming t-SNE experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Stream through the incremental embedder.
    Run(ExperimentArgs),
    /// Refit t-SNE on all points seen, once per batch.
    Baseline(BaselineArgs),
}

#[derive(Args, Debug, Clone)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub common: ExperimentArgs,
    /// Refuse to refit more points than this.
    #[arg(long, default_value_t = DEFAULT_CAP)]
    pub max_points: usize,
}

#[derive(Args, Debug, Clone)]
#[command(group(ArgGroup::new("source").required(true).args(["input", "synthetic_drift", "blobs"])))]
pub struct ExperimentArgs {
    /// CSV file, one point per line, optional header and trailing label column.
    #[arg(long, value_name = "PATH")]
    pub input: Option<PathBuf>,
    /// Three drifting 3-D Gaussians.
    #[arg(long)]
    pub synthetic_drift: bool,
    /// K separated Gaussian blobs in 50 dimensions.
    #[arg(long, value_name = "K")]
    pub blobs: Option<usize>,
    /// Stream length. Defaults to 30000 (drift), 2000 (blobs) or the file's row count.
    #[arg(long, value_name = "N")]
    pub total: Option<usize>,
    #[arg(long, value_name = "B", default_value_t = 400)]
    pub batch_size: usize,
    /// Representative budget.
    #[arg(long, value_name = "D", default_value_t = 400)]
    pub pedrul: usize,
    /// Neighbourhood radius, or `auto`.
    #[arg(long, value_name = "R|auto", default_value = "auto", value_parser = parse_radius)]
    pub radius: Radius,
    #[arg(long, value_name = "P", default_value_t = 30.0)]
    pub perplexity: f64,
    /// Early-exaggeration and optimization iterations of full fits.
    #[arg(long, value_name = "E,O", value_parser = parse_fit_iters)]
    pub fit_iters: Option<(usize, usize)>,
    #[arg(long, value_name = "N", default_value_t = 100)]
    pub partial_iters: usize,
    #[arg(long, default_value_t = 0.88)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.6, allow_negative_numbers = true)]
    pub beta: f64,
    #[arg(long, default_value_t = 0.01)]
    pub eta: f64,
    #[arg(long, value_name = "M", default_value_t = 3)]
    pub rings: usize,
    #[arg(long, default_value_t = 2.0)]
    pub cluster_eps: f64,
    #[arg(long, default_value_t = 8)]
    pub cluster_minpts: usize,
    /// Fraction of the stream used for the opening fit.
    #[arg(long, value_name = "F", default_value_t = 0.2)]
    pub slice: f64,
    #[arg(long, value_name = "S", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR", default_value = "results")]
    pub out: PathBuf,
    /// Write a snapshot every K iterations; 0 disables snapshots.
    #[arg(long, value_name = "K", default_value_t = 1)]
    pub snapshot_every: u64,
    /// Leave wall-time columns empty so repeated runs give identical files.
    #[arg(long)]
    pub no_timing: bool,
}

fn parse_radius(s: &str) -> Result<Radius, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(Radius::Auto);
    }
    match s.parse::<f64>() {
        Ok(r) if r > 0.0 && r.is_finite() => Ok(Radius::Fixed(r)),
        _ => Err(format!("expected a positive number or `auto`, got `{s}`")),
    }
}

fn parse_fit_iters(s: &str) -> Result<(usize, usize), String> {
    let (e, o) = s.split_once(',').ok_or_else(|| format!("expected E,O, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("`{v}` is not a count"));
    Ok((parse(e)?, parse(o)?))
}

/// A failure, split by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration, exit code 2.
    Usage(String),
    /// Failure while running, exit code 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

fn config_error(e: Error) -> CliError {
    match e {
        Error::Config(msg) => CliError::Usage(msg),
        other => CliError::Runtime(other.into()),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum SourceKind {
    File(PathBuf),
    Drift,
    Blobs(usize),
}

/// Everything that determines a run's output, hashed into snapshots.
#[derive(Debug, Clone, Serialize)]
struct ResolvedConfig {
    mode: &'static str,
    source: SourceKind,
    total: usize,
    config: RunConfig,
}

impl ResolvedConfig {
    fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

type PointIter = Box<dyn Iterator<Item = anyhow::Result<LabeledPoint>>>;

impl ExperimentArgs {
    fn source(&self) -> SourceKind {
        match (&self.input, self.blobs) {
            (Some(path), _) => SourceKind::File(path.clone()),
            (None, Some(k)) => SourceKind::Blobs(k),
            (None, None) => SourceKind::Drift,
        }
    }

    fn resolve(&self, mode: &'static str, default_fit: (usize, usize)) -> Result<ResolvedConfig, CliError> {
        let source = self.source();
        let total = match (&source, self.total) {
            (_, Some(n)) => n,
            (SourceKind::Drift, None) => DEFAULT_DRIFT_TOTAL,
            (SourceKind::Blobs(_), None) => DEFAULT_BLOB_TOTAL,
            (SourceKind::File(path), None) => count_rows(path)?,
        };
        if let SourceKind::Blobs(0) = source {
            return Err(CliError::Usage("--blobs needs at least one blob".into()));
        }
        let (early, optimization) = self.fit_iters.unwrap_or(default_fit);
        let config = RunConfig {
            batch_size: self.batch_size,
            pedrul_budget: self.pedrul,
            radius: self.radius,
            perplexity: self.perplexity,
            fit_early_iters: early,
            fit_optimization_iters: optimization,
            partial_iters: self.partial_iters,
            decay: DecayParams { alpha: self.alpha, beta: self.beta, eta: self.eta },
            rings: self.rings,
            cluster_eps: self.cluster_eps,
            cluster_min_pts: self.cluster_minpts,
            slice_fraction: self.slice,
            expected_total: Some(total),
            seed: self.seed,
        };
        config.validate().map_err(config_error)?;
        Ok(ResolvedConfig { mode, source, total, config })
    }
}

fn count_rows(path: &Path) -> Result<usize, CliError> {
    let mut n = 0;
    for item in file_stream(path).with_context(|| format!("opening {}", path.display()))? {
        item.with_context(|| format!("reading {}", path.display()))?;
        n += 1;
    }
    Ok(n)
}

fn open_stream(resolved: &ResolvedConfig) -> anyhow::Result<PointIter> {
    let total = resolved.total;
    let seed = resolved.config.seed;
    Ok(match &resolved.source {
        SourceKind::File(path) => {
            let ctx = path.display().to_string();
            Box::new(
                file_stream(path)
                    .with_context(|| format!("opening {ctx}"))?
                    .map(move |r| r.with_context(|| format!("reading {ctx}")))
                    .take(total),
            )
        }
        SourceKind::Drift => Box::new(synthetic_drift_stream(drift_preset(total), seed)?.map(Ok)),
        SourceKind::Blobs(k) => {
            let per = total.div_ceil(*k);
            let points = blob_stream(*k, per, BLOB_SEPARATION, BLOB_DIM, seed)?;
            Box::new(points.into_iter().take(total).map(Ok))
        }
    })
}

/// One snapshot file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotFile {
    pub t: u64,
    pub config_hash: String,
    pub hulls: Vec<HullLoop>,
    pub anchors: Vec<AnchorRecord>,
    pub cuts: Vec<CutEntry>,
}

/// A closed counter-clockwise loop: the first vertex is repeated at the end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HullLoop {
    pub id: u64,
    pub vertices: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnchorRecord {
    pub id: u64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CutEntry {
    pub polygon_id: u64,
    pub section_id: usize,
    pub kind: CutKind,
}

impl SnapshotFile {
    pub fn new(snapshot: &ProjectionSnapshot, config_hash: &str) -> Self {
        Self {
            t: snapshot.t,
            config_hash: config_hash.to_string(),
            hulls: snapshot
                .hulls
                .iter()
                .map(|h| {
                    let mut vertices = h.vertices.clone();
                    vertices.extend(h.vertices.first().copied());
                    HullLoop { id: h.id, vertices }
                })
                .collect(),
            anchors: snapshot
                .anchors
                .iter()
                .map(|a| AnchorRecord { id: a.source_id, x: a.coords[0], y: a.coords[1] })
                .collect(),
            cuts: snapshot
                .cuts
                .iter()
                .map(|c| CutEntry { polygon_id: c.polygon_id, section_id: c.section_id, kind: c.kind })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("snapshot serializes")
    }

    /// Parses and checks that every loop is closed and counter-clockwise.
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let file: SnapshotFile = serde_json::from_str(text)?;
        for h in &file.hulls {
            let v = &h.vertices;
            if v.len() < 4 || v.first() != v.last() {
                return Err(anyhow!("hull {} is not a closed loop", h.id));
            }
            if shoelace_area(&v[..v.len() - 1]) <= 0.0 {
                return Err(anyhow!("hull {} is not counter-clockwise", h.id));
            }
        }
        Ok(file)
    }

    pub fn file_name(t: u64) -> String {
        format!("snapshot_{t:05}.json")
    }
}

/// Outcome of a finished run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub metrics: MetricsCollector,
    pub metrics_path: PathBuf,
    pub snapshots: Vec<PathBuf>,
    pub config_hash: String,
}

pub fn execute(cli: Cli) -> Result<RunSummary, CliError> {
    match cli.command {
        Command::Run(args) => run(&args),
        Command::Baseline(args) => baseline(&args),
    }
}

pub fn run(args: &ExperimentArgs) -> Result<RunSummary, CliError> {
    let resolved = args.resolve("run", (250, 400))?;
    let hash = resolved.hash();
    let mut state = EmbeddingState::new(resolved.config.clone()).map_err(config_error)?;
    let stream = open_stream(&resolved)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut metrics = MetricsCollector::new();
    let mut snapshots = Vec::new();
    let mut on_report = |state: &EmbeddingState, report| -> anyhow::Result<()> {
        let m = IterationMetrics::from_projection(state, &report);
        log::info!(
            "t={} anchors={} hulls={} cuts={} kld={:?}",
            m.t,
            m.anchors,
            state.hulls().len(),
            m.cuts,
            m.kld
        );
        metrics.record(m)?;
        if args.snapshot_every > 0 && state.iterations() % args.snapshot_every == 0 {
            let file = SnapshotFile::new(&state.snapshot(), &hash);
            let path = args.out.join(SnapshotFile::file_name(file.t));
            fs::write(&path, file.to_json()).with_context(|| format!("writing {}", path.display()))?;
            snapshots.push(path);
        }
        Ok(())
    };
    for point in stream {
        let point = point?;
        if let Some(report) = state.ingest(point.point).map_err(anyhow::Error::from)? {
            on_report(&state, report)?;
        }
    }
    if let Some(report) = state.flush().map_err(anyhow::Error::from)? {
        on_report(&state, report)?;
    }
    finish(args, metrics, snapshots, hash)
}

pub fn baseline(args: &BaselineArgs) -> Result<RunSummary, CliError> {
    let common = &args.common;
    let resolved = common.resolve("baseline", (250, 500))?;
    let hash = resolved.hash();
    let mut runner = BaselineRunner::new(resolved.config.clone(), args.max_points).map_err(config_error)?;
    let stream = open_stream(&resolved)?;
    fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;

    let mut metrics = MetricsCollector::new();
    for point in stream {
        if let Some(m) = runner.ingest(point?.point).map_err(anyhow::Error::from)? {
            log::info!("t={} points={} kld={:?}", m.t, m.anchors, m.kld);
            metrics.record(m).map_err(anyhow::Error::from)?;
        }
    }
    if let Some(m) = runner.flush().map_err(anyhow::Error::from)? {
        metrics.record(m).map_err(anyhow::Error::from)?;
    }
    finish(common, metrics, Vec::new(), hash)
}

fn finish(
    args: &ExperimentArgs,
    metrics: MetricsCollector,
    snapshots: Vec<PathBuf>,
    config_hash: String,
) -> Result<RunSummary, CliError> {
    let metrics_path = args.out.join("metrics.csv");
    metrics
        .write_csv(&metrics_path, !args.no_timing)
        .with_context(|| format!("writing {}", metrics_path.display()))?;
    Ok(RunSummary { metrics, metrics_path, snapshots, config_hash })
}
