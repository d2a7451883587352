//! Command implementations behind the `dbgan` binary.
//!
//! Every command writes into one output directory with fixed file names:
//! `manifest.json`, `history.csv`, `checkpoints/`, `metrics.json`,
//! `embeddings.csv` and, for dimension sweeps, `sweep.csv`. Machine-readable
//! payloads go to stdout, messages to stderr.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Matrix;
use crate::graph::{load_graph, parse_labels, split_edges, EdgeSplit, Graph};
use crate::metrics::{evaluate_embeddings, link_prediction, summarize, MetricsReport, RunMetrics};
use crate::nn::{read_checkpoint, write_checkpoint};
use crate::train::{
    embed, parse_config_pairs, train_with_observer, FeatureLoss, TrainConfig, TrainData, TrainError,
    TrainHistory, TrainOutcome,
};

pub const SPLIT_RATIOS: (f64, f64, f64) = (0.85, 0.05, 0.10);
pub const DEFAULT_SWEEP: [usize; 8] = [8, 16, 32, 64, 128, 256, 512, 1024];
pub const THREADS_ENV: &str = "DBGAN_THREADS";
pub const DEFAULT_OUT: &str = "dbgan-out";
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

pub const MANIFEST_FILE: &str = "manifest.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const METRICS_FILE: &str = "metrics.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Parser)]
#[command(name = "dbgan", version, about = "Adversarial graph autoencoder with a DPP/KDE latent prior")]
pub struct Cli {
    /// Worker threads for independent runs.
    #[arg(long, global = true, env = THREADS_ENV, value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one model per seed; writes the manifest, history and checkpoints.
    Train(TrainArgs),
    /// Score the checkpoints of a training run and write metrics.json.
    Eval(EvalArgs),
    /// Train and score across latent widths; writes sweep.csv.
    SweepDim(SweepArgs),
    /// Write the encoder output of a trained model as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// `key = value` file with training keys and optionally edges, features, labels, out, runs.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub edges: Option<PathBuf>,
    #[arg(long)]
    pub features: Option<PathBuf>,
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// First seed; runs use `seed, seed+1, ...`.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub runs: Option<u32>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ModelArgs {
    /// Prototype count.
    #[arg(long)]
    pub m: Option<usize>,
    /// Reconstruction weight.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Gradient-penalty weight.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Standard normal prior instead of the prototype KDE.
    #[arg(long)]
    pub no_pde: bool,
    /// Reconstruction-only training of encoder and generator.
    #[arg(long)]
    pub no_bal: bool,
    /// Reconstruction-only training of the encoder on the adjacency term.
    #[arg(long, conflicts_with = "no_bal")]
    pub no_bal_strict_gae: bool,
    #[arg(long, value_parser = ["bce", "mse"])]
    pub feature_loss: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Latent width.
    #[arg(long)]
    pub q: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Task {
    Lp,
    Cluster,
    Both,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Directory of a finished training run.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Task::Both)]
    pub task: Task,
    /// Number of seeds to score, from the start of the run's seed list.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    pub runs: Option<u32>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Latent widths, comma-separated or repeated.
    #[arg(long, value_delimiter = ',')]
    pub q: Vec<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    /// Directory of a finished training run.
    #[arg(long)]
    pub out: PathBuf,
    /// Seed whose checkpoint is exported; defaults to the first of the run.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Append a label column: the run's labels, or those read from the given file.
    #[arg(long, num_args = 0..=1)]
    pub labels: Option<Option<PathBuf>>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("seed {seed}: {source}")]
    Diverged { seed: u64, source: TrainError },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Data(_) => 2,
            Self::Diverged { .. } => 3,
        }
    }

    fn from_train(seed: u64, e: TrainError) -> Self {
        match e {
            TrainError::Config(c) => Self::Config(c.to_string()),
            TrainError::Diverged { .. } => Self::Diverged { seed, source: e },
            other => Self::Data(format!("seed {seed}: {other}")),
        }
    }
}

fn data_err(what: impl std::fmt::Display) -> CliError {
    CliError::Data(what.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: Option<PathBuf>,
}

/// Everything needed to reproduce a run. Written before training starts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config: TrainConfig,
    pub dataset: DatasetPaths,
    pub seeds: Vec<u64>,
    pub split_ratios: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_values: Option<Vec<usize>>,
    pub threads: usize,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub created_unix: u64,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| data_err(format!("{}: {e}", path.display())))
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(&dir.join(MANIFEST_FILE), &(text + "\n"))
    }
}

fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs())
        })
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| data_err(format!("{}: {e}", path.display())))
}

/// Configuration and data location after merging the config file and flags.
#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub config: TrainConfig,
    pub dataset: DatasetPaths,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
}

/// Flags override config-file values, which override defaults.
pub fn resolve(data: &DataArgs, model: &ModelArgs, q: Option<usize>) -> Result<Resolved, CliError> {
    let mut config = TrainConfig::default();
    let (mut edges, mut features, mut labels, mut out, mut runs) = (None, None, None, None, 1u64);
    if let Some(path) = &data.config {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let pairs = parse_config_pairs(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        // Relative dataset paths in a config file are relative to the file.
        let base = path.parent().unwrap_or(Path::new(""));
        for (key, value) in pairs {
            match key.as_str() {
                "edges" => edges = Some(base.join(value)),
                "features" => features = Some(base.join(value)),
                "labels" => labels = Some(base.join(value)),
                "out" => out = Some(base.join(value)),
                "runs" => {
                    runs = value
                        .parse()
                        .ok()
                        .filter(|r| *r > 0)
                        .ok_or_else(|| CliError::Config(format!("bad value {value:?} for runs")))?
                }
                _ => config.set(&key, &value).map_err(|e| CliError::Config(e.to_string()))?,
            }
        }
    }
    edges = data.edges.clone().or(edges);
    features = data.features.clone().or(features);
    labels = data.labels.clone().or(labels);
    out = data.out.clone().or(out);
    if let Some(r) = data.runs {
        runs = r.into();
    }
    if let Some(s) = data.seed {
        config.seed = s;
    }
    if let Some(q) = q {
        config.q = q;
    }
    if let Some(m) = model.m {
        config.m = m;
    }
    if let Some(a) = model.alpha {
        config.alpha = a;
    }
    if let Some(l) = model.lambda {
        config.lambda_gp = l;
    }
    if let Some(lr) = model.lr {
        config.lr = lr;
    }
    if let Some(e) = model.epochs {
        config.epochs = e;
    }
    if model.no_pde {
        config.use_pde = false;
    }
    if model.no_bal {
        config.use_bal = false;
        config.strict_gae = false;
    }
    if model.no_bal_strict_gae {
        config.use_bal = false;
        config.strict_gae = true;
    }
    if let Some(f) = &model.feature_loss {
        config.feature_loss = f.parse::<FeatureLoss>().map_err(|e| CliError::Config(e.to_string()))?;
    }
    config.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let need = |p: Option<PathBuf>, flag: &str| {
        p.ok_or_else(|| CliError::Config(format!("missing --{flag} (flag or config key)")))
    };
    let seeds = (0..runs)
        .map(|i| {
            config
                .seed
                .checked_add(i)
                .ok_or_else(|| CliError::Config("seed range overflows u64".into()))
        })
        .collect::<Result<_, _>>()?;
    Ok(Resolved {
        dataset: DatasetPaths {
            edges: need(edges, "edges")?,
            features: need(features, "features")?,
            labels,
        },
        out: out.unwrap_or_else(|| PathBuf::from(DEFAULT_OUT)),
        seeds,
        config,
    })
}

/// Loads the graph; for the BCE feature loss, features outside `[0, 1]` are
/// min-max scaled per column.
pub fn load_dataset(paths: &DatasetPaths, feature_loss: FeatureLoss) -> Result<Graph, CliError> {
    let mut g = load_graph(&paths.edges, &paths.features, paths.labels.as_deref()).map_err(data_err)?;
    if feature_loss == FeatureLoss::Bce && !g.features_in_unit_interval() {
        g.min_max_normalize_features();
    }
    Ok(g)
}

/// One seed: split with that seed, then train on the training edges.
pub fn train_seed(
    g: &Graph,
    config: &TrainConfig,
    seed: u64,
    mut snapshot: impl FnMut(usize, &crate::nn::ModelParams),
) -> Result<(EdgeSplit, TrainOutcome), CliError> {
    let split = split_edges(g, SPLIT_RATIOS, seed).map_err(data_err)?;
    let data = TrainData::from_split(g, &split).map_err(|e| CliError::from_train(seed, e))?;
    let config = TrainConfig {
        seed,
        ..config.clone()
    };
    let outcome = train_with_observer(&data, &config, |s| snapshot(s.epoch, s.params))
        .map_err(|e| CliError::from_train(seed, e))?;
    Ok((split, outcome))
}

fn checkpoint_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(CHECKPOINT_DIR).join(format!("seed-{seed}.ckpt"))
}

fn history_rows(seed: u64, h: &TrainHistory, out: &mut String) {
    for line in h.to_csv().lines().skip(1) {
        let _ = writeln!(out, "{seed},{line}");
    }
}

fn thread_count(pool: &rayon::ThreadPool) -> usize {
    pool.current_num_threads()
}

pub fn cmd_train(args: &TrainArgs, pool: &rayon::ThreadPool, stderr: &mut dyn Write) -> Result<String, CliError> {
    let r = resolve(&args.data, &args.model, args.q)?;
    let g = load_dataset(&r.dataset, r.config.feature_loss)?;
    create_dir(&r.out.join(CHECKPOINT_DIR))?;
    RunManifest {
        version: VERSION.into(),
        command: "train".into(),
        config: r.config.clone(),
        dataset: r.dataset.clone(),
        seeds: r.seeds.clone(),
        split_ratios: [SPLIT_RATIOS.0, SPLIT_RATIOS.1, SPLIT_RATIOS.2],
        q_values: None,
        threads: thread_count(pool),
        created_unix: timestamp(),
    }
    .write(&r.out)?;

    let results: Vec<_> = pool.install(|| {
        r.seeds
            .par_iter()
            .map(|&seed| {
                let mut snapshot_err = None;
                let res = train_seed(&g, &r.config, seed, |epoch, params| {
                    let path = r.out.join(CHECKPOINT_DIR).join(format!("seed-{seed}-epoch-{epoch}.ckpt"));
                    if let Err(e) = write_checkpoint(params, &path) {
                        snapshot_err.get_or_insert_with(|| data_err(format!("{}: {e}", path.display())));
                    }
                });
                match (res, snapshot_err) {
                    (Ok(_), Some(e)) => Err(e),
                    (res, _) => res.map(|(_, o)| o),
                }
            })
            .collect()
    });

    let mut history = format!("seed,{}\n", TrainHistory::CSV_HEADER);
    let mut summary = String::new();
    let mut failure = None;
    for (&seed, res) in r.seeds.iter().zip(results) {
        match res {
            Ok(o) => {
                let path = checkpoint_path(&r.out, seed);
                write_checkpoint(&o.params, &path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
                history_rows(seed, &o.history, &mut history);
                let last = o.history.records.last();
                let _ = writeln!(
                    summary,
                    "seed {seed}: {} epochs, kept epoch {}, val auc {}",
                    o.history.records.len(),
                    o.selected_epoch,
                    last.and_then(|l| l.val_auc).map_or("n/a".into(), |a| format!("{a:.4}"))
                );
            }
            Err(e) => {
                if let CliError::Diverged {
                    source: TrainError::Diverged { history: h, .. },
                    ..
                } = &e
                {
                    history_rows(seed, h, &mut history);
                }
                failure.get_or_insert(e);
            }
        }
    }
    write_file(&r.out.join(HISTORY_FILE), &history)?;
    let _ = stderr.write_all(summary.as_bytes());
    match failure {
        Some(e) => Err(e),
        None => Ok(format!("{}\n", r.out.display())),
    }
}

fn load_run(dir: &Path) -> Result<(RunManifest, Graph), CliError> {
    let m = RunManifest::read(dir)?;
    let g = load_dataset(&m.dataset, m.config.feature_loss)?;
    Ok((m, g))
}

/// Embeddings of a saved model on the training graph of its seed.
pub fn embed_checkpoint(dir: &Path, g: &Graph, seed: u64) -> Result<(EdgeSplit, Matrix), CliError> {
    let path = checkpoint_path(dir, seed);
    let params = read_checkpoint(&path).map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    let split = split_edges(g, SPLIT_RATIOS, seed).map_err(data_err)?;
    let data = TrainData::from_split(g, &split).map_err(|e| CliError::from_train(seed, e))?;
    if params.encoder.first().map(|l| l.weight.nrows()) != Some(g.feature_dim()) {
        return Err(data_err(format!("{}: feature width does not match the dataset", path.display())));
    }
    let h = embed(&params, &data).map_err(data_err)?;
    Ok((split, h))
}

pub fn cmd_eval(args: &EvalArgs, pool: &rayon::ThreadPool) -> Result<String, CliError> {
    let (manifest, g) = load_run(&args.out)?;
    let runs = args.runs.map_or(manifest.seeds.len(), |r| r as usize);
    if runs > manifest.seeds.len() {
        return Err(data_err(format!(
            "asked for {runs} runs but the run has {} checkpoints",
            manifest.seeds.len()
        )));
    }
    let want_cluster = args.task != Task::Lp;
    let labels = match (want_cluster, g.labels()) {
        (true, None) => return Err(data_err("clustering needs labels; the run has none")),
        (true, Some(l)) => Some(l),
        (false, _) => None,
    };
    let k = g.num_classes().unwrap_or(0);
    let results: Vec<Result<RunMetrics, CliError>> = pool.install(|| {
        manifest.seeds[..runs]
            .par_iter()
            .map(|&seed| {
                let (split, h) = embed_checkpoint(&args.out, &g, seed)?;
                let lp = (args.task != Task::Cluster).then_some(&split);
                evaluate_embeddings(&h, lp, labels, k, seed).map_err(data_err)
            })
            .collect()
    });
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let report = serde_json::to_string_pretty(&MetricsReport::from_runs(&runs)).expect("report serializes") + "\n";
    write_file(&args.out.join(METRICS_FILE), &report)?;
    Ok(report)
}

/// Sweep rows in input order of `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub q: usize,
    pub auc: f64,
    pub ap: f64,
    pub auc_std: f64,
    pub ap_std: f64,
    pub runs: usize,
}

pub const SWEEP_HEADER: &str = "q,auc,ap,auc_std,ap_std,runs";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = format!("{SWEEP_HEADER}\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.q, r.auc, r.ap, r.auc_std, r.ap_std, r.runs);
    }
    s
}

pub fn cmd_sweep_dim(args: &SweepArgs, pool: &rayon::ThreadPool) -> Result<String, CliError> {
    let qs = if args.q.is_empty() {
        DEFAULT_SWEEP.to_vec()
    } else {
        args.q.clone()
    };
    let mut seen = std::collections::BTreeSet::new();
    if let Some(d) = qs.iter().find(|q| !seen.insert(**q)) {
        return Err(CliError::Config(format!("duplicate q value {d}")));
    }
    let r = resolve(&args.data, &args.model, qs.first().copied())?;
    let g = load_dataset(&r.dataset, r.config.feature_loss)?;
    create_dir(&r.out)?;
    RunManifest {
        version: VERSION.into(),
        command: "sweep-dim".into(),
        config: r.config.clone(),
        dataset: r.dataset.clone(),
        seeds: r.seeds.clone(),
        split_ratios: [SPLIT_RATIOS.0, SPLIT_RATIOS.1, SPLIT_RATIOS.2],
        q_values: Some(qs.clone()),
        threads: thread_count(pool),
        created_unix: timestamp(),
    }
    .write(&r.out)?;

    let jobs: Vec<(usize, u64)> = qs.iter().flat_map(|&q| r.seeds.iter().map(move |&s| (q, s))).collect();
    let scores: Vec<Result<(f64, f64), CliError>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(q, seed)| {
                let config = TrainConfig { q, ..r.config.clone() };
                config.validate().map_err(|e| CliError::Config(e.to_string()))?;
                let (split, o) = train_seed(&g, &config, seed, |_, _| {})?;
                let data = TrainData::from_split(&g, &split).map_err(|e| CliError::from_train(seed, e))?;
                let h = embed(&o.params, &data).map_err(data_err)?;
                let lp = link_prediction(&h, &split.test_pos, &split.test_neg).map_err(data_err)?;
                Ok((lp.auc, lp.ap))
            })
            .collect()
    });
    let scores = scores.into_iter().collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<SweepRow> = qs
        .iter()
        .zip(scores.chunks(r.seeds.len()))
        .map(|(&q, chunk)| {
            let auc = summarize(&chunk.iter().map(|s| s.0).collect::<Vec<_>>()).expect("at least one run");
            let ap = summarize(&chunk.iter().map(|s| s.1).collect::<Vec<_>>()).expect("at least one run");
            SweepRow {
                q,
                auc: auc.mean,
                ap: ap.mean,
                auc_std: auc.std,
                ap_std: ap.std,
                runs: chunk.len(),
            }
        })
        .collect();
    let csv = sweep_csv(&rows);
    write_file(&r.out.join(SWEEP_FILE), &csv)?;
    Ok(csv)
}

pub fn cmd_export(args: &ExportArgs, stderr: &mut dyn Write) -> Result<String, CliError> {
    let (manifest, g) = load_run(&args.out)?;
    let seed = args.seed.unwrap_or(manifest.seeds[0]);
    if !manifest.seeds.contains(&seed) {
        return Err(data_err(format!("the run has no checkpoint for seed {seed}")));
    }
    let labels: Option<Vec<usize>> = match &args.labels {
        None => None,
        Some(None) => Some(
            g.labels()
                .ok_or_else(|| data_err("--labels given but the graph is unlabeled"))?
                .to_vec(),
        ),
        Some(Some(p)) => {
            let text = fs::read_to_string(p).map_err(|e| data_err(format!("{}: {e}", p.display())))?;
            let l = parse_labels(p, &text).map_err(data_err)?;
            if l.len() != g.n() {
                return Err(data_err(format!(
                    "{}: {} labels for {} nodes",
                    p.display(),
                    l.len(),
                    g.n()
                )));
            }
            Some(l)
        }
    };
    let (_, h) = embed_checkpoint(&args.out, &g, seed)?;
    let path = args.out.join(EMBEDDINGS_FILE);
    write_file(&path, &embeddings_csv(&h, labels.as_deref()))?;
    let _ = writeln!(stderr, "wrote {} rows x {} columns", h.nrows(), h.ncols());
    Ok(format!("{}\n", path.display()))
}

/// Headerless rows of `h`, with an optional trailing label column.
pub fn embeddings_csv(h: &Matrix, labels: Option<&[usize]>) -> String {
    let mut s = String::new();
    for (i, row) in h.rows().into_iter().enumerate() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        s.push_str(&cells.join(","));
        if let Some(l) = labels {
            let _ = write!(s, ",{}", l[i]);
        }
        s.push('\n');
    }
    s
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                stdout.write_all(text.as_bytes())
            } else {
                stderr.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        builder = builder.num_threads(t as usize);
    }
    let pool = match builder.build() {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(stderr, "configuration error: {e}");
            return 1;
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a, &pool, stderr),
        Command::Eval(a) => cmd_eval(a, &pool),
        Command::SweepDim(a) => cmd_sweep_dim(a, &pool),
        Command::Export(a) => cmd_export(a, stderr),
    };
    match result {
        Ok(payload) => {
            let _ = stdout.write_all(payload.as_bytes());
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
