//! The pipeline stages behind the CLI subcommands. Each stage reads its
//! inputs from files and writes its artifacts to files, and validates all
//! arguments before writing anything.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{
    adjusted_rand_index, cluster_mean_series, distinct_count, elbow_scan, kmeans, knee_point, mean_series, profiles_of,
    ClusterModel, KMeansOptions, SseCurve, DEFAULT_MAX_ITER, DEFAULT_RESTARTS,
};
use crate::ingest::{ingest_paths, BinnedSet, ColumnMap, Span, BIN_WIDTH_MS};
use crate::numfmt::fmt_f64;
use crate::prep::{prepare, PreparedData, DEFAULT_TRAIN_RATIO, DEFAULT_WINDOW};
use crate::rnn::{CellKind, TrainedModel};
use crate::stats::{box_stats, box_stats_csv, compare_samples, rmse, ComparisonReport, MetricSample};
use crate::synth::{self, SynthSpec, DEFAULT_UTC_OFFSET_MS};
use crate::train::{grid_search, predict_all, select_best, train_once, GridResult, GridSpec, TrainConfig, TrainRunResult};

pub const DEFAULT_KMAX: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum PipelineError {
    /// Bad arguments, config or input documents.
    #[error("{0}")]
    Validation(String),
    /// Failure while doing the work.
    #[error("{0}")]
    Runtime(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 2,
            PipelineError::Runtime(_) => 1,
        }
    }
}

fn invalid(msg: impl Display) -> PipelineError {
    PipelineError::Validation(msg.to_string())
}

fn runtime(msg: impl Display) -> PipelineError {
    PipelineError::Runtime(msg.to_string())
}

fn read_input(path: &Path) -> Result<String, PipelineError> {
    if !path.exists() {
        return Err(invalid(format!("missing input path {}", path.display())));
    }
    std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn write_output(path: &Path, contents: &str) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// `YYYY-MM-DD..YYYY-MM-DD`, local midnights, end exclusive.
pub fn parse_span(text: &str, utc_offset_ms: i64) -> Result<Span, PipelineError> {
    let (a, b) = text
        .split_once("..")
        .ok_or_else(|| invalid(format!("span {text:?} must look like 2013-11-01..2014-01-02")))?;
    let ms = |s: &str| -> Result<i64, PipelineError> {
        let d = NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| invalid(format!("span date {s:?}: {e}")))?;
        Ok(d.and_hms_opt(0, 0, 0).expect("midnight").and_utc().timestamp_millis() - utc_offset_ms)
    };
    Span::new(ms(a)?, ms(b)?).map_err(invalid)
}

const MAX_CLUSTER_LIST: usize = 10_000;

/// `1..12`, `3` or `1,4,7`.
pub fn parse_cluster_list(text: &str) -> Result<Vec<usize>, PipelineError> {
    let bad = || invalid(format!("cluster list {text:?} must look like 1..12 or 1,2,3"));
    if let Some((a, b)) = text.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if a == 0 || b < a || b - a >= MAX_CLUSTER_LIST {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    let mut out: Vec<usize> = text
        .split(',')
        .map(|s| s.trim().parse::<usize>().ok().filter(|&c| c > 0).ok_or_else(bad))
        .collect::<Result<_, _>>()?;
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KChoice {
    #[default]
    Auto,
    Fixed(usize),
}

impl FromStr for KChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(KChoice::Auto);
        }
        match s.parse::<usize>() {
            Ok(0) => Err("k must be >= 1".into()),
            Ok(k) => Ok(KChoice::Fixed(k)),
            Err(_) => Err(format!("k must be \"auto\" or a positive integer, got {s:?}")),
        }
    }
}

impl Serialize for KChoice {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            KChoice::Auto => s.serialize_str("auto"),
            KChoice::Fixed(k) => s.serialize_u64(*k as u64),
        }
    }
}

impl<'de> Deserialize<'de> for KChoice {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(usize),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(0) => Err(serde::de::Error::custom("k must be >= 1")),
            Raw::N(k) => Ok(KChoice::Fixed(k)),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

// ---------------------------------------------------------------- ingest

#[derive(Debug, Clone)]
pub struct IngestArgs {
    pub inputs: Vec<PathBuf>,
    pub span: Span,
    pub columns: ColumnMap,
    pub out: PathBuf,
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<BinnedSet, PipelineError> {
    if args.inputs.is_empty() {
        return Err(invalid("no input paths given"));
    }
    if let Some(p) = args.inputs.iter().find(|p| !p.exists()) {
        return Err(invalid(format!("missing input path {}", p.display())));
    }
    let set = ingest_paths(&args.inputs, &args.columns, args.span).map_err(runtime)?;
    eprintln!(
        "ingest: {} cells, {} bins per cell, {} records outside the span",
        set.cells.len(),
        set.span.bins(),
        set.dropped
    );
    write_output(&args.out, &if is_csv(&args.out) { set.to_csv() } else { set.to_json() })?;
    Ok(set)
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

pub fn load_bins(path: &Path) -> Result<BinnedSet, PipelineError> {
    BinnedSet::from_json(&read_input(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- cluster

#[derive(Debug, Clone)]
pub struct ClusterArgs {
    pub bins: PathBuf,
    pub k: KChoice,
    pub kmax: usize,
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
    pub utc_offset_ms: i64,
    pub out: PathBuf,
    /// Where the SSE curve goes with `--k auto`; default `sse.csv` beside `out`.
    pub sse_out: Option<PathBuf>,
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub model: ClusterModel,
    pub curve: Option<SseCurve>,
    pub ari: Option<f64>,
}

pub fn cmd_cluster(args: &ClusterArgs) -> Result<ClusterOutcome, PipelineError> {
    if let KChoice::Fixed(0) = args.k {
        return Err(invalid("k must be >= 1"));
    }
    if args.k == KChoice::Auto && args.kmax < 3 {
        return Err(invalid("kmax must be >= 3 for automatic k"));
    }
    if args.restarts == 0 || args.max_iter == 0 {
        return Err(invalid("restarts and max-iter must be >= 1"));
    }
    let bins = load_bins(&args.bins)?;
    let truth = match &args.truth {
        Some(p) => Some(synth::parse_truth_csv(&read_input(p)?).map_err(invalid)?),
        None => None,
    };
    let profiles = profiles_of(bins.cells.values(), args.utc_offset_ms).map_err(runtime)?;
    let opts = KMeansOptions {
        seed: args.seed,
        max_iter: args.max_iter,
        restarts: args.restarts,
    };
    let (k, curve) = match args.k {
        KChoice::Fixed(k) => (k, None),
        KChoice::Auto => {
            let distinct = distinct_count(&profiles);
            let kmax = args.kmax.min(distinct);
            if kmax < 3 {
                return Err(runtime(format!("only {distinct} distinct profiles, too few for an elbow scan")));
            }
            if kmax < args.kmax {
                eprintln!("cluster: kmax reduced to {kmax}, the number of distinct profiles");
            }
            let curve = elbow_scan(&profiles, kmax, &opts).map_err(runtime)?;
            let k = knee_point(&curve).map_err(runtime)?;
            print!("{}", curve.to_csv());
            eprintln!("cluster: knee of the SSE curve at k = {k}");
            (k, Some(curve))
        }
    };
    let model = kmeans(&profiles, k, &opts).map_err(runtime)?;
    eprintln!("cluster: k = {k}, sse = {}", fmt_f64(model.sse));
    let ari = match &truth {
        Some(t) => {
            let mut a = Vec::new();
            let mut b = Vec::new();
            for (cell, &c) in &model.assignment {
                let label = t.get(cell).ok_or_else(|| invalid(format!("cell {cell} missing from truth file")))?;
                a.push(c);
                b.push(*label as usize);
            }
            let ari = adjusted_rand_index(&a, &b);
            eprintln!("cluster: adjusted Rand index against truth = {ari:.6}");
            Some(ari)
        }
        None => None,
    };
    write_output(&args.out, &model.to_json())?;
    if let Some(c) = &curve {
        let path = args.sse_out.clone().unwrap_or_else(|| args.out.with_file_name("sse.csv"));
        write_output(&path, &c.to_csv())?;
    }
    Ok(ClusterOutcome { model, curve, ari })
}

pub fn load_clusters(path: &Path) -> Result<ClusterModel, PipelineError> {
    ClusterModel::from_json(&read_input(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- train

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub clusters: PathBuf,
    pub bins: PathBuf,
    pub grid: GridSpec,
    pub config: TrainConfig,
    pub train_ratio: f64,
    pub window: usize,
    pub workers: usize,
    pub only_clusters: Option<Vec<usize>>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub result: GridResult,
    pub models: Vec<(PathBuf, TrainedModel)>,
}

pub fn model_file_name(kind: CellKind, cluster: usize) -> String {
    format!("{}_c{cluster}.json", kind.as_str().to_ascii_lowercase())
}

fn validate_prep(train_ratio: f64, window: usize) -> Result<(), PipelineError> {
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(invalid("train ratio must lie in (0, 1)"));
    }
    if window == 0 {
        return Err(invalid("window must be >= 1"));
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome, PipelineError> {
    args.grid.validate().map_err(invalid)?;
    args.config.validate().map_err(invalid)?;
    validate_prep(args.train_ratio, args.window)?;
    if args.workers == 0 {
        return Err(invalid("workers must be >= 1"));
    }
    let model = load_clusters(&args.clusters)?;
    let bins = load_bins(&args.bins)?;
    let mut series = cluster_mean_series(&model, &bins.cells).map_err(invalid)?;
    if let Some(only) = &args.only_clusters {
        if let Some(c) = only.iter().find(|c| !series.contains_key(c)) {
            return Err(invalid(format!("cluster {c} not present in {}", args.clusters.display())));
        }
        series.retain(|c, _| only.contains(c));
    }
    let members = model.members();
    let mut datasets: BTreeMap<usize, PreparedData> = BTreeMap::new();
    for (&c, s) in &series {
        let data = prepare(&s.values, args.train_ratio, args.window).map_err(|e| runtime(format!("cluster {c}: {e}")))?;
        datasets.insert(c, data);
    }

    let total = datasets.len() * args.grid.cell_kinds.len() * args.grid.configs_per_kind() * args.config.runs;
    let done = AtomicUsize::new(0);
    let progress = |r: &TrainRunResult| {
        let n = done.fetch_add(1, Ordering::Relaxed) + 1;
        eprintln!("train: [{n}/{total}] {} run {} rmse {:.6}", r.label(), r.run, r.test_rmse);
    };
    let result = grid_search(&args.grid, &datasets, &args.config, args.workers, Some(&progress)).map_err(runtime)?;

    let mut models = Vec::new();
    for (&c, data) in &datasets {
        for &kind in &args.grid.cell_kinds {
            let key = select_best(&result, c, Some(kind)).map_err(runtime)?[0];
            let best_run = result
                .runs
                .iter()
                .filter(|r| r.key == key)
                .reduce(|a, b| if b.test_rmse < a.test_rmse { b } else { a })
                .expect("config has runs");
            let (run, net) = train_once(key, data, &args.config, best_run.seed).map_err(runtime)?;
            let mut tm = TrainedModel::new(net, data.scaler);
            tm.cluster = Some(c);
            tm.label = Some(key.label());
            tm.seed = Some(best_run.seed);
            tm.train_ratio = Some(args.train_ratio);
            tm.test_rmse = Some(run.test_rmse);
            tm.members = Some(members[c - 1].clone());
            eprintln!("train: best {kind} for cluster {c} is {} (run {})", key.label(), best_run.run);
            models.push((args.out_dir.join("models").join(model_file_name(kind, c)), tm));
        }
    }

    write_output(&args.out_dir.join("results.csv"), &result.to_csv())?;
    write_output(&args.out_dir.join("summary.json"), &result.summary_json())?;
    write_output(&args.out_dir.join("loss_traces.csv"), &result.loss_trace_csv())?;
    for (path, tm) in &models {
        write_output(path, &tm.to_json())?;
    }
    Ok(TrainOutcome { result, models })
}

pub fn load_results(path: &Path) -> Result<GridResult, PipelineError> {
    GridResult::from_csv(&read_input(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------- compare

#[derive(Debug, Clone)]
pub struct CompareArgs {
    pub results: PathBuf,
    pub clusters: Option<Vec<usize>>,
    /// JSON report destination; standard output when absent.
    pub out: Option<PathBuf>,
    pub box_out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterComparison {
    pub cluster: usize,
    #[serde(flatten)]
    pub report: ComparisonReport,
}

/// Kruskal-Wallis test between the best configuration of each cell kind,
/// per cluster.
pub fn compare_result(result: &GridResult, clusters: &[usize]) -> Result<Vec<ClusterComparison>, PipelineError> {
    let mut out = Vec::new();
    for &c in clusters {
        let mut kinds: Vec<CellKind> = result.runs.iter().filter(|r| r.key.cluster == c).map(|r| r.key.cell).collect();
        kinds.sort();
        kinds.dedup();
        if kinds.is_empty() {
            return Err(invalid(format!("cluster {c} not present in results")));
        }
        if kinds.len() < 2 {
            return Err(invalid(format!("cluster {c} has results for one cell kind only")));
        }
        let mut samples = Vec::new();
        for kind in kinds {
            let key = select_best(result, c, Some(kind)).map_err(invalid)?[0];
            samples.push(MetricSample::new(key.label(), result.rmse_values(&key)));
        }
        let report = compare_samples(&samples).map_err(runtime)?;
        out.push(ClusterComparison { cluster: c, report });
    }
    Ok(out)
}

pub fn cmd_compare(args: &CompareArgs) -> Result<Vec<ClusterComparison>, PipelineError> {
    let result = load_results(&args.results)?;
    let clusters = args.clusters.clone().unwrap_or_else(|| result.clusters());
    let report = compare_result(&result, &clusters)?;
    let json = serde_json::to_string_pretty(&report).expect("report serialize") + "\n";
    if let Some(p) = &args.box_out {
        let mut rows = Vec::new();
        for (key, runs) in result.by_config() {
            if clusters.contains(&key.cluster) {
                let v: Vec<f64> = runs.iter().map(|r| r.test_rmse).collect();
                rows.push((key.label(), box_stats(&v).map_err(runtime)?));
            }
        }
        write_output(p, &box_stats_csv(&rows))?;
    }
    match &args.out {
        Some(p) => write_output(p, &json)?,
        None => print!("{json}"),
    }
    for c in &report {
        eprintln!(
            "compare: cluster {} {} vs {}: p = {:.4} ({})",
            c.cluster,
            c.report.groups[0],
            c.report.groups[1..].join(", "),
            c.report.p_value,
            c.report.verdict
        );
    }
    Ok(report)
}

// ---------------------------------------------------------------- predict

#[derive(Debug, Clone)]
pub struct PredictArgs {
    pub model: PathBuf,
    pub bins: PathBuf,
    /// CSV destination; standard output when absent.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub timestamps: Vec<i64>,
    pub truth: Vec<f64>,
    pub prediction: Vec<f64>,
}

impl Prediction {
    /// `timestamp,truth,prediction` with scaled values; timestamps are the
    /// start of each predicted bin in epoch milliseconds.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("timestamp,truth,prediction\n");
        for ((t, y), p) in self.timestamps.iter().zip(&self.truth).zip(&self.prediction) {
            s.push_str(&format!("{t},{},{}\n", fmt_f64(*y), fmt_f64(*p)));
        }
        s
    }

    pub fn rmse(&self) -> f64 {
        rmse(&self.prediction, &self.truth).unwrap_or(f64::NAN)
    }
}

/// Predictions of a trained model over the test part of its cluster series.
pub fn predict_test_span(model: &TrainedModel, bins: &BinnedSet) -> Result<Prediction, PipelineError> {
    let members = model
        .members
        .as_ref()
        .ok_or_else(|| invalid("model does not record the cells it was trained on"))?;
    let ratio = model.train_ratio.unwrap_or(DEFAULT_TRAIN_RATIO);
    let series = mean_series(&bins.cells, members, model.cluster.unwrap_or(0) as u64).map_err(invalid)?;
    let data = prepare(&series.values, ratio, model.window).map_err(runtime)?;
    if data.scaler != model.scaler {
        eprintln!("predict: warning: scaler refitted on these bins differs from the stored one");
    }
    let test = if data.scaler == model.scaler {
        data.test
    } else {
        let raw = &series.values[data.split..];
        crate::prep::make_windows(&model.scaler.transform(raw), model.window).map_err(runtime)?
    };
    let net = model.network();
    let prediction = predict_all(&net, &test).map_err(runtime)?;
    let timestamps = test
        .origin_indices
        .iter()
        .map(|&i| series.span_start + (data.split + i) as i64 * BIN_WIDTH_MS)
        .collect();
    Ok(Prediction {
        timestamps,
        truth: test.targets,
        prediction,
    })
}

pub fn cmd_predict(args: &PredictArgs) -> Result<Prediction, PipelineError> {
    let model = TrainedModel::from_json(&read_input(&args.model)?).map_err(|e| invalid(format!("{}: {e}", args.model.display())))?;
    let bins = load_bins(&args.bins)?;
    let pred = predict_test_span(&model, &bins)?;
    let r = pred.rmse();
    match model.test_rmse {
        Some(stored) => eprintln!("predict: test rmse {r:.9} (stored {stored:.9})"),
        None => eprintln!("predict: test rmse {r:.9}"),
    }
    match &args.out {
        Some(p) => write_output(p, &pred.to_csv())?,
        None => print!("{}", pred.to_csv()),
    }
    Ok(pred)
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub out_dir: PathBuf,
    pub spec: SynthSpec,
}

pub fn load_synth_spec(path: &Path) -> Result<SynthSpec, PipelineError> {
    serde_json::from_str(&read_input(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

pub fn cmd_synth(args: &SynthArgs) -> Result<(), PipelineError> {
    args.spec.validate().map_err(invalid)?;
    synth::write_to_dir(&args.spec, &args.out_dir).map_err(runtime)?;
    eprintln!(
        "synth: {} cells over {} days written to {}",
        args.spec.archetypes.len() * args.spec.cells_per_archetype,
        args.spec.days,
        args.out_dir.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- run

/// Declarative description of a whole pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// CDR files or directories; exclusive with `synth`.
    #[serde(default)]
    pub inputs: Vec<PathBuf>,
    #[serde(default)]
    pub synth: Option<SynthSpec>,
    /// Required with `inputs`; defaults to the synthetic span otherwise.
    #[serde(default)]
    pub span: Option<String>,
    #[serde(default = "default_offset")]
    pub utc_offset_ms: i64,
    #[serde(default)]
    pub columns: ColumnMap,
    #[serde(default)]
    pub k: KChoice,
    #[serde(default = "default_kmax")]
    pub kmax: usize,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default = "default_ratio")]
    pub train_ratio: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub output_dir: PathBuf,
}

fn default_offset() -> i64 {
    DEFAULT_UTC_OFFSET_MS
}
fn default_kmax() -> usize {
    DEFAULT_KMAX
}
fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}
fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}
fn default_ratio() -> f64 {
    DEFAULT_TRAIN_RATIO
}
fn default_window() -> usize {
    DEFAULT_WINDOW
}
fn default_workers() -> usize {
    1
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// The ingest span, checked against the other fields.
    pub fn validate(&self) -> Result<Span, PipelineError> {
        let span = match (&self.synth, self.inputs.is_empty(), &self.span) {
            (Some(_), false, _) => return Err(invalid("config: give either inputs or synth, not both")),
            (None, true, _) => return Err(invalid("config: one of inputs or synth is required")),
            (None, false, None) => return Err(invalid("config: span is required with inputs")),
            (_, _, Some(s)) => parse_span(s, self.utc_offset_ms)?,
            (Some(spec), true, None) => Span::new(spec.span_start, spec.span_end()).map_err(invalid)?,
        };
        if let Some(spec) = &self.synth {
            spec.validate().map_err(invalid)?;
        }
        if self.k == KChoice::Auto && self.kmax < 3 {
            return Err(invalid("config: kmax must be >= 3 for automatic k"));
        }
        if self.restarts == 0 || self.max_iter == 0 || self.workers == 0 {
            return Err(invalid("config: restarts, max_iter and workers must be >= 1"));
        }
        self.grid.validate().map_err(invalid)?;
        self.train.validate().map_err(invalid)?;
        validate_prep(self.train_ratio, self.window)?;
        if self.grid.cell_kinds.len() < 2 {
            eprintln!("config: a single cell kind is configured, comparison will be skipped");
        }
        Ok(span)
    }
}

/// synth (optional) -> ingest -> cluster -> train -> compare -> predict.
pub fn cmd_run(cfg: &PipelineConfig) -> Result<(), PipelineError> {
    let span = cfg.validate()?;
    let out = &cfg.output_dir;
    let mut inputs = cfg.inputs.clone();
    let mut truth = None;
    if let Some(spec) = &cfg.synth {
        let dir = out.join("cdr");
        cmd_synth(&SynthArgs {
            out_dir: dir.clone(),
            spec: spec.clone(),
        })?;
        truth = Some(dir.join("truth.csv"));
        inputs = vec![dir];
    }
    let bins_path = out.join("bins.json");
    cmd_ingest(&IngestArgs {
        inputs,
        span,
        columns: cfg.columns,
        out: bins_path.clone(),
    })?;
    let clusters_path = out.join("clusters.json");
    cmd_cluster(&ClusterArgs {
        bins: bins_path.clone(),
        k: cfg.k,
        kmax: cfg.kmax,
        seed: cfg.seed,
        restarts: cfg.restarts,
        max_iter: cfg.max_iter,
        utc_offset_ms: cfg.utc_offset_ms,
        out: clusters_path.clone(),
        sse_out: None,
        truth,
    })?;
    let mut train = cfg.train.clone();
    train.base_seed = cfg.seed;
    let trained = cmd_train(&TrainArgs {
        clusters: clusters_path,
        bins: bins_path.clone(),
        grid: cfg.grid.clone(),
        config: train,
        train_ratio: cfg.train_ratio,
        window: cfg.window,
        workers: cfg.workers,
        only_clusters: None,
        out_dir: out.clone(),
    })?;
    if cfg.grid.cell_kinds.len() >= 2 {
        cmd_compare(&CompareArgs {
            results: out.join("results.csv"),
            clusters: None,
            out: Some(out.join("comparison.json")),
            box_out: Some(out.join("boxstats.csv")),
        })?;
    }
    for (path, _) in &trained.models {
        let name = path.file_stem().expect("model file name").to_string_lossy().into_owned();
        cmd_predict(&PredictArgs {
            model: path.clone(),
            bins: bins_path.clone(),
            out: Some(out.join("predictions").join(format!("{name}.csv"))),
        })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_arithmetic() {
        let s = parse_span("2013-11-01..2014-01-02", DEFAULT_UTC_OFFSET_MS).unwrap();
        assert_eq!(s.start, synth::DEFAULT_SPAN_START);
        assert_eq!(s.bins(), 2976);
        assert!(parse_span("2013-11-01", 0).is_err());
        assert!(parse_span("2013-11-02..2013-11-01", 0).is_err());
    }

    #[test]
    fn k_choice() {
        assert_eq!("auto".parse::<KChoice>(), Ok(KChoice::Auto));
        assert_eq!("12".parse::<KChoice>(), Ok(KChoice::Fixed(12)));
        assert!("0".parse::<KChoice>().is_err());
        assert_eq!(serde_json::from_str::<KChoice>("12").unwrap(), KChoice::Fixed(12));
        assert_eq!(serde_json::from_str::<KChoice>("\"auto\"").unwrap(), KChoice::Auto);
        assert!(serde_json::from_str::<KChoice>("0").is_err());
    }

    #[test]
    fn cluster_lists() {
        assert_eq!(parse_cluster_list("1..3").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_cluster_list("4,2,2").unwrap(), vec![2, 4]);
        assert!(parse_cluster_list("0..3").is_err());
        assert!(parse_cluster_list("a").is_err());
        assert!(parse_cluster_list("1..18446744073709551615").is_err());
    }

    #[test]
    fn config_validation() {
        let ok = r#"{"synth": {"archetypes": [{"id": 0, "base_level": 2, "period_weights": [1,1,1,1,1,1],
            "weekend_factor": 1, "noise_sd": 0}], "cells_per_archetype": 2, "days": 2}, "output_dir": "x"}"#;
        let cfg = PipelineConfig::from_json(ok).unwrap();
        assert_eq!(cfg.validate().unwrap().bins(), 96);
        let unknown = ok.replace("\"output_dir\"", "\"bogus\": 1, \"output_dir\"");
        assert!(matches!(PipelineConfig::from_json(&unknown), Err(PipelineError::Validation(_))));
        assert!(PipelineConfig::from_json(r#"{"output_dir": "x"}"#).is_err());
        let both = ok.replace("\"output_dir\"", "\"inputs\": [\"a\"], \"output_dir\"");
        assert!(PipelineConfig::from_json(&both).is_err());
        let seeded = ok.replace("\"output_dir\"", "\"train\": {\"base_seed\": 3}, \"output_dir\"");
        assert!(PipelineConfig::from_json(&seeded).is_err());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(invalid("x").exit_code(), 2);
        assert_eq!(runtime("x").exit_code(), 1);
    }
}
