//! Mini-batch training of one configuration and the seeded grid search
//! over cell kind, depth and width.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numfmt::fmt_f64;
use crate::prep::{PreparedData, SupervisedWindows};
use crate::rnn::{Adam, AdamHyper, CellKind, NetworkError, NetworkOptions, RecurrentNetwork};
use crate::seeding::{rng_for, stream};
use crate::stats::{self, quantile_sorted, StatsError};

/// Configs whose mean RMSE is within this distance of the best are tied.
pub const TIE_THRESHOLD: f64 = 5e-4;

#[derive(Debug, Error, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("no training data")]
    EmptyData,
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("cluster {0} not present in results")]
    UnknownCluster(usize),
    #[error("invalid results file: {0}")]
    InvalidResults(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub runs: usize,
    pub adam: AdamHyper,
    pub shuffle_each_epoch: bool,
    /// Set from the command line or the pipeline-level seed, never from a
    /// config file.
    #[serde(skip)]
    pub base_seed: u64,
    pub network: NetworkOptions,
    /// Store measured wall time in results; off by default so result files
    /// stay byte-identical across reruns.
    pub record_timing: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            runs: 30,
            adam: AdamHyper::default(),
            shuffle_each_epoch: true,
            base_seed: 0,
            network: NetworkOptions::default(),
            record_timing: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs < 1 {
            return Err(TrainError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(TrainError::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.runs < 1 {
            return Err(TrainError::InvalidConfig("runs must be >= 1".into()));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && a.lr.is_finite()) || !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(TrainError::InvalidConfig("ADAM hyperparameters out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub hidden_layers: Vec<usize>,
    pub units: Vec<usize>,
    pub cell_kinds: Vec<CellKind>,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            hidden_layers: vec![1, 2, 3, 4],
            units: vec![50, 100, 150, 200, 250],
            cell_kinds: vec![CellKind::Lstm, CellKind::Gru],
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.hidden_layers.is_empty() || self.units.is_empty() || self.cell_kinds.is_empty() {
            return Err(TrainError::InvalidConfig("grid lists must be non-empty".into()));
        }
        if self.units.contains(&0) {
            return Err(TrainError::InvalidConfig("units must be > 0".into()));
        }
        Ok(())
    }

    pub fn configs_per_kind(&self) -> usize {
        self.hidden_layers.len() * self.units.len()
    }
}

/// One grid point for one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ConfigKey {
    pub cluster: usize,
    pub cell: CellKind,
    pub layers: usize,
    pub units: usize,
}

impl ConfigKey {
    /// e.g. `LSTM-12-1L-150U`
    pub fn label(&self) -> String {
        format!("{}-{}-{}L-{}U", self.cell, self.cluster, self.layers, self.units)
    }

    pub fn parse_label(label: &str) -> Option<Self> {
        let mut it = label.split('-');
        let cell = it.next()?.parse().ok()?;
        let cluster = it.next()?.parse().ok()?;
        let layers = it.next()?.strip_suffix('L')?.parse().ok()?;
        let units = it.next()?.strip_suffix('U')?.parse().ok()?;
        if it.next().is_some() {
            return None;
        }
        Some(Self { cluster, cell, layers, units })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRunResult {
    pub key: ConfigKey,
    pub run: usize,
    pub seed: u64,
    pub loss_trace: Vec<f64>,
    pub test_rmse: f64,
    pub test_mae: f64,
    pub seconds: f64,
}

impl TrainRunResult {
    pub fn label(&self) -> String {
        self.key.label()
    }
}

/// RMSE of predicting each target with the last value of its window.
pub fn naive_last_value_rmse(data: &SupervisedWindows) -> Result<f64, StatsError> {
    let preds: Vec<f64> = data.inputs.iter().map(|x| *x.last().expect("non-empty window")).collect();
    stats::rmse(&preds, &data.targets)
}

pub fn predict_all(net: &RecurrentNetwork, data: &SupervisedWindows) -> Result<Vec<f64>, NetworkError> {
    data.inputs.iter().map(|x| net.predict(x)).collect()
}

/// Train one network and evaluate it on the test windows.
pub fn train_once(
    key: ConfigKey,
    data: &PreparedData,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(TrainRunResult, RecurrentNetwork), TrainError> {
    cfg.validate()?;
    if data.train.is_empty() || data.test.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let started = Instant::now();
    let mut init_rng = rng_for(seed, stream::NET_INIT);
    let mut net = RecurrentNetwork::new(key.cell, data.train.window, key.layers, key.units, &cfg.network, &mut init_rng);
    let mut adam = Adam::new(&net, cfg.adam);
    let mut shuffle_rng = rng_for(seed, stream::BATCH_SHUFFLE);
    let n = data.train.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(cfg.batch_size);
    let mut ys: Vec<f64> = Vec::with_capacity(cfg.batch_size);
    for _ in 0..cfg.epochs {
        if cfg.shuffle_each_epoch {
            order.shuffle(&mut shuffle_rng);
        }
        let mut weighted = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            xs.clear();
            ys.clear();
            for &i in batch {
                xs.push(data.train.inputs[i].clone());
                ys.push(data.train.targets[i]);
            }
            let (loss, grads) = net.loss_and_gradients(&xs, &ys)?;
            adam.step(&mut net, &grads)?;
            weighted += loss * batch.len() as f64;
        }
        loss_trace.push(weighted / n as f64);
    }
    let preds = predict_all(&net, &data.test)?;
    let test_rmse = stats::rmse(&preds, &data.test.targets)?;
    let test_mae = stats::mae(&preds, &data.test.targets)?;
    let seconds = if cfg.record_timing { started.elapsed().as_secs_f64() } else { 0.0 };
    Ok((
        TrainRunResult {
            key,
            run: 0,
            seed,
            loss_trace,
            test_rmse,
            test_mae,
            seconds,
        },
        net,
    ))
}

/// Seed of run `run`: runs only ever extend, never reshuffle.
pub fn run_seed(cfg: &TrainConfig, run: usize) -> u64 {
    cfg.base_seed.wrapping_add(run as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfigSummary {
    pub mean_rmse: f64,
    pub median_rmse: f64,
    pub iqr: f64,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    /// Sorted by (cluster, cell, layers, units, run).
    pub runs: Vec<TrainRunResult>,
    pub runs_per_config: usize,
}

impl GridResult {
    pub fn from_runs(mut runs: Vec<TrainRunResult>) -> Result<Self, TrainError> {
        runs.sort_by_key(|r| (r.key, r.run));
        let mut counts: BTreeMap<ConfigKey, usize> = BTreeMap::new();
        for r in &runs {
            *counts.entry(r.key).or_default() += 1;
        }
        let per = counts.values().next().copied().unwrap_or(0);
        if let Some((k, c)) = counts.iter().find(|(_, &c)| c != per) {
            return Err(TrainError::InvalidResults(format!(
                "{} has {c} runs, expected {per}",
                k.label()
            )));
        }
        for w in runs.windows(2) {
            if w[0].key == w[1].key && w[0].run == w[1].run {
                return Err(TrainError::InvalidResults(format!("duplicate run {} of {}", w[0].run, w[0].key.label())));
            }
        }
        Ok(Self {
            runs,
            runs_per_config: per,
        })
    }

    pub fn by_config(&self) -> BTreeMap<ConfigKey, Vec<&TrainRunResult>> {
        let mut out: BTreeMap<ConfigKey, Vec<&TrainRunResult>> = BTreeMap::new();
        for r in &self.runs {
            out.entry(r.key).or_default().push(r);
        }
        out
    }

    pub fn clusters(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.runs.iter().map(|r| r.key.cluster).collect();
        c.dedup();
        c
    }

    pub fn rmse_values(&self, key: &ConfigKey) -> Vec<f64> {
        self.runs.iter().filter(|r| r.key == *key).map(|r| r.test_rmse).collect()
    }

    pub fn mean_rmse(&self, key: &ConfigKey) -> Option<f64> {
        let v = self.rmse_values(key);
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    fn unmarked_summary(&self, key: &ConfigKey) -> Option<ConfigSummary> {
        let mut v = self.rmse_values(key);
        if v.is_empty() {
            return None;
        }
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.sort_by(f64::total_cmp);
        Some(ConfigSummary {
            mean_rmse: mean,
            median_rmse: quantile_sorted(&v, 0.5),
            iqr: quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25),
            best: false,
        })
    }

    /// `{cluster: {label: summary}}`, with `best` set on the top-ranked
    /// config of each (cluster, cell kind).
    pub fn summary(&self) -> BTreeMap<usize, BTreeMap<String, ConfigSummary>> {
        let mut out: BTreeMap<usize, BTreeMap<String, ConfigSummary>> = BTreeMap::new();
        let keys: Vec<ConfigKey> = self.by_config().keys().copied().collect();
        for key in &keys {
            let s = self.unmarked_summary(key).expect("config has runs");
            out.entry(key.cluster).or_default().insert(key.label(), s);
        }
        let mut kinds: Vec<(usize, CellKind)> = keys.iter().map(|k| (k.cluster, k.cell)).collect();
        kinds.dedup();
        for (cluster, cell) in kinds {
            if let Ok(best) = select_best(self, cluster, Some(cell)) {
                if let Some(first) = best.first() {
                    if let Some(s) = out.get_mut(&cluster).and_then(|m| m.get_mut(&first.label())) {
                        s.best = true;
                    }
                }
            }
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("summary serialize")
    }

    /// `cluster,cell,layers,units,run,seed,rmse,mae,seconds`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("cluster,cell,layers,units,run,seed,rmse,mae,seconds\n");
        for r in &self.runs {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.key.cluster,
                r.key.cell,
                r.key.layers,
                r.key.units,
                r.run,
                r.seed,
                fmt_f64(r.test_rmse),
                fmt_f64(r.test_mae),
                fmt_f64(r.seconds)
            ));
        }
        s
    }

    /// `cluster,cell,layers,units,run,epoch,loss`
    pub fn loss_trace_csv(&self) -> String {
        let mut s = String::from("cluster,cell,layers,units,run,epoch,loss\n");
        for r in &self.runs {
            for (e, l) in r.loss_trace.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    r.key.cluster,
                    r.key.cell,
                    r.key.layers,
                    r.key.units,
                    r.run,
                    e + 1,
                    fmt_f64(*l)
                ));
            }
        }
        s
    }

    /// Parse a results CSV written by [`GridResult::to_csv`]. Loss traces are
    /// not part of the file and come back empty.
    pub fn from_csv(text: &str) -> Result<Self, TrainError> {
        #[derive(Deserialize)]
        struct Row {
            cluster: usize,
            cell: String,
            layers: usize,
            units: usize,
            run: usize,
            seed: u64,
            rmse: f64,
            mae: f64,
            seconds: f64,
        }
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let headers = rdr.headers().map_err(|e| TrainError::InvalidResults(e.to_string()))?.clone();
        let expected = ["cluster", "cell", "layers", "units", "run", "seed", "rmse", "mae", "seconds"];
        if headers.iter().ne(expected) {
            return Err(TrainError::InvalidResults(format!("unexpected header {headers:?}")));
        }
        let mut runs = Vec::new();
        for row in rdr.deserialize::<Row>() {
            let row = row.map_err(|e| TrainError::InvalidResults(e.to_string()))?;
            let cell: CellKind = row.cell.parse().map_err(TrainError::InvalidResults)?;
            if ![row.rmse, row.mae].iter().all(|v| v.is_finite() && *v >= 0.0) || !row.seconds.is_finite() {
                return Err(TrainError::InvalidResults("metrics must be finite and >= 0".into()));
            }
            runs.push(TrainRunResult {
                key: ConfigKey {
                    cluster: row.cluster,
                    cell,
                    layers: row.layers,
                    units: row.units,
                },
                run: row.run,
                seed: row.seed,
                loss_trace: Vec::new(),
                test_rmse: row.rmse,
                test_mae: row.mae,
                seconds: row.seconds,
            });
        }
        Self::from_runs(runs)
    }
}

/// Every (cluster, kind, layers, units) x `cfg.runs` training job, run on
/// `workers` threads. Output order and values do not depend on `workers`.
pub fn grid_search(
    grid: &GridSpec,
    datasets: &BTreeMap<usize, PreparedData>,
    cfg: &TrainConfig,
    workers: usize,
    progress: Option<&(dyn Fn(&TrainRunResult) + Sync)>,
) -> Result<GridResult, TrainError> {
    grid.validate()?;
    cfg.validate()?;
    if datasets.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let mut jobs = Vec::new();
    for &cluster in datasets.keys() {
        for &cell in &grid.cell_kinds {
            for &layers in &grid.hidden_layers {
                for &units in &grid.units {
                    for run in 0..cfg.runs {
                        jobs.push((ConfigKey { cluster, cell, layers, units }, run));
                    }
                }
            }
        }
    }
    let exec = |&(key, run): &(ConfigKey, usize)| -> Result<TrainRunResult, TrainError> {
        let seed = run_seed(cfg, run);
        let (mut r, _) = train_once(key, &datasets[&key.cluster], cfg, seed)?;
        r.run = run;
        if let Some(p) = progress {
            p(&r);
        }
        Ok(r)
    };
    let results: Vec<Result<TrainRunResult, TrainError>> = if workers <= 1 {
        jobs.iter().map(exec).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(exec).collect())
    };
    let runs = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    GridResult::from_runs(runs)
}

/// Configs of `cluster` (optionally one cell kind) whose mean RMSE is within
/// [`TIE_THRESHOLD`] of the minimum, ordered by median RMSE, IQR, units, layers.
pub fn select_best(result: &GridResult, cluster: usize, cell: Option<CellKind>) -> Result<Vec<ConfigKey>, TrainError> {
    let keys: Vec<ConfigKey> = result
        .by_config()
        .into_keys()
        .filter(|k| k.cluster == cluster && cell.is_none_or(|c| k.cell == c))
        .collect();
    if keys.is_empty() {
        return Err(TrainError::UnknownCluster(cluster));
    }
    let summaries: Vec<(ConfigKey, ConfigSummary)> = keys
        .iter()
        .map(|k| (*k, result.unmarked_summary(k).expect("config has runs")))
        .collect();
    let min = summaries.iter().map(|(_, s)| s.mean_rmse).fold(f64::INFINITY, f64::min);
    let mut tied: Vec<(ConfigKey, ConfigSummary)> = summaries
        .into_iter()
        .filter(|(_, s)| s.mean_rmse - min <= TIE_THRESHOLD)
        .collect();
    tied.sort_by(|a, b| {
        a.1.median_rmse
            .total_cmp(&b.1.median_rmse)
            .then(a.1.iqr.total_cmp(&b.1.iqr))
            .then(a.0.units.cmp(&b.0.units))
            .then(a.0.layers.cmp(&b.0.layers))
            .then(a.0.cell.cmp(&b.0.cell))
    });
    Ok(tied.into_iter().map(|(k, _)| k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prep::prepare;

    fn key(cell: CellKind, layers: usize, units: usize) -> ConfigKey {
        ConfigKey { cluster: 1, cell, layers, units }
    }

    fn run(k: ConfigKey, i: usize, rmse: f64) -> TrainRunResult {
        TrainRunResult {
            key: k,
            run: i,
            seed: i as u64,
            loss_trace: vec![],
            test_rmse: rmse,
            test_mae: rmse * 0.8,
            seconds: 0.0,
        }
    }

    #[test]
    fn labels() {
        let k = ConfigKey { cluster: 12, cell: CellKind::Lstm, layers: 1, units: 150 };
        assert_eq!(k.label(), "LSTM-12-1L-150U");
        assert_eq!(ConfigKey::parse_label("LSTM-12-1L-150U"), Some(k));
        assert_eq!(ConfigKey::parse_label("LSTM-12-1L"), None);
    }

    #[test]
    fn config_validation() {
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        assert!(matches!(cfg.validate(), Err(TrainError::InvalidConfig(_))));
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
        let g = GridSpec { units: vec![0], ..Default::default() };
        assert!(g.validate().is_err());
        assert_eq!(GridSpec::default().configs_per_kind() * 30, 600);
    }

    #[test]
    fn strict_minimum_wins() {
        let a = key(CellKind::Lstm, 1, 50);
        let b = key(CellKind::Lstm, 2, 50);
        let gr = GridResult::from_runs(vec![run(a, 0, 0.05), run(a, 1, 0.06), run(b, 0, 0.08), run(b, 1, 0.09)]).unwrap();
        assert_eq!(select_best(&gr, 1, None).unwrap(), vec![a]);
        assert!((gr.mean_rmse(&a).unwrap() - 0.055).abs() < 1e-15);
        assert_eq!(select_best(&gr, 3, None), Err(TrainError::UnknownCluster(3)));
    }

    #[test]
    fn ties_order_by_median() {
        let a = key(CellKind::Lstm, 1, 250);
        let b = key(CellKind::Lstm, 1, 200);
        // equal means of 0.069; medians 0.070 (a) and 0.068 (b)
        let gr = GridResult::from_runs(vec![
            run(a, 0, 0.067),
            run(a, 1, 0.070),
            run(a, 2, 0.070),
            run(b, 0, 0.068),
            run(b, 1, 0.068),
            run(b, 2, 0.071),
        ])
        .unwrap();
        assert_eq!(select_best(&gr, 1, None).unwrap(), vec![b, a]);
        let s = gr.summary();
        assert!(s[&1][&b.label()].best);
        assert!(!s[&1][&a.label()].best);
    }

    #[test]
    fn csv_round_trip_and_completeness() {
        let a = key(CellKind::Gru, 1, 8);
        let gr = GridResult::from_runs(vec![run(a, 0, 0.1), run(a, 1, 0.2)]).unwrap();
        let back = GridResult::from_csv(&gr.to_csv()).unwrap();
        assert_eq!(back.runs.len(), 2);
        assert_eq!(back.runs[1].test_rmse, 0.2);
        // uneven run counts are rejected
        let b = key(CellKind::Gru, 2, 8);
        assert!(GridResult::from_runs(vec![run(a, 0, 0.1), run(a, 1, 0.2), run(b, 0, 0.1)]).is_err());
        assert!(GridResult::from_csv("a,b\n1,2\n").is_err());
    }

    #[test]
    fn grid_counts_and_worker_independence() {
        let series = crate::synth::sine_series(300, 48);
        let data = prepare(&series, 0.8, 4).unwrap();
        let datasets: BTreeMap<usize, PreparedData> = [(1, data.clone()), (2, data)].into_iter().collect();
        let grid = GridSpec { hidden_layers: vec![1], units: vec![5], cell_kinds: vec![CellKind::Lstm] };
        let cfg = TrainConfig { epochs: 2, runs: 2, ..Default::default() };
        let one = grid_search(&grid, &datasets, &cfg, 1, None).unwrap();
        let four = grid_search(&grid, &datasets, &cfg, 4, None).unwrap();
        assert_eq!(one.runs.len(), 4);
        assert_eq!(one.runs_per_config, 2);
        assert_eq!(one.to_csv(), four.to_csv());
        assert_eq!(one.runs[1].seed, 1);
        let key1 = ConfigKey { cluster: 1, cell: CellKind::Lstm, layers: 1, units: 5 };
        let v = one.rmse_values(&key1);
        assert!((one.mean_rmse(&key1).unwrap() - (v[0] + v[1]) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn train_once_is_deterministic() {
        let series = crate::synth::sine_series(200, 48);
        let data = prepare(&series, 0.8, 4).unwrap();
        let cfg = TrainConfig { epochs: 3, ..Default::default() };
        let k = key(CellKind::Gru, 1, 6);
        let (a, na) = train_once(k, &data, &cfg, 7).unwrap();
        let (b, nb) = train_once(k, &data, &cfg, 7).unwrap();
        assert_eq!(na.flatten(), nb.flatten());
        assert_eq!(a.test_rmse.to_bits(), b.test_rmse.to_bits());
        assert_eq!(a.loss_trace.len(), 3);
    }
}
