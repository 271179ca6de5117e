//! Day-period activity profiles and K-Means clustering of cells.
//!
//! A cell is described by six mean activity values, one per 4-hour period
//! of the local day. Cells are grouped with Lloyd's algorithm (k-means++
//! seeding, best of several restarts) and the cluster count is chosen from
//! the SSE-vs-k curve.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{BinnedCellSeries, BIN_WIDTH_MS};
use crate::seeding::{rng_for, stream};

pub const PERIODS: usize = 6;
const DAY_MS: i64 = 24 * 3_600_000;
const HOUR_MS: i64 = 3_600_000;

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Error, PartialEq)]
pub enum ClusterError {
    #[error("series for cell {0} is empty")]
    EmptySeries(u64),
    #[error("k must be >= 1, got {0}")]
    InvalidK(usize),
    #[error("need at least {k} distinct profiles, have {distinct}")]
    TooFewPoints { k: usize, distinct: usize },
    #[error("SSE curve needs at least 3 entries, has {0}")]
    CurveTooShort(usize),
    #[error("no binned series for assigned cell {0}")]
    MissingSeries(u64),
    #[error("series for cell {0} does not share the common span")]
    SpanMismatch(u64),
    #[error("invalid cluster model: {0}")]
    InvalidModel(String),
}

/// Periods of the local day, start-inclusive and end-exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DayPeriod {
    LateNight,
    EarlyMorning,
    Morning,
    Afternoon,
    Evening,
    Night,
}

impl DayPeriod {
    pub const ALL: [DayPeriod; PERIODS] = [
        DayPeriod::LateNight,
        DayPeriod::EarlyMorning,
        DayPeriod::Morning,
        DayPeriod::Afternoon,
        DayPeriod::Evening,
        DayPeriod::Night,
    ];

    /// Period containing a local-clock hour in `0..24`.
    pub fn from_hour(hour: u32) -> Self {
        Self::ALL[(hour / 4).min(5) as usize]
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Period of an instant given as epoch ms, with the local clock `utc_offset_ms` ahead of UTC.
    pub fn of_timestamp(timestamp: i64, utc_offset_ms: i64) -> Self {
        let local = (timestamp + utc_offset_ms).rem_euclid(DAY_MS);
        Self::from_hour((local / HOUR_MS) as u32)
    }
}

/// Mean 30-minute activity of one cell over each day period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodProfile {
    pub cell_id: u64,
    pub means: [f64; PERIODS],
}

pub fn period_profile(series: &BinnedCellSeries, utc_offset_ms: i64) -> Result<PeriodProfile, ClusterError> {
    if series.values.is_empty() {
        return Err(ClusterError::EmptySeries(series.cell_id));
    }
    let mut sums = [0.0; PERIODS];
    let mut counts = [0usize; PERIODS];
    for (b, v) in series.values.iter().enumerate() {
        let p = DayPeriod::of_timestamp(series.span_start + b as i64 * BIN_WIDTH_MS, utc_offset_ms).index();
        sums[p] += v;
        counts[p] += 1;
    }
    let mut means = [0.0; PERIODS];
    for p in 0..PERIODS {
        if counts[p] > 0 {
            means[p] = sums[p] / counts[p] as f64;
        }
    }
    Ok(PeriodProfile {
        cell_id: series.cell_id,
        means,
    })
}

pub fn profiles_of<'a, I>(series: I, utc_offset_ms: i64) -> Result<Vec<PeriodProfile>, ClusterError>
where
    I: IntoIterator<Item = &'a BinnedCellSeries>,
{
    series.into_iter().map(|s| period_profile(s, utc_offset_ms)).collect()
}

#[inline]
pub fn squared_distance(a: &[f64; PERIODS], b: &[f64; PERIODS]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid by squared Euclidean distance, lowest index on ties.
pub fn nearest(point: &[f64; PERIODS], centroids: &[[f64; PERIODS]]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn distinct_count(profiles: &[PeriodProfile]) -> usize {
    let mut keys: Vec<[u64; PERIODS]> = profiles
        .iter()
        .map(|p| p.means.map(|x| if x == 0.0 { 0 } else { x.to_bits() }))
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<[f64; PERIODS]>,
    /// cell id to cluster index in `0..k`
    pub assignment: BTreeMap<u64, usize>,
    #[serde(default, skip_serializing)]
    pub iterations_run: usize,
    pub sse: f64,
}

/// Outcome of one Lloyd run from a given initialisation.
#[derive(Debug, Clone)]
pub struct LloydRun {
    pub centroids: Vec<[f64; PERIODS]>,
    pub labels: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
    pub sse: f64,
    /// SSE after each assign + update iteration.
    pub sse_history: Vec<f64>,
}

fn sse_of(points: &[[f64; PERIODS]], labels: &[usize], centroids: &[[f64; PERIODS]]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| squared_distance(p, &centroids[l]))
        .sum()
}

fn means_of(points: &[[f64; PERIODS]], labels: &[usize], centroids: &mut [[f64; PERIODS]]) -> Vec<usize> {
    let k = centroids.len();
    let mut sums = vec![[0.0; PERIODS]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for d in 0..PERIODS {
            sums[l][d] += p[d];
        }
    }
    let mut empty = Vec::new();
    for j in 0..k {
        if counts[j] == 0 {
            empty.push(j);
        } else {
            for d in 0..PERIODS {
                centroids[j][d] = sums[j][d] / counts[j] as f64;
            }
        }
    }
    empty
}

/// Move each empty centroid onto the point farthest from its own centroid.
fn repair_empty(points: &[[f64; PERIODS]], labels: &[usize], centroids: &mut [[f64; PERIODS]], empty: &[usize]) {
    let mut used = vec![false; points.len()];
    for &j in empty {
        let mut best: Option<(usize, f64)> = None;
        for (i, p) in points.iter().enumerate() {
            if used[i] {
                continue;
            }
            let d = squared_distance(p, &centroids[labels[i]]);
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        if let Some((i, _)) = best {
            used[i] = true;
            centroids[j] = points[i];
        }
    }
}

/// Lloyd iterations from explicit initial centroids.
pub fn lloyd(points: &[[f64; PERIODS]], init: Vec<[f64; PERIODS]>, max_iter: usize) -> LloydRun {
    let mut centroids = init;
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let empty = means_of(points, &labels, &mut centroids);
        history.push(sse_of(points, &labels, &centroids));
        if !empty.is_empty() {
            repair_empty(points, &labels, &mut centroids, &empty);
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids).0).collect();
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
    }
    if !converged {
        // leave centroids consistent with the final labels
        let empty = means_of(points, &labels, &mut centroids);
        if !empty.is_empty() {
            repair_empty(points, &labels, &mut centroids, &empty);
        }
    }
    let sse = sse_of(points, &labels, &centroids);
    LloydRun {
        centroids,
        labels,
        iterations,
        converged,
        sse,
        sse_history: history,
    }
}

/// k-means++ seeding: first centroid uniform, the rest drawn with
/// probability proportional to squared distance to the nearest chosen one.
///
/// With the same generator state, the first `k` picks at `k + 1` equal the
/// picks at `k`.
pub fn spread_init<R: Rng>(points: &[[f64; PERIODS]], k: usize, rng: &mut R) -> Vec<[f64; PERIODS]> {
    let n = points.len();
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..n)]);
    let mut d2: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d <= 0.0 {
                continue;
            }
            acc += d;
            pick = Some(i);
            if acc > target {
                break;
            }
        }
        let Some(i) = pick else { break };
        let c = points[i];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c));
        }
    }
    centroids
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub seed: u64,
    pub max_iter: usize,
    pub restarts: usize,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iter: DEFAULT_MAX_ITER,
            restarts: DEFAULT_RESTARTS,
        }
    }
}

/// Every Lloyd run performed by [`kmeans_runs`], in restart order.
pub fn kmeans_runs(profiles: &[PeriodProfile], k: usize, opts: &KMeansOptions) -> Result<Vec<LloydRun>, ClusterError> {
    if k < 1 {
        return Err(ClusterError::InvalidK(k));
    }
    let distinct = distinct_count(profiles);
    if distinct < k {
        return Err(ClusterError::TooFewPoints { k, distinct });
    }
    let points: Vec<[f64; PERIODS]> = profiles.iter().map(|p| p.means).collect();
    Ok((0..opts.restarts.max(1))
        .map(|r| {
            let mut rng = rng_for(opts.seed, stream::KMEANS_RESTART + r as u64);
            let init = spread_init(&points, k, &mut rng);
            lloyd(&points, init, opts.max_iter)
        })
        .collect())
}

/// Best-of-restarts K-Means; ties on SSE go to the lower restart index.
pub fn kmeans(profiles: &[PeriodProfile], k: usize, opts: &KMeansOptions) -> Result<ClusterModel, ClusterError> {
    let runs = kmeans_runs(profiles, k, opts)?;
    let best = runs
        .into_iter()
        .reduce(|best, run| if run.sse < best.sse { run } else { best })
        .expect("at least one restart");
    let assignment = profiles
        .iter()
        .zip(&best.labels)
        .map(|(p, &l)| (p.cell_id, l))
        .collect();
    Ok(ClusterModel {
        k,
        centroids: best.centroids,
        assignment,
        iterations_run: best.iterations,
        sse: best.sse,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SseCurve {
    pub entries: Vec<(usize, f64)>,
}

impl SseCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,sse\n");
        for (k, sse) in &self.entries {
            out.push_str(&format!("{k},{}\n", crate::numfmt::fmt_f64(*sse)));
        }
        out
    }
}

pub fn elbow_scan(profiles: &[PeriodProfile], k_max: usize, opts: &KMeansOptions) -> Result<SseCurve, ClusterError> {
    let distinct = distinct_count(profiles);
    if k_max > distinct {
        return Err(ClusterError::TooFewPoints { k: k_max, distinct });
    }
    let entries = (1..=k_max)
        .map(|k| kmeans(profiles, k, opts).map(|m| (k, m.sse)))
        .collect::<Result<_, _>>()?;
    Ok(SseCurve { entries })
}

/// Knee of the curve: the interior point farthest from the chord joining
/// the first and last points, with both axes min-max scaled to `[0, 1]`.
pub fn knee_point(curve: &SseCurve) -> Result<usize, ClusterError> {
    let e = &curve.entries;
    if e.len() < 3 {
        return Err(ClusterError::CurveTooShort(e.len()));
    }
    let (kmin, kmax) = (e[0].0 as f64, e[e.len() - 1].0 as f64);
    let smin = e.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let smax = e.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    let sx = |k: usize| (k as f64 - kmin) / (kmax - kmin);
    let sy = |s: f64| if smax > smin { (s - smin) / (smax - smin) } else { 0.0 };
    let (x0, y0) = (sx(e[0].0), sy(e[0].1));
    let (x1, y1) = (sx(e[e.len() - 1].0), sy(e[e.len() - 1].1));
    let (dx, dy) = (x1 - x0, y1 - y0);
    let norm = (dx * dx + dy * dy).sqrt();
    let mut best = (e[1].0, f64::NEG_INFINITY);
    for &(k, s) in &e[1..e.len() - 1] {
        let (x, y) = (sx(k), sy(s));
        let dist = if norm > 0.0 {
            (dy * (x - x0) - dx * (y - y0)).abs() / norm
        } else {
            0.0
        };
        if dist > best.1 + 1e-12 {
            best = (k, dist);
        }
    }
    Ok(best.0)
}

/// Bin-wise mean of the given cells' series, summed in the order given.
pub fn mean_series(
    binned: &BTreeMap<u64, BinnedCellSeries>,
    cells: &[u64],
    id: u64,
) -> Result<BinnedCellSeries, ClusterError> {
    let first = cells.first().ok_or(ClusterError::EmptySeries(id))?;
    let reference = binned.get(first).ok_or(ClusterError::MissingSeries(*first))?;
    let mut total = vec![0.0; reference.values.len()];
    for &cell in cells {
        let s = binned.get(&cell).ok_or(ClusterError::MissingSeries(cell))?;
        if (s.span_start, s.values.len()) != (reference.span_start, reference.values.len()) {
            return Err(ClusterError::SpanMismatch(cell));
        }
        total.iter_mut().zip(&s.values).for_each(|(a, v)| *a += v);
    }
    let n = cells.len() as f64;
    Ok(BinnedCellSeries {
        cell_id: id,
        span_start: reference.span_start,
        values: total.into_iter().map(|v| v / n).collect(),
    })
}

/// Per-cluster mean series, keyed by 1-based cluster number. Empty clusters
/// are omitted.
pub fn cluster_mean_series(
    model: &ClusterModel,
    binned: &BTreeMap<u64, BinnedCellSeries>,
) -> Result<BTreeMap<usize, BinnedCellSeries>, ClusterError> {
    let mut out = BTreeMap::new();
    let mut reference: Option<(i64, usize)> = None;
    for (j, cells) in model.members().iter().enumerate() {
        if cells.is_empty() {
            continue;
        }
        let s = mean_series(binned, cells, (j + 1) as u64)?;
        match reference {
            None => reference = Some((s.span_start, s.values.len())),
            Some(r) if r != (s.span_start, s.values.len()) => return Err(ClusterError::SpanMismatch(cells[0])),
            _ => {}
        }
        out.insert(j + 1, s);
    }
    Ok(out)
}

/// Chance-corrected agreement between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must cover the same items");
    let n = a.len();
    if n < 2 {
        return 1.0;
    }
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let c2 = |m: u64| (m * m.saturating_sub(1) / 2) as f64;
    let index: f64 = table.values().map(|&m| c2(m)).sum();
    let sum_a: f64 = rows.values().map(|&m| c2(m)).sum();
    let sum_b: f64 = cols.values().map(|&m| c2(m)).sum();
    let expected = sum_a * sum_b / c2(n as u64);
    let max = 0.5 * (sum_a + sum_b);
    if (max - expected).abs() < f64::EPSILON {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

impl ClusterModel {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cluster model serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ClusterError> {
        let m: ClusterModel = serde_json::from_str(text).map_err(|e| ClusterError::InvalidModel(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ClusterError> {
        if self.k < 1 {
            return Err(ClusterError::InvalidK(self.k));
        }
        if self.centroids.len() != self.k {
            return Err(ClusterError::InvalidModel(format!(
                "{} centroids for k = {}",
                self.centroids.len(),
                self.k
            )));
        }
        if self.centroids.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ClusterError::InvalidModel("non-finite centroid".into()));
        }
        if !(self.sse.is_finite() && self.sse >= 0.0) {
            return Err(ClusterError::InvalidModel("sse must be finite and >= 0".into()));
        }
        if let Some((cell, idx)) = self.assignment.iter().find(|(_, &i)| i >= self.k) {
            return Err(ClusterError::InvalidModel(format!("cell {cell} assigned to cluster {idx}")));
        }
        Ok(())
    }

    /// Members of each cluster, by cluster index.
    pub fn members(&self) -> Vec<Vec<u64>> {
        let mut out = vec![Vec::new(); self.k];
        for (&cell, &c) in &self.assignment {
            out[c].push(cell);
        }
        out
    }
}
