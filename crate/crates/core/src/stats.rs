//! Error metrics, the Kruskal-Wallis rank test and box-plot summaries.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numfmt::fmt_f64;

/// Significance level used for report verdicts.
pub const SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("non-finite value")]
    NonFinite,
    #[error("Kruskal-Wallis needs at least 2 groups and 3 values, got {groups} groups / {total} values")]
    TooFewGroups { groups: usize, total: usize },
    #[error("group {0:?} is empty")]
    EmptyGroup(String),
    #[error("domain error: {0}")]
    DomainError(String),
}

fn check_pair(f: &[f64], y: &[f64]) -> Result<(), StatsError> {
    if f.len() != y.len() {
        return Err(StatsError::LengthMismatch(f.len(), y.len()));
    }
    if f.is_empty() {
        return Err(StatsError::Empty);
    }
    if f.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

pub fn rmse(f: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(f, y)?;
    let ss: f64 = f.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / f.len() as f64).sqrt())
}

pub fn mae(f: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(f, y)?;
    Ok(f.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / f.len() as f64)
}

/// Per-run metric values of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    pub label: String,
    pub values: Vec<f64>,
}

impl MetricSample {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            label: label.into(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallisResult {
    #[serde(rename = "H")]
    pub h: f64,
    pub df: usize,
    pub p_value: f64,
    pub tie_corrected: bool,
    /// Rank sum of each group, in input order.
    #[serde(skip)]
    pub rank_sums: Vec<f64>,
}

impl KruskalWallisResult {
    pub fn significant(&self) -> bool {
        self.p_value < SIGNIFICANCE
    }
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn kruskal_wallis(samples: &[MetricSample]) -> Result<KruskalWallisResult, StatsError> {
    if let Some(s) = samples.iter().find(|s| s.values.is_empty()) {
        return Err(StatsError::EmptyGroup(s.label.clone()));
    }
    let total: usize = samples.iter().map(|s| s.values.len()).sum();
    if samples.len() < 2 || total < 3 {
        return Err(StatsError::TooFewGroups {
            groups: samples.len(),
            total,
        });
    }
    let pooled: Vec<f64> = samples.iter().flat_map(|s| s.values.iter().copied()).collect();
    if pooled.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let df = samples.len() - 1;
    let ranks = average_ranks(&pooled);
    let mut rank_sums = Vec::with_capacity(samples.len());
    let mut off = 0;
    for s in samples {
        rank_sums.push(ranks[off..off + s.values.len()].iter().sum::<f64>());
        off += s.values.len();
    }

    let n = total as f64;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let correction = 1.0 - tie_term / (n * n * n - n);
    if correction <= 0.0 {
        // every value identical
        return Ok(KruskalWallisResult {
            h: 0.0,
            df,
            p_value: 1.0,
            tie_corrected: true,
            rank_sums,
        });
    }
    let sum_term: f64 = samples
        .iter()
        .zip(&rank_sums)
        .map(|(s, r)| r * r / s.values.len() as f64)
        .sum();
    let mut h = 12.0 / (n * (n + 1.0)) * sum_term - 3.0 * (n + 1.0);
    let tie_corrected = tie_term > 0.0;
    if tie_corrected {
        h /= correction;
    }
    let h = h.max(0.0);
    let p_value = chi_square_upper_tail(h, df as f64)?;
    Ok(KruskalWallisResult {
        h,
        df,
        p_value,
        tie_corrected,
        rank_sums,
    })
}

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, n = 9
    const G: f64 = 7.0;
    const C: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = C[0];
    let t = x + G + 0.5;
    for (i, c) in C.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

/// Regularized upper incomplete gamma function `Q(a, x)`.
pub fn regularized_gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let log_prefix = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        // P by series, Q = 1 - P
        let mut ap = a;
        let mut sum = 1.0 / a;
        let mut del = sum;
        for _ in 0..10_000 {
            ap += 1.0;
            del *= x / ap;
            sum += del;
            if del.abs() <= sum.abs() * f64::EPSILON {
                break;
            }
        }
        1.0 - sum * log_prefix.exp()
    } else {
        // Q by Lentz continued fraction
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() <= f64::EPSILON {
                break;
            }
        }
        log_prefix.exp() * h
    }
}

/// `P(X >= x)` for a chi-square variable with `df` degrees of freedom.
pub fn chi_square_upper_tail(x: f64, df: f64) -> Result<f64, StatsError> {
    if x.is_nan() || x < 0.0 {
        return Err(StatsError::DomainError(format!("chi-square statistic {x} is negative")));
    }
    if !(df >= 1.0) {
        return Err(StatsError::DomainError(format!("degrees of freedom {df} < 1")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    Ok(regularized_gamma_q(df / 2.0, x / 2.0).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

/// Quantile by linear interpolation between order statistics of a sorted sample.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn box_stats(sample: &[f64]) -> Result<BoxStats, StatsError> {
    if sample.is_empty() {
        return Err(StatsError::Empty);
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = sorted.iter().copied().filter(|v| *v >= lo_fence && *v <= hi_fence).collect();
    let outliers = sorted.iter().copied().filter(|v| *v < lo_fence || *v > hi_fence).collect();
    Ok(BoxStats {
        median,
        q1,
        q3,
        iqr,
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        outliers,
    })
}

/// CSV table with header `label,median,q1,q3,lo,hi,outliers`; outliers are
/// `;`-separated inside one field.
pub fn box_stats_csv(rows: &[(String, BoxStats)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["label", "median", "q1", "q3", "lo", "hi", "outliers"])
        .expect("in-memory csv");
    for (label, b) in rows {
        let outliers = b.outliers.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(";");
        w.write_record([
            label.clone(),
            fmt_f64(b.median),
            fmt_f64(b.q1),
            fmt_f64(b.q3),
            fmt_f64(b.whisker_low),
            fmt_f64(b.whisker_high),
            outliers,
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

/// Comparison report of several configurations' metric samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub groups: Vec<String>,
    #[serde(rename = "H")]
    pub h: f64,
    pub df: usize,
    pub p_value: f64,
    pub verdict: String,
}

pub fn compare_samples(samples: &[MetricSample]) -> Result<ComparisonReport, StatsError> {
    let kw = kruskal_wallis(samples)?;
    Ok(ComparisonReport {
        groups: samples.iter().map(|s| s.label.clone()).collect(),
        h: kw.h,
        df: kw.df,
        p_value: kw.p_value,
        verdict: if kw.significant() { "different" } else { "similar" }.to_string(),
    })
}
