//! Supervised dataset construction for one cluster series: chronological
//! train/test split, min-max scaling fitted on the training part, and
//! sliding windows predicting the next bin.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numfmt::fmt_f64;

pub const DEFAULT_WINDOW: usize = 4;
pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

#[derive(Debug, Error, PartialEq)]
pub enum PrepError {
    #[error("series of length {len} is too short (need {need})")]
    SeriesTooShort { len: usize, need: usize },
    #[error("split ratio must lie in (0, 1), got {0}")]
    InvalidRatio(f64),
    #[error("cannot fit a scaler on a constant series")]
    ConstantSeries,
    #[error("invalid scaler: {0}")]
    InvalidScaler(String),
}

/// Chronological split: the first `floor(ratio * n)` values train, the rest test.
pub fn split_train_test(series: &[f64], ratio: f64) -> Result<(Vec<f64>, Vec<f64>), PrepError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(PrepError::InvalidRatio(ratio));
    }
    if series.len() < 2 {
        return Err(PrepError::SeriesTooShort { len: series.len(), need: 2 });
    }
    let cut = split_point(series.len(), ratio);
    Ok((series[..cut].to_vec(), series[cut..].to_vec()))
}

pub fn split_point(n: usize, ratio: f64) -> usize {
    (ratio * n as f64).floor() as usize
}

/// Affine map of `[lo, hi]` onto `[0, 1]`. Values outside the fitted range
/// are not clipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinMaxScaler {
    pub lo: f64,
    pub hi: f64,
}

impl MinMaxScaler {
    pub fn new(lo: f64, hi: f64) -> Result<Self, PrepError> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(PrepError::InvalidScaler("bounds must be finite".into()));
        }
        if hi <= lo {
            return Err(PrepError::InvalidScaler(format!("hi {hi} must exceed lo {lo}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn transform_one(&self, x: f64) -> f64 {
        (x - self.lo) / (self.hi - self.lo)
    }

    pub fn inverse_one(&self, y: f64) -> f64 {
        y * (self.hi - self.lo) + self.lo
    }

    pub fn transform(&self, series: &[f64]) -> Vec<f64> {
        series.iter().map(|&x| self.transform_one(x)).collect()
    }

    pub fn inverse(&self, series: &[f64]) -> Vec<f64> {
        series.iter().map(|&y| self.inverse_one(y)).collect()
    }
}

pub fn fit_scaler(train: &[f64]) -> Result<MinMaxScaler, PrepError> {
    let lo = train.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = train.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if train.is_empty() || hi <= lo {
        return Err(PrepError::ConstantSeries);
    }
    MinMaxScaler::new(lo, hi)
}

/// Input windows and next-step targets, in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedWindows {
    pub window: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    /// Index of each target in the source series.
    pub origin_indices: Vec<usize>,
}

impl SupervisedWindows {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// CSV with header `x1,...,xW,y`.
    pub fn to_csv(&self) -> String {
        let mut out: String = (1..=self.window).map(|i| format!("x{i},")).collect();
        out.push_str("y\n");
        for (x, y) in self.inputs.iter().zip(&self.targets) {
            for v in x {
                out.push_str(&fmt_f64(*v));
                out.push(',');
            }
            out.push_str(&fmt_f64(*y));
            out.push('\n');
        }
        out
    }
}

pub fn make_windows(series: &[f64], window: usize) -> Result<SupervisedWindows, PrepError> {
    if window == 0 || series.len() <= window {
        return Err(PrepError::SeriesTooShort {
            len: series.len(),
            need: window + 1,
        });
    }
    let origin_indices: Vec<usize> = (window..series.len()).collect();
    let inputs = origin_indices.iter().map(|&t| series[t - window..t].to_vec()).collect();
    let targets = origin_indices.iter().map(|&t| series[t]).collect();
    Ok(SupervisedWindows {
        window,
        inputs,
        targets,
        origin_indices,
    })
}

/// Scaled train/test windows for one series, plus the scaler fitted on the
/// training split and the split index.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedData {
    pub scaler: MinMaxScaler,
    pub split: usize,
    pub train: SupervisedWindows,
    pub test: SupervisedWindows,
}

/// Split, fit the scaler on the training part only, scale both parts and
/// window each part independently.
pub fn prepare(series: &[f64], ratio: f64, window: usize) -> Result<PreparedData, PrepError> {
    let (train_raw, test_raw) = split_train_test(series, ratio)?;
    let scaler = fit_scaler(&train_raw)?;
    let train = make_windows(&scaler.transform(&train_raw), window)?;
    let test = make_windows(&scaler.transform(&test_raw), window)?;
    Ok(PreparedData {
        scaler,
        split: train_raw.len(),
        train,
        test,
    })
}
