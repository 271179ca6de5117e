//! CDR log parsing and 30-minute binning of per-cell Internet activity.
//!
//! Input rows follow the Telecom Italia activity-log layout: tab separated,
//! `square_id, time, country, sms-in, sms-out, call-in, call-out, internet`.
//! Only the Internet channel is aggregated.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numfmt::fmt_f64;

/// Width of one aggregation bin in milliseconds (30 minutes).
pub const BIN_WIDTH_MS: i64 = 30 * 60 * 1000;
/// Width of one aggregation bin in minutes.
pub const BIN_WIDTH_MINUTES: u32 = 30;
/// Bins per day at 30-minute resolution.
pub const BINS_PER_DAY: usize = 48;

#[derive(Debug, Error, PartialEq)]
pub enum IngestError {
    #[error("malformed line: {0}")]
    MalformedLine(String),
    #[error("negative internet activity {value} for cell {cell_id}")]
    NegativeActivity { cell_id: u64, value: f64 },
    #[error("span [{start}, {end}) is not a positive whole multiple of 30 minutes")]
    UnalignedSpan { start: i64, end: i64 },
    #[error("{path}:{line}: {source}")]
    AtLine {
        path: String,
        line: usize,
        #[source]
        source: Box<IngestError>,
    },
    #[error("io error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid binned series document: {0}")]
    InvalidDocument(String),
}

/// Column positions of the fields the pipeline reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnMap {
    pub cell_id: usize,
    pub timestamp: usize,
    pub internet: usize,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            cell_id: 0,
            timestamp: 1,
            internet: 7,
        }
    }
}

/// One Internet activity log row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdrRecord {
    pub cell_id: u64,
    /// Milliseconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub internet_activity: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ParsedLine {
    Record(CdrRecord),
    /// The row carries no Internet activity (blank field or blank line).
    Skip,
}

fn field<'a>(fields: &[&'a str], idx: usize, name: &str, line: &str) -> Result<&'a str, IngestError> {
    fields
        .get(idx)
        .copied()
        .ok_or_else(|| IngestError::MalformedLine(format!("missing {name} column {idx} in {line:?}")))
}

/// Parse one tab-separated CDR row.
pub fn parse_cdr_line(line: &str, columns: &ColumnMap) -> Result<ParsedLine, IngestError> {
    let line = line.trim_end_matches(['\r', '\n']);
    if line.trim().is_empty() {
        return Ok(ParsedLine::Skip);
    }
    let fields: Vec<&str> = line.split('\t').collect();

    let raw_id = field(&fields, columns.cell_id, "cell id", line)?.trim();
    let cell_id: u64 = raw_id
        .parse()
        .map_err(|_| IngestError::MalformedLine(format!("non-numeric cell id {raw_id:?}")))?;
    if cell_id == 0 {
        return Err(IngestError::MalformedLine("cell id must be >= 1".into()));
    }

    let raw_ts = field(&fields, columns.timestamp, "timestamp", line)?.trim();
    let timestamp: i64 = raw_ts
        .parse()
        .map_err(|_| IngestError::MalformedLine(format!("non-numeric timestamp {raw_ts:?}")))?;

    let raw_activity = field(&fields, columns.internet, "internet", line)?.trim();
    if raw_activity.is_empty() {
        return Ok(ParsedLine::Skip);
    }
    let internet_activity: f64 = raw_activity
        .parse()
        .map_err(|_| IngestError::MalformedLine(format!("non-numeric internet activity {raw_activity:?}")))?;
    if !internet_activity.is_finite() {
        return Err(IngestError::MalformedLine(format!(
            "non-finite internet activity {raw_activity:?}"
        )));
    }
    if internet_activity < 0.0 {
        return Err(IngestError::NegativeActivity {
            cell_id,
            value: internet_activity,
        });
    }
    Ok(ParsedLine::Record(CdrRecord {
        cell_id,
        timestamp,
        internet_activity,
    }))
}

/// A header line is recognised by a non-numeric first field.
pub fn is_header_line(line: &str) -> bool {
    let first = line.split('\t').next().unwrap_or("").trim();
    !first.is_empty() && first.parse::<f64>().is_err()
}

/// Half-open time span `[start, end)` in epoch milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: i64,
    pub end: i64,
}

impl Span {
    pub fn new(start: i64, end: i64) -> Result<Self, IngestError> {
        if end <= start || (end - start) % BIN_WIDTH_MS != 0 || start.rem_euclid(BIN_WIDTH_MS) != 0 {
            return Err(IngestError::UnalignedSpan { start, end });
        }
        Ok(Self { start, end })
    }

    pub fn bins(&self) -> usize {
        ((self.end - self.start) / BIN_WIDTH_MS) as usize
    }

    pub fn bin_of(&self, timestamp: i64) -> Option<usize> {
        if timestamp < self.start || timestamp >= self.end {
            return None;
        }
        Some(((timestamp - self.start) / BIN_WIDTH_MS) as usize)
    }
}

/// Error-free running sum (TwoSum compensation).
///
/// `hi + lo` carries roughly twice the precision of an f64, so sums of
/// activity values come out the same regardless of record order.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    hi: f64,
    lo: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let s = self.hi + x;
        let bp = s - self.hi;
        let err = (self.hi - (s - bp)) + (x - bp);
        self.hi = s;
        self.lo += err;
    }

    pub fn merge(&mut self, other: &CompensatedSum) {
        self.add(other.hi);
        self.lo += other.lo;
    }

    pub fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// Per-cell 30-minute Internet activity sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedCellSeries {
    pub cell_id: u64,
    pub span_start: i64,
    pub values: Vec<f64>,
}

impl BinnedCellSeries {
    pub fn bin_width_ms(&self) -> i64 {
        BIN_WIDTH_MS
    }

    pub fn span_end(&self) -> i64 {
        self.span_start + self.values.len() as i64 * BIN_WIDTH_MS
    }

    /// Start time of bin `b` in epoch milliseconds.
    pub fn bin_start(&self, b: usize) -> i64 {
        self.span_start + b as i64 * BIN_WIDTH_MS
    }
}

/// Associative accumulator behind [`bin_series`]; partial maps from
/// different files merge by element-wise addition.
#[derive(Debug, Clone)]
pub struct BinAccumulator {
    span: Span,
    cells: BTreeMap<u64, Vec<CompensatedSum>>,
    dropped: u64,
}

impl BinAccumulator {
    pub fn new(span: Span) -> Self {
        Self {
            span,
            cells: BTreeMap::new(),
            dropped: 0,
        }
    }

    pub fn push(&mut self, record: &CdrRecord) {
        match self.span.bin_of(record.timestamp) {
            Some(b) => {
                let bins = self.span.bins();
                let acc = self
                    .cells
                    .entry(record.cell_id)
                    .or_insert_with(|| vec![CompensatedSum::default(); bins]);
                acc[b].add(record.internet_activity);
            }
            None => self.dropped += 1,
        }
    }

    /// Element-wise addition of another partial accumulator over the same span.
    pub fn merge(&mut self, other: BinAccumulator) -> Result<(), IngestError> {
        if other.span != self.span {
            return Err(IngestError::UnalignedSpan {
                start: other.span.start,
                end: other.span.end,
            });
        }
        self.dropped += other.dropped;
        for (cell, sums) in other.cells {
            match self.cells.get_mut(&cell) {
                Some(mine) => mine.iter_mut().zip(&sums).for_each(|(a, b)| a.merge(b)),
                None => {
                    self.cells.insert(cell, sums);
                }
            }
        }
        Ok(())
    }

    /// Number of records that fell outside the span.
    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn finish(self) -> BinnedSet {
        let span = self.span;
        let cells = self
            .cells
            .into_iter()
            .map(|(cell_id, sums)| {
                let values = sums.iter().map(CompensatedSum::value).collect();
                (
                    cell_id,
                    BinnedCellSeries {
                        cell_id,
                        span_start: span.start,
                        values,
                    },
                )
            })
            .collect();
        BinnedSet {
            span,
            cells,
            dropped: self.dropped,
        }
    }
}

/// All binned cells over one span.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedSet {
    pub span: Span,
    pub cells: BTreeMap<u64, BinnedCellSeries>,
    /// Records dropped for falling outside the span.
    pub dropped: u64,
}

/// Sum each cell's records into 30-minute bins over `[span_start, span_end)`.
pub fn bin_series<I>(records: I, span_start: i64, span_end: i64) -> Result<BinnedSet, IngestError>
where
    I: IntoIterator<Item = CdrRecord>,
{
    let span = Span::new(span_start, span_end)?;
    let mut acc = BinAccumulator::new(span);
    for r in records {
        acc.push(&r);
    }
    Ok(acc.finish())
}

/// Stream one CDR file into an accumulator. A first line with a
/// non-numeric first field is treated as a header.
pub fn ingest_reader<R: BufRead>(
    reader: R,
    columns: &ColumnMap,
    acc: &mut BinAccumulator,
    source_name: &str,
) -> Result<(), IngestError> {
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| IngestError::Io {
            path: source_name.to_string(),
            message: e.to_string(),
        })?;
        if i == 0 && is_header_line(&line) {
            continue;
        }
        match parse_cdr_line(&line, columns) {
            Ok(ParsedLine::Record(r)) => acc.push(&r),
            Ok(ParsedLine::Skip) => {}
            Err(e) => {
                return Err(IngestError::AtLine {
                    path: source_name.to_string(),
                    line: i + 1,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(())
}

/// Expand a list of files and directories into a sorted list of regular
/// files. Directories contribute their `.txt` and `.tsv` files; files named
/// directly are taken whatever their extension.
pub fn collect_input_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, IngestError> {
    let mut files = Vec::new();
    for input in inputs {
        let meta = std::fs::metadata(input).map_err(|e| IngestError::Io {
            path: input.display().to_string(),
            message: e.to_string(),
        })?;
        if meta.is_dir() {
            let rd = std::fs::read_dir(input).map_err(|e| IngestError::Io {
                path: input.display().to_string(),
                message: e.to_string(),
            })?;
            let mut entries: Vec<PathBuf> = rd
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| !n.starts_with('.')))
                .filter(|p| {
                    p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| e.eq_ignore_ascii_case("txt") || e.eq_ignore_ascii_case("tsv"))
                })
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

/// Ingest every file under `inputs` (files or directories) into a binned set.
pub fn ingest_paths(inputs: &[PathBuf], columns: &ColumnMap, span: Span) -> Result<BinnedSet, IngestError> {
    let mut acc = BinAccumulator::new(span);
    for path in collect_input_files(inputs)? {
        let file = std::fs::File::open(&path).map_err(|e| IngestError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        ingest_reader(
            std::io::BufReader::new(file),
            columns,
            &mut acc,
            &path.display().to_string(),
        )?;
    }
    Ok(acc.finish())
}

/// JSON form: `{span_start, bin_width_minutes, cells: {id: [values]}}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BinnedDocument {
    span_start: i64,
    bin_width_minutes: u32,
    cells: BTreeMap<u64, Vec<f64>>,
}

impl BinnedSet {
    pub fn to_json(&self) -> String {
        let doc = BinnedDocument {
            span_start: self.span.start,
            bin_width_minutes: BIN_WIDTH_MINUTES,
            cells: self
                .cells
                .iter()
                .map(|(id, s)| (*id, s.values.clone()))
                .collect(),
        };
        serde_json::to_string(&doc).expect("binned series serialize")
    }

    /// Parse and validate a binned-series JSON document.
    pub fn from_json(text: &str) -> Result<Self, IngestError> {
        let doc: BinnedDocument =
            serde_json::from_str(text).map_err(|e| IngestError::InvalidDocument(e.to_string()))?;
        if doc.bin_width_minutes != BIN_WIDTH_MINUTES {
            return Err(IngestError::InvalidDocument(format!(
                "bin_width_minutes must be {BIN_WIDTH_MINUTES}, got {}",
                doc.bin_width_minutes
            )));
        }
        let mut len = None;
        for (id, values) in &doc.cells {
            if *id == 0 {
                return Err(IngestError::InvalidDocument("cell id 0".into()));
            }
            if values.is_empty() {
                return Err(IngestError::InvalidDocument(format!("cell {id} has no bins")));
            }
            if let Some(l) = len {
                if l != values.len() {
                    return Err(IngestError::InvalidDocument(format!(
                        "cell {id} has {} bins, expected {l}",
                        values.len()
                    )));
                }
            }
            len = Some(values.len());
            if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(IngestError::InvalidDocument(format!(
                    "cell {id} has a negative or non-finite bin"
                )));
            }
        }
        let bins = len.unwrap_or(1) as i64;
        let end = bins
            .checked_mul(BIN_WIDTH_MS)
            .and_then(|d| doc.span_start.checked_add(d))
            .ok_or_else(|| IngestError::InvalidDocument("span overflows".into()))?;
        let span = Span::new(doc.span_start, end)
            .map_err(|e| IngestError::InvalidDocument(e.to_string()))?;
        let cells = doc
            .cells
            .into_iter()
            .map(|(cell_id, values)| {
                (
                    cell_id,
                    BinnedCellSeries {
                        cell_id,
                        span_start: span.start,
                        values,
                    },
                )
            })
            .collect();
        Ok(Self {
            span,
            cells,
            dropped: 0,
        })
    }

    /// CSV form with header `cell_id,bin_index,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cell_id,bin_index,value\n");
        for (id, s) in &self.cells {
            for (b, v) in s.values.iter().enumerate() {
                out.push_str(&format!("{id},{b},{}\n", fmt_f64(*v)));
            }
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> std::io::Result<()> {
        let is_csv = path.extension().and_then(|e| e.to_str()) == Some("csv");
        let body = if is_csv { self.to_csv() } else { self.to_json() };
        std::fs::write(path, body)
    }
}
