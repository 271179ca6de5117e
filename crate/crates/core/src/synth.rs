//! Seeded synthetic city: cells drawn from known activity archetypes,
//! emitted as CDR text files in the same layout the ingester reads.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Weekday};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{DayPeriod, PERIODS};
use crate::ingest::{BINS_PER_DAY, BIN_WIDTH_MS};
use crate::numfmt::fmt_f64;
use crate::seeding::{rng_for, stream};

/// 2013-11-01 00:00 in Milan (UTC+1), as epoch milliseconds.
pub const DEFAULT_SPAN_START: i64 = 1_383_260_400_000;
pub const DEFAULT_UTC_OFFSET_MS: i64 = 3_600_000;
pub const DEFAULT_DAYS: usize = 62;

const DAY_MS: i64 = 24 * 3_600_000;
const SLOT_MS: i64 = 10 * 60 * 1000;
const COUNTRIES: [u32; 5] = [39, 33, 49, 44, 0];

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Archetype {
    pub id: u32,
    pub base_level: f64,
    pub period_weights: [f64; PERIODS],
    pub weekend_factor: f64,
    pub noise_sd: f64,
}

fn weekday_serde_default() -> String {
    "Fri".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub archetypes: Vec<Archetype>,
    pub cells_per_archetype: usize,
    #[serde(default = "default_days")]
    pub days: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_span_start")]
    pub span_start: i64,
    #[serde(default = "default_offset")]
    pub utc_offset_ms: i64,
    /// Weekday of day 0 of the span.
    #[serde(default = "weekday_serde_default")]
    pub first_weekday: String,
}

fn default_days() -> usize {
    DEFAULT_DAYS
}
fn default_span_start() -> i64 {
    DEFAULT_SPAN_START
}
fn default_offset() -> i64 {
    DEFAULT_UTC_OFFSET_MS
}

/// Bin values as generated, plus the archetype of each cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthTruth {
    pub bins: BTreeMap<u64, Vec<f64>>,
    pub archetype_of: BTreeMap<u64, u32>,
}

impl SynthTruth {
    pub fn truth_csv(&self) -> String {
        let mut s = String::from("cell_id,archetype\n");
        for (c, a) in &self.archetype_of {
            s.push_str(&format!("{c},{a}\n"));
        }
        s
    }
}

impl SynthSpec {
    /// Up to 12 archetypes whose day profiles are pairwise far apart: six
    /// with a single busy period and six with two adjacent busy periods.
    pub fn well_separated(count: usize, cells_per_archetype: usize, noise_sd: f64, seed: u64) -> Self {
        assert!((1..=12).contains(&count), "well_separated supports 1..=12 archetypes");
        let archetypes = (0..count)
            .map(|a| {
                let mut w = [1.0; PERIODS];
                if a < 6 {
                    w[a] = 10.0;
                } else {
                    w[a - 6] = 10.0;
                    w[(a - 5) % PERIODS] = 10.0;
                }
                Archetype {
                    id: a as u32 + 1,
                    base_level: 10.0,
                    period_weights: w,
                    weekend_factor: 1.0,
                    noise_sd,
                }
            })
            .collect();
        Self {
            archetypes,
            cells_per_archetype,
            days: DEFAULT_DAYS,
            seed,
            span_start: DEFAULT_SPAN_START,
            utc_offset_ms: DEFAULT_UTC_OFFSET_MS,
            first_weekday: weekday_serde_default(),
        }
    }

    pub fn validate(&self) -> Result<Weekday, SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.archetypes.is_empty() {
            return bad("no archetypes".into());
        }
        if self.cells_per_archetype < 1 {
            return bad("cells_per_archetype must be >= 1".into());
        }
        if self.days < 1 {
            return bad("days must be >= 1".into());
        }
        if self.span_start.rem_euclid(BIN_WIDTH_MS) != 0 {
            return bad("span_start must be aligned to 30 minutes".into());
        }
        for a in &self.archetypes {
            if !(a.base_level.is_finite() && a.base_level >= 0.0) {
                return bad(format!("archetype {}: base_level must be finite and >= 0", a.id));
            }
            if a.period_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return bad(format!("archetype {}: period weights must be finite and >= 0", a.id));
            }
            if !a.period_weights.iter().any(|w| *w > 0.0) {
                return bad(format!("archetype {}: needs a positive period weight", a.id));
            }
            if !(a.weekend_factor > 0.0 && a.weekend_factor <= 2.0) {
                return bad(format!("archetype {}: weekend_factor must lie in (0, 2]", a.id));
            }
            if !(a.noise_sd.is_finite() && a.noise_sd >= 0.0) {
                return bad(format!("archetype {}: noise_sd must be finite and >= 0", a.id));
            }
        }
        let mut ids: Vec<u32> = self.archetypes.iter().map(|a| a.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.archetypes.len() {
            return bad("archetype ids must be unique".into());
        }
        self.first_weekday
            .parse::<Weekday>()
            .map_err(|_| SynthError::InvalidSpec(format!("unknown weekday {:?}", self.first_weekday)))
    }

    pub fn bins(&self) -> usize {
        self.days * BINS_PER_DAY
    }

    pub fn span_end(&self) -> i64 {
        self.span_start + self.days as i64 * DAY_MS
    }
}

fn is_weekend(first: Weekday, day: usize) -> bool {
    let wd = (first.num_days_from_monday() as usize + day) % 7;
    wd >= 5
}

/// Generate each cell's exact bin values. Cell ids run from 1, archetype by
/// archetype.
pub fn generate_bins(spec: &SynthSpec) -> Result<SynthTruth, SynthError> {
    let first = spec.validate()?;
    let mut bins = BTreeMap::new();
    let mut archetype_of = BTreeMap::new();
    let mut cell_id = 0u64;
    for a in &spec.archetypes {
        for _ in 0..spec.cells_per_archetype {
            cell_id += 1;
            let mut rng = rng_for(spec.seed, stream::SYNTH_CELL + cell_id);
            let noise = (a.noise_sd > 0.0).then(|| Normal::new(0.0, a.noise_sd).expect("valid sd"));
            let values: Vec<f64> = (0..spec.bins())
                .map(|b| {
                    let t = spec.span_start + b as i64 * BIN_WIDTH_MS;
                    let p = DayPeriod::of_timestamp(t, spec.utc_offset_ms).index();
                    let wk = if is_weekend(first, b / BINS_PER_DAY) { a.weekend_factor } else { 1.0 };
                    let eps = noise.as_ref().map_or(0.0, |n| n.sample(&mut rng));
                    (a.base_level * a.period_weights[p] * wk + eps).max(0.0)
                })
                .collect();
            bins.insert(cell_id, values);
            archetype_of.insert(cell_id, a.id);
        }
    }
    Ok(SynthTruth { bins, archetype_of })
}

/// Split `value` into 1..=4 non-negative parts that sum back to it.
fn split_value<R: Rng>(value: f64, rng: &mut R) -> Vec<f64> {
    let m = rng.random_range(1..=4usize);
    if m == 1 || value == 0.0 {
        return vec![value];
    }
    let mut cuts: Vec<f64> = (0..m - 1).map(|_| rng.random::<f64>()).collect();
    cuts.sort_by(f64::total_cmp);
    let mut parts = Vec::with_capacity(m);
    let mut prev = 0.0;
    let mut acc = 0.0;
    for c in cuts {
        let p = value * (c - prev);
        parts.push(p);
        acc += p;
        prev = c;
    }
    parts.push((value - acc).max(0.0));
    parts
}

/// File name of the log for local day `day`, e.g. `sms-call-internet-mi-2013-11-01.txt`.
pub fn day_file_name(spec: &SynthSpec, day: usize) -> String {
    let t = spec.span_start + day as i64 * DAY_MS + spec.utc_offset_ms;
    let date = DateTime::from_timestamp_millis(t).map(|d| d.date_naive());
    match date {
        Some(d) => format!("sms-call-internet-mi-{}.txt", d.format("%Y-%m-%d")),
        None => format!("sms-call-internet-mi-day{day:03}.txt"),
    }
}

pub const CDR_HEADER: &str = "square_id\ttime\tcountry\tsms_in\tsms_out\tcall_in\tcall_out\tinternet";

/// CDR lines of one local day, sorted by (timestamp, cell).
pub fn day_lines(spec: &SynthSpec, truth: &SynthTruth, day: usize) -> Vec<String> {
    let mut rows: Vec<(i64, u64, usize, String)> = Vec::new();
    for (&cell, values) in &truth.bins {
        let mut rng = rng_for(spec.seed ^ 0x5EED_CD12, stream::SYNTH_CELL + cell * 4096 + day as u64);
        for b in day * BINS_PER_DAY..(day + 1) * BINS_PER_DAY {
            let start = spec.span_start + b as i64 * BIN_WIDTH_MS;
            for (seq, part) in split_value(values[b], &mut rng).into_iter().enumerate() {
                let ts = start + rng.random_range(0..3i64) * SLOT_MS;
                let country = COUNTRIES[rng.random_range(0..COUNTRIES.len())];
                let line = format!("{cell}\t{ts}\t{country}\t\t\t\t\t{}", fmt_f64(part));
                rows.push((ts, cell, seq, line));
            }
            // an SMS-only row with a blank Internet field
            if rng.random::<f64>() < 0.1 {
                let ts = start + rng.random_range(0..3i64) * SLOT_MS;
                let sms = fmt_f64(rng.random::<f64>());
                rows.push((ts, cell, 99, format!("{cell}\t{ts}\t39\t{sms}\t\t\t\t")));
            }
        }
    }
    rows.sort_by_key(|r| (r.0, r.1, r.2));
    rows.into_iter().map(|r| r.3).collect()
}

/// Write one CDR file per day plus `truth.csv` into `dir`.
pub fn write_to_dir(spec: &SynthSpec, dir: &Path) -> Result<SynthTruth, SynthError> {
    let truth = generate_bins(spec)?;
    std::fs::create_dir_all(dir)?;
    for day in 0..spec.days {
        let path = dir.join(day_file_name(spec, day));
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "{CDR_HEADER}")?;
        for line in day_lines(spec, &truth, day) {
            writeln!(f, "{line}")?;
        }
        f.flush()?;
    }
    std::fs::write(dir.join("truth.csv"), truth.truth_csv())?;
    Ok(truth)
}

/// Noiseless sinusoid in `[0, 1]` with the given period in bins.
pub fn sine_series(len: usize, period: usize) -> Vec<f64> {
    (0..len)
        .map(|t| 0.5 + 0.5 * (2.0 * std::f64::consts::PI * t as f64 / period as f64).sin())
        .collect()
}

/// Read a `cell_id,archetype` truth file.
pub fn parse_truth_csv(text: &str) -> Result<BTreeMap<u64, u32>, SynthError> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    for rec in rdr.deserialize::<(u64, u32)>() {
        let (c, a) = rec.map_err(|e| SynthError::InvalidSpec(format!("truth file: {e}")))?;
        out.insert(c, a);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ingest_paths, ColumnMap, Span};

    fn constant_spec() -> SynthSpec {
        SynthSpec {
            archetypes: vec![Archetype {
                id: 1,
                base_level: 2.0,
                period_weights: [1.0; 6],
                weekend_factor: 1.0,
                noise_sd: 0.0,
            }],
            cells_per_archetype: 3,
            days: 2,
            seed: 4,
            span_start: DEFAULT_SPAN_START,
            utc_offset_ms: DEFAULT_UTC_OFFSET_MS,
            first_weekday: "Fri".into(),
        }
    }

    #[test]
    fn constant_archetype_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = constant_spec();
        write_to_dir(&spec, dir.path()).unwrap();
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().path()).collect();
        let cdr: Vec<_> = files.into_iter().filter(|p| p.extension().unwrap() == "txt").collect();
        let set = ingest_paths(&cdr, &ColumnMap::default(), Span::new(spec.span_start, spec.span_end()).unwrap()).unwrap();
        assert_eq!(set.cells.len(), 3);
        for s in set.cells.values() {
            assert_eq!(s.values.len(), 96);
            for v in &s.values {
                assert!((v - 2.0).abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn deterministic_files() {
        let spec = SynthSpec { seed: 9, ..constant_spec() };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        write_to_dir(&spec, a.path()).unwrap();
        write_to_dir(&spec, b.path()).unwrap();
        for day in 0..spec.days {
            let name = day_file_name(&spec, day);
            assert_eq!(std::fs::read(a.path().join(&name)).unwrap(), std::fs::read(b.path().join(&name)).unwrap());
        }
        assert_eq!(day_file_name(&spec, 0), "sms-call-internet-mi-2013-11-01.txt");
    }

    #[test]
    fn invalid_specs() {
        let mut s = constant_spec();
        s.archetypes[0].period_weights = [0.0; 6];
        assert!(matches!(generate_bins(&s), Err(SynthError::InvalidSpec(_))));
        let mut s = constant_spec();
        s.archetypes[0].weekend_factor = 2.5;
        assert!(generate_bins(&s).is_err());
        let mut s = constant_spec();
        s.days = 0;
        assert!(generate_bins(&s).is_err());
        let mut s = constant_spec();
        s.first_weekday = "Funday".into();
        assert!(generate_bins(&s).is_err());
    }

    #[test]
    fn weekend_modulation() {
        let mut s = constant_spec();
        s.days = 7;
        s.archetypes[0].weekend_factor = 0.5;
        s.cells_per_archetype = 1;
        let t = generate_bins(&s).unwrap();
        let v = &t.bins[&1];
        // day 0 is Friday, days 1 and 2 the weekend
        assert_eq!(v[0], 2.0);
        assert_eq!(v[48], 1.0);
        assert_eq!(v[2 * 48 + 5], 1.0);
        assert_eq!(v[3 * 48], 2.0);
    }

    #[test]
    fn lag_48_autocorrelation_is_one() {
        let mut s = SynthSpec::well_separated(3, 1, 0.0, 1);
        s.days = 10;
        let t = generate_bins(&s).unwrap();
        for v in t.bins.values() {
            let (a, b) = (&v[..v.len() - 48], &v[48..]);
            let ma = a.iter().sum::<f64>() / a.len() as f64;
            let mb = b.iter().sum::<f64>() / b.len() as f64;
            let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
            let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
            let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
            assert!((cov / (va * vb).sqrt() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn split_conserves() {
        let mut rng = rng_for(1, 1);
        for i in 0..200 {
            let v = i as f64 * 0.731;
            let parts = split_value(v, &mut rng);
            assert!((1..=4).contains(&parts.len()));
            assert!(parts.iter().all(|p| *p >= 0.0));
            assert!((parts.iter().sum::<f64>() - v).abs() <= 1e-12 * v.max(1.0));
        }
    }
}
