use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use celltraffic::cluster::{DEFAULT_MAX_ITER, DEFAULT_RESTARTS};
use celltraffic::ingest::ColumnMap;
use celltraffic::pipeline::{
    self, parse_cluster_list, parse_span, ClusterArgs, CompareArgs, IngestArgs, KChoice, PipelineConfig, PipelineError,
    PredictArgs, SynthArgs, TrainArgs, DEFAULT_KMAX,
};
use celltraffic::prep::{DEFAULT_TRAIN_RATIO, DEFAULT_WINDOW};
use celltraffic::rnn::CellKind;
use celltraffic::synth::{SynthSpec, DEFAULT_DAYS, DEFAULT_UTC_OFFSET_MS};
use celltraffic::train::{GridSpec, TrainConfig};

#[derive(Parser)]
#[command(name = "celltraffic", version, about = "Cluster mobile traffic cells and forecast them with LSTM/GRU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bin raw CDR files into 30-minute series per cell
    Ingest(IngestCmd),
    /// Cluster cells by their day-period activity profile
    Cluster(ClusterCmd),
    /// Grid-search LSTM/GRU configurations on each cluster's mean series
    Train(TrainCmd),
    /// Kruskal-Wallis comparison of the best configuration of each cell kind
    Compare(CompareCmd),
    /// Apply a trained model over the test span of its cluster
    Predict(PredictCmd),
    /// Write a synthetic CDR dataset with known cell archetypes
    Synth(SynthCmd),
    /// Run the whole pipeline from a JSON config file
    Run(RunCmd),
}

#[derive(Args)]
struct IngestCmd {
    /// CDR files or directories (repeatable)
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    /// Local dates, end exclusive, e.g. 2013-11-01..2014-01-02
    #[arg(long)]
    span: String,
    /// Offset of local time from UTC in milliseconds
    #[arg(long, default_value_t = DEFAULT_UTC_OFFSET_MS, allow_hyphen_values = true)]
    utc_offset_ms: i64,
    #[arg(long, default_value_t = 0)]
    cell_column: usize,
    #[arg(long, default_value_t = 1)]
    time_column: usize,
    #[arg(long, default_value_t = 7)]
    internet_column: usize,
    /// Output file; `.csv` writes long-format CSV, anything else JSON
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterCmd {
    #[arg(long)]
    bins: PathBuf,
    /// `auto` for the elbow scan, or a fixed cluster count
    #[arg(long, default_value = "auto")]
    k: KChoice,
    #[arg(long, default_value_t = DEFAULT_KMAX)]
    kmax: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_RESTARTS)]
    restarts: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    max_iter: usize,
    #[arg(long, default_value_t = DEFAULT_UTC_OFFSET_MS, allow_hyphen_values = true)]
    utc_offset_ms: i64,
    #[arg(long, default_value = "clusters.json")]
    out: PathBuf,
    /// SSE curve CSV (default: sse.csv beside --out)
    #[arg(long)]
    sse_out: Option<PathBuf>,
    /// `cell_id,archetype` file; logs the adjusted Rand index
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args)]
struct TrainCmd {
    #[arg(long)]
    clusters: PathBuf,
    /// Binned series (default: bins.json beside --clusters)
    #[arg(long)]
    bins: Option<PathBuf>,
    /// `default` or a JSON grid file
    #[arg(long, default_value = "default")]
    grid: String,
    /// Override the grid's hidden-layer counts, e.g. 1,2
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// Override the grid's unit counts, e.g. 8,16
    #[arg(long, value_delimiter = ',')]
    units: Option<Vec<usize>>,
    /// Override the grid's cell kinds, e.g. lstm,gru
    #[arg(long, value_delimiter = ',')]
    kinds: Option<Vec<CellKind>>,
    #[arg(long, default_value_t = 30)]
    runs: usize,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.001)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[arg(long, default_value_t = DEFAULT_TRAIN_RATIO)]
    train_ratio: f64,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Restrict to these clusters, e.g. 1..12
    #[arg(long = "only")]
    only: Option<String>,
    /// Store wall time per run (results are then no longer byte-reproducible)
    #[arg(long)]
    timing: bool,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CompareCmd {
    #[arg(long)]
    results: PathBuf,
    /// Clusters to compare, e.g. 1..12 (default: all in the results)
    #[arg(long)]
    clusters: Option<String>,
    /// JSON report file (default: standard output)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Box-plot statistics CSV of every configuration
    #[arg(long)]
    box_out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictCmd {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    bins: PathBuf,
    /// CSV file (default: standard output)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthCmd {
    #[arg(long)]
    out_dir: PathBuf,
    /// JSON synthetic spec; overrides the archetype flags
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 12)]
    archetypes: usize,
    #[arg(long, default_value_t = 50)]
    cells: usize,
    #[arg(long, default_value_t = DEFAULT_DAYS)]
    days: usize,
    #[arg(long, default_value_t = 0.5)]
    noise_sd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunCmd {
    #[arg(long)]
    config: PathBuf,
    /// Override the config's worker count
    #[arg(long)]
    workers: Option<usize>,
    /// Override the config's output directory
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let invalid = |e: String| PipelineError::Validation(e);
    match cli.command {
        Command::Ingest(a) => {
            let span = parse_span(&a.span, a.utc_offset_ms)?;
            pipeline::cmd_ingest(&IngestArgs {
                inputs: a.inputs,
                span,
                columns: ColumnMap {
                    cell_id: a.cell_column,
                    timestamp: a.time_column,
                    internet: a.internet_column,
                },
                out: a.out,
            })?;
        }
        Command::Cluster(a) => {
            pipeline::cmd_cluster(&ClusterArgs {
                bins: a.bins,
                k: a.k,
                kmax: a.kmax,
                seed: a.seed,
                restarts: a.restarts,
                max_iter: a.max_iter,
                utc_offset_ms: a.utc_offset_ms,
                out: a.out,
                sse_out: a.sse_out,
                truth: a.truth,
            })?;
        }
        Command::Train(a) => {
            let mut grid = if a.grid == "default" {
                GridSpec::default()
            } else {
                let text = std::fs::read_to_string(&a.grid).map_err(|e| invalid(format!("grid file {}: {e}", a.grid)))?;
                serde_json::from_str(&text).map_err(|e| invalid(format!("grid file {}: {e}", a.grid)))?
            };
            if let Some(l) = a.layers {
                grid.hidden_layers = l;
            }
            if let Some(u) = a.units {
                grid.units = u;
            }
            if let Some(k) = a.kinds {
                grid.cell_kinds = k;
            }
            let mut config = TrainConfig {
                epochs: a.epochs,
                batch_size: a.batch_size,
                runs: a.runs,
                base_seed: a.seed,
                record_timing: a.timing,
                ..Default::default()
            };
            config.adam.lr = a.lr;
            let bins = a.bins.unwrap_or_else(|| a.clusters.with_file_name("bins.json"));
            let only_clusters = a.only.as_deref().map(parse_cluster_list).transpose()?;
            pipeline::cmd_train(&TrainArgs {
                clusters: a.clusters,
                bins,
                grid,
                config,
                train_ratio: a.train_ratio,
                window: a.window,
                workers: a.workers,
                only_clusters,
                out_dir: a.out_dir,
            })?;
        }
        Command::Compare(a) => {
            let clusters = a.clusters.as_deref().map(parse_cluster_list).transpose()?;
            pipeline::cmd_compare(&CompareArgs {
                results: a.results,
                clusters,
                out: a.out,
                box_out: a.box_out,
            })?;
        }
        Command::Predict(a) => {
            pipeline::cmd_predict(&PredictArgs {
                model: a.model,
                bins: a.bins,
                out: a.out,
            })?;
        }
        Command::Synth(a) => {
            let spec = match &a.spec {
                Some(p) => pipeline::load_synth_spec(p)?,
                None => {
                    if a.archetypes == 0 || a.archetypes > 12 {
                        return Err(invalid("archetypes must be between 1 and 12".into()));
                    }
                    SynthSpec {
                        days: a.days,
                        ..SynthSpec::well_separated(a.archetypes, a.cells, a.noise_sd, a.seed)
                    }
                }
            };
            pipeline::cmd_synth(&SynthArgs { out_dir: a.out_dir, spec })?;
        }
        Command::Run(a) => {
            let text = std::fs::read_to_string(&a.config)
                .map_err(|e| invalid(format!("config {}: {e}", a.config.display())))?;
            let mut cfg = PipelineConfig::from_json(&text)?;
            if let Some(w) = a.workers {
                cfg.workers = w;
            }
            if let Some(d) = a.out_dir {
                cfg.output_dir = d;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            pipeline::cmd_run(&cfg)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
