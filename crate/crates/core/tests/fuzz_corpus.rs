//! The checked-in fuzz seeds must stay accepted by their parsers.

use std::path::PathBuf;

use celltraffic::cluster::ClusterModel;
use celltraffic::ingest::{is_header_line, parse_cdr_line, BinnedSet, ColumnMap};
use celltraffic::pipeline::{parse_cluster_list, parse_span, PipelineConfig};
use celltraffic::rnn::TrainedModel;
use celltraffic::synth::parse_truth_csv;
use celltraffic::train::GridResult;

fn seeds(target: &str) -> Vec<(PathBuf, String)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| {
            let p = e.unwrap().path();
            let text = std::fs::read_to_string(&p).unwrap();
            (p, text)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

#[test]
fn document_seeds_parse() {
    for (p, t) in seeds("bins_json") {
        BinnedSet::from_json(&t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, t) in seeds("cluster_model_json") {
        ClusterModel::from_json(&t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, t) in seeds("trained_model_json") {
        TrainedModel::from_json(&t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, t) in seeds("results_csv") {
        GridResult::from_csv(&t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, t) in seeds("pipeline_config") {
        PipelineConfig::from_json(&t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, t) in seeds("truth_csv") {
        parse_truth_csv(&t).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn line_seeds_parse() {
    for (p, t) in seeds("parse_cdr_line").into_iter().filter(|(_, t)| !is_header_line(t)) {
        parse_cdr_line(&t, &ColumnMap::default()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    for (p, t) in seeds("span") {
        assert!(parse_span(&t, 3_600_000).is_ok() || parse_cluster_list(&t).is_ok(), "{}", p.display());
    }
}
