#![no_main]

use celltraffic::pipeline::{parse_cluster_list, parse_span};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(span) = parse_span(text, 3_600_000) {
        assert!(span.end > span.start);
        assert_eq!(span.bins() as i64 * 30 * 60 * 1000, span.end - span.start);
    }
    let _ = parse_cluster_list(text);
});
