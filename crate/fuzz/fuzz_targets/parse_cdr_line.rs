#![no_main]

use celltraffic::ingest::{is_header_line, parse_cdr_line, ColumnMap, ParsedLine};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(line) = std::str::from_utf8(data) else { return };
    let _ = is_header_line(line);
    if let Ok(ParsedLine::Record(r)) = parse_cdr_line(line, &ColumnMap::default()) {
        assert!(r.cell_id >= 1);
        assert!(r.internet_activity.is_finite() && r.internet_activity >= 0.0);
    }
});
