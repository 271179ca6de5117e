#![no_main]

use celltraffic::synth::parse_truth_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_truth_csv(text);
});
