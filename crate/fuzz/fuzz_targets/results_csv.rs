#![no_main]

use celltraffic::train::GridResult;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(result) = GridResult::from_csv(text) {
        let again = GridResult::from_csv(&result.to_csv()).expect("written results parse");
        assert_eq!(again.runs.len(), result.runs.len());
        let _ = result.summary_json();
    }
});
