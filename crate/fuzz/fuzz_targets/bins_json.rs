#![no_main]

use celltraffic::ingest::BinnedSet;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(set) = BinnedSet::from_json(text) {
        let again = BinnedSet::from_json(&set.to_json()).expect("written document parses");
        assert_eq!(again, set);
        let _ = set.to_csv();
    }
});
