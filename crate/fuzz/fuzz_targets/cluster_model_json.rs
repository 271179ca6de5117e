#![no_main]

use celltraffic::cluster::ClusterModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = ClusterModel::from_json(text) {
        let again = ClusterModel::from_json(&model.to_json()).expect("written model parses");
        assert_eq!(again.assignment, model.assignment);
        assert_eq!(model.members().iter().map(Vec::len).sum::<usize>(), model.assignment.len());
    }
});
