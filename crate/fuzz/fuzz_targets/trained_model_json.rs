#![no_main]

use celltraffic::rnn::TrainedModel;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = TrainedModel::from_json(text) {
        let net = model.network();
        // a validated network must accept a window of its own length
        if net.param_count() < 100_000 {
            let _ = net.predict(&vec![0.5; net.window]);
        }
        let again = TrainedModel::from_json(&model.to_json()).expect("written model parses");
        assert_eq!(again.layers.len(), model.layers.len());
    }
});
