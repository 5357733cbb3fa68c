#![no_main]
use libfuzzer_sys::fuzz_target;
use regiontag::model::checkpoint;
use regiontag::train::TrainedModel;

fuzz_target!(|data: &[u8]| {
    let _ = checkpoint::decode(data);
    let _ = TrainedModel::from_bytes(data);
});
