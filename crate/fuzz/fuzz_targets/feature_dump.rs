#![no_main]
use libfuzzer_sys::fuzz_target;
use regiontag::features::{decode_feature_dump, encode_feature_dump};

fuzz_target!(|data: &[u8]| {
    if let Ok(stack) = decode_feature_dump(data) {
        assert_eq!(decode_feature_dump(&encode_feature_dump(&stack)).unwrap(), stack);
    }
});
