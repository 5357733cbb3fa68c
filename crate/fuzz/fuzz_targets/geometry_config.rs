#![no_main]
use libfuzzer_sys::fuzz_target;
use regiontag::geometry::ArrayGeometry;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(g) = ArrayGeometry::from_config(text) {
            assert_eq!(ArrayGeometry::from_config(&g.to_config()).unwrap(), g);
        }
    }
});
