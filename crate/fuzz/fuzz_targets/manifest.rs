#![no_main]
use libfuzzer_sys::fuzz_target;
use regiontag::dataset::Manifest;
use std::path::Path;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = Manifest::parse(text, Path::new("/base"), "fuzz") {
            let again = Manifest::parse(&m.to_text(Path::new("/base")), Path::new("/base"), "fuzz").unwrap();
            assert_eq!(again.entries.len(), m.entries.len());
        }
    }
});
