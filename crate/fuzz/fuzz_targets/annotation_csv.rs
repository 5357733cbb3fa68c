#![no_main]
use libfuzzer_sys::fuzz_target;
use regiontag::scenesim::SceneAnnotation;

fuzz_target!(|data: &[u8]| {
    if let Ok(ann) = SceneAnnotation::read_csv(data, "fuzz") {
        let mut out = Vec::new();
        ann.write_csv(&mut out).unwrap();
        let back = SceneAnnotation::read_csv(out.as_slice(), "fuzz").unwrap();
        assert_eq!(back.frames.len(), ann.frames.len());
    }
});
