#![no_main]
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(clip) = regiontag::audio::decode_wav(std::io::Cursor::new(data)) {
        assert!(clip.channels().iter().all(|c| c.len() == clip.len()));
    }
});
