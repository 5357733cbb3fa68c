#![no_main]
use libfuzzer_sys::fuzz_target;
use regiontag::features::FeatureRecipe;
use regiontag::regionfeat::AngularRegion;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(r) = text.parse::<AngularRegion>() {
            assert!(r.width() > 0.0 && r.width() <= 360.0);
            assert!(r.contains(r.middle()));
        }
        let _ = text.parse::<FeatureRecipe>();
    }
});
