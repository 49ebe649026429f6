#![no_main]

use libfuzzer_sys::fuzz_target;
use ptoda::poincare_algebra::{PolyMapPipeline, PolyT};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(p) = PolyMapPipeline::from_json(text) else { return };
    let again = PolyMapPipeline::from_json(&p.to_json()).expect("emitted pipeline re-parses");
    assert_eq!(again, p);
    // Evaluation may fail on a degree window, but must not panic.
    let _ = p.eval(&PolyT::from_i64s(&[1, 2, 1]));
});
