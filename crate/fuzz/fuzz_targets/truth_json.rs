#![no_main]

use libfuzzer_sys::fuzz_target;
use snlmm::sim::{asymptotic_se, TruthConfig};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(truth) = TruthConfig::from_json_str(text) else { return };
    let _ = asymptotic_se(&truth.theta(), 4);
});
