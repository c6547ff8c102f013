#![no_main]

use libfuzzer_sys::fuzz_target;
use snlmm::sim::StudyConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = StudyConfig::from_json_str(text) else { return };
    for c in cfg.conditions().iter().take(64) {
        let _ = c.stream_seed();
    }
    let _ = cfg.truth().theta();
});
