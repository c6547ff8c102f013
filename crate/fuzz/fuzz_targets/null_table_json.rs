#![no_main]

use libfuzzer_sys::fuzz_target;
use snlmm::NullTable;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(table) = NullTable::from_json_str(text) else { return };
    for alpha in [0.01, 0.05, 0.1, 0.5] {
        let _ = table.critical_value(alpha);
    }
    let _ = table.p_value(1.0);
    let _ = table.to_json_string();
});
