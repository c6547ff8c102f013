#![no_main]

use libfuzzer_sys::fuzz_target;
use snlmm::stats::{sn_stat, SnOptions};
use snlmm::ScoreMatrix;

fuzz_target!(|data: &[u8]| {
    let Ok(s) = ScoreMatrix::from_csv_reader(data, "aux") else { return };
    if s.n() <= 256 {
        let cols: Vec<usize> = (0..s.q()).collect();
        let _ = sn_stat(&s, &cols, &SnOptions::default());
    }
});
