#![no_main]

use libfuzzer_sys::fuzz_target;
use snlmm::{fit_ml, ColumnMap, FitOptions, LongDataset, ModelSpec};

fuzz_target!(|data: &[u8]| {
    let map = ColumnMap {
        cluster: "g".into(),
        response: "y".into(),
        fixed: vec!["1".into(), "t".into()],
        random: vec!["1".into()],
        aux: Some("a".into()),
    };
    let Ok(ds) = LongDataset::from_csv_reader(data, &map) else { return };
    // small inputs also go through the fitter, which must not panic
    if ds.n() <= 64 {
        let opts = FitOptions { max_iter: 50, ..Default::default() };
        let _ = fit_ml(&ModelSpec::for_dataset(&ds), &ds, &opts);
    }
});
