#![no_main]
use apood::metrics::{read_scores_from, write_scores_to};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(rows) = read_scores_from(data) else { return };
    let Some(first) = rows.first() else { return };
    if rows.iter().all(|r| r.label == first.label) {
        let scores: Vec<f64> = rows.iter().map(|r| r.score).collect();
        let mut buf = Vec::new();
        write_scores_to(&mut buf, &scores, first.label).unwrap();
        assert_eq!(read_scores_from(buf.as_slice()).unwrap(), rows);
    }
});
