#![no_main]

use libfuzzer_sys::fuzz_target;
use rbdgen::batch::{read_csv, write_csv};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(rows) = read_csv(text) else { return };
    let mut out = Vec::new();
    write_csv(&rows, &mut out).expect("write to memory");
    let again = read_csv(std::str::from_utf8(&out).unwrap()).expect("written csv parses");
    assert_eq!(again.len(), rows.len());
    for (a, b) in again.iter().zip(&rows) {
        assert_eq!((&a.algorithm, &a.model, a.n, a.mode, a.workers, a.reps), (&b.algorithm, &b.model, b.n, b.mode, b.workers, b.reps));
    }
});
