#![no_main]

use libfuzzer_sys::fuzz_target;
use rbdgen::kernel::{check_races, text};

fuzz_target!(|data: &[u8]| {
    let Ok(src) = std::str::from_utf8(data) else { return };
    let Ok(program) = text::load(src) else { return };
    let dumped = text::dump(&program);
    let reloaded = text::load(&dumped).expect("dump output loads");
    assert_eq!(text::dump(&reloaded), dumped);
    let _ = check_races(&program);
});
