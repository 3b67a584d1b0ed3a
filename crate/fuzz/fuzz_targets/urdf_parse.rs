#![no_main]

use libfuzzer_sys::fuzz_target;
use rbdgen::urdf::{parse_urdf, to_urdf};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(model) = parse_urdf(text) else { return };
    // anything accepted must survive a write/parse cycle
    let again = parse_urdf(&to_urdf(&model)).expect("re-parse of written model");
    assert_eq!(again.parent, model.parent);
    assert_eq!(again.n_dof(), model.n_dof());
});
