#![no_main]

use ensemble_gp::model_file::{parse, render};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(model) = parse(text) {
        // A model that loads renders to text that loads to the same model.
        let again = parse(&render(&model)).expect("rendered model reparses");
        assert_eq!(render(&again), render(&model));
    }
});
