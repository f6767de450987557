#![no_main]

use fkchi::{BathFunction, MatsubaraGrid};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    // First byte picks the window, the rest is the table text.
    let Some((&n, rest)) = data.split_first() else { return };
    let Ok(grid) = MatsubaraGrid::new(2.0, 1 + usize::from(n % 16)) else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    if let Ok(bath) = BathFunction::from_table(&grid, text) {
        let again = BathFunction::from_table(&grid, &bath.to_table()).expect("written table reparses");
        assert_eq!(again, bath);
    }
});
