#![no_main]

use libfuzzer_sys::fuzz_target;
use volcheck::func::Func;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(f) = text.parse::<Func>() else { return };
    // the display form must parse back to the same function
    let again: Func = f.to_string().parse().expect("display output parses");
    for (t, x) in [(0.0, 0.0), (0.5, -1.5), (1.0, 2.0)] {
        let (a, b) = (f.eval(t, x), again.eval(t, x));
        assert!(a == b || (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
});
