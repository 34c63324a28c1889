#![no_main]

use libfuzzer_sys::fuzz_target;
use magio::pipeline::csvio::parse_mag;

// first byte picks the array size
fuzz_target!(|data: &[u8]| {
    let Some((&n, rest)) = data.split_first() else { return };
    let n_arms = usize::from(n % 8) + 1;
    if let Ok(epochs) = parse_mag(rest, "mag.csv", n_arms) {
        assert!(epochs.iter().all(|e| e.readings.len() == n_arms));
    }
});
