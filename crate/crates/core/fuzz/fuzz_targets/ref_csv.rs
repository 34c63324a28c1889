#![no_main]

use libfuzzer_sys::fuzz_target;
use magio::pipeline::csvio::parse_trajectory;

fuzz_target!(|data: &[u8]| {
    let _ = parse_trajectory(data, "ref.csv");
});
