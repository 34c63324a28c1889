#![no_main]

use libfuzzer_sys::fuzz_target;
use magio::pipeline::csvio::parse_imu;

fuzz_target!(|data: &[u8]| {
    if let Ok(samples) = parse_imu(data, "imu.csv") {
        assert!(samples.windows(2).all(|w| w[0].t < w[1].t));
    }
});
