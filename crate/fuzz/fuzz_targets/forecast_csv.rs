#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| gtm_core::fuzzing::forecast_csv(data));
