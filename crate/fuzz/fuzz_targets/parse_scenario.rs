//! Scenario config parser: no panics on arbitrary text, and every accepted
//! file yields a scenario the simulator's own validation accepts.

#![no_main]

use libfuzzer_sys::fuzz_target;
use pairguard::simulate::parse_scenario_file;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(file) = parse_scenario_file(text) {
        file.base.validate().expect("parser only returns valid scenarios");
        assert!(!file.schemes.is_empty());
        assert!(!file.grid.k.is_empty());
        assert!(!file.grid.true_delta.is_empty());
        assert!(!file.grid.rho.is_empty());
    }
});
