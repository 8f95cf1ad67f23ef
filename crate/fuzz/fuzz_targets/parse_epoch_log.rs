//! Epoch-log CSV parser: no panics; accepted curves round-trip exactly and
//! stay strictly increasing in epoch within each curve.

#![no_main]

use libfuzzer_sys::fuzz_target;
use pairguard::ingest::{parse_epoch_log, write_epoch_log};

fuzz_target!(|data: &[u8]| {
    if let Ok(log) = parse_epoch_log(data, 1.0) {
        for pair in log.records.windows(2) {
            let same_curve = pair[0].dataset == pair[1].dataset
                && pair[0].scenario == pair[1].scenario
                && pair[0].seed == pair[1].seed
                && pair[0].arm == pair[1].arm;
            if same_curve {
                assert!(pair[0].epoch < pair[1].epoch);
            }
        }
        let mut buf = Vec::new();
        write_epoch_log(&mut buf, &log.records).expect("accepted records always serialize");
        let reparsed = parse_epoch_log(buf.as_slice(), 1.0).expect("own output always parses");
        assert_eq!(log.records, reparsed.records);
    }
});
