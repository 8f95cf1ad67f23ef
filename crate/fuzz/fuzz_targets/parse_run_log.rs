//! Run-log CSV parser: must never panic, and accepted logs must survive a
//! write/parse round trip record for record.

#![no_main]

use libfuzzer_sys::fuzz_target;
use pairguard::ingest::{parse_run_log, write_run_log};

fuzz_target!(|data: &[u8]| {
    if let Ok(log) = parse_run_log(data, 1.0) {
        let mut buf = Vec::new();
        write_run_log(&mut buf, &log.records).expect("accepted records always serialize");
        let reparsed = parse_run_log(buf.as_slice(), 1.0).expect("own output always parses");
        assert_eq!(log.records, reparsed.records);
    }
});
