//! Stored-summary parser: no panics, and parse -> write -> parse is the
//! identity on whatever the parser accepts, in both table formats.

#![no_main]

use libfuzzer_sys::fuzz_target;
use pairguard::report::{parse_summary, write_summary, SummaryFormat};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(table) = parse_summary(text) {
        let rendered = write_summary(&table, SummaryFormat::Delimited)
            .expect("accepted tables always render");
        let reparsed = parse_summary(&rendered).expect("own output always parses");
        assert_eq!(table.rows, reparsed.rows);
        assert_eq!(table.config_digest, reparsed.config_digest);
        write_summary(&table, SummaryFormat::Markdown).expect("markdown never fails on accepted tables");
    }
});
