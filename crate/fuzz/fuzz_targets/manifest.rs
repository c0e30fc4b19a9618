#![no_main]

use chrono::NaiveDate;
use ctindex_core::ingest::{parse_manifest, write_manifest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let today = NaiveDate::from_ymd_opt(2024, 3, 1).unwrap();
    if let Ok(series) = parse_manifest(text, today) {
        let again = parse_manifest(&write_manifest(&series), today).expect("written manifest parses");
        assert_eq!(again, series);
    }
});
