#![no_main]

use ctindex_core::search::parse_query;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(q) = parse_query(text) {
        let printed = q.to_string();
        assert_eq!(parse_query(&printed).expect("printed query parses"), q, "{printed}");
    }
});
