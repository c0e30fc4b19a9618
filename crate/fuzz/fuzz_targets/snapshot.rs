#![no_main]

use ctindex_core::search::{decode_snapshot, encode_snapshot};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(docs) = decode_snapshot(data) {
        let refs: Vec<_> = docs.iter().collect();
        let again = decode_snapshot(&encode_snapshot(&refs)).expect("re-encoded snapshot decodes");
        assert_eq!(again, docs);
    }
});
