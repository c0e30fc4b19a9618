#![no_main]

use ctindex_core::fhir::{parse_bundle, serialize_bundle};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(bundle) = parse_bundle(data) {
        let again = parse_bundle(&serialize_bundle(&bundle)).expect("re-serialized bundle parses");
        assert_eq!(again, bundle);
    }
});
