#![no_main]

use ctindex_core::ingest::CatalogRegistry;
use ctindex_core::termmap::parse_mapping;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let _ = parse_mapping(text, &CatalogRegistry::default());
});
