#![no_main]

use chrono::NaiveDate;
use ctindex_core::ingest::{parse_statistics, Lane, Modality, SeriesDescriptor};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let expected = SeriesDescriptor {
        series_uid: "s1".into(),
        study_uid: "st".into(),
        patient_pseudonym: "p".into(),
        acquisition_date: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
        modality: Modality::Ct,
        body_region_hint: None,
        source: Lane::Daily,
    };
    if let Ok(stats) = parse_statistics(data, &expected) {
        let again = parse_statistics(&stats.to_json(), &expected).expect("re-encoded statistics parse");
        assert_eq!(again, stats);
    }
});
