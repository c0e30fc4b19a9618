#![no_main]

use chrono::NaiveDate;
use ctindex_core::scheduler::TaskMessage;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let today = NaiveDate::from_ymd_opt(2024, 3, 1).unwrap();
    if let Ok(msg) = TaskMessage::decode(data, today) {
        assert_eq!(TaskMessage::decode(&msg.encode(), today).expect("encoded message decodes"), msg);
    }
});
