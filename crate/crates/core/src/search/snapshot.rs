//! Snapshot container:
//!
//! ```text
//! magic "CTIXSNAP" | version u32 LE | payload length u64 LE | payload | sha256(all preceding bytes)
//! ```
//!
//! The payload is the JSON array of documents ordered by series uid.

use sha2::{Digest, Sha256};

use super::{IndexDocument, SearchError};

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"CTIXSNAP";
pub const SNAPSHOT_VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 8;
const CHECKSUM_LEN: usize = 32;

pub fn encode_snapshot(docs: &[&IndexDocument]) -> Vec<u8> {
    let payload = serde_json::to_vec(docs).expect("documents serialize");
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CHECKSUM_LEN);
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<Vec<IndexDocument>, SearchError> {
    let corrupt = |m: String| Err(SearchError::CorruptSnapshot(m));
    if bytes.len() < HEADER_LEN + CHECKSUM_LEN {
        return corrupt(format!("{} bytes is shorter than the header", bytes.len()));
    }
    if &bytes[..8] != SNAPSHOT_MAGIC {
        return corrupt("bad magic".into());
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != SNAPSHOT_VERSION {
        return corrupt(format!("unsupported version {version}"));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let expected = (HEADER_LEN + CHECKSUM_LEN) as u64;
    if len.checked_add(expected) != Some(bytes.len() as u64) {
        return corrupt(format!("payload length {len} does not match file size {}", bytes.len()));
    }
    let body_end = bytes.len() - CHECKSUM_LEN;
    if Sha256::digest(&bytes[..body_end]).as_slice() != &bytes[body_end..] {
        return corrupt("checksum mismatch".into());
    }
    serde_json::from_slice(&bytes[HEADER_LEN..body_end]).or_else(|e| corrupt(format!("payload: {e}")))
}
