//! Shared binary container: `"POPO" | version u32 LE | header_len u32 LE |
//! UTF-8 JSON header | payload`.

use super::DataError;

pub const MAGIC: &[u8; 4] = b"POPO";
pub const FORMAT_VERSION: u32 = 1;
pub const PREAMBLE_LEN: usize = 12;

pub fn encode(header: &[u8], payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREAMBLE_LEN + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header);
    out.extend_from_slice(payload);
    out
}

/// Splits a container into its JSON header text and raw payload.
pub fn decode(bytes: &[u8]) -> Result<(&str, &[u8]), DataError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        let found = bytes.iter().take(4).copied().collect();
        return Err(DataError::BadMagic { found });
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(DataError::Truncated {
            expected: PREAMBLE_LEN,
            actual: bytes.len(),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(DataError::UnsupportedVersion(version));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let header_end = PREAMBLE_LEN + header_len;
    if bytes.len() < header_end {
        return Err(DataError::Truncated {
            expected: header_end,
            actual: bytes.len(),
        });
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE_LEN..header_end])
        .map_err(|e| DataError::Header(format!("header is not UTF-8: {e}")))?;
    Ok((header, &bytes[header_end..]))
}

pub fn f32s_to_le(values: impl IntoIterator<Item = f32>, out: &mut Vec<u8>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn le_to_f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect()
}
