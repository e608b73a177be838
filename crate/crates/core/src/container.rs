//! Binary container shared by weight, dataset and contribution-map files.
//!
//! ```text
//! <MAGIC> <version> <crc32 hex>\n
//! <JSON manifest>\n
//! <little-endian f32 blob>
//! ```
//!
//! The checksum covers every byte after the first line, so corruption of the
//! manifest is caught as well as corruption of the blob.

use std::path::Path;

use crate::error::{Error, Result};

pub(crate) fn encode(magic: &str, version: u32, manifest: &str, blob: &[f32]) -> Vec<u8> {
    debug_assert!(!manifest.contains('\n'));
    let mut body = Vec::with_capacity(manifest.len() + 1 + blob.len() * 4);
    body.extend_from_slice(manifest.as_bytes());
    body.push(b'\n');
    for v in blob {
        body.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&body);
    let mut out = format!("{magic} {version} {crc:08x}\n").into_bytes();
    out.extend_from_slice(&body);
    out
}

pub(crate) fn write(path: &Path, magic: &str, version: u32, manifest: &str, blob: &[f32]) -> Result<()> {
    std::fs::write(path, encode(magic, version, manifest, blob)).map_err(|e| Error::io(path, e))
}

/// Check magic, version and checksum; return the manifest text and blob.
pub(crate) fn decode(bytes: &[u8], path: &Path, magic: &str, version: u32) -> Result<(String, Vec<f32>)> {
    let malformed = |detail: &str| Error::MalformedHeader {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl]).map_err(|_| malformed("header is not UTF-8"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.len() != 3 || fields[0] != magic {
        return Err(malformed(&format!("expected `{magic} <version> <crc>` header")));
    }
    let found: u32 = fields[1]
        .parse()
        .map_err(|_| malformed("unparsable format version"))?;
    if found != version {
        return Err(Error::Version {
            path: path.to_path_buf(),
            expected: version,
            found,
        });
    }
    if fields[2].len() != 8 || !fields[2].bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
        return Err(malformed("checksum must be 8 lowercase hex digits"));
    }
    let expected = u32::from_str_radix(fields[2], 16).map_err(|_| malformed("checksum is not hex"))?;
    let body = &bytes[nl + 1..];
    let actual = crc32fast::hash(body);
    if actual != expected {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
            expected,
            found: actual,
        });
    }
    let nl2 = body
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| malformed("missing manifest line"))?;
    let manifest = std::str::from_utf8(&body[..nl2])
        .map_err(|_| malformed("manifest is not UTF-8"))?
        .to_string();
    let raw = &body[nl2 + 1..];
    if raw.len() % 4 != 0 {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!("blob length {} is not a multiple of 4", raw.len()),
        });
    }
    let blob = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((manifest, blob))
}

pub(crate) fn read(path: &Path, magic: &str, version: u32) -> Result<(String, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path, magic, version)
}

pub(crate) fn parse_manifest<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::MalformedHeader {
        path: path.to_path_buf(),
        detail: format!("manifest: {e}"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_errors() {
        let p = Path::new("mem");
        let bytes = encode("TEST", 3, r#"{"a":1}"#, &[1.5, -0.0, f32::MIN_POSITIVE]);
        let (m, blob) = decode(&bytes, p, "TEST", 3).unwrap();
        assert_eq!(m, r#"{"a":1}"#);
        assert_eq!(blob[1].to_bits(), (-0.0f32).to_bits());
        assert_eq!(blob[2], f32::MIN_POSITIVE);
        assert!(matches!(decode(&bytes, p, "TEST", 4), Err(Error::Version { found: 3, .. })));
        assert!(matches!(decode(&bytes, p, "OTHER", 3), Err(Error::MalformedHeader { .. })));
        let truncated = &bytes[..bytes.len() - 2];
        assert!(matches!(decode(truncated, p, "TEST", 3), Err(Error::Checksum { .. })));
    }

    #[test]
    fn every_single_bit_flip_is_detected() {
        let p = Path::new("mem");
        let bytes = encode("TEST", 1, r#"{"labels":[0,1]}"#, &[0.25, 7.0]);
        for i in 0..bytes.len() {
            for bit in 0..8 {
                let mut b = bytes.clone();
                b[i] ^= 1 << bit;
                assert!(decode(&b, p, "TEST", 1).is_err(), "byte {i} bit {bit}");
            }
        }
    }
}
