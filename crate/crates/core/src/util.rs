use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use sha2::{Digest, Sha256};

pub(crate) fn encode_f64s(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

#[derive(Debug, PartialEq)]
pub(crate) enum DecodeError {
    Base64(String),
    Length(usize),
}

impl std::fmt::Display for DecodeError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DecodeError::Base64(e) => write!(f, "invalid base64: {e}"),
            DecodeError::Length(n) => write!(f, "decoded {n} bytes, not a multiple of 8"),
        }
    }
}

pub(crate) fn decode_f64s(text: &str) -> Result<Vec<f64>, DecodeError> {
    let bytes = STANDARD.decode(text).map_err(|e| DecodeError::Base64(e.to_string()))?;
    if bytes.len() % 8 != 0 {
        return Err(DecodeError::Length(bytes.len()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect())
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Digest of the little-endian bytes of a float slice sequence.
pub(crate) fn digest_f64_slices<'a>(slices: impl IntoIterator<Item = &'a [f64]>) -> String {
    let mut h = Sha256::new();
    for s in slices {
        for v in s {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn base64_round_trip_is_bit_exact() {
        let v = vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300, -7.25];
        let back = decode_f64s(&encode_f64s(&v)).unwrap();
        assert!(v.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(matches!(decode_f64s("@@@"), Err(DecodeError::Base64(_))));
        assert!(matches!(decode_f64s("AAAA"), Err(DecodeError::Length(3))));
    }
}
