//! Content addressing for cache keys and ledger records.

use ndarray::ArrayView3;
use sha2::{Digest, Sha256};

/// Hex sha256 of raw bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of a text payload, domain-separated from image hashes.
pub fn text_content_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(b"text\x00");
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

/// Content hash of a pixel array: dimensions plus the exact f64 bit
/// patterns in standard (channel, row, column) order.
pub fn pixels_content_hash(pixels: &ArrayView3<'_, f64>) -> String {
    let (c, h, w) = pixels.dim();
    let mut hasher = Sha256::new();
    hasher.update(b"pixels\x00");
    hasher.update((c as u64).to_le_bytes());
    hasher.update((h as u64).to_le_bytes());
    hasher.update((w as u64).to_le_bytes());
    for &v in pixels.iter() {
        hasher.update(v.to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

/// Canonical hash of any JSON-serializable value via its compact JSON
/// encoding. Struct fields serialize in declaration order, so equal values
/// hash equally.
pub fn json_content_hash<T: serde::Serialize>(value: &T) -> Result<String, serde_json::Error> {
    Ok(sha256_hex(serde_json::to_string(value)?.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn text_and_pixel_domains_do_not_collide() {
        assert_ne!(text_content_hash(""), sha256_hex(b""));
        let empty = Array3::<f64>::zeros((1, 0, 0));
        assert_ne!(pixels_content_hash(&empty.view()), text_content_hash(""));
    }

    #[test]
    fn pixel_hash_is_sensitive_to_shape_and_values() {
        let a = Array3::<f64>::zeros((1, 2, 3));
        let b = Array3::<f64>::zeros((1, 3, 2));
        assert_ne!(pixels_content_hash(&a.view()), pixels_content_hash(&b.view()));
        let mut c = a.clone();
        c[(0, 1, 1)] = 1e-300;
        assert_ne!(pixels_content_hash(&a.view()), pixels_content_hash(&c.view()));
        assert_eq!(pixels_content_hash(&a.view()), pixels_content_hash(&a.clone().view()));
    }

    #[test]
    fn known_sha256_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
