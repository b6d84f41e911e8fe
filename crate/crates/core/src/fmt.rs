//! Text formatting shared by every output format.

use sha2::{Digest, Sha256};

/// Format a float with 17 significant digits (scientific notation).
///
/// The result parses back to the identical `f64` and is a valid JSON number.
/// Non-finite values are written as `inf`, `-inf` or `nan`, which only the
/// CSV writers ever see.
pub fn f64_17(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else if x.is_nan() {
        "nan".to_string()
    } else if x > 0.0 {
        "inf".to_string()
    } else {
        "-inf".to_string()
    }
}

/// JSON value for a float that may be infinite (`null` for non-finite).
pub fn json_f64(x: f64) -> String {
    if x.is_finite() {
        f64_17(x)
    } else {
        "null".to_string()
    }
}

/// First 16 hex digits of the SHA-256 of `text`.
pub fn short_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for &x in &[0.1, -2.5e-300, 1.0 / 3.0, 123456.789, 0.0, -0.0] {
            let s = f64_17(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17, "{s}");
        }
    }

    #[test]
    fn json_numbers_parse() {
        let v: f64 = serde_json::from_str(&f64_17(-1.25e-7)).unwrap();
        assert_eq!(v, -1.25e-7);
        assert_eq!(json_f64(f64::INFINITY), "null");
    }

    #[test]
    fn hash_is_stable() {
        assert_eq!(short_hash("abc"), "ba7816bf8f01cfea");
    }
}
