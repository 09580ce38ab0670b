use sha2::{Digest, Sha256};

/// First 16 hex characters of the SHA-256 of `s`.
pub fn digest16(s: &str) -> String {
    let hash = Sha256::digest(s.as_bytes());
    hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_vector() {
        // sha256("abc") = ba7816bf8f01cfea...
        assert_eq!(digest16("abc"), "ba7816bf8f01cfea");
        assert_eq!(digest16("").len(), 16);
    }
}
