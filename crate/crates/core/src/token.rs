//! 256-bit bearer capabilities.

use std::fmt;
use std::str::FromStr;

use rand::rngs::OsRng;
use rand::RngCore;
use sha2::{Digest, Sha256};
use subtle::ConstantTimeEq;
use zeroize::{Zeroize, ZeroizeOnDrop};

pub const TOKEN_LEN: usize = 32;

/// Random bearer capability. Comparison is constant time; `Debug` never prints the bytes.
#[derive(Clone, Zeroize, ZeroizeOnDrop)]
pub struct BearerToken([u8; TOKEN_LEN]);

impl BearerToken {
    pub fn generate() -> Self {
        let mut bytes = [0u8; TOKEN_LEN];
        OsRng.fill_bytes(&mut bytes);
        Self(bytes)
    }

    pub fn from_bytes(bytes: [u8; TOKEN_LEN]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; TOKEN_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// SHA-256 of the token, suitable for persisting a verifier.
    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.0).into()
    }

    pub fn matches_digest(&self, digest: &[u8; 32]) -> bool {
        self.digest().ct_eq(digest).into()
    }
}

impl PartialEq for BearerToken {
    fn eq(&self, other: &Self) -> bool {
        self.0.ct_eq(&other.0).into()
    }
}

impl Eq for BearerToken {}

impl fmt::Debug for BearerToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("BearerToken(..)")
    }
}

#[derive(Debug, thiserror::Error)]
#[error("malformed bearer token")]
pub struct MalformedToken;

impl FromStr for BearerToken {
    type Err = MalformedToken;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut bytes = [0u8; TOKEN_LEN];
        hex::decode_to_slice(s.trim(), &mut bytes).map_err(|_| MalformedToken)?;
        Ok(Self(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hex_round_trip_and_digest() {
        let t = BearerToken::generate();
        let back: BearerToken = t.to_hex().parse().unwrap();
        assert_eq!(t, back);
        assert!(back.matches_digest(&t.digest()));
        assert!(!BearerToken::generate().matches_digest(&t.digest()));
        assert!("abcd".parse::<BearerToken>().is_err());
        assert_eq!(format!("{t:?}"), "BearerToken(..)");
    }
}
