//! Confidential key-release channel.
//!
//! A sandbox authenticates to the coordinator with its bearer capability. Released
//! key material travels sealed under a per-request key derived from that capability
//! and the request nonce, so only the token holder can open it and a successful open
//! proves the response came from a party that knows the token.
//!
//! Messages are length-prefixed records: a 4-byte big-endian length followed by a
//! JSON document.

use hkdf::Hkdf;
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::Sha256;
use zeroize::Zeroizing;

use super::envelope::{self, EncryptedEnvelope};
use super::{CryptoError, SymmetricKey, KEY_LEN};
use crate::ids::{KeyId, PrincipalId};
use crate::token::BearerToken;

const INFO: &[u8] = b"seclab key-release v1";

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    #[error("frame truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("frame has {0} trailing bytes")]
    Trailing(usize),
    #[error("frame body: {0}")]
    Body(#[from] serde_json::Error),
}

pub fn encode_frame<T: Serialize>(record: &T) -> Result<Vec<u8>, FrameError> {
    let body = serde_json::to_vec(record)?;
    let mut out = Vec::with_capacity(4 + body.len());
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    Ok(out)
}

pub fn decode_frame<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, FrameError> {
    if bytes.len() < 4 {
        return Err(FrameError::Truncated { need: 4, have: bytes.len() });
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().expect("4 bytes")) as usize;
    let body = &bytes[4..];
    if body.len() < len {
        return Err(FrameError::Truncated { need: len, have: body.len() });
    }
    if body.len() > len {
        return Err(FrameError::Trailing(body.len() - len));
    }
    Ok(serde_json::from_slice(body)?)
}

fn channel_key(token: &BearerToken, request_nonce: &[u8; 16], key_id: KeyId) -> SymmetricKey {
    let hk = Hkdf::<Sha256>::new(Some(request_nonce), token.as_bytes());
    let mut okm = Zeroizing::new([0u8; KEY_LEN]);
    let mut info = INFO.to_vec();
    info.extend_from_slice(key_id.as_bytes());
    hk.expand(&info, okm.as_mut()).expect("32 bytes is a valid HKDF length");
    SymmetricKey::from_parts(key_id, PrincipalId::from("channel"), *okm)
}

/// Seals released key material for the holder of `token`.
pub fn seal_key_material(
    token: &BearerToken,
    request_nonce: &[u8; 16],
    key: &SymmetricKey,
) -> Result<Vec<u8>, CryptoError> {
    let ck = channel_key(token, request_nonce, key.key_id);
    Ok(envelope::encrypt(key.key_bytes(), &ck)?.to_bytes())
}

pub fn open_key_material(
    token: &BearerToken,
    request_nonce: &[u8; 16],
    key_id: KeyId,
    owner_id: PrincipalId,
    sealed: &[u8],
) -> Result<SymmetricKey, CryptoError> {
    let ck = channel_key(token, request_nonce, key_id);
    let env = EncryptedEnvelope::from_bytes(sealed)?;
    let plain = Zeroizing::new(envelope::decrypt(&env, &ck)?);
    let raw: [u8; KEY_LEN] = plain
        .as_slice()
        .try_into()
        .map_err(|_| CryptoError::Malformed("released key length".into()))?;
    Ok(SymmetricKey::from_parts(key_id, owner_id, raw))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sealed_key_opens_only_with_same_token_and_nonce() {
        let token = BearerToken::generate();
        let key = SymmetricKey::generate("p".into()).unwrap();
        let nonce = [9u8; 16];
        let sealed = seal_key_material(&token, &nonce, &key).unwrap();
        assert!(!sealed.windows(32).any(|w| w == key.key_bytes().as_slice()));
        let opened = open_key_material(&token, &nonce, key.key_id, "p".into(), &sealed).unwrap();
        assert_eq!(opened.key_bytes(), key.key_bytes());
        assert!(open_key_material(&BearerToken::generate(), &nonce, key.key_id, "p".into(), &sealed).is_err());
        assert!(open_key_material(&token, &[0u8; 16], key.key_id, "p".into(), &sealed).is_err());
    }

    #[test]
    fn frames_round_trip_and_reject_garbage() {
        let v = serde_json::json!({"key_id": "x", "n": 1});
        let f = encode_frame(&v).unwrap();
        assert_eq!(u32::from_be_bytes(f[..4].try_into().unwrap()) as usize, f.len() - 4);
        assert_eq!(decode_frame::<serde_json::Value>(&f).unwrap(), v);
        assert!(decode_frame::<serde_json::Value>(&f[..f.len() - 1]).is_err());
        let mut extra = f.clone();
        extra.push(b' ');
        assert!(decode_frame::<serde_json::Value>(&extra).is_err());
    }
}
