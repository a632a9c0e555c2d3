use proptest::prelude::*;
use seclab_core::crypto::envelope::{self, EncryptedEnvelope, HEADER_LEN};
use seclab_core::crypto::{CryptoError, SymmetricKey};
use seclab_core::ids::KeyId;
use sha2::{Digest, Sha256};

fn key(bytes: [u8; 32]) -> SymmetricKey {
    SymmetricKey::from_parts(KeyId::from_bytes([7; 16]), "owner".into(), bytes)
}

fn unhex<const N: usize>(s: &str) -> [u8; N] {
    hex::decode(s).unwrap().try_into().unwrap()
}

// Reference ciphertexts produced with an independent AES-256-GCM implementation
// (empty associated data).
#[test]
fn known_answer_vectors() {
    let k1: [u8; 32] = std::array::from_fn(|i| i as u8);
    let n1: [u8; 12] = std::array::from_fn(|i| i as u8);
    let e = envelope::encrypt_with_nonce(b"", &key(k1), n1);
    assert_eq!(hex::encode(&e.ciphertext_and_tag), "f4c2db1dc38805a37b92171c5d0a81cc");

    let e = envelope::encrypt_with_nonce(b"abc", &key([0xa5; 32]), [0x01; 12]);
    assert_eq!(hex::encode(&e.ciphertext_and_tag), "169b9dcea7e0ef2673b443dd4197c8629a3f23");

    let k3 = unhex::<32>("603deb1015ca71be2b73aef0857d77811f352c073b6108d72d9810a30914dff4");
    let n3 = unhex::<12>("cafebabefacedbaddecaf888");
    let pt = b"flight_id,delay_min\nAF1234,17\nLH0042,-3\n";
    let e = envelope::encrypt_with_nonce(pt, &key(k3), n3);
    assert_eq!(
        hex::encode(&e.ciphertext_and_tag),
        "c14b811787328e12f2b21e1ebb99b69f6a834ec4540a0b250300897a5a658d950559a73ba2a7360c77db6ddc87a04ed576fb89c5c37b0b43"
    );
    assert_eq!(e.plaintext_length, pt.len() as u64);
    assert_eq!(e.plaintext_digest, <[u8; 32]>::from(Sha256::digest(pt)));

    let k4: [u8; 32] = Sha256::digest(b"seclab-kat-4").into();
    assert_eq!(hex::encode(k4), "e1be07e1e195f03f3fb6de946acc6e131f41a193d78510cb631891de6a3ea7fc");
    let pt4: Vec<u8> = (0..1000u32).map(|i| (i % 251) as u8).collect();
    let e = envelope::encrypt_with_nonce(&pt4, &key(k4), unhex::<12>("78377b525757b494427f8901"));
    assert_eq!(e.ciphertext_and_tag.len(), 1016);
    assert_eq!(
        hex::encode(Sha256::digest(&e.ciphertext_and_tag)),
        "3f820ab393fdf83311e7a01d43893275e827d9aa86411b946c5c8e2058cbf872"
    );
    assert_eq!(envelope::decrypt(&e, &key(k4)).unwrap(), pt4);
}

#[test]
fn serialized_layout() {
    let k = key([3; 32]);
    let e = envelope::encrypt_with_nonce(b"hello", &k, [9; 12]);
    let bytes = e.to_bytes();
    assert_eq!(&bytes[..4], b"ICRS");
    assert_eq!(bytes[4], 1);
    assert_eq!(&bytes[5..21], k.key_id.as_bytes());
    assert_eq!(&bytes[21..33], &[9; 12]);
    assert_eq!(u64::from_be_bytes(bytes[33..41].try_into().unwrap()), 5);
    assert_eq!(&bytes[41..73], Sha256::digest(b"hello").as_slice());
    assert_eq!(bytes.len(), HEADER_LEN + 5 + 16);
}

fn arb_key() -> impl Strategy<Value = [u8; 32]> {
    prop::array::uniform32(any::<u8>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn round_trip(k in arb_key(), pt in prop::collection::vec(any::<u8>(), 0..4096)) {
        let k = key(k);
        let e = envelope::encrypt(&pt, &k).unwrap();
        let parsed = EncryptedEnvelope::from_bytes(&e.to_bytes()).unwrap();
        prop_assert_eq!(envelope::decrypt(&parsed, &k).unwrap(), pt);
    }

    #[test]
    fn any_bit_flip_is_rejected(k in arb_key(), pt in prop::collection::vec(any::<u8>(), 1..512), pos in any::<prop::sample::Index>(), bit in 0u8..8) {
        let k = key(k);
        let mut bytes = envelope::encrypt(&pt, &k).unwrap().to_bytes();
        let i = pos.index(bytes.len());
        bytes[i] ^= 1 << bit;
        let outcome = EncryptedEnvelope::from_bytes(&bytes).and_then(|e| envelope::decrypt(&e, &k));
        prop_assert!(outcome.is_err(), "flip at byte {} accepted", i);
    }

    #[test]
    fn truncation_is_rejected(k in arb_key(), pt in prop::collection::vec(any::<u8>(), 0..256), cut in 1usize..64) {
        let k = key(k);
        let bytes = envelope::encrypt(&pt, &k).unwrap().to_bytes();
        let short = &bytes[..bytes.len().saturating_sub(cut)];
        let outcome = EncryptedEnvelope::from_bytes(short).and_then(|e| envelope::decrypt(&e, &k));
        prop_assert!(outcome.is_err());
    }

    #[test]
    fn other_key_is_rejected(a in arb_key(), b in arb_key(), pt in prop::collection::vec(any::<u8>(), 0..128)) {
        prop_assume!(a != b);
        let e = envelope::encrypt(&pt, &key(a)).unwrap();
        prop_assert!(matches!(envelope::decrypt(&e, &key(b)), Err(CryptoError::IntegrityFailure)));
    }
}
