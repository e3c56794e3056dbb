//! Keys and the three wrappers used by the protocol: long-term signatures,
//! ephemeral signatures and confidentiality seals.
//!
//! Two schemes sit behind one contract:
//!
//! * [`Scheme::Real`]: Ed25519 signatures; sealing is X25519 key agreement
//!   with an ephemeral sender key, HKDF-SHA256 and ChaCha20-Poly1305.
//! * [`Scheme::Marker`]: a transparent test backend. Signatures are
//!   unkeyed hashes and sealed payloads sit in the clear between a
//!   recognizable header and an integrity tag, so tests can see which
//!   fields were placed inside which sealed region. It provides no
//!   security at all.

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signature, Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use sha2::{Digest, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

use crate::codec::{
    canonical_decode, canonical_encode, Canonical, Decode, DecodeError, Encode, Reader, Writer,
};
use crate::tags;
use crate::token::Token;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Real,
    Marker,
}

impl Scheme {
    pub fn id(self) -> u8 {
        match self {
            Scheme::Real => 0x01,
            Scheme::Marker => 0x7f,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0x01 => Some(Scheme::Real),
            0x7f => Some(Scheme::Marker),
            _ => None,
        }
    }

    fn public_len(self) -> usize {
        match self {
            Scheme::Real => 64,
            Scheme::Marker => 32,
        }
    }

    fn private_len(self) -> usize {
        match self {
            Scheme::Real => 64,
            Scheme::Marker => 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("key scheme mismatch")]
    SchemeMismatch,
    #[error("signature does not verify")]
    BadSignature,
    #[error("sealed blob cannot be opened with this key")]
    DecryptFailure,
    #[error("malformed: {0}")]
    Malformed(#[from] DecodeError),
}

#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey {
    scheme: Scheme,
    bytes: Vec<u8>,
}

impl PublicKey {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Short identifier of the key, stable across schemes.
    pub fn fingerprint(&self) -> [u8; 8] {
        fingerprint(&self.bytes)
    }
}

impl std::fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "PublicKey({:?}, {})", self.scheme, hex(&self.fingerprint()))
    }
}

fn fingerprint(public: &[u8]) -> [u8; 8] {
    let digest = Sha256::digest(public);
    digest[..8].try_into().expect("8 bytes")
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    scheme: Scheme,
    public: Vec<u8>,
    private: Vec<u8>,
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair")
            .field("scheme", &self.scheme)
            .field("public", &hex(&fingerprint(&self.public)))
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(scheme: Scheme, rng: &mut R) -> Self {
        match scheme {
            Scheme::Real => {
                let mut seed = [0u8; 32];
                rng.fill_bytes(&mut seed);
                let mut x = [0u8; 32];
                rng.fill_bytes(&mut x);
                let signing = SigningKey::from_bytes(&seed);
                let x_public = XPublic::from(&StaticSecret::from(x));
                let mut public = signing.verifying_key().to_bytes().to_vec();
                public.extend_from_slice(x_public.as_bytes());
                let mut private = seed.to_vec();
                private.extend_from_slice(&x);
                Self {
                    scheme,
                    public,
                    private,
                }
            }
            Scheme::Marker => {
                let mut private = [0u8; 32];
                rng.fill_bytes(&mut private);
                Self {
                    scheme,
                    public: marker::public_from_private(&private).to_vec(),
                    private: private.to_vec(),
                }
            }
        }
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey {
            scheme: self.scheme,
            bytes: self.public.clone(),
        }
    }

    pub fn matches(&self, key: &PublicKey) -> bool {
        self.scheme == key.scheme && self.public == key.bytes
    }
}

/// A pseudonymous key pair held by a user. It has its own key types so it
/// cannot be handed to any long-term registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EphemeralKeyPair(KeyPair);

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EphemeralPublicKey(PublicKey);

impl EphemeralKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(scheme: Scheme, rng: &mut R) -> Self {
        Self(KeyPair::generate(scheme, rng))
    }

    pub fn public_key(&self) -> EphemeralPublicKey {
        EphemeralPublicKey(self.0.public_key())
    }

    pub fn key_pair(&self) -> &KeyPair {
        &self.0
    }
}

impl From<PublicKey> for EphemeralPublicKey {
    fn from(key: PublicKey) -> Self {
        Self(key)
    }
}

impl EphemeralPublicKey {
    pub fn key(&self) -> &PublicKey {
        &self.0
    }
}

/// The payload together with a signature over exactly those bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedBlob {
    pub payload: Vec<u8>,
    pub signature: Vec<u8>,
    pub signer_hint: Option<Token>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedBlob {
    pub ciphertext: Vec<u8>,
    pub recipient_hint: Option<Token>,
}

pub fn sign(key: &KeyPair, payload: Vec<u8>, signer_hint: Option<Token>) -> SignedBlob {
    let signature = match key.scheme {
        Scheme::Real => {
            let seed: [u8; 32] = key.private[..32].try_into().expect("seed length");
            let sig = SigningKey::from_bytes(&seed).sign(&payload);
            prefixed(Scheme::Real, &sig.to_bytes())
        }
        Scheme::Marker => prefixed(Scheme::Marker, &marker::signature(&key.public, &payload)),
    };
    SignedBlob {
        payload,
        signature,
        signer_hint,
    }
}

pub fn verify(key: &PublicKey, blob: &SignedBlob) -> Result<(), CryptoError> {
    let (scheme, sig) = split_scheme(&blob.signature)?;
    if scheme != key.scheme {
        return Err(CryptoError::SchemeMismatch);
    }
    match scheme {
        Scheme::Real => {
            let ed: [u8; 32] = key.bytes[..32].try_into().expect("key length");
            let verifying = VerifyingKey::from_bytes(&ed).map_err(|_| CryptoError::BadSignature)?;
            let sig: [u8; 64] = sig.try_into().map_err(|_| CryptoError::BadSignature)?;
            verifying
                .verify_strict(&blob.payload, &Signature::from_bytes(&sig))
                .map_err(|_| CryptoError::BadSignature)
        }
        Scheme::Marker => {
            if sig == marker::signature(&key.bytes, &blob.payload) {
                Ok(())
            } else {
                Err(CryptoError::BadSignature)
            }
        }
    }
}

const SEAL_INFO: &[u8] = b"incognito/seal/v1";

/// Encrypt `plaintext` so that only the holder of the matching private key
/// can read it. Randomized: sealing the same bytes twice gives different
/// ciphertexts.
pub fn seal<R: RngCore + CryptoRng>(
    recipient: &PublicKey,
    plaintext: &[u8],
    recipient_hint: Option<Token>,
    rng: &mut R,
) -> SealedBlob {
    let ciphertext = match recipient.scheme {
        Scheme::Real => {
            let mut eph = [0u8; 32];
            rng.fill_bytes(&mut eph);
            let eph = StaticSecret::from(eph);
            let eph_public = XPublic::from(&eph);
            let recipient_x = x_public(&recipient.bytes);
            let shared = eph.diffie_hellman(&recipient_x);
            let cipher = seal_cipher(shared.as_bytes(), eph_public.as_bytes(), recipient_x.as_bytes());
            let body = cipher
                .encrypt(&Nonce::default(), plaintext)
                .expect("chacha20poly1305 encryption");
            let mut out = prefixed(Scheme::Real, eph_public.as_bytes());
            out.extend_from_slice(&body);
            out
        }
        Scheme::Marker => {
            let mut salt = [0u8; 16];
            rng.fill_bytes(&mut salt);
            marker::seal(&recipient.bytes, &salt, plaintext)
        }
    };
    SealedBlob {
        ciphertext,
        recipient_hint,
    }
}

pub fn open(key: &KeyPair, blob: &SealedBlob) -> Result<Vec<u8>, CryptoError> {
    let (scheme, body) = split_scheme(&blob.ciphertext)?;
    if scheme != key.scheme {
        return Err(CryptoError::SchemeMismatch);
    }
    match scheme {
        Scheme::Real => {
            if body.len() < 32 + 16 {
                return Err(CryptoError::DecryptFailure);
            }
            let (eph_public, body) = body.split_at(32);
            let eph_public: [u8; 32] = eph_public.try_into().expect("32 bytes");
            let secret: [u8; 32] = key.private[32..].try_into().expect("x25519 secret");
            let secret = StaticSecret::from(secret);
            let shared = secret.diffie_hellman(&XPublic::from(eph_public));
            if !shared.was_contributory() {
                return Err(CryptoError::DecryptFailure);
            }
            let cipher = seal_cipher(shared.as_bytes(), &eph_public, &key.public[32..]);
            cipher
                .decrypt(&Nonce::default(), body)
                .map_err(|_| CryptoError::DecryptFailure)
        }
        Scheme::Marker => marker::open(&key.public, &blob.ciphertext),
    }
}

fn x_public(public: &[u8]) -> XPublic {
    let x: [u8; 32] = public[32..64].try_into().expect("x25519 public");
    XPublic::from(x)
}

// A fresh ephemeral sender key per message makes the derived key unique,
// so a fixed nonce is safe.
fn seal_cipher(shared: &[u8], eph_public: &[u8], recipient: &[u8]) -> ChaCha20Poly1305 {
    let mut info = SEAL_INFO.to_vec();
    info.extend_from_slice(eph_public);
    info.extend_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(None, shared);
    let mut okm = [0u8; 32];
    hk.expand(&info, &mut okm).expect("32-byte okm");
    ChaCha20Poly1305::new(Key::from_slice(&okm))
}

fn prefixed(scheme: Scheme, body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 1);
    out.push(scheme.id());
    out.extend_from_slice(body);
    out
}

fn split_scheme(bytes: &[u8]) -> Result<(Scheme, &[u8]), CryptoError> {
    let (&id, rest) = bytes
        .split_first()
        .ok_or(CryptoError::Malformed(DecodeError::Invalid("empty crypto blob")))?;
    let scheme = Scheme::from_id(id).ok_or(CryptoError::SchemeMismatch)?;
    Ok((scheme, rest))
}

/// Sign the canonical encoding of `value`.
pub fn sign_value<T: Canonical>(key: &KeyPair, value: &T, hint: Option<Token>) -> SignedBlob {
    sign(key, canonical_encode(value), hint)
}

/// Verify, then decode the payload.
pub fn verify_value<T: Canonical>(key: &PublicKey, blob: &SignedBlob) -> Result<T, CryptoError> {
    verify(key, blob)?;
    Ok(canonical_decode(&blob.payload)?)
}

/// Decode the payload without checking the signature. Used where the
/// verifying key is only learned from the payload itself.
pub fn peek_value<T: Canonical>(blob: &SignedBlob) -> Result<T, DecodeError> {
    canonical_decode(&blob.payload)
}

pub fn seal_value<T: Canonical, R: RngCore + CryptoRng>(
    recipient: &PublicKey,
    value: &T,
    hint: Option<Token>,
    rng: &mut R,
) -> SealedBlob {
    seal(recipient, &canonical_encode(value), hint, rng)
}

pub fn open_value<T: Canonical>(key: &KeyPair, blob: &SealedBlob) -> Result<T, CryptoError> {
    let bytes = open(key, blob)?;
    Ok(canonical_decode(&bytes)?)
}

fn decode_scheme(r: &mut Reader<'_>) -> Result<Scheme, DecodeError> {
    let id = r.u8()?;
    Scheme::from_id(id).ok_or(DecodeError::BadDiscriminant {
        value: id,
        name: "Scheme",
    })
}

fn decode_public(r: &mut Reader<'_>) -> Result<PublicKey, DecodeError> {
    let scheme = decode_scheme(r)?;
    let bytes = r.bytes()?;
    if bytes.len() != scheme.public_len() {
        return Err(DecodeError::Invalid("public key length"));
    }
    Ok(PublicKey { scheme, bytes })
}

fn encode_public(k: &PublicKey, w: &mut Writer) {
    w.u8(k.scheme.id());
    w.bytes(&k.bytes);
}

impl Encode for PublicKey {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::PUBLIC_KEY);
        encode_public(self, w);
    }
}

impl Decode for PublicKey {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::PUBLIC_KEY, "PublicKey")?;
        decode_public(r)
    }
}

impl Canonical for PublicKey {
    const TAG: u8 = tags::PUBLIC_KEY;
    const NAME: &'static str = "PublicKey";
}

impl Encode for EphemeralPublicKey {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::EPHEMERAL_PUBLIC_KEY);
        encode_public(&self.0, w);
    }
}

impl Decode for EphemeralPublicKey {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::EPHEMERAL_PUBLIC_KEY, "EphemeralPublicKey")?;
        decode_public(r).map(EphemeralPublicKey)
    }
}

impl Canonical for EphemeralPublicKey {
    const TAG: u8 = tags::EPHEMERAL_PUBLIC_KEY;
    const NAME: &'static str = "EphemeralPublicKey";
}

fn encode_pair(k: &KeyPair, w: &mut Writer) {
    w.u8(k.scheme.id());
    w.bytes(&k.public);
    w.bytes(&k.private);
}

fn decode_pair(r: &mut Reader<'_>) -> Result<KeyPair, DecodeError> {
    let scheme = decode_scheme(r)?;
    let public = r.bytes()?;
    let private = r.bytes()?;
    if public.len() != scheme.public_len() || private.len() != scheme.private_len() {
        return Err(DecodeError::Invalid("key pair length"));
    }
    Ok(KeyPair {
        scheme,
        public,
        private,
    })
}

impl Encode for KeyPair {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::KEY_PAIR);
        encode_pair(self, w);
    }
}

impl Decode for KeyPair {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::KEY_PAIR, "KeyPair")?;
        decode_pair(r)
    }
}

impl Canonical for KeyPair {
    const TAG: u8 = tags::KEY_PAIR;
    const NAME: &'static str = "KeyPair";
}

impl Encode for EphemeralKeyPair {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::EPHEMERAL_KEY_PAIR);
        encode_pair(&self.0, w);
    }
}

impl Decode for EphemeralKeyPair {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::EPHEMERAL_KEY_PAIR, "EphemeralKeyPair")?;
        decode_pair(r).map(EphemeralKeyPair)
    }
}

impl Canonical for EphemeralKeyPair {
    const TAG: u8 = tags::EPHEMERAL_KEY_PAIR;
    const NAME: &'static str = "EphemeralKeyPair";
}

impl Encode for SignedBlob {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::SIGNED_BLOB);
        w.bytes(&self.payload);
        w.bytes(&self.signature);
        w.put(&self.signer_hint);
    }
}

impl Decode for SignedBlob {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::SIGNED_BLOB, "SignedBlob")?;
        Ok(Self {
            payload: r.bytes()?,
            signature: r.bytes()?,
            signer_hint: r.get()?,
        })
    }
}

impl Canonical for SignedBlob {
    const TAG: u8 = tags::SIGNED_BLOB;
    const NAME: &'static str = "SignedBlob";
}

impl Encode for SealedBlob {
    fn encode(&self, w: &mut Writer) {
        w.u8(tags::SEALED_BLOB);
        w.bytes(&self.ciphertext);
        w.put(&self.recipient_hint);
    }
}

impl Decode for SealedBlob {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag(tags::SEALED_BLOB, "SealedBlob")?;
        Ok(Self {
            ciphertext: r.bytes()?,
            recipient_hint: r.get()?,
        })
    }
}

impl Canonical for SealedBlob {
    const TAG: u8 = tags::SEALED_BLOB;
    const NAME: &'static str = "SealedBlob";
}

/// The transparent marker backend and a scanner for the sealed regions it
/// leaves in a byte string.
pub mod marker {
    use super::*;

    pub const MAGIC: &[u8; 5] = b"\x7fMARK";
    const HEADER: usize = MAGIC.len() + 8 + 16 + 4;
    const TAG_LEN: usize = 16;

    pub(super) fn public_from_private(private: &[u8]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(b"incognito/marker/public");
        h.update(private);
        h.finalize().into()
    }

    pub(super) fn signature(public: &[u8], payload: &[u8]) -> Vec<u8> {
        let mut h = Sha256::new();
        h.update(b"incognito/marker/signature");
        h.update(public);
        h.update(payload);
        h.finalize().to_vec()
    }

    fn tag(public: &[u8], salt: &[u8], payload: &[u8]) -> [u8; TAG_LEN] {
        let mut h = Sha256::new();
        h.update(b"incognito/marker/tag");
        h.update(public);
        h.update(salt);
        h.update(payload);
        h.finalize()[..TAG_LEN].try_into().expect("tag length")
    }

    // layout: MAGIC | fingerprint(8) | salt(16) | len(u32 BE) | payload | tag(16)
    pub(super) fn seal(public: &[u8], salt: &[u8; 16], payload: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + payload.len() + TAG_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&fingerprint(public));
        out.extend_from_slice(salt);
        out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        out.extend_from_slice(payload);
        out.extend_from_slice(&tag(public, salt, payload));
        out
    }

    pub(super) fn open(public: &[u8], ct: &[u8]) -> Result<Vec<u8>, CryptoError> {
        let region = parse_at(ct, 0).ok_or(CryptoError::DecryptFailure)?;
        if region.end + TAG_LEN != ct.len() || region.recipient != fingerprint(public) {
            return Err(CryptoError::DecryptFailure);
        }
        let salt = &ct[MAGIC.len() + 8..MAGIC.len() + 24];
        let payload = &ct[region.start..region.end];
        if ct[region.end..] != tag(public, salt, payload) {
            return Err(CryptoError::DecryptFailure);
        }
        Ok(payload.to_vec())
    }

    /// A sealed payload located inside a larger byte string.
    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub struct Region {
        /// First payload byte.
        pub start: usize,
        /// One past the last payload byte.
        pub end: usize,
        /// Fingerprint of the recipient's public key.
        pub recipient: [u8; 8],
    }

    impl Region {
        pub fn contains(&self, start: usize, len: usize) -> bool {
            self.start <= start && start + len <= self.end
        }
    }

    fn parse_at(bytes: &[u8], at: usize) -> Option<Region> {
        let header = bytes.get(at..at + HEADER)?;
        if &header[..MAGIC.len()] != MAGIC {
            return None;
        }
        let recipient: [u8; 8] = header[MAGIC.len()..MAGIC.len() + 8].try_into().ok()?;
        let len = u32::from_be_bytes(header[HEADER - 4..].try_into().ok()?) as usize;
        let start = at + HEADER;
        let end = start.checked_add(len)?;
        if end + TAG_LEN > bytes.len() {
            return None;
        }
        Some(Region {
            start,
            end,
            recipient,
        })
    }

    /// Every marker-sealed region in `bytes`, at any nesting depth.
    pub fn regions(bytes: &[u8]) -> Vec<Region> {
        (0..bytes.len())
            .filter(|&i| bytes[i] == MAGIC[0])
            .filter_map(|i| parse_at(bytes, i))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::BTreeSet;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn schemes() -> [Scheme; 2] {
        [Scheme::Real, Scheme::Marker]
    }

    #[test]
    fn sign_verify_roundtrip() {
        for scheme in schemes() {
            let k = KeyPair::generate(scheme, &mut rng(1));
            let blob = sign(&k, b"hello".to_vec(), None);
            assert_eq!(verify(&k.public_key(), &blob), Ok(()));
        }
    }

    #[test]
    fn flipped_payload_bit_rejected() {
        for scheme in schemes() {
            let k = KeyPair::generate(scheme, &mut rng(1));
            let mut blob = sign(&k, b"hello".to_vec(), None);
            blob.payload[0] ^= 1;
            assert_eq!(verify(&k.public_key(), &blob), Err(CryptoError::BadSignature));
        }
    }

    #[test]
    fn unrelated_key_rejected() {
        for scheme in schemes() {
            let k = KeyPair::generate(scheme, &mut rng(1));
            let other = KeyPair::generate(scheme, &mut rng(2));
            let blob = sign(&k, b"hello".to_vec(), None);
            assert_eq!(verify(&other.public_key(), &blob), Err(CryptoError::BadSignature));
        }
    }

    #[test]
    fn scheme_mismatch_detected() {
        let real = KeyPair::generate(Scheme::Real, &mut rng(1));
        let marker = KeyPair::generate(Scheme::Marker, &mut rng(1));
        let blob = sign(&marker, b"x".to_vec(), None);
        assert_eq!(verify(&real.public_key(), &blob), Err(CryptoError::SchemeMismatch));
        let sealed = seal(&real.public_key(), b"x", None, &mut rng(3));
        assert_eq!(open(&marker, &sealed), Err(CryptoError::SchemeMismatch));
    }

    #[test]
    fn seal_open_roundtrip_and_wrong_key() {
        for scheme in schemes() {
            let k = KeyPair::generate(scheme, &mut rng(1));
            let other = KeyPair::generate(scheme, &mut rng(2));
            let sealed = seal(&k.public_key(), b"secret", None, &mut rng(3));
            assert_eq!(open(&k, &sealed).unwrap(), b"secret");
            assert_eq!(open(&other, &sealed), Err(CryptoError::DecryptFailure));
            let empty = seal(&k.public_key(), b"", None, &mut rng(3));
            assert_eq!(open(&k, &empty).unwrap(), b"");
        }
    }

    #[test]
    fn sealing_is_randomized() {
        for scheme in schemes() {
            let k = KeyPair::generate(scheme, &mut rng(1));
            let mut r = rng(9);
            let a = seal(&k.public_key(), b"same", None, &mut r);
            let b = seal(&k.public_key(), b"same", None, &mut r);
            assert_ne!(a.ciphertext, b.ciphertext);
        }
    }

    #[test]
    fn real_ciphertext_hides_plaintext() {
        let k = KeyPair::generate(Scheme::Real, &mut rng(1));
        let plaintext = b"a fairly recognizable plaintext string".to_vec();
        let sealed = seal(&k.public_key(), &plaintext, None, &mut rng(2));
        assert!(!sealed
            .ciphertext
            .windows(plaintext.len())
            .any(|w| w == plaintext.as_slice()));
    }

    #[test]
    fn truncated_ciphertext_fails() {
        for scheme in schemes() {
            let k = KeyPair::generate(scheme, &mut rng(1));
            let mut sealed = seal(&k.public_key(), b"secret", None, &mut rng(3));
            sealed.ciphertext.truncate(sealed.ciphertext.len() - 1);
            assert_eq!(open(&k, &sealed), Err(CryptoError::DecryptFailure));
        }
    }

    #[test]
    fn generation_is_deterministic_under_seed() {
        for scheme in schemes() {
            assert_eq!(
                KeyPair::generate(scheme, &mut rng(5)),
                KeyPair::generate(scheme, &mut rng(5))
            );
        }
    }

    #[test]
    fn distinct_seeds_give_distinct_keys() {
        let keys: BTreeSet<Vec<u8>> = (0..1000)
            .map(|s| KeyPair::generate(Scheme::Real, &mut rng(s)).public_key().bytes)
            .collect();
        assert_eq!(keys.len(), 1000);
    }

    #[test]
    fn key_pair_encoding_roundtrip() {
        let k = KeyPair::generate(Scheme::Real, &mut rng(4));
        let bytes = canonical_encode(&k);
        assert_eq!(canonical_decode::<KeyPair>(&bytes).unwrap(), k);
        let public = canonical_encode(&k.public_key());
        assert!(public.len() < bytes.len());
        assert!(canonical_decode::<KeyPair>(&public).is_err());
    }

    #[test]
    fn marker_regions_nest() {
        let outer = KeyPair::generate(Scheme::Marker, &mut rng(1));
        let inner = KeyPair::generate(Scheme::Marker, &mut rng(2));
        let mut r = rng(3);
        let inner_blob = seal(&inner.public_key(), b"innermost", None, &mut r);
        let outer_blob = seal(&outer.public_key(), &inner_blob.ciphertext, None, &mut r);
        let regions = marker::regions(&outer_blob.ciphertext);
        assert_eq!(regions.len(), 2);
        let pos = outer_blob
            .ciphertext
            .windows(9)
            .position(|w| w == b"innermost")
            .unwrap();
        let containing: Vec<_> = regions.iter().filter(|g| g.contains(pos, 9)).collect();
        assert_eq!(containing.len(), 2);
        assert!(containing
            .iter()
            .any(|g| g.recipient == inner.public_key().fingerprint()));
    }
}
