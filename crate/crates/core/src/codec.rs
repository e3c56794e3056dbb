//! Canonical binary codec for every protocol value.
//!
//! Signatures are computed over these bytes, so the encoding must be
//! deterministic and injective.
//!
//! ```text
//! top level  := version(0x01) value
//! value      := tag(1B) fields...
//! integer    := 64-bit big-endian (u16/u32 fields use their own width)
//! bytes/str  := len(u32 BE) data
//! list       := count(u32 BE) element*            (order preserved)
//! set        := count(u32 BE) element*            (ascending encoded bytes)
//! map        := count(u32 BE) (key value)*        (ascending encoded key bytes)
//! option     := 0x00 | 0x01 value
//! ```
//!
//! Decoding is strict: trailing bytes, unknown tags, unsorted or duplicate
//! set members and truncated lengths are all rejected.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;
use uuid::Uuid;

/// Wire format version carried as the first byte of every top-level value.
pub const VERSION: u8 = 0x01;

/// Errors produced while decoding canonical bytes.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input: need {need} bytes, have {have}")]
    UnexpectedEnd { need: usize, have: usize },
    #[error("unsupported version {0:#04x}")]
    BadVersion(u8),
    #[error("expected tag {expected:#04x} ({name}), found {found:#04x}")]
    BadTag {
        expected: u8,
        found: u8,
        name: &'static str,
    },
    #[error("unknown discriminant {value} for {name}")]
    BadDiscriminant { value: u8, name: &'static str },
    #[error("{0} trailing bytes")]
    TrailingBytes(usize),
    #[error("invalid utf-8 string")]
    InvalidUtf8,
    #[error("non-canonical encoding: {0}")]
    NonCanonical(&'static str),
    #[error("invalid value: {0}")]
    Invalid(&'static str),
}

/// Byte sink for canonical encoding.
#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn bool(&mut self, v: bool) {
        self.buf.push(u8::from(v));
    }

    pub fn raw(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    pub fn bytes(&mut self, v: &[u8]) {
        self.len(v.len());
        self.buf.extend_from_slice(v);
    }

    pub fn str(&mut self, v: &str) {
        self.bytes(v.as_bytes());
    }

    fn len(&mut self, n: usize) {
        let n = u32::try_from(n).expect("length exceeds u32 range");
        self.u32(n);
    }

    pub fn put<T: Encode + ?Sized>(&mut self, v: &T) {
        v.encode(self);
    }

    /// Order-preserving list.
    pub fn list<T: Encode>(&mut self, items: &[T]) {
        self.len(items.len());
        for item in items {
            item.encode(self);
        }
    }

    /// Set of values, emitted in ascending order of their encoded bytes.
    pub fn set<'a, T, I>(&mut self, items: I)
    where
        T: Encode + 'a,
        I: IntoIterator<Item = &'a T>,
    {
        let mut encoded: Vec<Vec<u8>> = items.into_iter().map(to_field_bytes).collect();
        encoded.sort();
        encoded.dedup();
        self.len(encoded.len());
        for e in encoded {
            self.raw(&e);
        }
    }

    /// Map emitted in ascending order of encoded key bytes.
    pub fn map<K: Encode, V: Encode>(&mut self, map: &BTreeMap<K, V>) {
        let mut entries: Vec<(Vec<u8>, Vec<u8>)> = map
            .iter()
            .map(|(k, v)| (to_field_bytes(k), to_field_bytes(v)))
            .collect();
        entries.sort();
        self.len(entries.len());
        for (k, v) in entries {
            self.raw(&k);
            self.raw(&v);
        }
    }
}

/// Cursor over canonical bytes.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Self { data, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.remaining() < n {
            return Err(DecodeError::UnexpectedEnd {
                need: n,
                have: self.remaining(),
            });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn peek_u8(&self) -> Result<u8, DecodeError> {
        self.data.get(self.pos).copied().ok_or(DecodeError::UnexpectedEnd {
            need: 1,
            have: 0,
        })
    }

    pub fn u16(&mut self) -> Result<u16, DecodeError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes(b.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn i64(&mut self) -> Result<i64, DecodeError> {
        let b = self.take(8)?;
        Ok(i64::from_be_bytes(b.try_into().expect("8 bytes")))
    }

    pub fn bool(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DecodeError::NonCanonical("boolean must be 0 or 1")),
        }
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn bytes(&mut self) -> Result<Vec<u8>, DecodeError> {
        let n = self.u32()? as usize;
        Ok(self.take(n)?.to_vec())
    }

    pub fn str(&mut self) -> Result<String, DecodeError> {
        String::from_utf8(self.bytes()?).map_err(|_| DecodeError::InvalidUtf8)
    }

    pub fn expect_tag(&mut self, expected: u8, name: &'static str) -> Result<(), DecodeError> {
        let found = self.u8()?;
        if found != expected {
            return Err(DecodeError::BadTag {
                expected,
                found,
                name,
            });
        }
        Ok(())
    }

    pub fn get<T: Decode>(&mut self) -> Result<T, DecodeError> {
        T::decode(self)
    }

    pub fn list<T: Decode>(&mut self) -> Result<Vec<T>, DecodeError> {
        let n = self.u32()? as usize;
        // no pre-allocation: the count is attacker controlled
        let mut out = Vec::new();
        for _ in 0..n {
            out.push(T::decode(self)?);
        }
        Ok(out)
    }

    pub fn set<T: Decode + Ord>(&mut self) -> Result<BTreeSet<T>, DecodeError> {
        let n = self.u32()? as usize;
        let mut out = BTreeSet::new();
        let mut prev: Option<&'a [u8]> = None;
        for _ in 0..n {
            let start = self.pos;
            let item = T::decode(self)?;
            let raw = &self.data[start..self.pos];
            if prev.is_some_and(|p| p >= raw) {
                return Err(DecodeError::NonCanonical("set members out of order"));
            }
            prev = Some(raw);
            if !out.insert(item) {
                return Err(DecodeError::NonCanonical("duplicate set member"));
            }
        }
        Ok(out)
    }

    pub fn map<K: Decode + Ord, V: Decode>(&mut self) -> Result<BTreeMap<K, V>, DecodeError> {
        let n = self.u32()? as usize;
        let mut out = BTreeMap::new();
        let mut prev: Option<&'a [u8]> = None;
        for _ in 0..n {
            let start = self.pos;
            let key = K::decode(self)?;
            let raw = &self.data[start..self.pos];
            if prev.is_some_and(|p| p >= raw) {
                return Err(DecodeError::NonCanonical("map keys out of order"));
            }
            prev = Some(raw);
            let value = V::decode(self)?;
            if out.insert(key, value).is_some() {
                return Err(DecodeError::NonCanonical("duplicate map key"));
            }
        }
        Ok(out)
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

pub trait Encode {
    fn encode(&self, w: &mut Writer);
}

pub trait Decode: Sized {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError>;
}

/// A tagged protocol type that may appear at the top level of a wire
/// message or file.
pub trait Canonical: Encode + Decode {
    const TAG: u8;
    const NAME: &'static str;
}

/// Encode a value with its leading version byte.
pub fn canonical_encode<T: Canonical>(v: &T) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(VERSION);
    v.encode(&mut w);
    w.into_bytes()
}

/// Decode a value produced by [`canonical_encode`], rejecting trailing bytes.
pub fn canonical_decode<T: Canonical>(bytes: &[u8]) -> Result<T, DecodeError> {
    let mut r = Reader::new(bytes);
    let version = r.u8()?;
    if version != VERSION {
        return Err(DecodeError::BadVersion(version));
    }
    let v = T::decode(&mut r)?;
    r.finish()?;
    Ok(v)
}

/// Encoded bytes of a nested value without the version byte. This is the
/// form in which the value appears inside enclosing messages.
pub fn to_field_bytes<T: Encode + ?Sized>(v: &T) -> Vec<u8> {
    let mut w = Writer::new();
    v.encode(&mut w);
    w.into_bytes()
}

/// Tag byte of a top-level encoding, if present and versioned correctly.
pub fn peek_tag(bytes: &[u8]) -> Result<u8, DecodeError> {
    match bytes {
        [VERSION, tag, ..] => Ok(*tag),
        [v, _, ..] => Err(DecodeError::BadVersion(*v)),
        _ => Err(DecodeError::UnexpectedEnd {
            need: 2,
            have: bytes.len(),
        }),
    }
}

impl Encode for u8 {
    fn encode(&self, w: &mut Writer) {
        w.u8(*self)
    }
}

impl Decode for u8 {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.u8()
    }
}

impl Encode for u64 {
    fn encode(&self, w: &mut Writer) {
        w.u64(*self)
    }
}

impl Decode for u64 {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.u64()
    }
}

impl Encode for bool {
    fn encode(&self, w: &mut Writer) {
        w.bool(*self)
    }
}

impl Decode for bool {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.bool()
    }
}

impl Encode for String {
    fn encode(&self, w: &mut Writer) {
        w.str(self)
    }
}

impl Decode for String {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.str()
    }
}

/// `Vec<u8>` always encodes as a length-prefixed byte string. Lists of
/// other element types go through [`Writer::list`].
impl Encode for Vec<u8> {
    fn encode(&self, w: &mut Writer) {
        w.bytes(self)
    }
}

impl Decode for Vec<u8> {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.bytes()
    }
}

impl Encode for Uuid {
    fn encode(&self, w: &mut Writer) {
        w.raw(self.as_bytes())
    }
}

impl Decode for Uuid {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(Uuid::from_bytes(r.array::<16>()?))
    }
}

impl<T: Encode> Encode for Option<T> {
    fn encode(&self, w: &mut Writer) {
        match self {
            None => w.u8(0),
            Some(v) => {
                w.u8(1);
                v.encode(w);
            }
        }
    }
}

impl<T: Decode> Decode for Option<T> {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        match r.u8()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode(r)?)),
            value => Err(DecodeError::BadDiscriminant {
                value,
                name: "Option",
            }),
        }
    }
}

impl<A: Encode, B: Encode> Encode for (A, B) {
    fn encode(&self, w: &mut Writer) {
        self.0.encode(w);
        self.1.encode(w);
    }
}

impl<A: Decode, B: Decode> Decode for (A, B) {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok((A::decode(r)?, B::decode(r)?))
    }
}

/// Lists nested as values (e.g. map values that are lists of modifiers).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct List<T>(pub Vec<T>);

impl<T: Encode> Encode for List<T> {
    fn encode(&self, w: &mut Writer) {
        w.list(&self.0)
    }
}

impl<T: Decode> Decode for List<T> {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        Ok(List(r.list()?))
    }
}

/// Sets nested as values.
impl<T: Encode + Ord> Encode for BTreeSet<T> {
    fn encode(&self, w: &mut Writer) {
        w.set(self)
    }
}

impl<T: Decode + Ord> Decode for BTreeSet<T> {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.set()
    }
}

impl<K: Encode + Ord, V: Encode> Encode for BTreeMap<K, V> {
    fn encode(&self, w: &mut Writer) {
        w.map(self)
    }
}

impl<K: Decode + Ord, V: Decode> Decode for BTreeMap<K, V> {
    fn decode(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.map()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integers_are_big_endian() {
        let mut w = Writer::new();
        w.u64(0x0102_0304_0506_0708);
        w.u32(9);
        assert_eq!(w.into_bytes(), [1, 2, 3, 4, 5, 6, 7, 8, 0, 0, 0, 9]);
    }

    #[test]
    fn sets_are_order_canonical() {
        let a: BTreeSet<Vec<u8>> = [vec![3u8], vec![1, 2], vec![0]].into_iter().collect();
        let mut w = Writer::new();
        w.set(a.iter().rev());
        let reversed = w.into_bytes();
        let mut w = Writer::new();
        w.set(&a);
        assert_eq!(reversed, w.into_bytes());
    }

    #[test]
    fn unsorted_set_rejected() {
        let mut w = Writer::new();
        w.u32(2);
        w.bytes(&[2]);
        w.bytes(&[1]);
        let bytes = w.into_bytes();
        let err = Reader::new(&bytes).set::<Vec<u8>>().unwrap_err();
        assert_eq!(err, DecodeError::NonCanonical("set members out of order"));
    }

    #[test]
    fn huge_count_fails_without_allocating() {
        let bytes = [0xff, 0xff, 0xff, 0xff, 0x00];
        assert!(Reader::new(&bytes).list::<u64>().is_err());
        assert!(Reader::new(&bytes).bytes().is_err());
    }

    #[test]
    fn option_discriminant_checked() {
        assert!(matches!(
            Reader::new(&[2]).get::<Option<u8>>(),
            Err(DecodeError::BadDiscriminant { value: 2, .. })
        ));
    }
}
