//! Canonical binary codec for signed structures and wire messages.
//!
//! # Encoding Conventions
//!
//! - Integers are fixed-width **big-endian** (`u8`, `u32`, `u64`).
//! - Byte strings (keys, signatures, text) carry a `u32` length prefix.
//! - Enums are a single tag byte; `Option<T>` is a `0x00`/`0x01` tag
//!   followed by the value when present.
//! - Sets are a `u32` count followed by elements in strictly ascending order.
//! - Fields appear in declaration order. There is no padding and no
//!   self-describing schema: the reader must know what it expects.
//!
//! Decoding is strict. Unknown tags, out-of-range integers, wrong key or
//! signature lengths, unsorted sets and trailing bytes are all rejected, so
//! every well-formed value has exactly one encoding.

mod payment;
mod wire;

pub use payment::{payment_key, payment_signed_bytes, Payment, PaymentKey};
pub use wire::{read_frame, write_frame, AuthedRequest, WireKind, WireMessage, MAX_FRAME_LEN};

use thiserror::Error;

/// Upper bound for a single length-prefixed field.
pub const MAX_FIELD_LEN: usize = 1 << 20;

/// Errors raised while encoding or decoding canonical bytes.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("malformed: {0}")]
    Malformed(&'static str),
    #[error("wrong kind: expected {expected:?}, got {got:?}")]
    WrongKind { expected: WireKind, got: WireKind },
    #[error("trailing bytes: {0} unread")]
    TrailingBytes(usize),
    #[error("unencodable: {0}")]
    Unencodable(&'static str),
}

/// Append-only canonical byte writer.
#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    /// Length-prefixed byte string.
    pub fn bytes(&mut self, v: &[u8]) -> Result<&mut Self, CodecError> {
        if v.len() > MAX_FIELD_LEN {
            return Err(CodecError::Unencodable("field exceeds maximum length"));
        }
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        Ok(self)
    }

    pub fn bool(&mut self, v: bool) -> &mut Self {
        self.u8(v as u8)
    }

    pub fn count(&mut self, n: usize) -> Result<&mut Self, CodecError> {
        let n = u32::try_from(n).map_err(|_| CodecError::Unencodable("collection too large"))?;
        Ok(self.u32(n))
    }

    pub fn put<T: Encode + ?Sized>(&mut self, v: &T) -> Result<&mut Self, CodecError> {
        v.encode_to(self)?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

/// Strict reader over a canonical byte string.
#[derive(Debug, Clone)]
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::Malformed("unexpected end of input"));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, CodecError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes(b.try_into().expect("length checked")))
    }

    pub fn u64(&mut self) -> Result<u64, CodecError> {
        let b = self.take(8)?;
        Ok(u64::from_be_bytes(b.try_into().expect("length checked")))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], CodecError> {
        let len = self.u32()? as usize;
        if len > MAX_FIELD_LEN {
            return Err(CodecError::Malformed("field length out of range"));
        }
        self.take(len)
    }

    /// Length-prefixed byte string whose length must be exactly `N`.
    pub fn fixed<const N: usize>(&mut self) -> Result<[u8; N], CodecError> {
        let b = self.bytes()?;
        b.try_into()
            .map_err(|_| CodecError::Malformed("fixed-length field has wrong length"))
    }

    pub fn bool(&mut self) -> Result<bool, CodecError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(CodecError::Malformed("invalid boolean tag")),
        }
    }

    pub fn string(&mut self) -> Result<String, CodecError> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| CodecError::Malformed("invalid utf-8"))
    }

    /// Collection length, rejected if it could not possibly fit in the
    /// remaining input at `min_elem` bytes per element.
    pub fn count(&mut self, min_elem: usize) -> Result<usize, CodecError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_elem.max(1)) > self.remaining() {
            return Err(CodecError::Malformed("collection length out of range"));
        }
        Ok(n)
    }

    pub fn get<T: Decode>(&mut self) -> Result<T, CodecError> {
        T::decode_from(self)
    }

    pub fn finish(self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::TrailingBytes(n)),
        }
    }
}

pub trait Encode {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError>;

    fn encode(&self) -> Result<Vec<u8>, CodecError> {
        let mut w = Writer::new();
        self.encode_to(&mut w)?;
        Ok(w.finish())
    }
}

pub trait Decode: Sized {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError>;

    /// Decodes a complete value, rejecting trailing bytes.
    fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let v = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

pub fn encode<T: Encode + ?Sized>(value: &T) -> Result<Vec<u8>, CodecError> {
    value.encode()
}

pub fn decode<T: Decode>(bytes: &[u8]) -> Result<T, CodecError> {
    T::decode(bytes)
}

impl<T: Encode> Encode for Option<T> {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError> {
        match self {
            None => {
                w.u8(0);
            }
            Some(v) => {
                w.u8(1);
                v.encode_to(w)?;
            }
        }
        Ok(())
    }
}

impl<T: Decode> Decode for Option<T> {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match r.u8()? {
            0 => Ok(None),
            1 => Ok(Some(T::decode_from(r)?)),
            _ => Err(CodecError::Malformed("invalid option tag")),
        }
    }
}

impl Encode for u64 {
    fn encode_to(&self, w: &mut Writer) -> Result<(), CodecError> {
        w.u64(*self);
        Ok(())
    }
}

impl Decode for u64 {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        r.u64()
    }
}

/// Writes a strictly ascending set.
pub fn encode_set<'a, T, I>(w: &mut Writer, items: I) -> Result<(), CodecError>
where
    T: Encode + 'a,
    I: ExactSizeIterator<Item = &'a T>,
{
    w.count(items.len())?;
    for item in items {
        item.encode_to(w)?;
    }
    Ok(())
}

/// Reads a set written by [`encode_set`], enforcing strict ascending order.
pub fn decode_set<T: Decode + Ord>(
    r: &mut Reader<'_>,
    min_elem: usize,
) -> Result<std::collections::BTreeSet<T>, CodecError> {
    let n = r.count(min_elem)?;
    let mut out = std::collections::BTreeSet::new();
    for _ in 0..n {
        let item = T::decode_from(r)?;
        if let Some(last) = out.last() {
            if &item <= last {
                return Err(CodecError::Malformed("set not in strictly ascending order"));
            }
        }
        out.insert(item);
    }
    Ok(out)
}

/// Writes an ordered list: `u32` count, then each element.
pub fn encode_list<T: Encode>(w: &mut Writer, items: &[T]) -> Result<(), CodecError> {
    w.count(items.len())?;
    for item in items {
        item.encode_to(w)?;
    }
    Ok(())
}

pub fn decode_list<T: Decode>(r: &mut Reader<'_>, min_elem: usize) -> Result<Vec<T>, CodecError> {
    let n = r.count(min_elem)?;
    (0..n).map(|_| T::decode_from(r)).collect()
}
