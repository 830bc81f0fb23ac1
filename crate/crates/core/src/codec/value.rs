//! Tagged binary encoding of domain values.
//!
//! | tag  | value   | body                                        |
//! |------|---------|---------------------------------------------|
//! | 0x00 | null    | -                                           |
//! | 0x01 | false   | -                                           |
//! | 0x02 | true    | -                                           |
//! | 0x03 | integer | 8 bytes, big-endian two's complement        |
//! | 0x04 | fixed   | 8 bytes, big-endian raw units of 10^-9      |
//! | 0x05 | bytes   | length, raw bytes                           |
//! | 0x06 | string  | length, UTF-8 bytes                         |
//! | 0x07 | list    | count, items                                |
//! | 0x08 | map     | count, (key length, key bytes, value)*      |
//! | 0x09 | digest  | 32 bytes                                    |
//!
//! A length or count is one byte `n` in `0..=8` followed by `n` big-endian
//! bytes with no leading zero byte, so zero is the single byte `0x00`.
//! Map entries are strictly ascending by key bytes. The decoder rejects
//! anything the encoder would not have produced.

use std::collections::BTreeMap;

use super::{CodecError, Digest, Fixed};

pub const TAG_NULL: u8 = 0x00;
pub const TAG_FALSE: u8 = 0x01;
pub const TAG_TRUE: u8 = 0x02;
pub const TAG_INT: u8 = 0x03;
pub const TAG_FIXED: u8 = 0x04;
pub const TAG_BYTES: u8 = 0x05;
pub const TAG_STR: u8 = 0x06;
pub const TAG_LIST: u8 = 0x07;
pub const TAG_MAP: u8 = 0x08;
pub const TAG_DIGEST: u8 = 0x09;

const MAX_DEPTH: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Fixed(Fixed),
    Bytes(Vec<u8>),
    Str(String),
    List(Vec<Value>),
    Map(BTreeMap<Vec<u8>, Value>),
    Digest(Digest),
}

impl Value {
    pub fn map<K: AsRef<[u8]>, I: IntoIterator<Item = (K, Value)>>(entries: I) -> Value {
        Value::Map(
            entries
                .into_iter()
                .map(|(k, v)| (k.as_ref().to_vec(), v))
                .collect(),
        )
    }

    pub fn str(s: impl Into<String>) -> Value {
        Value::Str(s.into())
    }

    pub fn from_f64(x: f64) -> Result<Value, CodecError> {
        Fixed::from_f64(x).map(Value::Fixed)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_into(&mut out);
        out
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            Value::Null => out.push(TAG_NULL),
            Value::Bool(false) => out.push(TAG_FALSE),
            Value::Bool(true) => out.push(TAG_TRUE),
            Value::Int(n) => {
                out.push(TAG_INT);
                out.extend_from_slice(&n.to_be_bytes());
            }
            Value::Fixed(f) => {
                out.push(TAG_FIXED);
                out.extend_from_slice(&f.raw().to_be_bytes());
            }
            Value::Bytes(b) => {
                out.push(TAG_BYTES);
                put_len(out, b.len());
                out.extend_from_slice(b);
            }
            Value::Str(s) => {
                out.push(TAG_STR);
                put_len(out, s.len());
                out.extend_from_slice(s.as_bytes());
            }
            Value::List(items) => {
                out.push(TAG_LIST);
                put_len(out, items.len());
                for item in items {
                    item.encode_into(out);
                }
            }
            Value::Map(entries) => {
                out.push(TAG_MAP);
                put_len(out, entries.len());
                for (k, v) in entries {
                    put_len(out, k.len());
                    out.extend_from_slice(k);
                    v.encode_into(out);
                }
            }
            Value::Digest(d) => {
                out.push(TAG_DIGEST);
                out.extend_from_slice(d.as_bytes());
            }
        }
    }

    pub fn decode(bytes: &[u8]) -> Result<Value, CodecError> {
        let mut reader = Reader { bytes, pos: 0 };
        let v = reader.value(0)?;
        if reader.pos != bytes.len() {
            return Err(CodecError::Decode {
                pos: reader.pos,
                reason: "trailing bytes".into(),
            });
        }
        Ok(v)
    }

    fn kind(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Fixed(_) => "fixed",
            Value::Bytes(_) => "bytes",
            Value::Str(_) => "string",
            Value::List(_) => "list",
            Value::Map(_) => "map",
            Value::Digest(_) => "digest",
        }
    }

    fn mismatch(&self, want: &str) -> CodecError {
        CodecError::Shape(format!("expected {want}, found {}", self.kind()))
    }

    pub fn as_bool(&self) -> Result<bool, CodecError> {
        match self {
            Value::Bool(b) => Ok(*b),
            other => Err(other.mismatch("bool")),
        }
    }

    pub fn as_int(&self) -> Result<i64, CodecError> {
        match self {
            Value::Int(n) => Ok(*n),
            other => Err(other.mismatch("int")),
        }
    }

    pub fn as_u64(&self) -> Result<u64, CodecError> {
        u64::try_from(self.as_int()?).map_err(|_| CodecError::Shape("negative count".into()))
    }

    pub fn as_fixed(&self) -> Result<Fixed, CodecError> {
        match self {
            Value::Fixed(f) => Ok(*f),
            other => Err(other.mismatch("fixed")),
        }
    }

    pub fn as_bytes(&self) -> Result<&[u8], CodecError> {
        match self {
            Value::Bytes(b) => Ok(b),
            other => Err(other.mismatch("bytes")),
        }
    }

    pub fn as_str(&self) -> Result<&str, CodecError> {
        match self {
            Value::Str(s) => Ok(s),
            other => Err(other.mismatch("string")),
        }
    }

    pub fn as_list(&self) -> Result<&[Value], CodecError> {
        match self {
            Value::List(items) => Ok(items),
            other => Err(other.mismatch("list")),
        }
    }

    pub fn as_map(&self) -> Result<&BTreeMap<Vec<u8>, Value>, CodecError> {
        match self {
            Value::Map(m) => Ok(m),
            other => Err(other.mismatch("map")),
        }
    }

    pub fn as_digest(&self) -> Result<Digest, CodecError> {
        match self {
            Value::Digest(d) => Ok(*d),
            other => Err(other.mismatch("digest")),
        }
    }

    /// Looks up a string-keyed field of a map value.
    pub fn field(&self, name: &str) -> Result<&Value, CodecError> {
        self.as_map()?
            .get(name.as_bytes())
            .ok_or_else(|| CodecError::Shape(format!("missing field {name:?}")))
    }

    pub fn opt_field(&self, name: &str) -> Result<Option<&Value>, CodecError> {
        match self.as_map()?.get(name.as_bytes()) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => Ok(Some(v)),
        }
    }
}

fn put_len(out: &mut Vec<u8>, len: usize) {
    let be = (len as u64).to_be_bytes();
    let skip = be.iter().take_while(|b| **b == 0).count();
    out.push((8 - skip) as u8);
    out.extend_from_slice(&be[skip..]);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn err(&self, reason: &str) -> CodecError {
        CodecError::Decode {
            pos: self.pos,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|end| *end <= self.bytes.len())
            .ok_or_else(|| self.err("unexpected end of input"))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn byte(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn len(&mut self) -> Result<usize, CodecError> {
        let n = self.byte()? as usize;
        if n > 8 {
            return Err(self.err("length prefix wider than 8 bytes"));
        }
        let raw = self.take(n)?;
        if n > 0 && raw[0] == 0 {
            return Err(self.err("non-minimal length"));
        }
        let mut buf = [0u8; 8];
        buf[8 - n..].copy_from_slice(raw);
        let len = u64::from_be_bytes(buf);
        // every element occupies at least one byte, so a length beyond the
        // remaining input can be rejected before allocating
        if len > (self.bytes.len() - self.pos) as u64 {
            return Err(self.err("length exceeds input"));
        }
        Ok(len as usize)
    }

    fn i64(&mut self) -> Result<i64, CodecError> {
        let raw = self.take(8)?;
        Ok(i64::from_be_bytes(raw.try_into().expect("8 bytes")))
    }

    fn value(&mut self, depth: usize) -> Result<Value, CodecError> {
        if depth > MAX_DEPTH {
            return Err(self.err("nesting too deep"));
        }
        let tag = self.byte()?;
        Ok(match tag {
            TAG_NULL => Value::Null,
            TAG_FALSE => Value::Bool(false),
            TAG_TRUE => Value::Bool(true),
            TAG_INT => Value::Int(self.i64()?),
            TAG_FIXED => Value::Fixed(Fixed::from_raw(self.i64()?)),
            TAG_BYTES => {
                let n = self.len()?;
                Value::Bytes(self.take(n)?.to_vec())
            }
            TAG_STR => {
                let n = self.len()?;
                let start = self.pos;
                let raw = self.take(n)?;
                let s = std::str::from_utf8(raw).map_err(|_| CodecError::Decode {
                    pos: start,
                    reason: "invalid utf-8".into(),
                })?;
                Value::Str(s.to_owned())
            }
            TAG_LIST => {
                let n = self.len()?;
                let mut items = Vec::with_capacity(n.min(1024));
                for _ in 0..n {
                    items.push(self.value(depth + 1)?);
                }
                Value::List(items)
            }
            TAG_MAP => {
                let n = self.len()?;
                let mut entries = BTreeMap::new();
                let mut prev: Option<Vec<u8>> = None;
                for _ in 0..n {
                    let klen = self.len()?;
                    let key = self.take(klen)?.to_vec();
                    if prev.as_ref().is_some_and(|p| *p >= key) {
                        return Err(self.err("map keys not strictly ascending"));
                    }
                    let v = self.value(depth + 1)?;
                    prev = Some(key.clone());
                    entries.insert(key, v);
                }
                Value::Map(entries)
            }
            TAG_DIGEST => {
                let raw = self.take(32)?;
                Value::Digest(Digest(raw.try_into().expect("32 bytes")))
            }
            _ => {
                self.pos -= 1;
                return Err(self.err("unknown tag"));
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_map_is_two_bytes() {
        assert_eq!(Value::Map(BTreeMap::new()).encode(), vec![0x08, 0x00]);
    }

    #[test]
    fn key_order_is_canonical() {
        let a = Value::map([("b", Value::Int(2)), ("a", Value::Int(1))]);
        let b = Value::map([("a", Value::Int(1)), ("b", Value::Int(2))]);
        assert_eq!(a.encode(), b.encode());
    }

    #[test]
    fn known_vectors() {
        assert_eq!(Value::Int(1).encode(), hex::decode("030000000000000001").unwrap());
        assert_eq!(
            Value::Fixed("0.5".parse().unwrap()).encode(),
            hex::decode("04000000001dcd6500").unwrap()
        );
        assert_eq!(Value::str("ab").encode(), hex::decode("0601026162").unwrap());
        assert_eq!(
            Value::List(vec![Value::Null, Value::Bool(true)]).encode(),
            hex::decode("0701020002").unwrap()
        );
        assert_eq!(
            Value::map([("k", Value::Bool(false))]).encode(),
            hex::decode("08010101016b01").unwrap()
        );
    }

    #[test]
    fn decoder_rejects_noncanonical_input() {
        // non-minimal length
        assert!(Value::decode(&[TAG_STR, 0x01, 0x00]).is_err());
        // unsorted keys
        let bad = [TAG_MAP, 0x01, 0x02, 0x01, b'b', TAG_NULL, 0x01, b'a', TAG_NULL];
        assert!(Value::decode(&bad).is_err());
        // trailing bytes
        assert!(Value::decode(&[TAG_NULL, TAG_NULL]).is_err());
        // unknown tag
        assert!(matches!(
            Value::decode(&[0x7f]),
            Err(CodecError::Decode { pos: 0, .. })
        ));
        // absurd length must not allocate
        assert!(Value::decode(&[TAG_LIST, 0x08, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff]).is_err());
    }

    #[test]
    fn non_finite_floats_are_unencodable() {
        assert!(matches!(Value::from_f64(f64::NAN), Err(CodecError::Unencodable(_))));
        assert!(Value::from_f64(0.25).is_ok());
    }
}
