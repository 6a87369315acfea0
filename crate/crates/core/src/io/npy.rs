//! Minimal NPY 1.0 reader and writer.
//!
//! Only C-order little-endian `<f4` and `|b1` payloads with 1 to 4
//! dimensions are handled. Headers are padded with spaces and a trailing
//! newline so the preamble length is a multiple of 64 bytes, matching what
//! `numpy.save` writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;
const MAX_DIMS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    Bool(Vec<bool>),
}

impl NpyData {
    pub fn len(&self) -> usize {
        match self {
            NpyData::F32(v) => v.len(),
            NpyData::Bool(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn descr(&self) -> &'static str {
        match self {
            NpyData::F32(_) => "<f4",
            NpyData::Bool(_) => "|b1",
        }
    }
}

/// An n-dimensional array as stored in an NPY file.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    shape: Vec<usize>,
    data: NpyData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: NpyData) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_DIMS {
            return Err(Error::validation(format!(
                "arrays need 1 to {MAX_DIMS} dimensions, got {}",
                shape.len()
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::validation(format!(
                "shape {shape:?} holds {n} elements, data has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f32(shape: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        Self::new(shape, NpyData::F32(values))
    }

    pub fn from_bool(shape: Vec<usize>, values: Vec<bool>) -> Result<Self> {
        Self::new(shape, NpyData::Bool(values))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &NpyData {
        &self.data
    }

    /// Float payload, or an unsupported-format error for boolean arrays.
    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            NpyData::F32(v) => Ok(v),
            NpyData::Bool(_) => Err(Error::UnsupportedFormat(
                "expected '<f4' array, found '|b1'".to_string(),
            )),
        }
    }

    pub fn as_bool(&self) -> Result<&[bool]> {
        match &self.data {
            NpyData::Bool(v) => Ok(v),
            NpyData::F32(_) => Err(Error::UnsupportedFormat(
                "expected '|b1' array, found '<f4'".to_string(),
            )),
        }
    }

    /// Encodes the array as NPY 1.0 bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = match self.shape.as_slice() {
            [n] => format!("({n},)"),
            dims => format!(
                "({})",
                dims.iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        };
        let mut header = format!(
            "{{'descr': '{}', 'fortran_order': False, 'shape': {shape}, }}",
            self.data.descr()
        );
        let unpadded = MAGIC.len() + 2 + 2 + header.len() + 1;
        let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
        header.extend(std::iter::repeat_n(' ', pad));
        header.push('\n');

        let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(header.len() as u16).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        match &self.data {
            NpyData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            NpyData::Bool(v) => out.extend(v.iter().map(|b| u8::from(*b))),
        }
        out
    }

    /// Decodes NPY 1.0 bytes.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..6] != MAGIC {
            return Err(Error::format("missing NPY magic string"));
        }
        let (major, minor) = (bytes[6], bytes[7]);
        if (major, minor) != (1, 0) {
            return Err(Error::UnsupportedFormat(format!(
                "NPY version {major}.{minor} (only 1.0 is read)"
            )));
        }
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        let start = 10 + header_len;
        if bytes.len() < start {
            return Err(Error::format("NPY header runs past end of file"));
        }
        let header = std::str::from_utf8(&bytes[10..start])
            .map_err(|_| Error::format("NPY header is not valid text"))?;
        let header = parse_header(header)?;

        if header.fortran_order {
            return Err(Error::UnsupportedFormat(
                "fortran_order=True arrays are not supported".to_string(),
            ));
        }
        if header.shape.is_empty() || header.shape.len() > MAX_DIMS {
            return Err(Error::UnsupportedFormat(format!(
                "arrays need 1 to {MAX_DIMS} dimensions, got {}",
                header.shape.len()
            )));
        }
        let count = header
            .shape
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| Error::format("NPY shape overflows"))?;
        let payload = &bytes[start..];
        let data = match header.descr.as_str() {
            "<f4" => {
                let expected = count * 4;
                if payload.len() != expected {
                    return Err(Error::Truncated {
                        expected,
                        actual: payload.len(),
                    });
                }
                NpyData::F32(
                    payload
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                        .collect(),
                )
            }
            "|b1" => {
                if payload.len() != count {
                    return Err(Error::Truncated {
                        expected: count,
                        actual: payload.len(),
                    });
                }
                NpyData::Bool(
                    payload
                        .iter()
                        .map(|b| match b {
                            0 => Ok(false),
                            1 => Ok(true),
                            other => Err(Error::format(format!("invalid boolean byte {other}"))),
                        })
                        .collect::<Result<_>>()?,
                )
            }
            other => {
                return Err(Error::UnsupportedFormat(format!(
                    "dtype '{other}' (only '<f4' and '|b1' are read)"
                )))
            }
        };
        Ok(Self {
            shape: header.shape,
            data,
        })
    }
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyArray> {
    NpyArray::from_bytes(&fs::read(path)?)
}

pub fn write_npy(path: impl AsRef<Path>, array: &NpyArray) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&array.to_bytes())?;
    Ok(())
}

struct Header {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Parses the Python dict literal `{'descr': ..., 'fortran_order': ...,
/// 'shape': (...), }` found in NPY headers.
fn parse_header(text: &str) -> Result<Header> {
    let mut p = Lexer {
        s: text.trim_end().as_bytes(),
        i: 0,
    };
    let mut descr = None;
    let mut fortran_order = None;
    let mut shape = None;

    p.expect(b'{')?;
    loop {
        p.skip_ws();
        if p.eat(b'}') {
            break;
        }
        let key = p.string()?;
        p.skip_ws();
        p.expect(b':')?;
        p.skip_ws();
        match key.as_str() {
            "descr" => descr = Some(p.string()?),
            "fortran_order" => fortran_order = Some(p.boolean()?),
            "shape" => shape = Some(p.tuple()?),
            other => {
                return Err(Error::format(format!(
                    "unexpected NPY header key '{other}'"
                )))
            }
        }
        p.skip_ws();
        if !p.eat(b',') {
            p.skip_ws();
            p.expect(b'}')?;
            break;
        }
    }
    p.skip_ws();
    if p.i != p.s.len() {
        return Err(Error::format("trailing bytes after NPY header dict"));
    }
    Ok(Header {
        descr: descr.ok_or_else(|| Error::format("NPY header lacks 'descr'"))?,
        fortran_order: fortran_order
            .ok_or_else(|| Error::format("NPY header lacks 'fortran_order'"))?,
        shape: shape.ok_or_else(|| Error::format("NPY header lacks 'shape'"))?,
    })
}

struct Lexer<'a> {
    s: &'a [u8],
    i: usize,
}

impl Lexer<'_> {
    fn skip_ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.s.get(self.i) == Some(&c) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        if self.eat(c) {
            Ok(())
        } else {
            Err(Error::format(format!(
                "malformed NPY header: expected '{}' at byte {}",
                c as char, self.i
            )))
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.s.get(self.i) {
            Some(q @ (b'\'' | b'"')) => *q,
            _ => return Err(Error::format("malformed NPY header: expected string")),
        };
        self.i += 1;
        let start = self.i;
        while self.i < self.s.len() && self.s[self.i] != quote {
            self.i += 1;
        }
        if self.i == self.s.len() {
            return Err(Error::format("malformed NPY header: unterminated string"));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.i]).into_owned();
        self.i += 1;
        Ok(out)
    }

    fn boolean(&mut self) -> Result<bool> {
        let rest = &self.s[self.i..];
        if rest.starts_with(b"True") {
            self.i += 4;
            Ok(true)
        } else if rest.starts_with(b"False") {
            self.i += 5;
            Ok(false)
        } else {
            Err(Error::format(
                "malformed NPY header: expected True or False",
            ))
        }
    }

    fn tuple(&mut self) -> Result<Vec<usize>> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            self.skip_ws();
            if self.eat(b')') {
                return Ok(dims);
            }
            let start = self.i;
            while self.i < self.s.len() && self.s[self.i].is_ascii_digit() {
                self.i += 1;
            }
            let digits = std::str::from_utf8(&self.s[start..self.i]).unwrap_or("");
            let d = digits
                .parse::<usize>()
                .map_err(|_| Error::format("malformed NPY header: bad shape entry"))?;
            dims.push(d);
            self.skip_ws();
            if !self.eat(b',') {
                self.skip_ws();
                self.expect(b')')?;
                return Ok(dims);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header_bytes(dict: &str) -> Vec<u8> {
        let mut h = dict.to_string();
        let unpadded = 10 + h.len() + 1;
        h.extend(std::iter::repeat_n(' ', (64 - unpadded % 64) % 64));
        h.push('\n');
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&[1, 0]);
        out.extend_from_slice(&(h.len() as u16).to_le_bytes());
        out.extend_from_slice(h.as_bytes());
        out
    }

    #[test]
    fn header_is_aligned_like_numpy() {
        let a = NpyArray::from_f32(vec![2, 3], vec![0.0; 6]).unwrap();
        let bytes = a.to_bytes();
        assert_eq!(bytes.len(), 128 + 24);
        assert_eq!(bytes[8..10], [118, 0]);
        let header = std::str::from_utf8(&bytes[10..128]).unwrap();
        assert!(header.starts_with("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }"));
        assert!(header.ends_with(" \n"));
    }

    #[test]
    fn one_is_ieee_encoded() {
        let a = NpyArray::from_f32(vec![3], vec![0.0, 1.0, 0.0]).unwrap();
        let bytes = a.to_bytes();
        let payload = &bytes[bytes.len() - 12..];
        assert_eq!(&payload[4..8], &[0x00, 0x00, 0x80, 0x3F]);
    }

    #[test]
    fn zero_element_array() {
        let a = NpyArray::from_f32(vec![2, 0], vec![]).unwrap();
        let bytes = a.to_bytes();
        assert_eq!(bytes.len() % 64, 0);
        assert_eq!(NpyArray::from_bytes(&bytes).unwrap(), a);
    }

    #[test]
    fn bool_round_trip() {
        let a = NpyArray::from_bool(vec![2, 2], vec![true, false, false, true]).unwrap();
        assert_eq!(NpyArray::from_bytes(&a.to_bytes()).unwrap(), a);
    }

    #[test]
    fn rejects_fortran_order() {
        let mut b = header_bytes("{'descr': '<f4', 'fortran_order': True, 'shape': (2, 2), }");
        b.extend_from_slice(&[0u8; 16]);
        assert!(matches!(
            NpyArray::from_bytes(&b),
            Err(Error::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn short_payload_is_truncation() {
        let mut b = header_bytes("{'descr': '<f4', 'fortran_order': False, 'shape': (2, 3), }");
        b.extend_from_slice(&[0u8; 20]);
        match NpyArray::from_bytes(&b) {
            Err(Error::Truncated { expected, actual }) => {
                assert_eq!((expected, actual), (24, 20));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_magic_and_dtype() {
        assert!(matches!(
            NpyArray::from_bytes(b"NOTNPY0000"),
            Err(Error::Format(_))
        ));
        let mut b = header_bytes("{'descr': '<f8', 'fortran_order': False, 'shape': (1,), }");
        b.extend_from_slice(&[0u8; 8]);
        assert!(matches!(
            NpyArray::from_bytes(&b),
            Err(Error::UnsupportedFormat(_))
        ));
        let b =
            header_bytes("{'descr': '<f4', 'fortran_order': False, 'shape': (1, 1, 1, 1, 1), }");
        assert!(matches!(
            NpyArray::from_bytes(&b),
            Err(Error::UnsupportedFormat(_))
        ));
        let b = header_bytes("{'descr': '<f4', 'fortran_order': False 'shape': (1,), }");
        assert!(matches!(NpyArray::from_bytes(&b), Err(Error::Format(_))));
    }

    #[test]
    fn accepts_key_order_and_quote_variants() {
        let mut b = header_bytes("{\"shape\": (2,), \"fortran_order\": False, \"descr\": \"<f4\"}");
        b.extend_from_slice(&1.5f32.to_le_bytes());
        b.extend_from_slice(&(-2.0f32).to_le_bytes());
        let a = NpyArray::from_bytes(&b).unwrap();
        assert_eq!(a.shape(), &[2]);
        assert_eq!(a.as_f32().unwrap(), &[1.5, -2.0]);
    }

    #[test]
    fn deterministic_bytes() {
        let a = NpyArray::from_f32(vec![1, 2, 2, 1], vec![0.25, 0.5, 0.75, 1.0]).unwrap();
        assert_eq!(a.to_bytes(), a.to_bytes());
    }

    proptest! {
        #[test]
        fn round_trip_preserves_bits(
            shape in prop::collection::vec(0usize..5, 1..=4),
            seed in any::<u64>(),
        ) {
            let n: usize = shape.iter().product();
            let mut state = seed | 1;
            let values: Vec<f32> = (0..n).map(|_| {
                state ^= state << 13; state ^= state >> 7; state ^= state << 17;
                f32::from_bits((state >> 32) as u32)
            }).collect();
            let a = NpyArray::from_f32(shape, values.clone()).unwrap();
            let back = NpyArray::from_bytes(&a.to_bytes()).unwrap();
            prop_assert_eq!(back.shape(), a.shape());
            let bits: Vec<u32> = back.as_f32().unwrap().iter().map(|v| v.to_bits()).collect();
            let orig: Vec<u32> = values.iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits, orig);
        }
    }
}
