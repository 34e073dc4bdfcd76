//! Minimal reader/writer for the numpy `.npy` container, restricted to
//! little-endian `f32` arrays in C order.
//!
//! Writing always produces a version 1.0 header with sorted keys, numpy's
//! dict spelling and the minimal space padding that reaches 64-byte
//! alignment. Recent numpy releases pad further to leave room for the shape
//! to grow; both layouts read back identically.

pub const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum NpyError {
    #[error("missing npy magic bytes")]
    BadMagic,
    #[error("unsupported npy version {0}.{1}")]
    UnsupportedVersion(u8, u8),
    #[error("malformed npy header: {0}")]
    BadHeader(String),
    #[error("unsupported dtype {0:?}, expected '<f4'")]
    WrongDtype(String),
    #[error("fortran-order arrays are not supported")]
    FortranOrder,
    #[error("expected a {expected}-D array, found shape {found:?}")]
    Dimensionality { expected: usize, found: Vec<usize> },
    #[error("payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{0} unexpected bytes after payload")]
    TrailingBytes(usize),
}

pub fn header_dict(shape: &[usize]) -> String {
    let dims = match shape {
        [] => String::new(),
        [n] => format!("{n},"),
        _ => shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(", "),
    };
    format!("{{'descr': '<f4', 'fortran_order': False, 'shape': ({dims}), }}")
}

/// Encodes an `f32` array. `data.len()` must equal the product of `shape`.
pub fn encode_f32(shape: &[usize], data: &[f32]) -> Vec<u8> {
    debug_assert_eq!(shape.iter().product::<usize>(), data.len());
    let mut header = header_dict(shape).into_bytes();
    let preamble = MAGIC.len() + 2 + 2;
    let pad = (ALIGN - (preamble + header.len() + 1) % ALIGN) % ALIGN;
    header.extend(std::iter::repeat_n(b' ', pad));
    header.push(b'\n');

    let mut out = Vec::with_capacity(preamble + header.len() + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(&header);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Decodes an `f32` array, returning its shape and values.
pub fn decode_f32(bytes: &[u8]) -> Result<(Vec<usize>, Vec<f32>), NpyError> {
    if bytes.len() < MAGIC.len() + 2 || &bytes[..MAGIC.len()] != MAGIC {
        return Err(NpyError::BadMagic);
    }
    let (major, minor) = (bytes[6], bytes[7]);
    let (header_len, start) = match (major, minor) {
        (1, 0) => {
            let b = bytes.get(8..10).ok_or(NpyError::BadHeader("short preamble".into()))?;
            (u16::from_le_bytes([b[0], b[1]]) as usize, 10)
        }
        (2, 0) | (3, 0) => {
            let b = bytes.get(8..12).ok_or(NpyError::BadHeader("short preamble".into()))?;
            (u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize, 12)
        }
        _ => return Err(NpyError::UnsupportedVersion(major, minor)),
    };
    let header = bytes
        .get(start..start + header_len)
        .ok_or_else(|| NpyError::BadHeader("header runs past end of file".into()))?;
    let header = std::str::from_utf8(header)
        .map_err(|_| NpyError::BadHeader("header is not text".into()))?;
    let dict = HeaderDict::parse(header)?;

    if dict.descr != "<f4" {
        return Err(NpyError::WrongDtype(dict.descr));
    }
    if dict.fortran_order {
        return Err(NpyError::FortranOrder);
    }
    let count: usize = dict.shape.iter().product();
    let payload = &bytes[start + header_len..];
    let expected = count * 4;
    if payload.len() < expected {
        return Err(NpyError::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(NpyError::TrailingBytes(payload.len() - expected));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((dict.shape, data))
}

#[derive(Debug, PartialEq)]
struct HeaderDict {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

enum Value {
    Str(String),
    Bool(bool),
    Tuple(Vec<usize>),
}

struct Cursor<'a> {
    s: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.s.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), NpyError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(NpyError::BadHeader(format!(
                "expected {:?} at offset {}",
                c as char, self.pos
            )))
        }
    }

    fn string(&mut self) -> Result<String, NpyError> {
        let q = self.peek().filter(|c| *c == b'\'' || *c == b'"');
        let q = q.ok_or_else(|| NpyError::BadHeader("expected a quoted string".into()))?;
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos] != q {
            self.pos += 1;
        }
        if self.pos == self.s.len() {
            return Err(NpyError::BadHeader("unterminated string".into()));
        }
        let out = String::from_utf8_lossy(&self.s[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(out)
    }

    fn word(&mut self) -> &'a [u8] {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.s.len() && self.s[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        &self.s[start..self.pos]
    }

    fn value(&mut self) -> Result<Value, NpyError> {
        match self.peek() {
            Some(b'\'') | Some(b'"') => self.string().map(Value::Str),
            Some(b'(') => {
                self.pos += 1;
                let mut dims = Vec::new();
                loop {
                    if self.peek() == Some(b')') {
                        self.pos += 1;
                        break;
                    }
                    let w = self.word();
                    let d = std::str::from_utf8(w)
                        .ok()
                        .and_then(|w| w.parse::<usize>().ok())
                        .ok_or_else(|| NpyError::BadHeader("bad shape dimension".into()))?;
                    dims.push(d);
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b')') => {}
                        _ => return Err(NpyError::BadHeader("bad shape tuple".into())),
                    }
                }
                Ok(Value::Tuple(dims))
            }
            _ => match self.word() {
                b"True" => Ok(Value::Bool(true)),
                b"False" => Ok(Value::Bool(false)),
                _ => Err(NpyError::BadHeader("unrecognised value".into())),
            },
        }
    }
}

impl HeaderDict {
    fn parse(text: &str) -> Result<Self, NpyError> {
        let mut cur = Cursor {
            s: text.as_bytes(),
            pos: 0,
        };
        cur.expect(b'{')?;
        let (mut descr, mut fortran, mut shape) = (None, None, None);
        loop {
            if cur.peek() == Some(b'}') {
                break;
            }
            let key = cur.string()?;
            cur.expect(b':')?;
            let value = cur.value()?;
            match (key.as_str(), value) {
                ("descr", Value::Str(s)) => descr = Some(s),
                ("fortran_order", Value::Bool(b)) => fortran = Some(b),
                ("shape", Value::Tuple(t)) => shape = Some(t),
                (k, _) => return Err(NpyError::BadHeader(format!("unexpected entry {k:?}"))),
            }
            match cur.peek() {
                Some(b',') => cur.pos += 1,
                Some(b'}') => {}
                _ => return Err(NpyError::BadHeader("expected ',' or '}'".into())),
            }
        }
        let missing = |k: &str| NpyError::BadHeader(format!("missing key {k:?}"));
        Ok(HeaderDict {
            descr: descr.ok_or_else(|| missing("descr"))?,
            fortran_order: fortran.ok_or_else(|| missing("fortran_order"))?,
            shape: shape.ok_or_else(|| missing("shape"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_aligned_and_newline_terminated() {
        for shape in [vec![], vec![7], vec![2, 2, 3], vec![1024, 1024, 18]] {
            let n = shape.iter().product();
            let bytes = encode_f32(&shape, &vec![0.5; n]);
            let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
            assert_eq!((10 + hlen) % 64, 0);
            assert_eq!(bytes[10 + hlen - 1], b'\n');
        }
    }

    #[test]
    fn reads_numpy_written_file() {
        // np.save(f, np.array([0.25, 0.75], '<f4').reshape(1, 1, 2))
        let hex = concat!(
            "934e554d5059010076007b276465736372273a20273c6634272c2027666f727472616e5f",
            "6f72646572273a2046616c73652c20277368617065273a2028312c20312c2032292c207d",
            "202020202020202020202020202020202020202020202020202020202020202020202020",
            "202020202020202020202020202020202020200a0000803e0000403f",
        );
        let bytes = hex::decode(hex).unwrap();
        let (shape, data) = decode_f32(&bytes).unwrap();
        assert_eq!(shape, [1, 1, 2]);
        assert_eq!(data, [0.25, 0.75]);
        let ours = encode_f32(&shape, &data);
        assert_eq!(ours.len(), 128 + 8);
        assert_eq!(decode_f32(&ours).unwrap(), (shape, data));
    }

    #[test]
    fn dict_spelling() {
        assert_eq!(header_dict(&[5]), "{'descr': '<f4', 'fortran_order': False, 'shape': (5,), }");
        assert_eq!(
            header_dict(&[2, 2, 3]),
            "{'descr': '<f4', 'fortran_order': False, 'shape': (2, 2, 3), }"
        );
    }

    #[test]
    fn parses_reordered_keys() {
        let d = HeaderDict::parse("{\"shape\": (3, 4), 'fortran_order': False, 'descr': '<f4'}")
            .unwrap();
        assert_eq!(d.shape, vec![3, 4]);
    }

    #[test]
    fn rejects_bad_inputs() {
        let good = encode_f32(&[1, 1, 2], &[0.25, 0.75]);
        assert_eq!(decode_f32(b"NUMPY!!!"), Err(NpyError::BadMagic));

        let mut v = good.clone();
        v[6] = 9;
        assert_eq!(decode_f32(&v), Err(NpyError::UnsupportedVersion(9, 0)));

        let trunc = &good[..good.len() - 1];
        assert!(matches!(decode_f32(trunc), Err(NpyError::Truncated { .. })));

        let mut extra = good.clone();
        extra.push(0);
        assert_eq!(decode_f32(&extra), Err(NpyError::TrailingBytes(1)));

        let mut wrong = good.clone();
        let pos = wrong.windows(3).position(|w| w == b"<f4").unwrap();
        wrong[pos + 2] = b'8';
        assert_eq!(decode_f32(&wrong), Err(NpyError::WrongDtype("<f8".into())));

        let mut fort = encode_f32(&[1, 1, 2], &[0.25, 0.75]);
        let pos = fort.windows(5).position(|w| w == b"False").unwrap();
        fort.splice(pos..pos + 5, b"True ".iter().copied());
        assert_eq!(decode_f32(&fort), Err(NpyError::FortranOrder));
    }
}
