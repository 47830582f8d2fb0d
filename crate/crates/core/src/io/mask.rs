// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary masks as 8-bit PGM (P5) images.

use std::path::Path;

use crate::error::{Error, Result};
use crate::seg_eval::BinaryMask;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&c) = self.bytes.get(self.pos) {
            if c == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' {
                        break;
                    }
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        let digits = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or("");
        if digits.is_empty() || digits.len() > 9 {
            return Err(format_err(format!("PGM: bad {what}")));
        }
        digits
            .parse()
            .map_err(|_| format_err(format!("PGM: bad {what}")))
    }
}

/// Decodes a square binary P5 image; pixels >= 128 are set.
pub fn decode_pgm(bytes: &[u8]) -> Result<BinaryMask> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(format_err("not a binary PGM (P5) file"));
    }
    let mut c = Cursor { bytes, pos: 2 };
    let width = c.number("width")?;
    let height = c.number("height")?;
    let maxval = c.number("maxval")?;
    if maxval != 255 {
        return Err(format_err(format!("PGM maxval {maxval}, expected 255")));
    }
    if width == 0 || width != height {
        return Err(format_err(format!(
            "mask must be square and non-empty, got {width}x{height}"
        )));
    }
    if !bytes.get(c.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err("PGM: missing whitespace after maxval"));
    }
    let data = &bytes[c.pos + 1..];
    let n = width * height;
    if data.len() != n {
        return Err(format_err(format!(
            "PGM: expected {n} pixel bytes, found {}",
            data.len()
        )));
    }
    BinaryMask::new(width, data.iter().map(|&p| p >= 128).collect())
}

/// Encodes a mask as P5 with values 0 and 255.
pub fn encode_pgm(mask: &BinaryMask) -> Vec<u8> {
    let r = mask.resolution();
    let mut out = format!("P5\n{r} {r}\n255\n").into_bytes();
    out.extend(mask.bits().iter().map(|&b| if b { 255u8 } else { 0 }));
    out
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(mask)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pgm(r: usize, fill: u8) -> Vec<u8> {
        let mut v = format!("P5\n{r} {r}\n255\n").into_bytes();
        v.extend(std::iter::repeat(fill).take(r * r));
        v
    }

    #[test]
    fn full_and_empty() {
        assert_eq!(decode_pgm(&pgm(4, 255)).unwrap().count(), 16);
        assert_eq!(decode_pgm(&pgm(4, 0)).unwrap().count(), 0);
        assert_eq!(decode_pgm(&pgm(2, 128)).unwrap().count(), 4);
        assert_eq!(decode_pgm(&pgm(2, 127)).unwrap().count(), 0);
    }

    #[test]
    fn checkerboard_round_trip() {
        let m = BinaryMask::from_fn(5, |y, x| (x + y) % 2 == 0);
        assert_eq!(decode_pgm(&encode_pgm(&m)).unwrap(), m);
    }

    #[test]
    fn comments_in_header() {
        let mut v = b"P5 # mask\n2 # w\n2\n255\n".to_vec();
        v.extend([0, 255, 255, 0]);
        assert_eq!(decode_pgm(&v).unwrap().bits(), &[false, true, true, false]);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(
            decode_pgm(b"P2\n1 1\n255\n0"),
            Err(Error::Format(_))
        ));
        let mut v = b"P5\n1 1\n15\n".to_vec();
        v.push(0);
        assert!(matches!(decode_pgm(&v), Err(Error::Format(_))));
        let mut v = b"P5\n2 1\n255\n".to_vec();
        v.extend([0, 0]);
        assert!(matches!(decode_pgm(&v), Err(Error::Format(_))));
        let v = pgm(3, 0);
        assert!(matches!(
            decode_pgm(&v[..v.len() - 1]),
            Err(Error::Format(_))
        ));
        assert!(matches!(
            decode_pgm(b"P5\n99999999999 1\n255\n"),
            Err(Error::Format(_))
        ));
    }
}
