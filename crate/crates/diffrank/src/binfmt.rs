//! Little-endian primitives shared by the cache, transform and checkpoint files.

use crate::FormatError;

pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8], version: u32) -> Self {
        let mut w = Self { buf: Vec::new() };
        w.buf.extend_from_slice(magic);
        w.u32(version);
        w
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn len(&mut self, v: usize) {
        self.u64(v as u64);
    }

    pub fn str(&mut self, s: &str) {
        self.len(s.len());
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn f64s(&mut self, vs: &[f64]) {
        for &v in vs {
            self.f64(v);
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Checks magic and version, leaving the cursor after the header.
    pub fn open(buf: &'a [u8], magic: &[u8; 8], version: u32) -> Result<Self, FormatError> {
        let mut r = Self { buf, pos: 0 };
        if r.take(8)? != magic {
            return Err(FormatError::Magic);
        }
        let found = r.u32()?;
        if found != version {
            return Err(FormatError::Version { found, expected: version });
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).ok_or(FormatError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(FormatError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64, FormatError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn len(&mut self) -> Result<usize, FormatError> {
        let n = self.u64()?;
        // Every counted item occupies at least one byte.
        if n > (self.buf.len() - self.pos) as u64 * 8 + 8 {
            return Err(FormatError::Truncated);
        }
        Ok(n as usize)
    }

    pub fn str(&mut self) -> Result<String, FormatError> {
        let n = self.len()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| FormatError::Utf8)
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>, FormatError> {
        let bytes = self.take(n.checked_mul(8).ok_or(FormatError::Truncated)?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    pub fn finish(self) -> Result<(), FormatError> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(FormatError::TrailingBytes(self.buf.len() - self.pos))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_round_trip() {
        let mut w = Writer::new(b"TESTFMT\0", 3);
        w.u8(7);
        w.u32(0xdead_beef);
        w.f64(-0.0);
        w.f64(f64::NAN);
        w.str("qid:é");
        w.f64s(&[1.5, 2.5]);
        let bytes = w.finish();
        let mut r = Reader::open(&bytes, b"TESTFMT\0", 3).unwrap();
        assert_eq!(r.u8().unwrap(), 7);
        assert_eq!(r.u32().unwrap(), 0xdead_beef);
        assert_eq!(r.f64().unwrap().to_bits(), (-0.0f64).to_bits());
        assert!(r.f64().unwrap().is_nan());
        assert_eq!(r.str().unwrap(), "qid:é");
        assert_eq!(r.f64s(2).unwrap(), vec![1.5, 2.5]);
        r.finish().unwrap();
    }

    #[test]
    fn header_and_truncation_errors() {
        let bytes = Writer::new(b"TESTFMT\0", 3).finish();
        assert!(matches!(Reader::open(&bytes, b"OTHERFMT", 3), Err(FormatError::Magic)));
        assert!(matches!(
            Reader::open(&bytes, b"TESTFMT\0", 4),
            Err(FormatError::Version { found: 3, expected: 4 })
        ));
        let mut r = Reader::open(&bytes, b"TESTFMT\0", 3).unwrap();
        assert!(matches!(r.u64(), Err(FormatError::Truncated)));
        assert!(matches!(Reader::open(&bytes[..5], b"TESTFMT\0", 3), Err(FormatError::Truncated)));
    }
}
