//! Little-endian binary container primitives shared by the dataset and
//! checkpoint formats: length-prefixed sections and a trailing SHA-256 over
//! everything before it.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const F64_TAG: u8 = 0x01;

/// Accumulates the file body and hashes it as it grows.
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new(magic: &[u8; 8]) -> Writer {
        let mut w = Writer { buf: Vec::new() };
        w.bytes(magic);
        w
    }

    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
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

    pub fn f64_slice(&mut self, values: &[f64]) {
        self.buf.reserve(values.len() * 8);
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.bytes(s.as_bytes());
    }

    /// Append the checksum and hand back the finished file body.
    pub fn finish(mut self) -> Vec<u8> {
        let digest = Sha256::digest(&self.buf);
        self.buf.extend_from_slice(&digest);
        self.buf
    }
}

/// Cursor over a fully-read file; the constructor has already verified the
/// magic and the trailing checksum, so later reads only police lengths.
pub struct Reader<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8], magic: &[u8; 8]) -> Result<Reader<'a>> {
        if data.len() < magic.len() + 32 {
            return Err(Error::Format("file truncated before the checksum".into()));
        }
        let (body, stored) = data.split_at(data.len() - 32);
        let digest = Sha256::digest(body);
        if digest.as_slice() != stored {
            return Err(Error::Format("checksum mismatch; file is corrupt".into()));
        }
        if &body[..magic.len()] != magic {
            return Err(Error::Format(format!(
                "bad magic: expected {:?}",
                String::from_utf8_lossy(magic)
            )));
        }
        Ok(Reader { body, pos: magic.len() })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.body.len() {
            return Err(Error::Format("section extends past the end of the file".into()));
        }
        let s = &self.body[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64_vec(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Format("non-UTF-8 name in file".into()))
    }

    pub fn var_bytes(&mut self) -> Result<&'a [u8]> {
        let len = self.u64()? as usize;
        self.take(len)
    }

    pub fn finish(&self) -> Result<()> {
        if self.pos != self.body.len() {
            return Err(Error::Format(format!(
                "{} unread bytes after the last section",
                self.body.len() - self.pos
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"SAOTTST\0";

    #[test]
    fn round_trip_preserves_every_section() {
        let mut w = Writer::new(MAGIC);
        w.u8(F64_TAG);
        w.u32(7);
        w.u64(u64::MAX);
        w.str("model.encode.w");
        w.f64_slice(&[1.5, -0.0, f64::NAN, f64::INFINITY]);
        let data = w.finish();

        let mut r = Reader::new(&data, MAGIC).unwrap();
        assert_eq!(r.u8().unwrap(), F64_TAG);
        assert_eq!(r.u32().unwrap(), 7);
        assert_eq!(r.u64().unwrap(), u64::MAX);
        assert_eq!(r.str().unwrap(), "model.encode.w");
        let v = r.f64_vec(4).unwrap();
        assert_eq!(v[0].to_bits(), 1.5f64.to_bits());
        assert_eq!(v[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(v[2].to_bits(), f64::NAN.to_bits());
        assert_eq!(v[3], f64::INFINITY);
        r.finish().unwrap();
    }

    #[test]
    fn corruption_and_truncation_are_rejected() {
        let mut w = Writer::new(MAGIC);
        w.f64_slice(&[1.0, 2.0, 3.0]);
        let good = w.finish();

        let mut flipped = good.clone();
        flipped[10] ^= 0x40;
        assert!(matches!(Reader::new(&flipped, MAGIC), Err(Error::Format(_))));

        let truncated = &good[..good.len() - 1];
        assert!(matches!(Reader::new(truncated, MAGIC), Err(Error::Format(_))));

        assert!(matches!(Reader::new(&good[..5], MAGIC), Err(Error::Format(_))));

        let mut wrong = Writer::new(b"SAOTXXX\0");
        wrong.u8(1);
        let wrong = wrong.finish();
        assert!(matches!(Reader::new(&wrong, MAGIC), Err(Error::Format(_))));
    }

    #[test]
    fn oversized_reads_and_leftovers_are_rejected() {
        let mut w = Writer::new(MAGIC);
        w.u32(5);
        let data = w.finish();
        let mut r = Reader::new(&data, MAGIC).unwrap();
        assert!(matches!(r.f64_vec(100), Err(Error::Format(_))));

        let r = Reader::new(&data, MAGIC).unwrap();
        assert!(r.finish().is_err());
    }
}
