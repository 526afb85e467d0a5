//! Shared layout of the binary files: magic, version, body, CRC32 trailer.

use crate::error::{Error, Result};

const VERSION_LEN: usize = 2;
const CRC_LEN: usize = 4;

pub(crate) struct Layout {
    pub what: &'static str,
    pub magic: &'static [u8],
    pub version: u16,
    /// Fixed header bytes that follow the version field.
    pub fixed_header: usize,
}

impl Layout {
    fn prefix(&self) -> usize {
        self.magic.len() + VERSION_LEN
    }

    pub fn min_len(&self) -> usize {
        self.prefix() + self.fixed_header + CRC_LEN
    }

    /// `magic | version | body | crc32(all preceding bytes)`.
    pub fn seal(&self, body: &[u8]) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.prefix() + body.len() + CRC_LEN);
        out.extend_from_slice(self.magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(body);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// Validate framing and return the body.
    ///
    /// `declared_len` reports the total file length implied by the header, when
    /// it can be read; it separates a short file from a corrupted one.
    pub fn open<'a>(&self, bytes: &'a [u8], declared_len: impl Fn(&[u8]) -> Option<u64>) -> Result<&'a [u8]> {
        let what = self.what;
        if bytes.len() < self.min_len() {
            return Err(Error::Truncated { what, needed: self.min_len() as u64, actual: bytes.len() as u64 });
        }
        let magic_diffs = self.magic.iter().zip(bytes).filter(|(a, b)| a != b).count();
        // more than one wrong byte is a foreign file rather than a damaged one
        if magic_diffs > 1 {
            return Err(Error::Format { what, reason: "unrecognised magic bytes".into() });
        }
        let (content, trailer) = bytes.split_at(bytes.len() - CRC_LEN);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        let computed = crc32fast::hash(content);
        if stored != computed {
            if let Some(needed) = declared_len(bytes) {
                if needed > bytes.len() as u64 {
                    return Err(Error::Truncated { what, needed, actual: bytes.len() as u64 });
                }
            }
            return Err(Error::Checksum { what, stored, computed });
        }
        if magic_diffs != 0 {
            return Err(Error::Format { what, reason: "unrecognised magic bytes".into() });
        }
        let found = u16::from_le_bytes([bytes[self.magic.len()], bytes[self.magic.len() + 1]]);
        if found != self.version {
            return Err(Error::Version { what, found, supported: self.version });
        }
        Ok(&content[self.prefix()..])
    }

    /// Header bytes after the version field, if the file is long enough to hold them.
    pub fn header<'a>(&self, bytes: &'a [u8]) -> Option<&'a [u8]> {
        bytes.get(self.prefix()..self.prefix() + self.fixed_header)
    }
}

pub(crate) fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub(crate) fn push_f64s(out: &mut Vec<u8>, values: &[f64]) {
    out.reserve(values.len() * 8);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) fn read_f64s(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
}
