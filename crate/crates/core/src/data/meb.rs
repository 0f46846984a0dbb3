//! MEB1 embedding files.
//!
//! Layout (little-endian):
//!
//! | field          | type                         |
//! |----------------|------------------------------|
//! | magic          | `b"MEB1"`                    |
//! | format_version | u16, must be 1               |
//! | encoder_id     | u16 byte length + UTF-8      |
//! | frame_rate_hz  | f32                          |
//! | dims           | u32                          |
//! | frames         | u32                          |
//! | payload        | frames × dims f32, row-major |
//! | crc32          | u32, CRC-32 (IEEE) of payload|

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const MEB_MAGIC: &[u8; 4] = b"MEB1";
pub const MEB_VERSION: u16 = 1;

/// One encoder's frame-level features for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence {
    pub encoder_id: String,
    pub frame_rate_hz: f32,
    pub dims: usize,
    /// `frames × dims`, row-major.
    pub data: Vec<f32>,
}

impl EmbeddingSequence {
    pub fn new(
        encoder_id: impl Into<String>,
        frame_rate_hz: f32,
        dims: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let seq = Self {
            encoder_id: encoder_id.into(),
            frame_rate_hz,
            dims,
            data,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn frames(&self) -> usize {
        self.data.len() / self.dims
    }

    pub fn duration_s(&self) -> f64 {
        self.frames() as f64 / self.frame_rate_hz as f64
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dims..(t + 1) * self.dims]
    }

    fn validate(&self) -> Result<()> {
        if self.encoder_id.is_empty() || self.encoder_id.len() > u16::MAX as usize {
            return Err(Error::Data("encoder id must be 1..=65535 bytes".into()));
        }
        if !(self.frame_rate_hz.is_finite() && self.frame_rate_hz > 0.0) {
            return Err(Error::Data(format!(
                "invalid frame rate {}",
                self.frame_rate_hz
            )));
        }
        if self.dims == 0 || self.data.is_empty() || !self.data.len().is_multiple_of(self.dims) {
            return Err(Error::Data(format!(
                "payload of {} values does not hold whole frames of {} dims",
                self.data.len(),
                self.dims
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value in `{}` embedding",
                self.encoder_id
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let id = self.encoder_id.as_bytes();
        let mut out = Vec::with_capacity(4 + 2 + 2 + id.len() + 12 + self.data.len() * 4 + 4);
        out.extend_from_slice(MEB_MAGIC);
        out.extend_from_slice(&MEB_VERSION.to_le_bytes());
        out.extend_from_slice(&(id.len() as u16).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&self.frame_rate_hz.to_le_bytes());
        out.extend_from_slice(&(self.dims as u32).to_le_bytes());
        out.extend_from_slice(&(self.frames() as u32).to_le_bytes());
        let payload_start = out.len();
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[payload_start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Parses a full file image. `path` is only used for error messages.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            path,
        };
        let magic = r.take(4, "magic")?;
        if magic != MEB_MAGIC {
            return Err(Error::format(path, 0, "bad magic, expected MEB1"));
        }
        let version = u16::from_le_bytes(r.array("format version")?);
        if version != MEB_VERSION {
            return Err(Error::format(
                path,
                4,
                format!("unsupported format version {version}"),
            ));
        }
        let id_len = u16::from_le_bytes(r.array("encoder id length")?) as usize;
        let id_off = r.pos;
        let id = std::str::from_utf8(r.take(id_len, "encoder id")?)
            .map_err(|_| Error::format(path, id_off as u64, "encoder id is not UTF-8"))?
            .to_string();
        let rate_off = r.pos;
        let frame_rate_hz = f32::from_le_bytes(r.array("frame rate")?);
        if !(frame_rate_hz.is_finite() && frame_rate_hz > 0.0) {
            return Err(Error::format(
                path,
                rate_off as u64,
                format!("invalid frame rate {frame_rate_hz}"),
            ));
        }
        let dims_off = r.pos;
        let dims = u32::from_le_bytes(r.array("dims")?) as usize;
        let frames_off = r.pos;
        let frames = u32::from_le_bytes(r.array("frames")?) as usize;
        if dims == 0 {
            return Err(Error::format(
                path,
                dims_off as u64,
                "dims must be positive",
            ));
        }
        if frames == 0 {
            return Err(Error::format(
                path,
                frames_off as u64,
                "frames must be positive",
            ));
        }
        let payload_len = frames
            .checked_mul(dims)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::format(path, dims_off as u64, "payload size overflows"))?;
        let payload_off = r.pos;
        let expected_end = payload_off + payload_len + 4;
        if bytes.len() < expected_end {
            let have = bytes.len().saturating_sub(payload_off);
            return Err(Error::format(
                path,
                bytes.len() as u64,
                format!(
                    "truncated: header declares {frames} frames × {dims} dims ({payload_len} payload bytes + 4 crc bytes) starting at offset {payload_off}, only {have} bytes remain"
                ),
            ));
        }
        if bytes.len() > expected_end {
            return Err(Error::format(
                path,
                expected_end as u64,
                format!(
                    "{} trailing bytes after checksum",
                    bytes.len() - expected_end
                ),
            ));
        }
        let payload = r.take(payload_len, "payload")?;
        let crc_off = r.pos;
        let crc = u32::from_le_bytes(r.array("checksum")?);
        if crc32fast::hash(payload) != crc {
            return Err(Error::format(
                path,
                crc_off as u64,
                "payload checksum mismatch",
            ));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::format(
                path,
                (payload_off + 4 * i) as u64,
                "non-finite payload value",
            ));
        }
        Ok(Self {
            encoder_id: id,
            frame_rate_hz,
            dims,
            data,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() < self.pos + n {
            return Err(Error::format(
                self.path,
                self.pos as u64,
                format!("truncated while reading {what}"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let s = self.take(N, what)?;
        Ok(s.try_into().expect("length checked"))
    }
}

pub fn read_embedding(path: impl AsRef<Path>) -> Result<EmbeddingSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingSequence::decode(&bytes, path)
}

pub fn write_embedding(seq: &EmbeddingSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = seq.encode()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
