//! `EMB1`: checksummed binary container for one frame sequence.
//!
//! All fields are little-endian and packed:
//!
//! | offset | size      | field                                   |
//! |--------|-----------|-----------------------------------------|
//! | 0      | 4         | magic `b"EMB1"`                         |
//! | 4      | 2         | version (`u16`, currently 1)            |
//! | 6      | 1         | source kind (`0`=lld, `1`=wav2vec, `2`=bert) |
//! | 7      | 4         | rows `T` (`u32`)                        |
//! | 11     | 4         | cols `n` (`u32`)                        |
//! | 15     | 4         | frame hop in ms (`f32`)                 |
//! | 19     | `4·T·n`   | payload, `f32`, row-major               |
//! | end−4  | 4         | CRC-32 (IEEE) of the payload bytes      |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::sequence::{FrameSequence, SourceKind};

pub const MAGIC: [u8; 4] = *b"EMB1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 19;
pub const TRAILER_LEN: usize = 4;

/// Conventional file extension, without the dot.
pub const EXTENSION: &str = "emb1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Header {
    pub version: u16,
    pub kind: SourceKind,
    pub rows: u32,
    pub cols: u32,
    pub frame_hop_ms: f32,
}

impl Header {
    pub fn payload_len(&self) -> u64 {
        self.rows as u64 * self.cols as u64 * 4
    }

    /// Exact file size implied by the header.
    pub fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + self.payload_len() + TRAILER_LEN as u64
    }
}

/// Serializes a sequence, narrowing values to `f32`.
pub fn encode(seq: &FrameSequence) -> Result<Vec<u8>> {
    let frames = seq.frames();
    let rows = u32::try_from(frames.rows())
        .map_err(|_| Error::Data("too many frames for EMB1".into()))?;
    let cols = u32::try_from(frames.cols())
        .map_err(|_| Error::Data("too many columns for EMB1".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + frames.len() * 4 + TRAILER_LEN);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(seq.kind().code());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    out.extend_from_slice(&(seq.frame_hop_ms() as f32).to_le_bytes());
    for &v in frames.data() {
        let narrow = v as f32;
        if !narrow.is_finite() {
            return Err(Error::Data(format!("value {v} does not fit in f32")));
        }
        out.extend_from_slice(&narrow.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Parses and validates the fixed header only.
pub fn decode_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Length {
            expected: (HEADER_LEN + TRAILER_LEN) as u64,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: MAGIC,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let kind = SourceKind::from_code(bytes[6])
        .ok_or_else(|| Error::Data(format!("unknown source kind code {}", bytes[6])))?;
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
    Ok(Header {
        version,
        kind,
        rows: u32_at(7),
        cols: u32_at(11),
        frame_hop_ms: f32::from_le_bytes(bytes[15..19].try_into().expect("4 bytes")),
    })
}

/// Parses a full container: header, exact length, checksum, then the
/// dimension required by the declared source kind.
pub fn decode(bytes: &[u8]) -> Result<FrameSequence> {
    let header = decode_header(bytes)?;
    if bytes.len() as u64 != header.file_len() {
        return Err(Error::Length {
            expected: header.file_len(),
            found: bytes.len() as u64,
        });
    }
    let payload = &bytes[HEADER_LEN..bytes.len() - TRAILER_LEN];
    let stored = u32::from_le_bytes(bytes[bytes.len() - TRAILER_LEN..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    if header.cols as usize != header.kind.dim() {
        return Err(Error::EmbeddingDimension {
            kind: header.kind,
            expected: header.kind.dim(),
            found: header.cols as usize,
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    let frames = Matrix::from_vec(header.rows as usize, header.cols as usize, data)?;
    FrameSequence::new(frames, header.frame_hop_ms as f64, header.kind)
}

pub fn write_container(seq: &FrameSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(seq)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<FrameSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

pub fn read_header(path: impl AsRef<Path>) -> Result<Header> {
    use std::io::Read;
    let path = path.as_ref();
    let mut buf = [0u8; HEADER_LEN];
    let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
    decode_header(&buf[..n])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lld(rows: usize) -> FrameSequence {
        let data = (0..rows * 34).map(|i| (i as f64 * 0.173).sin()).collect();
        FrameSequence::new(Matrix::from_vec(rows, 34, data).unwrap(), 25.0, SourceKind::Lld).unwrap()
    }

    #[test]
    fn round_trip_lld() {
        let seq = lld(3);
        let back = decode(&encode(&seq).unwrap()).unwrap();
        assert_eq!(back.kind(), SourceKind::Lld);
        assert_eq!(back.frame_hop_ms(), 25.0);
        assert!(back.frames().max_abs_diff(seq.frames()) < 1e-7);
    }

    #[test]
    fn wav2vec_file_size_is_exact() {
        let seq = FrameSequence::new(Matrix::zeros(498, 512), 10.0, SourceKind::Wav2vec).unwrap();
        assert_eq!(encode(&seq).unwrap().len(), 19 + 498 * 512 * 4 + 4);
    }

    #[test]
    fn truncation_is_a_length_error() {
        let bytes = encode(&lld(2)).unwrap();
        for cut in [0, 5, HEADER_LEN, bytes.len() - 1] {
            let err = decode(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, Error::Length { .. }), "cut {cut}: {err}");
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode(&lld(1)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic { .. })));
        let mut bytes = encode(&lld(1)).unwrap();
        bytes[4] = 9;
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedVersion(9))));
    }
}
