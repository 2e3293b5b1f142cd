//! Frame-level feature sequences.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Matrix;

/// Number of hand-engineered descriptors per frame.
pub const LLD_DIM: usize = 34;
/// Width of the pretrained speech representations.
pub const WAV2VEC_DIM: usize = 512;
/// Width of the pretrained text token embeddings.
pub const BERT_DIM: usize = 768;

/// Where a frame sequence came from. The discriminant is the on-disk code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
#[repr(u8)]
pub enum SourceKind {
    Lld = 0,
    Wav2vec = 1,
    Bert = 2,
}

impl SourceKind {
    pub const ALL: [SourceKind; 3] = [SourceKind::Lld, SourceKind::Wav2vec, SourceKind::Bert];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.code() == code)
    }

    /// Required feature dimension.
    pub fn dim(self) -> usize {
        match self {
            SourceKind::Lld => LLD_DIM,
            SourceKind::Wav2vec => WAV2VEC_DIM,
            SourceKind::Bert => BERT_DIM,
        }
    }

    /// Frame hop used by the producer of this kind; 0 for text tokens.
    pub fn default_hop_ms(self) -> f64 {
        match self {
            SourceKind::Lld => 25.0,
            SourceKind::Wav2vec => 10.0,
            SourceKind::Bert => 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SourceKind::Lld => "lld",
            SourceKind::Wav2vec => "wav2vec",
            SourceKind::Bert => "bert",
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown feature kind {s:?}")))
    }
}

/// A `T×n` time-major matrix of per-frame features.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Matrix,
    frame_hop_ms: f64,
    kind: SourceKind,
}

impl FrameSequence {
    /// Validates `T ≥ 1`, finite values and the width required by `kind`.
    pub fn new(frames: Matrix, frame_hop_ms: f64, kind: SourceKind) -> Result<Self> {
        if frames.rows() == 0 {
            return Err(Error::Data(format!("{kind} sequence has no frames")));
        }
        if frames.cols() != kind.dim() {
            return Err(Error::EmbeddingDimension {
                kind,
                expected: kind.dim(),
                found: frames.cols(),
            });
        }
        if !frames.is_finite() {
            return Err(Error::Data(format!("{kind} sequence has non-finite values")));
        }
        if !(frame_hop_ms.is_finite() && frame_hop_ms >= 0.0) {
            return Err(Error::Data(format!("invalid frame hop {frame_hop_ms} ms")));
        }
        Ok(FrameSequence {
            frames,
            frame_hop_ms,
            kind,
        })
    }

    pub fn frames(&self) -> &Matrix {
        &self.frames
    }

    pub fn into_frames(self) -> Matrix {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.frames.cols()
    }

    pub fn frame_hop_ms(&self) -> f64 {
        self.frame_hop_ms
    }

    pub fn kind(&self) -> SourceKind {
        self.kind
    }

    pub(crate) fn truncate(&mut self, frames: usize) {
        self.frames.truncate_rows(frames.max(1));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_round_trip_through_codes_and_names() {
        for k in SourceKind::ALL {
            assert_eq!(SourceKind::from_code(k.code()), Some(k));
            assert_eq!(k.name().parse::<SourceKind>().unwrap(), k);
        }
        assert_eq!(SourceKind::from_code(3), None);
    }

    #[test]
    fn rejects_wrong_width_and_empty() {
        assert!(matches!(
            FrameSequence::new(Matrix::zeros(4, 300), 10.0, SourceKind::Wav2vec),
            Err(Error::EmbeddingDimension { found: 300, .. })
        ));
        assert!(FrameSequence::new(Matrix::zeros(0, 34), 25.0, SourceKind::Lld).is_err());
        let mut m = Matrix::zeros(2, 34);
        m.set(1, 3, f64::NAN);
        assert!(FrameSequence::new(m, 25.0, SourceKind::Lld).is_err());
    }
}
