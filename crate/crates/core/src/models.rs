//! Utterance classifiers over frame sequences.
//!
//! Four acoustic heads differ only in how they reduce a `T×n` sequence to
//! one vector before a dense softmax layer:
//!
//! * `mean_pool`: columnwise mean.
//! * `mean_max_pool`: mean and columnwise max, concatenated.
//! * `attention_pool`: softmax over per-frame scalar scores `w·x_t + b`,
//!   then the weighted sum.
//! * `mlp_pool`: a per-frame MLP with weights shared across time, then the
//!   mean.
//!
//! `bimodal_align` runs a Bi-LSTM over audio frames, lets every text token
//! attend over the audio states, runs a second Bi-LSTM over the
//! `[token ; aligned audio]` sequence and mean-pools its states.
//!
//! All heads take padded batches and are mask-aware: a padded batch gives
//! the same logits as running each utterance alone.

use std::borrow::Borrow;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::numcore::{
    bilstm, glorot_uniform, LstmSlots, Matrix, ParamId, ParamStore, Segments, Tape, Var,
};
use crate::sequence::{BERT_DIM, LLD_DIM};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    MeanPool,
    MeanMaxPool,
    AttentionPool,
    MlpPool,
    BimodalAlign,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::MeanPool,
        ModelKind::MeanMaxPool,
        ModelKind::AttentionPool,
        ModelKind::MlpPool,
        ModelKind::BimodalAlign,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::MeanPool => "mean_pool",
            ModelKind::MeanMaxPool => "mean_max_pool",
            ModelKind::AttentionPool => "attention_pool",
            ModelKind::MlpPool => "mlp_pool",
            ModelKind::BimodalAlign => "bimodal_align",
        }
    }

    /// Row label used in printed result tables.
    pub fn title(self) -> &'static str {
        match self {
            ModelKind::MeanPool => "Mean pooling",
            ModelKind::MeanMaxPool => "Mean+Max pooling",
            ModelKind::AttentionPool => "Attention pooling",
            ModelKind::MlpPool => "MLP with pooling",
            ModelKind::BimodalAlign => "Bi-LSTM with attention alignment",
        }
    }

    pub fn is_recurrent(self) -> bool {
        self == ModelKind::BimodalAlign
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean_max" => return Ok(ModelKind::MeanMaxPool),
            "attention" => return Ok(ModelKind::AttentionPool),
            "mlp" => return Ok(ModelKind::MlpPool),
            _ => {}
        }
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model {s:?}")))
    }
}

/// Architecture and size of a classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Acoustic frame width.
    pub input_dim: usize,
    /// Text token width, bimodal only.
    pub text_dim: Option<usize>,
    pub num_classes: usize,
    /// Per-frame MLP widths, `mlp_pool` only.
    pub mlp_hidden: Vec<usize>,
    /// LSTM units per direction, `bimodal_align` only.
    pub rnn_hidden: usize,
    /// Additive-attention width, `bimodal_align` only.
    pub attn_dim: usize,
    pub dropout_rate: f64,
}

/// MLP widths that give LLD and pretrained inputs roughly equal capacity.
pub fn default_mlp_hidden(input_dim: usize) -> Vec<usize> {
    if input_dim == LLD_DIM {
        vec![416, 416]
    } else {
        vec![256, 256]
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind, input_dim: usize) -> Self {
        ModelSpec {
            kind,
            input_dim,
            text_dim: (kind == ModelKind::BimodalAlign).then_some(BERT_DIM),
            num_classes: NUM_CLASSES,
            mlp_hidden: if kind == ModelKind::MlpPool {
                default_mlp_hidden(input_dim)
            } else {
                Vec::new()
            },
            rnn_hidden: 128,
            attn_dim: 128,
            dropout_rate: 0.2,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn with_mlp_hidden(mut self, hidden: Vec<usize>) -> Self {
        self.mlp_hidden = hidden;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes != NUM_CLASSES {
            return bad(format!("num_classes must be {NUM_CLASSES}"));
        }
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout rate must be in [0, 1), got {}", self.dropout_rate));
        }
        let is_mlp = self.kind == ModelKind::MlpPool;
        if is_mlp == self.mlp_hidden.is_empty() {
            return bad("mlp_hidden must be non-empty exactly for mlp_pool".into());
        }
        if self.mlp_hidden.contains(&0) {
            return bad("mlp_hidden widths must be positive".into());
        }
        if self.kind == ModelKind::BimodalAlign {
            if self.text_dim.unwrap_or(0) == 0 || self.rnn_hidden == 0 || self.attn_dim == 0 {
                return bad("bimodal_align needs text_dim, rnn_hidden and attn_dim".into());
            }
        } else if self.text_dim.is_some() {
            return bad(format!("{} takes no text input", self.kind));
        }
        Ok(())
    }

    /// Width of the pooled utterance vector.
    pub fn pooled_dim(&self) -> usize {
        match self.kind {
            ModelKind::MeanPool | ModelKind::AttentionPool => self.input_dim,
            ModelKind::MeanMaxPool => 2 * self.input_dim,
            ModelKind::MlpPool => *self.mlp_hidden.last().expect("validated"),
            ModelKind::BimodalAlign => 2 * self.rnn_hidden,
        }
    }
}

/// A padded batch of sequences of equal width.
#[derive(Clone, Debug, PartialEq)]
pub struct SeqBatch {
    pub frames: Matrix,
    pub segments: Segments,
}

impl SeqBatch {
    /// Stacks `T_b×n` sequences into `(B·T_max)×n`, zero-padding the tail
    /// of shorter ones.
    pub fn pack<M: Borrow<Matrix>>(seqs: &[M]) -> Result<Self> {
        let lengths: Vec<usize> = seqs.iter().map(|s| s.borrow().rows()).collect();
        let segments = Segments::from_lengths(lengths)?;
        let cols = seqs[0].borrow().cols();
        let mut frames = Matrix::zeros(segments.rows(), cols);
        for (b, s) in seqs.iter().enumerate() {
            let s = s.borrow();
            if s.cols() != cols {
                return Err(Error::Dimension {
                    op: "pack",
                    left: (s.rows(), cols),
                    right: s.shape(),
                });
            }
            let start = segments.row(b, 0) * cols;
            frames.data_mut()[start..start + s.len()].copy_from_slice(s.data());
        }
        Ok(SeqBatch { frames, segments })
    }

    pub fn batch(&self) -> usize {
        self.segments.batch()
    }
}

/// Model input: audio frames and, for the bimodal head, text tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub audio: SeqBatch,
    pub text: Option<SeqBatch>,
}

impl Batch {
    pub fn acoustic<M: Borrow<Matrix>>(audio: &[M]) -> Result<Self> {
        Ok(Batch {
            audio: SeqBatch::pack(audio)?,
            text: None,
        })
    }

    pub fn bimodal<A: Borrow<Matrix>, T: Borrow<Matrix>>(audio: &[A], text: &[T]) -> Result<Self> {
        if audio.len() != text.len() {
            return Err(Error::Data(format!(
                "{} audio sequences but {} transcripts",
                audio.len(),
                text.len()
            )));
        }
        Ok(Batch {
            audio: SeqBatch::pack(audio)?,
            text: Some(SeqBatch::pack(text)?),
        })
    }

    pub fn len(&self) -> usize {
        self.audio.batch()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Tape handles produced by a forward pass.
#[derive(Clone, Copy, Debug)]
pub struct HeadOutput {
    /// `B×m` utterance vectors fed to the output layer (before dropout).
    pub pooled: Var,
    pub logits: Var,
    /// The attention-pooling node, if the head has one; its weights are
    /// available through [`Tape::attention_weights`].
    pub attention: Option<Var>,
}

/// Parameter layout of a spec. Names are stable and used in checkpoints.
fn register(spec: &ModelSpec, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
    let k = spec.num_classes;
    match spec.kind {
        ModelKind::MeanPool | ModelKind::MeanMaxPool => {}
        ModelKind::AttentionPool => {
            store.add("att.w", glorot_uniform(spec.input_dim, 1, rng))?;
            store.add("att.b", Matrix::zeros(1, 1))?;
        }
        ModelKind::MlpPool => {
            let mut width = spec.input_dim;
            for (i, &h) in spec.mlp_hidden.iter().enumerate() {
                store.add(format!("mlp.{i}.w"), glorot_uniform(width, h, rng))?;
                store.add(format!("mlp.{i}.b"), Matrix::zeros(1, h))?;
                width = h;
            }
        }
        ModelKind::BimodalAlign => {
            let h = spec.rnn_hidden;
            let text_dim = spec.text_dim.expect("validated");
            LstmSlots::register(store, "audio_rnn.fwd", spec.input_dim, h, rng)?;
            LstmSlots::register(store, "audio_rnn.bwd", spec.input_dim, h, rng)?;
            store.add("text_proj.w", glorot_uniform(text_dim, 2 * h, rng))?;
            store.add("text_proj.b", Matrix::zeros(1, 2 * h))?;
            store.add("align.w_audio", glorot_uniform(2 * h, spec.attn_dim, rng))?;
            store.add("align.w_text", glorot_uniform(2 * h, spec.attn_dim, rng))?;
            store.add("align.b", Matrix::zeros(1, spec.attn_dim))?;
            store.add("align.v", glorot_uniform(spec.attn_dim, 1, rng))?;
            LstmSlots::register(store, "fusion_rnn.fwd", 4 * h, h, rng)?;
            LstmSlots::register(store, "fusion_rnn.bwd", 4 * h, h, rng)?;
        }
    }
    store.add("out.w", glorot_uniform(spec.pooled_dim(), k, rng))?;
    store.add("out.b", Matrix::zeros(1, k))?;
    Ok(())
}

/// A classifier: its spec plus trainable parameters.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
}

impl Model {
    /// Glorot-uniform weights, zero biases, LSTM forget bias +1.
    pub fn new(spec: ModelSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        register(&spec, &mut params, rng)?;
        Ok(Model { spec, params })
    }

    /// Wraps existing parameters after checking names and shapes.
    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Self> {
        spec.validate()?;
        let mut expected = ParamStore::new();
        register(&spec, &mut expected, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        if expected.len() != params.len() {
            return Err(Error::CheckpointMismatch(format!(
                "expected {} slots, found {}",
                expected.len(),
                params.len()
            )));
        }
        for (e, p) in expected.slots().iter().zip(params.slots()) {
            if e.name != p.name || e.value.shape() != p.value.shape() {
                return Err(Error::CheckpointMismatch(format!(
                    "slot {:?} {:?} does not match expected {:?} {:?}",
                    p.name,
                    p.value.shape(),
                    e.name,
                    e.value.shape()
                )));
            }
        }
        Ok(Model { spec, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore {
        self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    fn bind(&self, tape: &mut Tape, name: &str) -> Result<Var> {
        let id: ParamId = self.params.require(name)?;
        Ok(tape.param(&self.params, id))
    }

    fn output(&self, tape: &mut Tape, pooled: Var) -> Result<Var> {
        let w = self.bind(tape, "out.w")?;
        let b = self.bind(tape, "out.b")?;
        tape.dense(pooled, w, b)
    }

    /// Records the forward pass on `tape`. Dropout is active only when
    /// `training` is set.
    pub fn forward<R: Rng>(
        &self,
        tape: &mut Tape,
        batch: &Batch,
        training: bool,
        rng: &mut R,
    ) -> Result<HeadOutput> {
        let spec = &self.spec;
        let segs = &batch.audio.segments;
        if batch.audio.frames.cols() != spec.input_dim {
            return Err(Error::Dimension {
                op: "model input",
                left: batch.audio.frames.shape(),
                right: (batch.audio.frames.rows(), spec.input_dim),
            });
        }
        let x = tape.input(batch.audio.frames.clone());
        let rate = spec.dropout_rate;
        let mut attention = None;

        let pooled = match spec.kind {
            ModelKind::MeanPool => tape.seg_mean(x, segs)?,
            ModelKind::MeanMaxPool => {
                let mean = tape.seg_mean(x, segs)?;
                let max = tape.seg_max(x, segs)?;
                tape.concat_cols(mean, max)?
            }
            ModelKind::AttentionPool => {
                let w = self.bind(tape, "att.w")?;
                let b = self.bind(tape, "att.b")?;
                let scores = tape.dense(x, w, b)?;
                let pooled = tape.attn_pool(x, scores, segs)?;
                attention = Some(pooled);
                pooled
            }
            ModelKind::MlpPool => {
                let mut h = x;
                for i in 0..spec.mlp_hidden.len() {
                    let w = self.bind(tape, &format!("mlp.{i}.w"))?;
                    let b = self.bind(tape, &format!("mlp.{i}.b"))?;
                    let z = tape.dense(h, w, b)?;
                    let a = tape.relu(z);
                    h = tape.dropout(a, rate, training, rng)?;
                }
                tape.seg_mean(h, segs)?
            }
            ModelKind::BimodalAlign => {
                let text = batch.text.as_ref().ok_or_else(|| {
                    Error::Data("bimodal_align requires text token sequences".into())
                })?;
                let (pooled, ctx) = self.align_forward(tape, x, segs, text, training, rng)?;
                attention = Some(ctx);
                pooled
            }
        };

        // The MLP head already applied dropout after its last layer.
        let head_in = if spec.kind == ModelKind::MlpPool {
            pooled
        } else {
            tape.dropout(pooled, rate, training, rng)?
        };
        let logits = self.output(tape, head_in)?;
        Ok(HeadOutput {
            pooled,
            logits,
            attention,
        })
    }

    fn align_forward<R: Rng>(
        &self,
        tape: &mut Tape,
        audio: Var,
        audio_segs: &Segments,
        text: &SeqBatch,
        training: bool,
        rng: &mut R,
    ) -> Result<(Var, Var)> {
        let spec = &self.spec;
        let rate = spec.dropout_rate;
        let text_segs = &text.segments;
        if text_segs.batch() != audio_segs.batch() {
            return Err(Error::Data("audio and text batch sizes differ".into()));
        }
        if Some(text.frames.cols()) != spec.text_dim {
            return Err(Error::Dimension {
                op: "text input",
                left: text.frames.shape(),
                right: (text.frames.rows(), spec.text_dim.unwrap_or(0)),
            });
        }
        let lstm = |tape: &mut Tape, prefix: &str| -> Result<_> {
            Ok(LstmSlots::lookup(&self.params, prefix)?.bind(tape, &self.params))
        };

        let a_fwd = lstm(tape, "audio_rnn.fwd")?;
        let a_bwd = lstm(tape, "audio_rnn.bwd")?;
        let states = bilstm(tape, audio, audio_segs, &a_fwd, &a_bwd)?;
        let states = tape.dropout(states, rate, training, rng)?;

        let t = tape.input(text.frames.clone());
        let pw = self.bind(tape, "text_proj.w")?;
        let pb = self.bind(tape, "text_proj.b")?;
        let tokens = tape.dense(t, pw, pb)?;
        let tokens = tape.dropout(tokens, rate, training, rng)?;

        // s_jt = v · tanh(W_a h_t + W_e e_j + b)
        let wa = self.bind(tape, "align.w_audio")?;
        let we = self.bind(tape, "align.w_text")?;
        let ab = self.bind(tape, "align.b")?;
        let v = self.bind(tape, "align.v")?;
        let audio_keys = tape.matmul(states, wa)?;
        let text_keys = tape.dense(tokens, we, ab)?;
        let pairs = tape.pairwise_add(audio_keys, text_keys, audio_segs, text_segs)?;
        let act = tape.tanh(pairs);
        let scores = tape.matmul(act, v)?;
        let context = tape.align_pool(states, scores, audio_segs, text_segs)?;

        let fused = tape.concat_cols(tokens, context)?;
        let f_fwd = lstm(tape, "fusion_rnn.fwd")?;
        let f_bwd = lstm(tape, "fusion_rnn.bwd")?;
        let fused_states = bilstm(tape, fused, text_segs, &f_fwd, &f_bwd)?;
        let fused_states = tape.dropout(fused_states, rate, training, rng)?;
        let pooled = tape.seg_mean(fused_states, text_segs)?;
        Ok((pooled, context))
    }

    /// Inference-mode logits, `B×K`.
    pub fn predict(&self, batch: &Batch) -> Result<Matrix> {
        let mut tape = Tape::new();
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let out = self.forward(&mut tape, batch, false, &mut rng)?;
        Ok(tape.value(out.logits).clone())
    }

    /// Inference-mode pooled vectors, `B×m`.
    pub fn pooled(&self, batch: &Batch) -> Result<Matrix> {
        let mut tape = Tape::new();
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let out = self.forward(&mut tape, batch, false, &mut rng)?;
        Ok(tape.value(out.pooled).clone())
    }
}

/// Index of the largest entry per row; ties go to the lowest index.
pub fn argmax_rows(logits: &Matrix) -> Vec<usize> {
    logits
        .iter_rows()
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect()
}

const CKPT_MAGIC: [u8; 4] = *b"SPRM";
const CKPT_VERSION: u16 = 1;

/// Parameter checkpoint: magic `SPRM`, `u16` version, `u32` slot count,
/// then per slot a `u16`-length UTF-8 name, `u32` rows, `u32` cols and
/// `f64` payload; a CRC-32 of all preceding bytes closes the file. All
/// integers little-endian.
pub fn encode_checkpoint(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for slot in params.slots() {
        out.extend_from_slice(&(slot.name.len() as u16).to_le_bytes());
        out.extend_from_slice(slot.name.as_bytes());
        out.extend_from_slice(&(slot.value.rows() as u32).to_le_bytes());
        out.extend_from_slice(&(slot.value.cols() as u32).to_le_bytes());
        for v in slot.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParamStore> {
    if bytes.len() < 14 {
        return Err(Error::Length {
            expected: 14,
            found: bytes.len() as u64,
        });
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let magic: [u8; 4] = body[..4].try_into().expect("4 bytes");
    if magic != CKPT_MAGIC {
        return Err(Error::BadMagic {
            found: magic,
            expected: CKPT_MAGIC,
        });
    }
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::ChecksumMismatch { stored, computed });
    }
    let version = u16::from_le_bytes([body[4], body[5]]);
    if version != CKPT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let mut cursor = Cursor { buf: body, pos: 6 };
    let count = cursor.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = cursor.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))? as usize;
        let name = std::str::from_utf8(cursor.take(name_len)?)
            .map_err(|e| Error::Data(format!("checkpoint slot name: {e}")))?
            .to_string();
        let rows = cursor.u32()? as usize;
        let cols = cursor.u32()? as usize;
        let data = cursor
            .take(rows * cols * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        store.add(name, Matrix::from_vec(rows, cols, data)?)?;
    }
    if cursor.pos != body.len() {
        return Err(Error::Length {
            expected: cursor.pos as u64 + 4,
            found: bytes.len() as u64,
        });
    }
    Ok(store)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::Length {
                expected: end as u64 + 4,
                found: self.buf.len() as u64 + 4,
            });
        }
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model.params())).map_err(|e| Error::io(path, e))
}

/// Loads parameters and checks them against `spec`.
pub fn load_checkpoint(spec: ModelSpec, path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Model::from_params(spec, decode_checkpoint(&bytes)?)
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    fn toy(kind: ModelKind, n: usize) -> Model {
        let mut spec = ModelSpec::new(kind, n).with_dropout(0.0);
        if kind == ModelKind::MlpPool {
            spec.mlp_hidden = vec![n];
        }
        Model::new(spec, &mut rng()).unwrap()
    }

    fn two_frames() -> Batch {
        Batch::acoustic(&[Matrix::from_rows(&[[1.0, 3.0], [3.0, 5.0]])]).unwrap()
    }

    #[test]
    fn mean_and_mean_max_pooled_vectors() {
        let pooled = toy(ModelKind::MeanPool, 2).pooled(&two_frames()).unwrap();
        assert_eq!(pooled, Matrix::from_rows(&[[2.0, 4.0]]));
        let pooled = toy(ModelKind::MeanMaxPool, 2).pooled(&two_frames()).unwrap();
        assert_eq!(pooled, Matrix::from_rows(&[[2.0, 4.0, 3.0, 5.0]]));
    }

    #[test]
    fn single_frame_pools_to_itself() {
        let batch = Batch::acoustic(&[Matrix::from_rows(&[[0.5, -2.0, 7.0]])]).unwrap();
        for kind in [ModelKind::MeanPool, ModelKind::AttentionPool] {
            assert_eq!(toy(kind, 3).pooled(&batch).unwrap(), Matrix::from_rows(&[[0.5, -2.0, 7.0]]));
        }
    }

    #[test]
    fn constant_sequence_mean_equals_max() {
        let batch = Batch::acoustic(&[Matrix::filled(6, 3, 1.25)]).unwrap();
        let p = toy(ModelKind::MeanMaxPool, 3).pooled(&batch).unwrap();
        assert_eq!(&p.data()[..3], &p.data()[3..]);
    }

    #[test]
    fn mean_max_doubles_classifier() {
        let n = 34;
        let mean = toy(ModelKind::MeanPool, n).num_params();
        let mean_max = toy(ModelKind::MeanMaxPool, n).num_params();
        assert_eq!(mean, n * 4 + 4);
        assert_eq!(mean_max, 2 * n * 4 + 4);
    }

    #[test]
    fn saturated_attention_picks_one_frame() {
        let mut m = toy(ModelKind::AttentionPool, 2);
        let w = m.params().require("att.w").unwrap();
        // Frame scores 0, 50, 0 along the first feature.
        *m.params_mut().value_mut(w) = Matrix::from_rows(&[[1.0], [0.0]]);
        let frames = Matrix::from_rows(&[[0.0, 1.0], [50.0, 2.0], [0.0, 3.0]]);
        let pooled = m.pooled(&Batch::acoustic(&[frames]).unwrap()).unwrap();
        assert!((pooled.get(0, 0) - 50.0).abs() < 1e-6 * 50.0);
        assert!((pooled.get(0, 1) - 2.0).abs() < 1e-6);
    }

    #[test]
    fn identity_mlp_reduces_to_mean() {
        let mut m = toy(ModelKind::MlpPool, 2);
        let w = m.params().require("mlp.0.w").unwrap();
        *m.params_mut().value_mut(w) = Matrix::identity(2);
        let pooled = m.pooled(&two_frames()).unwrap();
        assert_eq!(pooled, Matrix::from_rows(&[[2.0, 4.0]]));
    }

    #[test]
    fn spec_validation() {
        let mut spec = ModelSpec::new(ModelKind::MeanPool, 34);
        spec.mlp_hidden = vec![8];
        assert!(spec.validate().is_err());
        assert!(ModelSpec::new(ModelKind::MlpPool, 34).with_mlp_hidden(vec![]).validate().is_err());
        let mut spec = ModelSpec::new(ModelKind::MeanPool, 34);
        spec.num_classes = 3;
        assert!(spec.validate().is_err());
        assert!(ModelSpec::new(ModelKind::BimodalAlign, 512).validate().is_ok());
    }

    #[test]
    fn bimodal_requires_text() {
        let spec = ModelSpec {
            text_dim: Some(3),
            rnn_hidden: 2,
            attn_dim: 2,
            ..ModelSpec::new(ModelKind::BimodalAlign, 2)
        };
        let m = Model::new(spec, &mut rng()).unwrap();
        assert!(matches!(m.predict(&two_frames()), Err(Error::Data(_))));
    }

    #[test]
    fn checkpoint_round_trip_and_mismatch() {
        let m = toy(ModelKind::MlpPool, 3);
        let bytes = encode_checkpoint(m.params());
        let back = Model::from_params(m.spec().clone(), decode_checkpoint(&bytes).unwrap()).unwrap();
        for (a, b) in m.params().slots().iter().zip(back.params().slots()) {
            assert_eq!(a.value, b.value);
        }
        let other = ModelSpec::new(ModelKind::MlpPool, 3).with_mlp_hidden(vec![4]);
        assert!(matches!(
            Model::from_params(other, decode_checkpoint(&bytes).unwrap()),
            Err(Error::CheckpointMismatch(_))
        ));
        let mut corrupt = bytes.clone();
        corrupt[20] ^= 1;
        assert!(matches!(decode_checkpoint(&corrupt), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn argmax_prefers_first_on_ties() {
        let m = Matrix::from_rows(&[[0.0, 1.0, 1.0, 0.0], [2.0, 2.0, 2.0, 2.0]]);
        assert_eq!(argmax_rows(&m), vec![1, 0]);
    }
}
