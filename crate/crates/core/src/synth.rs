//! Synthetic four-class sequence corpora with controllable difficulty.
//!
//! Frame `t` of an utterance of class `c` is
//! `x_t = μ_c + u + σ_f·ε_t`, where the class means `μ_c` have per-dimension
//! standard deviation `class_scale`, `u` is a per-utterance offset with
//! per-dimension deviation `utterance_noise` and `ε_t` is white noise.
//! Averaging over time removes most of the frame noise but none of the
//! utterance offset, so `class_scale / utterance_noise` sets how separable
//! the pooled vectors are.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_manifest, Emotion, UtteranceRecord, NUM_CLASSES, NUM_SESSIONS};
use crate::emb::write_container;
use crate::error::{Error, Result};
use crate::numcore::Matrix;
use crate::sequence::{FrameSequence, SourceKind};
use crate::train::{EmbeddingDir, InMemorySource};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Acoustic feature kind; fixes the frame width and hop.
    pub kind: SourceKind,
    pub per_class_per_session: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub class_scale: f64,
    pub utterance_noise: f64,
    pub frame_noise: f64,
    /// Also generate BERT-width token sequences and transcripts.
    pub with_text: bool,
    pub seed: u64,
}

impl SynthConfig {
    /// Classes far apart relative to all noise.
    pub fn separable(kind: SourceKind) -> Self {
        SynthConfig {
            kind,
            per_class_per_session: 20,
            min_frames: 20,
            max_frames: 100,
            class_scale: 1.0,
            utterance_noise: 0.5,
            frame_noise: 1.0,
            with_text: false,
            seed: 0,
        }
    }

    /// Overlapping classes, where more training data keeps helping.
    pub fn degraded(kind: SourceKind) -> Self {
        SynthConfig {
            class_scale: 0.2,
            utterance_noise: 1.0,
            ..Self::separable(kind)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == SourceKind::Bert {
            return Err(Error::Config("synthetic audio must be lld or wav2vec".into()));
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return Err(Error::Config(format!(
                "frame range {}..={} is empty",
                self.min_frames, self.max_frames
            )));
        }
        let scales = [self.class_scale, self.utterance_noise, self.frame_noise];
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("noise scales must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Range of generated transcript lengths, in tokens.
const TEXT_TOKENS: (usize, usize) = (2, 12);

pub struct SyntheticSet {
    pub records: Vec<UtteranceRecord>,
    pub source: InMemorySource,
}

fn gaussian(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Generates `per_class_per_session` utterances of every class in each of
/// the five sessions.
pub fn generate(config: &SynthConfig) -> Result<SyntheticSet> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n = config.kind.dim();
    let text_dim = SourceKind::Bert.dim();
    let means: Vec<Vec<f64>> = (0..NUM_CLASSES)
        .map(|_| gaussian(&mut rng, n, config.class_scale))
        .collect();
    let text_means: Vec<Vec<f64>> = (0..NUM_CLASSES)
        .map(|_| gaussian(&mut rng, text_dim, config.class_scale))
        .collect();
    let hop = config.kind.default_hop_ms();

    let mut records = Vec::new();
    let mut source = InMemorySource::new();
    for session in 1..=NUM_SESSIONS {
        for class in Emotion::ALL {
            for i in 0..config.per_class_per_session {
                let id = format!("syn{session}_{}_{i:04}", class.name());
                let frames = rng.gen_range(config.min_frames..=config.max_frames);
                let offset = gaussian(&mut rng, n, config.utterance_noise);
                let mean = &means[class.index()];
                let mut m = Matrix::zeros(frames, n);
                for t in 0..frames {
                    for (j, v) in m.row_mut(t).iter_mut().enumerate() {
                        let e: f64 = rng.sample(StandardNormal);
                        *v = mean[j] + offset[j] + config.frame_noise * e;
                    }
                }
                source.insert(id.clone(), FrameSequence::new(m, hop, config.kind)?);

                let transcript = if config.with_text {
                    let tokens = rng.gen_range(TEXT_TOKENS.0..=TEXT_TOKENS.1);
                    let offset = gaussian(&mut rng, text_dim, config.utterance_noise);
                    let mean = &text_means[class.index()];
                    let mut m = Matrix::zeros(tokens, text_dim);
                    for t in 0..tokens {
                        for (j, v) in m.row_mut(t).iter_mut().enumerate() {
                            let e: f64 = rng.sample(StandardNormal);
                            *v = mean[j] + offset[j] + config.frame_noise * e;
                        }
                    }
                    source.insert(id.clone(), FrameSequence::new(m, 0.0, SourceKind::Bert)?);
                    vec!["tok"; tokens].join(" ")
                } else {
                    String::new()
                };

                records.push(UtteranceRecord {
                    audio: PathBuf::from(format!("wav/{id}.wav")),
                    id,
                    session,
                    speaker: format!("Ses{session:02}"),
                    label: class,
                    transcript,
                    duration_s: frames as f64 * hop / 1000.0,
                });
            }
        }
    }
    Ok(SyntheticSet { records, source })
}

impl SyntheticSet {
    /// Writes `manifest.jsonl` into `dir` and every sequence as
    /// `dir/emb/<kind>/<id>.emb1`. Returns the embedding root.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_manifest(&self.records, dir.join("manifest.jsonl"))?;
        let emb = EmbeddingDir::new(dir.join("emb"));
        for (id, seq) in self.source.iter() {
            write_container(seq, emb.path(id, seq.kind()))?;
        }
        Ok(emb.root().to_path_buf())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::class_counts;
    use crate::train::FeatureSource;

    #[test]
    fn shape_and_balance() {
        let mut cfg = SynthConfig::separable(SourceKind::Lld);
        cfg.per_class_per_session = 3;
        cfg.with_text = true;
        let set = generate(&cfg).unwrap();
        assert_eq!(set.records.len(), 60);
        assert_eq!(class_counts(&set.records), [15; 4]);
        for r in &set.records {
            let a = set.source.load(&r.id, SourceKind::Lld).unwrap();
            assert!((20..=100).contains(&a.len()) && a.dim() == 34);
            let t = set.source.load(&r.id, SourceKind::Bert).unwrap();
            assert_eq!(t.len(), r.transcript.split(' ').count());
        }
    }

    #[test]
    fn seeded() {
        let mut cfg = SynthConfig::degraded(SourceKind::Wav2vec);
        cfg.per_class_per_session = 1;
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        let id = &a.records[7].id;
        assert_eq!(
            a.source.load(id, SourceKind::Wav2vec).unwrap(),
            b.source.load(id, SourceKind::Wav2vec).unwrap()
        );
    }
}
