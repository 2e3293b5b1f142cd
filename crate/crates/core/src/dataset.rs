//! Manifest loading, label mapping, cropping, fold planning and
//! class-balanced subsampling.
//!
//! The manifest is JSON-lines, one utterance per line:
//!
//! ```json
//! {"id": "Ses01F_impro01_F000", "session": 1, "speaker": "Ses01F",
//!  "label_raw": "exc", "audio": "wav/Ses01F_impro01_F000.wav",
//!  "transcript": "Excuse me.", "duration_s": 1.87}
//! ```
//!
//! Relative `audio` paths resolve against the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::FrameSequence;

pub const NUM_CLASSES: usize = 4;
pub const NUM_SESSIONS: u8 = 5;
/// Utterances are cropped to this many seconds before training.
pub const MAX_DURATION_S: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Emotion {
    Neutral = 0,
    Happy = 1,
    Sad = 2,
    Angry = 3,
}

impl Emotion {
    pub const ALL: [Emotion; NUM_CLASSES] =
        [Emotion::Neutral, Emotion::Happy, Emotion::Sad, Emotion::Angry];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Emotion::Neutral => "neutral",
            Emotion::Happy => "happy",
            Emotion::Sad => "sad",
            Emotion::Angry => "angry",
        }
    }

    /// Maps an annotation label to one of the four classes. Excitement
    /// counts as happiness; anything else outside the four is `None`.
    pub fn from_raw(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "neu" | "neutral" => Some(Emotion::Neutral),
            "hap" | "happy" | "happiness" | "exc" | "excited" | "excitement" => {
                Some(Emotion::Happy)
            }
            "sad" | "sadness" => Some(Emotion::Sad),
            "ang" | "angry" | "anger" => Some(Emotion::Angry),
            _ => None,
        }
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Emotion::from_raw(s).ok_or_else(|| Error::Data(format!("not an emotion class: {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtteranceRecord {
    pub id: String,
    pub session: u8,
    pub speaker: String,
    pub label: Emotion,
    pub audio: PathBuf,
    pub transcript: String,
    pub duration_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLine {
    id: String,
    session: i64,
    speaker: String,
    label_raw: String,
    audio: String,
    #[serde(default)]
    transcript: String,
    #[serde(default)]
    duration_s: f64,
}

/// Records kept plus what was dropped by the four-class rule.
#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub records: Vec<UtteranceRecord>,
    pub excluded: usize,
    pub excluded_labels: BTreeMap<String, usize>,
}

impl LoadReport {
    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        class_counts(&self.records)
    }
}

pub fn class_counts(records: &[UtteranceRecord]) -> [usize; NUM_CLASSES] {
    let mut counts = [0; NUM_CLASSES];
    for r in records {
        counts[r.label.index()] += 1;
    }
    counts
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<LoadReport> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest(BufReader::new(file), base)
}

pub fn parse_manifest(reader: impl BufRead, base_dir: &Path) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: ManifestLine = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            line: line_no,
            message: e.to_string(),
        })?;
        if !(1..=NUM_SESSIONS as i64).contains(&raw.session) {
            return Err(Error::Manifest {
                line: line_no,
                message: format!("session {} outside 1..={NUM_SESSIONS}", raw.session),
            });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(Error::DuplicateId(raw.id));
        }
        let Some(label) = Emotion::from_raw(&raw.label_raw) else {
            report.excluded += 1;
            *report
                .excluded_labels
                .entry(raw.label_raw.trim().to_ascii_lowercase())
                .or_default() += 1;
            continue;
        };
        let audio = PathBuf::from(&raw.audio);
        let audio = if audio.is_relative() {
            base_dir.join(audio)
        } else {
            audio
        };
        report.records.push(UtteranceRecord {
            id: raw.id,
            session: raw.session as u8,
            speaker: raw.speaker,
            label,
            audio,
            transcript: raw.transcript,
            duration_s: raw.duration_s,
        });
    }
    Ok(report)
}

/// Writes records as a manifest; audio paths are written as given.
pub fn write_manifest(records: &[UtteranceRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        let line = ManifestLine {
            id: r.id.clone(),
            session: r.session as i64,
            speaker: r.speaker.clone(),
            label_raw: r.label.name().to_string(),
            audio: r.audio.to_string_lossy().into_owned(),
            transcript: r.transcript.clone(),
            duration_s: r.duration_s,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Keeps at most the first `⌊max_s · 1000 / hop⌋` frames.
pub fn crop_frames(mut seq: FrameSequence, max_s: f64) -> Result<FrameSequence> {
    let hop = seq.frame_hop_ms();
    if hop <= 0.0 {
        return Err(Error::Config(format!(
            "cannot crop {} sequence without a frame hop",
            seq.kind()
        )));
    }
    let limit = (max_s * 1000.0 / hop).floor() as usize;
    if seq.len() > limit {
        seq.truncate(limit);
    }
    Ok(seq)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    /// 1-based fold number; fold `k` tests on session `k`.
    pub index: usize,
    pub test_session: u8,
    pub train_sessions: Vec<u8>,
}

/// Leave-one-session-out split of the five sessions.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    /// Train and test records of one fold, in input order.
    pub fn split(
        &self,
        fold: &Fold,
        records: &[UtteranceRecord],
    ) -> (Vec<UtteranceRecord>, Vec<UtteranceRecord>) {
        records
            .iter()
            .cloned()
            .partition(|r| r.session != fold.test_session)
    }
}

pub fn make_folds(records: &[UtteranceRecord]) -> Result<FoldPlan> {
    let present: HashSet<u8> = records.iter().map(|r| r.session).collect();
    let missing: Vec<u8> = (1..=NUM_SESSIONS).filter(|s| !present.contains(s)).collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "cross-validation needs all {NUM_SESSIONS} sessions; missing {missing:?}"
        )));
    }
    let folds = (1..=NUM_SESSIONS)
        .map(|test| Fold {
            index: test as usize,
            test_session: test,
            train_sessions: (1..=NUM_SESSIONS).filter(|&s| s != test).collect(),
        })
        .collect();
    Ok(FoldPlan { folds })
}

/// Exactly `per_class` records of each class, drawn uniformly without
/// replacement.
///
/// Each class is sorted by id and shuffled with a stream that depends only
/// on `seed` and the class populations, then truncated. Selections for the
/// same seed are therefore nested: a larger `per_class` extends a smaller
/// one.
pub fn subsample_balanced(
    train: &[UtteranceRecord],
    per_class: usize,
    seed: u64,
) -> Result<Vec<UtteranceRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * NUM_CLASSES);
    for class in Emotion::ALL {
        let mut members: Vec<&UtteranceRecord> =
            train.iter().filter(|r| r.label == class).collect();
        if members.len() < per_class {
            return Err(Error::InsufficientClass {
                class: class.name(),
                available: members.len(),
                requested: per_class,
            });
        }
        members.sort_by(|a, b| a.id.cmp(&b.id));
        members.shuffle(&mut rng);
        out.extend(members.into_iter().take(per_class).cloned());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Matrix;
    use crate::sequence::SourceKind;

    fn parse(text: &str) -> Result<LoadReport> {
        parse_manifest(text.as_bytes(), Path::new("/data"))
    }

    fn line(id: &str, session: u8, label: &str) -> String {
        format!(
            r#"{{"id":"{id}","session":{session},"speaker":"s{session}","label_raw":"{label}","audio":"a/{id}.wav","transcript":"hi","duration_s":1.5}}"#
        )
    }

    #[test]
    fn excitement_merges_into_happy_and_fear_is_dropped() {
        let text = [line("a", 1, "exc"), line("b", 2, "fear"), line("c", 3, "sad")].join("\n");
        let report = parse(&text).unwrap();
        assert_eq!(report.records.len(), 2);
        assert_eq!(report.records[0].label, Emotion::Happy);
        assert_eq!(report.records[0].audio, PathBuf::from("/data/a/a.wav"));
        assert_eq!(report.excluded, 1);
        assert_eq!(report.excluded_labels["fear"], 1);
    }

    #[test]
    fn label_mapping_is_idempotent_on_targets() {
        for e in Emotion::ALL {
            assert_eq!(Emotion::from_raw(e.name()), Some(e));
        }
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}\n\n{{not json", line("a", 1, "neu"));
        match parse(&text) {
            Err(Error::Manifest { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_and_bad_sessions_rejected() {
        let dup = [line("a", 1, "neu"), line("a", 2, "sad")].join("\n");
        assert!(matches!(parse(&dup), Err(Error::DuplicateId(id)) if id == "a"));
        assert!(matches!(parse(&line("x", 6, "neu")), Err(Error::Manifest { line: 1, .. })));
    }

    fn seq(frames: usize, hop: f64) -> FrameSequence {
        FrameSequence::new(Matrix::zeros(frames, 512), hop, SourceKind::Wav2vec).unwrap()
    }

    #[test]
    fn crop_lengths() {
        assert_eq!(crop_frames(seq(700, 10.0), 5.0).unwrap().len(), 500);
        assert_eq!(crop_frames(seq(300, 10.0), 5.0).unwrap().len(), 300);
        assert_eq!(crop_frames(seq(500, 10.0), 5.0).unwrap().len(), 500);
        let bert = FrameSequence::new(Matrix::zeros(3, 768), 0.0, SourceKind::Bert).unwrap();
        assert!(crop_frames(bert, 5.0).is_err());
    }

    fn records(per_class_per_session: usize) -> Vec<UtteranceRecord> {
        let mut out = Vec::new();
        for s in 1..=5 {
            for e in Emotion::ALL {
                for i in 0..per_class_per_session {
                    out.push(UtteranceRecord {
                        id: format!("s{s}_{e}_{i}"),
                        session: s,
                        speaker: format!("spk{s}"),
                        label: e,
                        audio: PathBuf::new(),
                        transcript: String::new(),
                        duration_s: 1.0,
                    });
                }
            }
        }
        out
    }

    #[test]
    fn fold_five_trains_on_first_four() {
        let plan = make_folds(&records(1)).unwrap();
        assert_eq!(plan.folds.len(), 5);
        assert_eq!(plan.folds[4].test_session, 5);
        assert_eq!(plan.folds[4].train_sessions, vec![1, 2, 3, 4]);
    }

    #[test]
    fn missing_session_is_an_error() {
        let recs: Vec<_> = records(1).into_iter().filter(|r| r.session != 3).collect();
        assert!(make_folds(&recs).is_err());
    }

    #[test]
    fn balanced_subsample_counts_and_determinism() {
        let recs = records(10);
        let a = subsample_balanced(&recs, 7, 3).unwrap();
        assert_eq!(class_counts(&a), [7; 4]);
        assert_eq!(a, subsample_balanced(&recs, 7, 3).unwrap());
        assert!(subsample_balanced(&recs, 0, 3).unwrap().is_empty());
        match subsample_balanced(&recs[..60], 20, 3) {
            Err(Error::InsufficientClass { available, requested, .. }) => {
                assert_eq!((available, requested), (10, 20));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn subsamples_are_nested() {
        let recs = records(10);
        let small = subsample_balanced(&recs, 3, 11).unwrap();
        let large = subsample_balanced(&recs, 9, 11).unwrap();
        let ids: HashSet<_> = large.iter().map(|r| &r.id).collect();
        assert!(small.iter().all(|r| ids.contains(&r.id)));
    }
}
