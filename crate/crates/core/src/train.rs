//! Training loop, metrics and the cross-validation experiments.
//!
//! Every fold owns its model, optimizer and random streams, so folds can
//! run concurrently without changing any result. Inside a fold training is
//! single-threaded and fully determined by the fold seed.

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    crop_frames, make_folds, subsample_balanced, Emotion, Fold, UtteranceRecord, MAX_DURATION_S,
    NUM_CLASSES,
};
use crate::emb::{read_container, EXTENSION};
use crate::error::{Error, Result};
use crate::models::{argmax_rows, Batch, Model, ModelKind, ModelSpec};
use crate::numcore::{Adam, Matrix, Tape};
use crate::sequence::{FrameSequence, SourceKind};

/// Recorded in every report so a run can be reproduced.
pub const INIT_DESCRIPTION: &str =
    "weights glorot-uniform in ±sqrt(6/(fan_in+fan_out)); biases zero; lstm forget-gate bias +1";

const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Fixed budget; training never stops early.
    pub epochs: usize,
    pub seed: u64,
    /// Train on this many utterances per class in every fold.
    pub per_class_limit: Option<usize>,
    pub crop_s: f64,
    /// Global gradient-norm bound, applied to recurrent models only.
    pub clip_norm: f64,
    pub features: SourceKind,
    pub model: ModelSpec,
    /// Run the five folds on the rayon pool.
    pub parallel_folds: bool,
}

/// Keys accepted by [`TrainConfig::set`].
pub const OVERRIDE_KEYS: &[&str] = &[
    "batch_size",
    "lr",
    "beta1",
    "beta2",
    "eps",
    "epochs",
    "seed",
    "per_class",
    "crop_s",
    "clip_norm",
    "dropout",
    "mlp_hidden",
    "rnn_hidden",
    "attn_dim",
    "parallel_folds",
];

impl TrainConfig {
    pub fn new(model: ModelSpec, features: SourceKind) -> Self {
        TrainConfig {
            batch_size: 16,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 100,
            seed: 0,
            per_class_limit: None,
            crop_s: MAX_DURATION_S,
            clip_norm: 5.0,
            features,
            model,
            parallel_folds: false,
        }
    }

    pub fn adam(&self) -> Adam {
        Adam {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.model.validate()?;
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("beta1 and beta2 must be in [0, 1)".into());
        }
        if !(self.eps > 0.0) {
            return bad("eps must be positive".into());
        }
        if !(self.crop_s > 0.0) {
            return bad("crop_s must be positive".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive".into());
        }
        if self.features == SourceKind::Bert {
            return bad("acoustic features must be lld or wav2vec".into());
        }
        if self.model.input_dim != self.features.dim() {
            return bad(format!(
                "model input_dim {} does not match {} features ({})",
                self.model.input_dim,
                self.features,
                self.features.dim()
            ));
        }
        Ok(())
    }

    /// Applies one `key=value` override. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse {key}={value:?}")))
        }
        match key {
            "batch_size" => self.batch_size = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "beta1" => self.beta1 = parse(key, value)?,
            "beta2" => self.beta2 = parse(key, value)?,
            "eps" => self.eps = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "per_class" => {
                self.per_class_limit = match value.trim() {
                    "" | "none" | "full" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "crop_s" => self.crop_s = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "dropout" => self.model.dropout_rate = parse(key, value)?,
            "mlp_hidden" => {
                self.model.mlp_hidden = value
                    .split([',', 'x'])
                    .filter(|s| !s.trim().is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "rnn_hidden" => self.model.rnn_hidden = parse(key, value)?,
            "attn_dim" => self.model.attn_dim = parse(key, value)?,
            "parallel_folds" => self.parallel_folds = parse(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown override key {key:?}; known keys: {}",
                    OVERRIDE_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }
}

/// Where frame sequences come from.
pub trait FeatureSource: Sync {
    fn load(&self, id: &str, kind: SourceKind) -> Result<FrameSequence>;
    fn contains(&self, id: &str, kind: SourceKind) -> bool;
}

/// EMB1 files laid out as `<root>/<kind>/<id>.emb1`.
#[derive(Clone, Debug)]
pub struct EmbeddingDir {
    root: PathBuf,
}

impl EmbeddingDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        EmbeddingDir { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, id: &str, kind: SourceKind) -> PathBuf {
        self.root.join(kind.name()).join(format!("{id}.{EXTENSION}"))
    }
}

impl FeatureSource for EmbeddingDir {
    fn load(&self, id: &str, kind: SourceKind) -> Result<FrameSequence> {
        let path = self.path(id, kind);
        if !path.is_file() {
            return Err(Error::MissingEmbedding {
                id: id.to_string(),
                kind,
                path,
            });
        }
        let seq = read_container(&path)?;
        if seq.kind() != kind {
            return Err(Error::Data(format!(
                "{} holds {} features, expected {kind}",
                path.display(),
                seq.kind()
            )));
        }
        Ok(seq)
    }

    fn contains(&self, id: &str, kind: SourceKind) -> bool {
        self.path(id, kind).is_file()
    }
}

/// Sequences held in memory, keyed by kind and id.
#[derive(Clone, Debug, Default)]
pub struct InMemorySource {
    seqs: HashMap<(SourceKind, String), FrameSequence>,
}

impl InMemorySource {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, seq: FrameSequence) {
        self.seqs.insert((seq.kind(), id.into()), seq);
    }

    pub fn len(&self) -> usize {
        self.seqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seqs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &FrameSequence)> {
        self.seqs.iter().map(|((_, id), s)| (id.as_str(), s))
    }
}

impl FeatureSource for InMemorySource {
    fn load(&self, id: &str, kind: SourceKind) -> Result<FrameSequence> {
        self.seqs
            .get(&(kind, id.to_string()))
            .cloned()
            .ok_or_else(|| Error::MissingEmbedding {
                id: id.to_string(),
                kind,
                path: PathBuf::new(),
            })
    }

    fn contains(&self, id: &str, kind: SourceKind) -> bool {
        self.seqs.contains_key(&(kind, id.to_string()))
    }
}

/// One utterance ready for the model: cropped audio frames and, for the
/// bimodal head, text tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    pub label: Emotion,
    pub audio: Matrix,
    pub text: Option<Matrix>,
}

fn needs_text(config: &TrainConfig) -> bool {
    config.model.kind == ModelKind::BimodalAlign
}

/// Fails on the first record whose inputs cannot be found.
pub fn check_inputs(
    records: &[UtteranceRecord],
    source: &dyn FeatureSource,
    config: &TrainConfig,
) -> Result<()> {
    for r in records {
        if !source.contains(&r.id, config.features) {
            return Err(source.load(&r.id, config.features).err().unwrap_or_else(|| {
                Error::MissingEmbedding {
                    id: r.id.clone(),
                    kind: config.features,
                    path: PathBuf::new(),
                }
            }));
        }
        if needs_text(config) {
            if r.transcript.trim().is_empty() {
                return Err(Error::Data(format!(
                    "utterance {:?} has an empty transcript; bimodal_align requires text",
                    r.id
                )));
            }
            if !source.contains(&r.id, SourceKind::Bert) {
                return Err(source.load(&r.id, SourceKind::Bert).err().unwrap_or_else(|| {
                    Error::MissingEmbedding {
                        id: r.id.clone(),
                        kind: SourceKind::Bert,
                        path: PathBuf::new(),
                    }
                }));
            }
        }
    }
    Ok(())
}

/// Loads and crops the inputs of `records`.
pub fn prepare(
    records: &[UtteranceRecord],
    source: &dyn FeatureSource,
    config: &TrainConfig,
) -> Result<Vec<Example>> {
    records
        .iter()
        .map(|r| {
            let audio = crop_frames(source.load(&r.id, config.features)?, config.crop_s)?;
            let text = if needs_text(config) {
                if r.transcript.trim().is_empty() {
                    return Err(Error::Data(format!(
                        "utterance {:?} has an empty transcript; bimodal_align requires text",
                        r.id
                    )));
                }
                Some(source.load(&r.id, SourceKind::Bert)?.into_frames())
            } else {
                None
            };
            Ok(Example {
                id: r.id.clone(),
                label: r.label,
                audio: audio.into_frames(),
                text,
            })
        })
        .collect()
}

fn make_batch(examples: &[Example], idx: &[usize]) -> Result<Batch> {
    let audio: Vec<&Matrix> = idx.iter().map(|&i| &examples[i].audio).collect();
    if examples[idx[0]].text.is_some() {
        let text = idx
            .iter()
            .map(|&i| {
                examples[i].text.as_ref().ok_or_else(|| {
                    Error::Data(format!("utterance {:?} has no text tokens", examples[i].id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Batch::bimodal(&audio, &text)
    } else {
        Batch::acoustic(&audio)
    }
}

/// Result of one training run.
#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters after the final epoch.
    pub model: Model,
    /// Mean loss of every mini-batch, in order.
    pub batch_loss: Vec<f64>,
    /// Example-weighted mean loss per epoch.
    pub epoch_loss: Vec<f64>,
    /// Ids of every example that appeared in a training batch.
    pub seen: Vec<String>,
}

/// Independent random streams of one run.
pub struct RunRngs {
    pub init: ChaCha8Rng,
    pub shuffle: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

impl RunRngs {
    pub fn new(seed: u64) -> Self {
        let stream = |s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            rng
        };
        RunRngs {
            init: stream(1),
            shuffle: stream(2),
            dropout: stream(3),
        }
    }
}

/// Trains a fresh model on prepared examples for exactly `config.epochs`
/// epochs of shuffled mini-batches.
pub fn train_examples(examples: &[Example], config: &TrainConfig, seed: u64) -> Result<TrainOutcome> {
    config.model.validate()?;
    if examples.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rngs = RunRngs::new(seed);
    let mut model = Model::new(config.model.clone(), &mut rngs.init)?;
    let adam = config.adam();
    let clip = config.model.kind.is_recurrent();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut seen = vec![false; examples.len()];
    let mut batch_loss = Vec::new();
    let mut epoch_loss = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rngs.shuffle);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch = make_batch(examples, chunk)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| examples[i].label.index()).collect();
            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &batch, true, &mut rngs.dropout)?;
            let loss = tape.softmax_xent(out.logits, &labels)?;
            let value = tape.value(loss).get(0, 0);
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss in epoch {} batch {}",
                    epoch + 1,
                    batch_loss.len() + 1
                )));
            }
            tape.backward(loss, model.params_mut())?;
            if clip {
                model.params_mut().clip_grad_norm(config.clip_norm);
            }
            adam.step(model.params_mut())?;
            chunk.iter().for_each(|&i| seen[i] = true);
            batch_loss.push(value);
            total += value * chunk.len() as f64;
        }
        epoch_loss.push(total / examples.len() as f64);
    }

    let seen = examples
        .iter()
        .zip(&seen)
        .filter(|(_, &s)| s)
        .map(|(e, _)| e.id.clone())
        .collect();
    Ok(TrainOutcome {
        model,
        batch_loss,
        epoch_loss,
        seen,
    })
}

/// Loads the inputs of `records` and trains on them.
pub fn train_one(
    records: &[UtteranceRecord],
    source: &dyn FeatureSource,
    config: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    let examples = prepare(records, source, config)?;
    train_examples(&examples, config, seed)
}

/// `K×K` counts with the true class on rows.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl Confusion {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_counts(counts: [[u64; NUM_CLASSES]; NUM_CLASSES]) -> Self {
        Confusion { counts }
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..NUM_CLASSES).map(|i| self.counts[i][i]).sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// `None` when the class has no test examples.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let n = self.support(class);
        (n > 0).then(|| self.counts[class][class] as f64 / n as f64)
    }

    /// Unweighted accuracy: mean recall over classes present in the test
    /// set.
    pub fn ua(&self) -> f64 {
        let recalls: Vec<f64> = (0..NUM_CLASSES).filter_map(|c| self.recall(c)).collect();
        if recalls.is_empty() {
            0.0
        } else {
            recalls.iter().sum::<f64>() / recalls.len() as f64
        }
    }

    /// Weighted accuracy: fraction of correct predictions.
    pub fn wa(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }
}

/// Inference-mode predictions for `examples`, in order.
pub fn predict(model: &Model, examples: &[Example]) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..examples.len()).collect();
    let mut out = Vec::with_capacity(examples.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let logits = model.predict(&make_batch(examples, chunk)?)?;
        out.extend(argmax_rows(&logits));
    }
    Ok(out)
}

pub fn evaluate(model: &Model, examples: &[Example]) -> Result<Confusion> {
    if examples.is_empty() {
        return Err(Error::Data("empty test set".into()));
    }
    let mut confusion = Confusion::new();
    for (e, p) in examples.iter().zip(predict(model, examples)?) {
        confusion.add(e.label.index(), p);
    }
    Ok(confusion)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_session: u8,
    pub train_size: usize,
    pub test_size: usize,
    pub seed: u64,
    pub confusion: Confusion,
    pub ua: f64,
    pub wa: f64,
    pub epoch_loss: Vec<f64>,
    pub batch_loss: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldFailure {
    pub fold: usize,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub init: String,
    pub folds: Vec<FoldReport>,
    pub failures: Vec<FoldFailure>,
    /// Mean of the fold UAs.
    pub mean_ua: f64,
    pub mean_wa: f64,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    /// The report with its wall time zeroed, for run-to-run comparison.
    pub fn without_timing(&self) -> RunReport {
        RunReport {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}

/// A trained fold, kept when the caller wants the parameters.
#[derive(Debug)]
pub struct FoldRun {
    pub report: FoldReport,
    pub model: Model,
}

/// Seed of fold `index` (1-based).
pub fn fold_seed(seed: u64, fold: &Fold) -> u64 {
    seed.wrapping_add(fold.index as u64 - 1)
}

/// Train records of `fold`, subsampled when the config asks for it.
pub fn fold_train_records(
    fold: &Fold,
    records: &[UtteranceRecord],
    config: &TrainConfig,
) -> Result<(Vec<UtteranceRecord>, Vec<UtteranceRecord>)> {
    let (train, test): (Vec<_>, Vec<_>) = records
        .iter()
        .cloned()
        .partition(|r| r.session != fold.test_session);
    let train = match config.per_class_limit {
        Some(k) => subsample_balanced(&train, k, fold_seed(config.seed, fold))?,
        None => train,
    };
    let test_ids: HashSet<&str> = test.iter().map(|r| r.id.as_str()).collect();
    if let Some(r) = train
        .iter()
        .find(|r| r.session == fold.test_session || test_ids.contains(r.id.as_str()))
    {
        return Err(Error::Data(format!(
            "fold {}: utterance {:?} is in both train and test",
            fold.index, r.id
        )));
    }
    Ok((train, test))
}

/// Trains and evaluates one fold.
pub fn run_fold(
    fold: &Fold,
    records: &[UtteranceRecord],
    source: &dyn FeatureSource,
    config: &TrainConfig,
) -> Result<FoldRun> {
    let (train, test) = fold_train_records(fold, records, config)?;
    let seed = fold_seed(config.seed, fold);
    let outcome = train_one(&train, source, config, seed)?;
    let test_ids: HashSet<&str> = test.iter().map(|r| r.id.as_str()).collect();
    if let Some(id) = outcome.seen.iter().find(|id| test_ids.contains(id.as_str())) {
        return Err(Error::Data(format!(
            "fold {}: test utterance {id:?} reached a training batch",
            fold.index
        )));
    }
    let test_examples = prepare(&test, source, config)?;
    let confusion = evaluate(&outcome.model, &test_examples)?;
    let report = FoldReport {
        fold: fold.index,
        test_session: fold.test_session,
        train_size: train.len(),
        test_size: test.len(),
        seed,
        ua: confusion.ua(),
        wa: confusion.wa(),
        confusion,
        epoch_loss: outcome.epoch_loss,
        batch_loss: outcome.batch_loss,
    };
    Ok(FoldRun {
        report,
        model: outcome.model,
    })
}

/// Five-fold leave-one-session-out cross-validation, returning each
/// fold's trained model alongside the report.
///
/// Configuration and missing inputs fail the whole run before training.
/// Errors inside a fold are recorded in [`RunReport::failures`].
pub fn run_cv_with_models(
    records: &[UtteranceRecord],
    source: &dyn FeatureSource,
    config: &TrainConfig,
) -> Result<(RunReport, Vec<Option<Model>>)> {
    let start = Instant::now();
    config.validate()?;
    let plan = make_folds(records)?;
    check_inputs(records, source, config)?;

    let run = |fold: &Fold| run_fold(fold, records, source, config);
    let results: Vec<Result<FoldRun>> = if config.parallel_folds {
        plan.folds.par_iter().map(run).collect()
    } else {
        plan.folds.iter().map(run).collect()
    };

    let mut folds = Vec::new();
    let mut failures = Vec::new();
    let mut models = Vec::new();
    for (fold, result) in plan.folds.iter().zip(results) {
        match result {
            Ok(run) => {
                folds.push(run.report);
                models.push(Some(run.model));
            }
            Err(e) => {
                failures.push(FoldFailure {
                    fold: fold.index,
                    error: e.to_string(),
                });
                models.push(None);
            }
        }
    }
    let mean = |f: fn(&FoldReport) -> f64| {
        if folds.is_empty() {
            0.0
        } else {
            folds.iter().map(f).sum::<f64>() / folds.len() as f64
        }
    };
    let report = RunReport {
        config: config.clone(),
        init: INIT_DESCRIPTION.to_string(),
        mean_ua: mean(|f| f.ua),
        mean_wa: mean(|f| f.wa),
        folds,
        failures,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    Ok((report, models))
}

pub fn run_cv(
    records: &[UtteranceRecord],
    source: &dyn FeatureSource,
    config: &TrainConfig,
) -> Result<RunReport> {
    run_cv_with_models(records, source, config).map(|(r, _)| r)
}

/// Amount of training data at one scaling-curve point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSize {
    /// Balanced subset of this many utterances (a multiple of four).
    Total(usize),
    /// Every training utterance of the fold.
    Full,
}

impl TrainSize {
    pub fn per_class(self) -> Result<Option<usize>> {
        match self {
            TrainSize::Full => Ok(None),
            TrainSize::Total(n) if n > 0 && n % NUM_CLASSES == 0 => Ok(Some(n / NUM_CLASSES)),
            TrainSize::Total(n) => Err(Error::Config(format!(
                "training size {n} is not a positive multiple of {NUM_CLASSES}"
            ))),
        }
    }
}

impl std::str::FromStr for TrainSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "full" | "all" => Ok(TrainSize::Full),
            n => n
                .parse()
                .map(TrainSize::Total)
                .map_err(|_| Error::Config(format!("invalid training size {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub size: TrainSize,
    /// Mean number of training utterances over the folds.
    pub train_size: usize,
    pub report: RunReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingCurve {
    pub points: Vec<ScalingPoint>,
}

impl ScalingCurve {
    pub fn is_complete(&self) -> bool {
        self.points.iter().all(|p| p.report.is_complete())
    }
}

/// One cross-validation run per size. Subsets of one fold are nested
/// because every size draws from the same fold seed.
pub fn run_scaling_curve(
    records: &[UtteranceRecord],
    source: &dyn FeatureSource,
    config: &TrainConfig,
    sizes: &[TrainSize],
) -> Result<ScalingCurve> {
    if sizes.is_empty() {
        return Err(Error::Config("no training sizes given".into()));
    }
    let limits = sizes
        .iter()
        .map(|s| s.per_class())
        .collect::<Result<Vec<_>>>()?;
    let ascending = limits.windows(2).all(|w| match (w[0], w[1]) {
        (Some(a), Some(b)) => a < b,
        (Some(_), None) => true,
        (None, _) => false,
    });
    if !ascending {
        return Err(Error::Config("training sizes must be strictly ascending".into()));
    }
    let mut points = Vec::with_capacity(sizes.len());
    for (&size, limit) in sizes.iter().zip(limits) {
        let mut cfg = config.clone();
        cfg.per_class_limit = limit;
        let report = run_cv(records, source, &cfg)?;
        let train_size = if report.folds.is_empty() {
            0
        } else {
            let sum: usize = report.folds.iter().map(|f| f.train_size).sum();
            (sum as f64 / report.folds.len() as f64).round() as usize
        };
        points.push(ScalingPoint {
            size,
            train_size,
            report,
        });
    }
    Ok(ScalingCurve { points })
}
