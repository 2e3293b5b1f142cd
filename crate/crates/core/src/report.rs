//! Report files: JSON documents for runs and CSV tables for plotting.
//!
//! A cross-validation run directory holds
//!
//! * `report.json`: the [`RunReport`];
//! * `config.json`: a [`RunSnapshot`] that reproduces the run;
//! * `fold<k>_confusion.csv`: true class on rows, predicted on columns;
//! * `loss_trace.csv`: `fold,epoch,batch,loss`, one row per mini-batch;
//! * `epoch_loss.csv`: `fold,epoch,loss`.
//!
//! A scaling run adds `scaling.csv` with the fixed header
//! [`SCALING_HEADER`] and one row per training size.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Emotion, NUM_CLASSES, NUM_SESSIONS};
use crate::error::{Error, Result};
use crate::train::{Confusion, RunReport, ScalingCurve, TrainConfig, TrainSize};

pub const SCALING_HEADER: &str = "train_size,mean_ua,fold1_ua,fold2_ua,fold3_ua,fold4_ua,fold5_ua";

/// Everything needed to repeat a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSnapshot {
    pub command: String,
    pub manifest: PathBuf,
    pub emb_root: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<TrainSize>>,
    pub config: TrainConfig,
}

pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_confusion_csv(confusion: &Confusion, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv_writer(path.as_ref())?;
    let mut header = vec!["true\\pred".to_string()];
    header.extend(Emotion::ALL.iter().map(|e| e.name().to_string()));
    w.write_record(&header)?;
    for (class, row) in Emotion::ALL.iter().zip(&confusion.counts) {
        let mut rec = vec![class.name().to_string()];
        rec.extend(row.iter().map(u64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}

/// Writes `report.json`, the per-fold confusion tables and the loss
/// traces into `dir`.
pub fn write_run(report: &RunReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    write_json(report, dir.join("report.json"))?;
    for f in &report.folds {
        write_confusion_csv(&f.confusion, dir.join(format!("fold{}_confusion.csv", f.fold)))?;
    }

    let path = dir.join("loss_trace.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["fold", "epoch", "batch", "loss"])?;
    for f in &report.folds {
        let per_epoch = f.batch_loss.len() / f.epoch_loss.len().max(1);
        for (i, loss) in f.batch_loss.iter().enumerate() {
            w.write_record(&[
                f.fold.to_string(),
                (i / per_epoch.max(1) + 1).to_string(),
                (i % per_epoch.max(1) + 1).to_string(),
                loss.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join("epoch_loss.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["fold", "epoch", "loss"])?;
    for f in &report.folds {
        for (e, loss) in f.epoch_loss.iter().enumerate() {
            w.write_record(&[f.fold.to_string(), (e + 1).to_string(), loss.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Writes `scaling.csv` and `scaling.json`. Folds that failed leave an
/// empty cell.
pub fn write_scaling(curve: &ScalingCurve, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    write_json(curve, dir.join("scaling.json"))?;
    let path = dir.join("scaling.csv");
    let mut out = String::from(SCALING_HEADER);
    out.push('\n');
    for p in &curve.points {
        out.push_str(&format!("{},{}", p.train_size, p.report.mean_ua));
        for k in 1..=NUM_SESSIONS as usize {
            out.push(',');
            if let Some(f) = p.report.folds.iter().find(|f| f.fold == k) {
                out.push_str(&f.ua.to_string());
            }
        }
        out.push('\n');
    }
    let mut file = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    file.write_all(out.as_bytes()).map_err(|e| Error::io(&path, e))
}

/// Checks the internal arithmetic of a report: confusion totals match test
/// sizes, fold metrics match their confusion matrices, the aggregates are
/// fold means and the loss traces have the expected lengths.
pub fn check_consistency(report: &RunReport) -> Result<()> {
    let fail = |m: String| Err(Error::Data(m));
    let batch = report.config.batch_size.max(1);
    for f in &report.folds {
        if f.confusion.total() != f.test_size as u64 {
            return fail(format!(
                "fold {}: confusion sums to {} but test size is {}",
                f.fold,
                f.confusion.total(),
                f.test_size
            ));
        }
        if f.ua != f.confusion.ua() || f.wa != f.confusion.wa() {
            return fail(format!("fold {}: metrics disagree with confusion", f.fold));
        }
        if f.epoch_loss.len() != report.config.epochs {
            return fail(format!("fold {}: {} epoch losses", f.fold, f.epoch_loss.len()));
        }
        let expected = report.config.epochs * f.train_size.div_ceil(batch);
        if f.batch_loss.len() != expected {
            return fail(format!(
                "fold {}: {} batch losses, expected {expected}",
                f.fold,
                f.batch_loss.len()
            ));
        }
    }
    if !report.folds.is_empty() {
        let n = report.folds.len() as f64;
        let ua = report.folds.iter().map(|f| f.ua).sum::<f64>() / n;
        let wa = report.folds.iter().map(|f| f.wa).sum::<f64>() / n;
        if (ua - report.mean_ua).abs() > 1e-12 || (wa - report.mean_wa).abs() > 1e-12 {
            return fail("aggregate metrics are not the fold means".into());
        }
    }
    Ok(())
}

/// Aggregate table in the `model | features | UA | WA` layout, percentages
/// with one decimal.
pub fn format_table(rows: &[&RunReport]) -> String {
    let mut out = String::from("| Model | Features | Train/class | UA (%) | WA (%) |\n");
    out.push_str("|---|---|---|---|---|\n");
    for r in rows {
        let per_class = r
            .config
            .per_class_limit
            .map_or_else(|| "all".to_string(), |k| k.to_string());
        out.push_str(&format!(
            "| {} | {} | {} | {:.1} | {:.1} |\n",
            r.config.model.kind.title(),
            r.config.features,
            per_class,
            100.0 * r.mean_ua,
            100.0 * r.mean_wa
        ));
    }
    for r in rows {
        for f in &r.failures {
            out.push_str(&format!("fold {} failed: {}\n", f.fold, f.error));
        }
    }
    out
}

/// Per-fold lines for a single run.
pub fn format_folds(report: &RunReport) -> String {
    let mut out = String::new();
    for f in &report.folds {
        out.push_str(&format!(
            "fold {} (test session {}): train {} test {} UA {:.2}% WA {:.2}%\n",
            f.fold,
            f.test_session,
            f.train_size,
            f.test_size,
            100.0 * f.ua,
            100.0 * f.wa
        ));
    }
    out
}

/// Parses a confusion table written by [`write_confusion_csv`].
pub fn read_confusion_csv(path: impl AsRef<Path>) -> Result<Confusion> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    let mut counts = [[0u64; NUM_CLASSES]; NUM_CLASSES];
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        if i >= NUM_CLASSES || rec.len() != NUM_CLASSES + 1 {
            return Err(Error::Data(format!("{}: malformed confusion table", path.display())));
        }
        for j in 0..NUM_CLASSES {
            counts[i][j] = rec[j + 1]
                .parse()
                .map_err(|_| Error::Data(format!("{}: bad count {:?}", path.display(), &rec[j + 1])))?;
        }
        rows += 1;
    }
    if rows != NUM_CLASSES {
        return Err(Error::Data(format!("{}: expected {NUM_CLASSES} rows", path.display())));
    }
    Ok(Confusion::from_counts(counts))
}
