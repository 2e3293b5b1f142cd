use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use serkit::dataset::{class_counts, load_manifest, LoadReport, NUM_CLASSES};
use serkit::emb::{read_container, read_header, write_container};
use serkit::lld::{extract_lld, read_wav};
use serkit::models::{save_checkpoint, ModelKind, ModelSpec};
use serkit::report::{
    format_folds, format_table, read_json, write_json, write_run, write_scaling, RunSnapshot,
};
use serkit::sequence::SourceKind;
use serkit::synth::{generate, SynthConfig};
use serkit::train::{
    run_cv_with_models, run_scaling_curve, EmbeddingDir, TrainConfig, TrainSize, OVERRIDE_KEYS,
};

#[derive(Parser)]
#[command(name = "serkit", version, about = "Speech emotion recognition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract 34 low-level descriptors per frame from every manifest WAV.
    ExtractLld {
        #[arg(long)]
        manifest: PathBuf,
        /// Embedding root; files go to <out>/lld/<id>.emb1.
        #[arg(long)]
        out: PathBuf,
    },
    /// Five-fold leave-one-session-out cross-validation.
    TrainCv(RunArgs),
    /// Cross-validation at increasing training-set sizes.
    Scaling {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated total training sizes, multiples of 4; `full` for
        /// every training utterance.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<TrainSize>>,
    },
    /// Print the header of EMB1 containers and verify their checksum.
    InspectEmb {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
    /// Write a synthetic manifest with matching embeddings.
    MakeSynthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "lld", value_parser = ["lld", "wav2vec"])]
        features: String,
        /// Utterances per class in each of the five sessions.
        #[arg(long, default_value_t = 20)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Overlapping classes instead of well separated ones.
        #[arg(long)]
        degraded: bool,
        /// Also write BERT-width token embeddings and transcripts.
        #[arg(long)]
        with_text: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Snapshot written by an earlier run; flags below override it.
    #[arg(long, conflicts_with_all = ["model", "features"])]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    manifest: Option<PathBuf>,
    /// Defaults to `emb` next to the manifest.
    #[arg(long)]
    emb_root: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long, value_parser = ["lld", "wav2vec"])]
    features: Option<String>,
    /// Balanced subsample of N training utterances per class in each fold.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    /// Any training or model field, e.g. `--set lr=1e-3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn parse_override(raw: &str) -> Result<(&str, &str)> {
    raw.split_once('=')
        .map(|(k, v)| (k.trim(), v))
        .ok_or_else(|| anyhow!("--set expects key=value, got {raw:?}"))
}

/// Resolves flags and an optional snapshot into a complete run description
/// without touching the manifest or embeddings.
fn resolve(args: &RunArgs, command: &str) -> Result<RunSnapshot> {
    for raw in &args.overrides {
        let (key, _) = parse_override(raw)?;
        if !OVERRIDE_KEYS.contains(&key) {
            bail!("unknown --set key {key:?}; known keys: {}", OVERRIDE_KEYS.join(", "));
        }
    }
    let mut snap = match &args.config {
        Some(path) => {
            let snap: RunSnapshot = read_json(path)
                .with_context(|| format!("reading snapshot {}", path.display()))?;
            if snap.command != command {
                bail!("{} was written by {}, not {command}", path.display(), snap.command);
            }
            snap
        }
        None => {
            let manifest = args.manifest.clone().expect("clap enforces --manifest");
            let features: SourceKind = args.features.as_deref().unwrap_or("lld").parse()?;
            let model = args.model.unwrap_or(ModelKind::MeanPool);
            let emb_root = manifest.parent().unwrap_or(Path::new("")).join("emb");
            RunSnapshot {
                command: command.to_string(),
                manifest,
                emb_root,
                sizes: None,
                config: TrainConfig::new(ModelSpec::new(model, features.dim()), features),
            }
        }
    };
    if let Some(m) = &args.manifest {
        snap.manifest = m.clone();
    }
    if let Some(e) = &args.emb_root {
        snap.emb_root = e.clone();
    }
    let cfg = &mut snap.config;
    if let Some(k) = args.per_class {
        cfg.per_class_limit = Some(k);
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(e) = args.epochs {
        cfg.epochs = e;
    }
    if let Some(d) = args.dropout {
        cfg.model.dropout_rate = d;
    }
    for raw in &args.overrides {
        let (key, value) = parse_override(raw)?;
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(snap)
}

fn load_records(path: &Path) -> Result<LoadReport> {
    let report = load_manifest(path).with_context(|| format!("loading {}", path.display()))?;
    let counts = class_counts(&report.records);
    eprintln!(
        "{}: {} utterances (neutral {}, happy {}, sad {}, angry {}), {} excluded",
        path.display(),
        report.records.len(),
        counts[0],
        counts[1],
        counts[2],
        counts[3],
        report.excluded
    );
    Ok(report)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn train_cv(args: &RunArgs) -> Result<bool> {
    let snap = resolve(args, "train-cv")?;
    let records = load_records(&snap.manifest)?.records;
    create_out(&args.out)?;
    write_json(&snap, args.out.join("config.json"))?;

    let source = EmbeddingDir::new(&snap.emb_root);
    let (report, models) = run_cv_with_models(&records, &source, &snap.config)?;
    write_run(&report, &args.out)?;
    for (k, model) in models.iter().enumerate() {
        if let Some(model) = model {
            save_checkpoint(model, args.out.join(format!("fold{}.sprm", k + 1)))?;
        }
    }
    println!("{}", format_folds(&report));
    println!("{}", format_table(&[&report]));
    Ok(report.is_complete())
}

fn scaling(args: &RunArgs, sizes: Option<&[TrainSize]>) -> Result<bool> {
    if args.per_class.is_some() {
        bail!("--per-class has no effect on scaling; use --sizes");
    }
    let mut snap = resolve(args, "scaling")?;
    if let Some(sizes) = sizes {
        snap.sizes = Some(sizes.to_vec());
    }
    let sizes = snap
        .sizes
        .clone()
        .ok_or_else(|| anyhow!("--sizes is required"))?;
    for s in &sizes {
        s.per_class()?;
    }
    let records = load_records(&snap.manifest)?.records;
    create_out(&args.out)?;
    write_json(&snap, args.out.join("config.json"))?;

    let source = EmbeddingDir::new(&snap.emb_root);
    let curve = run_scaling_curve(&records, &source, &snap.config, &sizes)?;
    write_scaling(&curve, &args.out)?;
    println!("| Train size | UA | WA |");
    println!("|---|---|---|");
    for p in &curve.points {
        println!("| {} | {:.4} | {:.4} |", p.train_size, p.report.mean_ua, p.report.mean_wa);
    }
    for p in &curve.points {
        for f in &p.report.failures {
            println!("size {}: fold {} failed: {}", p.train_size, f.fold, f.error);
        }
    }
    Ok(curve.is_complete())
}

fn extract(manifest: &Path, out: &Path) -> Result<bool> {
    let records = load_records(manifest)?.records;
    let emb = EmbeddingDir::new(out);
    let mut failures = Vec::new();
    for r in &records {
        let result = read_wav(&r.audio)
            .and_then(|clip| extract_lld(&clip))
            .and_then(|seq| write_container(&seq, emb.path(&r.id, SourceKind::Lld)));
        if let Err(e) = result {
            failures.push((r.id.clone(), e.to_string()));
        }
    }
    println!(
        "extracted {} of {} utterances into {}",
        records.len() - failures.len(),
        records.len(),
        out.join(SourceKind::Lld.name()).display()
    );
    for (id, err) in &failures {
        println!("failed {id}: {err}");
    }
    Ok(failures.is_empty())
}

fn inspect(files: &[PathBuf]) -> bool {
    let mut ok = true;
    for path in files {
        let result = read_header(path).and_then(|h| read_container(path).map(|_| h));
        match result {
            Ok(h) => println!(
                "{}: version {} kind {} rows {} cols {} hop {} ms, checksum ok",
                path.display(),
                h.version,
                h.kind,
                h.rows,
                h.cols,
                h.frame_hop_ms
            ),
            Err(e) => {
                ok = false;
                println!("{}: {e}", path.display());
            }
        }
    }
    ok
}

fn make_synthetic(
    out: &Path,
    features: &str,
    per_class: usize,
    seed: u64,
    degraded: bool,
    with_text: bool,
) -> Result<()> {
    let kind: SourceKind = features.parse()?;
    let mut cfg = if degraded {
        SynthConfig::degraded(kind)
    } else {
        SynthConfig::separable(kind)
    };
    cfg.per_class_per_session = per_class;
    cfg.seed = seed;
    cfg.with_text = with_text;
    let set = generate(&cfg)?;
    let emb = set.write(out)?;
    write_json(&cfg, out.join("synthetic.json"))?;
    println!(
        "wrote {} utterances ({} per class) to {}, embeddings under {}",
        set.records.len(),
        set.records.len() / NUM_CLASSES,
        out.join("manifest.jsonl").display(),
        emb.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::ExtractLld { manifest, out } => extract(manifest, out),
        Command::TrainCv(args) => train_cv(args),
        Command::Scaling { run, sizes } => scaling(run, sizes.as_deref()),
        Command::InspectEmb { files } => Ok(inspect(files)),
        Command::MakeSynthetic {
            out,
            features,
            per_class,
            seed,
            degraded,
            with_text,
        } => make_synthetic(out, features, *per_class, *seed, *degraded, *with_text).map(|_| true),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
