use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use langid::data::{
    balance_manual, extract_features, label_set, load_feature_set, read_manifest, split_dataset, synth_toy_corpus,
    write_manifest, ManifestEntry, Split, SynthConfig, TOY_MIN_CLASSES,
};
use langid::dsp::FeatureMatrix;
use langid::eval::{
    cluster_filter, evaluate, evaluate_features, render_csv, render_markdown, EvalReport, LabeledModel, SweepReport,
    SweepRow,
};
use langid::models::{load_checkpoint, save_checkpoint, Architecture, Model};
use langid::tensor::Padding;
use langid::train::{train as fit, LabeledSet, TrainOutcome};

use crate::config::{parse_balance, parse_cluster, RunConfig};
use crate::{
    Common, EvalArgs, ExtractArgs, Format, PaddingArg, Recipe, ReportArgs, SplitArg, SplitArgs, SweepArgs, SynthArgs,
    TrainArgs, UsageError,
};

const MODEL_FILE: &str = "model.lidm";
const LABELS_FILE: &str = "labels.json";
const LOG_FILE: &str = "train_log.jsonl";
const RUN_FILE: &str = "run.json";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Library argument errors raised while interpreting the configuration are
/// usage errors.
fn as_usage(e: langid::Error) -> anyhow::Error {
    match e {
        langid::Error::InvalidArgument(m) => usage(m),
        other => other.into(),
    }
}

fn apply_common(cfg: &mut RunConfig, c: &Common) {
    if let Some(m) = &c.manifest {
        cfg.manifest = Some(m.clone());
    }
    if let Some(d) = &c.cache {
        cfg.cache_dir = Some(d.clone());
    }
}

fn apply_recipe(cfg: &mut RunConfig, r: &Recipe) -> Result<()> {
    if let Some(a) = &r.arch {
        cfg.arch = a.parse().map_err(as_usage)?;
    }
    if let Some(e) = r.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = r.seed {
        cfg.train.seed = s;
    }
    if let Some(b) = &r.balance {
        cfg.per_class = Some(parse_balance(b)?);
    }
    if let Some(c) = &r.cluster {
        cfg.cluster = Some(parse_cluster(c));
    }
    if let Some(p) = r.padding {
        cfg.padding = match p {
            PaddingArg::Valid => Padding::Valid,
            PaddingArg::Same => Padding::Same,
        };
    }
    if let Some(o) = &r.out {
        cfg.out = Some(o.clone());
    }
    cfg.train.validate().map_err(as_usage)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------- synth

pub fn synth(a: SynthArgs) -> Result<()> {
    if a.classes < TOY_MIN_CLASSES {
        return Err(usage(format!("need ≥ {TOY_MIN_CLASSES} classes, got {}", a.classes)));
    }
    let cfg = SynthConfig { n_classes: a.classes, per_class: a.per_class, sample_rate: a.sr, seed: a.seed };
    cfg.validate().map_err(as_usage)?;
    let manifest = synth_toy_corpus(&cfg, &a.out).with_context(|| format!("writing corpus to {}", a.out.display()))?;
    println!(
        "wrote {} clips ({} classes) and manifest.csv to {}",
        manifest.entries.len(),
        a.classes,
        a.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- split

pub fn split(a: SplitArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    apply_common(&mut cfg, &a.common);
    if let Some(r) = &a.ratios {
        cfg.split = [r[0], r[1], r[2]];
    }
    let seed = a.seed.unwrap_or(cfg.train.seed);
    let path = cfg.require_manifest()?.to_path_buf();
    let manifest = read_manifest(&path)?;
    let [tr, va, te] = cfg.split;
    let outcome = split_dataset(&manifest.entries, (tr, va, te), seed).map_err(as_usage)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let out = a.out.unwrap_or_else(|| path.clone());
    let out_dir = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let same_dir = fs::canonicalize(if out_dir.as_os_str().is_empty() { Path::new(".") } else { &out_dir }).ok()
        == fs::canonicalize(&manifest.base).ok();
    let entries: Vec<ManifestEntry> = if same_dir {
        outcome.entries
    } else {
        // Keep the clips reachable from the new manifest location.
        let base = fs::canonicalize(&manifest.base)?;
        outcome
            .entries
            .into_iter()
            .map(|mut e| {
                e.path = base.join(&e.path);
                e
            })
            .collect()
    };
    write_manifest(&out, &entries)?;
    let count = |s| entries.iter().filter(|e| e.split == s).count();
    println!(
        "train {} / val {} / test {} written to {}",
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- extract

pub fn extract(a: ExtractArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    apply_common(&mut cfg, &a.common);
    cfg.mfcc.validate().map_err(as_usage)?;
    let manifest = read_manifest(cfg.require_manifest()?)?;
    let cache = cfg.require_cache()?;
    let report = extract_features(&manifest, &cfg.mfcc, cache, a.force)?;
    println!(
        "written {}, skipped {}, failed {}",
        report.written,
        report.skipped,
        report.failures.len()
    );
    for (path, why) in &report.failures {
        eprintln!("failed: {}: {why}", path.display());
    }
    if !report.failures.is_empty() {
        bail!("{} of {} clips failed", report.failures.len(), manifest.entries.len());
    }
    Ok(())
}

// ---------------------------------------------------------------- train

/// Manifest entries after cluster selection and balancing, with their
/// feature sets.
struct Prepared {
    labels: Vec<String>,
    train: LabeledSet<f32>,
    val: LabeledSet<f32>,
    test: LabeledSet<f32>,
}

fn select(cfg: &RunConfig, entries: &[ManifestEntry]) -> Result<Vec<ManifestEntry>> {
    let mut entries = entries.to_vec();
    if let Some(cluster) = &cfg.cluster {
        entries = cluster_filter(&entries, cluster).map_err(as_usage)?;
    }
    if let Some(n) = cfg.per_class {
        entries = balance_manual(&entries, n, cfg.train.seed).map_err(as_usage)?;
    }
    Ok(entries)
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let full = read_manifest(cfg.require_manifest()?)?;
    let manifest = full.with_entries(select(cfg, &full.entries)?);
    let labels = label_set(&manifest.entries);
    let cache = cfg.require_cache()?;
    let load = |s| {
        load_feature_set(&manifest, s, cache, &labels)
            .with_context(|| format!("loading {s} features (run `langid extract` first)"))
    };
    let (train, val, test) = (load(Split::Train)?, load(Split::Val)?, load(Split::Test)?);
    if train.is_empty() || val.is_empty() {
        bail!("the manifest needs train and val entries (run `langid split` first)");
    }
    log::info!("{} labels, {} train / {} val / {} test", labels.len(), train.len(), val.len(), test.len());
    Ok(Prepared { labels, train, val, test })
}

fn train_into(cfg: &RunConfig, arch: Architecture, data: &Prepared, out: &Path) -> Result<TrainOutcome<f32>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let model = Model::<f32>::new(arch, cfg.train.seed)?;
    let log_path = out.join(LOG_FILE);
    let mut log = BufWriter::new(fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    let mut log_err = None;
    let outcome = fit(model, &data.train, &data.val, &cfg.train, |e| {
        log::info!(
            "epoch {} train_loss {:.4} val_loss {:.4} val_accuracy {:.4}",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.val_accuracy
        );
        let line = serde_json::to_string(e).map_err(anyhow::Error::from);
        if let Err(err) = line.and_then(|l| writeln!(log, "{l}").and_then(|_| log.flush()).map_err(Into::into)) {
            log_err.get_or_insert(err);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.context(format!("writing {}", log_path.display())));
    }
    save_checkpoint(&outcome.best, &out.join(MODEL_FILE))?;
    write_text(&out.join(LABELS_FILE), &(serde_json::to_string_pretty(&data.labels)? + "\n"))?;
    write_text(&out.join(RUN_FILE), &cfg.to_json()?)?;
    Ok(outcome)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    apply_common(&mut cfg, &a.common);
    apply_recipe(&mut cfg, &a.recipe)?;
    if let Some(k) = a.kernel {
        cfg.kernel = Some(k);
    }
    let out = cfg.require_out()?.to_path_buf();
    let data = prepare(&cfg)?;
    let arch = cfg.architecture(data.labels.len())?;
    let outcome = train_into(&cfg, arch, &data, &out)?;
    match (outcome.best_epoch, outcome.log.last()) {
        (Some(best), Some(_)) => println!(
            "{}: best val accuracy {:.4} at epoch {best}; wrote {}",
            cfg.arch,
            outcome.log[best - 1].val_accuracy,
            out.join(MODEL_FILE).display()
        ),
        _ => println!("{}: no epochs run; wrote the initial model to {}", cfg.arch, out.display()),
    }
    Ok(())
}

// ---------------------------------------------------------------- eval

fn load_labeled_model(dir: &Path) -> Result<LabeledModel> {
    let model = load_checkpoint(&dir.join(MODEL_FILE), None)
        .with_context(|| format!("loading {}", dir.join(MODEL_FILE).display()))?;
    let text = fs::read_to_string(dir.join(LABELS_FILE))
        .with_context(|| format!("reading {}", dir.join(LABELS_FILE).display()))?;
    let labels: Vec<String> = serde_json::from_str(&text)?;
    Ok(LabeledModel::new(model, labels)?)
}

fn split_of(s: SplitArg) -> Split {
    match s {
        SplitArg::Train => Split::Train,
        SplitArg::Val => Split::Val,
        SplitArg::Test => Split::Test,
    }
}

pub fn eval(a: EvalArgs) -> Result<()> {
    // Without --config the model's own run configuration supplies the
    // feature settings and manifest.
    let saved = a.model.join(RUN_FILE);
    let base = match &a.common.config {
        Some(p) => Some(p.clone()),
        None => saved.is_file().then_some(saved),
    };
    let mut cfg = RunConfig::load(base.as_deref())?;
    apply_common(&mut cfg, &a.common);
    if let Some(n) = &a.noise {
        cfg.noise = Some(n.clone());
    }
    if let Some(c) = &a.cluster {
        cfg.cluster = Some(parse_cluster(c));
    }
    let noise = cfg.noise_spec()?.filter(|n| !n.is_disabled());
    let seed = a.seed.unwrap_or(cfg.train.seed);
    let clf = load_labeled_model(&a.model)?;
    let manifest = read_manifest(cfg.require_manifest()?)?;
    let split = split_of(a.split);
    let mut entries: Vec<ManifestEntry> = manifest.entries.iter().filter(|e| e.split == split).cloned().collect();
    if let Some(cluster) = &cfg.cluster {
        entries = cluster_filter(&entries, cluster).map_err(as_usage)?;
    }
    if entries.is_empty() {
        bail!("no {split} entries in the manifest");
    }
    let report = evaluate(&clf, &manifest, &entries, &cfg.mfcc, noise.as_ref(), seed)?;
    let out = a.out.unwrap_or_else(|| {
        let suffix = noise.map(|n| format!("_white{}", n.snr_db)).unwrap_or_default();
        a.model.join(format!("eval_{split}{suffix}.json"))
    });
    write_text(&out, &(report.to_json()? + "\n"))?;
    print!("{}", render_markdown(&report));
    eprintln!("report written to {}", out.display());
    Ok(())
}

// ---------------------------------------------------------------- report

enum AnyReport {
    Eval(EvalReport),
    Sweep(SweepReport),
}

fn read_report(path: &Path) -> Result<AnyReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match EvalReport::from_json(&text) {
        Ok(r) => Ok(AnyReport::Eval(r)),
        Err(eval_err) => SweepReport::from_json(&text).map(AnyReport::Sweep).map_err(|_| {
            anyhow!("{} is neither an evaluation nor a sweep report: {eval_err}", path.display())
        }),
    }
}

pub fn report(a: ReportArgs) -> Result<()> {
    let text = match (read_report(&a.input)?, a.format) {
        (AnyReport::Eval(r), Format::Markdown) => render_markdown(&r),
        (AnyReport::Eval(r), Format::Csv) => render_csv(&r)?,
        (AnyReport::Eval(r), Format::Json) => r.to_json()? + "\n",
        (AnyReport::Sweep(r), Format::Markdown) => r.to_markdown(),
        (AnyReport::Sweep(r), Format::Csv) => r.to_csv(),
        (AnyReport::Sweep(r), Format::Json) => r.to_json()? + "\n",
    };
    match &a.out {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- sweep

pub fn sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = RunConfig::load(a.common.config.as_deref())?;
    apply_common(&mut cfg, &a.common);
    apply_recipe(&mut cfg, &a.recipe)?;
    if let Some(k) = &a.kernels {
        cfg.kernels = k.clone();
    }
    if cfg.kernels.is_empty() {
        return Err(usage("no kernel sizes to sweep"));
    }
    let out = cfg.require_out()?.to_path_buf();
    let data = prepare(&cfg)?;
    if data.test.is_empty() {
        bail!("the manifest has no test entries");
    }
    let test: Vec<&FeatureMatrix<f32>> = data.test.features.iter().collect();
    let mut rows = Vec::new();
    for &kernel in &cfg.kernels {
        let run = RunConfig { kernel: Some(kernel), ..cfg.clone() };
        let arch = run.architecture(data.labels.len())?;
        let dir: PathBuf = out.join(format!("kernel_{kernel}"));
        let outcome = train_into(&run, arch, &data, &dir)?;
        let clf = LabeledModel::new(outcome.best, data.labels.clone())?;
        let r = evaluate_features(&clf, &test, &data.test.labels)?;
        write_text(&dir.join("eval_test.json"), &(r.to_json()? + "\n"))?;
        eprintln!("kernel {kernel}: test accuracy {:.4}", r.accuracy);
        rows.push(SweepRow { kernel, accuracy: r.accuracy });
    }
    let report = SweepReport { arch: cfg.arch, rows };
    write_text(&out.join("sweep.json"), &(report.to_json()? + "\n"))?;
    write_text(&out.join("sweep.md"), &report.to_markdown())?;
    print!("{}", report.to_markdown());
    Ok(())
}
