//! Corpus ingestion: WAV files, the CSV manifest, stratified splits, manual
//! balancing, white-noise augmentation, feature extraction and a synthetic
//! toy corpus.
//!
//! A manifest is a CSV file with the header `path,label,gender,split`.
//! Relative paths are resolved against the manifest's directory.

mod extract;
mod noise;
mod synth;
mod wav;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub use extract::{cache_path, clip_seed, extract_features, features_for, load_feature_set, ExtractReport};
pub use noise::{add_white_noise, signal_power, NoiseKind, NoiseSpec};
pub use synth::{
    class_recipe, render_clip, synth_toy_corpus, toy_label, ClassRecipe, SynthConfig, TOY_MAX_CLASSES, TOY_MIN_CLASSES,
};
pub use wav::{decode_wav, encode_wav, load_wav, save_wav};

pub const MANIFEST_HEADER: [&str; 4] = ["path", "label", "gender", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
    /// Not annotated.
    U,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub gender: Gender,
    pub split: Split,
}

/// Manifest rows plus the directory their relative paths refer to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub base: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base.join(&entry.path)
        }
    }

    /// Sorted distinct labels.
    pub fn labels(&self) -> Vec<String> {
        label_set(&self.entries)
    }

    pub fn with_entries(&self, entries: Vec<ManifestEntry>) -> Self {
        Self {
            base: self.base.clone(),
            entries,
        }
    }
}

pub fn label_set(entries: &[ManifestEntry]) -> Vec<String> {
    entries
        .iter()
        .map(|e| e.label.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Fails if any entry carries a label outside `declared`.
pub fn check_labels(entries: &[ManifestEntry], declared: &[String]) -> Result<()> {
    let known: BTreeSet<&str> = declared.iter().map(String::as_str).collect();
    let unknown: BTreeSet<&str> = entries
        .iter()
        .map(|e| e.label.as_str())
        .filter(|l| !known.contains(l))
        .collect();
    if unknown.is_empty() {
        Ok(())
    } else {
        Err(Error::LabelMismatch(format!(
            "labels not in the declared set: {}",
            unknown.into_iter().collect::<Vec<_>>().join(", ")
        )))
    }
}

/// Parses a manifest without touching the referenced files.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != MANIFEST_HEADER {
        return Err(invalid(format!(
            "manifest header must be {}, got {}",
            MANIFEST_HEADER.join(","),
            header.join(",")
        )));
    }
    let mut entries = Vec::new();
    for row in reader.deserialize() {
        entries.push(row?);
    }
    Ok(entries)
}

/// Reads a manifest and checks that every referenced file exists.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    let entries = parse_manifest(&text)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = Manifest { base, entries };
    for (i, e) in manifest.entries.iter().enumerate() {
        let file = manifest.resolve(e);
        if !file.is_file() {
            return Err(invalid(format!(
                "manifest row {}: {} does not exist",
                i + 1,
                file.display()
            )));
        }
    }
    Ok(manifest)
}

pub fn manifest_to_string(entries: &[ManifestEntry]) -> Result<String> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(Vec::new());
    writer.write_record(MANIFEST_HEADER)?;
    for e in entries {
        writer.serialize(e)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| invalid(e.to_string()))
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, manifest_to_string(entries)?)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutcome {
    pub entries: Vec<ManifestEntry>,
    pub warnings: Vec<String>,
}

/// Assigns train/val/test independently within every `(label, gender)`
/// group. Each group is shuffled with one seeded generator, visited in sorted
/// key order; val and test get `n * ratio` entries rounded to nearest (halves
/// down) and the remainder goes to train. Groups of fewer than 3 entries go entirely to train.
pub fn split_dataset(entries: &[ManifestEntry], ratios: (f64, f64, f64), seed: u64) -> Result<SplitOutcome> {
    let (tr, va, te) = ratios;
    if [tr, va, te].iter().any(|r| !(0.0..=1.0).contains(r)) || (tr + va + te - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("split ratios {ratios:?} must be in [0, 1] and sum to 1")));
    }
    let mut groups: BTreeMap<(&str, Gender), Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        groups.entry((e.label.as_str(), e.gender)).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = entries.to_vec();
    let mut warnings = Vec::new();
    for ((label, gender), mut idx) in groups {
        let n = idx.len();
        if n < 3 {
            let msg = format!("group ({label}, {gender:?}) has {n} entries, all assigned to train");
            log::warn!("{msg}");
            warnings.push(msg);
            for i in idx {
                out[i].split = Split::Train;
            }
            continue;
        }
        idx.shuffle(&mut rng);
        // Nearest count, halves rounding down; the two rounding errors
        // together stay within one entry for train as well.
        let round = |x: f64| (x - 0.5 - 1e-9).ceil().max(0.0) as usize;
        let n_val = round(n as f64 * va);
        let n_test = round(n as f64 * te);
        for (k, i) in idx.into_iter().enumerate() {
            out[i].split = if k < n_val {
                Split::Val
            } else if k < n_val + n_test {
                Split::Test
            } else {
                Split::Train
            };
        }
    }
    Ok(SplitOutcome { entries: out, warnings })
}

/// Keeps exactly `per_class` seeded-random training entries of every label.
/// Entries of other splits pass through untouched; order is preserved.
pub fn balance_manual(entries: &[ManifestEntry], per_class: usize, seed: u64) -> Result<Vec<ManifestEntry>> {
    if per_class == 0 {
        return Err(invalid("per_class = 0 leaves an empty training set"));
    }
    let mut by_label: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        if e.split == Split::Train {
            by_label.entry(e.label.as_str()).or_default().push(i);
        }
    }
    if by_label.is_empty() {
        return Err(invalid("no training entries to balance"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; entries.len()];
    for (label, mut idx) in by_label {
        if idx.len() < per_class {
            return Err(invalid(format!(
                "class '{label}' has {} training entries, fewer than {per_class}",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for &i in &idx[per_class..] {
            keep[i] = false;
        }
    }
    Ok(entries
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(e, _)| e.clone())
        .collect())
}

#[cfg(test)]
mod tests;
