use std::path::{Component, Path, PathBuf};

use super::{add_white_noise, load_wav, Manifest, ManifestEntry, NoiseSpec, Split};
use crate::dsp::{compute_mfcc, read_feature_cache, write_feature_cache, FeatureMatrix, MfccConfig};
use crate::error::{invalid, Result};
use crate::train::LabeledSet;

/// Cache file for an entry: its manifest path under `cache_dir` with the
/// extension replaced by `.mfc`. Root and parent components are dropped so
/// every cache stays inside `cache_dir`.
pub fn cache_path(cache_dir: &Path, entry: &ManifestEntry) -> PathBuf {
    let mut out = cache_dir.to_path_buf();
    for c in entry.path.components() {
        if let Component::Normal(part) = c {
            out.push(part);
        }
    }
    out.set_extension("mfc");
    out
}

/// Per-clip noise seed, so each clip gets its own noise regardless of
/// evaluation order.
pub fn clip_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64).wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Loads one clip, optionally adds noise, and computes its MFCC matrix.
pub fn features_for(
    manifest: &Manifest,
    entry: &ManifestEntry,
    cfg: &MfccConfig,
    noise: Option<(&NoiseSpec, u64)>,
) -> Result<FeatureMatrix<f32>> {
    let mut clip = load_wav(&manifest.resolve(entry))?;
    if let Some((spec, seed)) = noise {
        clip = add_white_noise(&clip, spec, seed)?;
    }
    compute_mfcc(&clip, cfg)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractReport {
    pub written: usize,
    pub skipped: usize,
    /// Files that could not be processed, with the reason.
    pub failures: Vec<(PathBuf, String)>,
}

/// Writes a feature cache for every manifest entry. Existing caches are kept
/// unless `force` is set. A failing clip is recorded and the rest still run.
/// Clips are processed on up to `available_parallelism` threads; each output
/// depends only on its own clip.
pub fn extract_features(manifest: &Manifest, cfg: &MfccConfig, cache_dir: &Path, force: bool) -> Result<ExtractReport> {
    cfg.validate()?;
    let mut report = ExtractReport::default();
    let mut todo = Vec::new();
    for entry in &manifest.entries {
        let target = cache_path(cache_dir, entry);
        if !force && target.is_file() {
            report.skipped += 1;
        } else {
            todo.push((entry, target));
        }
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(todo.len()).max(1);
    let per = todo.len().div_ceil(threads).max(1);
    let outcomes: Vec<Result<()>> = std::thread::scope(|s| {
        let handles: Vec<_> = todo
            .chunks(per)
            .map(|chunk| {
                s.spawn(move || {
                    chunk
                        .iter()
                        .map(|(entry, target)| features_for(manifest, entry, cfg, None).and_then(|f| write_feature_cache(target, &f)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("extraction worker panicked"))
            .collect()
    });
    for ((entry, _), outcome) in todo.iter().zip(outcomes) {
        match outcome {
            Ok(()) => report.written += 1,
            Err(e) => report.failures.push((manifest.resolve(entry), e.to_string())),
        }
    }
    Ok(report)
}

/// Reads the cached features of the entries in `split`, labelled by their
/// index in `labels`.
pub fn load_feature_set(
    manifest: &Manifest,
    split: Split,
    cache_dir: &Path,
    labels: &[String],
) -> Result<LabeledSet<f32>> {
    let mut set = LabeledSet::default();
    for entry in manifest.entries.iter().filter(|e| e.split == split) {
        let label = labels
            .iter()
            .position(|l| *l == entry.label)
            .ok_or_else(|| invalid(format!("label '{}' is not among {labels:?}", entry.label)))?;
        let path = cache_path(cache_dir, entry);
        let features = read_feature_cache(&path).map_err(|e| {
            invalid(format!("{}: {e} (run extract first)", path.display()))
        })?;
        set.features.push(features);
        set.labels.push(label);
    }
    Ok(set)
}
