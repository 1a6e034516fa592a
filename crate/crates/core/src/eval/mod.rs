//! Confusion matrices, per-class PPV / TPR / F1, pooled accuracy and report
//! rendering.

mod render;
mod sweep;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::{features_for, clip_seed, Manifest, ManifestEntry, NoiseSpec};
use crate::dsp::{FeatureMatrix, MfccConfig};
use crate::error::{invalid, Error, Result};
use crate::models::{argmax, Model};

pub use render::{render_csv, render_markdown};
pub use sweep::{SweepReport, SweepRow};

/// Decimal places used when rendering metrics.
pub const DISPLAY_DECIMALS: usize = 3;

/// Square count matrix: rows are actual classes, columns predicted ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    labels: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = labels.len();
        if k == 0 {
            return Err(invalid("confusion matrix needs at least one class"));
        }
        if labels.iter().collect::<BTreeSet<_>>().len() != k {
            return Err(invalid(format!("duplicate class labels in {labels:?}")));
        }
        if counts.len() != k || counts.iter().any(|r| r.len() != k) {
            return Err(invalid(format!("counts must be {k}x{k}")));
        }
        Ok(Self { labels, counts })
    }

    /// Counts from class indices.
    pub fn from_indices(labels: Vec<String>, actual: &[usize], predicted: &[usize]) -> Result<Self> {
        if actual.len() != predicted.len() {
            return Err(invalid(format!(
                "{} actual labels but {} predictions",
                actual.len(),
                predicted.len()
            )));
        }
        let k = labels.len();
        let mut counts = vec![vec![0u64; k]; k];
        for (&a, &p) in actual.iter().zip(predicted) {
            if a >= k || p >= k {
                return Err(invalid(format!("class index {} out of range for {k} classes", a.max(p))));
            }
            counts[a][p] += 1;
        }
        Self::new(labels, counts)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn n_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|r| r[c]).sum()
    }
}

/// Counts from label strings; every label must be in `labels`.
pub fn confusion<S: AsRef<str>>(labels: &[String], actual: &[S], predicted: &[S]) -> Result<ConfusionMatrix> {
    let index = |s: &S| {
        labels
            .iter()
            .position(|l| l == s.as_ref())
            .ok_or_else(|| invalid(format!("unknown label '{}'", s.as_ref())))
    };
    let a = actual.iter().map(index).collect::<Result<Vec<_>>>()?;
    let p = predicted.iter().map(index).collect::<Result<Vec<_>>>()?;
    ConfusionMatrix::from_indices(labels.to_vec(), &a, &p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ppv,
    Tpr,
    F1,
}

/// A metric whose denominator was zero and was reported as 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZeroDivision {
    pub label: String,
    pub metric: Metric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub ppv: Vec<f64>,
    pub tpr: Vec<f64>,
    pub f1: Vec<f64>,
    pub accuracy: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_division: Vec<ZeroDivision>,
}

impl EvalReport {
    pub fn confusion(&self) -> Result<ConfusionMatrix> {
        ConfusionMatrix::new(self.labels.clone(), self.counts.clone())
    }

    /// Pooled TPR over all decisions; equals accuracy for single-label tasks.
    pub fn micro_tpr(&self) -> f64 {
        let tp: u64 = (0..self.labels.len()).map(|i| self.counts[i][i]).sum();
        let pos: u64 = self.counts.iter().flatten().sum();
        tp as f64 / pos as f64
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        r.confusion()?;
        let k = r.labels.len();
        if r.ppv.len() != k || r.tpr.len() != k || r.f1.len() != k {
            return Err(invalid("report metric vectors do not match the class count"));
        }
        Ok(r)
    }
}

/// Per-class metrics of a confusion matrix. A zero denominator yields 0
/// and an entry in `zero_division`.
pub fn metrics(cm: &ConfusionMatrix) -> Result<EvalReport> {
    let total = cm.total();
    if total == 0 {
        return Err(invalid("confusion matrix is empty"));
    }
    let k = cm.n_classes();
    let mut flags = Vec::new();
    let mut ratio = |num: u64, den: u64, c: usize, m: Metric| {
        if den == 0 {
            flags.push(ZeroDivision {
                label: cm.labels[c].clone(),
                metric: m,
            });
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let mut ppv = Vec::with_capacity(k);
    let mut tpr = Vec::with_capacity(k);
    for c in 0..k {
        let tp = cm.counts[c][c];
        ppv.push(ratio(tp, cm.col_sum(c), c, Metric::Ppv));
        tpr.push(ratio(tp, cm.row_sum(c), c, Metric::Tpr));
    }
    let mut f1 = Vec::with_capacity(k);
    for c in 0..k {
        let s = ppv[c] + tpr[c];
        if s == 0.0 {
            flags.push(ZeroDivision {
                label: cm.labels[c].clone(),
                metric: Metric::F1,
            });
            f1.push(0.0);
        } else {
            f1.push(2.0 * ppv[c] * tpr[c] / s);
        }
    }
    Ok(EvalReport {
        labels: cm.labels.clone(),
        counts: cm.counts.clone(),
        ppv,
        tpr,
        f1,
        accuracy: cm.trace() as f64 / total as f64,
        zero_division: flags,
    })
}

/// Anything that maps feature matrices to per-class scores.
pub trait Classifier {
    /// Class names in logit order.
    fn labels(&self) -> &[String];
    fn logits(&self, batch: &[&FeatureMatrix<f32>]) -> Result<Vec<Vec<f32>>>;
}

/// A trained model together with the names of its classes.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledModel {
    pub model: Model<f32>,
    pub labels: Vec<String>,
}

impl LabeledModel {
    pub fn new(model: Model<f32>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != model.n_classes() {
            return Err(Error::LabelMismatch(format!(
                "model has {} classes but {} labels were given",
                model.n_classes(),
                labels.len()
            )));
        }
        Ok(Self { model, labels })
    }
}

impl Classifier for LabeledModel {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn logits(&self, batch: &[&FeatureMatrix<f32>]) -> Result<Vec<Vec<f32>>> {
        self.model.predict_logits(batch, 64)
    }
}

/// Fails unless every label in `entries` is one of the classifier's.
pub fn check_label_set(classifier_labels: &[String], entries: &[ManifestEntry]) -> Result<()> {
    let known: BTreeSet<&str> = classifier_labels.iter().map(String::as_str).collect();
    let missing: BTreeSet<&str> = entries
        .iter()
        .map(|e| e.label.as_str())
        .filter(|l| !known.contains(l))
        .collect();
    if missing.is_empty() {
        return Ok(());
    }
    Err(Error::LabelMismatch(format!(
        "model labels [{}] are missing [{}]",
        classifier_labels.join(", "),
        missing.into_iter().collect::<Vec<_>>().join(", ")
    )))
}

/// Scores precomputed features. Ties go to the lowest class index.
pub fn evaluate_features<C: Classifier + ?Sized>(
    classifier: &C,
    features: &[&FeatureMatrix<f32>],
    actual: &[usize],
) -> Result<EvalReport> {
    let logits = classifier.logits(features)?;
    if logits.len() != features.len() {
        return Err(invalid("classifier returned the wrong number of rows"));
    }
    let predicted: Vec<usize> = logits.iter().map(|r| argmax(r)).collect();
    metrics(&ConfusionMatrix::from_indices(classifier.labels().to_vec(), actual, &predicted)?)
}

/// Extracts features for `entries` (with optional noise mixed in before
/// extraction) and scores them. Noise for entry `i` is seeded with
/// `clip_seed(seed, i)`.
pub fn evaluate<C: Classifier + ?Sized>(
    classifier: &C,
    manifest: &Manifest,
    entries: &[ManifestEntry],
    mfcc: &MfccConfig,
    noise: Option<&NoiseSpec>,
    seed: u64,
) -> Result<EvalReport> {
    check_label_set(classifier.labels(), entries)?;
    if entries.is_empty() {
        return Err(invalid("no entries to evaluate"));
    }
    let labels = classifier.labels();
    let mut features = Vec::with_capacity(entries.len());
    let mut actual = Vec::with_capacity(entries.len());
    for (i, e) in entries.iter().enumerate() {
        let n = noise.map(|spec| (spec, clip_seed(seed, i)));
        features.push(features_for(manifest, e, mfcc, n)?);
        actual.push(labels.iter().position(|l| *l == e.label).expect("checked above"));
    }
    let refs: Vec<&FeatureMatrix<f32>> = features.iter().collect();
    evaluate_features(classifier, &refs, &actual)
}

/// Keeps the entries whose label is in `cluster`. A cluster needs at least
/// two labels, each present in `entries`.
pub fn cluster_filter(entries: &[ManifestEntry], cluster: &[String]) -> Result<Vec<ManifestEntry>> {
    let wanted: BTreeSet<&str> = cluster.iter().map(String::as_str).collect();
    if wanted.len() < 2 {
        return Err(invalid(format!(
            "cluster {cluster:?} has fewer than two labels; single-class identification is undefined"
        )));
    }
    let present: BTreeSet<&str> = entries.iter().map(|e| e.label.as_str()).collect();
    let absent: Vec<&str> = wanted.difference(&present).copied().collect();
    if !absent.is_empty() {
        return Err(invalid(format!("cluster labels without entries: {}", absent.join(", "))));
    }
    Ok(entries
        .iter()
        .filter(|e| wanted.contains(e.label.as_str()))
        .cloned()
        .collect())
}
