use std::fmt::Write;

use super::{EvalReport, DISPLAY_DECIMALS};
use crate::error::{Error, Result};

fn fixed(v: f64) -> String {
    format!("{v:.prec$}", prec = DISPLAY_DECIMALS)
}

/// Confusion matrix with rows = actual and columns = predicted, followed by
/// the per-class PPV, TPR and F1 columns and the pooled accuracy.
pub fn render_markdown(r: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str("| actual \\ predicted |");
    for l in &r.labels {
        let _ = write!(s, " {l} |");
    }
    s.push_str(" PPV | TPR | F1 |\n|---|");
    s.push_str(&"---:|".repeat(r.labels.len() + 3));
    s.push('\n');
    for (i, l) in r.labels.iter().enumerate() {
        let _ = write!(s, "| **{l}** |");
        for (j, c) in r.counts[i].iter().enumerate() {
            if i == j {
                let _ = write!(s, " **{c}** |");
            } else {
                let _ = write!(s, " {c} |");
            }
        }
        let _ = writeln!(s, " {} | {} | {} |", fixed(r.ppv[i]), fixed(r.tpr[i]), fixed(r.f1[i]));
    }
    let _ = writeln!(s, "\nAccuracy: {}", fixed(r.accuracy));
    if !r.zero_division.is_empty() {
        let flagged: Vec<String> = r
            .zero_division
            .iter()
            .map(|z| format!("{} {:?}", z.label, z.metric))
            .collect();
        let _ = writeln!(s, "\nUndefined (reported as 0): {}", flagged.join(", "));
    }
    s
}

/// One row per actual class: `actual, <predicted counts...>, ppv, tpr, f1`,
/// then an `accuracy` row.
pub fn render_csv(r: &EvalReport) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .flexible(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec!["actual".to_string()];
    header.extend(r.labels.iter().cloned());
    header.extend(["ppv", "tpr", "f1"].map(String::from));
    w.write_record(&header)?;
    for (i, l) in r.labels.iter().enumerate() {
        let mut row = vec![l.clone()];
        row.extend(r.counts[i].iter().map(u64::to_string));
        row.extend([r.ppv[i], r.tpr[i], r.f1[i]].map(fixed));
        w.write_record(&row)?;
    }
    w.write_record(["accuracy".to_string(), fixed(r.accuracy)])?;
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}
