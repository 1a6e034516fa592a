use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::models::ArchTag;

/// Test accuracy for one kernel size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub kernel: usize,
    /// Fraction in [0, 1].
    pub accuracy: f64,
}

/// Kernel-size sweep over one architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepReport {
    pub arch: ArchTag,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(invalid("sweep report has no rows"));
        }
        if let Some(r) = self.rows.iter().find(|r| !(0.0..=1.0).contains(&r.accuracy)) {
            return Err(invalid(format!("kernel {}: accuracy {} outside [0, 1]", r.kernel, r.accuracy)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        r.validate()?;
        Ok(r)
    }

    /// Two columns, accuracy as a percentage with two decimals.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Kernel size | Accuracy |\n|---:|---:|\n");
        for r in &self.rows {
            let _ = writeln!(s, "| {} | {:.2}% |", r.kernel, 100.0 * r.accuracy);
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kernel_size,accuracy\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.4}", r.kernel, r.accuracy);
        }
        s
    }
}
