//! Serialization of results: heatmap CSV/JSON files and metrics reports.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;
use crate::experiments::{AttackTable, HeatmapResult};

/// Provenance block embedded in every numeric report.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: &'static str,
    pub seed: u64,
    pub n: usize,
    pub m: usize,
}

impl Provenance {
    pub fn new(seed: u64, n: usize, m: usize) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION"),
            seed,
            n,
            m,
        }
    }
}

/// Write `<path>.csv` (labels plus values at 5 decimal places) and
/// `<path>.json` (full-precision values). Returns the two paths.
pub fn export_heatmap(hm: &HeatmapResult, path: &Path) -> Result<(PathBuf, PathBuf)> {
    let csv_path = path.with_extension("csv");
    let json_path = path.with_extension("json");

    let mut csv = String::new();
    csv.push_str("layer");
    for c in &hm.col_labels {
        csv.push(',');
        csv.push_str(c);
    }
    csv.push('\n');
    for (label, row) in hm.row_labels.iter().zip(&hm.values) {
        csv.push_str(label);
        for v in row {
            csv.push_str(&format!(",{v:.5}"));
        }
        csv.push('\n');
    }
    fs::write(&csv_path, csv)?;

    #[derive(Serialize)]
    struct HeatmapJson<'a> {
        version: &'static str,
        row_labels: &'a [String],
        col_labels: &'a [String],
        n_samples: usize,
        values: &'a [Vec<f64>],
    }
    let json = serde_json::to_string_pretty(&HeatmapJson {
        version: env!("CARGO_PKG_VERSION"),
        row_labels: &hm.row_labels,
        col_labels: &hm.col_labels,
        n_samples: hm.n_samples,
        values: &hm.values,
    })?;
    fs::write(&json_path, json)?;
    Ok((csv_path, json_path))
}

/// Attack table as CSV: one row per (method, epsilon), with the clean
/// accuracies in leading comment-style rows.
pub fn attack_table_csv(table: &AttackTable) -> String {
    let mut out = String::new();
    out.push_str("attack,epsilon,f1_accuracy,f2_accuracy\n");
    out.push_str(&format!("clean,0,{:.6},{:.6}\n", table.clean_f1, table.clean_f2));
    for row in &table.rows {
        let kind = match row.kind {
            crate::attack::AttackKind::Fgm => "fgm",
            crate::attack::AttackKind::Pgd => "pgd",
        };
        out.push_str(&format!(
            "{kind},{},{:.6},{:.6}\n",
            row.epsilon, row.f1_accuracy, row.f2_accuracy
        ));
    }
    out
}

/// Serialize any report with a provenance block to pretty JSON.
pub fn report_json<T: Serialize>(provenance: &Provenance, body: &T) -> Result<String> {
    #[derive(Serialize)]
    struct Report<'a, T> {
        provenance: &'a Provenance,
        #[serde(flatten)]
        body: &'a T,
    }
    Ok(serde_json::to_string_pretty(&Report {
        provenance,
        body,
    })?)
}
