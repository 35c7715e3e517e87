use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableKind {
    /// One row per model family.
    Main,
    /// One row per combination of distillation loss terms.
    Ablation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model: String,
    /// Modalities seen at training time.
    pub text: bool,
    pub image: bool,
    /// Ablation rows: whether the soft-label and embedding terms are active.
    pub soft_labels: Option<bool>,
    pub embeddings: Option<bool>,
    /// Test accuracy per seed, in the table's seed order.
    pub accuracies: Vec<f64>,
    /// Checkpoints the accuracies were computed from, per seed.
    pub checkpoints: Vec<PathBuf>,
}

impl ResultRow {
    pub fn mean(&self) -> f64 {
        self.accuracies.iter().sum::<f64>() / self.accuracies.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub kind: TableKind,
    pub dataset: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<ResultRow>,
}

impl ResultsTable {
    pub fn row(&self, model: &str) -> Option<&ResultRow> {
        self.rows.iter().find(|r| r.model == model)
    }

    pub fn write_json(&self, path: &Path) -> Result<(), HarnessError> {
        let mut json = serde_json::to_vec_pretty(self).expect("table serializes");
        json.push(b'\n');
        std::fs::write(path, json).map_err(|e| HarnessError::io(path, e))
    }

    pub fn read_json(path: &Path) -> Result<Self, HarnessError> {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Csv => "csv",
            Self::Markdown => "md",
        }
    }
}

fn numeric_columns(table: &ResultsTable) -> Vec<Vec<f64>> {
    table.rows.iter().map(|r| r.accuracies.iter().copied().chain([r.mean()]).collect()).collect()
}

fn column_max(cells: &[Vec<f64>], col: usize) -> f64 {
    cells.iter().map(|r| r[col]).fold(f64::NEG_INFINITY, f64::max)
}

fn flag(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn check(b: bool) -> &'static str {
    if b {
        "✓"
    } else {
        ""
    }
}

pub fn render_csv(table: &ResultsTable) -> String {
    let mut out = String::from("model,text,image");
    if table.kind == TableKind::Ablation {
        out.push_str(",soft_labels,embeddings");
    }
    for s in &table.seeds {
        let _ = write!(out, ",seed_{s}");
    }
    out.push_str(",mean\n");
    for row in &table.rows {
        let _ = write!(out, "{},{},{}", row.model, flag(row.text), flag(row.image));
        if table.kind == TableKind::Ablation {
            let _ = write!(
                out,
                ",{},{}",
                flag(row.soft_labels.unwrap_or(false)),
                flag(row.embeddings.unwrap_or(false))
            );
        }
        for a in row.accuracies.iter().chain([&row.mean()]) {
            let _ = write!(out, ",{a:.4}");
        }
        out.push('\n');
    }
    out
}

/// Markdown table; the best value of every accuracy column is bold.
pub fn render_markdown(table: &ResultsTable) -> String {
    let cells = numeric_columns(table);
    let ncols = table.seeds.len() + 1;
    let maxima: Vec<f64> = (0..ncols).map(|c| column_max(&cells, c)).collect();
    let mut head = vec!["Model".to_string(), "Text".into(), "Image".into()];
    if table.kind == TableKind::Ablation {
        head.extend(["Soft labels".into(), "Embeddings".into()]);
    }
    head.extend(table.seeds.iter().map(|s| format!("Seed {s}")));
    head.push("Mean".into());
    let mut out = format!("Test accuracy on {}\n\n| {} |\n|", table.dataset, head.join(" | "));
    for i in 0..head.len() {
        out.push_str(if i < head.len() - ncols { "---|" } else { "---:|" });
    }
    out.push('\n');
    for (row, vals) in table.rows.iter().zip(&cells) {
        let mut parts = vec![row.model.clone(), check(row.text).into(), check(row.image).into()];
        if table.kind == TableKind::Ablation {
            parts.push(check(row.soft_labels.unwrap_or(false)).into());
            parts.push(check(row.embeddings.unwrap_or(false)).into());
        }
        for (c, v) in vals.iter().enumerate() {
            parts.push(if *v == maxima[c] { format!("**{v:.4}**") } else { format!("{v:.4}") });
        }
        let _ = writeln!(out, "| {} |", parts.join(" | "));
    }
    out
}

/// Writes the table in `format` to `path`.
pub fn emit_report(table: &ResultsTable, format: ReportFormat, path: &Path) -> Result<(), HarnessError> {
    if table.rows.is_empty() || table.seeds.is_empty() {
        return Err(HarnessError::EmptyResults);
    }
    let text = match format {
        ReportFormat::Csv => render_csv(table),
        ReportFormat::Markdown => render_markdown(table),
    };
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}
