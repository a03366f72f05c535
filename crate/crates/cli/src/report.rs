//! Cross-run comparison of `metrics.json` files.

use std::path::{Path, PathBuf};

use anyhow::Context;
use idtrace_core::metrics::{parse_report_blocks, RESERVED_KEYS};
use serde::{Deserialize, Serialize};

use crate::manifest::{RunManifest, MANIFEST_FILE};

pub const METRICS_FILE: &str = "metrics.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub run: String,
    pub label: String,
    pub command: String,
    pub clips: usize,
    pub pooled_precision: f64,
    pub pooled_recall: f64,
    pub pooled_similarity: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_similarity: f64,
}

fn run_name(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

pub fn load_row(dir: &Path) -> anyhow::Result<ReportRow> {
    let manifest = RunManifest::load(&dir.join(MANIFEST_FILE))?;
    let path = dir.join(METRICS_FILE);
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("{}: run has no {METRICS_FILE}", dir.display()))?;
    let (pooled, macro_avg) =
        parse_report_blocks(&text).with_context(|| format!("{}: incompatible metrics file", path.display()))?;
    let doc: serde_json::Map<String, serde_json::Value> = serde_json::from_str(&text)?;
    let clips = doc.keys().filter(|k| !RESERVED_KEYS.contains(&k.as_str())).count();
    let run = run_name(dir);
    Ok(ReportRow {
        label: manifest.label.unwrap_or_else(|| run.clone()),
        run,
        command: manifest.command,
        clips,
        pooled_precision: pooled.precision,
        pooled_recall: pooled.recall,
        pooled_similarity: pooled.sequence_similarity,
        macro_precision: macro_avg.precision,
        macro_recall: macro_avg.recall,
        macro_similarity: macro_avg.sequence_similarity,
    })
}

pub fn collect(runs: &[PathBuf]) -> anyhow::Result<Vec<ReportRow>> {
    if runs.is_empty() {
        anyhow::bail!("no runs given");
    }
    runs.iter().map(|d| load_row(d)).collect()
}

pub fn render_table(rows: &[ReportRow]) -> String {
    let header = ["run", "label", "clips", "P (pooled)", "R (pooled)", "sim (pooled)", "P (macro)", "R (macro)", "sim (macro)"];
    let body: Vec<[String; 9]> = rows
        .iter()
        .map(|r| {
            [
                r.run.clone(),
                r.label.clone(),
                r.clips.to_string(),
                format!("{:.3}", r.pooled_precision),
                format!("{:.3}", r.pooled_recall),
                format!("{:.3}", r.pooled_similarity),
                format!("{:.3}", r.macro_precision),
                format!("{:.3}", r.macro_recall),
                format!("{:.3}", r.macro_similarity),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &mut dyn Iterator<Item = &str>| {
        cells
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(&mut header.into_iter());
    out.push('\n');
    for row in &body {
        out.push_str(&line(&mut row.iter().map(String::as_str)));
        out.push('\n');
    }
    out
}

pub fn to_csv(rows: &[ReportRow]) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn load_csv(text: &str) -> anyhow::Result<Vec<ReportRow>> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .context("parsing report csv")
}
