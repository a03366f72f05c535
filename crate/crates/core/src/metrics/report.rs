//! Per-clip identity-matching reports and their aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::assignment::{build_matching_problem, solve_assignment};
use super::pairs::{pair_counts, PairCounts};
use super::MetricsError;
use crate::jsonfmt;
use crate::types::IdSequence;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub predicted: String,
    pub ground_truth: String,
    pub weight: u64,
}

/// Precision, recall and sequence similarity for one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdMatchReport {
    pub clip_id: String,
    pub counts: PairCounts,
    pub precision: f64,
    pub recall: f64,
    pub sequence_similarity: f64,
    /// Optimal assignment weight.
    pub matched_weight: u64,
    /// Total ground-truth appearances, the similarity denominator.
    pub ground_truth_total: u64,
    pub matched_pairs: Vec<MatchedPair>,
}

/// Matched weight over the total number of ground-truth appearances.
pub fn sequence_similarity(pred: &[IdSequence], gt: &[IdSequence]) -> Result<f64, MetricsError> {
    let (weight, total, _) = similarity_parts(pred, gt)?;
    Ok((weight as f64 / total as f64).clamp(0.0, 1.0))
}

fn similarity_parts(
    pred: &[IdSequence],
    gt: &[IdSequence],
) -> Result<(u64, u64, Vec<MatchedPair>), MetricsError> {
    let total: u64 = gt.iter().map(|g| g.len() as u64).sum();
    if total == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }
    let problem = build_matching_problem(pred, gt);
    let a = solve_assignment(&problem);
    let pairs = a
        .pairs
        .iter()
        .map(|&(i, j)| MatchedPair {
            predicted: pred[i].label().to_string(),
            ground_truth: gt[j].label().to_string(),
            weight: problem.weights[i][j],
        })
        .collect();
    Ok((a.total, total, pairs))
}

pub fn evaluate_clip(
    clip_id: &str,
    pred: &[IdSequence],
    gt: &[IdSequence],
) -> Result<IdMatchReport, MetricsError> {
    let counts = pair_counts(pred, gt);
    let (weight, total, matched_pairs) = similarity_parts(pred, gt)?;
    Ok(IdMatchReport {
        clip_id: clip_id.to_string(),
        counts,
        precision: counts.precision(),
        recall: counts.recall(),
        sequence_similarity: (weight as f64 / total as f64).clamp(0.0, 1.0),
        matched_weight: weight,
        ground_truth_total: total,
        matched_pairs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBlock {
    pub precision: f64,
    pub recall: f64,
    pub sequence_similarity: f64,
}

/// Pooled (micro) and unweighted-mean (macro) scores over several clips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub clips: usize,
    pub counts: PairCounts,
    pub pooled: ScoreBlock,
    #[serde(rename = "macro")]
    pub macro_avg: ScoreBlock,
}

pub fn aggregate_reports(per_clip: &[IdMatchReport]) -> Result<AggregateReport, MetricsError> {
    if per_clip.is_empty() {
        return Err(MetricsError::NoReports);
    }
    let counts = per_clip
        .iter()
        .fold(PairCounts::default(), |acc, r| acc + r.counts);
    let weight: u64 = per_clip.iter().map(|r| r.matched_weight).sum();
    let total: u64 = per_clip.iter().map(|r| r.ground_truth_total).sum();
    let n = per_clip.len() as f64;
    let mean = |f: fn(&IdMatchReport) -> f64| per_clip.iter().map(f).sum::<f64>() / n;
    Ok(AggregateReport {
        clips: per_clip.len(),
        counts,
        pooled: ScoreBlock {
            precision: counts.precision(),
            recall: counts.recall(),
            sequence_similarity: weight as f64 / total as f64,
        },
        macro_avg: ScoreBlock {
            precision: mean(|r| r.precision),
            recall: mean(|r| r.recall),
            sequence_similarity: mean(|r| r.sequence_similarity),
        },
    })
}

/// Keys reserved for the aggregate blocks of a report file.
pub const RESERVED_KEYS: [&str; 2] = ["pooled", "macro"];

#[derive(Serialize)]
struct ClipEntry<'a> {
    precision: f64,
    recall: f64,
    sequence_similarity: f64,
    matched_pairs: &'a [MatchedPair],
}

/// Renders the report file: one entry per clip id plus `pooled` and `macro`
/// blocks, every number printed with six decimals.
pub fn render_report(
    per_clip: &[IdMatchReport],
    aggregate: &AggregateReport,
) -> Result<String, MetricsError> {
    let mut root = BTreeMap::new();
    for r in per_clip {
        if RESERVED_KEYS.contains(&r.clip_id.as_str()) {
            return Err(MetricsError::ReservedClipId(r.clip_id.clone()));
        }
        let entry = ClipEntry {
            precision: r.precision,
            recall: r.recall,
            sequence_similarity: r.sequence_similarity,
            matched_pairs: &r.matched_pairs,
        };
        root.insert(r.clip_id.clone(), serde_json::to_value(entry).expect("serializable"));
    }
    root.insert(
        "pooled".to_string(),
        serde_json::to_value(aggregate.pooled).expect("serializable"),
    );
    root.insert(
        "macro".to_string(),
        serde_json::to_value(aggregate.macro_avg).expect("serializable"),
    );
    Ok(jsonfmt::to_string_fixed(&root, 6))
}

/// Reads the `pooled` and `macro` blocks back from a report file.
pub fn parse_report_blocks(text: &str) -> Result<(ScoreBlock, ScoreBlock), MetricsError> {
    #[derive(Deserialize)]
    struct Blocks {
        pooled: ScoreBlock,
        #[serde(rename = "macro")]
        macro_avg: ScoreBlock,
    }
    let b: Blocks =
        serde_json::from_str(text).map_err(|e| MetricsError::ReportSchema(e.to_string()))?;
    Ok((b.pooled, b.macro_avg))
}
