//! Text-coverage: the fraction of reference segments that some predicted
//! sub-sentence matches in embedding space.

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::gateway::GatewayError;

pub const DEFAULT_RHO: f64 = 0.7;

/// Anything that maps texts to fixed-dimension vectors.
pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError>;
}

impl<E: Embedder + ?Sized> Embedder for &E {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        (**self).embed(texts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageInput {
    pub ground_segments: Vec<String>,
    pub predicted_sub_sentences: Vec<String>,
    pub rho: f64,
}

impl CoverageInput {
    /// Splits `prediction` into sub-sentences with [`split_sub_sentences`].
    pub fn from_caption(ground_segments: Vec<String>, prediction: &str, rho: f64) -> Self {
        Self {
            ground_segments,
            predicted_sub_sentences: split_sub_sentences(prediction),
            rho,
        }
    }
}

/// Splits on `.`, `!`, `?` and `;`, trims, and drops empty pieces. Commas
/// never split.
pub fn split_sub_sentences(text: &str) -> Vec<String> {
    text.split(['.', '!', '?', ';'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

/// Cosine similarity; a zero-norm side yields 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut dot, mut na, mut nb) = (0f64, 0f64, 0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        log::warn!("zero-norm embedding; cosine treated as 0");
        return 0.0;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Share of ground segments whose best cosine against any predicted
/// sub-sentence reaches `rho`, normalized by the segment count.
pub fn text_coverage(input: &CoverageInput, embed: &dyn Embedder) -> Result<f64, MetricsError> {
    if input.ground_segments.is_empty() {
        return Err(MetricsError::InvalidInput("no ground-truth segments".into()));
    }
    if !(input.rho > 0.0 && input.rho <= 1.0) {
        return Err(MetricsError::InvalidInput(format!(
            "rho must lie in (0, 1], got {}",
            input.rho
        )));
    }
    if input.predicted_sub_sentences.is_empty() {
        return Ok(0.0);
    }
    let k = input.ground_segments.len();
    let texts: Vec<String> = input
        .ground_segments
        .iter()
        .chain(&input.predicted_sub_sentences)
        .cloned()
        .collect();
    let vectors = embed.embed(&texts)?;
    if vectors.len() != texts.len() {
        return Err(MetricsError::Gateway(GatewayError::Protocol(format!(
            "embedder returned {} vectors for {} texts",
            vectors.len(),
            texts.len()
        ))));
    }
    let (g, p) = vectors.split_at(k);
    let covered = g
        .iter()
        .filter(|gv| {
            p.iter()
                .map(|pv| cosine(gv, pv))
                .fold(f64::NEG_INFINITY, f64::max)
                >= input.rho
        })
        .count();
    Ok(covered as f64 / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Table(Vec<(&'static str, Vec<f32>)>);

    impl Embedder for Table {
        fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
            Ok(texts
                .iter()
                .map(|t| {
                    self.0
                        .iter()
                        .find(|(k, _)| k == t)
                        .map(|(_, v)| v.clone())
                        .unwrap_or_else(|| vec![0.0; 3])
                })
                .collect())
        }
    }

    #[test]
    fn splitting_rule() {
        assert_eq!(
            split_sub_sentences("A man runs. A dog barks."),
            vec!["A man runs", "A dog barks"]
        );
        assert_eq!(
            split_sub_sentences("He stops; she waves, smiling."),
            vec!["He stops", "she waves, smiling"]
        );
        assert!(split_sub_sentences("").is_empty());
        assert!(split_sub_sentences(" ..;! ").is_empty());
    }

    #[test]
    fn one_hot_half_coverage() {
        let e = Table(vec![
            ("g1", vec![1.0, 0.0, 0.0]),
            ("g2", vec![0.0, 1.0, 0.0]),
            ("p1", vec![1.0, 0.0, 0.0]),
            ("p3", vec![0.0, 0.0, 1.0]),
        ]);
        let input = CoverageInput {
            ground_segments: vec!["g1".into(), "g2".into()],
            predicted_sub_sentences: vec!["p1".into(), "p3".into()],
            rho: 0.5,
        };
        assert_eq!(text_coverage(&input, &e).unwrap(), 0.5);
    }

    #[test]
    fn empty_prediction_scores_zero() {
        let input = CoverageInput {
            ground_segments: vec!["g".into()],
            predicted_sub_sentences: vec![],
            rho: 0.7,
        };
        assert_eq!(text_coverage(&input, &Table(vec![])).unwrap(), 0.0);
    }

    #[test]
    fn zero_norm_vectors_do_not_match() {
        let input = CoverageInput {
            ground_segments: vec!["unknown".into()],
            predicted_sub_sentences: vec!["also unknown".into()],
            rho: 0.1,
        };
        assert_eq!(text_coverage(&input, &Table(vec![])).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_rho() {
        let input = CoverageInput {
            ground_segments: vec!["g".into()],
            predicted_sub_sentences: vec!["p".into()],
            rho: 0.0,
        };
        assert!(text_coverage(&input, &Table(vec![])).is_err());
    }
}
