use std::collections::BTreeSet;

use crate::client::{EmbedClient, EmbedError};

/// Lowercased alphanumeric words.
fn token_set(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Jaccard index of the two strings' word sets; two empty strings score 1.
pub fn token_jaccard(a: &str, b: &str) -> f64 {
    let (x, y) = (token_set(a), token_set(b));
    let union = x.union(&y).count();
    if union == 0 {
        return 1.0;
    }
    x.intersection(&y).count() as f64 / union as f64
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Scores planning text: embedding cosine when a service is configured and answering,
/// token-set Jaccard otherwise.
pub struct PlanningSimilarity {
    embedder: Option<EmbedClient>,
}

/// Which measure produced a planning score.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SimilaritySource {
    Embedding { model_id: String },
    TokenJaccard { reason: Option<String> },
}

impl SimilaritySource {
    pub fn label(&self) -> String {
        match self {
            SimilaritySource::Embedding { model_id } => format!("embedding cosine ({model_id})"),
            SimilaritySource::TokenJaccard { reason: None } => "token jaccard".to_string(),
            SimilaritySource::TokenJaccard { reason: Some(r) } => format!("token jaccard (embedder unavailable: {r})"),
        }
    }
}

impl PlanningSimilarity {
    pub fn fallback() -> Self {
        Self { embedder: None }
    }

    pub fn with_embedder(client: EmbedClient) -> Self {
        Self { embedder: Some(client) }
    }

    fn embedded(client: &EmbedClient, pred: &str, gt: &str) -> Result<(f64, String), EmbedError> {
        let (v, model_id) = client.embed(&[pred.to_string(), gt.to_string()])?;
        Ok((cosine(&v[0], &v[1]), model_id))
    }

    pub fn score(&self, pred: &str, gt: &str) -> (f64, SimilaritySource) {
        match &self.embedder {
            None => (token_jaccard(pred, gt), SimilaritySource::TokenJaccard { reason: None }),
            Some(c) => match Self::embedded(c, pred, gt) {
                Ok((s, model_id)) => (s, SimilaritySource::Embedding { model_id }),
                Err(e) => (
                    token_jaccard(pred, gt),
                    SimilaritySource::TokenJaccard {
                        reason: Some(e.to_string()),
                    },
                ),
            },
        }
    }
}
