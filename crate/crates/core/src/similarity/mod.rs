//! Embedding/AST mixture similarity used for pairing and deduplication.

mod ast;
mod embedding;

pub use ast::{ast_features, strip_comment_lines, AstFeatureVector, ParseError, DUPLICATE_COSINE};
pub use embedding::{
    code_tokens, Embedder, EmbeddingCache, EmbeddingError, EmbeddingProvider, EmbeddingVector,
    HashedNgramEmbedder, HttpEmbeddingProvider,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Candidate, CandidateId};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    /// Weight of the embedding cosine; the AST cosine gets `1 - alpha`.
    pub alpha: f64,
    /// Minimum similarity for a candidate to join the reference's neighborhood.
    pub tau: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self { alpha: 0.8, tau: 0.85 }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SimilarityError {
    #[error("candidate {candidate} has no {feature} vector")]
    MissingFeatures { candidate: CandidateId, feature: &'static str },
}

/// Cosine of two dense vectors; 0 when either is zero or lengths differ.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return 0.0;
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

/// `alpha * max(0, cos_e) + (1 - alpha) * max(0, cos_a)`, kept within [0, 1].
pub fn mix(alpha: f64, cos_embedding: f64, cos_ast: f64) -> f64 {
    let e = cos_embedding.max(0.0);
    let a = cos_ast.max(0.0);
    (alpha * e + (1.0 - alpha) * a).clamp(0.0, 1.0)
}

fn features(c: &Candidate) -> Result<(&AstFeatureVector, &EmbeddingVector), SimilarityError> {
    let ast = c
        .ast_vector
        .as_ref()
        .ok_or(SimilarityError::MissingFeatures { candidate: c.id(), feature: "ast" })?;
    let emb = c
        .embedding
        .as_ref()
        .ok_or(SimilarityError::MissingFeatures { candidate: c.id(), feature: "embedding" })?;
    Ok((ast, emb))
}

pub fn similarity(p: &Candidate, q: &Candidate, cfg: &SimilarityConfig) -> Result<f64, SimilarityError> {
    let (ast_p, emb_p) = features(p)?;
    let (ast_q, emb_q) = features(q)?;
    Ok(mix(cfg.alpha, cosine(&emb_p.values, &emb_q.values), ast_p.cosine(ast_q)))
}

/// AST-only duplicate test used by pool deduplication.
pub fn is_duplicate(p: &Candidate, q: &Candidate) -> Result<bool, SimilarityError> {
    let missing = |c: &Candidate| SimilarityError::MissingFeatures { candidate: c.id(), feature: "ast" };
    let a = p.ast_vector.as_ref().ok_or_else(|| missing(p))?;
    let b = q.ast_vector.as_ref().ok_or_else(|| missing(q))?;
    Ok(a.is_duplicate_of(b))
}
