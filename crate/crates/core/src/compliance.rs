//! Compliance retrieval: rank specification terms by cosine similarity to a
//! query term and score the picks against ground truth.

use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, embed_batch, CacheStats, Embedding, EmbeddingCache, Provider};
use crate::error::{Error, Result};
use crate::term::{GroundTruth, SpecificationSet, Term, TermCollection};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: String,
    pub term: String,
    pub score: f64,
}

/// Ranked candidates for one query, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplianceResult {
    pub query: Term,
    pub candidates: Vec<Candidate>,
    pub best: String,
    pub compliant: bool,
}

/// Machine-readable form of a [`ComplianceResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceRecord {
    pub query_id: String,
    pub query: String,
    pub candidates: Vec<Candidate>,
    pub best: String,
    pub best_term: String,
    pub compliant: bool,
}

impl ComplianceResult {
    /// Sorts `scored` (in specification order) descending by score. Equal
    /// scores keep specification order.
    pub(crate) fn from_scores(query: &Term, mut scored: Vec<Candidate>, top_k: usize) -> Result<Self> {
        if top_k == 0 {
            return Err(Error::validation("top_k must be at least 1"));
        }
        if scored.is_empty() {
            return Err(Error::validation("specification is empty"));
        }
        scored.sort_by(|a, b| b.score.total_cmp(&a.score));
        scored.truncate(top_k);
        let best = &scored[0];
        Ok(ComplianceResult {
            compliant: query.text.trim() == best.term.trim(),
            best: best.id.clone(),
            query: query.clone(),
            candidates: scored,
        })
    }

    pub fn best_candidate(&self) -> &Candidate {
        &self.candidates[0]
    }

    pub fn to_record(&self) -> ComplianceRecord {
        ComplianceRecord {
            query_id: self.query.id.clone(),
            query: self.query.text.clone(),
            candidates: self.candidates.clone(),
            best: self.best.clone(),
            best_term: self.best_candidate().term.clone(),
            compliant: self.compliant,
        }
    }
}

/// Text embedded for a specification term: the term, then a space and its
/// definition when it has a non-empty one.
pub fn augmented_text(term: &Term) -> String {
    match term.definition() {
        Some(defn) => format!("{} {}", term.text, defn),
        None => term.text.clone(),
    }
}

/// Embedding texts for every specification term, definition-augmented.
/// The specification itself keeps its original texts for reporting.
pub fn augment_with_definitions(spec: &SpecificationSet) -> Vec<String> {
    spec.terms().iter().map(augmented_text).collect()
}

pub fn candidate_texts(spec: &SpecificationSet, use_definitions: bool) -> Vec<String> {
    if use_definitions {
        augment_with_definitions(spec)
    } else {
        spec.terms().iter().map(|t| t.text.clone()).collect()
    }
}

/// Specification terms embedded once for repeated queries.
#[derive(Debug, Clone)]
pub struct SpecIndex<'a> {
    spec: &'a SpecificationSet,
    vectors: Vec<Embedding>,
    pub stats: CacheStats,
}

impl<'a> SpecIndex<'a> {
    pub fn build(
        spec: &'a SpecificationSet,
        provider: &Provider,
        use_definitions: bool,
        cache: Option<&EmbeddingCache>,
    ) -> Result<Self> {
        let texts = candidate_texts(spec, use_definitions);
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let batch = embed_batch(&refs, provider, cache)?;
        Ok(SpecIndex {
            spec,
            vectors: batch.embeddings,
            stats: batch.stats,
        })
    }

    pub fn spec(&self) -> &SpecificationSet {
        self.spec
    }

    pub fn vectors(&self) -> &[Embedding] {
        &self.vectors
    }

    pub fn rank(&self, query: &Term, query_vector: &Embedding, top_k: usize) -> Result<ComplianceResult> {
        let scored = self
            .spec
            .terms()
            .iter()
            .zip(&self.vectors)
            .map(|(term, v)| {
                Ok(Candidate {
                    id: term.id.clone(),
                    term: term.text.clone(),
                    score: cosine(&query_vector.values, &v.values)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ComplianceResult::from_scores(query, scored, top_k)
    }
}

/// Maps `query` onto its most similar specification term. The query is always
/// embedded as its bare text.
pub fn comply(
    query: &Term,
    spec: &SpecificationSet,
    provider: &Provider,
    use_definitions: bool,
    top_k: usize,
) -> Result<ComplianceResult> {
    query.validate()?;
    let index = SpecIndex::build(spec, provider, use_definitions, None)?;
    let v = provider.embed(&query.text)?;
    index.rank(query, &v, top_k)
}

/// Runs every query against `spec`, embedding in batches through `cache`.
pub fn comply_all(
    queries: &TermCollection,
    spec: &SpecificationSet,
    provider: &Provider,
    use_definitions: bool,
    top_k: usize,
    cache: Option<&EmbeddingCache>,
) -> Result<(Vec<ComplianceResult>, CacheStats)> {
    let index = SpecIndex::build(spec, provider, use_definitions, cache)?;
    let mut stats = index.stats.clone();
    let texts = queries.texts();
    let batch = embed_batch(&texts, provider, cache)?;
    stats.merge(batch.stats);
    let results = queries
        .iter()
        .zip(&batch.embeddings)
        .map(|(q, v)| index.rank(q, v, top_k))
        .collect::<Result<Vec<_>>>()?;
    Ok((results, stats))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: String,
    pub predicted: String,
    pub expected: String,
    pub hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub outcomes: Vec<QueryOutcome>,
}

/// Fraction of queries whose best candidate is the expected specification term.
pub fn evaluate_accuracy(results: &[ComplianceResult], truth: &GroundTruth) -> Result<AccuracyReport> {
    if results.is_empty() {
        return Err(Error::validation("no queries to evaluate"));
    }
    let outcomes = results
        .iter()
        .map(|r| {
            let expected = truth.get(&r.query.id).ok_or_else(|| {
                Error::validation(format!("no ground truth for query {:?}", r.query.id))
            })?;
            Ok(QueryOutcome {
                query_id: r.query.id.clone(),
                predicted: r.best.clone(),
                expected: expected.to_string(),
                hit: r.best == expected,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let correct = outcomes.iter().filter(|o| o.hit).count();
    let n = outcomes.len();
    Ok(AccuracyReport {
        n,
        correct,
        accuracy: correct as f64 / n as f64,
        outcomes,
    })
}
