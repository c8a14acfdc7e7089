//! Single-character substitution noise, the edit-distance baseline, and the
//! perturb → retrieve → evaluate experiment.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::compliance::{comply_all, evaluate_accuracy, AccuracyReport, Candidate, ComplianceResult};
use crate::embedding::{CacheStats, EmbeddingCache, Provider};
use crate::error::{Error, Result};
use crate::term::{GroundTruth, SpecificationSet, Term, TermCollection};
use crate::unification::csv_err;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub substitutions: usize,
    pub alphabet: Vec<char>,
    pub seed: u64,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            substitutions: 1,
            alphabet: ('a'..='z').collect(),
            seed: 0,
        }
    }
}

impl PerturbationSpec {
    pub fn new(substitutions: usize, seed: u64) -> Self {
        PerturbationSpec {
            substitutions,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.substitutions == 0 {
            return Err(Error::validation("at least one substitution is required"));
        }
        if self.alphabet.is_empty() {
            return Err(Error::validation("replacement alphabet is empty"));
        }
        Ok(())
    }
}

/// Replaces `substitutions` distinct, uniformly chosen character positions
/// with a different character drawn uniformly from the alphabet.
pub fn perturb_with_rng(text: &str, spec: &PerturbationSpec, rng: &mut impl Rng) -> Result<String> {
    spec.validate()?;
    let mut chars: Vec<char> = text.chars().collect();
    if spec.substitutions > chars.len() {
        return Err(Error::validation(format!(
            "{} substitutions requested for {:?}, which has {} characters",
            spec.substitutions,
            text,
            chars.len()
        )));
    }
    for pos in sample(rng, chars.len(), spec.substitutions) {
        let original = chars[pos];
        let choices: Vec<char> = spec
            .alphabet
            .iter()
            .copied()
            .filter(|&c| c != original)
            .collect();
        if choices.is_empty() {
            return Err(Error::validation(format!(
                "alphabet has no replacement for {original:?}"
            )));
        }
        chars[pos] = choices[rng.random_range(0..choices.len())];
    }
    Ok(chars.into_iter().collect())
}

/// Perturbs a single term with an RNG seeded from `spec.seed`.
pub fn perturb(term: &Term, spec: &PerturbationSpec) -> Result<Term> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(Term {
        text: perturb_with_rng(&term.text, spec, &mut rng)?,
        ..term.clone()
    })
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Ranks every specification term by ascending edit distance, reported as a
/// score of `-distance`. Ties keep specification order.
pub fn levenshtein_retrieve(query: &Term, spec: &SpecificationSet) -> Result<ComplianceResult> {
    query.validate()?;
    let scored = spec
        .terms()
        .iter()
        .map(|t| Candidate {
            id: t.id.clone(),
            term: t.text.clone(),
            score: -(levenshtein(&query.text, &t.text) as f64),
        })
        .collect();
    ComplianceResult::from_scores(query, scored, spec.len())
}

pub enum Retriever<'a> {
    Embedding {
        provider: &'a Provider,
        use_definitions: bool,
        cache: Option<&'a EmbeddingCache>,
    },
    Levenshtein,
}

impl Retriever<'_> {
    pub fn name(&self) -> String {
        match self {
            Retriever::Embedding { provider, .. } => provider.provider_id().to_string(),
            Retriever::Levenshtein => "levenshtein".to_string(),
        }
    }
}

fn mix_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Perturbs every specification term `repeat` times. Each query is labelled
/// with the text of its source term; the ground truth maps it to that term's id.
pub fn perturb_specification(
    spec: &SpecificationSet,
    perturbation: &PerturbationSpec,
    repeat: usize,
) -> Result<(TermCollection, GroundTruth)> {
    if repeat == 0 {
        return Err(Error::validation("repeat must be at least 1"));
    }
    let mut queries = Vec::with_capacity(spec.len() * repeat);
    let mut truth = GroundTruth::default();
    for (i, term) in spec.terms().iter().enumerate() {
        for r in 0..repeat {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(perturbation.seed, (i * repeat + r) as u64));
            let text = perturb_with_rng(&term.text, perturbation, &mut rng)?;
            let id = if repeat == 1 {
                term.id.clone()
            } else {
                format!("{}#{r}", term.id)
            };
            truth.insert(id.clone(), term.id.clone());
            queries.push(Term {
                id,
                text,
                definition: None,
                label: Some(term.text.clone()),
            });
        }
    }
    Ok((TermCollection::new(queries)?, truth))
}

/// CSV rows `query,expected`.
pub fn perturbed_to_csv(queries: &TermCollection) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["query", "expected"]).map_err(csv_err)?;
    for q in queries {
        w.write_record([q.text.as_str(), q.label.as_deref().unwrap_or_default()])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn retrieve_all(
    queries: &TermCollection,
    spec: &SpecificationSet,
    retriever: &Retriever<'_>,
    top_k: usize,
) -> Result<(Vec<ComplianceResult>, CacheStats)> {
    match retriever {
        Retriever::Embedding {
            provider,
            use_definitions,
            cache,
        } => comply_all(queries, spec, provider, *use_definitions, top_k, *cache),
        Retriever::Levenshtein => {
            let results = queries
                .iter()
                .map(|q| {
                    let mut r = levenshtein_retrieve(q, spec)?;
                    r.candidates.truncate(top_k.max(1));
                    Ok(r)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((results, CacheStats::default()))
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: AccuracyReport,
    pub queries: TermCollection,
    pub stats: CacheStats,
}

/// Perturbs each specification term once per repeat, retrieves a match for
/// every noisy query and scores it against the term it came from.
pub fn simulate_compliance_experiment(
    spec: &SpecificationSet,
    perturbation: &PerturbationSpec,
    retriever: &Retriever<'_>,
    repeat: usize,
) -> Result<ExperimentOutcome> {
    let (queries, truth) = perturb_specification(spec, perturbation, repeat)?;
    let (results, stats) = retrieve_all(&queries, spec, retriever, 1)?;
    let report = evaluate_accuracy(&results, &truth)?;
    Ok(ExperimentOutcome {
        report,
        queries,
        stats,
    })
}
