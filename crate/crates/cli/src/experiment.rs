//! Both experiment tracks over the bundled fixtures: perturb → retrieve →
//! accuracy, and embed → k-means → purity.

use std::path::Path;

use metacurate_core::compliance::{comply_all, evaluate_accuracy};
use metacurate_core::embedding::{embed_batch, CacheStats, EmbeddingCache};
use metacurate_core::fixtures;
use metacurate_core::perturbation::{perturb_specification, retrieve_all, PerturbationSpec, Retriever};
use metacurate_core::term::{GroundTruth, SpecificationSet, TermCollection};
use metacurate_core::unification::{cluster_embeddings, KMeansOptions};
use serde::Serialize;

use crate::commands::{build_provider, emit, log_stats, open_cache, Fit};
use crate::report::{json, percent, table};
use crate::settings::{parse_list, ProviderKind, Settings};
use crate::Failure;

pub const DEFAULT_K_SWEEP: &str = "100,200,500";
/// Cluster count for the bundled synonym list, one per canonical attribute.
const SYNONYM_FIXTURE_K: usize = 9;

pub struct Plan<'a> {
    pub providers: Option<&'a str>,
    pub groups: usize,
    pub per_group: usize,
    pub pretty: bool,
}

#[derive(Debug, Serialize)]
pub struct AccuracyRow {
    pub provider: String,
    pub dataset: String,
    pub setting: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Serialize)]
pub struct PurityRow {
    pub provider: String,
    pub dataset: String,
    pub k: usize,
    pub n: usize,
    pub purity: f64,
    pub label_groups: usize,
}

#[derive(Debug, Serialize)]
pub struct Summary {
    pub seed: u64,
    pub substitutions: usize,
    pub compliance: Vec<AccuracyRow>,
    pub unification: Vec<PurityRow>,
}

fn providers(plan: &Plan<'_>, s: &Settings) -> Result<Vec<ProviderKind>, Failure> {
    match plan.providers.or(s.provider.as_deref()) {
        Some(list) => list
            .split(',')
            .map(|p| p.parse().map_err(Failure::usage))
            .collect(),
        None => Ok(ProviderKind::LOCAL.to_vec()),
    }
}

struct Track<'a> {
    dataset: &'a str,
    spec: &'a SpecificationSet,
    queries: &'a TermCollection,
    truth: &'a GroundTruth,
}

impl Track<'_> {
    fn row(&self, provider: &str, setting: &str, report: metacurate_core::compliance::AccuracyReport) -> AccuracyRow {
        AccuracyRow {
            provider: provider.to_string(),
            dataset: self.dataset.to_string(),
            setting: setting.to_string(),
            n: report.n,
            correct: report.correct,
            accuracy: report.accuracy,
        }
    }
}

fn compliance_rows(
    track: &Track<'_>,
    kinds: &[ProviderKind],
    s: &Settings,
    cache: Option<&EmbeddingCache>,
    stats: &mut CacheStats,
) -> Result<Vec<AccuracyRow>, Failure> {
    let mut rows = Vec::new();
    let (results, _) = retrieve_all(track.queries, track.spec, &Retriever::Levenshtein, 1)?;
    rows.push(track.row("levenshtein", "no-defn", evaluate_accuracy(&results, track.truth)?));
    let has_definitions = track.spec.terms().iter().any(|t| t.definition().is_some());
    let settings: &[bool] = if has_definitions { &[false, true] } else { &[false] };
    for &kind in kinds {
        for &use_definitions in settings {
            let provider = build_provider(
                kind,
                s,
                Fit::Compliance {
                    spec: track.spec,
                    queries: track.queries,
                    use_definitions,
                },
            )?;
            let (results, st) = comply_all(track.queries, track.spec, &provider, use_definitions, 1, cache)?;
            stats.merge(st);
            let setting = if use_definitions { "with-defn" } else { "no-defn" };
            rows.push(track.row(kind.name(), setting, evaluate_accuracy(&results, track.truth)?));
        }
    }
    Ok(rows)
}

fn purity_rows(
    dataset: &str,
    terms: &TermCollection,
    ks: &[usize],
    kinds: &[ProviderKind],
    s: &Settings,
    cache: Option<&EmbeddingCache>,
    stats: &mut CacheStats,
) -> Result<Vec<PurityRow>, Failure> {
    let seed = s.seed.unwrap_or(0);
    let mut rows = Vec::new();
    for &kind in kinds {
        let provider = build_provider(kind, s, Fit::Terms(terms))?;
        let batch = embed_batch(&terms.texts(), &provider, cache)?;
        stats.merge(batch.stats);
        for &k in ks {
            log::info!("{dataset}: clustering {} terms at k = {k} with {}", terms.len(), kind.name());
            let (_, purity) = cluster_embeddings(terms, &batch.embeddings, k, seed, KMeansOptions::default())?;
            let purity = purity.ok_or_else(|| Failure::usage(format!("{dataset} has unlabelled terms")))?;
            rows.push(PurityRow {
                provider: kind.name().to_string(),
                dataset: dataset.to_string(),
                k,
                n: purity.n,
                purity: purity.purity,
                label_groups: purity.label_groups,
            });
        }
    }
    Ok(rows)
}

pub fn run(s: &Settings, plan: &Plan<'_>, out_dir: &Path) -> Result<(), Failure> {
    let kinds = providers(plan, s)?;
    let ks = parse_list(s.k.as_deref().unwrap_or(DEFAULT_K_SWEEP))?;
    let seed = s.seed.unwrap_or(0);
    let substitutions = s.substitutions.unwrap_or(1);
    let perturbation = PerturbationSpec::new(substitutions, seed);
    let repeat = s.repeat.unwrap_or(1);
    let cache = open_cache(s)?;
    let mut stats = CacheStats::default();

    let mut compliance = Vec::new();
    for spec in [fixtures::synthetic_vocabulary()?, fixtures::tissue_spec()?] {
        let (queries, truth) = perturb_specification(&spec, &perturbation, repeat)?;
        let dataset = format!("{}-perturbed", spec.name);
        let track = Track {
            dataset: &dataset,
            spec: &spec,
            queries: &queries,
            truth: &truth,
        };
        compliance.extend(compliance_rows(&track, &kinds, s, cache.as_ref(), &mut stats)?);
    }
    let spec = fixtures::tissue_spec()?;
    let queries = fixtures::tissue_queries()?;
    let truth = GroundTruth::for_compliance(&queries, &spec)?;
    let track = Track {
        dataset: "tissue-queries",
        spec: &spec,
        queries: &queries,
        truth: &truth,
    };
    compliance.extend(compliance_rows(&track, &kinds, s, cache.as_ref(), &mut stats)?);

    let mut unification = purity_rows(
        "synonyms",
        &fixtures::synonyms()?,
        &[SYNONYM_FIXTURE_K],
        &kinds,
        s,
        cache.as_ref(),
        &mut stats,
    )?;
    let synthetic = fixtures::synthetic_synonyms(plan.groups, plan.per_group, seed)?;
    if let Some(&k) = ks.iter().find(|&&k| k > synthetic.len()) {
        return Err(Failure::usage(format!("k = {k} exceeds the {} synthetic terms", synthetic.len())));
    }
    unification.extend(purity_rows(
        "synthetic-synonyms",
        &synthetic,
        &ks,
        &kinds,
        s,
        cache.as_ref(),
        &mut stats,
    )?);

    if cache.is_some() {
        log_stats("experiment", &stats);
    }
    let summary = Summary {
        seed,
        substitutions,
        compliance,
        unification,
    };
    emit(Some(&out_dir.join("summary.json")), &json(&summary))?;
    let tables = pretty_summary(&summary);
    emit(Some(&out_dir.join("summary.txt")), &tables)?;
    if plan.pretty {
        print!("{tables}");
    }
    Ok(())
}

pub fn pretty_summary(summary: &Summary) -> String {
    let acc: Vec<Vec<String>> = summary
        .compliance
        .iter()
        .map(|r| {
            vec![
                r.dataset.clone(),
                r.provider.clone(),
                r.setting.clone(),
                r.n.to_string(),
                percent(r.accuracy),
            ]
        })
        .collect();
    let pur: Vec<Vec<String>> = summary
        .unification
        .iter()
        .map(|r| {
            vec![
                r.dataset.clone(),
                r.provider.clone(),
                r.k.to_string(),
                r.n.to_string(),
                r.label_groups.to_string(),
                percent(r.purity),
            ]
        })
        .collect();
    format!(
        "Compliance accuracy (%)\n\n{}\nUnification purity (%)\n\n{}",
        table(&["dataset", "provider", "setting", "n", "accuracy"], &acc),
        table(&["dataset", "provider", "k", "n", "label groups", "purity"], &pur)
    )
}
