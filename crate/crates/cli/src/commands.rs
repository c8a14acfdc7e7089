use std::path::Path;

use log::warn;
use metacurate_core::compliance::{candidate_texts, comply_all, evaluate_accuracy, AccuracyReport, ComplianceRecord};
use metacurate_core::embedding::{
    build_tfidf_from_texts, embed_batch, CacheStats, EmbeddingCache, OneHotConfig, Provider, ProviderConfig,
};
use metacurate_core::perturbation::{perturb_specification, perturbed_to_csv, PerturbationSpec};
use metacurate_core::projection::{
    pca_2d, points_to_csv, points_to_svg, project_terms, tsne_2d, TsneOptions, TSNE_WARN_POINTS,
};
use metacurate_core::term::{
    parse_specification, parse_terms, GroundTruth, InputFormat, SpecificationSet, TermCollection,
};
use metacurate_core::unification::{cluster_embeddings, clusters_to_csv, ClusterReport, KMeansOptions};
use serde::Serialize;

use crate::report::{json, percent, score, table};
use crate::settings::{ProviderKind, Settings};
use crate::Failure;

pub const DEFAULT_TOP_K: usize = 5;

pub struct Io {
    pub format: Option<String>,
    pub pretty: bool,
}

impl Io {
    fn format_for(&self, path: &Path) -> Result<InputFormat, Failure> {
        match &self.format {
            Some(f) => Ok(f.parse()?),
            None => Ok(InputFormat::from_path(path)),
        }
    }
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::usage(format!("cannot read {}: {e}", path.display())))
}

pub fn load_spec(io: &Io, path: &Path) -> Result<SpecificationSet, Failure> {
    let mut spec = parse_specification(&read(path)?, io.format_for(path)?)?;
    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
        spec.name = stem.to_string();
    }
    Ok(spec)
}

pub fn load_terms(io: &Io, path: &Path) -> Result<TermCollection, Failure> {
    Ok(parse_terms(&read(path)?, io.format_for(path)?)?)
}

/// Writes to `path`, creating its directory, or to standard output.
pub fn emit(path: Option<&Path>, contents: &str) -> Result<(), Failure> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)
                    .map_err(|e| Failure::usage(format!("cannot create {}: {e}", dir.display())))?;
            }
            std::fs::write(p, contents).map_err(|e| Failure::usage(format!("cannot write {}: {e}", p.display())))
        }
        None => {
            print!("{contents}");
            Ok(())
        }
    }
}

pub fn open_cache(s: &Settings) -> Result<Option<EmbeddingCache>, Failure> {
    Ok(s.cache_dir.as_ref().map(EmbeddingCache::open).transpose()?)
}

/// Cache statistics go to standard error so reports stay byte-identical.
pub fn log_stats(label: &str, stats: &CacheStats) {
    let total = stats.hits + stats.misses;
    let rate = if total == 0 { 1.0 } else { stats.hits as f64 / total as f64 };
    eprintln!(
        "cache[{label}]: {} hits, {} misses ({}% hits)",
        stats.hits,
        stats.misses,
        percent(rate)
    );
}

/// Texts a corpus-dependent provider is fitted on.
pub enum Fit<'a> {
    /// One-hot over whole specification terms; tf-idf over embedded spec texts plus queries.
    Compliance {
        spec: &'a SpecificationSet,
        queries: &'a TermCollection,
        use_definitions: bool,
    },
    /// One-hot over tokens; tf-idf over the term texts.
    Terms(&'a TermCollection),
}

pub fn build_provider(kind: ProviderKind, s: &Settings, fit: Fit<'_>) -> Result<Provider, Failure> {
    let config = match (kind, fit) {
        (ProviderKind::OneHot, Fit::Compliance { spec, .. }) => {
            ProviderConfig::OneHot(OneHotConfig::new(spec.terms().iter().map(|t| t.text.as_str())))
        }
        (ProviderKind::OneHot, Fit::Terms(terms)) => ProviderConfig::OneHot(OneHotConfig::from_tokens(terms.texts())),
        (
            ProviderKind::TfidfWord,
            Fit::Compliance {
                spec,
                queries,
                use_definitions,
            },
        ) => {
            let mut corpus = candidate_texts(spec, use_definitions);
            corpus.extend(queries.iter().map(|q| q.text.clone()));
            build_tfidf_from_texts(&corpus, true)?
        }
        (ProviderKind::TfidfWord, Fit::Terms(terms)) => build_tfidf_from_texts(&terms.texts(), true)?,
        (ProviderKind::CharNgram, _) => ProviderConfig::CharNgramHashed(s.ngram()),
        (ProviderKind::Remote, _) => ProviderConfig::Remote(s.remote()?),
    };
    Ok(Provider::new(config)?)
}

#[derive(Serialize)]
struct ComplyReport<'a> {
    provider: &'a str,
    model: String,
    specification: &'a str,
    use_definitions: bool,
    top_k: usize,
    results: Vec<ComplianceRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    evaluation: Option<AccuracyReport>,
}

pub fn comply(s: &Settings, io: &Io, spec_path: &Path, queries_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let spec = load_spec(io, spec_path)?;
    let queries = load_terms(io, queries_path)?;
    let use_definitions = s.use_definitions.unwrap_or(false);
    let top_k = s.top_k.unwrap_or(DEFAULT_TOP_K);
    if top_k == 0 {
        return Err(Failure::usage("--top-k must be at least 1"));
    }
    let kind = s.provider_kind(ProviderKind::CharNgram)?;
    let provider = build_provider(
        kind,
        s,
        Fit::Compliance {
            spec: &spec,
            queries: &queries,
            use_definitions,
        },
    )?;
    let cache = open_cache(s)?;
    let (results, stats) = comply_all(&queries, &spec, &provider, use_definitions, top_k, cache.as_ref())?;
    if cache.is_some() {
        log_stats(provider.provider_id(), &stats);
    }
    let evaluation = if queries.iter().all(|q| q.label.is_some()) {
        let truth = GroundTruth::for_compliance(&queries, &spec)?;
        Some(evaluate_accuracy(&results, &truth)?)
    } else {
        None
    };
    let report = ComplyReport {
        provider: provider.provider_id(),
        model: provider.model_id(),
        specification: &spec.name,
        use_definitions,
        top_k,
        results: results.iter().map(|r| r.to_record()).collect(),
        evaluation,
    };
    let text = if io.pretty { pretty_comply(&report) } else { json(&report) };
    emit(out, &text)
}

fn pretty_comply(r: &ComplyReport<'_>) -> String {
    let rows: Vec<Vec<String>> = r
        .results
        .iter()
        .map(|rec| {
            let best = &rec.candidates[0];
            vec![
                rec.query.clone(),
                best.term.clone(),
                score(best.score),
                if rec.compliant { "yes" } else { "no" }.to_string(),
            ]
        })
        .collect();
    let mut out = format!(
        "provider {} ({}), definitions {}\n\n",
        r.provider,
        r.model,
        if r.use_definitions { "on" } else { "off" }
    );
    out += &table(&["query", "best match", "score", "compliant"], &rows);
    if let Some(e) = &r.evaluation {
        out += &format!("\naccuracy {}% ({}/{})\n", percent(e.accuracy), e.correct, e.n);
    }
    out
}

pub fn unify(s: &Settings, io: &Io, terms_path: &Path, out_dir: Option<&Path>) -> Result<(), Failure> {
    let terms = load_terms(io, terms_path)?;
    let ks = s.k_list()?;
    if let Some(&k) = ks.iter().find(|&&k| k > terms.len()) {
        return Err(Failure::usage(format!("k = {k} exceeds the {} input terms", terms.len())));
    }
    let seed = s.seed.unwrap_or(0);
    let kind = s.provider_kind(ProviderKind::CharNgram)?;
    let provider = build_provider(kind, s, Fit::Terms(&terms))?;
    let cache = open_cache(s)?;
    let texts = terms.texts();
    let batch = embed_batch(&texts, &provider, cache.as_ref())?;
    if cache.is_some() {
        log_stats(provider.provider_id(), &batch.stats);
    }
    let mut reports = Vec::new();
    for &k in &ks {
        let (clustering, purity) = cluster_embeddings(&terms, &batch.embeddings, k, seed, KMeansOptions::default())?;
        let report = ClusterReport::new(&clustering, purity.as_ref());
        if let Some(dir) = out_dir {
            emit(Some(&dir.join(format!("unify_k{k}.json"))), &json(&report))?;
            emit(Some(&dir.join(format!("unify_k{k}.csv"))), &clusters_to_csv(&terms, &clustering)?)?;
        }
        reports.push(report);
    }
    if io.pretty {
        let rows: Vec<Vec<String>> = reports
            .iter()
            .map(|r| {
                vec![
                    r.k.to_string(),
                    format!("{:.4}", r.objective),
                    r.iterations.to_string(),
                    r.purity.map(percent).unwrap_or_else(|| "-".into()),
                    r.label_groups.map(|g| g.to_string()).unwrap_or_else(|| "-".into()),
                ]
            })
            .collect();
        print!(
            "{}",
            table(&["k", "objective", "iterations", "purity", "label groups"], &rows)
        );
    } else if out_dir.is_none() {
        print!("{}", json(&reports));
    }
    Ok(())
}

pub fn perturb(s: &Settings, io: &Io, spec_path: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let spec = load_spec(io, spec_path)?;
    let perturbation = PerturbationSpec::new(s.substitutions.unwrap_or(1), s.seed.unwrap_or(0));
    let (queries, _) = perturb_specification(&spec, &perturbation, s.repeat.unwrap_or(1))?;
    emit(out, &perturbed_to_csv(&queries)?)
}

pub fn project(
    s: &Settings,
    io: &Io,
    terms_path: &Path,
    tsne: bool,
    k: Option<usize>,
    svg: bool,
    out: Option<&Path>,
) -> Result<(), Failure> {
    let terms = load_terms(io, terms_path)?;
    if tsne && terms.len() < 4 {
        return Err(Failure::usage(format!("t-SNE needs at least 4 terms, got {}", terms.len())));
    }
    if let Some(k) = k.filter(|&k| k == 0 || k > terms.len()) {
        return Err(Failure::usage(format!("k = {k} must be between 1 and {}", terms.len())));
    }
    let seed = s.seed.unwrap_or(0);
    let kind = s.provider_kind(ProviderKind::CharNgram)?;
    let provider = build_provider(kind, s, Fit::Terms(&terms))?;
    let cache = open_cache(s)?;
    let texts = terms.texts();
    let batch = embed_batch(&texts, &provider, cache.as_ref())?;
    if cache.is_some() {
        log_stats(provider.provider_id(), &batch.stats);
    }
    let vectors: Vec<&[f64]> = batch.embeddings.iter().map(|e| e.values.as_slice()).collect();
    let coords = if tsne {
        if terms.len() > TSNE_WARN_POINTS {
            warn!("exact t-SNE on {} points is quadratic in time and memory", terms.len());
        }
        let d = TsneOptions::default();
        let options = TsneOptions {
            perplexity: s.perplexity.unwrap_or(d.perplexity),
            iterations: s.iterations.unwrap_or(d.iterations),
            learning_rate: s.learning_rate.unwrap_or(d.learning_rate),
            seed,
            ..d
        };
        tsne_2d(&vectors, &options)?.coords
    } else {
        pca_2d(&vectors)?
    };
    let clusters = match k {
        Some(k) => Some(cluster_embeddings(&terms, &batch.embeddings, k, seed, KMeansOptions::default())?.0.assignments),
        None => None,
    };
    let points = project_terms(&terms, &coords, clusters.as_deref());
    let text = if svg {
        points_to_svg(&points, terms.len() <= 200)
    } else {
        points_to_csv(&points)?
    };
    emit(out, &text)
}
