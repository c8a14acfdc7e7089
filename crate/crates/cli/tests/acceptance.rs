//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use metacurate_core::compliance::{candidate_texts, comply, comply_all, evaluate_accuracy};
use metacurate_core::embedding::{
    build_tfidf_from_texts, cosine, embed_batch, CharNgramConfig, OneHotConfig, Provider, ProviderConfig,
};
use metacurate_core::fixtures;
use metacurate_core::perturbation::{
    levenshtein, perturb_specification, simulate_compliance_experiment, PerturbationSpec, Retriever,
};
use metacurate_core::projection::{affinities, tsne_2d, TsneOptions};
use metacurate_core::term::{GroundTruth, Term, TermCollection};
use metacurate_core::unification::{cluster_embeddings, kmeans_raw, purity, KMeansOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        match $cond {
            true => {}
            false => return Err(format!($($msg)+)),
        }
    };
}

/// Minimum over seeds 0..10 of the hashed {2,3}-gram retrieval oracle in the
/// core crate's tests.
const CHAR_NGRAM_FLOOR: f64 = 0.98;
const ONE_HOT_CEILING: f64 = 0.05;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_metacurate")
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let t = start.elapsed();
    if t < limit {
        Ok(t)
    } else {
        Err(format!("took {t:.1?}, limit {limit:?}"))
    }
}

fn math_core() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let d = rng.random_range(1..20);
        let a: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
        let s = rng.random_range(0.01..100.0);
        let ab = cosine(&a, &b).unwrap();
        ensure!((ab - cosine(&b, &a).unwrap()).abs() < 1e-9, "cosine not symmetric");
        ensure!(ab.abs() <= 1.0 + 1e-9, "cosine {ab} out of bounds");
        let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
        ensure!((cosine(&scaled, &b).unwrap() - ab).abs() < 1e-9, "cosine not scale invariant");
    }
    let word = |rng: &mut ChaCha8Rng| -> String {
        let len = rng.random_range(0..10);
        (0..len).map(|_| ['a', 'b', 'c', 'd'][rng.random_range(0..4)]).collect()
    };
    for _ in 0..1000 {
        let (a, b, c) = (word(&mut rng), word(&mut rng), word(&mut rng));
        let ab = levenshtein(&a, &b);
        ensure!((ab == 0) == (a == b), "identity fails for {a:?} {b:?}");
        ensure!(ab == levenshtein(&b, &a), "symmetry fails for {a:?} {b:?}");
        ensure!(
            levenshtein(&a, &c) <= ab + levenshtein(&b, &c),
            "triangle fails for {a:?} {b:?} {c:?}"
        );
    }
    for instance in 0..100u64 {
        let n = rng.random_range(10..60);
        let k = rng.random_range(1..8);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let c = kmeans_raw(&refs, k, instance, KMeansOptions::default()).unwrap();
        for w in c.objective_history.windows(2) {
            ensure!(w[1] <= w[0] + 1e-12 * w[0].abs(), "objective rose {} -> {} in instance {instance}", w[0], w[1]);
        }
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let mut c = c;
        c.point_ids = (0..n).map(|i| i.to_string()).collect();
        let truth = GroundTruth::new(labels.iter().enumerate().map(|(i, l)| (i.to_string(), l.to_string())).collect());
        let p = purity(&c, &truth).unwrap().purity;
        ensure!((0.0..=1.0).contains(&p), "purity {p} out of bounds");
        c.k = n;
        c.assignments = (0..n).collect();
        ensure!(purity(&c, &truth).unwrap().purity == 1.0, "k = N purity is not 1");
    }
    let t = within(start, Duration::from_secs(30))?;
    Ok(format!("1000 cosine pairs, 1000 edit-distance triples, 100 k-means instances in {t:.1?}"))
}

fn levenshtein_baseline() -> Outcome {
    let start = Instant::now();
    let spec = fixtures::synthetic_vocabulary().unwrap();
    let mut min = usize::MAX;
    for (i, a) in spec.terms().iter().enumerate() {
        for b in &spec.terms()[i + 1..] {
            min = min.min(levenshtein(&a.text, &b.text));
        }
    }
    ensure!(spec.len() == 50 && min >= 3, "fixture has {} terms, min distance {min}", spec.len());
    let out = simulate_compliance_experiment(&spec, &PerturbationSpec::new(1, 0), &Retriever::Levenshtein, 1).unwrap();
    ensure!(out.report.accuracy == 1.0, "accuracy {}", out.report.accuracy);
    let t = within(start, Duration::from_secs(10))?;
    Ok(format!("accuracy 1.0 on {} queries in {t:.1?}", out.report.n))
}

fn char_ngram_vs_one_hot() -> Outcome {
    let start = Instant::now();
    let spec = fixtures::synthetic_vocabulary().unwrap();
    let ngram = Provider::new(ProviderConfig::CharNgramHashed(CharNgramConfig::default())).unwrap();
    let one_hot = Provider::new(ProviderConfig::OneHot(OneHotConfig::new(spec.terms().iter().map(|t| t.text.as_str())))).unwrap();
    let (mut worst_ngram, mut worst_one_hot) = (f64::INFINITY, f64::NEG_INFINITY);
    for seed in 0..10 {
        let (queries, truth) = perturb_specification(&spec, &PerturbationSpec::new(1, seed), 1).unwrap();
        let acc = |p: &Provider| {
            let (results, _) = comply_all(&queries, &spec, p, false, 1, None).unwrap();
            evaluate_accuracy(&results, &truth).unwrap().accuracy
        };
        worst_ngram = worst_ngram.min(acc(&ngram));
        worst_one_hot = worst_one_hot.max(acc(&one_hot));
    }
    ensure!(worst_ngram >= CHAR_NGRAM_FLOOR, "char-ngram accuracy {worst_ngram} below floor {CHAR_NGRAM_FLOOR}");
    ensure!(worst_one_hot <= ONE_HOT_CEILING, "one-hot accuracy {worst_one_hot} above {ONE_HOT_CEILING}");
    let t = within(start, Duration::from_secs(30))?;
    Ok(format!(
        "char-ngram min accuracy {worst_ngram} (floor {CHAR_NGRAM_FLOOR}), one-hot max {worst_one_hot}, 10 seeds in {t:.1?}"
    ))
}

fn definition_augmentation() -> Outcome {
    let spec = fixtures::tissue_spec().unwrap();
    let oct = spec.resolve("OCT embedded").unwrap().id.clone();
    ensure!(spec.terms()[0].id != oct, "OCT embedded must not be the first spec term");
    let query = Term::new("q", "optimal cutting temperature").unwrap();
    let run = |use_definitions: bool| {
        let mut corpus = candidate_texts(&spec, use_definitions);
        corpus.push(query.text.clone());
        let provider = Provider::new(build_tfidf_from_texts(&corpus, true).unwrap()).unwrap();
        comply(&query, &spec, &provider, use_definitions, spec.len()).unwrap()
    };
    let without = run(false);
    let with = run(true);
    ensure!(
        without.best != oct && without.candidates[0].score == 0.0,
        "without definitions got {:?} score {}",
        without.best_candidate().term,
        without.candidates[0].score
    );
    ensure!(with.best == oct, "with definitions got {:?}", with.best_candidate().term);
    Ok(format!(
        "no-defn -> {:?} (score 0), with-defn -> {:?} (score {:.4})",
        without.best_candidate().term,
        with.best_candidate().term,
        with.candidates[0].score
    ))
}

fn unification() -> Outcome {
    let centers = vec![vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0]];
    let mut lowest = 1.0f64;
    for seed in 0..10 {
        let (pts, labels) = fixtures::gaussian_blobs(&centers, 100, 0.1, seed);
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let mut c = kmeans_raw(&refs, 3, seed, KMeansOptions::default()).unwrap();
        c.point_ids = (0..pts.len()).map(|i| i.to_string()).collect();
        let truth = GroundTruth::new(labels.iter().enumerate().map(|(i, l)| (i.to_string(), l.to_string())).collect());
        let p = purity(&c, &truth).unwrap().purity;
        ensure!(p >= 0.99, "blob seed {seed}: purity {p}");
        lowest = lowest.min(p);
    }

    let terms = fixtures::synthetic_synonyms(300, 5, 0).unwrap();
    let mut rows = Vec::new();
    let mut slowest = Duration::ZERO;
    for (name, provider) in local_providers(&terms) {
        let batch = embed_batch(&terms.texts(), &provider, None).unwrap();
        for k in [100, 200, 500] {
            let start = Instant::now();
            let (_, purity) = cluster_embeddings(&terms, &batch.embeddings, k, 0, KMeansOptions::default()).unwrap();
            let t = within(start, Duration::from_secs(60)).map_err(|e| format!("{name} k = {k}: {e}"))?;
            slowest = slowest.max(t);
            let purity = purity.ok_or("synthetic synonyms lack labels")?;
            ensure!(purity.n == 1500, "clustered {} terms", purity.n);
            rows.push(format!("{name}@{k}={:.2}%", purity.purity * 100.0));
        }
    }
    println!("    provider x k purity: {}", rows.join(", "));
    Ok(format!("blob purity >= {lowest:.4} on 10 seeds; 1500-term sweep slowest k took {slowest:.1?}"))
}

fn local_providers(terms: &TermCollection) -> Vec<(&'static str, Provider)> {
    vec![
        ("one-hot", Provider::new(ProviderConfig::OneHot(OneHotConfig::from_tokens(terms.texts()))).unwrap()),
        ("tfidf-word", Provider::new(build_tfidf_from_texts(&terms.texts(), true).unwrap()).unwrap()),
        ("char-ngram", Provider::new(ProviderConfig::CharNgramHashed(CharNgramConfig::default())).unwrap()),
    ]
}

fn perplexity_error(pts: &[Vec<f64>], betas: &[f64], target: f64) -> f64 {
    let n = pts.len();
    let mut worst = 0.0f64;
    for i in 0..n {
        let w: Vec<f64> = (0..n)
            .map(|j| {
                if i == j {
                    0.0
                } else {
                    let d: f64 = pts[i].iter().zip(&pts[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                    (-betas[i] * d).exp()
                }
            })
            .collect();
        let s: f64 = w.iter().sum();
        let bits: f64 = -w.iter().filter(|&&x| x > 0.0).map(|x| (x / s) * (x / s).log2()).sum::<f64>();
        worst = worst.max((2f64.powf(bits) - target).abs());
    }
    worst
}

fn tsne() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_calibration = 0.0f64;
    for (n, perplexity) in [(60, 30.0), (100, 5.0), (40, 10.0)] {
        let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..6).map(|_| rng.random_range(-4.0..4.0)).collect()).collect();
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let aff = affinities(&refs, perplexity).unwrap();
        let err = perplexity_error(&pts, &aff.betas, aff.perplexity);
        ensure!(err <= 1e-3, "perplexity off by {err} (n = {n}, target {})", aff.perplexity);
        worst_calibration = worst_calibration.max(err);
        let total: f64 = aff.p.iter().sum();
        ensure!((total - 1.0).abs() <= 1e-9, "P sums to {total}");
        for i in 0..n {
            for j in 0..n {
                ensure!((aff.p[i * n + j] - aff.p[j * n + i]).abs() <= 1e-9, "P not symmetric at {i},{j}");
            }
        }
    }

    let mut centre = vec![0.0; 10];
    centre[0] = 10.0;
    let centers = vec![vec![0.0; 10], centre];
    let mut separated = 0;
    for seed in 0..10 {
        let (pts, labels) = fixtures::gaussian_blobs(&centers, 25, 1.0, 100 + seed);
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let out = tsne_2d(&refs, &TsneOptions { seed, ..Default::default() }).unwrap();
        let (mut max_intra, mut min_inter) = (0.0f64, f64::INFINITY);
        for i in 0..pts.len() {
            for j in (i + 1)..pts.len() {
                let d = (out.coords[i][0] - out.coords[j][0]).hypot(out.coords[i][1] - out.coords[j][1]);
                if labels[i] == labels[j] {
                    max_intra = max_intra.max(d);
                } else {
                    min_inter = min_inter.min(d);
                }
            }
        }
        if min_inter > max_intra {
            separated += 1;
        }
    }
    ensure!(separated >= 9, "two blobs separated in only {separated}/10 seeds");
    Ok(format!(
        "max perplexity error {worst_calibration:.2e}, P symmetric and normalized, blobs separated {separated}/10"
    ))
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("binary runs")
}

fn check_ok(out: &Output, what: &str) -> Result<(), String> {
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{what} exited {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn write_fixtures(dir: &Path) {
    std::fs::write(dir.join("spec.csv"), fixtures::TISSUE_SPEC).unwrap();
    std::fs::write(dir.join("queries.csv"), fixtures::TISSUE_QUERIES).unwrap();
    std::fs::write(dir.join("synonyms.csv"), fixtures::SYNONYMS).unwrap();
    std::fs::write(dir.join("vocabulary.txt"), fixtures::SYNTHETIC_VOCABULARY).unwrap();
}

fn reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    write_fixtures(d);
    let p = |name: &str| d.join(name).to_string_lossy().into_owned();
    let cache = p("cache");
    let commands: Vec<(&str, Vec<String>, Vec<&str>)> = vec![
        (
            "comply",
            vec!["comply", "--spec", &p("spec.csv"), "--queries", &p("queries.csv"), "--provider", "tfidf-word", "--use-definitions", "--top-k", "3"]
                .into_iter().map(String::from).collect(),
            vec!["comply.json"],
        ),
        (
            "comply --pretty",
            vec!["comply", "--spec", &p("spec.csv"), "--queries", &p("queries.csv"), "--pretty"]
                .into_iter().map(String::from).collect(),
            vec!["comply.txt"],
        ),
        (
            "unify",
            vec!["unify", "--terms", &p("synonyms.csv"), "--k", "3,9", "--seed", "4", "--provider", "char-ngram"]
                .into_iter().map(String::from).collect(),
            vec!["unify/unify_k3.json", "unify/unify_k3.csv", "unify/unify_k9.json", "unify/unify_k9.csv"],
        ),
        (
            "perturb",
            vec!["perturb", "--spec", &p("vocabulary.txt"), "--substitutions", "2", "--seed", "9"]
                .into_iter().map(String::from).collect(),
            vec!["perturbed.csv"],
        ),
        (
            "project pca",
            vec!["project", "--terms", &p("synonyms.csv"), "--method", "pca", "--k", "9"]
                .into_iter().map(String::from).collect(),
            vec!["pca.csv"],
        ),
        (
            "project tsne",
            vec!["project", "--terms", &p("synonyms.csv"), "--method", "tsne", "--seed", "7", "--perplexity", "5"]
                .into_iter().map(String::from).collect(),
            vec!["tsne.svg"],
        ),
    ];
    let mut checked = 0;
    for (name, args, outputs) in &commands {
        let mut snapshots = Vec::new();
        let mut errs = Vec::new();
        for round in 0..2 {
            let out_dir = d.join(format!("round{round}"));
            let mut full = args.clone();
            full.extend(["--cache-dir".to_string(), cache.clone()]);
            match *name {
                "unify" => full.extend(["--out-dir".to_string(), out_dir.join("unify").to_string_lossy().into_owned()]),
                _ => full.extend(["--out".to_string(), out_dir.join(outputs[0]).to_string_lossy().into_owned()]),
            }
            let refs: Vec<&str> = full.iter().map(String::as_str).collect();
            let out = run_cli(&refs);
            check_ok(&out, name)?;
            errs.push(String::from_utf8_lossy(&out.stderr).into_owned());
            snapshots.push(
                outputs
                    .iter()
                    .map(|f| std::fs::read(out_dir.join(f)).map_err(|e| format!("{name}: missing {f}: {e}")))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        ensure!(snapshots[0] == snapshots[1], "{name}: outputs differ between runs");
        if *name != "perturb" {
            ensure!(errs[1].contains("0 misses (100.00% hits)"), "{name}: second run stderr {:?}", errs[1]);
        }
        checked += outputs.len();
    }
    Ok(format!("{} commands, {checked} files byte-identical on rerun, reruns served 100% from cache", commands.len()))
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cache = tmp.path().join("cache");
    let run = |dir: &str| {
        let start = Instant::now();
        let out = run_cli(&[
            "experiment",
            "--out-dir",
            &tmp.path().join(dir).to_string_lossy(),
            "--cache-dir",
            &cache.to_string_lossy(),
        ]);
        (out, start.elapsed())
    };
    let (first, elapsed) = run("first");
    check_ok(&first, "experiment")?;
    ensure!(elapsed < Duration::from_secs(120), "experiment took {elapsed:.1?}");
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(tmp.path().join("first/summary.json")).unwrap()).unwrap();
    let providers: std::collections::BTreeSet<&str> = summary["unification"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["provider"].as_str().unwrap())
        .collect();
    ensure!(providers.len() == 3, "providers in summary: {providers:?}");

    let (second, _) = run("second");
    check_ok(&second, "experiment rerun")?;
    let stderr = String::from_utf8_lossy(&second.stderr);
    ensure!(stderr.contains("0 misses (100.00% hits)"), "rerun stderr {stderr:?}");
    for f in ["summary.json", "summary.txt"] {
        ensure!(
            std::fs::read(tmp.path().join("first").join(f)).unwrap() == std::fs::read(tmp.path().join("second").join(f)).unwrap(),
            "{f} differs on rerun"
        );
    }
    Ok(format!(
        "exit 0 in {elapsed:.1?} with {} compliance and {} unification rows; rerun identical, 100% cache hits",
        summary["compliance"].as_array().unwrap().len(),
        summary["unification"].as_array().unwrap().len()
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("math-core properties", math_core),
        ("levenshtein baseline on perturbed vocabulary", levenshtein_baseline),
        ("char-ngram floor and one-hot failure", char_ngram_vs_one_hot),
        ("definition augmentation", definition_augmentation),
        ("unification purity and 1500-term sweep", unification),
        ("t-SNE calibration and separation", tsne),
        ("CLI reproducibility and cache reuse", reproducibility),
        ("end-to-end experiment", end_to_end),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("criterion {} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
