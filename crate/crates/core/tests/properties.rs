use metacurate_core::compliance::comply;
use metacurate_core::embedding::{
    cosine, embed_batch, CharNgramConfig, EmbeddingCache, OneHotConfig, Provider, ProviderConfig,
};
use metacurate_core::perturbation::{levenshtein, perturb, PerturbationSpec};
use metacurate_core::term::{GroundTruth, SpecificationSet, Term, TermCollection};
use metacurate_core::unification::{kmeans_raw, purity, unify, KMeansOptions};
use proptest::prelude::*;

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0..100.0f64, dim)
}

fn char_ngram() -> Provider {
    Provider::new(ProviderConfig::CharNgramHashed(CharNgramConfig::default())).unwrap()
}

proptest! {
    #[test]
    fn cosine_symmetric_bounded_scale_free(
        (a, b) in (1usize..12).prop_flat_map(|d| (vector(d), vector(d))),
        scale in 0.001..1000.0f64,
    ) {
        let ab = cosine(&a, &b).unwrap();
        prop_assert!((ab - cosine(&b, &a).unwrap()).abs() < 1e-9);
        prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&ab));
        let scaled: Vec<f64> = a.iter().map(|x| x * scale).collect();
        let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            prop_assert!((cosine(&scaled, &b).unwrap() - ab).abs() < 1e-9);
            prop_assert!((cosine(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        }
        prop_assert_eq!(cosine(&vec![0.0; a.len()], &b).unwrap(), 0.0);
    }

    #[test]
    fn levenshtein_is_a_metric(a in "[a-d]{0,8}", b in "[a-d]{0,8}", c in "[a-d]{0,8}") {
        let ab = levenshtein(&a, &b);
        prop_assert_eq!(ab == 0, a == b);
        prop_assert_eq!(ab, levenshtein(&b, &a));
        prop_assert!(levenshtein(&a, &c) <= ab + levenshtein(&b, &c));
        let (la, lb) = (a.chars().count(), b.chars().count());
        prop_assert!(ab <= la.max(lb));
        prop_assert!(ab >= la.abs_diff(lb));
    }

    #[test]
    fn perturbation_changes_exactly_the_requested_positions(
        text in "[a-z ]{3,20}",
        subs in 1usize..3,
        seed in any::<u64>(),
    ) {
        let term = Term::new("0", text.clone());
        prop_assume!(term.is_ok());
        let p = perturb(&term.unwrap(), &PerturbationSpec::new(subs, seed)).unwrap();
        prop_assert_eq!(p.text.chars().count(), text.chars().count());
        let hamming = p.text.chars().zip(text.chars()).filter(|(x, y)| x != y).count();
        prop_assert_eq!(hamming, subs);
        prop_assert!(levenshtein(&p.text, &text) <= subs);
    }

    #[test]
    fn kmeans_objective_never_increases(
        points in prop::collection::vec(vector(3), 4..40),
        k in 1usize..5,
        seed in any::<u64>(),
    ) {
        let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
        let c = kmeans_raw(&refs, k.min(points.len()), seed, KMeansOptions::default()).unwrap();
        for w in c.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{:?}", c.objective_history);
        }
        prop_assert!(c.cluster_sizes().iter().all(|&s| s > 0));
        prop_assert_eq!(c.assignments.len(), points.len());
    }

    #[test]
    fn purity_bounds(labels in prop::collection::vec(0u8..4, 2..30), k in 1usize..6, seed in any::<u64>()) {
        let points: Vec<Vec<f64>> = (0..labels.len()).map(|i| vec![i as f64, (i * i % 7) as f64]).collect();
        let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
        let mut c = kmeans_raw(&refs, k.min(points.len()), seed, KMeansOptions::default()).unwrap();
        c.point_ids = (0..labels.len()).map(|i| i.to_string()).collect();
        let truth = GroundTruth::new(
            labels.iter().enumerate().map(|(i, l)| (i.to_string(), format!("g{l}"))).collect(),
        );
        let report = purity(&c, &truth).unwrap();
        let groups = report.label_groups;
        let largest = (0..4u8).map(|g| labels.iter().filter(|&&l| l == g).count()).max().unwrap();
        prop_assert!(report.purity <= 1.0);
        prop_assert!(report.purity >= largest as f64 / labels.len() as f64 - 1e-12);
        prop_assert!((1..=4).contains(&groups));

        // one point per cluster is always pure
        c.k = labels.len();
        c.assignments = (0..labels.len()).collect();
        prop_assert_eq!(purity(&c, &truth).unwrap().purity, 1.0);
    }

    #[test]
    fn truncation_keeps_the_best(words in prop::collection::btree_set("[a-f]{2,6}", 2..8), query in "[a-f]{1,6}", k in 1usize..8) {
        let terms: Vec<Term> = words.iter().enumerate().map(|(i, w)| Term::new(i.to_string(), w.clone()).unwrap()).collect();
        let spec = SpecificationSet::new("s", terms).unwrap();
        let q = Term::new("q", query).unwrap();
        let p = char_ngram();
        let full = comply(&q, &spec, &p, false, spec.len()).unwrap();
        let short = comply(&q, &spec, &p, false, k).unwrap();
        prop_assert_eq!(&full.best, &short.best);
        prop_assert_eq!(short.candidates.len(), k.min(spec.len()));
        prop_assert_eq!(&full.candidates[..short.candidates.len()], &short.candidates[..]);
        for c in &full.candidates {
            prop_assert!((-1.0..=1.0).contains(&c.score));
        }
        for w in full.candidates.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn one_hot_membership(words in prop::collection::btree_set("[a-z]{1,6}( [a-z]{1,6})?", 1..10)) {
        let terms: Vec<Term> = words.iter().enumerate().map(|(i, w)| Term::new(i.to_string(), w.clone()).unwrap()).collect();
        let spec = SpecificationSet::new("s", terms).unwrap();
        let provider = Provider::new(ProviderConfig::OneHot(OneHotConfig::new(words.iter()))).unwrap();
        for t in spec.terms() {
            let r = comply(t, &spec, &provider, false, 1).unwrap();
            prop_assert!(r.compliant);
            prop_assert_eq!(&r.best, &t.id);
            prop_assert!((r.candidates[0].score - 1.0).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn unify_ignores_input_order(
        words in prop::collection::btree_set("[a-e]{2,7}", 6..16),
        k in 1usize..5,
        seed in any::<u64>(),
        rotate in 0usize..16,
    ) {
        let terms: Vec<Term> = words.iter().enumerate().map(|(i, w)| Term::new(format!("t{i:02}"), w.clone()).unwrap()).collect();
        let mut shuffled = terms.clone();
        let r = rotate % shuffled.len();
        shuffled.rotate_left(r);
        shuffled.reverse();
        let p = char_ngram();
        let a = unify(&TermCollection::new(terms).unwrap(), &p, k, seed, None, KMeansOptions::default()).unwrap();
        let b = unify(&TermCollection::new(shuffled).unwrap(), &p, k, seed, None, KMeansOptions::default()).unwrap();
        let by_id = |c: &metacurate_core::unification::Clustering| {
            let mut v: Vec<(String, usize)> = c.point_ids.iter().cloned().zip(c.assignments.iter().copied()).collect();
            v.sort();
            v
        };
        prop_assert_eq!(by_id(&a.clustering), by_id(&b.clustering));
        prop_assert_eq!(a.clustering.objective.to_bits(), b.clustering.objective.to_bits());
    }

    #[test]
    fn cached_vectors_equal_fresh_ones(texts in prop::collection::vec("[a-zA-Z0-9 ]{1,12}", 1..20)) {
        let texts: Vec<String> = texts.into_iter().filter(|t| !t.trim().is_empty()).collect();
        prop_assume!(!texts.is_empty());
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = char_ngram();
        let fresh = embed_batch(&refs, &p, None).unwrap();
        embed_batch(&refs, &p, Some(&EmbeddingCache::open(dir.path()).unwrap())).unwrap();
        let reopened = EmbeddingCache::open(dir.path()).unwrap();
        let cached = embed_batch(&refs, &p, Some(&reopened)).unwrap();
        prop_assert_eq!(cached.stats.misses, 0);
        prop_assert_eq!(cached.stats.hits, refs.len());
        for (a, b) in fresh.embeddings.iter().zip(&cached.embeddings) {
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&a.values), bits(&b.values));
        }
    }
}
