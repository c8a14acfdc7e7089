//! Bundled datasets and seeded synthetic generators used by the experiment
//! harness and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::term::{parse_specification, parse_terms, InputFormat, SpecificationSet, Term, TermCollection};

/// Fifty tissue/sample vocabulary terms, pairwise edit distance at least 3.
pub const SYNTHETIC_VOCABULARY: &str = include_str!("../fixtures/synthetic_vocabulary.txt");
/// Sample-preparation specification with a definition for every term.
pub const TISSUE_SPEC: &str = include_str!("../fixtures/tissue_spec.csv");
/// Free-text user entries for [`TISSUE_SPEC`], labelled with the intended term.
pub const TISSUE_QUERIES: &str = include_str!("../fixtures/tissue_queries.csv");
/// Attribute-name synonyms grouped by canonical attribute.
pub const SYNONYMS: &str = include_str!("../fixtures/synonyms.csv");

pub fn synthetic_vocabulary() -> Result<SpecificationSet> {
    let mut spec = parse_specification(SYNTHETIC_VOCABULARY.as_bytes(), InputFormat::PlainLines)?;
    spec.name = "synthetic-vocabulary".into();
    Ok(spec)
}

pub fn tissue_spec() -> Result<SpecificationSet> {
    let mut spec = parse_specification(TISSUE_SPEC.as_bytes(), InputFormat::Csv)?;
    spec.name = "tissue".into();
    Ok(spec)
}

pub fn tissue_queries() -> Result<TermCollection> {
    parse_terms(TISSUE_QUERIES.as_bytes(), InputFormat::Csv)
}

pub fn synonyms() -> Result<TermCollection> {
    parse_terms(SYNONYMS.as_bytes(), InputFormat::Csv)
}

/// `per_blob` Gaussian points around each centre, blob by blob. Returns the
/// points and the blob index of each.
pub fn gaussian_blobs(centers: &[Vec<f64>], per_blob: usize, sigma: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).expect("sigma must be finite and non-negative");
    let mut points = Vec::with_capacity(centers.len() * per_blob);
    let mut labels = Vec::with_capacity(centers.len() * per_blob);
    for (b, c) in centers.iter().enumerate() {
        for _ in 0..per_blob {
            points.push(c.iter().map(|x| x + noise.sample(&mut rng)).collect());
            labels.push(b);
        }
    }
    (points, labels)
}

const ONSETS: [&str; 16] = [
    "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: [&str; 6] = ["a", "e", "i", "o", "u", "ae"];
const QUALIFIERS: [&str; 6] = ["host", "sample", "source", "donor", "type", "name"];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(2..=4);
    (0..syllables)
        .map(|_| {
            format!(
                "{}{}",
                ONSETS[rng.random_range(0..ONSETS.len())],
                VOWELS[rng.random_range(0..VOWELS.len())]
            )
        })
        .collect()
}

/// Synthetic attribute-synonym collection shaped like a curated synonym list:
/// `groups` canonical two-word names, each with `per_group` surface variants
/// (reordering, joining, qualifiers, abbreviation). Labels are `group<N>`.
pub fn synthetic_synonyms(groups: usize, per_group: usize, seed: u64) -> Result<TermCollection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::with_capacity(groups * per_group);
    for g in 0..groups {
        let (a, b) = (pseudo_word(&mut rng), pseudo_word(&mut rng));
        let qualifier = QUALIFIERS[rng.random_range(0..QUALIFIERS.len())];
        let short: String = a.chars().take(3).collect();
        let variants = [
            format!("{a} {b}"),
            format!("{a}_{b}"),
            format!("{b} of {a}"),
            format!("{qualifier} {a} {b}"),
            format!("{short} {b}"),
            format!("{a}{b}"),
            format!("{a} {b} {qualifier}"),
        ];
        for v in 0..per_group {
            let text = match variants.get(v) {
                Some(t) => t.clone(),
                None => format!("{} {v}", variants[v % variants.len()]),
            };
            let id = terms.len().to_string();
            terms.push(Term::new(id, text)?.with_label(format!("group{g}")));
        }
    }
    TermCollection::new(terms)
}
