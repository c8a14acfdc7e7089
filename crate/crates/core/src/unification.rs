//! Term unification: k-means over term embeddings and purity against known
//! synonym groups.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{embed_batch, normalize_in_place, CacheStats, Embedding, EmbeddingCache, Provider};
use crate::error::{Error, Result};
use crate::term::{GroundTruth, TermCollection};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansOptions {
    pub max_iter: usize,
    /// Stop once `(previous - current) / previous` falls below this.
    pub rel_tol: f64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions {
            max_iter: 300,
            rel_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub k: usize,
    /// Identifier of each clustered point, aligned with `assignments`.
    pub point_ids: Vec<String>,
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub objective: f64,
    pub iterations: usize,
    pub seed: u64,
    /// Objective after every Lloyd iteration.
    pub objective_history: Vec<f64>,
}

impl Clustering {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Member point ids per cluster, in point order.
    pub fn members(&self) -> Vec<Vec<&str>> {
        let mut out = vec![Vec::new(); self.k];
        for (id, &a) in self.point_ids.iter().zip(&self.assignments) {
            out[a].push(id.as_str());
        }
        out
    }
}

/// One point held both densely and as its non-zero entries.
struct Point {
    dense: Vec<f64>,
    nz: Vec<(usize, f64)>,
    sq_norm: f64,
}

impl Point {
    fn new(values: &[f64]) -> Self {
        let nz: Vec<(usize, f64)> = values
            .iter()
            .copied()
            .enumerate()
            .filter(|(_, v)| *v != 0.0)
            .collect();
        Point {
            sq_norm: nz.iter().map(|(_, v)| v * v).sum(),
            dense: values.to_vec(),
            nz,
        }
    }

    /// Squared distance through `|x|² + |c|² - 2x·c`, cheap for sparse points.
    fn fast_sq_dist(&self, centroid: &[f64], centroid_sq: f64) -> f64 {
        let dot: f64 = self.nz.iter().map(|&(i, v)| v * centroid[i]).sum();
        (self.sq_norm + centroid_sq - 2.0 * dot).max(0.0)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn objective(points: &[Point], centroids: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| squared_distance(&p.dense, &centroids[a]))
        .sum()
}

fn validate_inputs(vectors: &[&[f64]], k: usize) -> Result<usize> {
    let n = vectors.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    if k > n {
        return Err(Error::validation(format!("k = {k} exceeds the {n} points")));
    }
    let dim = vectors[0].len();
    if dim == 0 {
        return Err(Error::validation("vectors have zero dimensions"));
    }
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != dim {
            return Err(Error::validation(format!(
                "vector {i} has dimension {}, expected {dim}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation(format!("vector {i} is not finite")));
        }
    }
    Ok(dim)
}

fn kmeans_pp_init(points: &[Point], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![points[first].dense.clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(&p.dense, &centroids[0]))
        .collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
            pick.expect("positive total weight")
        } else {
            // every remaining point coincides with a centre
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = points[pick].dense.clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(squared_distance(&p.dense, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[Point], centroids: &[Vec<f64>]) -> Vec<usize> {
    let sq: Vec<f64> = centroids.iter().map(|c| c.iter().map(|x| x * x).sum()).collect();
    points
        .par_iter()
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (j, c) in centroids.iter().enumerate() {
                let d = p.fast_sq_dist(c, sq[j]);
                if d < best_d {
                    best_d = d;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Gives every empty cluster the point farthest from its own centroid, taken
/// from a cluster that can spare it.
fn repair_empty(points: &[Point], centroids: &mut [Vec<f64>], assignments: &mut [usize]) {
    let k = centroids.len();
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    for j in 0..k {
        if sizes[j] > 0 {
            continue;
        }
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if sizes[a] < 2 {
                continue;
            }
            let d = squared_distance(&p.dense, &centroids[a]);
            if d > far_d {
                far_d = d;
                far = Some(i);
            }
        }
        let Some(i) = far else { return };
        sizes[assignments[i]] -= 1;
        assignments[i] = j;
        sizes[j] = 1;
        centroids[j] = points[i].dense.clone();
    }
}

fn update_centroids(points: &[Point], centroids: &mut [Vec<f64>], assignments: &[usize]) {
    let dim = centroids[0].len();
    let mut sums = vec![vec![0.0; dim]; centroids.len()];
    let mut counts = vec![0usize; centroids.len()];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for &(i, v) in &p.nz {
            sums[a][i] += v;
        }
    }
    for ((c, sum), &count) in centroids.iter_mut().zip(sums).zip(&counts) {
        if count > 0 {
            *c = sum.into_iter().map(|s| s / count as f64).collect();
        }
    }
}

/// Lloyd's algorithm from a seeded k-means++ start, on the vectors as given.
///
/// Stops when the assignment stops changing, when the relative objective
/// improvement drops below `rel_tol`, or after `max_iter` iterations. The
/// returned assignment always maps each point to its nearest centroid (ties to
/// the lowest index).
pub fn kmeans_raw(vectors: &[&[f64]], k: usize, seed: u64, options: KMeansOptions) -> Result<Clustering> {
    validate_inputs(vectors, k)?;
    let points: Vec<Point> = vectors.iter().map(|v| Point::new(v)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp_init(&points, k, &mut rng);

    let mut assignments: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut previous = f64::INFINITY;

    while iterations < options.max_iter.max(1) {
        iterations += 1;
        let mut next = assign(&points, &centroids);
        repair_empty(&points, &mut centroids, &mut next);
        let changed = next != assignments;
        assignments = next;
        update_centroids(&points, &mut centroids, &assignments);
        let obj = objective(&points, &centroids, &assignments);
        history.push(obj);
        if !changed || obj == 0.0 {
            break;
        }
        if previous.is_finite() && previous - obj <= options.rel_tol * previous {
            break;
        }
        previous = obj;
    }

    let mut settled = assign(&points, &centroids);
    repair_empty(&points, &mut centroids, &mut settled);
    if settled != assignments {
        assignments = settled;
        let obj = objective(&points, &centroids, &assignments);
        history.push(obj);
    }
    let objective = *history.last().expect("at least one iteration");

    Ok(Clustering {
        k,
        point_ids: (0..vectors.len()).map(|i| i.to_string()).collect(),
        assignments,
        centroids,
        objective,
        iterations,
        seed,
        objective_history: history,
    })
}

pub fn kmeans(vectors: &[Embedding], k: usize, seed: u64, options: KMeansOptions) -> Result<Clustering> {
    let refs: Vec<&[f64]> = vectors.iter().map(|e| e.values.as_slice()).collect();
    kmeans_raw(&refs, k, seed, options)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClusterPurity {
    pub cluster: usize,
    pub size: usize,
    pub majority_label: String,
    pub majority_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityReport {
    pub purity: f64,
    pub n: usize,
    /// Number of distinct ground-truth labels among the clustered points.
    pub label_groups: usize,
    pub clusters: Vec<ClusterPurity>,
}

/// Fraction of points whose label equals their cluster's majority label.
/// Majority ties go to the lexicographically smallest label.
pub fn purity(clustering: &Clustering, truth: &GroundTruth) -> Result<PurityReport> {
    let n = clustering.assignments.len();
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let mut tallies: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); clustering.k];
    let mut labels = std::collections::BTreeSet::new();
    for (id, &a) in clustering.point_ids.iter().zip(&clustering.assignments) {
        let label = truth
            .get(id)
            .ok_or_else(|| Error::validation(format!("no ground-truth label for term {id:?}")))?;
        labels.insert(label);
        *tallies[a].entry(label).or_default() += 1;
    }
    let mut clusters = Vec::new();
    let mut total = 0;
    for (cluster, tally) in tallies.iter().enumerate() {
        let size: usize = tally.values().sum();
        if size == 0 {
            continue;
        }
        // BTreeMap iterates labels in order, so the first maximum is the smallest label
        let (label, count) = tally
            .iter()
            .fold(None::<(&str, usize)>, |best, (&l, &c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((l, c)),
            })
            .expect("non-empty cluster");
        total += count;
        clusters.push(ClusterPurity {
            cluster,
            size,
            majority_label: label.to_string(),
            majority_count: count,
        });
    }
    Ok(PurityReport {
        purity: total as f64 / n as f64,
        n,
        label_groups: labels.len(),
        clusters,
    })
}

#[derive(Debug, Clone)]
pub struct Unification {
    pub clustering: Clustering,
    pub purity: Option<PurityReport>,
    pub stats: CacheStats,
}

/// Embeds, L2-normalizes and clusters `terms`. Points are ordered by term id
/// before seeding, so the partition does not depend on input order. Purity is
/// reported when every term has a label.
pub fn unify(
    terms: &TermCollection,
    provider: &Provider,
    k: usize,
    seed: u64,
    cache: Option<&EmbeddingCache>,
    options: KMeansOptions,
) -> Result<Unification> {
    let texts = terms.texts();
    let batch = embed_batch(&texts, provider, cache)?;
    let (clustering, purity) = cluster_embeddings(terms, &batch.embeddings, k, seed, options)?;
    Ok(Unification {
        clustering,
        purity,
        stats: batch.stats,
    })
}

/// The clustering half of [`unify`], for embeddings computed elsewhere.
pub fn cluster_embeddings(
    terms: &TermCollection,
    embeddings: &[Embedding],
    k: usize,
    seed: u64,
    options: KMeansOptions,
) -> Result<(Clustering, Option<PurityReport>)> {
    if embeddings.len() != terms.len() {
        return Err(Error::validation("one embedding per term required"));
    }
    let mut order: Vec<usize> = (0..terms.len()).collect();
    order.sort_by(|&a, &b| terms.terms()[a].id.cmp(&terms.terms()[b].id));
    let normalized: Vec<Vec<f64>> = order
        .iter()
        .map(|&i| {
            let mut v = embeddings[i].values.clone();
            normalize_in_place(&mut v);
            v
        })
        .collect();
    let refs: Vec<&[f64]> = normalized.iter().map(Vec::as_slice).collect();
    let canonical = kmeans_raw(&refs, k, seed, options)?;

    let mut assignments = vec![0; terms.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = canonical.assignments[pos];
    }
    let clustering = Clustering {
        point_ids: terms.iter().map(|t| t.id.clone()).collect(),
        assignments,
        ..canonical
    };
    let purity = match GroundTruth::from_labels(terms) {
        Some(truth) => Some(purity(&clustering, &truth)?),
        None => None,
    };
    Ok((clustering, purity))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEntry {
    pub index: usize,
    pub term_ids: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub majority_label: Option<String>,
}

/// Machine-readable clustering report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub k: usize,
    pub seed: u64,
    pub objective: f64,
    pub iterations: usize,
    pub clusters: Vec<ClusterEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub purity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label_groups: Option<usize>,
}

impl ClusterReport {
    pub fn new(clustering: &Clustering, purity: Option<&PurityReport>) -> Self {
        let majority: BTreeMap<usize, &str> = purity
            .map(|p| {
                p.clusters
                    .iter()
                    .map(|c| (c.cluster, c.majority_label.as_str()))
                    .collect()
            })
            .unwrap_or_default();
        let clusters = clustering
            .members()
            .into_iter()
            .enumerate()
            .map(|(index, ids)| ClusterEntry {
                index,
                term_ids: ids.into_iter().map(str::to_string).collect(),
                majority_label: majority.get(&index).map(|s| s.to_string()),
            })
            .collect();
        ClusterReport {
            k: clustering.k,
            seed: clustering.seed,
            objective: clustering.objective,
            iterations: clustering.iterations,
            clusters,
            purity: purity.map(|p| p.purity),
            label_groups: purity.map(|p| p.label_groups),
        }
    }
}

/// CSV rows `term_id,term_text,cluster[,label]`.
pub fn clusters_to_csv(terms: &TermCollection, clustering: &Clustering) -> Result<String> {
    let with_labels = terms.iter().all(|t| t.label.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["term_id", "term_text", "cluster"];
    if with_labels {
        header.push("label");
    }
    w.write_record(&header).map_err(csv_err)?;
    for (term, &a) in terms.iter().zip(&clustering.assignments) {
        let cluster = a.to_string();
        let mut row = vec![term.id.as_str(), term.text.as_str(), cluster.as_str()];
        if with_labels {
            row.push(term.label.as_deref().unwrap_or_default());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::validation(format!("csv write failed: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(points: &[[f64; 2]]) -> Vec<Vec<f64>> {
        points.iter().map(|p| p.to_vec()).collect()
    }

    fn run(points: &[Vec<f64>], k: usize, seed: u64) -> Clustering {
        let refs: Vec<&[f64]> = points.iter().map(Vec::as_slice).collect();
        kmeans_raw(&refs, k, seed, KMeansOptions::default()).unwrap()
    }

    #[test]
    fn two_pairs() {
        let pts = raw(&[[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]]);
        for seed in 0..20 {
            let c = run(&pts, 2, seed);
            assert_eq!(c.assignments[0], c.assignments[1]);
            assert_eq!(c.assignments[2], c.assignments[3]);
            assert_ne!(c.assignments[0], c.assignments[2]);
            assert!((c.objective - 1.0).abs() < 1e-12, "{}", c.objective);
        }
    }

    #[test]
    fn single_cluster_is_mean() {
        let pts = raw(&[[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]]);
        let c = run(&pts, 1, 3);
        assert!(c.assignments.iter().all(|&a| a == 0));
        assert!((c.centroids[0][0] - 5.0).abs() < 1e-12);
        assert!((c.centroids[0][1] - 5.5).abs() < 1e-12);
    }

    #[test]
    fn k_equals_n_has_zero_objective() {
        let pts = raw(&[[0.0, 0.0], [0.0, 1.0], [10.0, 10.0], [10.0, 11.0]]);
        let c = run(&pts, 4, 9);
        assert_eq!(c.objective, 0.0);
        let mut a = c.assignments.clone();
        a.sort();
        assert_eq!(a, vec![0, 1, 2, 3]);
    }

    #[test]
    fn duplicate_points_still_fill_every_cluster() {
        let pts = raw(&[[1.0, 1.0], [1.0, 1.0], [1.0, 1.0], [2.0, 2.0]]);
        let c = run(&pts, 3, 0);
        assert_eq!(c.cluster_sizes().iter().filter(|&&s| s > 0).count(), 3);
        assert_eq!(c.objective, 0.0);
    }

    #[test]
    fn input_errors() {
        let pts = raw(&[[0.0, 0.0], [1.0, 1.0]]);
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let o = KMeansOptions::default();
        assert!(matches!(kmeans_raw(&refs, 3, 0, o), Err(Error::Validation(_))));
        assert!(matches!(kmeans_raw(&refs, 0, 0, o), Err(Error::Validation(_))));
        let bad = [[0.0, f64::NAN]];
        let refs: Vec<&[f64]> = bad.iter().map(|p| p.as_slice()).collect();
        assert!(matches!(kmeans_raw(&refs, 1, 0, o), Err(Error::Validation(_))));
    }

    fn clustering(assignments: Vec<usize>, k: usize) -> Clustering {
        Clustering {
            k,
            point_ids: (0..assignments.len()).map(|i| i.to_string()).collect(),
            assignments,
            centroids: vec![],
            objective: 0.0,
            iterations: 0,
            seed: 0,
            objective_history: vec![],
        }
    }

    fn truth(labels: &[&str]) -> GroundTruth {
        let mut t = GroundTruth::default();
        for (i, l) in labels.iter().enumerate() {
            t.insert(i.to_string(), *l);
        }
        t
    }

    #[test]
    fn purity_examples() {
        let c = clustering(vec![0, 0, 1, 1], 2);
        assert_eq!(purity(&c, &truth(&["A", "A", "B", "B"])).unwrap().purity, 1.0);
        let p = purity(&c, &truth(&["A", "B", "A", "B"])).unwrap();
        assert_eq!(p.purity, 0.5);
        // tie within each cluster resolves to the smaller label
        assert!(p.clusters.iter().all(|c| c.majority_label == "A"));

        let singletons = clustering(vec![0, 1, 2, 3], 4);
        assert_eq!(purity(&singletons, &truth(&["A", "B", "A", "C"])).unwrap().purity, 1.0);
    }

    #[test]
    fn purity_missing_label() {
        let c = clustering(vec![0, 0, 1], 2);
        assert!(matches!(purity(&c, &truth(&["A", "B"])), Err(Error::Validation(_))));
    }

    #[test]
    fn csv_export() {
        let terms = crate::term::parse_terms(b"term,label\nsex,s\ngender,s\n", crate::term::InputFormat::Csv)
            .unwrap();
        let c = clustering(vec![1, 0], 2);
        let csv = clusters_to_csv(&terms, &c).unwrap();
        assert_eq!(csv, "term_id,term_text,cluster,label\n0,sex,1,s\n1,gender,0,s\n");
    }
}
