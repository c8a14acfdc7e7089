//! 2D projections of embedding sets for scatter plots: a deterministic PCA and
//! exact t-SNE.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::term::TermCollection;
use crate::unification::{csv_err, squared_distance};

/// Above this many points the O(n²) t-SNE gets slow.
pub const TSNE_WARN_POINTS: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    pub term_id: String,
    pub term_text: String,
    pub x: f64,
    pub y: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

fn check_matrix(vectors: &[&[f64]], min_points: usize) -> Result<usize> {
    if vectors.len() < min_points {
        return Err(Error::validation(format!(
            "need at least {min_points} points, got {}",
            vectors.len()
        )));
    }
    let dim = vectors[0].len();
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

const PCA_MAX_ITER: usize = 1000;
const PCA_TOL: f64 = 1e-9;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Leading eigenvector of `XᵀX` orthogonal to `fixed`, by power iteration.
/// `total` is the trace of `XᵀX`; directions explaining a negligible share of
/// it stop the iteration.
fn principal_direction(centered: &[Vec<f64>], dim: usize, fixed: &[Vec<f64>], total: f64) -> Vec<f64> {
    let orthogonalize = |v: &mut [f64]| {
        for f in fixed {
            let p = dot(v, f);
            v.iter_mut().zip(f).for_each(|(x, y)| *x -= p * y);
        }
    };
    let mut v: Vec<f64> = (0..dim)
        .map(|j| 1.0 + ((j as f64 + 1.0) * 0.754_877_666_246_692_7).fract())
        .collect();
    orthogonalize(&mut v);
    unit(&mut v);
    for _ in 0..PCA_MAX_ITER {
        let scores: Vec<f64> = centered.iter().map(|row| dot(row, &v)).collect();
        let mut next = vec![0.0; dim];
        for (row, s) in centered.iter().zip(&scores) {
            next.iter_mut().zip(row).for_each(|(n, x)| *n += s * x);
        }
        orthogonalize(&mut next);
        if unit(&mut next) <= 1e-12 * total {
            // nothing left to explain; any orthogonal direction projects to ~zero
            break;
        }
        orthogonalize(&mut next);
        unit(&mut next);
        let delta: f64 = next.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        v = next;
        if delta < PCA_TOL {
            break;
        }
    }
    if let Some(first) = v.iter().copied().find(|x| x.abs() > 1e-12) {
        if first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    v
}

/// Projects mean-centred points onto their top two principal directions.
/// Each direction is signed so its first non-negligible loading is positive.
pub fn pca_2d(vectors: &[&[f64]]) -> Result<Vec<[f64; 2]>> {
    let dim = check_matrix(vectors, 2)?;
    if dim < 2 {
        return Err(Error::validation("PCA needs at least 2 dimensions"));
    }
    let n = vectors.len() as f64;
    let mut mean = vec![0.0; dim];
    for v in vectors {
        mean.iter_mut().zip(v.iter()).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let scale = vectors
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |a, x| a.max(x.abs()));
    let spread = centered
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |a, x| a.max(x.abs()));
    if spread <= 1e-12 * (1.0 + scale) {
        return Err(Error::validation("all points are identical; nothing to project"));
    }

    let total: f64 = centered.iter().map(|r| dot(r, r)).sum();
    let first = principal_direction(&centered, dim, &[], total);
    let second = principal_direction(&centered, dim, std::slice::from_ref(&first), total);
    Ok(centered
        .iter()
        .map(|row| [dot(row, &first), dot(row, &second)])
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneOptions {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub early_exaggeration: f64,
    /// Iterations run with exaggerated affinities and the initial momentum.
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
}

impl Default for TsneOptions {
    fn default() -> Self {
        TsneOptions {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            seed: 0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
        }
    }
}

/// Symmetric joint affinities of the input points.
#[derive(Debug, Clone)]
pub struct Affinities {
    pub n: usize,
    /// Row-major n×n joint probabilities, summing to one.
    pub p: Vec<f64>,
    /// Precision (1 / 2σ²) found for each point.
    pub betas: Vec<f64>,
    /// Shannon entropy in nats of each conditional distribution.
    pub entropies: Vec<f64>,
    pub perplexity: f64,
}

const ENTROPY_TOL: f64 = 1e-5;
const BISECTION_STEPS: usize = 50;

fn conditional_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, d)| *d)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, (o, d)) in out.iter_mut().zip(dist).enumerate() {
        *o = if j == i { 0.0 } else { (-beta * (d - min)).exp() };
        sum += *o;
    }
    let mut entropy = 0.0;
    for o in out.iter_mut() {
        *o /= sum;
        if *o > 0.0 {
            entropy -= *o * o.ln();
        }
    }
    entropy
}

/// Calibrates a Gaussian per point so the entropy of its neighbour distribution
/// equals `ln(perplexity)`, then symmetrizes.
///
/// Only pairwise squared distances enter, so translating every input point by
/// the same vector leaves the result unchanged whenever the subtraction is exact.
pub fn affinities(vectors: &[&[f64]], perplexity: f64) -> Result<Affinities> {
    let n = vectors.len();
    check_matrix(vectors, 4)?;
    if !(perplexity.is_finite() && perplexity > 0.0) {
        return Err(Error::validation("perplexity must be positive"));
    }
    let perplexity = perplexity.min((n - 1) as f64 / 3.0);
    let target = perplexity.ln();

    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let d = squared_distance(vectors[i], vectors[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }

    let mut cond = vec![0.0; n * n];
    let mut betas = vec![0.0; n];
    let mut entropies = vec![0.0; n];
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let out = &mut cond[i * n..(i + 1) * n];
        let mut beta = 1.0;
        let (mut lo, mut hi) = (None::<f64>, None::<f64>);
        let mut h = conditional_row(row, i, beta, out);
        for _ in 0..BISECTION_STEPS {
            if (h - target).abs() < ENTROPY_TOL {
                break;
            }
            if h > target {
                lo = Some(beta);
                beta = hi.map_or(beta * 2.0, |hi| (beta + hi) / 2.0);
            } else {
                hi = Some(beta);
                beta = lo.map_or(beta / 2.0, |lo| (beta + lo) / 2.0);
            }
            h = conditional_row(row, i, beta, out);
        }
        betas[i] = beta;
        entropies[i] = h;
    }

    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = (cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64);
        }
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    Ok(Affinities {
        n,
        p,
        betas,
        entropies,
        perplexity,
    })
}

#[derive(Debug, Clone)]
pub struct TsneOutput {
    pub coords: Vec<[f64; 2]>,
    /// Perplexity after clamping to `(n - 1) / 3`.
    pub perplexity: f64,
    /// KL(P‖Q) at every 50th iteration and at the last one.
    pub kl_trace: Vec<(usize, f64)>,
}

impl TsneOutput {
    pub fn kl_at(&self, iteration: usize) -> Option<f64> {
        self.kl_trace
            .iter()
            .find(|(i, _)| *i == iteration)
            .map(|(_, kl)| *kl)
    }
}

fn student_t(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let mut num = vec![0.0; n * n];
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = y[i][0] - y[j][0];
            let dy = y[i][1] - y[j][1];
            let q = 1.0 / (1.0 + dx * dx + dy * dy);
            num[i * n + j] = q;
            num[j * n + i] = q;
            sum += 2.0 * q;
        }
    }
    (num, sum)
}

pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let (num, sum) = student_t(y);
    p.iter()
        .zip(&num)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / (q / sum).max(f64::MIN_POSITIVE)).ln())
        .sum()
}

/// Exact O(n²) t-SNE into two dimensions.
pub fn tsne_2d(vectors: &[&[f64]], options: &TsneOptions) -> Result<TsneOutput> {
    let n = vectors.len();
    if n > TSNE_WARN_POINTS {
        log::warn!("exact t-SNE on {n} points is quadratic in time and memory");
    }
    let aff = affinities(vectors, options.perplexity)?;
    let p = &aff.p;

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)])
        .collect();
    let mut update = vec![[0.0f64; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut kl_trace = Vec::new();

    for iter in 1..=options.iterations {
        let early = iter <= options.exaggeration_iters;
        let exaggeration = if early { options.early_exaggeration } else { 1.0 };
        let momentum = if early {
            options.initial_momentum
        } else {
            options.final_momentum
        };

        let (num, sum) = student_t(&y);
        let mut grad = vec![[0.0f64; 2]; n];
        for i in 0..n {
            let (mut gx, mut gy) = (0.0, 0.0);
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let mult = (exaggeration * p[i * n + j] - q / sum) * q;
                gx += mult * (y[i][0] - y[j][0]);
                gy += mult * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * gx, 4.0 * gy];
        }

        for i in 0..n {
            for d in 0..2 {
                gains[i][d] = if (grad[i][d] > 0.0) != (update[i][d] > 0.0) {
                    gains[i][d] + 0.2
                } else {
                    (gains[i][d] * 0.8).max(0.01)
                };
                update[i][d] = momentum * update[i][d] - options.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += update[i][d];
            }
        }
        let (mx, my) = y
            .iter()
            .fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
        for p in y.iter_mut() {
            p[0] -= mx / n as f64;
            p[1] -= my / n as f64;
        }

        if iter % 50 == 0 || iter == options.iterations {
            kl_trace.push((iter, kl_divergence(p, &y)));
        }
    }

    if let Some(i) = y.iter().position(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::validation(format!("t-SNE diverged at point {i}")));
    }
    Ok(TsneOutput {
        coords: y,
        perplexity: aff.perplexity,
        kl_trace,
    })
}

/// Pairs coordinates with their terms, optional cluster indices and labels.
pub fn project_terms(
    terms: &TermCollection,
    coords: &[[f64; 2]],
    clusters: Option<&[usize]>,
) -> Vec<ProjectedPoint> {
    terms
        .iter()
        .zip(coords)
        .enumerate()
        .map(|(i, (t, c))| ProjectedPoint {
            term_id: t.id.clone(),
            term_text: t.text.clone(),
            x: c[0],
            y: c[1],
            cluster: clusters.map(|cl| cl[i]),
            label: t.label.clone(),
        })
        .collect()
}

/// CSV rows `term_id,term_text,x,y[,cluster][,label]`.
pub fn points_to_csv(points: &[ProjectedPoint]) -> Result<String> {
    let with_cluster = points.iter().all(|p| p.cluster.is_some());
    let with_label = points.iter().all(|p| p.label.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["term_id", "term_text", "x", "y"];
    if with_cluster {
        header.push("cluster");
    }
    if with_label {
        header.push("label");
    }
    w.write_record(&header).map_err(csv_err)?;
    for p in points {
        let mut row = vec![p.term_id.clone(), p.term_text.clone(), p.x.to_string(), p.y.to_string()];
        if with_cluster {
            row.push(p.cluster.unwrap_or_default().to_string());
        }
        if with_label {
            row.push(p.label.clone().unwrap_or_default());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn escape_xml(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// 800×800 scatter plot, coloured by cluster. Axes carry no units.
pub fn points_to_svg(points: &[ProjectedPoint], show_labels: bool) -> String {
    const SIZE: f64 = 800.0;
    const MARGIN: f64 = 40.0;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let span = |a: f64, b: f64| if b > a { b - a } else { 1.0 };
    let (sx, sy) = (span(x0, x1), span(y0, y1));
    let inner = SIZE - 2.0 * MARGIN;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="800" height="800" viewBox="0 0 800 800">"#
    );
    let _ = writeln!(out, r#"<rect width="800" height="800" fill="white"/>"#);
    for p in points {
        let cx = MARGIN + (p.x - x0) / sx * inner;
        let cy = SIZE - MARGIN - (p.y - y0) / sy * inner;
        let color = PALETTE[p.cluster.unwrap_or(0) % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="4" fill="{color}"><title>{}</title></circle>"#,
            escape_xml(&p.term_text)
        );
        if show_labels {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-size="10" font-family="sans-serif">{}</text>"#,
                cx + 6.0,
                cy + 3.0,
                escape_xml(&p.term_text)
            );
        }
    }
    out.push_str("</svg>\n");
    out
}
