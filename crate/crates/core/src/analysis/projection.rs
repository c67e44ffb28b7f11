//! Two-dimensional PCA of document representations.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Document, Sentiment};
use crate::error::{Error, Result};
use crate::losses::Domain;
use crate::model::Hagan;

const MAX_ITERATIONS: usize = 200;
const TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedDocument {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub domain: Domain,
    pub label: Option<Sentiment>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReprProjection {
    pub points: Vec<ProjectedDocument>,
}

impl ReprProjection {
    /// TSV `doc_id<TAB>x<TAB>y<TAB>domain<TAB>label`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let domain = match p.domain {
                Domain::Source => "S",
                Domain::Target => "T",
            };
            let label = p.label.map_or("-", Sentiment::label);
            let _ = writeln!(out, "{}\t{}\t{}\t{domain}\t{label}", p.id, p.x, p.y);
        }
        out
    }
}

fn matvec(c: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    c.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Leading eigenpair of a symmetric PSD matrix by power iteration, or
/// `None` when the matrix annihilates the start vector.
fn leading_eigen(c: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Option<(f64, Vec<f64>)> {
    let d = c.len();
    let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n = norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    let mut lambda = 0.0;
    for _ in 0..MAX_ITERATIONS {
        let w = matvec(c, &v);
        let next = norm(&w);
        if next <= f64::MIN_POSITIVE {
            return None;
        }
        v = w.into_iter().map(|x| x / next).collect();
        let done = (next - lambda).abs() <= TOLERANCE * next;
        lambda = next;
        if done {
            break;
        }
    }
    // Sign convention: the largest-magnitude entry is positive.
    let lead = v
        .iter()
        .copied()
        .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
    if lead < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    Some((lambda, v))
}

/// Centered rows projected onto the top two principal components.
pub fn pca_2d(rows: &[Vec<f64>], seed: u64) -> Result<Vec<[f64; 2]>> {
    if rows.len() < 3 {
        return Err(Error::Usage("projection needs at least three documents".into()));
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::Usage("representations differ in length".into()));
    }
    let n = rows.len() as f64;
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in &centered {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += r[i] * r[j] / n;
            }
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i][i]).sum();
    if !(trace > 1e-24) {
        return Err(Error::Degenerate("representations have zero variance".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (l1, v1) = leading_eigen(&cov, &mut rng)
        .ok_or_else(|| Error::Degenerate("representations have zero variance".into()))?;
    for i in 0..d {
        for j in 0..d {
            cov[i][j] -= l1 * v1[i] * v1[j];
        }
    }
    // Below this the deflated matrix is rounding noise and the data is rank one.
    let v2 = leading_eigen(&cov, &mut rng)
        .filter(|(l2, _)| *l2 > 1e-12 * l1)
        .map(|(_, v)| v);
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    Ok(centered
        .iter()
        .map(|r| [dot(r, &v1), v2.as_deref().map_or(0.0, |v| dot(r, v))])
        .collect())
}

/// Eval-mode representations of `docs` projected to two dimensions.
pub fn export_representations(
    model: &Hagan,
    docs: &[(&Document, Option<Sentiment>)],
    seed: u64,
) -> Result<ReprProjection> {
    let reprs = model.represent(docs.iter().map(|(d, _)| *d))?;
    let coords = pca_2d(&reprs, seed)?;
    Ok(ReprProjection {
        points: docs
            .iter()
            .zip(coords)
            .map(|((doc, label), [x, y])| ProjectedDocument {
                id: doc.id.clone(),
                x,
                y,
                domain: doc.domain,
                label: *label,
            })
            .collect(),
    })
}
