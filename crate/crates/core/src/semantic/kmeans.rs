use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeatureSet;
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 10;
pub const MAX_LLOYD_ITERS: usize = 100;

/// Cluster centroids condensing a stroke's features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExemplarSet {
    pub centroids: Vec<Vec<f64>>,
}

impl ExemplarSet {
    pub fn new(centroids: Vec<Vec<f64>>) -> Result<Self> {
        let dim = centroids
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::InvalidInput("exemplar set needs at least one centroid".into()))?;
        if dim == 0 || centroids.iter().any(|c| c.len() != dim) {
            return Err(Error::ShapeMismatch("centroids differ in length".into()));
        }
        if centroids.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("centroids must be finite".into()));
        }
        Ok(Self { centroids })
    }

    /// Single exemplar at the mean of all features (the averaging baseline).
    pub fn mean_of(features: &FeatureSet) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::EmptySelection("no features to average".into()));
        }
        let mut mean = vec![0.0; features.dim()];
        for v in features.iter() {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= features.len() as f64);
        Ok(Self { centroids: vec![mean] })
    }

    /// Every feature becomes its own exemplar (matching without clustering).
    pub fn all_of(features: &FeatureSet) -> Result<Self> {
        Self::new(features.iter().map(<[f64]>::to_vec).collect())
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansReport {
    pub exemplars: ExemplarSet,
    pub assignments: Vec<usize>,
    pub iterations: usize,
    /// Sum of squared distances after seeding and after every Lloyd iteration.
    pub sse_history: Vec<f64>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = dist2(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_seeds(features: &FeatureSet, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![features.get(first).to_vec()];
    let mut d2: Vec<f64> = features.iter().map(|p| dist2(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                if r < d {
                    pick = Some(i);
                    break;
                }
                r -= d;
            }
            // rounding can run past the end; fall back to the last positive weight
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("total > 0"))
        } else {
            // all remaining points coincide with a centroid
            let free: Vec<usize> = (0..n).filter(|&i| !chosen[i]).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen[pick] = true;
        let c = features.get(pick).to_vec();
        for (d, p) in d2.iter_mut().zip(features.iter()) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd's algorithm from k-means++ seeds.
///
/// Iterates until the assignment stops changing or `MAX_LLOYD_ITERS` is hit.
/// A cluster that loses all members is re-seeded with the point farthest from
/// its current centroid.
pub fn kmeans(features: &FeatureSet, k: usize, seed: u64) -> Result<KMeansReport> {
    let n = features.len();
    if k == 0 {
        return Err(Error::InvalidInput("K must be at least 1".into()));
    }
    if n < k {
        return Err(Error::InsufficientData(format!("{n} features cannot form {k} clusters")));
    }
    let dim = features.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_seeds(features, k, &mut rng);

    let mut assignments = vec![usize::MAX; n];
    let mut dists = vec![0.0; n];
    let mut sse_history = Vec::new();
    let mut iterations = 0;
    loop {
        let mut changed = false;
        for (i, p) in features.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
            dists[i] = d;
        }
        if sse_history.is_empty() {
            sse_history.push(dists.iter().sum());
        }
        if !changed || iterations == MAX_LLOYD_ITERS {
            break;
        }
        iterations += 1;

        let mut counts = vec![0usize; k];
        for &a in &assignments {
            counts[a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            // farthest point whose removal leaves its own cluster non-empty
            let victim = (0..n)
                .filter(|&i| counts[assignments[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                .expect("n >= k guarantees a donor cluster");
            counts[assignments[victim]] -= 1;
            assignments[victim] = c;
            counts[c] = 1;
            dists[victim] = 0.0;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &a) in features.iter().zip(&assignments) {
            for (s, x) in sums[a].iter_mut().zip(p) {
                *s += x;
            }
        }
        for ((centroid, s), &cnt) in centroids.iter_mut().zip(sums).zip(&counts) {
            *centroid = s.into_iter().map(|v| v / cnt as f64).collect();
        }

        let sse: f64 = features.iter().zip(&assignments).map(|(p, &a)| dist2(p, &centroids[a])).sum();
        let prev = *sse_history.last().expect("seeded above");
        debug_assert!(sse <= prev * (1.0 + 1e-12) + 1e-12, "SSE rose from {prev} to {sse}");
        sse_history.push(sse);
    }
    Ok(KMeansReport { exemplars: ExemplarSet { centroids }, assignments, iterations, sse_history })
}
