//! K-means clustering with k-means++ seeding and the purity metric.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Outcome of one clustering run.
#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    /// Cluster index in `0..k` per input row.
    pub assignments: Vec<usize>,
    /// k centroids, each of the input dimension.
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances from each row to its centroid.
    pub inertia: f64,
}

const MAX_LLOYD_ITERATIONS: usize = 300;

/// Clusters `rows` into `k` groups, keeping the best of `restarts` runs by
/// inertia. Each restart seeds with k-means++ and iterates Lloyd updates to
/// an assignment fixed point or the iteration cap; clusters that lose all
/// members are re-seeded from the point farthest from its own centroid.
///
/// All restarts draw from a single ChaCha stream seeded with `seed`, and
/// every center selection consumes exactly one draw, so results are a
/// deterministic function of `(rows, k, restarts, seed)`.
pub fn kmeans(rows: &[Vec<f64>], k: usize, restarts: u32, seed: u64) -> Result<KmeansResult> {
    if k == 0 {
        return Err(Error::contract("k must be at least 1"));
    }
    if restarts == 0 {
        return Err(Error::contract("restarts must be at least 1"));
    }
    if rows.len() < k {
        return Err(Error::contract(format!(
            "cannot form {k} clusters from {} points",
            rows.len()
        )));
    }
    let dim = rows[0].len();
    if dim == 0 {
        return Err(Error::contract("points must have at least one coordinate"));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != dim {
            return Err(Error::contract(format!(
                "point {i} has {} coordinates, expected {dim}",
                row.len()
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KmeansResult> = None;
    for _ in 0..restarts {
        let run = lloyd(rows, seed_centers(rows, k, &mut rng));
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("restarts >= 1 always produces a candidate"))
}

/// k-means++ seeding. The first center is a uniform weighted pick and each
/// subsequent one is weighted by squared distance to the nearest chosen
/// center. Picks go through the same cumulative-weight walk in both cases,
/// so duplicating every input point leaves the chosen center values
/// unchanged for the same draw sequence.
fn seed_centers(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut weights = vec![1.0f64; rows.len()];
    for _ in 0..k {
        let pick = weighted_pick(&weights, rng);
        centers.push(rows[pick].clone());
        let newest = centers.last().expect("just pushed");
        for (w, row) in weights.iter_mut().zip(rows) {
            let d = squared_distance(row, newest);
            if centers.len() == 1 || d < *w {
                *w = d;
            }
        }
    }
    centers
}

/// Index drawn with probability proportional to its weight, via one uniform
/// draw walked along the cumulative sum. A zero total falls through to the
/// last index.
fn weighted_pick(weights: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let target = rng.random::<f64>() * total;
    let mut cumulative = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        cumulative += w;
        if target < cumulative {
            return i;
        }
    }
    weights.len() - 1
}

fn lloyd(rows: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> KmeansResult {
    let k = centroids.len();
    let dim = rows[0].len();
    let mut assignments = vec![usize::MAX; rows.len()];

    for _ in 0..MAX_LLOYD_ITERATIONS {
        let next: Vec<usize> = rows.iter().map(|row| nearest(row, &centroids)).collect();
        if next == assignments {
            break;
        }
        assignments = next;

        let mut sums = vec![vec![0.0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (row, &a) in rows.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(row) {
                *s += v;
            }
        }
        for ((centroid, sum), &count) in centroids.iter_mut().zip(&sums).zip(&counts) {
            if count > 0 {
                *centroid = sum.iter().map(|s| s / count as f64).collect();
            }
        }

        // Re-seed each empty cluster from the point currently farthest from
        // its own centroid, one point per empty cluster.
        let empties: Vec<usize> =
            (0..k).filter(|&c| counts[c] == 0).collect();
        if !empties.is_empty() {
            let mut by_distance: Vec<usize> = (0..rows.len()).collect();
            by_distance.sort_by(|&a, &b| {
                let da = squared_distance(&rows[a], &centroids[assignments[a]]);
                let db = squared_distance(&rows[b], &centroids[assignments[b]]);
                db.partial_cmp(&da).expect("distances are finite").then(a.cmp(&b))
            });
            for (cluster, &point) in empties.iter().zip(&by_distance) {
                centroids[*cluster] = rows[point].clone();
            }
        }
    }

    let inertia = rows
        .iter()
        .zip(&assignments)
        .map(|(row, &a)| squared_distance(row, &centroids[a]))
        .sum();
    KmeansResult { assignments, centroids, inertia }
}

/// Closest centroid by squared distance, lowest index on ties.
fn nearest(row: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = squared_distance(row, &centroids[0]);
    for (i, c) in centroids.iter().enumerate().skip(1) {
        let d = squared_distance(row, c);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// Mean over clusters of the count of their most common true label,
/// normalized by the number of points: `(1/N) Σ_c max_l |c ∩ l|`.
pub fn purity(assignments: &[usize], labels: &[u16]) -> Result<f64> {
    if assignments.len() != labels.len() {
        return Err(Error::contract(format!(
            "{} assignments for {} labels",
            assignments.len(),
            labels.len()
        )));
    }
    if assignments.is_empty() {
        return Err(Error::contract("purity of an empty assignment is undefined"));
    }
    let clusters = assignments.iter().max().expect("nonempty") + 1;
    let classes = usize::from(*labels.iter().max().expect("nonempty")) + 1;
    let mut counts = vec![vec![0usize; classes]; clusters];
    for (&a, &l) in assignments.iter().zip(labels) {
        counts[a][usize::from(l)] += 1;
    }
    let majority_total: usize = counts
        .iter()
        .map(|per_label| per_label.iter().max().copied().unwrap_or(0))
        .sum();
    Ok(majority_total as f64 / assignments.len() as f64)
}
