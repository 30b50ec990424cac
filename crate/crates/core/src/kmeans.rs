//! Lloyd's k-means with k-means++ seeding, used to initialize the factors.

use ndarray::{Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};

/// Lloyd iteration cap.
pub const MAX_LLOYD_ITERATIONS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster of every column of the input.
    pub assignments: Vec<usize>,
    /// `d × c`, one centroid per column.
    pub centroids: Array2<f64>,
    pub iterations: usize,
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid, ties to the lowest index.
fn nearest(p: ArrayView1<f64>, centroids: &Array2<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.columns().into_iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn plus_plus_seed<R: Rng>(x: &Array2<f64>, c: usize, rng: &mut R) -> Array2<f64> {
    let n = x.ncols();
    let mut centroids = Array2::zeros((x.nrows(), c));
    let first = rng.random_range(0..n);
    centroids.column_mut(0).assign(&x.column(first));
    let mut dist: Vec<f64> = (0..n).map(|i| sq_dist(x.column(i), x.column(first))).collect();
    for k in 1..c {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                acc += d;
                if acc > target && d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.column_mut(k).assign(&x.column(pick));
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(x.column(i), x.column(pick)));
        }
    }
    centroids
}

/// Clusters the columns of `x` into `c` groups.
///
/// A cluster that loses all its members is re-seeded at the point farthest
/// from its currently assigned centroid.
pub fn kmeans<R: Rng>(x: &Array2<f64>, c: usize, rng: &mut R) -> Result<KMeansResult> {
    let (d, n) = x.dim();
    if c == 0 || c > n {
        return Err(Error::InvalidInput(format!("cluster count {c} must lie in [1, {n}]")));
    }
    let mut centroids = plus_plus_seed(x, c, rng);
    let mut assignments = vec![usize::MAX; n];
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERATIONS {
        iterations += 1;
        let mut dists = vec![0.0; n];
        let mut changed = false;
        for i in 0..n {
            let (k, dist) = nearest(x.column(i), &centroids);
            dists[i] = dist;
            if assignments[i] != k {
                assignments[i] = k;
                changed = true;
            }
        }
        let mut counts = vec![0usize; c];
        let mut sums = Array2::<f64>::zeros((d, c));
        for (i, &k) in assignments.iter().enumerate() {
            counts[k] += 1;
            let mut col = sums.column_mut(k);
            col += &x.column(i);
        }
        for k in 0..c {
            if counts[k] == 0 {
                // steal the worst-fitting point from a cluster that can spare it
                let far = (0..n)
                    .filter(|&i| counts[assignments[i]] > 1)
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
                if let Some(i) = far {
                    let old = assignments[i];
                    counts[old] -= 1;
                    let mut col = sums.column_mut(old);
                    col -= &x.column(i);
                    assignments[i] = k;
                    counts[k] = 1;
                    sums.column_mut(k).assign(&x.column(i));
                    dists[i] = 0.0;
                    changed = true;
                }
            }
        }
        for k in 0..c {
            if counts[k] > 0 {
                let mean = &sums.column(k) / counts[k] as f64;
                centroids.column_mut(k).assign(&mean);
            }
        }
        if !changed {
            break;
        }
    }
    Ok(KMeansResult {
        assignments,
        centroids,
        iterations,
    })
}
