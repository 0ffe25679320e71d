//! Lloyd's k-means with k-means++ seeding.

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iter: usize,
    /// Stop once the relative change in inertia drops below this.
    pub tol: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iter: 300,
            tol: 1e-6,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    pub iterations: usize,
}

impl KMeansFit {
    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, &c)| c == cluster)
            .map(|(i, _)| i)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = squared_distance(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centroids(points: &[Vec<f64>], k: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| squared_distance(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random_range(0.0..total);
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in dist.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let centroid = points[pick].clone();
        for (d, p) in dist.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &centroid));
        }
        centroids.push(centroid);
    }
    centroids
}

pub fn kmeans(points: &[Vec<f64>], config: &KMeansConfig) -> Result<KMeansFit> {
    let n = points.len();
    let k = config.k;
    if k == 0 || k > n {
        return Err(Error::Parameter(format!("k-means needs 1 <= k <= {n}, got {k}")));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Dimension("k-means points have differing dimensions".into()));
    }

    let mut rng = rng::seeded(config.seed);
    let mut centroids = seed_centroids(points, k, &mut rng);
    let mut assignments = vec![0; n];
    let mut inertia = f64::INFINITY;
    let mut iterations = 0;

    while iterations < config.max_iter {
        iterations += 1;
        let mut new_inertia = 0.0;
        let mut sq = vec![0.0; n];
        for (i, p) in points.iter().enumerate() {
            let (c, d) = nearest(p, &centroids);
            assignments[i] = c;
            sq[i] = d;
            new_inertia += d;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignments) {
            counts[c] += 1;
            for (s, x) in sums[c].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // re-seed an empty cluster with the worst-fitting point
                let far = (0..n).max_by(|&a, &b| sq[a].total_cmp(&sq[b]).then(b.cmp(&a))).unwrap();
                sq[far] = 0.0;
                centroids[c] = points[far].clone();
            } else {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }

        let converged = inertia.is_finite() && (inertia - new_inertia).abs() <= config.tol * inertia.max(f64::MIN_POSITIVE);
        inertia = new_inertia;
        if converged || new_inertia == 0.0 {
            break;
        }
    }

    // final assignment against the last centroids
    inertia = 0.0;
    for (i, p) in points.iter().enumerate() {
        let (c, d) = nearest(p, &centroids);
        assignments[i] = c;
        inertia += d;
    }
    Ok(KMeansFit {
        centroids,
        assignments,
        inertia,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separates_two_groups() {
        let mut points = Vec::new();
        for i in 0..20 {
            let t = i as f64 * 0.01;
            points.push(vec![t, -t]);
            points.push(vec![10.0 + t, 10.0 - t]);
        }
        let fit = kmeans(&points, &KMeansConfig::new(2, 1)).unwrap();
        let a = fit.assignments[0];
        for (i, &c) in fit.assignments.iter().enumerate() {
            assert_eq!(c == a, i % 2 == 0);
        }
        assert!(fit.inertia < 1.0);
    }

    #[test]
    fn deterministic_per_seed() {
        let points: Vec<Vec<f64>> = (0..50).map(|i| vec![(i as f64 * 1.3).sin(), (i as f64 * 0.7).cos()]).collect();
        let a = kmeans(&points, &KMeansConfig::new(5, 3)).unwrap();
        let b = kmeans(&points, &KMeansConfig::new(5, 3)).unwrap();
        assert_eq!(a, b);
        assert!((0..5).all(|c| a.members(c).count() > 0));
    }

    #[test]
    fn rejects_bad_k() {
        let points = vec![vec![0.0], vec![1.0]];
        assert!(kmeans(&points, &KMeansConfig::new(3, 0)).is_err());
        assert!(kmeans(&points, &KMeansConfig::new(0, 0)).is_err());
    }

    #[test]
    fn duplicate_points_fill_every_cluster() {
        let points = vec![vec![1.0]; 4];
        let fit = kmeans(&points, &KMeansConfig::new(3, 0)).unwrap();
        assert_eq!(fit.inertia, 0.0);
    }
}
