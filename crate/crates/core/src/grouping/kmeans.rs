//! k-means++ clustering and the silhouette score.

use super::GroupingError;
use crate::rng::SimRng;
use nalgebra::DMatrix;
use rand::Rng;

pub const MAX_LLOYD_ITERATIONS: usize = 300;
pub const CENTROID_SHIFT_TOLERANCE: f64 = 1e-9;

fn sq_dist(points: &DMatrix<f64>, r: usize, c: &[f64]) -> f64 {
    c.iter().enumerate().map(|(j, x)| (points[(r, j)] - x).powi(2)).sum()
}

fn row(points: &DMatrix<f64>, r: usize) -> Vec<f64> {
    (0..points.ncols()).map(|j| points[(r, j)]).collect()
}

fn nearest(points: &DMatrix<f64>, r: usize, centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centre) in centroids.iter().enumerate() {
        let d = sq_dist(points, r, centre);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn seed_centroids(points: &DMatrix<f64>, k: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
    let n = points.nrows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|r| sq_dist(points, r, &row(points, chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (r, d) in d2.iter().enumerate() {
                acc += d;
                if *d > 0.0 && acc >= target {
                    pick = Some(r);
                    break;
                }
            }
            pick.unwrap_or_else(|| d2.iter().rposition(|d| *d > 0.0).expect("positive total"))
        } else {
            // All remaining points coincide with a centre; take any unused row.
            let unused: Vec<usize> = (0..n).filter(|r| !chosen.contains(r)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        let centre = row(points, next);
        for (r, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points, r, &centre));
        }
    }
    chosen.into_iter().map(|r| row(points, r)).collect()
}

/// Relabels clusters in order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map: Vec<(usize, usize)> = Vec::new();
    labels
        .iter()
        .map(|l| match map.iter().find(|(old, _)| old == l) {
            Some((_, new)) => *new,
            None => {
                let new = map.len();
                map.push((*l, new));
                new
            }
        })
        .collect()
}

/// k-means++ seeding followed by Lloyd iterations; labels are canonical.
pub fn kmeans_pp(points: &DMatrix<f64>, k: usize, rng: &mut SimRng) -> Result<Vec<usize>, GroupingError> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(GroupingError::InvalidClusterCount { k, n });
    }
    let dim = points.ncols();
    let mut centroids = seed_centroids(points, k, rng);
    let mut labels: Vec<usize> = (0..n).map(|r| nearest(points, r, &centroids)).collect();
    for _ in 0..MAX_LLOYD_ITERATIONS {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for j in 0..dim {
                sums[l][j] += points[(r, j)];
            }
        }
        let mut shift = 0.0_f64;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let updated: Vec<f64> = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            let moved: f64 = updated.iter().zip(&centroids[c]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            shift = shift.max(moved);
            centroids[c] = updated;
        }
        labels = (0..n).map(|r| nearest(points, r, &centroids)).collect();
        if shift < CENTROID_SHIFT_TOLERANCE {
            break;
        }
    }
    Ok(canonical_labels(&labels))
}

/// Mean silhouette over all points; points in singleton clusters score 0.
pub fn silhouette(points: &DMatrix<f64>, labels: &[usize]) -> Result<f64, GroupingError> {
    let n = points.nrows();
    let clusters = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; clusters];
    for &l in labels {
        sizes[l] += 1;
    }
    let nonempty = sizes.iter().filter(|s| **s > 0).count();
    if nonempty < 2 {
        return Err(GroupingError::UndefinedSilhouette);
    }
    let dist = |a: usize, b: usize| (points.row(a) - points.row(b)).norm();
    let mut total = 0.0;
    for i in 0..n {
        if sizes[labels[i]] == 1 {
            continue;
        }
        let mut sums = vec![0.0; clusters];
        for j in 0..n {
            if j != i {
                sums[labels[j]] += dist(i, j);
            }
        }
        let a = sums[labels[i]] / (sizes[labels[i]] - 1) as f64;
        let b = (0..clusters)
            .filter(|&c| c != labels[i] && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;
    use rand::Rng;

    fn blobs(per: usize, sep: f64, spread: f64, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
        let mut rng = seeded_rng(seed, "test/blobs");
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for b in 0..2 {
            for _ in 0..per {
                data.push(b as f64 * sep + rng.random_range(-spread..spread));
                data.push(rng.random_range(-spread..spread));
                truth.push(b);
            }
        }
        (DMatrix::from_row_slice(2 * per, 2, &data), truth)
    }

    #[test]
    fn n_equals_k_gives_singletons() {
        let p = DMatrix::from_row_slice(3, 1, &[0.0, 5.0, 9.0]);
        let labels = kmeans_pp(&p, 3, &mut seeded_rng(1, "kmeans")).unwrap();
        assert_eq!(labels, vec![0, 1, 2]);
    }

    #[test]
    fn separated_blobs_are_recovered() {
        for seed in 0..10 {
            let (p, truth) = blobs(15, 100.0, 1.0, seed);
            let labels = kmeans_pp(&p, 2, &mut seeded_rng(seed, "kmeans")).unwrap();
            assert_eq!(labels, truth);
            assert!(silhouette(&p, &labels).unwrap() > 0.9);
        }
    }

    #[test]
    fn deterministic_given_stream() {
        let (p, _) = blobs(10, 3.0, 2.0, 4);
        let a = kmeans_pp(&p, 3, &mut seeded_rng(9, "kmeans")).unwrap();
        let b = kmeans_pp(&p, 3, &mut seeded_rng(9, "kmeans")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn duplicate_points_still_seed_k_centres() {
        let p = DMatrix::from_row_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        let labels = kmeans_pp(&p, 2, &mut seeded_rng(0, "kmeans")).unwrap();
        assert_eq!(labels.len(), 4);
    }

    #[test]
    fn single_cluster_silhouette_is_undefined() {
        let p = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        assert_eq!(silhouette(&p, &[0, 0, 0]), Err(GroupingError::UndefinedSilhouette));
    }

    #[test]
    fn singleton_cluster_scores_zero() {
        let p = DMatrix::from_row_slice(3, 1, &[0.0, 0.1, 10.0]);
        let s = silhouette(&p, &[0, 0, 1]).unwrap();
        let a0 = 0.1;
        let b0 = 10.0;
        let a1 = 0.1;
        let b1 = 9.9;
        let expected = ((b0 - a0) / b0 + (b1 - a1) / b1) / 3.0;
        assert!((s - expected).abs() < 1e-12);
    }

    #[test]
    fn random_labels_on_uniform_blob_score_near_zero() {
        let mut acc = 0.0;
        for trial in 0..100 {
            let mut rng = seeded_rng(trial, "test/uniform");
            let data: Vec<f64> = (0..100).map(|_| rng.random::<f64>()).collect();
            let p = DMatrix::from_row_slice(50, 2, &data);
            let labels: Vec<usize> = (0..50).map(|i| if i < 2 { i } else { rng.random_range(0..2) }).collect();
            let s = silhouette(&p, &labels).unwrap();
            assert!(s.abs() < 0.2, "trial {trial}: {s}");
            acc += s;
        }
        assert!((acc / 100.0).abs() < 0.2);
    }
}
