//! k-means with k-means++ seeding, Lloyd iterations and restarts.

use ndarray::{Array2, ArrayView1, Axis};
use rand::Rng;

use super::assignment::ClusterAssignment;
use super::discretize::repair_empty_clusters;
use crate::error::{invalid, Result};
use crate::rng::{self, streams};

pub const LLOYD_MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub assignment: ClusterAssignment,
    /// Within-cluster sum of squares of the returned solution.
    pub objective: f64,
    /// Objective of each restart, in order.
    pub restart_objectives: Vec<f64>,
    /// Objective after each Lloyd iteration of the winning restart.
    pub history: Vec<f64>,
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn plus_plus(points: &Array2<f64>, m: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centers = Array2::<f64>::zeros((m, points.ncols()));
    let first = rng.random_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    let mut best: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), centers.row(0))).collect();
    for c in 1..m {
        let total: f64 = best.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in best.iter().enumerate() {
                acc += w;
                if acc > target {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.row_mut(c).assign(&points.row(pick));
        for i in 0..n {
            best[i] = best[i].min(sq_dist(points.row(i), centers.row(c)));
        }
    }
    centers
}

fn assign(points: &Array2<f64>, centers: &Array2<f64>) -> Vec<usize> {
    points
        .axis_iter(Axis(0))
        .map(|p| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.axis_iter(Axis(0)).enumerate() {
                let d = sq_dist(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        })
        .collect()
}

fn centroids(points: &Array2<f64>, labels: &[usize], m: usize) -> Array2<f64> {
    let mut centers = Array2::<f64>::zeros((m, points.ncols()));
    let mut counts = vec![0usize; m];
    for (i, &l) in labels.iter().enumerate() {
        let mut row = centers.row_mut(l);
        row += &points.row(i);
        counts[l] += 1;
    }
    for (mut row, &c) in centers.axis_iter_mut(Axis(0)).zip(&counts) {
        if c > 0 {
            row /= c as f64;
        }
    }
    centers
}

/// Within-cluster sum of squared distances to cluster means.
pub fn wcss(points: &Array2<f64>, labels: &[usize], m: usize) -> f64 {
    let centers = centroids(points, labels, m);
    labels
        .iter()
        .enumerate()
        .map(|(i, &l)| sq_dist(points.row(i), centers.row(l)))
        .sum()
}

/// Best of `restarts` k-means runs on the rows of `points`.
pub fn kmeans(points: &Array2<f64>, m: usize, seed: u64, restarts: usize) -> Result<KMeansResult> {
    let n = points.nrows();
    if m == 0 || m > n {
        return Err(invalid(format!("{m} clusters requested for {n} points")));
    }
    let restarts = restarts.max(1);
    let mut best: Option<(Vec<usize>, f64, Vec<f64>)> = None;
    let mut restart_objectives = Vec::with_capacity(restarts);
    for r in 0..restarts {
        let mut rng = rng::substream(seed, streams::KMEANS, r as u64);
        let mut centers = plus_plus(points, m, &mut rng);
        let mut labels = assign(points, &centers);
        let mut history = Vec::new();
        for _ in 0..LLOYD_MAX_ITERATIONS {
            repair_empty_clusters(points.view(), &mut labels, m);
            centers = centroids(points, &labels, m);
            history.push(wcss(points, &labels, m));
            let next = assign(points, &centers);
            if next == labels {
                break;
            }
            labels = next;
        }
        repair_empty_clusters(points.view(), &mut labels, m);
        let objective = wcss(points, &labels, m);
        restart_objectives.push(objective);
        if best.as_ref().is_none_or(|(_, b, _)| objective < *b) {
            best = Some((labels, objective, history));
        }
    }
    let (labels, objective, history) = best.expect("at least one restart");
    Ok(KMeansResult {
        assignment: ClusterAssignment::from_labels(&labels, m)?,
        objective,
        restart_objectives,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separated_clouds() {
        let pts = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [10.0, 10.0], [10.1, 10.0], [10.0, 10.1]];
        let r = kmeans(&pts, 2, 3, 4).unwrap();
        assert_eq!(r.assignment.labels(), &[0, 0, 0, 1, 1, 1]);
        assert!(r.restart_objectives.iter().all(|&o| r.objective <= o));
    }

    #[test]
    fn one_cluster_per_point() {
        let pts = array![[0.0], [1.0], [5.0]];
        let r = kmeans(&pts, 3, 0, 2).unwrap();
        assert_eq!(r.objective, 0.0);
        assert_eq!(r.assignment.sizes(), &[1, 1, 1]);
        assert!(kmeans(&pts, 4, 0, 1).is_err());
    }
}
