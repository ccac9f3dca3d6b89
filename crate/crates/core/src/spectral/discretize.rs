//! Discretization of a spectral embedding into a partition.
//!
//! The rotation scheme alternates between (a) assigning each row of `Y R`
//! to its largest coordinate and (b) choosing the rotation `R` that best
//! aligns `Y` with that one-hot assignment, via the SVD of `X^T Y`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::assignment::ClusterAssignment;
use super::svd::jacobi_svd;
use crate::error::{invalid, Result};

pub const ROTATION_MAX_ITERATIONS: usize = 100;
pub const ROTATION_TOLERANCE: f64 = 1e-10;

/// Final rotation and the objective trace after each SVD step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RotationState {
    pub rotation: Vec<Vec<f64>>,
    pub objective: f64,
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Farthest-first choice of k rows: start at the row farthest from the mean
/// row, then repeatedly take the row least aligned with those already
/// chosen. `seed` only breaks exact ties for the starting row.
fn initial_rotation(y: ArrayView2<'_, f64>, seed: u64) -> Array2<f64> {
    let (d, k) = y.dim();
    let mean = y.mean_axis(Axis(0)).expect("nonempty");
    let dist: Vec<f64> = y
        .axis_iter(Axis(0))
        .map(|r| (&r - &mean).mapv(|x| x * x).sum())
        .collect();
    let best = dist.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ties: Vec<usize> = (0..d).filter(|&i| dist[i] == best).collect();
    let start = ties[(seed % ties.len() as u64) as usize];

    let mut r = Array2::<f64>::zeros((k, k));
    r.column_mut(0).assign(&y.row(start));
    let mut c = Array1::<f64>::zeros(d);
    for j in 1..k {
        c += &y.dot(&r.column(j - 1)).mapv(f64::abs);
        let mut next = 0;
        for i in 1..d {
            if c[i] < c[next] {
                next = i;
            }
        }
        r.column_mut(j).assign(&y.row(next));
    }
    r
}

/// Moves the member farthest from its centroid out of the largest cluster
/// into each empty cluster.
pub(crate) fn repair_empty_clusters(points: ArrayView2<'_, f64>, labels: &mut [usize], m: usize) {
    loop {
        let mut sizes = vec![0usize; m];
        labels.iter().for_each(|&l| sizes[l] += 1);
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..m).fold(0, |b, c| if sizes[c] > sizes[b] { c } else { b });
        if sizes[largest] < 2 {
            return;
        }
        let members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == largest).collect();
        let center = points.select(Axis(0), &members).mean_axis(Axis(0)).expect("nonempty");
        let mut far = members[0];
        let mut far_d = f64::NEG_INFINITY;
        for &i in &members {
            let dd = (&points.row(i) - &center).mapv(|x| x * x).sum();
            if dd > far_d {
                far_d = dd;
                far = i;
            }
        }
        labels[far] = empty;
    }
}

/// Alternating rotation/assignment discretization of a row-normalized
/// embedding into `k` clusters (k = number of columns).
pub fn discretize_yu_shi(y: &Array2<f64>, seed: u64) -> Result<(ClusterAssignment, RotationState)> {
    let (d, k) = y.dim();
    if k == 0 || d == 0 {
        return Err(invalid("empty embedding"));
    }
    if k > d {
        return Err(invalid(format!("{k} clusters requested for {d} points")));
    }
    if k == 1 {
        return Ok((
            ClusterAssignment::from_labels(&vec![0; d], 1)?,
            RotationState {
                rotation: vec![vec![1.0]],
                objective: d as f64,
                history: vec![],
                iterations: 0,
                converged: true,
            },
        ));
    }

    let mut r = initial_rotation(y.view(), seed);
    let mut labels = argmax_rows(&y.dot(&r));
    let mut history = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < ROTATION_MAX_ITERATIONS {
        iterations += 1;
        // X^T Y: row c is the sum of Y rows labelled c.
        let mut xty = Array2::<f64>::zeros((k, k));
        for (i, &l) in labels.iter().enumerate() {
            let mut row = xty.row_mut(l);
            row += &y.row(i);
        }
        let svd = jacobi_svd(&xty)?;
        let objective: f64 = svd.sigma.iter().sum();
        r = svd.v.dot(&svd.u.t());
        let next = argmax_rows(&y.dot(&r));
        let stalled = history
            .last()
            .is_some_and(|&prev: &f64| objective - prev < ROTATION_TOLERANCE);
        history.push(objective);
        let fixed_point = next == labels;
        labels = next;
        if fixed_point || stalled {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("rotation discretization stopped after {iterations} iterations without converging");
    }
    repair_empty_clusters(y.view(), &mut labels, k);
    let assignment = ClusterAssignment::from_labels(&labels, k)?;
    Ok((
        assignment,
        RotationState {
            rotation: r.axis_iter(Axis(0)).map(|row| row.to_vec()).collect(),
            objective: *history.last().unwrap_or(&0.0),
            history,
            iterations,
            converged,
        },
    ))
}
