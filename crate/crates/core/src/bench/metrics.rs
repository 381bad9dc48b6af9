//! Clustering quality: normalized loss and permutation-matched accuracy.

use itertools::Itertools;
use pathfinding::prelude::{kuhn_munkres, Matrix};

use crate::error::{Error, Result};

use super::lloyd::{assign, TieRule};

/// Largest `k` matched by trying every permutation.
pub const EXHAUSTIVE_MAX_K: usize = 8;

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `(1/n) * sum_i min_j |x_i - c_j|^2`.
pub fn normalized_loss(points: &[Vec<f64>], centers: &[Vec<f64>]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let total: f64 = points
        .iter()
        .map(|x| centers.iter().map(|c| dist2(x, c)).fold(f64::INFINITY, f64::min))
        .sum();
    total / points.len() as f64
}

/// `agreement[label][cluster]` counts over nearest-center assignments.
pub fn agreement_matrix(points: &[Vec<f64>], centers: &[Vec<f64>], labels: &[usize], k: usize) -> Vec<Vec<u64>> {
    let mut m = vec![vec![0u64; k]; k];
    for (x, l) in points.iter().zip(labels) {
        let c = assign(x, centers, TieRule::LowestIndex).expect("non-empty centers");
        m[*l][c] += 1;
    }
    m
}

/// Largest total agreement over one-to-one label-to-cluster matchings.
pub fn best_matching(agreement: &[Vec<u64>]) -> u64 {
    let k = agreement.len();
    if k <= EXHAUSTIVE_MAX_K {
        (0..k)
            .permutations(k)
            .map(|perm| perm.iter().enumerate().map(|(l, c)| agreement[l][*c]).sum())
            .max()
            .unwrap_or(0)
    } else {
        let weights = Matrix::from_rows(
            agreement
                .iter()
                .map(|row| row.iter().map(|v| *v as i64).collect::<Vec<_>>()),
        )
        .expect("square agreement matrix");
        kuhn_munkres(&weights).0 as u64
    }
}

/// Fraction of points whose nearest center matches their label under the
/// best relabelling.
pub fn cluster_accuracy(points: &[Vec<f64>], centers: &[Vec<f64>], labels: Option<&[usize]>) -> Result<f64> {
    let labels = labels.ok_or_else(|| Error::Data("accuracy needs ground-truth labels".into()))?;
    if labels.len() != points.len() {
        return Err(Error::LengthMismatch {
            left: points.len(),
            right: labels.len(),
        });
    }
    let k = centers.len();
    if let Some(bad) = labels.iter().find(|l| **l >= k) {
        return Err(Error::Data(format!("label {bad} outside an alphabet of {k}")));
    }
    if points.is_empty() {
        return Ok(1.0);
    }
    let m = agreement_matrix(points, centers, labels, k);
    Ok(best_matching(&m) as f64 / points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        let c = vec![vec![0.0, 0.0], vec![1.0, 1.0]];
        assert_eq!(normalized_loss(&c, &c), 0.0);
        assert_eq!(normalized_loss(&[vec![1.0, 2.0]], &[vec![0.0, 0.0]]), 5.0);
    }

    #[test]
    fn accuracy_is_permutation_invariant() {
        let centers = vec![vec![0.0], vec![10.0], vec![20.0]];
        let pts: Vec<Vec<f64>> = (0..30).map(|i| vec![(i % 3) as f64 * 10.0 + 0.1]).collect();
        let labels: Vec<usize> = (0..30).map(|i| (i % 3 + 1) % 3).collect();
        assert_eq!(cluster_accuracy(&pts, &centers, Some(&labels)).unwrap(), 1.0);
        let rev: Vec<Vec<f64>> = centers.iter().rev().cloned().collect();
        assert_eq!(cluster_accuracy(&pts, &rev, Some(&labels)).unwrap(), 1.0);
        assert!(cluster_accuracy(&pts, &centers, None).is_err());
    }

    #[test]
    fn solver_agrees_with_exhaustive() {
        let m: Vec<Vec<u64>> = (0..7)
            .map(|i| (0..7).map(|j| ((i * 31 + j * 17) % 11) as u64).collect())
            .collect();
        let weights = Matrix::from_rows(m.iter().map(|r| r.iter().map(|v| *v as i64).collect::<Vec<_>>())).unwrap();
        assert_eq!(best_matching(&m), kuhn_munkres(&weights).0 as u64);
    }
}
