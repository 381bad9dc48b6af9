//! Plaintext Lloyd iterations, the reference for the secure protocol.

use serde::{Deserialize, Serialize};

use crate::protocol::{stream_rng, streams, update_centroids, CentroidSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TieRule {
    /// Equidistant points join no cluster, as with the secure argmin.
    #[default]
    Unassigned,
    LowestIndex,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LloydResult {
    pub centroids: CentroidSet,
    /// Initial centroids followed by one set per round.
    pub trajectory: Vec<CentroidSet>,
    /// Assignments made in each round.
    pub assignments: Vec<Vec<Option<usize>>>,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center of `x` under `tie`.
pub fn assign(x: &[f64], centers: &[Vec<f64>], tie: TieRule) -> Option<usize> {
    let dists: Vec<f64> = centers.iter().map(|c| dist2(x, c)).collect();
    let best = dists.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hits = dists.iter().enumerate().filter(|(_, d)| **d == best).map(|(j, _)| j);
    let first = hits.next();
    match (tie, hits.next()) {
        (TieRule::Unassigned, Some(_)) => None,
        _ => first,
    }
}

/// Per-cluster coordinate sums (`[dim][cluster]`) and counts.
pub fn cluster_sums(points: &[Vec<f64>], assignment: &[Option<usize>], k: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let d = points.first().map_or(0, |p| p.len());
    let mut s = vec![vec![0.0; k]; d];
    let mut t = vec![0.0; k];
    for (p, a) in points.iter().zip(assignment) {
        if let Some(j) = a {
            t[*j] += 1.0;
            for (dim, v) in p.iter().enumerate() {
                s[dim][*j] += v;
            }
        }
    }
    (s, t)
}

/// `rounds` Lloyd iterations from `init`. Empty clusters are re-drawn with
/// the same generator stream the protocol uses for `seed`.
pub fn lloyd_plaintext(points: &[Vec<f64>], init: &CentroidSet, rounds: u32, tie: TieRule, seed: u64) -> LloydResult {
    let k = init.k();
    let mut rng = stream_rng(seed, streams::UPDATE);
    let mut current = init.clone();
    let mut trajectory = vec![current.clone()];
    let mut assignments = Vec::with_capacity(rounds as usize);
    for round in 1..=rounds {
        let a: Vec<Option<usize>> = points.iter().map(|x| assign(x, &current.centers, tie)).collect();
        let (s, t) = cluster_sums(points, &a, k);
        current = update_centroids(&s, &t, init.bound, round, &mut rng);
        trajectory.push(current.clone());
        assignments.push(a);
    }
    LloydResult {
        centroids: current,
        trajectory,
        assignments,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(centers: Vec<Vec<f64>>) -> CentroidSet {
        CentroidSet {
            centers,
            bound: 5.0,
            round: 0,
        }
    }

    #[test]
    fn fixed_point() {
        let pts = vec![vec![0.0], vec![2.0]];
        let r = lloyd_plaintext(&pts, &set(vec![vec![0.0], vec![2.0]]), 1, TieRule::Unassigned, 0);
        assert_eq!(r.centroids.centers, vec![vec![0.0], vec![2.0]]);
    }

    #[test]
    fn tie_rules() {
        let c = vec![vec![0.0], vec![2.0]];
        assert_eq!(assign(&[1.0], &c, TieRule::Unassigned), None);
        assert_eq!(assign(&[1.0], &c, TieRule::LowestIndex), Some(0));
        assert_eq!(assign(&[1.5], &c, TieRule::Unassigned), Some(1));
    }

    #[test]
    fn separable_blobs_reach_their_means() {
        let mut pts = Vec::new();
        for i in 0..50 {
            let e = (i as f64 - 24.5) * 0.01;
            pts.push(vec![-2.0 + e, 1.0]);
            pts.push(vec![3.0 - e, -1.0]);
        }
        let r = lloyd_plaintext(&pts, &set(vec![vec![-1.0, 0.0], vec![1.0, 0.0]]), 5, TieRule::LowestIndex, 0);
        assert!((r.centroids.centers[0][0] + 2.0).abs() < 1e-12);
        assert!((r.centroids.centers[1][0] - 3.0).abs() < 1e-12);
        assert!((r.centroids.centers[1][1] + 1.0).abs() < 1e-12);
    }
}
