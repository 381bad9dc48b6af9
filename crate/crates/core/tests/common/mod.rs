#![allow(dead_code)]

use vkmeans::protocol::{CentroidSet, DataPartition};

/// Smallest scaled gap between any two centroid distances of any point,
/// over every round of `trajectory` that feeds an assignment step, and
/// whether some round had a cluster with exactly one member.
pub fn oracle_margin(points: &[Vec<f64>], trajectory: &[CentroidSet], scale: f64) -> (f64, bool) {
    let mut margin = f64::INFINITY;
    let mut singleton = false;
    for c in &trajectory[..trajectory.len() - 1] {
        let mut counts = vec![0usize; c.k()];
        for p in points {
            let mut d: Vec<f64> = c
                .centers
                .iter()
                .map(|x| x.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum())
                .collect();
            let best = (0..d.len()).min_by(|a, b| d[*a].total_cmp(&d[*b])).unwrap();
            counts[best] += 1;
            d.sort_by(f64::total_cmp);
            for w in d.windows(2) {
                margin = margin.min((w[1] - w[0]) * scale);
            }
        }
        singleton |= counts.contains(&1);
    }
    (margin, singleton)
}

pub fn max_deviation(a: &[CentroidSet], b: &[CentroidSet]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x.max_shift(y)).fold(0.0, f64::max)
}

/// Two parties: the first `d / 2` features, then the rest.
pub fn halves(points: &[Vec<f64>]) -> Vec<DataPartition> {
    let d = points[0].len();
    let h = (d / 2).max(1);
    DataPartition::split(points, &[(0..h).collect(), (h..d).collect()]).unwrap()
}
