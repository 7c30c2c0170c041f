use crate::embedding::cosine;

use super::{RepoError, Result};

/// Result of a K-Medoids run.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Medoid point indices, ascending.
    pub medoids: Vec<usize>,
    /// For each point, the position in `medoids` of its cluster.
    pub assignment: Vec<usize>,
    /// Sum of each point's distance to its medoid.
    pub cost: f64,
}

/// Improvements smaller than this are treated as float noise, which keeps
/// the swap loop from cycling between equal-cost configurations.
const SWAP_TOLERANCE: f64 = 1e-12;

/// `1 − cosine`, clamped at zero, with a zero diagonal.
pub fn cosine_distance_matrix(points: &[&[f64]]) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let x = (1.0 - cosine(points[i], points[j])).max(0.0);
            d[i][j] = x;
            d[j][i] = x;
        }
    }
    d
}

/// PAM over `1 − cosine` distances: greedy BUILD, then best-improvement
/// swaps until none lowers the total cost.
///
/// Both phases are deterministic (ties go to the smaller index), so the
/// result depends only on the points and `k`.
pub fn k_medoids(points: &[&[f64]], k: usize) -> Result<Clustering> {
    let n = points.len();
    if k == 0 {
        return Err(RepoError::Invalid("k must be ≥ 1".into()));
    }
    if k > n {
        return Err(RepoError::KTooLarge { k, n });
    }
    let d = cosine_distance_matrix(points);
    Ok(pam(&d, k))
}

/// PAM on a precomputed symmetric distance matrix.
pub fn pam(d: &[Vec<f64>], k: usize) -> Clustering {
    let n = d.len();
    let mut medoids = build(d, k);
    let mut is_medoid = vec![false; n];
    for &m in &medoids {
        is_medoid[m] = true;
    }

    loop {
        let (nearest, near_d, second_d) = nearest_two(d, &medoids);
        let mut best: Option<(f64, usize, usize)> = None;
        let mut delta = vec![0.0; k];
        for h in 0..n {
            if is_medoid[h] {
                continue;
            }
            delta.fill(0.0);
            let mut shared = 0.0;
            for o in 0..n {
                let doh = d[o][h];
                let (slot, dj, ej) = (nearest[o], near_d[o], second_d[o]);
                // removing o's own medoid sends o to h or its runner-up
                delta[slot] += doh.min(ej) - dj;
                if doh < dj {
                    // any other removal: o moves to h
                    shared += doh - dj;
                    delta[slot] -= doh - dj;
                }
            }
            for (slot, &dl) in delta.iter().enumerate() {
                let total = dl + shared;
                if best.is_none_or(|(b, _, _)| total < b) {
                    best = Some((total, slot, h));
                }
            }
        }
        match best {
            Some((gain, slot, h)) if gain < -SWAP_TOLERANCE => {
                is_medoid[medoids[slot]] = false;
                is_medoid[h] = true;
                medoids[slot] = h;
            }
            _ => break,
        }
    }

    medoids.sort_unstable();
    let mut assignment = vec![0; n];
    let mut cost = 0.0;
    for o in 0..n {
        let mut best = 0;
        for (slot, &m) in medoids.iter().enumerate() {
            if d[o][m] < d[o][medoids[best]] {
                best = slot;
            }
        }
        assignment[o] = best;
        cost += d[o][medoids[best]];
    }
    Clustering {
        medoids,
        assignment,
        cost,
    }
}

fn build(d: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = d.len();
    let first = (0..n)
        .map(|i| (d[i].iter().sum::<f64>(), i))
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("nonempty")
        .1;
    let mut medoids = vec![first];
    let mut chosen = vec![false; n];
    chosen[first] = true;
    let mut near: Vec<f64> = (0..n).map(|o| d[o][first]).collect();
    while medoids.len() < k {
        let mut best: Option<(f64, usize)> = None;
        for c in (0..n).filter(|&c| !chosen[c]) {
            let gain: f64 = (0..n).map(|o| (near[o] - d[o][c]).max(0.0)).sum();
            if best.is_none_or(|(g, _)| gain > g) {
                best = Some((gain, c));
            }
        }
        let (_, c) = best.expect("k ≤ n leaves a candidate");
        chosen[c] = true;
        medoids.push(c);
        for o in 0..n {
            near[o] = near[o].min(d[o][c]);
        }
    }
    medoids
}

/// Per point: slot of the nearest medoid, its distance, and the distance to
/// the second-nearest medoid (infinite when k = 1).
fn nearest_two(d: &[Vec<f64>], medoids: &[usize]) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = d.len();
    let mut nearest = vec![0; n];
    let mut near_d = vec![f64::INFINITY; n];
    let mut second_d = vec![f64::INFINITY; n];
    for o in 0..n {
        for (slot, &m) in medoids.iter().enumerate() {
            let x = d[o][m];
            if x < near_d[o] {
                second_d[o] = near_d[o];
                near_d[o] = x;
                nearest[o] = slot;
            } else if x < second_d[o] {
                second_d[o] = x;
            }
        }
    }
    (nearest, near_d, second_d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn total_cost(d: &[Vec<f64>], medoids: &[usize]) -> f64 {
        (0..d.len())
            .map(|o| medoids.iter().map(|&m| d[o][m]).fold(f64::INFINITY, f64::min))
            .sum()
    }

    #[test]
    fn identical_points_pick_index_zero() {
        let p = [0.6, 0.8];
        let pts: Vec<&[f64]> = vec![&p; 5];
        let c = k_medoids(&pts, 1).unwrap();
        assert_eq!(c.medoids, vec![0]);
        assert!(c.cost.abs() < 1e-12);
    }

    #[test]
    fn two_clusters_match_exhaustive_pairs() {
        let mut raw = Vec::new();
        for i in 0..5 {
            let t = 0.05 * i as f64;
            raw.push(vec![t.cos(), t.sin(), 0.0]);
            raw.push(vec![0.0, t.sin(), t.cos()]);
        }
        let pts: Vec<&[f64]> = raw.iter().map(|v| v.as_slice()).collect();
        let c = k_medoids(&pts, 2).unwrap();
        let d = cosine_distance_matrix(&pts);
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..10 {
            for b in a + 1..10 {
                let cost = total_cost(&d, &[a, b]);
                if cost < best.0 {
                    best = (cost, a, b);
                }
            }
        }
        assert!((c.cost - best.0).abs() < 1e-12);
        assert_eq!(c.medoids, vec![best.1, best.2]);
        // one medoid per cluster (even indices form the first cluster)
        assert_ne!(c.medoids[0] % 2, c.medoids[1] % 2);
    }

    #[test]
    fn k_equals_n_is_identity() {
        let raw = [vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]];
        let pts: Vec<&[f64]> = raw.iter().map(|v| v.as_slice()).collect();
        let c = k_medoids(&pts, 3).unwrap();
        assert_eq!(c.medoids, vec![0, 1, 2]);
        assert_eq!(c.assignment, vec![0, 1, 2]);
        assert_eq!(c.cost, 0.0);
        assert!(matches!(k_medoids(&pts, 4), Err(RepoError::KTooLarge { k: 4, n: 3 })));
        assert!(k_medoids(&pts, 0).is_err());
    }
}
