//! Affinity propagation (Frey & Dueck, 2007): responsibility / availability
//! message passing with damped updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::ClusterError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffinityParams {
    pub damping: f64,
    pub max_iter: usize,
    /// Stop once the exemplar set has been unchanged for this many iterations.
    pub stable_iter: usize,
}

impl Default for AffinityParams {
    fn default() -> Self {
        Self {
            damping: 0.9,
            max_iter: 500,
            stable_iter: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Exemplar point indices, ascending.
    pub exemplars: Vec<usize>,
    /// For every point, the index of its exemplar point.
    pub labels: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

impl Clustering {
    /// Sum of member-to-exemplar similarities plus one preference per exemplar.
    pub fn net_similarity(&self, s: &[Vec<f64>], preference: f64) -> f64 {
        let members: f64 = self
            .labels
            .iter()
            .enumerate()
            .filter(|(i, e)| i != *e)
            .map(|(i, &e)| s[i][e])
            .sum();
        members + preference * self.exemplars.len() as f64
    }
}

/// Index of the largest value, lowest index on ties.
fn argmax(values: impl Iterator<Item = f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

/// Assign every non-exemplar point to its most similar exemplar.
fn assign(s: &[Vec<f64>], exemplars: &[usize]) -> Vec<usize> {
    (0..s.len())
        .map(|i| {
            if exemplars.contains(&i) {
                i
            } else {
                let (k, _) = argmax(exemplars.iter().map(|&e| s[i][e])).expect("non-empty exemplar set");
                exemplars[k]
            }
        })
        .collect()
}

/// Cluster `k` points given their pairwise similarities.
///
/// The diagonal of `similarity` is ignored; every point's self-similarity is
/// `preference`. Points are assigned to the exemplar they are most similar to.
pub fn affinity_propagation(
    similarity: &[Vec<f64>],
    preference: f64,
    params: &AffinityParams,
) -> Result<Clustering, ClusterError> {
    let k = similarity.len();
    if k == 0 {
        return Err(ClusterError::Empty);
    }
    if let Some((row, r)) = similarity.iter().enumerate().find(|(_, r)| r.len() != k) {
        return Err(ClusterError::NotSquare {
            rows: k,
            row,
            len: r.len(),
        });
    }
    if !(0.5..1.0).contains(&params.damping) {
        return Err(ClusterError::Damping(params.damping));
    }
    if !preference.is_finite() || similarity.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ClusterError::NonFinite);
    }
    if k == 1 {
        return Ok(Clustering {
            exemplars: vec![0],
            labels: vec![0],
            iterations: 0,
            converged: true,
        });
    }

    // Exactly tied points (duplicate fingerprints, mirror-symmetric pairs)
    // otherwise receive identical messages and become exemplars together.
    // A relative jitter far below any meaningful difference breaks the tie.
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let mut s: Vec<Vec<f64>> = similarity.to_vec();
    for (i, row) in s.iter_mut().enumerate() {
        row[i] = preference;
        for v in row.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += (f64::EPSILON * v.abs() + f64::MIN_POSITIVE * 100.0) * z;
        }
    }
    let lam = params.damping;
    let mut r = vec![vec![0.0; k]; k];
    let mut a = vec![vec![0.0; k]; k];
    let mut current: Vec<usize> = Vec::new();
    let mut stable = 0;
    let mut iterations = 0;
    let mut converged = false;

    for _ in 0..params.max_iter {
        iterations += 1;
        for i in 0..k {
            let sums = (0..k).map(|j| a[i][j] + s[i][j]);
            let (first, max1) = argmax(sums).expect("k > 1");
            let max2 = (0..k)
                .filter(|&j| j != first)
                .map(|j| a[i][j] + s[i][j])
                .fold(f64::NEG_INFINITY, f64::max);
            for j in 0..k {
                let target = s[i][j] - if j == first { max2 } else { max1 };
                r[i][j] = lam * r[i][j] + (1.0 - lam) * target;
            }
        }
        for j in 0..k {
            let positive: f64 = (0..k).filter(|&i| i != j).map(|i| r[i][j].max(0.0)).sum();
            for i in 0..k {
                let target = if i == j {
                    positive
                } else {
                    (r[j][j] + positive - r[i][j].max(0.0)).min(0.0)
                };
                a[i][j] = lam * a[i][j] + (1.0 - lam) * target;
            }
        }
        let exemplars: Vec<usize> = (0..k).filter(|&j| r[j][j] + a[j][j] > 0.0).collect();
        if exemplars == current {
            stable += 1;
        } else {
            stable = 0;
            current = exemplars;
        }
        if stable >= params.stable_iter && !current.is_empty() {
            converged = true;
            break;
        }
    }

    if current.is_empty() {
        // Degenerate messages (e.g. all points identical): one cluster around
        // the point with the largest total similarity.
        let (best, _) = argmax((0..k).map(|j| (0..k).map(|i| s[i][j]).sum::<f64>())).expect("k > 1");
        current = vec![best];
    }

    // Refine: within each cluster pick the member that maximises the summed
    // similarity of the cluster, then reassign all points once.
    let labels = assign(similarity, &current);
    let mut refined: Vec<usize> = current
        .iter()
        .map(|&e| {
            let members: Vec<usize> = (0..k).filter(|&i| labels[i] == e).collect();
            let (pos, _) = argmax(members.iter().map(|&c| {
                members
                    .iter()
                    .filter(|&&i| i != c)
                    .map(|&i| similarity[i][c])
                    .sum::<f64>()
            }))
            .expect("exemplar is its own member");
            members[pos]
        })
        .collect();
    refined.sort_unstable();
    refined.dedup();
    let labels = assign(similarity, &refined);

    Ok(Clustering {
        exemplars: refined,
        labels,
        iterations,
        converged,
    })
}
