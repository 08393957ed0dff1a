//! Relational k-means and silhouette-based model selection.
//!
//! Objects are only known through their pairwise distances `d`. The squared
//! distance of object `x` to the (virtual) centroid of cluster `C` is
//!
//! ```text
//! D(x, C) = 1/|C| * sum_{c in C} d(x,c)^2  -  1/(2|C|^2) * sum_{c,c' in C} d(c,c')^2
//! ```
//!
//! and the objective is `sum_x D(x, C(x)) = sum_C 1/(2|C|) * sum_{c,c' in C} d(c,c')^2`.
//! For non-Euclidean inputs `D` can be negative; values are used as-is.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{ClusterError, DistanceMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct KMeansParams {
    pub seed: u64,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams {
            seed: 0,
            restarts: 32,
            max_iter: 100,
        }
    }
}

/// Partition of the matrix objects. Labels are `1..=k`, numbered by first
/// appearance in object order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAssignment {
    pub labels: Vec<usize>,
    pub k: usize,
    pub mean_silhouette: f64,
    pub objective: f64,
    /// Objective after initialization and after every accepted update.
    pub objective_history: Vec<f64>,
    pub seed: u64,
    pub restarts: usize,
    /// Negative centroid distances met during the winning run.
    pub negative_distances: usize,
}

impl ClusterAssignment {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &l in &self.labels {
            sizes[l - 1] += 1;
        }
        sizes
    }

    /// Object indices sorted by cluster, then by original position.
    pub fn cluster_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.labels.len()).collect();
        order.sort_by_key(|&i| (self.labels[i], i));
        order
    }
}

struct Run {
    labels: Vec<usize>,
    objective: f64,
    history: Vec<f64>,
    negatives: usize,
}

struct Workspace<'a> {
    d2: &'a [f64],
    n: usize,
    k: usize,
}

impl Workspace<'_> {
    #[inline]
    fn d2(&self, i: usize, j: usize) -> f64 {
        self.d2[i * self.n + j]
    }

    fn sizes(&self, labels: &[usize]) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &l in labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// `S[x][c] = sum_{y in c} d2(x,y)` and `W[c] = sum_{y,z in c} d2(y,z)`.
    fn sums(&self, labels: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let (n, k) = (self.n, self.k);
        let mut s = vec![0.0; n * k];
        for x in 0..n {
            for y in 0..n {
                s[x * k + labels[y]] += self.d2(x, y);
            }
        }
        let mut w = vec![0.0; k];
        for x in 0..n {
            w[labels[x]] += s[x * k + labels[x]];
        }
        (s, w)
    }

    fn centroid_distance(s: &[f64], w: &[f64], sizes: &[usize], k: usize, x: usize, c: usize) -> f64 {
        let m = sizes[c] as f64;
        s[x * k + c] / m - w[c] / (2.0 * m * m)
    }

    fn objective(&self, labels: &[usize]) -> f64 {
        let sizes = self.sizes(labels);
        let (_, w) = self.sums(labels);
        (0..self.k)
            .filter(|&c| sizes[c] > 0)
            .map(|c| w[c] / (2.0 * sizes[c] as f64))
            .sum()
    }

    /// Moves the object farthest from its centroid into each empty cluster.
    fn repair(&self, labels: &mut [usize]) {
        loop {
            let sizes = self.sizes(labels);
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                return;
            };
            let (s, w) = self.sums(labels);
            let mut best: Option<(usize, f64)> = None;
            for x in 0..self.n {
                let c = labels[x];
                if sizes[c] < 2 {
                    continue;
                }
                let d = Self::centroid_distance(&s, &w, &sizes, self.k, x, c);
                if best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((x, d));
                }
            }
            let (x, _) = best.expect("k <= n leaves a cluster with two members");
            labels[x] = empty;
        }
    }

    fn reassign(&self, labels: &[usize], negatives: &mut usize) -> Vec<usize> {
        let sizes = self.sizes(labels);
        let (s, w) = self.sums(labels);
        (0..self.n)
            .map(|x| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for c in 0..self.k {
                    let d = Self::centroid_distance(&s, &w, &sizes, self.k, x, c);
                    if d < 0.0 {
                        *negatives += 1;
                    }
                    if d < best_d {
                        best_d = d;
                        best = c;
                    }
                }
                best
            })
            .collect()
    }

    /// Seeds by squared-distance sampling: the first uniformly, each next
    /// with probability proportional to its squared distance to the nearest
    /// chosen seed.
    fn seeds(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let n = self.n;
        let mut chosen = vec![false; n];
        let mut seeds = Vec::with_capacity(self.k);
        let first = rng.random_range(0..n);
        seeds.push(first);
        chosen[first] = true;
        let mut nearest: Vec<f64> = (0..n).map(|x| self.d2(x, first)).collect();
        while seeds.len() < self.k {
            let total: f64 = (0..n).filter(|&x| !chosen[x]).map(|x| nearest[x]).sum();
            let pick = if total > 0.0 {
                let mut r = rng.random::<f64>() * total;
                let mut pick = None;
                for x in (0..n).filter(|&x| !chosen[x] && nearest[x] > 0.0) {
                    pick = Some(x);
                    r -= nearest[x];
                    if r < 0.0 {
                        break;
                    }
                }
                pick.expect("positive total has a positive candidate")
            } else {
                let free: Vec<usize> = (0..n).filter(|&x| !chosen[x]).collect();
                free[rng.random_range(0..free.len())]
            };
            seeds.push(pick);
            chosen[pick] = true;
            for (x, d) in nearest.iter_mut().enumerate() {
                *d = d.min(self.d2(x, pick));
            }
        }
        seeds
    }

    fn run(&self, rng: &mut ChaCha8Rng, max_iter: usize) -> Run {
        let seeds = self.seeds(rng);
        let mut labels: Vec<usize> = (0..self.n)
            .map(|x| {
                let mut best = 0;
                for (c, &s) in seeds.iter().enumerate() {
                    if self.d2(x, s) < self.d2(x, seeds[best]) {
                        best = c;
                    }
                }
                best
            })
            .collect();
        for (c, &s) in seeds.iter().enumerate() {
            labels[s] = c;
        }
        self.repair(&mut labels);
        let mut objective = self.objective(&labels);
        let mut history = vec![objective];
        let mut negatives = 0;
        for _ in 0..max_iter {
            let mut next = self.reassign(&labels, &mut negatives);
            if next == labels {
                break;
            }
            self.repair(&mut next);
            let next_objective = self.objective(&next);
            let tol = 1e-12 * objective.abs().max(1e-300);
            if !(next_objective < objective - tol) {
                break;
            }
            labels = next;
            objective = next_objective;
            history.push(objective);
        }
        Run {
            labels,
            objective,
            history,
            negatives,
        }
    }
}

/// Renumbers labels to `1..=k` in order of first appearance.
fn canonical(labels: &[usize], k: usize) -> Vec<usize> {
    let mut map = vec![usize::MAX; k];
    let mut next = 1;
    labels
        .iter()
        .map(|&l| {
            if map[l] == usize::MAX {
                map[l] = next;
                next += 1;
            }
            map[l]
        })
        .collect()
}

/// Best of `params.restarts` seeded runs by objective. Restart `r` draws
/// from its own ChaCha stream, so results do not depend on thread count.
pub fn relational_kmeans(
    matrix: &DistanceMatrix,
    k: usize,
    params: &KMeansParams,
) -> Result<ClusterAssignment, ClusterError> {
    let n = matrix.len();
    if n < 2 {
        return Err(ClusterError::TooFewObjects(n));
    }
    if k < 2 || k > n {
        return Err(ClusterError::KOutOfRange { k, min: 2, max: n });
    }
    let d2: Vec<f64> = (0..n * n)
        .map(|idx| {
            let v = matrix.get(idx / n, idx % n);
            v * v
        })
        .collect();
    let ws = Workspace { d2: &d2, n, k };
    let restarts = params.restarts.max(1);
    let runs: Vec<Run> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(r as u64);
            ws.run(&mut rng, params.max_iter)
        })
        .collect();
    let mut best = 0;
    for (i, run) in runs.iter().enumerate() {
        if run.objective < runs[best].objective {
            best = i;
        }
    }
    let run = runs.into_iter().nth(best).expect("at least one restart");
    let labels = canonical(&run.labels, k);
    let mean_silhouette = mean_silhouette(matrix, &labels)?;
    Ok(ClusterAssignment {
        labels,
        k,
        mean_silhouette,
        objective: run.objective,
        objective_history: run.history,
        seed: params.seed,
        restarts,
        negative_distances: run.negatives,
    })
}

fn check_labels(matrix: &DistanceMatrix, labels: &[usize]) -> Result<usize, ClusterError> {
    if labels.len() != matrix.len() {
        return Err(ClusterError::LabelCount {
            labels: labels.len(),
            objects: matrix.len(),
        });
    }
    let k = labels.iter().copied().max().unwrap_or(0);
    if labels.contains(&0) {
        return Err(ClusterError::InvalidAssignment("labels start at 1"));
    }
    if k < 2 {
        return Err(ClusterError::InvalidAssignment("need at least two clusters"));
    }
    let mut seen = vec![false; k];
    for &l in labels {
        seen[l - 1] = true;
    }
    if seen.contains(&false) {
        return Err(ClusterError::InvalidAssignment("empty cluster"));
    }
    Ok(k)
}

/// Per-object silhouettes `(b - a) / max(a, b)`; members of singleton
/// clusters score 0.
pub fn silhouettes(matrix: &DistanceMatrix, labels: &[usize]) -> Result<Vec<f64>, ClusterError> {
    let k = check_labels(matrix, labels)?;
    let n = matrix.len();
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l - 1] += 1;
    }
    Ok((0..n)
        .map(|i| {
            let own = labels[i] - 1;
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; k];
            for j in 0..n {
                if j != i {
                    sums[labels[j] - 1] += matrix.get(i, j);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let m = a.max(b);
            if m > 0.0 {
                (b - a) / m
            } else {
                0.0
            }
        })
        .collect())
}

pub fn mean_silhouette(matrix: &DistanceMatrix, labels: &[usize]) -> Result<f64, ClusterError> {
    let s = silhouettes(matrix, labels)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KScore {
    pub k: usize,
    pub mean_silhouette: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    pub best: ClusterAssignment,
    pub scores: Vec<KScore>,
}

/// Runs k-means for every k in `[k_min, k_max]` and keeps the highest mean
/// silhouette; ties go to the smaller k.
pub fn select_k(
    matrix: &DistanceMatrix,
    k_min: usize,
    k_max: usize,
    params: &KMeansParams,
) -> Result<Selection, ClusterError> {
    let n = matrix.len();
    if k_min < 2 || k_min > k_max || k_max > n {
        return Err(ClusterError::KOutOfRange {
            k: if k_min < 2 { k_min } else { k_max },
            min: 2,
            max: n,
        });
    }
    let mut best: Option<ClusterAssignment> = None;
    let mut scores = Vec::new();
    for k in k_min..=k_max {
        let a = relational_kmeans(matrix, k, params)?;
        scores.push(KScore {
            k,
            mean_silhouette: a.mean_silhouette,
            objective: a.objective,
        });
        if best.as_ref().is_none_or(|b| a.mean_silhouette > b.mean_silhouette) {
            best = Some(a);
        }
    }
    Ok(Selection {
        best: best.expect("nonempty k range"),
        scores,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(n: usize, f: impl Fn(usize, usize) -> f64) -> DistanceMatrix {
        let labels = (0..n).map(|i| format!("S{i}")).collect();
        let data = (0..n * n)
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                if i == j {
                    0.0
                } else {
                    f(i.min(j), i.max(j))
                }
            })
            .collect();
        DistanceMatrix::new(labels, data).unwrap()
    }

    /// Exhaustive search over all 2-partitions for the lowest objective.
    fn best_two_partition(m: &DistanceMatrix) -> Vec<usize> {
        let n = m.len();
        let mut best = (f64::INFINITY, vec![]);
        for mask in 1u32..(1 << (n - 1)) {
            let labels: Vec<usize> = (0..n).map(|i| if mask >> i & 1 == 1 { 1 } else { 0 }).collect();
            let mut obj = 0.0;
            for c in 0..2 {
                let members: Vec<usize> = (0..n).filter(|&i| labels[i] == c).collect();
                let w: f64 = members
                    .iter()
                    .flat_map(|&a| members.iter().map(move |&b| (a, b)))
                    .map(|(a, b)| m.get(a, b).powi(2))
                    .sum();
                obj += w / (2.0 * members.len() as f64);
            }
            if obj < best.0 {
                best = (obj, labels);
            }
        }
        canonical(&best.1, 2)
    }

    #[test]
    fn recovers_two_pairs() {
        let m = matrix(4, |i, j| if i / 2 == j / 2 { 0.0 } else { 1.0 });
        let a = relational_kmeans(&m, 2, &KMeansParams::default()).unwrap();
        assert_eq!(a.labels, vec![1, 1, 2, 2]);
        assert_eq!(a.labels, best_two_partition(&m));
        assert_eq!(a.objective, 0.0);
        assert_eq!(a.mean_silhouette, 1.0);
    }

    #[test]
    fn k_equals_n_gives_singletons() {
        let m = matrix(5, |i, j| (j - i) as f64 * 0.1);
        let a = relational_kmeans(&m, 5, &KMeansParams::default()).unwrap();
        let mut l = a.labels.clone();
        l.sort();
        assert_eq!(l, vec![1, 2, 3, 4, 5]);
        assert_eq!(a.objective, 0.0);
    }

    #[test]
    fn k_out_of_range() {
        let m = matrix(3, |_, _| 1.0);
        assert!(relational_kmeans(&m, 1, &KMeansParams::default()).is_err());
        assert!(relational_kmeans(&m, 4, &KMeansParams::default()).is_err());
        assert!(select_k(&m, 2, 4, &KMeansParams::default()).is_err());
    }

    #[test]
    fn silhouette_of_separated_clusters_is_one() {
        let m = matrix(6, |i, j| if i / 3 == j / 3 { 0.0 } else { 0.7 });
        assert_eq!(mean_silhouette(&m, &[1, 1, 1, 2, 2, 2]).unwrap(), 1.0);
    }

    #[test]
    fn uniform_matrix_split_scores_at_most_zero() {
        // a = b = 1 for every object in a cluster of size >= 2.
        let m = matrix(6, |_, _| 1.0);
        let s = mean_silhouette(&m, &[1, 1, 1, 2, 2, 2]).unwrap();
        assert_eq!(s, 0.0);
        // Singletons contribute 0; others have a = 1, b = 1.
        let s = mean_silhouette(&m, &[1, 2, 2, 2, 2, 2]).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn invalid_assignments() {
        let m = matrix(3, |_, _| 1.0);
        assert!(mean_silhouette(&m, &[1, 1, 1]).is_err());
        assert!(mean_silhouette(&m, &[1, 3, 3]).is_err());
        assert!(mean_silhouette(&m, &[0, 1, 1]).is_err());
        assert!(mean_silhouette(&m, &[1, 2]).is_err());
    }

    #[test]
    fn two_blobs_select_two() {
        // Points on a line: blob A near 0, blob B near 10.
        let xs: [f64; 8] = [0.0, 0.3, 0.5, 0.9, 10.0, 10.2, 10.7, 11.0];
        let m = matrix(xs.len(), |i, j| (xs[i] - xs[j]).abs() / 11.0);
        let sel = select_k(&m, 2, 4, &KMeansParams::default()).unwrap();
        assert_eq!(sel.best.k, 2);
        assert_eq!(sel.best.labels, vec![1, 1, 1, 1, 2, 2, 2, 2]);
        for s in &sel.scores[1..] {
            assert!(s.mean_silhouette < sel.scores[0].mean_silhouette);
        }
    }

    #[test]
    fn objective_history_never_increases() {
        let xs: Vec<f64> = (0..30).map(|i| ((i * 37) % 17) as f64 + (i % 3) as f64 * 0.1).collect();
        let m = matrix(xs.len(), |i, j| (xs[i] - xs[j]).abs().sqrt() / 5.0);
        for k in 2..6 {
            let a = relational_kmeans(&m, k, &KMeansParams::default()).unwrap();
            assert!(a.objective_history.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(a.cluster_sizes().iter().sum::<usize>(), 30);
            assert!(a.cluster_sizes().iter().all(|&s| s > 0));
        }
    }
}
