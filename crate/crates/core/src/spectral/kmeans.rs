//! Deterministic Euclidean k-means.
//!
//! Every decision (seed choice, assignment ties, repair and refinement moves)
//! depends only on pairwise distances between points, never on input order or
//! on the coordinate frame. Rotating, reflecting or permuting the input rows
//! therefore yields the same set partition. Input order is consulted only to
//! break ties between points that no distance invariant separates.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub const MAX_ITERATIONS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOutcome {
    /// Cluster id per point, in `0..k_effective`.
    pub assignment: Vec<usize>,
    pub k_requested: usize,
    /// Fewer than requested when the input has fewer distinct points than `k`.
    pub k_effective: usize,
    pub iterations: usize,
    /// Within-cluster sum of squared distances.
    pub inertia: f64,
}

/// Cluster ids for the rows of `points`.
pub fn kmeans(points: &Matrix, k: usize) -> Result<Vec<usize>> {
    kmeans_detailed(points, k).map(|o| o.assignment)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Compare two reals treating differences within `tol` as ties.
fn cmp_tol(a: f64, b: f64, tol: f64) -> Ordering {
    if (a - b).abs() <= tol {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

struct Geometry<'a> {
    points: &'a Matrix,
    /// Squared distances between all pairs.
    dist: Vec<f64>,
    /// Squared distance to the global centroid.
    spread: Vec<f64>,
    /// Sorted squared distances to every point.
    profile: Vec<Vec<f64>>,
    tie: f64,
}

impl<'a> Geometry<'a> {
    fn new(points: &'a Matrix) -> Self {
        let n = points.rows();
        let dim = points.cols();
        let mut dist = vec![0.0; n * n];
        let mut scale: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let d = sq_dist(points.row(i), points.row(j));
                dist[i * n + j] = d;
                dist[j * n + i] = d;
                scale = scale.max(d);
            }
        }
        let mut centroid = vec![0.0; dim];
        for i in 0..n {
            for (c, v) in centroid.iter_mut().zip(points.row(i)) {
                *c += v / n as f64;
            }
        }
        let spread = (0..n).map(|i| sq_dist(points.row(i), &centroid)).collect();
        let profile = (0..n)
            .map(|i| {
                let mut p = dist[i * n..(i + 1) * n].to_vec();
                p.sort_by(f64::total_cmp);
                p
            })
            .collect();
        Self {
            points,
            dist,
            spread,
            profile,
            tie: 1e-9 * scale.max(1e-300),
        }
    }

    fn n(&self) -> usize {
        self.points.rows()
    }

    fn d(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.n() + j]
    }

    /// Frame- and order-free ranking of points; `Greater` means preferred.
    fn rank(&self, i: usize, j: usize) -> Ordering {
        cmp_tol(self.spread[i], self.spread[j], self.tie)
            .then_with(|| {
                for (a, b) in self.profile[i].iter().zip(&self.profile[j]) {
                    match cmp_tol(*a, *b, self.tie) {
                        Ordering::Equal => continue,
                        other => return other,
                    }
                }
                Ordering::Equal
            })
            // Indistinguishable by distances: fall back to the lower index.
            .then_with(|| j.cmp(&i))
    }

    fn distinct_count(&self) -> usize {
        let n = self.n();
        let mut rep: Vec<usize> = Vec::new();
        for i in 0..n {
            if !rep.iter().any(|&r| self.d(i, r) <= self.tie) {
                rep.push(i);
            }
        }
        rep.len()
    }

    /// Farthest-point seeding from the point farthest from the centroid.
    fn seeds(&self, k: usize) -> Vec<usize> {
        let n = self.n();
        let first = (0..n)
            .max_by(|&i, &j| self.rank(i, j))
            .expect("non-empty input");
        let mut seeds = vec![first];
        let mut nearest: Vec<f64> = (0..n).map(|i| self.d(i, first)).collect();
        while seeds.len() < k {
            let next = (0..n)
                .filter(|i| !seeds.contains(i))
                .max_by(|&i, &j| {
                    cmp_tol(nearest[i], nearest[j], self.tie).then_with(|| self.rank(i, j))
                })
                .expect("k <= n");
            seeds.push(next);
            for i in 0..n {
                nearest[i] = nearest[i].min(self.d(i, next));
            }
        }
        seeds
    }
}

struct State {
    assignment: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    sizes: Vec<usize>,
}

impl State {
    fn recompute(&mut self, points: &Matrix) {
        let k = self.centroids.len();
        let dim = points.cols();
        self.sizes = vec![0; k];
        let mut sums = vec![vec![0.0; dim]; k];
        for (i, &c) in self.assignment.iter().enumerate() {
            self.sizes[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if self.sizes[c] > 0 {
                let inv = 1.0 / self.sizes[c] as f64;
                self.centroids[c] = sums[c].iter().map(|s| s * inv).collect();
            }
        }
    }

    fn inertia(&self, points: &Matrix) -> f64 {
        self.assignment
            .iter()
            .enumerate()
            .map(|(i, &c)| sq_dist(points.row(i), &self.centroids[c]))
            .sum()
    }
}

/// Sum of squared distances from each point to its cluster mean.
pub fn partition_inertia(points: &Matrix, assignment: &[usize]) -> f64 {
    let k = assignment.iter().max().map_or(0, |m| m + 1);
    let mut state = State {
        assignment: assignment.to_vec(),
        centroids: vec![Vec::new(); k],
        sizes: Vec::new(),
    };
    state.recompute(points);
    state.inertia(points)
}

/// k-means with farthest-point seeding, Lloyd iterations and single-point
/// (Hartigan) improvement moves until neither changes the partition.
pub fn kmeans_detailed(points: &Matrix, k: usize) -> Result<KMeansOutcome> {
    let n = points.rows();
    if k > n {
        return Err(Error::contract(format!("k-means with k = {k} > n = {n}")));
    }
    if k == 0 {
        if n == 0 {
            return Ok(KMeansOutcome {
                assignment: Vec::new(),
                k_requested: 0,
                k_effective: 0,
                iterations: 0,
                inertia: 0.0,
            });
        }
        return Err(Error::contract("k-means with k = 0"));
    }

    let geo = Geometry::new(points);
    let k_effective = k.min(geo.distinct_count());
    if k_effective < k {
        log::debug!("k-means: only {k_effective} distinct points, reducing k from {k}");
    }
    let seeds = geo.seeds(k_effective);
    let mut state = State {
        assignment: vec![0; n],
        centroids: seeds.iter().map(|&s| points.row(s).to_vec()).collect(),
        sizes: vec![0; k_effective],
    };

    let mut iterations = 0;
    let mut first_pass = true;
    loop {
        // Lloyd phase.
        loop {
            let changed = assign(&geo, &mut state, first_pass);
            first_pass = false;
            state.recompute(points);
            repair_empty(&geo, &mut state);
            iterations += 1;
            if !changed || iterations >= MAX_ITERATIONS {
                break;
            }
        }
        if iterations >= MAX_ITERATIONS || !hartigan_move(&geo, &mut state) {
            break;
        }
        iterations += 1;
    }

    let inertia = state.inertia(points);
    Ok(KMeansOutcome {
        assignment: state.assignment,
        k_requested: k,
        k_effective,
        iterations,
        inertia,
    })
}

/// Nearest-centroid assignment; ties go to the lower cluster id.
fn assign(geo: &Geometry<'_>, state: &mut State, force: bool) -> bool {
    let mut changed = force;
    for i in 0..geo.n() {
        let row = geo.points.row(i);
        let mut best = 0;
        let mut best_d = sq_dist(row, &state.centroids[0]);
        for (c, centroid) in state.centroids.iter().enumerate().skip(1) {
            let d = sq_dist(row, centroid);
            if cmp_tol(d, best_d, geo.tie) == Ordering::Less {
                best = c;
                best_d = d;
            }
        }
        // Keep the current cluster when it is tied with the best.
        let current = state.assignment[i];
        if !force
            && current != best
            && cmp_tol(sq_dist(row, &state.centroids[current]), best_d, geo.tie) == Ordering::Equal
        {
            continue;
        }
        if state.assignment[i] != best {
            state.assignment[i] = best;
            changed = true;
        }
    }
    changed
}

/// Refills empty clusters with the farthest member of the largest cluster.
fn repair_empty(geo: &Geometry<'_>, state: &mut State) {
    while let Some(empty) = state.sizes.iter().position(|&s| s == 0) {
        let largest = (0..state.sizes.len())
            .max_by(|&a, &b| state.sizes[a].cmp(&state.sizes[b]).then(b.cmp(&a)))
            .expect("k >= 1");
        let centroid = state.centroids[largest].clone();
        let donor = (0..geo.n())
            .filter(|&i| state.assignment[i] == largest)
            .max_by(|&i, &j| {
                cmp_tol(
                    sq_dist(geo.points.row(i), &centroid),
                    sq_dist(geo.points.row(j), &centroid),
                    geo.tie,
                )
                .then_with(|| geo.rank(i, j))
            })
            .expect("largest cluster is non-empty");
        state.assignment[donor] = empty;
        state.recompute(geo.points);
    }
}

/// Applies the single best point move that lowers the inertia, if any.
fn hartigan_move(geo: &Geometry<'_>, state: &mut State) -> bool {
    let mut best: Option<(f64, usize, usize)> = None;
    for i in 0..geo.n() {
        let from = state.assignment[i];
        let n_from = state.sizes[from] as f64;
        if n_from <= 1.0 {
            continue;
        }
        let row = geo.points.row(i);
        let loss = n_from / (n_from - 1.0) * sq_dist(row, &state.centroids[from]);
        for (to, centroid) in state.centroids.iter().enumerate() {
            if to == from {
                continue;
            }
            let n_to = state.sizes[to] as f64;
            let gain = n_to / (n_to + 1.0) * sq_dist(row, centroid) - loss;
            if gain >= -geo.tie {
                continue;
            }
            let better = match best {
                None => true,
                Some((g, bi, bt)) => match cmp_tol(gain, g, geo.tie) {
                    Ordering::Less => true,
                    Ordering::Greater => false,
                    Ordering::Equal => geo.rank(i, bi).then(bt.cmp(&to)) == Ordering::Greater,
                },
            };
            if better {
                best = Some((gain, i, to));
            }
        }
    }
    match best {
        Some((_, i, to)) => {
            state.assignment[i] = to;
            state.recompute(geo.points);
            true
        }
        None => false,
    }
}
