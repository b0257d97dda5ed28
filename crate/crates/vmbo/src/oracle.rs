//! Independent reference solvers used by tests and acceptance runs.
//!
//! Nothing here shares code with the fast solvers: the exhaustive search
//! enumerates assignments directly, the transportation solver reduces
//! the problem to min-cost flow, and the dense heat kernel goes through
//! a full eigendecomposition. They are deliberately simple and slow;
//! their only job is to anchor correctness.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::{CsrMatrix, DenseMatrix};
use crate::osstat::{Clustering, VolumeConstraints};

const EXHAUSTIVE_MAX_N: usize = 12;
const EXHAUSTIVE_MAX_P: usize = 4;

fn bounds_of(constraints: &VolumeConstraints) -> (Vec<usize>, Vec<usize>) {
    match constraints {
        VolumeConstraints::Exact(v) => (v.clone(), v.clone()),
        VolumeConstraints::Interval { lower, upper } => (lower.clone(), upper.clone()),
    }
}

fn validate_scores(u: &DenseMatrix) -> Result<()> {
    if u.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("scores contain non-finite values".into()));
    }
    Ok(())
}

/// Exact maximum of `sum_x u_{assign(x)}(x)` over all admissible
/// assignments, by depth-first enumeration with volume pruning.
///
/// Returns the objective and the first optimal assignment in
/// lexicographic order. Limited to N <= 12 and P <= 4.
pub fn exhaustive_optimum(
    u: &DenseMatrix,
    constraints: &VolumeConstraints,
) -> Result<(f64, Clustering)> {
    let n = u.n_rows();
    let p = constraints.p();
    if u.n_cols() != p {
        return Err(Error::Shape(format!(
            "scores have {} columns, constraints describe {p} clusters",
            u.n_cols()
        )));
    }
    if n > EXHAUSTIVE_MAX_N || p > EXHAUSTIVE_MAX_P {
        return Err(Error::Parameter(format!(
            "exhaustive search is limited to N <= {EXHAUSTIVE_MAX_N}, P <= {EXHAUSTIVE_MAX_P} (got N={n}, P={p})"
        )));
    }
    validate_scores(u)?;
    constraints.validate(n)?;
    let (lower, upper) = bounds_of(constraints);

    // suffix[x] bounds the best score attainable by points x..N.
    let mut suffix = vec![0.0f64; n + 1];
    for x in (0..n).rev() {
        let best = u.row(x).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        suffix[x] = suffix[x + 1] + best;
    }

    struct Search<'a> {
        u: &'a DenseMatrix,
        lower: &'a [usize],
        upper: &'a [usize],
        suffix: &'a [f64],
        n: usize,
        p: usize,
        counts: Vec<usize>,
        current: Vec<u32>,
        best_obj: f64,
        best_assign: Vec<u32>,
    }

    impl Search<'_> {
        fn dfs(&mut self, x: usize, acc: f64) {
            if acc + self.suffix[x] <= self.best_obj {
                return;
            }
            if x == self.n {
                // Upper bounds held throughout; lower-bound feasibility
                // was preserved by the deficit prune below.
                self.best_obj = acc;
                self.best_assign = self.current.clone();
                return;
            }
            let remaining = self.n - x - 1;
            for i in 0..self.p {
                if self.counts[i] >= self.upper[i] {
                    continue;
                }
                self.counts[i] += 1;
                let deficit: usize = self
                    .lower
                    .iter()
                    .zip(&self.counts)
                    .map(|(&l, &c)| l.saturating_sub(c))
                    .sum();
                if deficit <= remaining {
                    self.current.push(i as u32);
                    self.dfs(x + 1, acc + self.u.get(x, i));
                    self.current.pop();
                }
                self.counts[i] -= 1;
            }
        }
    }

    let mut search = Search {
        u,
        lower: &lower,
        upper: &upper,
        suffix: &suffix,
        n,
        p,
        counts: vec![0; p],
        current: Vec::with_capacity(n),
        best_obj: f64::NEG_INFINITY,
        best_assign: Vec::new(),
    };
    search.dfs(0, 0.0);
    debug_assert_eq!(search.best_assign.len(), n, "pruning lost all solutions");
    let clustering = Clustering::new(search.best_assign, p)?;
    Ok((search.best_obj, clustering))
}

/// Optimal transportation objective via min-cost flow.
///
/// Each point ships one unit into some cluster at cost `-u_i(x)`;
/// cluster `i` must absorb between `L_i` and `U_i` units (exactly `V_i`
/// for exact constraints). Lower bounds are removed by the standard
/// circulation transformation, after which successive shortest paths
/// with potentials solve the remaining min-cost max-flow problem.
pub fn mincostflow_optimum(u: &DenseMatrix, constraints: &VolumeConstraints) -> Result<f64> {
    transport(u, constraints).map(|(objective, _)| objective)
}

/// Matches predicted classes to truth classes: entry `(t, p)` of the
/// confusion matrix counts points of truth class `t` labeled `p`, and
/// the returned vector maps each predicted class to the truth class
/// that maximizes the total matched count.
pub fn best_class_matching(confusion: &DenseMatrix) -> Result<Vec<usize>> {
    let p = confusion.n_rows();
    if confusion.n_cols() != p {
        return Err(Error::Shape("confusion matrix must be square".into()));
    }
    // Treat predicted classes as points choosing a truth class each.
    let mut scores = DenseMatrix::zeros(p, p);
    for t in 0..p {
        for q in 0..p {
            scores.set(q, t, confusion.get(t, q));
        }
    }
    let constraints = VolumeConstraints::Exact(vec![1; p]);
    let (_, assignment) = transport(&scores, &constraints)?;
    Ok(assignment)
}

/// Shared transportation core: returns the optimal objective and the
/// cluster chosen for every point.
fn transport(u: &DenseMatrix, constraints: &VolumeConstraints) -> Result<(f64, Vec<usize>)> {
    let n = u.n_rows();
    let p = constraints.p();
    if u.n_cols() != p {
        return Err(Error::Shape(format!(
            "scores have {} columns, constraints describe {p} clusters",
            u.n_cols()
        )));
    }
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    validate_scores(u)?;
    constraints.validate(n)?;
    let (lower, upper) = bounds_of(constraints);

    // Shifting all arc costs by the largest score makes them nonnegative
    // without changing the optimizer: every admissible flow routes
    // exactly one costly arc per point.
    let shift = u.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    // Nodes: source, points, clusters, collector, then the super pair
    // added by the lower-bound transformation.
    let source = 0usize;
    let point = |x: usize| 1 + x;
    let cluster = |i: usize| 1 + n + i;
    let collector = 1 + n + p;
    let super_source = collector + 1;
    let super_sink = collector + 2;
    let mut net = FlowNet::new(super_sink + 1);

    let mut excess = vec![0i64; super_sink + 1];
    // source -> point, lower 1, capacity 1: transformed away entirely.
    for x in 0..n {
        excess[point(x)] += 1;
        excess[source] -= 1;
    }
    let mut choice_edges = vec![vec![0u32; p]; n];
    for (x, edges) in choice_edges.iter_mut().enumerate() {
        for (i, slot) in edges.iter_mut().enumerate() {
            *slot = net.add(point(x), cluster(i), 1, shift - u.get(x, i));
        }
    }
    for i in 0..p {
        // cluster -> collector, lower L_i, capacity U_i.
        net.add(cluster(i), collector, (upper[i] - lower[i]) as i64, 0.0);
        excess[collector] += lower[i] as i64;
        excess[cluster(i)] -= lower[i] as i64;
    }
    net.add(collector, source, n as i64, 0.0);

    let mut supply = 0i64;
    for (v, &e) in excess.iter().enumerate() {
        if e > 0 {
            net.add(super_source, v, e, 0.0);
            supply += e;
        } else if e < 0 {
            net.add(v, super_sink, -e, 0.0);
        }
    }

    let (flow, cost) = net.min_cost_max_flow(super_source, super_sink);
    if flow != supply {
        return Err(Error::Infeasible(
            "volume constraints admit no assignment".into(),
        ));
    }

    let mut assignment = vec![usize::MAX; n];
    for (x, edges) in choice_edges.iter().enumerate() {
        for (i, &e) in edges.iter().enumerate() {
            if net.flow_on(e) == 1 {
                assignment[x] = i;
            }
        }
    }
    debug_assert!(assignment.iter().all(|&a| a != usize::MAX));
    Ok((n as f64 * shift - cost, assignment))
}

/// Min-cost max-flow with nonnegative costs: successive shortest paths
/// found by Dijkstra over reduced costs.
struct FlowNet {
    to: Vec<u32>,
    cap: Vec<i64>,
    cost: Vec<f64>,
    adj: Vec<Vec<u32>>,
}

#[derive(PartialEq)]
struct Dist(f64);

impl Eq for Dist {}

impl Ord for Dist {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl PartialOrd for Dist {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl FlowNet {
    fn new(n_nodes: usize) -> Self {
        FlowNet {
            to: Vec::new(),
            cap: Vec::new(),
            cost: Vec::new(),
            adj: vec![Vec::new(); n_nodes],
        }
    }

    /// Adds a forward edge (returning its id) and its residual twin.
    fn add(&mut self, a: usize, b: usize, cap: i64, cost: f64) -> u32 {
        debug_assert!(cost >= -1e-12, "costs must be nonnegative, got {cost}");
        let id = self.to.len() as u32;
        self.to.push(b as u32);
        self.cap.push(cap);
        self.cost.push(cost.max(0.0));
        self.adj[a].push(id);
        self.to.push(a as u32);
        self.cap.push(0);
        self.cost.push(-cost.max(0.0));
        self.adj[b].push(id + 1);
        id
    }

    /// Units pushed through forward edge `e`.
    fn flow_on(&self, e: u32) -> i64 {
        self.cap[e as usize ^ 1]
    }

    fn min_cost_max_flow(&mut self, s: usize, t: usize) -> (i64, f64) {
        let n = self.adj.len();
        let mut potential = vec![0.0f64; n];
        let mut total_flow = 0i64;
        let mut dist = vec![f64::INFINITY; n];
        let mut parent_edge = vec![u32::MAX; n];
        loop {
            dist.fill(f64::INFINITY);
            parent_edge.fill(u32::MAX);
            dist[s] = 0.0;
            let mut heap: BinaryHeap<Reverse<(Dist, u32)>> = BinaryHeap::new();
            heap.push(Reverse((Dist(0.0), s as u32)));
            let mut settled = vec![false; n];
            while let Some(Reverse((Dist(d), v))) = heap.pop() {
                let v = v as usize;
                if settled[v] {
                    continue;
                }
                settled[v] = true;
                for &e in &self.adj[v] {
                    let e = e as usize;
                    if self.cap[e] <= 0 {
                        continue;
                    }
                    let w = self.to[e] as usize;
                    // Residual arcs can show tiny negative reduced costs
                    // from float rounding; clamp them.
                    let rc = (self.cost[e] + potential[v] - potential[w]).max(0.0);
                    let nd = d + rc;
                    if nd < dist[w] {
                        dist[w] = nd;
                        parent_edge[w] = e as u32;
                        heap.push(Reverse((Dist(nd), w as u32)));
                    }
                }
            }
            if !dist[t].is_finite() {
                break;
            }
            for v in 0..n {
                if dist[v].is_finite() {
                    potential[v] += dist[v].min(dist[t]);
                } else {
                    potential[v] += dist[t];
                }
            }
            let mut bottleneck = i64::MAX;
            let mut v = t;
            while v != s {
                let e = parent_edge[v] as usize;
                bottleneck = bottleneck.min(self.cap[e]);
                v = self.to[e ^ 1] as usize;
            }
            let mut v = t;
            while v != s {
                let e = parent_edge[v] as usize;
                self.cap[e] -= bottleneck;
                self.cap[e ^ 1] += bottleneck;
                v = self.to[e ^ 1] as usize;
            }
            total_flow += bottleneck;
        }
        let mut total_cost = 0.0;
        for e in (0..self.to.len()).step_by(2) {
            total_cost += self.cap[e ^ 1] as f64 * self.cost[e];
        }
        (total_flow, total_cost)
    }
}

/// Dense random-walk heat kernel `exp(-h * L_rw)` on at most 200 nodes,
/// computed from the full eigendecomposition of the symmetrized
/// Laplacian. Rows sum to 1.
pub fn dense_heat(w: &CsrMatrix, h: f64) -> Result<DenseMatrix> {
    let n = w.n_rows();
    if w.n_cols() != n {
        return Err(Error::Shape("weight matrix must be square".into()));
    }
    if n == 0 || n > 200 {
        return Err(Error::Parameter(format!(
            "dense heat kernel is limited to 1..=200 nodes, got {n}"
        )));
    }
    if !(h >= 0.0) {
        return Err(Error::Parameter(format!("diffusion time {h} is negative")));
    }
    let degrees = w.row_sums();
    if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
        return Err(Error::Parameter(format!(
            "node {i} has nonpositive degree {}",
            degrees[i]
        )));
    }

    // B = D^{-1/2} W D^{-1/2}, symmetrized against float dust.
    let mut b = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let (cols, vals) = w.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let j = j as usize;
            b[(i, j)] += v / (degrees[i] * degrees[j]).sqrt();
        }
    }
    let b = (&b + b.transpose()) * 0.5;
    let l_sym = DMatrix::identity(n, n) - b;
    let eigen = l_sym.symmetric_eigen();

    // exp(-h * L_sym) = Q exp(-h * lambda) Q^T, then conjugate by
    // D^{1/2} to recover the random-walk convention.
    let mut scaled = eigen.eigenvectors.clone();
    for k in 0..n {
        let factor = (-h * eigen.eigenvalues[k]).exp();
        scaled.column_mut(k).scale_mut(factor);
    }
    let e_sym = scaled * eigen.eigenvectors.transpose();
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, e_sym[(i, j)] * (degrees[j] / degrees[i]).sqrt());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn matrix(rows: &[&[f64]]) -> DenseMatrix {
        let n = rows.len();
        let p = rows[0].len();
        let mut data = Vec::with_capacity(n * p);
        for r in rows {
            data.extend_from_slice(r);
        }
        DenseMatrix::from_vec(n, p, data)
    }

    fn random_scores(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DenseMatrix {
        let data: Vec<f64> = (0..n * p).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(n, p, data)
    }

    fn random_exact(rng: &mut ChaCha8Rng, n: usize, p: usize) -> VolumeConstraints {
        let mut v = vec![0usize; p];
        for _ in 0..n {
            v[rng.gen_range(0..p)] += 1;
        }
        VolumeConstraints::Exact(v)
    }

    fn random_interval(rng: &mut ChaCha8Rng, n: usize, p: usize) -> VolumeConstraints {
        loop {
            let lower: Vec<usize> = (0..p).map(|_| rng.gen_range(0..=n / p.max(1))).collect();
            let upper: Vec<usize> = lower.iter().map(|&l| rng.gen_range(l..=n)).collect();
            let c = VolumeConstraints::Interval { lower, upper };
            if c.validate(n).is_ok() {
                return c;
            }
        }
    }

    #[test]
    fn exhaustive_two_point_identity() {
        let u = matrix(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let (obj, c) = exhaustive_optimum(&u, &VolumeConstraints::Exact(vec![1, 1])).unwrap();
        assert_eq!(obj, 2.0);
        assert_eq!(c.assign(), &[0, 1]);
    }

    #[test]
    fn exhaustive_matches_hand_count() {
        // Four points, two per cluster; the six admissible assignments
        // score 3.0, 2.6, 1.6, 2.4, 1.4, 1.0, so the optimum keeps the
        // first two points in cluster 0.
        let u = matrix(&[&[0.9, 0.1], &[0.8, 0.2], &[0.6, 0.4], &[0.1, 0.9]]);
        let (obj, c) = exhaustive_optimum(&u, &VolumeConstraints::Exact(vec![2, 2])).unwrap();
        assert!((obj - 3.0).abs() < 1e-12);
        assert_eq!(c.assign(), &[0, 0, 1, 1]);
    }

    #[test]
    fn exhaustive_interval_collapses_to_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.gen_range(2..8);
            let p = rng.gen_range(2..4);
            let u = random_scores(&mut rng, n, p);
            let exact = random_exact(&mut rng, n, p);
            let v = match &exact {
                VolumeConstraints::Exact(v) => v.clone(),
                _ => unreachable!(),
            };
            let coll = VolumeConstraints::Interval {
                lower: v.clone(),
                upper: v,
            };
            let (a, _) = exhaustive_optimum(&u, &exact).unwrap();
            let (b, _) = exhaustive_optimum(&u, &coll).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn exhaustive_rejects_large_instances() {
        let u = DenseMatrix::zeros(13, 2);
        let v = VolumeConstraints::Exact(vec![6, 7]);
        assert!(exhaustive_optimum(&u, &v).is_err());
        let u = DenseMatrix::zeros(5, 5);
        let v = VolumeConstraints::Exact(vec![1; 5]);
        assert!(exhaustive_optimum(&u, &v).is_err());
    }

    #[test]
    fn flow_matches_exhaustive_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..200 {
            let n = rng.gen_range(2..=8);
            let p = rng.gen_range(2..=4);
            let u = random_scores(&mut rng, n, p);
            let constraints = if trial % 2 == 0 {
                random_exact(&mut rng, n, p)
            } else {
                random_interval(&mut rng, n, p)
            };
            let (expect, _) = exhaustive_optimum(&u, &constraints).unwrap();
            let got = mincostflow_optimum(&u, &constraints).unwrap();
            assert!(
                (expect - got).abs() < 1e-9,
                "trial {trial}: exhaustive {expect} vs flow {got}"
            );
        }
    }

    #[test]
    fn flow_on_constant_scores_is_assignment_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 30;
        let p = 3;
        let u = DenseMatrix::from_vec(n, p, vec![0.4; n * p]);
        for _ in 0..10 {
            let constraints = random_exact(&mut rng, n, p);
            let got = mincostflow_optimum(&u, &constraints).unwrap();
            assert!((got - 0.4 * n as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn flow_matches_sorting_in_two_cluster_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let n = rng.gen_range(2..40);
            let v1 = rng.gen_range(0..=n);
            let u = random_scores(&mut rng, n, 2);
            // Keep the V_1 points with the largest u_1 - u_2 margin.
            let mut margins: Vec<f64> = (0..n).map(|x| u.get(x, 0) - u.get(x, 1)).collect();
            margins.sort_by(|a, b| b.total_cmp(a));
            let base: f64 = (0..n).map(|x| u.get(x, 1)).sum();
            let expect = base + margins[..v1].iter().sum::<f64>();
            let constraints = VolumeConstraints::Exact(vec![v1, n - v1]);
            let got = mincostflow_optimum(&u, &constraints).unwrap();
            assert!((expect - got).abs() < 1e-9);
        }
    }

    #[test]
    fn matching_recovers_permutation() {
        // Confusion matrix of a relabeled perfect prediction.
        let mut confusion = DenseMatrix::zeros(3, 3);
        confusion.set(0, 2, 10.0);
        confusion.set(1, 0, 7.0);
        confusion.set(2, 1, 4.0);
        let map = best_class_matching(&confusion).unwrap();
        assert_eq!(map, vec![1, 2, 0]);
    }

    fn path_graph(n: usize) -> CsrMatrix {
        let mut triplets = Vec::new();
        for i in 0..n - 1 {
            triplets.push((i as u32, i as u32 + 1, 1.0));
            triplets.push((i as u32 + 1, i as u32, 1.0));
        }
        CsrMatrix::from_triplets(n, n, triplets).unwrap()
    }

    #[test]
    fn dense_heat_time_zero_is_identity() {
        let w = path_graph(5);
        let a = dense_heat(&w, 0.0).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((a.get(i, j) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dense_heat_rows_sum_to_one_and_settle() {
        let w = path_graph(6);
        let degrees = w.row_sums();
        let total: f64 = degrees.iter().sum();
        for &h in &[0.05, 0.8, 3.0] {
            let a = dense_heat(&w, h).unwrap();
            for i in 0..6 {
                let s: f64 = a.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-10, "row {i} sums to {s} at h={h}");
            }
        }
        // Long times converge to the degree-proportional stationary row.
        let a = dense_heat(&w, 400.0).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                assert!((a.get(i, j) - degrees[j] / total).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn dense_heat_rejects_bad_input() {
        let w = path_graph(3);
        assert!(dense_heat(&w, -1.0).is_err());
        let big = CsrMatrix::identity(201);
        assert!(dense_heat(&big, 1.0).is_err());
        let isolated = CsrMatrix::from_triplets(2, 2, vec![(0, 0, 1.0)]).unwrap();
        assert!(dense_heat(&isolated, 1.0).is_err());
    }
}
