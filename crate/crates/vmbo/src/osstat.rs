//! Volume-constrained thresholding via vectorial order statistics.
//!
//! Given per-point scores `u(x)` in `R^P`, the m-induced clustering puts
//! each point into `argmax_i (u_i(x) - m_i)`. The vector `m` acts as an
//! equilibrium price: raising `m_i` shrinks cluster `i`. The solvers in
//! this module translate `m` until the induced cluster volumes meet the
//! requested constraints exactly, which makes the induced clustering an
//! optimal solution of the corresponding volume-constrained assignment
//! problem.
//!
//! Two constraint kinds are supported: exact volumes (cluster `i` must
//! hold exactly `V_i` points) and interval volumes (`L_i <= vol_i <=
//! U_i`). Both solvers move `m` along piecewise-linear paths; events
//! happen when a point lands on a hyperplane `H_ij(m) = {u : (u - m) ·
//! (e_i - e_j) = 0}`, at which moment it can change cluster without
//! breaking the induced-clustering property.

use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::heap::IndexedMinHeap;
use crate::matrix::DenseMatrix;

/// A hard cluster assignment with cached volumes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Clustering {
    assign: Vec<u32>,
    p: usize,
    volumes: Vec<usize>,
}

impl Clustering {
    /// Builds a clustering from raw assignments, validating the range.
    pub fn new(assign: Vec<u32>, p: usize) -> Result<Self> {
        if p == 0 {
            return Err(Error::Parameter("cluster count must be positive".into()));
        }
        if let Some(&bad) = assign.iter().find(|&&a| a as usize >= p) {
            return Err(Error::Parameter(format!(
                "assignment {bad} out of range for {p} clusters"
            )));
        }
        Ok(Self::from_parts(assign, p))
    }

    pub(crate) fn from_parts(assign: Vec<u32>, p: usize) -> Self {
        let mut volumes = vec![0usize; p];
        for &a in &assign {
            volumes[a as usize] += 1;
        }
        Clustering { assign, p, volumes }
    }

    #[inline]
    pub fn assign(&self) -> &[u32] {
        &self.assign
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.p
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.assign.len()
    }

    #[inline]
    pub fn volumes(&self) -> &[usize] {
        &self.volumes
    }

    /// One-hot indicator matrix, N rows by P columns.
    pub fn indicator(&self) -> DenseMatrix {
        let mut chi = DenseMatrix::zeros(self.n(), self.p);
        for (x, &a) in self.assign.iter().enumerate() {
            chi.set(x, a as usize, 1.0);
        }
        chi
    }
}

/// Volume constraints on the induced clustering.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum VolumeConstraints {
    /// Cluster `i` must contain exactly `V_i` points.
    Exact(Vec<usize>),
    /// Cluster `i` must contain between `lower_i` and `upper_i` points.
    Interval {
        lower: Vec<usize>,
        upper: Vec<usize>,
    },
}

impl VolumeConstraints {
    pub fn p(&self) -> usize {
        match self {
            VolumeConstraints::Exact(v) => v.len(),
            VolumeConstraints::Interval { lower, .. } => lower.len(),
        }
    }

    /// Checks internal consistency and compatibility with `n` points.
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            VolumeConstraints::Exact(v) => {
                let total: usize = v.iter().sum();
                if total != n {
                    return Err(Error::Infeasible(format!(
                        "exact volumes sum to {total}, expected {n}"
                    )));
                }
            }
            VolumeConstraints::Interval { lower, upper } => {
                if lower.len() != upper.len() {
                    return Err(Error::Shape(
                        "interval bounds have mismatched lengths".into(),
                    ));
                }
                for (i, (&l, &u)) in lower.iter().zip(upper).enumerate() {
                    if l > u {
                        return Err(Error::Infeasible(format!(
                            "cluster {i} has lower bound {l} above upper bound {u}"
                        )));
                    }
                }
                let lo: usize = lower.iter().sum();
                let hi: usize = upper.iter().sum();
                if lo > n || hi < n {
                    return Err(Error::Infeasible(format!(
                        "interval bounds admit volumes in [{lo}, {hi}], expected {n}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Whether the given volumes satisfy the constraints.
    pub fn admits(&self, volumes: &[usize]) -> bool {
        match self {
            VolumeConstraints::Exact(v) => volumes == &v[..],
            VolumeConstraints::Interval { lower, upper } => volumes
                .iter()
                .zip(lower)
                .zip(upper)
                .all(|((&vol, &l), &u)| l <= vol && vol <= u),
        }
    }
}

/// Which constraint kind an order statistic certifies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderStatisticKind {
    Equality,
    Interval,
}

/// A price vector together with the clustering it induces.
#[derive(Clone, Debug)]
pub struct OrderStatistic {
    pub m: Vec<f64>,
    pub induced: Clustering,
    pub kind: OrderStatisticKind,
}

/// Instrumentation counters for one solver call.
#[derive(Clone, Debug)]
pub struct SolverStats {
    /// Number of swap-paths executed.
    pub outer_iterations: usize,
    /// Heap inserts and deletes, including the initial bulk build.
    pub heap_ops: usize,
    /// Volume-constraint error of the clustering induced by the initial
    /// price vector (for the interval solver: error against the seeded
    /// exact volumes).
    pub initial_error: usize,
    pub wall_time: Duration,
}

/// Optional solver behavior switches.
#[derive(Clone, Debug, Default)]
pub struct SolverOptions {
    /// Validate all queue memberships and separations after every
    /// swap-path; expensive, intended for tests.
    pub paranoid: bool,
    /// Record a [`SwapRecord`] per swap-path.
    pub trace: bool,
}

/// One executed swap-path, for diagnostics and tests.
#[derive(Clone, Debug)]
pub struct SwapRecord {
    /// Swap-path counter, starting at 0.
    pub iteration: usize,
    /// Clusters in the growth tree, in join order (roots first).
    pub tree: Vec<usize>,
    /// Walked cluster chain, leaf first, ending at the reached root.
    pub path: Vec<usize>,
    /// Points moved along the chain; `boundary_points[k]` moved from
    /// `path[k]` to `path[k+1]`.
    pub boundary_points: Vec<u32>,
    /// Price vector when the growth phase of this path started.
    pub m_before: Vec<f64>,
    /// Price vector after the path executed.
    pub m_after: Vec<f64>,
}

impl SwapRecord {
    /// Single-line rendering for log output.
    pub fn to_line(&self) -> String {
        format!(
            "iteration={} tree={:?} path={:?} boundary_points={:?} m_before={:?} m_after={:?}",
            self.iteration, self.tree, self.path, self.boundary_points, self.m_before, self.m_after
        )
    }
}

/// Full solver output, including the optional trace.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub statistic: OrderStatistic,
    pub stats: SolverStats,
    pub trace: Vec<SwapRecord>,
}

/// Tolerance under which a point counts as lying on a hyperplane:
/// `1e-9` times the largest absolute score.
pub fn hyperplane_tolerance(u: &DenseMatrix) -> f64 {
    1e-9 * u.max_abs()
}

/// The centered price vector `1/P` in every coordinate, the default
/// initial guess.
pub fn center_price(p: usize) -> Vec<f64> {
    vec![1.0 / p as f64; p]
}

/// Clustering induced by the price vector `m`: each point goes to
/// `argmax_i (u_i(x) - m_i)`, ties to the lowest cluster index.
pub fn induced_clustering(u: &DenseMatrix, m: &[f64]) -> Clustering {
    let p = m.len();
    assert_eq!(
        u.n_cols(),
        p,
        "price vector length must match score columns"
    );
    assert!(p >= 1);
    let mut assign = Vec::with_capacity(u.n_rows());
    for x in 0..u.n_rows() {
        let row = u.row(x);
        let mut best = 0usize;
        let mut best_val = row[0] - m[0];
        for i in 1..p {
            let v = row[i] - m[i];
            if v > best_val {
                best = i;
                best_val = v;
            }
        }
        assign.push(best as u32);
    }
    Clustering::from_parts(assign, p)
}

/// Total violation of exact volume constraints, `sum_i |vol_i - V_i|`.
///
/// Defined only for exact constraints; always even when the volumes sum
/// to the same total.
pub fn error_energy(c: &Clustering, constraints: &VolumeConstraints) -> Result<usize> {
    match constraints {
        VolumeConstraints::Exact(v) => {
            if v.len() != c.p() {
                return Err(Error::Shape(format!(
                    "constraints describe {} clusters, clustering has {}",
                    v.len(),
                    c.p()
                )));
            }
            Ok(c.volumes()
                .iter()
                .zip(v)
                .map(|(&vol, &t)| vol.abs_diff(t))
                .sum())
        }
        VolumeConstraints::Interval { .. } => Err(Error::Parameter(
            "error energy is defined for exact volume constraints only".into(),
        )),
    }
}

/// Sum of the winning scores, `sum_x u_{assign(x)}(x)`.
pub fn objective_value(u: &DenseMatrix, c: &Clustering) -> f64 {
    assert_eq!(u.n_rows(), c.n());
    c.assign()
        .iter()
        .enumerate()
        .map(|(x, &a)| u.get(x, a as usize))
        .sum()
}

/// Translation direction used while growing a tree of clusters:
/// `d = (#T/(P-1)) * 1 - (1 + 1/(P-1)) * sum_{i in T} e_i`.
///
/// Moving `m` along `d` lowers the prices of the tree members and raises
/// all others, so hyperplanes between two tree members (or two
/// outsiders) stay fixed while every tree-to-outside gap closes at the
/// uniform rate `P/(P-1)`. The components sum to zero, so the total
/// price level is preserved.
pub fn direction(members: &[usize], p: usize) -> Vec<f64> {
    assert!(p >= 2, "direction needs at least two clusters");
    assert!(
        !members.is_empty() && members.len() < p,
        "direction needs a nonempty proper subset of clusters"
    );
    let pm1 = (p - 1) as f64;
    let base = members.len() as f64 / pm1;
    let drop = 1.0 + 1.0 / pm1;
    let mut d = vec![base; p];
    for &i in members {
        assert!(i < p, "cluster index out of range");
        d[i] -= drop;
    }
    d
}

/// The objective whose minimizers over `m` are exactly the V-order
/// statistics: `F(m) = sum_x max_i (u_i(x) - m_i) + sum_i V_i m_i`.
///
/// Invariant under `m -> m + c*1` whenever the volumes sum to N.
pub fn variational_objective(u: &DenseMatrix, m: &[f64], v: &[usize]) -> f64 {
    let p = m.len();
    assert_eq!(u.n_cols(), p);
    assert_eq!(v.len(), p);
    let mut total = 0.0;
    for x in 0..u.n_rows() {
        let row = u.row(x);
        let mut best = f64::NEG_INFINITY;
        for i in 0..p {
            best = best.max(row[i] - m[i]);
        }
        total += best;
    }
    for i in 0..p {
        total += v[i] as f64 * m[i];
    }
    total
}

/// Lagrange multiplier of the minimizing-movement interpretation,
/// `(2/sqrt(h)) * (m + c*1 - 1/P)` with `c` chosen so the shifted price
/// vector sums to 1. The result sums to zero and is invariant under
/// constant shifts of `m`.
pub fn lagrange_multiplier(os: &OrderStatistic, h: f64) -> Vec<f64> {
    assert!(h > 0.0, "time step must be positive");
    let p = os.m.len() as f64;
    let c = (1.0 - os.m.iter().sum::<f64>()) / p;
    let scale = 2.0 / h.sqrt();
    os.m.iter().map(|&mi| scale * (mi + c - 1.0 / p)).collect()
}

/// Exact volume targets for seeding the interval solver: the volumes
/// induced by `m0` are clamped into `[L, U]` and the leftover mass is
/// distributed by largest-remainder waterfilling.
pub fn feasible_seed_for_interval(
    u: &DenseMatrix,
    lower: &[usize],
    upper: &[usize],
    m0: &[f64],
) -> Result<Vec<usize>> {
    let n = u.n_rows();
    let constraints = VolumeConstraints::Interval {
        lower: lower.to_vec(),
        upper: upper.to_vec(),
    };
    constraints.validate(n)?;
    let current = induced_clustering(u, m0);
    Ok(waterfill_volumes(current.volumes(), lower, upper, n))
}

/// Clamp-then-waterfill core of [`feasible_seed_for_interval`].
///
/// Assumes the bounds were validated. The residual after clamping is
/// settled one point at a time: positive residual goes to the cluster
/// with the largest clamped-off remainder that still has upper headroom,
/// negative residual is taken from the cluster with the most negative
/// remainder above its lower bound: ties to the lowest index.
fn waterfill_volumes(current: &[usize], lower: &[usize], upper: &[usize], n: usize) -> Vec<usize> {
    let p = current.len();
    let mut v: Vec<usize> = (0..p)
        .map(|i| current[i].clamp(lower[i], upper[i]))
        .collect();
    let mut rem: Vec<i64> = (0..p).map(|i| current[i] as i64 - v[i] as i64).collect();
    let mut residual = n as i64 - v.iter().sum::<usize>() as i64;
    while residual > 0 {
        let i = (0..p)
            .filter(|&i| v[i] < upper[i])
            .max_by_key(|&i| (rem[i], std::cmp::Reverse(i)))
            .expect("validated bounds leave upper headroom");
        v[i] += 1;
        rem[i] -= 1;
        residual -= 1;
    }
    while residual < 0 {
        let i = (0..p)
            .filter(|&i| v[i] > lower[i])
            .min_by_key(|&i| (rem[i], i))
            .expect("validated bounds leave lower headroom");
        v[i] -= 1;
        rem[i] += 1;
        residual += 1;
    }
    v
}

/// Finds the price vector meeting exact volume targets and the optimal
/// clustering it induces. See [`solve_equality_with`] for options.
pub fn solve_equality(
    u: &DenseMatrix,
    v: &[usize],
    m0: &[f64],
) -> Result<(OrderStatistic, SolverStats)> {
    let report = solve_equality_with(u, v, m0, &SolverOptions::default())?;
    Ok((report.statistic, report.stats))
}

/// Exact-volume solver.
///
/// Starting from the `m0`-induced clustering, repeatedly grows a tree of
/// clusters rooted at a deficient one, translating `m` so that tree
/// prices fall in lockstep until a surplus cluster is reached, then
/// swaps the recorded boundary points along the predecessor chain. Each
/// swap-path lowers the volume error by exactly 2, so the number of
/// paths equals half the initial error.
pub fn solve_equality_with(
    u: &DenseMatrix,
    v: &[usize],
    m0: &[f64],
    opts: &SolverOptions,
) -> Result<SolveReport> {
    let start = Instant::now();
    VolumeConstraints::Exact(v.to_vec()).validate(u.n_rows())?;
    let mut engine = Engine::new(u, m0, opts.paranoid)?;
    if v.len() != engine.p {
        return Err(Error::Shape(format!(
            "volume targets describe {} clusters, scores have {}",
            v.len(),
            engine.p
        )));
    }
    let initial_error = engine.volume_error(v);
    let mut trace = Vec::new();
    let paths = engine.equality_sweep(v, opts.trace, &mut trace, 0)?;
    if paths * 2 != initial_error {
        return Err(Error::Internal(format!(
            "executed {paths} swap-paths for initial volume error {initial_error}"
        )));
    }
    debug_assert_eq!(engine.volumes, v);
    engine.verify_separation()?;
    Ok(engine.into_report(
        OrderStatisticKind::Equality,
        paths,
        initial_error,
        start.elapsed(),
        trace,
    ))
}

/// Finds the price vector meeting interval volume bounds and the
/// optimal clustering it induces. See [`solve_interval_with`].
pub fn solve_interval(
    u: &DenseMatrix,
    lower: &[usize],
    upper: &[usize],
    m0: &[f64],
) -> Result<(OrderStatistic, SolverStats)> {
    let report = solve_interval_with(u, lower, upper, m0, &SolverOptions::default())?;
    Ok((report.statistic, report.stats))
}

/// Interval-volume solver.
///
/// First reaches feasibility by running the exact solver against seed
/// volumes from [`feasible_seed_for_interval`], then improves the
/// objective: while some cluster with upper headroom prices above one
/// with lower headroom, it grows a tree from the set of highest-priced
/// growable clusters and swaps a point chain from a surplus leaf up to
/// a root, gaining `m_root - m_leaf` per path. Terminates when the
/// ordered-coordinate optimality criterion holds.
///
/// The returned `initial_error` refers to the seeded exact targets, and
/// `outer_iterations` counts swap-paths across both stages.
pub fn solve_interval_with(
    u: &DenseMatrix,
    lower: &[usize],
    upper: &[usize],
    m0: &[f64],
    opts: &SolverOptions,
) -> Result<SolveReport> {
    let start = Instant::now();
    let constraints = VolumeConstraints::Interval {
        lower: lower.to_vec(),
        upper: upper.to_vec(),
    };
    constraints.validate(u.n_rows())?;
    let mut engine = Engine::new(u, m0, opts.paranoid)?;
    if lower.len() != engine.p {
        return Err(Error::Shape(format!(
            "volume bounds describe {} clusters, scores have {}",
            lower.len(),
            engine.p
        )));
    }
    let seed = waterfill_volumes(&engine.volumes, lower, upper, engine.n);
    let initial_error = engine.volume_error(&seed);
    let mut trace = Vec::new();
    let mut paths = engine.equality_sweep(&seed, opts.trace, &mut trace, 0)?;
    if paths * 2 != initial_error {
        return Err(Error::Internal(format!(
            "executed {paths} swap-paths for initial volume error {initial_error}"
        )));
    }
    paths += engine.interval_sweep(lower, upper, opts.trace, &mut trace, paths)?;
    debug_assert!(constraints.admits(&engine.volumes));
    engine.verify_separation()?;
    engine.verify_interval_criterion(lower, upper)?;
    Ok(engine.into_report(
        OrderStatisticKind::Interval,
        paths,
        initial_error,
        start.elapsed(),
        trace,
    ))
}

/// Solves the linear assignment problem by reduction: row `x` of the
/// cost matrix becomes a point with scores `-cost[x]`, every cluster
/// gets volume 1, and the exact solver returns the cost-minimizing
/// permutation.
pub fn assignment_reduce(cost: &DenseMatrix) -> Result<Vec<usize>> {
    let n = cost.n_rows();
    if cost.n_cols() != n {
        return Err(Error::Parameter(format!(
            "cost matrix must be square, got {n}x{}",
            cost.n_cols()
        )));
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if cost.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter(
            "cost matrix contains non-finite values".into(),
        ));
    }
    let scores = DenseMatrix::from_vec(n, n, cost.data().iter().map(|&c| -c).collect());
    let (statistic, _) = solve_equality(&scores, &vec![1; n], &center_price(n))?;
    Ok(statistic
        .induced
        .assign()
        .iter()
        .map(|&a| a as usize)
        .collect())
}

/// A single growth event: under the tree translation, either a point of
/// an outside cluster reaches a hyperplane against a tree member, or an
/// outside growable cluster’s price meets the falling root level.
#[derive(Clone, Copy, Debug)]
enum Event {
    /// `(t, joining cluster j, tree member i, point id)`.
    Boundary(f64, usize, usize, u32),
    /// `(t, joining cluster j)` at the root level, becoming a new root.
    Level(f64, usize),
}

impl Event {
    fn t(&self) -> f64 {
        match *self {
            Event::Boundary(t, ..) | Event::Level(t, _) => t,
        }
    }

    /// Deterministic ordering: earliest time, then lowest joining
    /// cluster, level events before boundary events, then lowest tree
    /// member and point id.
    fn sort_key(&self) -> (f64, usize, u8, usize, u32) {
        match *self {
            Event::Level(t, j) => (t, j, 0, 0, 0),
            Event::Boundary(t, j, i, x) => (t, j, 1, i, x),
        }
    }

    fn earlier_than(&self, other: &Event) -> bool {
        let a = self.sort_key();
        let b = other.sort_key();
        a.0.total_cmp(&b.0)
            .then_with(|| a.1.cmp(&b.1))
            .then_with(|| a.2.cmp(&b.2))
            .then_with(|| a.3.cmp(&b.3))
            .then_with(|| a.4.cmp(&b.4))
            .is_lt()
    }
}

/// Mutable solver state shared by both sweeps.
///
/// For every ordered cluster pair `(i, j)` a min-heap holds the points
/// currently in cluster `j` keyed by the static value `u_j(x) - u_i(x)`;
/// the moving quantity is the threshold `m_j - m_i`, so translating `m`
/// never re-keys a heap. The heap top is the next point of `j` to land
/// on the hyperplane `H_ij` when the pair’s gap closes.
struct Engine<'a> {
    u: &'a DenseMatrix,
    n: usize,
    p: usize,
    tau: f64,
    m: Vec<f64>,
    assign: Vec<u32>,
    volumes: Vec<usize>,
    queues: Vec<IndexedMinHeap>,
    heap_ops: usize,
    paranoid: bool,
}

impl<'a> Engine<'a> {
    fn new(u: &'a DenseMatrix, m0: &[f64], paranoid: bool) -> Result<Self> {
        let n = u.n_rows();
        let p = u.n_cols();
        if n == 0 || p == 0 {
            return Err(Error::Parameter(format!(
                "scores must be a nonempty matrix, got {n}x{p}"
            )));
        }
        if m0.len() != p {
            return Err(Error::Shape(format!(
                "initial price vector has length {}, expected {p}",
                m0.len()
            )));
        }
        if u.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("scores contain non-finite values".into()));
        }
        if m0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(
                "initial price vector contains non-finite values".into(),
            ));
        }
        let tau = hyperplane_tolerance(u);
        let induced = induced_clustering(u, m0);
        let (assign, volumes) = (induced.assign.clone(), induced.volumes.clone());
        let mut engine = Engine {
            u,
            n,
            p,
            tau,
            m: m0.to_vec(),
            assign,
            volumes,
            queues: (0..p * p).map(|_| IndexedMinHeap::new(n)).collect(),
            heap_ops: 0,
            paranoid,
        };
        engine.build_queues();
        Ok(engine)
    }

    fn build_queues(&mut self) {
        let mut members: Vec<Vec<u32>> = vec![Vec::new(); self.p];
        for (x, &a) in self.assign.iter().enumerate() {
            members[a as usize].push(x as u32);
        }
        for i in 0..self.p {
            for j in 0..self.p {
                if i == j {
                    continue;
                }
                let entries: Vec<(f64, u32)> = members[j]
                    .iter()
                    .map(|&x| {
                        let x_us = x as usize;
                        (self.u.get(x_us, j) - self.u.get(x_us, i), x)
                    })
                    .collect();
                self.queues[i * self.p + j].rebuild(entries);
            }
        }
        self.heap_ops += self.n * (self.p - 1);
    }

    fn volume_error(&self, v: &[usize]) -> usize {
        self.volumes
            .iter()
            .zip(v)
            .map(|(&vol, &t)| vol.abs_diff(t))
            .sum()
    }

    /// Gap closing rate between a tree member and an outsider, per unit
    /// of translation time.
    fn rate(&self) -> f64 {
        1.0 + 1.0 / (self.p - 1) as f64
    }

    /// Moves every price by `t` along the tree direction, given which
    /// clusters are inside and the tree size.
    fn advance(&mut self, in_tree: &[bool], tree_size: usize, t: f64) {
        let pm1 = (self.p - 1) as f64;
        let d_out = tree_size as f64 / pm1;
        let d_in = d_out - (1.0 + 1.0 / pm1);
        for q in 0..self.p {
            self.m[q] += t * if in_tree[q] { d_in } else { d_out };
        }
    }

    /// Reassigns point `x`, updating volumes and all pair queues.
    fn move_point(&mut self, x: u32, from: usize, to: usize) {
        debug_assert_eq!(self.assign[x as usize], from as u32);
        debug_assert_ne!(from, to);
        for q in 0..self.p {
            if q != from {
                let removed = self.queues[q * self.p + from].remove(x);
                debug_assert!(removed);
            }
        }
        self.assign[x as usize] = to as u32;
        self.volumes[from] -= 1;
        self.volumes[to] += 1;
        let x_us = x as usize;
        for q in 0..self.p {
            if q != to {
                let key = self.u.get(x_us, to) - self.u.get(x_us, q);
                self.queues[q * self.p + to].insert(key, x);
            }
        }
        self.heap_ops += 2 * (self.p - 1);
    }

    /// Earliest boundary event over tree-outside pairs, if any.
    fn best_boundary_event(&self, in_tree: &[bool]) -> Option<Event> {
        let rate = self.rate();
        let mut best: Option<Event> = None;
        for j in 0..self.p {
            if in_tree[j] {
                continue;
            }
            for i in 0..self.p {
                if !in_tree[i] {
                    continue;
                }
                if let Some((key, x)) = self.queues[i * self.p + j].peek() {
                    let gap = key - (self.m[j] - self.m[i]);
                    debug_assert!(
                        gap >= -4.0 * self.tau - 1e-300,
                        "queue ({i},{j}) top already {gap} past its hyperplane"
                    );
                    let event = Event::Boundary((gap / rate).max(0.0), j, i, x);
                    if best.as_ref().is_none_or(|b| event.earlier_than(b)) {
                        best = Some(event);
                    }
                }
            }
        }
        best
    }

    /// Walks the predecessor chain from `leaf` until `terminal` accepts
    /// a cluster, moving each recorded boundary point to its parent.
    fn walk(
        &mut self,
        leaf: usize,
        pred: &[Option<(usize, u32)>],
        terminal: impl Fn(usize) -> bool,
    ) -> Result<(Vec<usize>, Vec<u32>)> {
        let mut path = vec![leaf];
        let mut points = Vec::new();
        let mut cur = leaf;
        while !terminal(cur) {
            let (parent, x) = pred[cur].ok_or_else(|| {
                Error::Internal(format!(
                    "swap walk reached cluster {cur} without predecessor"
                ))
            })?;
            self.move_point(x, cur, parent);
            points.push(x);
            path.push(parent);
            cur = parent;
        }
        Ok((path, points))
    }

    /// Runs exact-volume swap-paths until the volume error vanishes.
    fn equality_sweep(
        &mut self,
        v: &[usize],
        record: bool,
        trace: &mut Vec<SwapRecord>,
        iter_base: usize,
    ) -> Result<usize> {
        let mut paths = 0usize;
        while let Some(root) = (0..self.p).find(|&i| self.volumes[i] < v[i]) {
            let m_before = if record { self.m.clone() } else { Vec::new() };
            let mut in_tree = vec![false; self.p];
            in_tree[root] = true;
            let mut tree = vec![root];
            let mut pred: Vec<Option<(usize, u32)>> = vec![None; self.p];
            let leaf = loop {
                let event = self.best_boundary_event(&in_tree).ok_or_else(|| {
                    Error::Internal("growth found no event; volumes are inconsistent".into())
                })?;
                let Event::Boundary(t, j, i, x) = event else {
                    unreachable!("equality growth only produces boundary events")
                };
                self.advance(&in_tree, tree.len(), t);
                pred[j] = Some((i, x));
                in_tree[j] = true;
                tree.push(j);
                if self.volumes[j] > v[j] {
                    break j;
                }
            };
            // Snapshot which clusters were deficient: the walk must stop
            // at the first ancestor that still needed a point when the
            // path was found, even though the arriving point may balance
            // it exactly.
            let deficient: Vec<bool> = (0..self.p).map(|i| self.volumes[i] < v[i]).collect();
            let (path, points) = self.walk(leaf, &pred, |c| deficient[c])?;
            if record {
                trace.push(SwapRecord {
                    iteration: iter_base + paths,
                    tree: tree.clone(),
                    path,
                    boundary_points: points,
                    m_before,
                    m_after: self.m.clone(),
                });
            }
            paths += 1;
            if self.paranoid {
                self.validate_queues()?;
            }
        }
        Ok(paths)
    }

    /// Runs objective-improving swap-paths until the interval optimality
    /// criterion holds. Assumes current volumes satisfy the bounds.
    fn interval_sweep(
        &mut self,
        lower: &[usize],
        upper: &[usize],
        record: bool,
        trace: &mut Vec<SwapRecord>,
        iter_base: usize,
    ) -> Result<usize> {
        let mut paths = 0usize;
        let budget = 8 * self.n * self.p + 64;
        for _guard in 0..=budget {
            // Growable clusters can still take points, shrinkable ones
            // can still spare them; both strict, so a cluster pinned at
            // lower == vol == upper is in neither set.
            let growable: Vec<bool> = (0..self.p).map(|i| self.volumes[i] < upper[i]).collect();
            let shrinkable: Vec<bool> = (0..self.p).map(|i| self.volumes[i] > lower[i]).collect();
            let level = (0..self.p)
                .filter(|&i| growable[i])
                .map(|i| self.m[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let floor = (0..self.p)
                .filter(|&i| shrinkable[i])
                .map(|i| self.m[i])
                .fold(f64::INFINITY, f64::min);
            if !(level - floor > self.tau) {
                return Ok(paths);
            }

            let m_before = if record { self.m.clone() } else { Vec::new() };
            let mut in_tree = vec![false; self.p];
            let mut is_root = vec![false; self.p];
            let mut tree = Vec::new();
            let mut pred: Vec<Option<(usize, u32)>> = vec![None; self.p];
            for j in 0..self.p {
                if growable[j] && self.m[j] == level {
                    in_tree[j] = true;
                    is_root[j] = true;
                    tree.push(j);
                }
            }
            // Remaining growable clusters, highest price first: their
            // relative order is frozen while the tree translates, so
            // this is the level-event schedule for the whole growth.
            let mut pending: Vec<usize> = (0..self.p)
                .filter(|&j| growable[j] && !in_tree[j])
                .collect();
            pending.sort_by(|&a, &b| self.m[b].total_cmp(&self.m[a]).then(a.cmp(&b)));

            let leaf = loop {
                let level = self.m[tree[0]];
                // Stop growing once a shrinkable tree member prices
                // strictly below the root level: swapping toward a root
                // then gains a positive amount. Members within tau of
                // the level would only yield zero-gain paths.
                let stop = (0..self.p)
                    .filter(|&w| in_tree[w] && shrinkable[w] && self.m[w] < level - self.tau)
                    .min_by(|&a, &b| self.m[a].total_cmp(&self.m[b]).then(a.cmp(&b)));
                if let Some(w) = stop {
                    // Taking the argmin over the strictly-below set is the
                    // same as over all shrinkable tree members: the cheapest
                    // one is the first to price below the root level.
                    break Some(w);
                }
                let mut event = self.best_boundary_event(&in_tree);
                if let Some(&j) = pending.iter().find(|&&j| !in_tree[j]) {
                    let t = ((level - self.m[j]) / self.rate()).max(0.0);
                    let level_event = Event::Level(t, j);
                    if event.as_ref().is_none_or(|e| level_event.earlier_than(e)) {
                        event = Some(level_event);
                    }
                }
                let Some(event) = event else {
                    // Tree saturated: every remaining cluster is empty
                    // and pinned. The translation done so far has closed
                    // the level/floor gap, so the outer loop terminates.
                    break None;
                };
                self.advance(&in_tree, tree.len(), event.t());
                match event {
                    Event::Boundary(_, j, i, x) => {
                        pred[j] = Some((i, x));
                        in_tree[j] = true;
                        tree.push(j);
                    }
                    Event::Level(_, j) => {
                        in_tree[j] = true;
                        is_root[j] = true;
                        tree.push(j);
                    }
                }
            };
            let Some(leaf) = leaf else {
                continue;
            };
            let (path, points) = self.walk(leaf, &pred, |c| is_root[c])?;
            if record {
                trace.push(SwapRecord {
                    iteration: iter_base + paths,
                    tree: tree.clone(),
                    path,
                    boundary_points: points,
                    m_before,
                    m_after: self.m.clone(),
                });
            }
            paths += 1;
            if self.paranoid {
                self.validate_queues()?;
            }
        }
        Err(Error::Internal(format!(
            "interval solver exceeded its budget of {budget} iterations"
        )))
    }

    /// Checks the separation property for every point against the
    /// current prices.
    fn verify_separation(&self) -> Result<()> {
        for x in 0..self.n {
            let row = self.u.row(x);
            let a = self.assign[x] as usize;
            let held = row[a] - self.m[a];
            for q in 0..self.p {
                if row[q] - self.m[q] > held + self.tau {
                    return Err(Error::Internal(format!(
                        "point {x} in cluster {a} violates separation against cluster {q}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Checks the ordered-coordinate optimality criterion: with the
    /// pivot at the highest price among growable clusters, everything
    /// pricing strictly above must sit at its upper bound and everything
    /// strictly below at its lower bound.
    fn verify_interval_criterion(&self, lower: &[usize], upper: &[usize]) -> Result<()> {
        let growable: Vec<usize> = (0..self.p)
            .filter(|&i| self.volumes[i] < upper[i])
            .collect();
        let pivot = if growable.is_empty() {
            f64::NEG_INFINITY
        } else {
            growable
                .iter()
                .map(|&i| self.m[i])
                .fold(f64::NEG_INFINITY, f64::max)
        };
        for i in 0..self.p {
            if self.m[i] > pivot + self.tau && self.volumes[i] != upper[i] {
                return Err(Error::Internal(format!(
                    "cluster {i} prices above the pivot but is not at its upper bound"
                )));
            }
            if self.m[i] < pivot - self.tau && self.volumes[i] != lower[i] {
                return Err(Error::Internal(format!(
                    "cluster {i} prices below the pivot but is not at its lower bound"
                )));
            }
        }
        Ok(())
    }

    /// Exhaustive queue-vs-assignment consistency check (paranoid mode).
    fn validate_queues(&self) -> Result<()> {
        let mut volumes = vec![0usize; self.p];
        for &a in &self.assign {
            volumes[a as usize] += 1;
        }
        if volumes != self.volumes {
            return Err(Error::Internal("cached volumes drifted".into()));
        }
        for i in 0..self.p {
            for j in 0..self.p {
                if i == j {
                    continue;
                }
                let q = &self.queues[i * self.p + j];
                if q.len() != self.volumes[j] {
                    return Err(Error::Internal(format!(
                        "queue ({i},{j}) holds {} points, cluster {j} has {}",
                        q.len(),
                        self.volumes[j]
                    )));
                }
                for x in 0..self.n {
                    let inside = self.assign[x] == j as u32;
                    match q.key_of(x as u32) {
                        Some(key) => {
                            if !inside {
                                return Err(Error::Internal(format!(
                                    "queue ({i},{j}) contains foreign point {x}"
                                )));
                            }
                            let expect = self.u.get(x, j) - self.u.get(x, i);
                            if key != expect {
                                return Err(Error::Internal(format!(
                                    "queue ({i},{j}) key for point {x} is stale"
                                )));
                            }
                        }
                        None => {
                            if inside {
                                return Err(Error::Internal(format!(
                                    "queue ({i},{j}) lost point {x}"
                                )));
                            }
                        }
                    }
                }
                if let Some((key, _)) = q.peek() {
                    if key < self.m[j] - self.m[i] - 4.0 * self.tau {
                        return Err(Error::Internal(format!(
                            "queue ({i},{j}) top crossed its hyperplane"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn into_report(
        self,
        kind: OrderStatisticKind,
        outer_iterations: usize,
        initial_error: usize,
        wall_time: Duration,
        trace: Vec<SwapRecord>,
    ) -> SolveReport {
        SolveReport {
            statistic: OrderStatistic {
                m: self.m,
                induced: Clustering::from_parts(self.assign, self.p),
                kind,
            },
            stats: SolverStats {
                outer_iterations,
                heap_ops: self.heap_ops,
                initial_error,
                wall_time,
            },
            trace,
        }
    }
}
