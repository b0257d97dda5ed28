//! Initial clusterings for the iterative scheme, built from a handful
//! of labeled points per class: nearest-label Voronoi cells, the
//! volume-balanced Laguerre tessellation, and thresholded diffusion of
//! the label indicators.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;

use crate::graph::{PointCloud, SparseWeights};
use crate::kernels::DiffusionKernel;
use crate::matrix::DenseMatrix;
use crate::osstat::{
    solve_equality, solve_interval, Clustering, OrderStatistic, OrderStatisticKind, SolverStats,
    VolumeConstraints,
};
use crate::{Error, Result};

/// Labeled point ids, one list per class.
#[derive(Clone, Debug)]
pub struct FidelitySet {
    classes: Vec<Vec<u32>>,
    n: usize,
}

impl FidelitySet {
    /// Validates that ids are in range, sorted lists are duplicate-free,
    /// and no id appears in two classes. Empty classes are allowed here;
    /// the initializers reject them.
    pub fn new(classes: Vec<Vec<u32>>, n: usize) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::Parameter(format!(
                "a fidelity set needs at least 2 classes, got {}",
                classes.len()
            )));
        }
        let mut seen = vec![false; n];
        let mut classes = classes;
        for (i, ids) in classes.iter_mut().enumerate() {
            ids.sort_unstable();
            for &x in ids.iter() {
                if x as usize >= n {
                    return Err(Error::Shape(format!(
                        "labeled point {x} in class {i} is out of range for {n} points"
                    )));
                }
                if seen[x as usize] {
                    return Err(Error::Parameter(format!(
                        "point {x} is labeled more than once"
                    )));
                }
                seen[x as usize] = true;
            }
        }
        Ok(FidelitySet { classes, n })
    }

    /// Draws `per_class` labeled points per class uniformly from the
    /// ground-truth labels, reproducibly under the seed.
    pub fn sample(labels: &[u32], p: usize, per_class: usize, seed: u64) -> Result<Self> {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut by_class = vec![Vec::new(); p];
        for (x, &c) in labels.iter().enumerate() {
            if c as usize >= p {
                return Err(Error::Shape(format!(
                    "label {c} at point {x} is out of range for {p} classes"
                )));
            }
            by_class[c as usize].push(x as u32);
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut classes = Vec::with_capacity(p);
        for (i, pool) in by_class.iter_mut().enumerate() {
            if pool.len() < per_class {
                return Err(Error::Parameter(format!(
                    "class {i} has only {} points, cannot label {per_class}",
                    pool.len()
                )));
            }
            pool.shuffle(&mut rng);
            classes.push(pool[..per_class].to_vec());
        }
        FidelitySet::new(classes, labels.len())
    }

    /// Reads a `point_id,class_id` file, one pair per line. Blank lines
    /// and lines starting with `#` are skipped.
    pub fn from_label_file(path: &Path, n: usize, p: usize) -> Result<Self> {
        let display = path.display().to_string();
        let file = std::fs::File::open(path).map_err(|e| Error::io(display.clone(), e))?;
        let mut classes = vec![Vec::new(); p];
        for (lineno, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(display.clone(), e))?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split(|c: char| c == ',' || c.is_whitespace());
            let mut next =
                |what: &str| -> Result<u32> {
                    let tok = parts.by_ref().find(|t| !t.is_empty()).ok_or_else(|| {
                        Error::FormatLine {
                            path: display.clone(),
                            line: lineno + 1,
                            reason: format!("missing {what}"),
                        }
                    })?;
                    tok.parse().map_err(|_| Error::FormatLine {
                        path: display.clone(),
                        line: lineno + 1,
                        reason: format!("{what} `{tok}` is not an unsigned integer"),
                    })
                };
            let point = next("point id")?;
            let class = next("class id")?;
            if class as usize >= p {
                return Err(Error::FormatLine {
                    path: display.clone(),
                    line: lineno + 1,
                    reason: format!("class {class} out of range for {p} classes"),
                });
            }
            classes[class as usize].push(point);
        }
        FidelitySet::new(classes, n)
    }

    pub fn class_count(&self) -> usize {
        self.classes.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn class(&self, i: usize) -> &[u32] {
        &self.classes[i]
    }

    pub fn total_labeled(&self) -> usize {
        self.classes.iter().map(Vec::len).sum()
    }

    /// One-hot label matrix: row x is e_i when x is labeled in class i,
    /// all zeros otherwise.
    pub fn indicator(&self) -> DenseMatrix {
        let mut delta = DenseMatrix::zeros(self.n, self.classes.len());
        for (i, ids) in self.classes.iter().enumerate() {
            for &x in ids {
                delta.set(x as usize, i, 1.0);
            }
        }
        delta
    }

    fn require_nonempty(&self) -> Result<()> {
        for (i, ids) in self.classes.iter().enumerate() {
            if ids.is_empty() {
                return Err(Error::Parameter(format!("class {i} has no labeled points")));
            }
        }
        Ok(())
    }
}

/// Edge length used by the shortest-path searches.
#[derive(Clone, Copy)]
pub enum EdgeLength<'a> {
    /// `-ln(w_e / w_max)` clamped to `[1e-12, 1]` before the log, so
    /// heavier similarity means a shorter edge.
    NegLogWeight,
    /// Euclidean distance between the edge's endpoints.
    Euclidean(&'a PointCloud),
}

fn edge_length_table(w: &SparseWeights, length: EdgeLength) -> Result<Vec<Vec<f64>>> {
    let n = w.len();
    let m = w.matrix();
    match length {
        EdgeLength::NegLogWeight => {
            let mut w_max = 0.0f64;
            for i in 0..n {
                let (_, vals) = m.row(i);
                for &v in vals {
                    w_max = w_max.max(v);
                }
            }
            if w_max <= 0.0 {
                return Err(Error::Parameter(
                    "graph has no positive weights to derive edge lengths from".into(),
                ));
            }
            Ok((0..n)
                .map(|i| {
                    let (_, vals) = m.row(i);
                    vals.iter()
                        .map(|&v| -(v / w_max).clamp(1e-12, 1.0).ln())
                        .collect()
                })
                .collect())
        }
        EdgeLength::Euclidean(cloud) => {
            if cloud.len() != n {
                return Err(Error::Shape(format!(
                    "point cloud has {} points, graph has {n}",
                    cloud.len()
                )));
            }
            Ok((0..n)
                .map(|i| {
                    let (cols, _) = m.row(i);
                    let xi = cloud.point(i);
                    cols.iter()
                        .map(|&j| {
                            let xj = cloud.point(j as usize);
                            xi.iter()
                                .zip(xj)
                                .map(|(a, b)| (a - b) * (a - b))
                                .sum::<f64>()
                                .sqrt()
                        })
                        .collect()
                })
                .collect())
        }
    }
}

fn dijkstra_from(w: &SparseWeights, lengths: &[Vec<f64>], sources: &[u32]) -> Vec<f64> {
    let n = w.len();
    let m = w.matrix();
    let mut dist = vec![f64::INFINITY; n];
    let mut done = vec![false; n];
    // Order by (distance, id); ties resolved by id keep the pop order
    // deterministic. Stale entries are skipped on pop.
    let mut heap: BinaryHeap<Reverse<(u64, u32)>> = BinaryHeap::new();
    for &s in sources {
        dist[s as usize] = 0.0;
        heap.push(Reverse((0, s)));
    }
    while let Some(Reverse((key, x))) = heap.pop() {
        let x = x as usize;
        if done[x] {
            continue;
        }
        if key != dist[x].to_bits() {
            continue;
        }
        done[x] = true;
        let (cols, _) = m.row(x);
        for (e, &y) in cols.iter().enumerate() {
            let y = y as usize;
            if done[y] {
                continue;
            }
            let cand = dist[x] + lengths[x][e];
            if cand < dist[y] {
                dist[y] = cand;
                heap.push(Reverse((cand.to_bits(), y as u32)));
            }
        }
    }
    dist
}

/// Shortest-path distance from every point to the nearest labeled
/// point of each class: an N×P matrix with `dist[x][i] = min over
/// y in Y_i of d(x, y)`.
pub fn graph_distances(
    w: &SparseWeights,
    sources: &FidelitySet,
    length: EdgeLength,
) -> Result<DenseMatrix> {
    let n = w.len();
    if sources.n() != n {
        return Err(Error::Shape(format!(
            "fidelity set indexes {} points, graph has {n}",
            sources.n()
        )));
    }
    sources.require_nonempty()?;
    let lengths = edge_length_table(w, length)?;
    let p = sources.class_count();
    let columns: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|i| dijkstra_from(w, &lengths, sources.class(i)))
        .collect();
    let mut dist = DenseMatrix::zeros(n, p);
    for (i, col) in columns.iter().enumerate() {
        for (x, &d) in col.iter().enumerate() {
            if !d.is_finite() {
                return Err(Error::Disconnected {
                    components: w.component_count(),
                });
            }
            dist.set(x, i, d);
        }
    }
    Ok(dist)
}

/// Volume-constrained thresholding of a score matrix with labeled
/// points pinned to their own class. See [`pinned_solve`].
pub fn pinned_threshold(
    u: &DenseMatrix,
    constraints: &VolumeConstraints,
    pins: &FidelitySet,
) -> Result<Clustering> {
    let m0 = vec![0.0; u.n_cols()];
    Ok(pinned_solve(u, constraints, Some(pins), &m0)?.0)
}

/// Volume-constrained thresholding with optional pinning and a caller
/// supplied starting price vector. With pins, the solver runs on the
/// unlabeled rows with the labeled counts subtracted from the volume
/// targets, and the pinned rows are reattached afterwards. The returned
/// order statistic describes the solved (free-point) subproblem; its
/// price vector lives on the full score scale and can warm-start the
/// next call.
pub fn pinned_solve(
    u: &DenseMatrix,
    constraints: &VolumeConstraints,
    pins: Option<&FidelitySet>,
    m0: &[f64],
) -> Result<(Clustering, OrderStatistic, SolverStats)> {
    let n = u.n_rows();
    let p = u.n_cols();
    if let Some(pins) = pins {
        if pins.n() != n {
            return Err(Error::Shape(format!(
                "fidelity set indexes {} points, scores have {n} rows",
                pins.n()
            )));
        }
        if pins.class_count() != p {
            return Err(Error::Shape(format!(
                "fidelity set has {} classes, scores have {p} columns",
                pins.class_count()
            )));
        }
    }
    if m0.len() != p {
        return Err(Error::Shape(format!(
            "starting prices cover {} clusters, scores have {p} columns",
            m0.len()
        )));
    }
    constraints.validate(n)?;

    let mut pinned_class = vec![u32::MAX; n];
    let mut counts = vec![0usize; p];
    if let Some(pins) = pins {
        for i in 0..p {
            for &x in pins.class(i) {
                pinned_class[x as usize] = i as u32;
                counts[i] += 1;
            }
        }
    }
    let free: Vec<usize> = (0..n).filter(|&x| pinned_class[x] == u32::MAX).collect();

    let mut u_sub = DenseMatrix::zeros(free.len(), p);
    for (r, &x) in free.iter().enumerate() {
        for i in 0..p {
            u_sub.set(r, i, u.get(x, i));
        }
    }

    let (os, stats) = match constraints {
        VolumeConstraints::Exact(v) => {
            let mut v_sub = Vec::with_capacity(p);
            for i in 0..p {
                let vi = v[i].checked_sub(counts[i]).ok_or_else(|| {
                    Error::Infeasible(format!(
                        "class {i} has {} labeled points but a volume target of {}",
                        counts[i], v[i]
                    ))
                })?;
                v_sub.push(vi);
            }
            if free.is_empty() {
                empty_solution(m0, p, OrderStatisticKind::Equality)?
            } else {
                solve_equality(&u_sub, &v_sub, m0)?
            }
        }
        VolumeConstraints::Interval { lower, upper } => {
            let mut lo = Vec::with_capacity(p);
            let mut hi = Vec::with_capacity(p);
            for i in 0..p {
                lo.push(lower[i].saturating_sub(counts[i]));
                let ui = upper[i].checked_sub(counts[i]).ok_or_else(|| {
                    Error::Infeasible(format!(
                        "class {i} has {} labeled points but an upper bound of {}",
                        counts[i], upper[i]
                    ))
                })?;
                hi.push(ui);
            }
            if free.is_empty() {
                empty_solution(m0, p, OrderStatisticKind::Interval)?
            } else {
                solve_interval(&u_sub, &lo, &hi, m0)?
            }
        }
    };

    let mut assign = pinned_class;
    for (r, &x) in free.iter().enumerate() {
        assign[x] = os.induced.assign()[r];
    }
    let out = Clustering::new(assign, p)?;
    if !constraints.admits(out.volumes()) {
        return Err(Error::Infeasible(
            "pinned labels alone violate the volume constraints".into(),
        ));
    }
    Ok((out, os, stats))
}

fn empty_solution(
    m0: &[f64],
    p: usize,
    kind: OrderStatisticKind,
) -> Result<(OrderStatistic, SolverStats)> {
    Ok((
        OrderStatistic {
            m: m0.to_vec(),
            induced: Clustering::new(Vec::new(), p)?,
            kind,
        },
        SolverStats {
            outer_iterations: 0,
            heap_ops: 0,
            initial_error: 0,
            wall_time: std::time::Duration::ZERO,
        },
    ))
}

/// Nearest-labeled-class cells: every point joins the class whose
/// labeled set is closest in graph distance, ties to the lowest index.
/// No volume constraints are applied.
pub fn voronoi_init(w: &SparseWeights, y: &FidelitySet, length: EdgeLength) -> Result<Clustering> {
    let dist = graph_distances(w, y, length)?;
    let n = dist.n_rows();
    let p = dist.n_cols();
    let mut assign = Vec::with_capacity(n);
    for x in 0..n {
        let row = dist.row(x);
        let mut best = 0usize;
        for i in 1..p {
            if row[i] < row[best] {
                best = i;
            }
        }
        assign.push(best as u32);
    }
    Clustering::new(assign, p)
}

/// Volume-balanced nearest-class cells: each point x joins the class
/// minimizing `dist(x, Y_i) - m_i`, with the offsets m chosen so the
/// volumes meet the constraints. Labeled points stay in their class.
pub fn laguerre_init(
    w: &SparseWeights,
    y: &FidelitySet,
    constraints: &VolumeConstraints,
    length: EdgeLength,
) -> Result<Clustering> {
    let dist = graph_distances(w, y, length)?;
    let n = dist.n_rows();
    let p = dist.n_cols();
    let mut scores = DenseMatrix::zeros(n, p);
    for x in 0..n {
        for i in 0..p {
            scores.set(x, i, -dist.get(x, i));
        }
    }
    pinned_threshold(&scores, constraints, y)
}

/// Thresholded diffusion of the label indicators: the kernel is applied
/// to the one-hot label matrix and the result is thresholded under the
/// volume constraints, labeled points pinned.
pub fn diffusion_init(
    kernel: &DiffusionKernel,
    y: &FidelitySet,
    constraints: &VolumeConstraints,
) -> Result<Clustering> {
    if y.n() != kernel.len() {
        return Err(Error::Shape(format!(
            "fidelity set indexes {} points, kernel acts on {}",
            y.n(),
            kernel.len()
        )));
    }
    y.require_nonempty()?;
    let diffused = kernel.apply(&y.indicator())?;
    pinned_threshold(&diffused.values, constraints, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{knn_graph, partial_spectrum};
    use crate::kernels::make_rank_k_heat;
    use crate::matrix::CsrMatrix;
    use crate::oracle;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn path_graph(weights: &[f64]) -> SparseWeights {
        let n = weights.len() + 1;
        let mut triplets = Vec::new();
        for (i, &w) in weights.iter().enumerate() {
            triplets.push((i as u32, i as u32 + 1, w));
            triplets.push((i as u32 + 1, i as u32, w));
        }
        SparseWeights::new(CsrMatrix::from_triplets(n, n, triplets).unwrap()).unwrap()
    }

    fn line_cloud(n: usize) -> PointCloud {
        PointCloud::from_rows((0..n).map(|i| vec![i as f64]).collect()).unwrap()
    }

    fn random_connected(seed: u64, n: usize, k: usize) -> (PointCloud, SparseWeights) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut k = k;
        loop {
            let rows = (0..n)
                .map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)])
                .collect();
            let cloud = PointCloud::from_rows(rows).unwrap();
            let w = knn_graph(&cloud, k).unwrap();
            if w.component_count() == 1 {
                return (cloud, w);
            }
            k += 2;
        }
    }

    #[test]
    fn sources_are_at_distance_zero() {
        let (_, w) = random_connected(1, 40, 5);
        let y = FidelitySet::new(vec![vec![3, 17], vec![8], vec![25, 31]], 40).unwrap();
        let dist = graph_distances(&w, &y, EdgeLength::NegLogWeight).unwrap();
        for i in 0..3 {
            for &x in y.class(i) {
                assert_eq!(dist.get(x as usize, i), 0.0);
            }
        }
    }

    #[test]
    fn path_distances_count_euclidean_hops() {
        let n = 5;
        let w = path_graph(&[1.0; 4]);
        let cloud = line_cloud(n);
        let y = FidelitySet::new(vec![vec![0], vec![4]], n).unwrap();
        let dist = graph_distances(&w, &y, EdgeLength::Euclidean(&cloud)).unwrap();
        for x in 0..n {
            assert_eq!(dist.get(x, 0), x as f64);
            assert_eq!(dist.get(x, 1), (n - 1 - x) as f64);
        }
    }

    #[test]
    fn log_lengths_follow_weight_ratios() {
        // Weights 1, e^-1, e^-2 give lengths 0, 1, 2 after dividing by
        // the maximum.
        let w = path_graph(&[1.0, (-1.0f64).exp(), (-2.0f64).exp()]);
        let y = FidelitySet::new(vec![vec![0], vec![3]], 4).unwrap();
        let dist = graph_distances(&w, &y, EdgeLength::NegLogWeight).unwrap();
        let want_from_0 = [0.0, 0.0, 1.0, 3.0];
        for x in 0..4 {
            assert!((dist.get(x, 0) - want_from_0[x]).abs() <= 1e-12);
        }
    }

    #[test]
    fn dijkstra_matches_all_pairs_reference() {
        let (_, w) = random_connected(2, 40, 5);
        let n = w.len();
        let lengths = edge_length_table(&w, EdgeLength::NegLogWeight).unwrap();
        // Floyd-Warshall on the same edge lengths.
        let mut apsp = vec![vec![f64::INFINITY; n]; n];
        for (i, row) in apsp.iter_mut().enumerate() {
            row[i] = 0.0;
        }
        for i in 0..n {
            let (cols, _) = w.matrix().row(i);
            for (e, &j) in cols.iter().enumerate() {
                let j = j as usize;
                apsp[i][j] = apsp[i][j].min(lengths[i][e]);
            }
        }
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    let via = apsp[i][k] + apsp[k][j];
                    if via < apsp[i][j] {
                        apsp[i][j] = via;
                    }
                }
            }
        }
        let y = FidelitySet::new(vec![vec![0, 7], vec![13], vec![21, 33, 39]], n).unwrap();
        let dist = graph_distances(&w, &y, EdgeLength::NegLogWeight).unwrap();
        for x in 0..n {
            for i in 0..3 {
                let want = y
                    .class(i)
                    .iter()
                    .map(|&s| apsp[x][s as usize])
                    .fold(f64::INFINITY, f64::min);
                assert!(
                    (dist.get(x, i) - want).abs() <= 1e-12,
                    "point {x} class {i}: {} vs {want}",
                    dist.get(x, i)
                );
            }
        }
    }

    #[test]
    fn class_distances_satisfy_triangle_inequality() {
        let (_, w) = random_connected(3, 35, 5);
        let n = w.len();
        // Singleton classes turn the class distances into plain
        // point-to-point distances.
        let sources = [4u32, 11, 19, 28];
        let y = FidelitySet::new(sources.iter().map(|&s| vec![s]).collect(), n).unwrap();
        let dist = graph_distances(&w, &y, EdgeLength::NegLogWeight).unwrap();
        for x in 0..n {
            for a in 0..sources.len() {
                for b in 0..sources.len() {
                    let via = dist.get(x, b) + dist.get(sources[b] as usize, a);
                    assert!(dist.get(x, a) <= via + 1e-9);
                }
            }
        }
    }

    #[test]
    fn unreachable_points_report_components() {
        // Two disjoint edges.
        let triplets = vec![(0u32, 1u32, 1.0), (1, 0, 1.0), (2, 3, 1.0), (3, 2, 1.0)];
        let w = SparseWeights::new(CsrMatrix::from_triplets(4, 4, triplets).unwrap()).unwrap();
        let y = FidelitySet::new(vec![vec![0], vec![1]], 4).unwrap();
        match graph_distances(&w, &y, EdgeLength::NegLogWeight) {
            Err(Error::Disconnected { components }) => assert_eq!(components, 2),
            other => panic!("expected disconnected error, got {other:?}"),
        }
    }

    #[test]
    fn empty_class_is_rejected() {
        let (_, w) = random_connected(4, 20, 4);
        let y = FidelitySet::new(vec![vec![0], vec![]], 20).unwrap();
        assert!(matches!(
            graph_distances(&w, &y, EdgeLength::NegLogWeight),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn fidelity_set_validation() {
        assert!(FidelitySet::new(vec![vec![0], vec![0]], 5).is_err());
        assert!(FidelitySet::new(vec![vec![0], vec![9]], 5).is_err());
        assert!(FidelitySet::new(vec![vec![0, 0], vec![1]], 5).is_err());
        assert!(FidelitySet::new(vec![vec![0]], 5).is_err());
        let y = FidelitySet::new(vec![vec![2, 0], vec![1]], 5).unwrap();
        assert_eq!(y.class(0), &[0, 2]);
        assert_eq!(y.total_labeled(), 3);
    }

    #[test]
    fn indicator_rows_are_one_hot_or_zero() {
        let y = FidelitySet::new(vec![vec![1], vec![3]], 5).unwrap();
        let delta = y.indicator();
        for x in 0..5 {
            let row = delta.row(x);
            let sum: f64 = row.iter().sum();
            match x {
                1 => assert_eq!((row[0], row[1]), (1.0, 0.0)),
                3 => assert_eq!((row[0], row[1]), (0.0, 1.0)),
                _ => assert_eq!(sum, 0.0),
            }
        }
    }

    #[test]
    fn label_file_roundtrip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        std::fs::write(&path, "# id,class\n3,1\n7,0\n1, 1\n").unwrap();
        let y = FidelitySet::from_label_file(&path, 10, 2).unwrap();
        assert_eq!(y.class(0), &[7]);
        assert_eq!(y.class(1), &[1, 3]);

        std::fs::write(&path, "3,1\nnope,0\n").unwrap();
        match FidelitySet::from_label_file(&path, 10, 2) {
            Err(Error::FormatLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected line error, got {other:?}"),
        }
        std::fs::write(&path, "3,7\n").unwrap();
        assert!(matches!(
            FidelitySet::from_label_file(&path, 10, 2),
            Err(Error::FormatLine { .. })
        ));
    }

    #[test]
    fn sampled_fidelity_sets_are_valid_and_reproducible() {
        let labels: Vec<u32> = (0..60).map(|i| (i % 3) as u32).collect();
        let a = FidelitySet::sample(&labels, 3, 4, 9).unwrap();
        let b = FidelitySet::sample(&labels, 3, 4, 9).unwrap();
        for i in 0..3 {
            assert_eq!(a.class(i), b.class(i));
            assert_eq!(a.class(i).len(), 4);
            for &x in a.class(i) {
                assert_eq!(labels[x as usize], i as u32);
            }
        }
        let c = FidelitySet::sample(&labels, 3, 4, 10).unwrap();
        assert!((0..3).any(|i| a.class(i) != c.class(i)));
        assert!(FidelitySet::sample(&labels, 3, 30, 0).is_err());
    }

    #[test]
    fn symmetric_line_splits_in_half() {
        let n = 6;
        let w = path_graph(&[1.0; 5]);
        let cloud = line_cloud(n);
        let y = FidelitySet::new(vec![vec![0], vec![5]], n).unwrap();
        let constraints = VolumeConstraints::Exact(vec![3, 3]);
        let c = laguerre_init(&w, &y, &constraints, EdgeLength::Euclidean(&cloud)).unwrap();
        assert_eq!(c.assign(), &[0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn laguerre_meets_volumes_and_keeps_labels() {
        let (cloud, w) = random_connected(5, 50, 5);
        let y = FidelitySet::new(vec![vec![0, 1], vec![10, 11], vec![20, 21]], 50).unwrap();
        for length in [EdgeLength::NegLogWeight, EdgeLength::Euclidean(&cloud)] {
            let constraints = VolumeConstraints::Exact(vec![20, 15, 15]);
            let c = laguerre_init(&w, &y, &constraints, length).unwrap();
            assert_eq!(c.volumes(), &[20, 15, 15]);
            for i in 0..3 {
                for &x in y.class(i) {
                    assert_eq!(c.assign()[x as usize], i as u32);
                }
            }
        }
    }

    #[test]
    fn unconstrained_laguerre_reduces_to_voronoi() {
        let (_, w) = random_connected(6, 45, 5);
        let y = FidelitySet::new(vec![vec![2], vec![17], vec![40]], 45).unwrap();
        let voronoi = voronoi_init(&w, &y, EdgeLength::NegLogWeight).unwrap();
        let constraints = VolumeConstraints::Exact(voronoi.volumes().to_vec());
        let laguerre = laguerre_init(&w, &y, &constraints, EdgeLength::NegLogWeight).unwrap();
        assert_eq!(voronoi.assign(), laguerre.assign());
    }

    #[test]
    fn laguerre_respects_interval_bounds() {
        let (_, w) = random_connected(7, 40, 5);
        let y = FidelitySet::new(vec![vec![0], vec![39]], 40).unwrap();
        let constraints = VolumeConstraints::Interval {
            lower: vec![15, 15],
            upper: vec![25, 25],
        };
        let c = laguerre_init(&w, &y, &constraints, EdgeLength::NegLogWeight).unwrap();
        assert!(constraints.admits(c.volumes()));
    }

    #[test]
    fn infeasible_pinning_is_reported() {
        let (_, w) = random_connected(8, 20, 4);
        let y = FidelitySet::new(vec![vec![0, 1, 2], vec![10]], 20).unwrap();
        let constraints = VolumeConstraints::Exact(vec![2, 18]);
        assert!(matches!(
            laguerre_init(&w, &y, &constraints, EdgeLength::NegLogWeight),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn diffusion_init_splits_two_blobs_like_dense_reference() {
        // Two Gaussian blobs; one label in each. The full-rank kernel
        // must split them along the gap, and the result must agree
        // with thresholding the dense reference semigroup.
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let half = 30;
        let n = 2 * half;
        let mut rows = Vec::with_capacity(n);
        for &cx in &[-1.2, 1.2] {
            for _ in 0..half {
                rows.push(vec![
                    cx + 0.35 * rng.sample::<f64, _>(rand_distr::StandardNormal),
                    0.35 * rng.sample::<f64, _>(rand_distr::StandardNormal),
                ]);
            }
        }
        let cloud = PointCloud::from_rows(rows).unwrap();
        let mut k = 8;
        let w = loop {
            let w = knn_graph(&cloud, k).unwrap();
            if w.component_count() == 1 {
                break w;
            }
            k += 2;
        };
        let h = 1.0;
        let spectrum = partial_spectrum(&w, n).unwrap();
        let kernel = make_rank_k_heat(&spectrum, w.degrees(), h, n).unwrap();
        let y = FidelitySet::new(vec![vec![0], vec![half as u32]], n).unwrap();
        let constraints = VolumeConstraints::Exact(vec![half, half]);
        let c = diffusion_init(&kernel, &y, &constraints).unwrap();
        assert_eq!(c.volumes(), &[half, half]);
        for x in 0..n {
            let want = (x >= half) as u32;
            assert_eq!(c.assign()[x], want, "point {x}");
        }

        let dense = oracle::dense_heat(w.matrix(), h).unwrap();
        let delta = y.indicator();
        let mut u = DenseMatrix::zeros(n, 2);
        for x in 0..n {
            for i in 0..2 {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += dense.get(x, j) * delta.get(j, i);
                }
                u.set(x, i, acc);
            }
        }
        let reference = pinned_threshold(&u, &constraints, &y).unwrap();
        assert_eq!(reference.assign(), c.assign());
    }

    #[test]
    fn pinned_threshold_with_no_free_points() {
        let u = DenseMatrix::zeros(2, 2);
        let y = FidelitySet::new(vec![vec![0], vec![1]], 2).unwrap();
        let c = pinned_threshold(&u, &VolumeConstraints::Exact(vec![1, 1]), &y).unwrap();
        assert_eq!(c.assign(), &[0, 1]);
    }
}
