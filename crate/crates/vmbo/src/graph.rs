//! Similarity graphs over point clouds: k-nearest-neighbor search with
//! locally scaled weights, the random-walk Laplacian, and its partial
//! spectrum.
//!
//! Weights follow `w(x, y) = exp(-4 |x - y|^2 / s(x)^2)` where `s(x)` is
//! the distance from `x` to its k-th nearest neighbor, then the matrix
//! is symmetrized as `(W + W^T) / 2`. Eigenpairs are computed on the
//! symmetrically normalized operator and conjugated back, so the
//! returned vectors are right-eigenvectors of `I - D^{-1} W`,
//! orthonormal in the degree-weighted inner product.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::matrix::{CsrMatrix, DenseMatrix};
use crate::{Error, Result};

/// Feature vectors for `N` points, one row per point. Point ids are the
/// row indices `0..N-1` and stay stable through every operation.
#[derive(Clone, Debug)]
pub struct PointCloud {
    points: DenseMatrix,
}

impl PointCloud {
    pub fn new(points: DenseMatrix) -> Result<Self> {
        if points.n_rows() == 0 || points.n_cols() == 0 {
            return Err(Error::Parameter(format!(
                "point cloud must be nonempty, got {}x{}",
                points.n_rows(),
                points.n_cols()
            )));
        }
        if points.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter(
                "point cloud contains non-finite coordinates".into(),
            ));
        }
        Ok(PointCloud { points })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::Parameter("point cloud must be nonempty".into()));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Shape(
                "all points must have the same dimension".into(),
            ));
        }
        let mut data = Vec::with_capacity(n * d);
        for row in rows {
            data.extend_from_slice(&row);
        }
        PointCloud::new(DenseMatrix::from_vec(n, d, data))
    }

    pub fn len(&self) -> usize {
        self.points.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.points.n_cols()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn points(&self) -> &DenseMatrix {
        &self.points
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Symmetric nonnegative edge weights with cached row sums (degrees).
#[derive(Clone, Debug)]
pub struct SparseWeights {
    matrix: CsrMatrix,
    degrees: Vec<f64>,
}

impl SparseWeights {
    /// Wraps a weight matrix, checking squareness, nonnegativity, and
    /// symmetry to `1e-12`.
    pub fn new(matrix: CsrMatrix) -> Result<Self> {
        if matrix.n_rows() != matrix.n_cols() {
            return Err(Error::Shape(format!(
                "weight matrix must be square, got {}x{}",
                matrix.n_rows(),
                matrix.n_cols()
            )));
        }
        if matrix.values().iter().any(|&w| !w.is_finite() || w < 0.0) {
            return Err(Error::Parameter(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let transpose = matrix.transpose();
        for i in 0..matrix.n_rows() {
            let (cols_a, vals_a) = matrix.row(i);
            let (cols_b, vals_b) = transpose.row(i);
            let asym = cols_a != cols_b
                || vals_a
                    .iter()
                    .zip(vals_b)
                    .any(|(a, b)| (a - b).abs() > 1e-12);
            if asym {
                return Err(Error::Parameter(format!(
                    "weight matrix is not symmetric at row {i}"
                )));
            }
        }
        let degrees = matrix.row_sums();
        Ok(SparseWeights { matrix, degrees })
    }

    pub fn len(&self) -> usize {
        self.matrix.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.n_rows() == 0
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Index of a vertex with zero degree, if any.
    pub fn isolated_vertex(&self) -> Option<usize> {
        self.degrees.iter().position(|&d| d <= 0.0)
    }

    /// Number of connected components, following edges with positive
    /// weight.
    pub fn component_count(&self) -> usize {
        let n = self.len();
        let mut seen = vec![false; n];
        let mut components = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(v) = stack.pop() {
                let (cols, vals) = self.matrix.row(v);
                for (&c, &w) in cols.iter().zip(vals) {
                    let c = c as usize;
                    if w > 0.0 && !seen[c] {
                        seen[c] = true;
                        stack.push(c);
                    }
                }
            }
        }
        components
    }

    /// Writes the weights as a binary triplet stream: the magic header,
    /// the vertex count, the entry count, then `(row: u32, col: u32,
    /// weight: f64)` records, all little-endian.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut out = BufWriter::new(file);
        let write =
            |r: std::io::Result<()>| r.map_err(|e| Error::io(path.display().to_string(), e));
        write(out.write_all(WEIGHTS_MAGIC))?;
        write(out.write_u32::<LittleEndian>(self.len() as u32))?;
        write(out.write_u64::<LittleEndian>(self.matrix.nnz() as u64))?;
        for i in 0..self.len() {
            let (cols, vals) = self.matrix.row(i);
            for (&c, &w) in cols.iter().zip(vals) {
                write(out.write_u32::<LittleEndian>(i as u32))?;
                write(out.write_u32::<LittleEndian>(c))?;
                write(out.write_f64::<LittleEndian>(w))?;
            }
        }
        write(out.flush())
    }

    /// Reads a weight file written by [`SparseWeights::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut input = BufReader::new(file);
        let fail = |offset: u64, reason: &str| Error::Format {
            path: path.display().to_string(),
            offset,
            reason: reason.into(),
        };
        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|_| fail(0, "file too short for magic header"))?;
        if &magic != WEIGHTS_MAGIC {
            return Err(fail(0, "bad magic header"));
        }
        let n = input
            .read_u32::<LittleEndian>()
            .map_err(|_| fail(8, "missing vertex count"))? as usize;
        let nnz = input
            .read_u64::<LittleEndian>()
            .map_err(|_| fail(12, "missing entry count"))? as usize;
        let mut triplets = Vec::with_capacity(nnz);
        for e in 0..nnz {
            let offset = 20 + 16 * e as u64;
            let row = input
                .read_u32::<LittleEndian>()
                .map_err(|_| fail(offset, "truncated entry"))?;
            let col = input
                .read_u32::<LittleEndian>()
                .map_err(|_| fail(offset + 4, "truncated entry"))?;
            let weight = input
                .read_f64::<LittleEndian>()
                .map_err(|_| fail(offset + 8, "truncated entry"))?;
            if row as usize >= n || col as usize >= n {
                return Err(fail(offset, "entry index out of range"));
            }
            if !weight.is_finite() || weight < 0.0 {
                return Err(fail(offset + 8, "weight not finite and nonnegative"));
            }
            triplets.push((row, col, weight));
        }
        let matrix = CsrMatrix::from_triplets(n, n, triplets)?;
        SparseWeights::new(matrix)
    }
}

const WEIGHTS_MAGIC: &[u8; 8] = b"VMBO-W1\0";

/// Exact k-nearest-neighbor searches switch from brute force to a
/// space-partitioning tree at this point count.
const BRUTE_FORCE_LIMIT: usize = 20_000;

/// Builds the symmetrized, locally scaled k-nearest-neighbor weight
/// matrix over the cloud.
///
/// Each point's scale is its distance to the k-th nearest neighbor;
/// ties at that distance are all included, so rows can hold more than
/// `k` entries. When duplicates force a zero scale the smallest
/// positive distance to any other point is used instead and a warning
/// is printed.
pub fn knn_graph(cloud: &PointCloud, k: usize) -> Result<SparseWeights> {
    let n = cloud.len();
    if k == 0 {
        return Err(Error::Parameter("k must be positive".into()));
    }
    if k >= n {
        return Err(Error::Parameter(format!(
            "k = {k} must be smaller than the point count {n}"
        )));
    }
    let neighborhoods: Vec<Vec<(u32, f64)>> = if n < BRUTE_FORCE_LIMIT {
        (0..n)
            .into_par_iter()
            .map(|x| brute_force_neighbors(cloud, x, k))
            .collect()
    } else {
        let tree = KdTree::build(cloud);
        (0..n)
            .into_par_iter()
            .map(|x| tree.neighbors(x, k))
            .collect()
    };

    let mut degenerate = 0usize;
    let mut triplets = Vec::new();
    for (x, hood) in neighborhoods.iter().enumerate() {
        let scale2 = hood.last().map_or(0.0, |&(_, d2)| d2);
        let scale2 = if scale2 > 0.0 {
            scale2
        } else {
            degenerate += 1;
            smallest_positive_distance2(cloud, x).unwrap_or(1.0)
        };
        for &(y, d2) in hood {
            triplets.push((x as u32, y, (-4.0 * d2 / scale2).exp()));
        }
    }
    if degenerate > 0 {
        eprintln!(
            "warning: {degenerate} point(s) coincide with their {k} nearest neighbors; \
             using the smallest positive distance as their scale"
        );
    }
    let w = CsrMatrix::from_triplets(n, n, triplets)?;
    let symmetric = CsrMatrix::linear_combination(0.5, &w, 0.5, &w.transpose());
    SparseWeights::new(symmetric)
}

/// Neighbors of `x` sorted by (distance, id), self excluded, including
/// every point tied with the k-th distance. The k-th entry's distance
/// is the local scale.
fn brute_force_neighbors(cloud: &PointCloud, x: usize, k: usize) -> Vec<(u32, f64)> {
    let px = cloud.point(x);
    let mut dists: Vec<(f64, u32)> = (0..cloud.len())
        .filter(|&y| y != x)
        .map(|y| (squared_distance(px, cloud.point(y)), y as u32))
        .collect();
    dists.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let kth = dists[k - 1].0;
    let mut hood: Vec<(u32, f64)> = dists
        .into_iter()
        .filter(|&(d2, _)| d2 <= kth)
        .map(|(d2, y)| (y, d2))
        .collect();
    hood.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    hood
}

fn smallest_positive_distance2(cloud: &PointCloud, x: usize) -> Option<f64> {
    let px = cloud.point(x);
    let mut best: Option<f64> = None;
    for y in 0..cloud.len() {
        if y == x {
            continue;
        }
        let d2 = squared_distance(px, cloud.point(y));
        if d2 > 0.0 && best.is_none_or(|b| d2 < b) {
            best = Some(d2);
        }
    }
    best
}

/// Static balanced tree over point indices, split at the median of the
/// widest-spread coordinate. Queries are exact.
struct KdTree<'a> {
    cloud: &'a PointCloud,
    nodes: Vec<KdNode>,
    root: i32,
}

struct KdNode {
    point: u32,
    axis: u32,
    left: i32,
    right: i32,
}

impl<'a> KdTree<'a> {
    fn build(cloud: &'a PointCloud) -> Self {
        let mut ids: Vec<u32> = (0..cloud.len() as u32).collect();
        let mut tree = KdTree {
            cloud,
            nodes: Vec::with_capacity(cloud.len()),
            root: -1,
        };
        tree.root = tree.build_node(&mut ids);
        tree
    }

    fn build_node(&mut self, ids: &mut [u32]) -> i32 {
        if ids.is_empty() {
            return -1;
        }
        let axis = self.widest_axis(ids);
        let mid = ids.len() / 2;
        ids.sort_unstable_by(|&a, &b| {
            let ca = self.cloud.point(a as usize)[axis];
            let cb = self.cloud.point(b as usize)[axis];
            ca.total_cmp(&cb).then(a.cmp(&b))
        });
        let point = ids[mid];
        let id = self.nodes.len() as i32;
        self.nodes.push(KdNode {
            point,
            axis: axis as u32,
            left: -1,
            right: -1,
        });
        let (lo, hi) = ids.split_at_mut(mid);
        let left = self.build_node(lo);
        let right = self.build_node(&mut hi[1..]);
        self.nodes[id as usize].left = left;
        self.nodes[id as usize].right = right;
        id
    }

    fn widest_axis(&self, ids: &[u32]) -> usize {
        let d = self.cloud.dim();
        let mut best = (0usize, f64::NEG_INFINITY);
        for axis in 0..d {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in ids {
                let c = self.cloud.point(i as usize)[axis];
                lo = lo.min(c);
                hi = hi.max(c);
            }
            if hi - lo > best.1 {
                best = (axis, hi - lo);
            }
        }
        best.0
    }

    /// Same contract as [`brute_force_neighbors`].
    fn neighbors(&self, x: usize, k: usize) -> Vec<(u32, f64)> {
        let query = self.cloud.point(x);
        // Pass 1: the k smallest (distance, id) pairs, self excluded.
        let mut top: Vec<(f64, u32)> = Vec::with_capacity(k + 1);
        self.collect_k(self.root, query, x as u32, k, &mut top);
        top.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let kth = top[k - 1].0;
        // Pass 2: everything within the k-th distance, to honor ties.
        let mut hood = Vec::with_capacity(k);
        self.collect_radius(self.root, query, x as u32, kth, &mut hood);
        hood.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        hood
    }

    fn collect_k(&self, node: i32, query: &[f64], skip: u32, k: usize, top: &mut Vec<(f64, u32)>) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        if n.point != skip {
            let d2 = squared_distance(query, self.cloud.point(n.point as usize));
            let entry = (d2, n.point);
            if top.len() < k {
                top.push(entry);
            } else {
                let (worst_pos, &worst) = top
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1 .0.total_cmp(&b.1 .0).then(a.1 .1.cmp(&b.1 .1)))
                    .unwrap();
                if entry
                    .0
                    .total_cmp(&worst.0)
                    .then(entry.1.cmp(&worst.1))
                    .is_lt()
                {
                    top[worst_pos] = entry;
                }
            }
        }
        let axis = n.axis as usize;
        let diff = query[axis] - self.cloud.point(n.point as usize)[axis];
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.collect_k(near, query, skip, k, top);
        let bound = top.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
        if top.len() < k || diff * diff <= bound {
            self.collect_k(far, query, skip, k, top);
        }
    }

    fn collect_radius(
        &self,
        node: i32,
        query: &[f64],
        skip: u32,
        radius2: f64,
        out: &mut Vec<(u32, f64)>,
    ) {
        if node < 0 {
            return;
        }
        let n = &self.nodes[node as usize];
        if n.point != skip {
            let d2 = squared_distance(query, self.cloud.point(n.point as usize));
            if d2 <= radius2 {
                out.push((n.point, d2));
            }
        }
        let axis = n.axis as usize;
        let diff = query[axis] - self.cloud.point(n.point as usize)[axis];
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.collect_radius(near, query, skip, radius2, out);
        if diff * diff <= radius2 {
            self.collect_radius(far, query, skip, radius2, out);
        }
    }
}

/// The operator `I - D^{-1} W` exposed as a sparse multiply.
#[derive(Clone, Debug)]
pub struct RandomWalkLaplacian {
    walk: CsrMatrix,
}

impl RandomWalkLaplacian {
    pub fn new(w: &SparseWeights) -> Result<Self> {
        if let Some(v) = w.isolated_vertex() {
            return Err(Error::Parameter(format!(
                "vertex {v} is isolated (zero degree)"
            )));
        }
        let inv: Vec<f64> = w.degrees().iter().map(|d| 1.0 / d).collect();
        Ok(RandomWalkLaplacian {
            walk: w.matrix().row_scaled(&inv),
        })
    }

    pub fn len(&self) -> usize {
        self.walk.n_rows()
    }

    pub fn is_empty(&self) -> bool {
        self.walk.n_rows() == 0
    }

    /// The row-stochastic transition matrix `D^{-1} W`.
    pub fn walk_matrix(&self) -> &CsrMatrix {
        &self.walk
    }

    /// `y = x - D^{-1} W x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.walk.mul_vec(x);
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi = xi - *yi;
        }
        y
    }
}

pub fn random_walk_laplacian(w: &SparseWeights) -> Result<RandomWalkLaplacian> {
    RandomWalkLaplacian::new(w)
}

/// The `K` smallest eigenpairs of the random-walk Laplacian.
#[derive(Clone, Debug)]
pub struct Spectrum {
    /// Ascending, nonnegative.
    pub eigenvalues: Vec<f64>,
    /// One column per pair, orthonormal in the degree-weighted inner
    /// product.
    pub eigenvectors: DenseMatrix,
    /// True when the pairs were computed on the symmetrically
    /// normalized operator and conjugated back (always the case here;
    /// kept so downstream code can assert the convention).
    pub symmetric_basis: bool,
}

impl Spectrum {
    pub fn count(&self) -> usize {
        self.eigenvalues.len()
    }
}

const DENSE_SPECTRUM_LIMIT: usize = 600;
const SPECTRUM_TOLERANCE: f64 = 1e-6;

/// Computes the `K` smallest eigenpairs of `I - D^{-1} W`.
///
/// The graph must be connected. Decomposition runs on the symmetric
/// normalization `I - D^{-1/2} W D^{-1/2}` (dense below
/// 600 vertices, iterative with full reorthogonalization above) and
/// the vectors are conjugated back by `D^{-1/2}`.
pub fn partial_spectrum(w: &SparseWeights, k: usize) -> Result<Spectrum> {
    let n = w.len();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!(
            "requested {k} eigenpairs of a {n}-vertex graph"
        )));
    }
    if let Some(v) = w.isolated_vertex() {
        return Err(Error::Parameter(format!(
            "vertex {v} is isolated (zero degree)"
        )));
    }
    let components = w.component_count();
    if components != 1 {
        return Err(Error::Disconnected { components });
    }

    let inv_sqrt: Vec<f64> = w.degrees().iter().map(|d| 1.0 / d.sqrt()).collect();
    let b = normalized_adjacency(w, &inv_sqrt)?;

    let (mut eigenvalues, phi) = if n <= DENSE_SPECTRUM_LIMIT {
        dense_symmetric_pairs(&b, k)
    } else {
        lanczos_symmetric_pairs(&b, k)?
    };

    // Conjugate back: v = D^{-1/2} phi, with a deterministic sign.
    let mut eigenvectors = DenseMatrix::zeros(n, k);
    for c in 0..k {
        let col: Vec<f64> = (0..n).map(|i| phi.get(i, c) * inv_sqrt[i]).collect();
        let lead = (0..n)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()).then(b.cmp(&a)))
            .unwrap();
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            eigenvectors.set(i, c, sign * col[i]);
        }
    }
    for lambda in eigenvalues.iter_mut() {
        debug_assert!(*lambda >= -1e-8, "normalized Laplacian eigenvalue {lambda}");
        *lambda = lambda.max(0.0);
    }

    let spectrum = Spectrum {
        eigenvalues,
        eigenvectors,
        symmetric_basis: true,
    };
    verify_spectrum(w, &spectrum)?;
    Ok(spectrum)
}

/// `D^{-1/2} W D^{-1/2}`, averaged with its transpose to remove
/// floating-point asymmetry.
fn normalized_adjacency(w: &SparseWeights, inv_sqrt: &[f64]) -> Result<CsrMatrix> {
    let n = w.len();
    let mut triplets = Vec::with_capacity(w.matrix().nnz());
    for i in 0..n {
        let (cols, vals) = w.matrix().row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            triplets.push((i as u32, j, v * inv_sqrt[i] * inv_sqrt[j as usize]));
        }
    }
    let b = CsrMatrix::from_triplets(n, n, triplets)?;
    Ok(CsrMatrix::linear_combination(0.5, &b, 0.5, &b.transpose()))
}

/// Smallest `k` eigenpairs of `I - B` by a dense symmetric solve.
fn dense_symmetric_pairs(b: &CsrMatrix, k: usize) -> (Vec<f64>, DenseMatrix) {
    let n = b.n_rows();
    let mut dense = nalgebra::DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        let (cols, vals) = b.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            dense[(i, j as usize)] -= v;
        }
    }
    let eig = nalgebra::linalg::SymmetricEigen::new(dense);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut values = Vec::with_capacity(k);
    let mut vectors = DenseMatrix::zeros(n, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        values.push(eig.eigenvalues[idx]);
        for i in 0..n {
            vectors.set(i, c, eig.eigenvectors[(i, idx)]);
        }
    }
    (values, vectors)
}

/// Smallest `k` eigenpairs of `I - B` via a Krylov iteration on the
/// shifted operator `I + B`, whose largest eigenvalues correspond to
/// them. Full reorthogonalization keeps the basis clean.
fn lanczos_symmetric_pairs(b: &CsrMatrix, k: usize) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = b.n_rows();
    let mut steps = (2 * k + 32).max(96).min(n);
    // Tightly clustered eigenvalues (degenerate groups on symmetric
    // geometries) converge only once the subspace spans the whole
    // cluster, so keep enlarging until the Krylov space is exhausted;
    // at `steps == n` the factorization is exact up to roundoff.
    loop {
        let (values, vectors) = lanczos_run(b, k, steps)?;
        let residual = symmetric_residual(b, &values, &vectors);
        if residual <= SPECTRUM_TOLERANCE {
            return Ok((values, vectors));
        }
        if steps == n {
            return Err(Error::EigenNonConvergence {
                residual,
                tolerance: SPECTRUM_TOLERANCE,
                iterations: steps,
            });
        }
        steps = (steps * 2).min(n);
    }
}

/// Worst relative residual `|(I - B) v - lambda v| / |v|` over pairs.
fn symmetric_residual(b: &CsrMatrix, values: &[f64], vectors: &DenseMatrix) -> f64 {
    let n = b.n_rows();
    let mut worst = 0.0f64;
    for (c, &lambda) in values.iter().enumerate() {
        let v: Vec<f64> = (0..n).map(|i| vectors.get(i, c)).collect();
        let bv = b.mul_vec(&v);
        let mut err = 0.0;
        let mut norm = 0.0;
        for i in 0..n {
            let r = (v[i] - bv[i]) - lambda * v[i];
            err += r * r;
            norm += v[i] * v[i];
        }
        worst = worst.max((err / norm.max(1e-300)).sqrt());
    }
    worst
}

fn lanczos_run(b: &CsrMatrix, k: usize, steps: usize) -> Result<(Vec<f64>, DenseMatrix)> {
    let n = b.n_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut v);
    let mut basis: Vec<Vec<f64>> = vec![v];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();

    for j in 0..steps {
        let vj = &basis[j];
        // w = (I + B) v_j
        let mut w = b.mul_vec(vj);
        for i in 0..n {
            w[i] += vj[i];
        }
        let alpha = dot(vj, &w);
        alphas.push(alpha);
        for i in 0..n {
            w[i] -= alpha * vj[i];
        }
        if j > 0 {
            let beta_prev = betas[j - 1];
            let vp = &basis[j - 1];
            for i in 0..n {
                w[i] -= beta_prev * vp[i];
            }
        }
        // Full reorthogonalization, two passes.
        for _ in 0..2 {
            for u in &basis {
                let c = dot(u, &w);
                for i in 0..n {
                    w[i] -= c * u[i];
                }
            }
        }
        let beta = dot(&w, &w).sqrt();
        if beta < 1e-12 || basis.len() == n {
            break;
        }
        betas.push(beta);
        for wi in w.iter_mut() {
            *wi /= beta;
        }
        basis.push(w);
    }

    let m = alphas.len();
    if m < k {
        return Err(Error::EigenNonConvergence {
            residual: f64::INFINITY,
            tolerance: SPECTRUM_TOLERANCE,
            iterations: m,
        });
    }
    let mut tri = nalgebra::DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        tri[(j, j)] = alphas[j];
        if j + 1 < m {
            tri[(j, j + 1)] = betas[j];
            tri[(j + 1, j)] = betas[j];
        }
    }
    let eig = nalgebra::linalg::SymmetricEigen::new(tri);
    // Largest of I + B first <=> smallest of I - B.
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut values = Vec::with_capacity(k);
    let mut vectors = DenseMatrix::zeros(n, k);
    for (c, &idx) in order.iter().take(k).enumerate() {
        values.push(2.0 - eig.eigenvalues[idx]);
        for i in 0..n {
            let mut acc = 0.0;
            for (j, base) in basis.iter().enumerate().take(m) {
                acc += base[i] * eig.eigenvectors[(j, idx)];
            }
            vectors.set(i, c, acc);
        }
        // Ritz vectors of an orthonormal basis are unit; renormalize to
        // shed rounding.
        let mut col: Vec<f64> = (0..n).map(|i| vectors.get(i, c)).collect();
        normalize(&mut col);
        for i in 0..n {
            vectors.set(i, c, col[i]);
        }
    }
    // Ascending eigenvalues.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut sorted_vectors = DenseMatrix::zeros(n, k);
    for (c, &idx) in order.iter().enumerate() {
        for i in 0..n {
            sorted_vectors.set(i, c, vectors.get(i, idx));
        }
    }
    Ok((sorted_values, sorted_vectors))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let norm = dot(v, v).sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Confirms the advertised residual bound in the random-walk operator.
fn verify_spectrum(w: &SparseWeights, spectrum: &Spectrum) -> Result<()> {
    let rw = RandomWalkLaplacian::new(w)?;
    let n = w.len();
    for (c, &lambda) in spectrum.eigenvalues.iter().enumerate() {
        let v: Vec<f64> = (0..n).map(|i| spectrum.eigenvectors.get(i, c)).collect();
        let lap = rw.apply(&v);
        let mut err = 0.0;
        let mut norm = 0.0;
        for i in 0..n {
            let r = lap[i] - lambda * v[i];
            err += r * r;
            norm += v[i] * v[i];
        }
        if err.sqrt() > SPECTRUM_TOLERANCE * norm.sqrt() {
            return Err(Error::EigenNonConvergence {
                residual: err.sqrt() / norm.sqrt().max(1e-300),
                tolerance: SPECTRUM_TOLERANCE,
                iterations: 0,
            });
        }
    }
    Ok(())
}
