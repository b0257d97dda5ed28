//! Diffusion operators for the clustering scheme: a spectral low-rank
//! heat kernel, a normalized positive power series, and the squared
//! random-walk family, each carrying verified structural flags and an
//! energy scaling.
//!
//! Every kernel acts on N-vectors (and columnwise on N×P matrices).
//! Construction ends with randomized probes that confirm the declared
//! flags: symmetry in the degree-weighted inner product, preservation
//! of the all-ones vector, and positive semidefiniteness in the
//! kernel's natural inner product.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::graph::{RandomWalkLaplacian, SparseWeights, Spectrum};
use crate::matrix::{CsrMatrix, DenseMatrix};
use crate::osstat::Clustering;
use crate::{Error, Result};

/// Structural properties a kernel declares and has verified.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelFlags {
    /// `<Ax, y>_D = <x, Ay>_D` with the degree-weighted inner product.
    pub symmetric_in_degree_inner_product: bool,
    /// `A 1 = 1`.
    pub conserves_mass: bool,
    /// `<x, Ax> >= 0` in the kernel's natural inner product.
    pub positive_semidefinite: bool,
}

/// Which operator a [`DiffusionKernel`] implements.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelKind {
    /// Spectral truncation of the heat semigroup to the leading `rank`
    /// eigenpairs.
    RankKHeat { rank: usize, h: f64 },
    /// `(sum_j h^j/j! P^j) / (sum_j h^j/j!)` with `P` the random walk
    /// matrix, all coefficients positive.
    PositiveTaylor { order: usize, h: f64 },
    /// `P^T P`.
    SquaredWalk,
    /// `(P^T P)^2`.
    SquaredWalkTwice,
    /// `P^T P - shift * I`.
    ShiftedSquaredWalk { shift: f64 },
    /// Plain truncated exponential series with alternating signs.
    /// Diagnostic only: not positive semidefinite in general.
    TruncatedExponential { order: usize, h: f64 },
}

/// Result of diffusing labels: the matrix `A(h) X`, tagged with the
/// time step and the kernel that produced it.
#[derive(Clone, Debug)]
pub struct DiffusedLabels {
    pub values: DenseMatrix,
    pub h: f64,
    pub kernel_id: String,
}

enum Operator {
    /// `A x = sum_k weights[k] * basis[:,k] * <basis[:,k], x>_D`, with
    /// `dual[:,k] = D basis[:,k]`.
    Spectral {
        weights: Vec<f64>,
        basis: DenseMatrix,
        dual: DenseMatrix,
    },
    /// Explicit sparse matrix plus its transpose for column access.
    Materialized { rows: CsrMatrix, cols: CsrMatrix },
    /// `A x = sum_j coeffs[j] * walk^j x`, evaluated iteratively.
    PowerChain { walk: CsrMatrix, coeffs: Vec<f64> },
    /// `A x = (walk^T walk)^repeat x - shift * x`.
    SquaredChain {
        walk: CsrMatrix,
        walk_t: CsrMatrix,
        repeat: usize,
        shift: f64,
    },
}

/// A diffusion operator with verified flags and an energy scaling.
pub struct DiffusionKernel {
    kind: KernelKind,
    flags: KernelFlags,
    scaling: f64,
    h: f64,
    n: usize,
    degrees: Vec<f64>,
    op: Operator,
    id: String,
}

/// Sparse matrices built from walk powers are kept materialized only
/// below this entry count.
const MATERIALIZE_NNZ_LIMIT: usize = 20_000_000;
const FLAG_TOLERANCE: f64 = 1e-8;
const FLAG_PROBES: usize = 20;

/// Spectral heat kernel from the leading eigenpairs.
///
/// The `degrees` must be the ones the spectrum was computed with. The
/// leading pair is replaced by the exact constant vector at eigenvalue
/// zero and the rest are re-orthogonalized against it, so mass is
/// conserved to machine precision rather than to the eigensolver
/// tolerance.
pub fn make_rank_k_heat(
    spectrum: &Spectrum,
    degrees: &[f64],
    h: f64,
    rank: usize,
) -> Result<DiffusionKernel> {
    let n = degrees.len();
    if spectrum.eigenvectors.n_rows() != n {
        return Err(Error::Shape(format!(
            "spectrum over {} vertices, degrees over {n}",
            spectrum.eigenvectors.n_rows()
        )));
    }
    if rank == 0 || rank > spectrum.count() {
        return Err(Error::Parameter(format!(
            "rank {rank} must be in 1..={}",
            spectrum.count()
        )));
    }
    if !(h >= 0.0) {
        return Err(Error::Parameter(format!("time step h = {h} must be >= 0")));
    }
    if spectrum.eigenvalues[0] > 1e-8 {
        return Err(Error::Parameter(
            "leading eigenvalue does not vanish; the graph spectrum looks disconnected from 1"
                .into(),
        ));
    }

    let total_degree: f64 = degrees.iter().sum();
    let constant = 1.0 / total_degree.sqrt();
    let mut basis = DenseMatrix::zeros(n, rank);
    for i in 0..n {
        basis.set(i, 0, constant);
    }
    for k in 1..rank {
        let mut col: Vec<f64> = (0..n).map(|i| spectrum.eigenvectors.get(i, k)).collect();
        let against: f64 = (0..n).map(|i| degrees[i] * col[i] * constant).sum();
        for (i, c) in col.iter_mut().enumerate() {
            *c -= against * constant;
            let _ = i;
        }
        let norm: f64 = (0..n)
            .map(|i| degrees[i] * col[i] * col[i])
            .sum::<f64>()
            .sqrt();
        for (i, c) in col.iter().enumerate() {
            basis.set(i, k, c / norm);
        }
    }
    let mut dual = DenseMatrix::zeros(n, rank);
    for i in 0..n {
        for k in 0..rank {
            dual.set(i, k, degrees[i] * basis.get(i, k));
        }
    }
    let mut weights = Vec::with_capacity(rank);
    weights.push(1.0);
    for k in 1..rank {
        weights.push((-h * spectrum.eigenvalues[k]).exp());
    }

    verified(DiffusionKernel {
        kind: KernelKind::RankKHeat { rank, h },
        flags: KernelFlags {
            symmetric_in_degree_inner_product: true,
            conserves_mass: true,
            positive_semidefinite: true,
        },
        scaling: h.sqrt(),
        h,
        n,
        degrees: degrees.to_vec(),
        op: Operator::Spectral {
            weights,
            basis,
            dual,
        },
        id: format!("rank-{rank}-heat[h={h}]"),
    })
}

/// Normalized power series in the random walk matrix with positive
/// coefficients. `order` must be even, which makes the operator
/// positive semidefinite.
pub fn make_positive_taylor(w: &SparseWeights, h: f64, order: usize) -> Result<DiffusionKernel> {
    make_positive_taylor_impl(w, h, order, false)
}

pub(crate) fn make_positive_taylor_impl(
    w: &SparseWeights,
    h: f64,
    order: usize,
    force_chain: bool,
) -> Result<DiffusionKernel> {
    if order == 0 || !order.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "series order must be a positive even number, got {order}"
        )));
    }
    if !(h >= 0.0) {
        return Err(Error::Parameter(format!("time step h = {h} must be >= 0")));
    }
    let walk = RandomWalkLaplacian::new(w)?.walk_matrix().clone();
    let n = w.len();

    let mut coeffs = Vec::with_capacity(order + 1);
    let mut c = 1.0;
    coeffs.push(c);
    for j in 1..=order {
        c *= h / j as f64;
        coeffs.push(c);
    }
    let total: f64 = coeffs.iter().sum();
    for c in coeffs.iter_mut() {
        *c /= total;
    }

    let op = if order <= 4 && !force_chain {
        match materialize_power_series(&walk, &coeffs) {
            Some(rows) => {
                let cols = rows.transpose();
                Operator::Materialized { rows, cols }
            }
            None => Operator::PowerChain {
                walk,
                coeffs: coeffs.clone(),
            },
        }
    } else {
        Operator::PowerChain {
            walk,
            coeffs: coeffs.clone(),
        }
    };

    verified(DiffusionKernel {
        kind: KernelKind::PositiveTaylor { order, h },
        flags: KernelFlags {
            symmetric_in_degree_inner_product: true,
            conserves_mass: true,
            positive_semidefinite: true,
        },
        scaling: h.sqrt(),
        h,
        n,
        degrees: w.degrees().to_vec(),
        op,
        id: format!("positive-series-{order}[h={h}]"),
    })
}

/// `sum_j coeffs[j] walk^j` as one sparse matrix, unless an
/// intermediate power exceeds the entry budget.
fn materialize_power_series(walk: &CsrMatrix, coeffs: &[f64]) -> Option<CsrMatrix> {
    let n = walk.n_rows();
    let mut acc = CsrMatrix::identity(n).row_scaled(&vec![coeffs[0]; n]);
    let mut power = CsrMatrix::identity(n);
    for &c in &coeffs[1..] {
        power = power.matmul(walk);
        if power.nnz() > MATERIALIZE_NNZ_LIMIT {
            return None;
        }
        acc = CsrMatrix::linear_combination(1.0, &acc, c, &power);
    }
    Some(acc)
}

/// Which member of the squared random-walk family to build.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SquaredVariant {
    Plain,
    Twice,
    Shifted(f64),
}

/// The squared random-walk kernel `P^T P`, its square, or the
/// identity-shifted variant `P^T P - r I`.
///
/// These operators are symmetric in the standard inner product, not
/// the degree-weighted one, and conserve mass only on degree-regular
/// graphs; both flags are set by measurement. The shifted variant is
/// positive semidefinite exactly when `r` stays below the smallest
/// eigenvalue of `P^T P`, which is estimated by iteration.
pub fn make_squared_rw(w: &SparseWeights, variant: SquaredVariant) -> Result<DiffusionKernel> {
    let walk = RandomWalkLaplacian::new(w)?.walk_matrix().clone();
    let walk_t = walk.transpose();
    let n = w.len();
    let (kind, repeat, shift) = match variant {
        SquaredVariant::Plain => (KernelKind::SquaredWalk, 1, 0.0),
        SquaredVariant::Twice => (KernelKind::SquaredWalkTwice, 2, 0.0),
        SquaredVariant::Shifted(r) => {
            if !(r >= 0.0) {
                return Err(Error::Parameter(format!("shift r = {r} must be >= 0")));
            }
            (KernelKind::ShiftedSquaredWalk { shift: r }, 1, r)
        }
    };
    let psd = match variant {
        SquaredVariant::Plain | SquaredVariant::Twice => true,
        SquaredVariant::Shifted(r) => r <= squared_walk_min_eigenvalue(w)? + 1e-9,
    };
    let op = Operator::SquaredChain {
        walk,
        walk_t,
        repeat,
        shift,
    };
    // Mass conservation holds only when P^T also has unit row sums;
    // measure instead of declaring.
    let ones = vec![1.0; n];
    let a_ones = apply_operator(&op, &ones);
    let conserves = a_ones.iter().all(|&v| (v - 1.0).abs() <= FLAG_TOLERANCE);
    let id = match variant {
        SquaredVariant::Plain => "squared-walk".to_string(),
        SquaredVariant::Twice => "squared-walk-twice".to_string(),
        SquaredVariant::Shifted(r) => format!("shifted-squared-walk[r={r}]"),
    };
    verified(DiffusionKernel {
        kind,
        flags: KernelFlags {
            symmetric_in_degree_inner_product: false,
            conserves_mass: conserves,
            positive_semidefinite: psd,
        },
        scaling: 1.0,
        h: 1.0,
        n,
        degrees: w.degrees().to_vec(),
        op,
        id,
    })
}

/// Truncated exponential series with alternating signs. Diagnostic
/// only: it conserves mass and is symmetric, but loses positive
/// semidefiniteness once `h` grows, so it is excluded from the normal
/// kernel menu.
pub fn make_truncated_exponential(
    w: &SparseWeights,
    h: f64,
    order: usize,
) -> Result<DiffusionKernel> {
    if order == 0 {
        return Err(Error::Parameter("series order must be positive".into()));
    }
    if !(h >= 0.0) {
        return Err(Error::Parameter(format!("time step h = {h} must be >= 0")));
    }
    let walk = RandomWalkLaplacian::new(w)?.walk_matrix().clone();
    let n = w.len();
    // exp(-h L) ~ sum_j (h^j / j!) (P - I)^j; expand in powers of P so
    // one chain evaluation serves. (P - I)^j expands binomially, so
    // coeffs[i] = sum_{j>=i} h^j/j! * C(j, i) * (-1)^(j-i).
    let mut series = Vec::with_capacity(order + 1);
    let mut c = 1.0;
    series.push(c);
    for j in 1..=order {
        c *= h / j as f64;
        series.push(c);
    }
    let mut coeffs = vec![0.0; order + 1];
    for (j, &cj) in series.iter().enumerate() {
        let mut binom = 1.0f64;
        for i in 0..=j {
            let sign = if (j - i) % 2 == 0 { 1.0 } else { -1.0 };
            coeffs[i] += cj * sign * binom;
            binom *= (j - i) as f64 / (i + 1) as f64;
        }
    }
    verified(DiffusionKernel {
        kind: KernelKind::TruncatedExponential { order, h },
        flags: KernelFlags {
            symmetric_in_degree_inner_product: true,
            conserves_mass: true,
            positive_semidefinite: false,
        },
        scaling: h.sqrt(),
        h,
        n,
        degrees: w.degrees().to_vec(),
        op: Operator::PowerChain { walk, coeffs },
        id: format!("truncated-exponential-{order}[h={h}]"),
    })
}

/// Smallest eigenvalue of `P^T P`, via power iteration on `I - P^T P`.
pub fn squared_walk_min_eigenvalue(w: &SparseWeights) -> Result<f64> {
    let walk = RandomWalkLaplacian::new(w)?.walk_matrix().clone();
    let walk_t = walk.transpose();
    let n = w.len();
    let mut rng = ChaCha8Rng::seed_from_u64(0xba11);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    for x in v.iter_mut() {
        *x /= norm;
    }
    let mut rho_prev = f64::INFINITY;
    for _ in 0..5000 {
        let mut mv = walk_t.mul_vec(&walk.mul_vec(&v));
        for (m, x) in mv.iter_mut().zip(&v) {
            *m = x - *m;
        }
        let rho: f64 = v.iter().zip(&mv).map(|(a, b)| a * b).sum();
        let norm: f64 = mv.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-14 {
            // I - P^T P annihilates everything: P^T P = I.
            return Ok(1.0);
        }
        for x in mv.iter_mut() {
            *x /= norm;
        }
        v = mv;
        if (rho - rho_prev).abs() <= 1e-13 * rho.abs().max(1.0) {
            return Ok(1.0 - rho);
        }
        rho_prev = rho;
    }
    Ok(1.0 - rho_prev)
}

fn apply_operator(op: &Operator, x: &[f64]) -> Vec<f64> {
    match op {
        Operator::Spectral {
            weights,
            basis,
            dual,
        } => {
            let n = basis.n_rows();
            let rank = weights.len();
            let mut g = vec![0.0; rank];
            for i in 0..n {
                let row = dual.row(i);
                let xi = x[i];
                for (k, gk) in g.iter_mut().enumerate() {
                    *gk += row[k] * xi;
                }
            }
            for (gk, wk) in g.iter_mut().zip(weights) {
                *gk *= wk;
            }
            let mut out = vec![0.0; n];
            for i in 0..n {
                let row = basis.row(i);
                let mut acc = 0.0;
                for (k, &gk) in g.iter().enumerate() {
                    acc += row[k] * gk;
                }
                out[i] = acc;
            }
            out
        }
        Operator::Materialized { rows, .. } => rows.mul_vec(x),
        Operator::PowerChain { walk, coeffs } => {
            let mut acc: Vec<f64> = x.iter().map(|&v| v * coeffs[0]).collect();
            let mut power = x.to_vec();
            for &c in &coeffs[1..] {
                power = walk.mul_vec(&power);
                for (a, &p) in acc.iter_mut().zip(&power) {
                    *a += c * p;
                }
            }
            acc
        }
        Operator::SquaredChain {
            walk,
            walk_t,
            repeat,
            shift,
        } => {
            let mut y = x.to_vec();
            for _ in 0..*repeat {
                y = walk_t.mul_vec(&walk.mul_vec(&y));
            }
            if *shift != 0.0 {
                for (yi, &xi) in y.iter_mut().zip(x) {
                    *yi -= shift * xi;
                }
            }
            y
        }
    }
}

impl DiffusionKernel {
    pub fn kind(&self) -> &KernelKind {
        &self.kind
    }

    pub fn flags(&self) -> KernelFlags {
        self.flags
    }

    /// Energy scaling `s_A(h)`: the square root of the time step for
    /// the series kernels, one for the h-free squared family.
    pub fn scaling(&self) -> f64 {
        self.scaling
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    /// Applies the operator to one vector.
    pub fn apply_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n {
            return Err(Error::Shape(format!(
                "vector length {} does not match kernel size {}",
                x.len(),
                self.n
            )));
        }
        Ok(apply_operator(&self.op, x))
    }

    /// Applies the operator columnwise to an N×P matrix.
    pub fn apply(&self, values: &DenseMatrix) -> Result<DiffusedLabels> {
        if values.n_rows() != self.n {
            return Err(Error::Shape(format!(
                "input has {} rows, kernel size is {}",
                values.n_rows(),
                self.n
            )));
        }
        let n = self.n;
        let p = values.n_cols();
        let columns: Vec<Vec<f64>> = (0..p)
            .into_par_iter()
            .map(|c| {
                let xc: Vec<f64> = (0..n).map(|i| values.get(i, c)).collect();
                apply_operator(&self.op, &xc)
            })
            .collect();
        let mut out = DenseMatrix::zeros(n, p);
        for (c, col) in columns.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                out.set(i, c, v);
            }
        }
        Ok(DiffusedLabels {
            values: out,
            h: self.h,
            kernel_id: self.id.clone(),
        })
    }

    /// Diffuses a one-hot clustering.
    pub fn apply_indicator(&self, clustering: &Clustering) -> Result<DiffusedLabels> {
        let out = self.apply(&clustering.indicator())?;
        #[cfg(debug_assertions)]
        if self.flags.conserves_mass {
            for i in 0..out.values.n_rows() {
                let s: f64 = out.values.row(i).iter().sum();
                debug_assert!(
                    (s - 1.0).abs() <= 1e-9,
                    "mass-conserving kernel produced row sum {s}"
                );
            }
        }
        Ok(out)
    }

    /// Updates a stored product `A X_prev` to `A X` where
    /// `delta = X - X_prev` is sparse, without recomputing the full
    /// action. The result is bitwise independent of the entry order in
    /// `delta`.
    pub fn apply_incremental(
        &self,
        prev: &DiffusedLabels,
        delta: &[(u32, u32, f64)],
    ) -> Result<DiffusedLabels> {
        let n = self.n;
        let p = prev.values.n_cols();
        if prev.values.n_rows() != n {
            return Err(Error::Shape(format!(
                "stored product has {} rows, kernel size is {n}",
                prev.values.n_rows()
            )));
        }
        for &(r, c, v) in delta {
            if r as usize >= n || c as usize >= p {
                return Err(Error::Shape(format!(
                    "delta entry ({r}, {c}) out of bounds for {n}x{p}"
                )));
            }
            if !v.is_finite() {
                return Err(Error::Parameter("delta contains non-finite values".into()));
            }
        }
        // Canonical order (column, then row), duplicates merged: the
        // arithmetic sequence below is then fixed no matter how the
        // caller ordered the triplets.
        let mut entries = delta.to_vec();
        entries.sort_unstable_by_key(|&(r, c, _)| (c, r));
        let mut merged: Vec<(u32, u32, f64)> = Vec::with_capacity(entries.len());
        for (r, c, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }

        let mut out = prev.values.clone();
        match &self.op {
            Operator::Materialized { cols, .. } => {
                for &(r, c, v) in &merged {
                    let (idx, vals) = cols.row(r as usize);
                    let c = c as usize;
                    for (&i, &a) in idx.iter().zip(vals) {
                        let i = i as usize;
                        out.set(i, c, out.get(i, c) + v * a);
                    }
                }
            }
            Operator::Spectral {
                weights,
                basis,
                dual,
            } => {
                let rank = weights.len();
                let mut start = 0;
                while start < merged.len() {
                    let col = merged[start].1;
                    let mut end = start;
                    while end < merged.len() && merged[end].1 == col {
                        end += 1;
                    }
                    let mut g = vec![0.0; rank];
                    for &(r, _, v) in &merged[start..end] {
                        let row = dual.row(r as usize);
                        for (k, gk) in g.iter_mut().enumerate() {
                            *gk += row[k] * v;
                        }
                    }
                    for (gk, wk) in g.iter_mut().zip(weights) {
                        *gk *= wk;
                    }
                    let col = col as usize;
                    for i in 0..n {
                        let row = basis.row(i);
                        let mut acc = 0.0;
                        for (k, &gk) in g.iter().enumerate() {
                            acc += row[k] * gk;
                        }
                        out.set(i, col, out.get(i, col) + acc);
                    }
                    start = end;
                }
            }
            Operator::PowerChain { .. } | Operator::SquaredChain { .. } => {
                // Chain operators spread mass in every multiplication,
                // so apply them to the densified increment per touched
                // column.
                let mut start = 0;
                while start < merged.len() {
                    let col = merged[start].1;
                    let mut end = start;
                    while end < merged.len() && merged[end].1 == col {
                        end += 1;
                    }
                    let mut dense = vec![0.0; n];
                    for &(r, _, v) in &merged[start..end] {
                        dense[r as usize] += v;
                    }
                    let diffused = apply_operator(&self.op, &dense);
                    let col = col as usize;
                    for (i, &v) in diffused.iter().enumerate() {
                        out.set(i, col, out.get(i, col) + v);
                    }
                    start = end;
                }
            }
        }
        Ok(DiffusedLabels {
            values: out,
            h: self.h,
            kernel_id: self.id.clone(),
        })
    }
}

/// Runs the randomized flag probes; returns the kernel only if every
/// declared flag checks out.
fn verified(kernel: DiffusionKernel) -> Result<DiffusionKernel> {
    let n = kernel.n;
    let ip: Vec<f64> = if kernel.flags.symmetric_in_degree_inner_product {
        kernel.degrees.clone()
    } else {
        vec![1.0; n]
    };
    let weighted = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).zip(&ip).map(|((x, y), w)| w * x * y).sum()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xf1a9);

    if kernel.flags.conserves_mass {
        let ones = vec![1.0; n];
        let a_ones = apply_operator(&kernel.op, &ones);
        for (i, v) in a_ones.iter().enumerate() {
            if (v - 1.0).abs() > FLAG_TOLERANCE {
                return Err(Error::Internal(format!(
                    "kernel {} declared mass conservation but (A1)[{i}] = {v}",
                    kernel.id
                )));
            }
        }
    }

    for probe in 0..FLAG_PROBES {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ax = apply_operator(&kernel.op, &x);

        if kernel.flags.symmetric_in_degree_inner_product {
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ay = apply_operator(&kernel.op, &y);
            let lhs = weighted(&ax, &y);
            let rhs = weighted(&x, &ay);
            if (lhs - rhs).abs() > FLAG_TOLERANCE * lhs.abs().max(rhs.abs()).max(1.0) {
                return Err(Error::Internal(format!(
                    "kernel {} failed symmetry probe {probe}: {lhs} vs {rhs}",
                    kernel.id
                )));
            }
        }
        if kernel.flags.positive_semidefinite {
            let quad = weighted(&x, &ax);
            let norm = weighted(&x, &x);
            if quad < -FLAG_TOLERANCE * norm.max(1.0) {
                return Err(Error::Internal(format!(
                    "kernel {} failed positivity probe {probe}: {quad}",
                    kernel.id
                )));
            }
        }
    }
    Ok(kernel)
}
