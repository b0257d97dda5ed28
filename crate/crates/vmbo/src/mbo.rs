//! The volume-constrained iteration: diffuse the current indicator,
//! optionally perturb it, threshold under the volume constraints, and
//! repeat until the thresholding energy stalls. Tracks energies,
//! movement, increment sizes, and solver effort per step.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::init::{pinned_solve, FidelitySet};
use crate::kernels::{DiffusedLabels, DiffusionKernel, KernelFlags};
use crate::matrix::DenseMatrix;
use crate::osstat::{
    center_price, lagrange_multiplier, Clustering, OrderStatistic, SolverStats, VolumeConstraints,
};
use crate::{Error, Result};

/// Additive noise on the diffused scores, decaying as
/// `noise_scale / (1 + iteration)`. An approximation of annealed
/// perturbation schemes: simple, seeded, and reproducible.
#[derive(Clone, Debug)]
pub struct Temperature {
    pub noise_scale: f64,
    /// Number of iterations to run; the best clustering seen wins.
    pub fixed_iterations: usize,
    pub seed: u64,
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature {
            noise_scale: 0.1,
            fixed_iterations: 50,
            seed: 0,
        }
    }
}

/// Where each step's price vector starts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum WarmStart {
    /// The previous step's solution (the fast path when iterates move
    /// little).
    #[default]
    Previous,
    /// The centered vector `1/P`.
    Center,
}

#[derive(Clone, Debug)]
pub struct MboConfig {
    pub constraints: VolumeConstraints,
    /// Stop when the relative energy decrease falls below this.
    pub stop_eps: f64,
    pub max_iters: usize,
    pub temperature: Option<Temperature>,
    pub warm_start: WarmStart,
    /// Labeled points, never reassigned.
    pub fidelity: Option<FidelitySet>,
    /// Update the cached diffusion from the sparse indicator change
    /// instead of recomputing it; identical results either way.
    pub use_incremental: bool,
}

impl MboConfig {
    pub fn new(constraints: VolumeConstraints) -> Self {
        MboConfig {
            constraints,
            stop_eps: 1e-4,
            max_iters: 300,
            temperature: None,
            warm_start: WarmStart::Previous,
            fidelity: None,
            use_incremental: true,
        }
    }
}

/// Everything recorded about one iteration.
#[derive(Clone, Debug)]
pub struct StepRecord {
    /// 1-based iteration number within the run (0 for standalone steps).
    pub iteration: usize,
    /// Thresholding energy of the new clustering.
    pub energy: f64,
    /// Movement term between the old and new clusterings.
    pub distance: f64,
    /// `sum_x sum_i |chi_i(x) - chi_prev_i(x)|`, twice the moved count.
    pub increment_l1: f64,
    pub stats: SolverStats,
    /// Price vector of the constrained threshold.
    pub m: Vec<f64>,
    /// Multiplier of the minimizing-movement interpretation; sums to 0.
    pub lagrange: Vec<f64>,
    /// `max_i |m_i + c - 1/P|` with `c` normalizing the price sum to 1.
    pub m_deviation: f64,
    pub wall_ms: f64,
}

/// Why a run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxIterations,
    TemperatureBudget,
}

/// Per-run record: all step records plus summary fields.
#[derive(Clone, Debug)]
pub struct MboTrace {
    pub steps: Vec<StepRecord>,
    /// Energy of the (possibly repaired) initial clustering.
    pub initial_energy: f64,
    pub best_energy: f64,
    /// Iteration that produced the best energy; 0 means the initial
    /// clustering.
    pub best_iteration: usize,
    pub stopped_by: StopReason,
    pub kernel_id: String,
    pub kernel_flags: KernelFlags,
    /// Energy scaling `s_A(h)` of the kernel that ran.
    pub scaling: f64,
    /// Number of points the run clustered.
    pub n: usize,
}

impl MboTrace {
    /// One row per iteration, with a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "iteration,energy,distance,increment_l1,outer_iterations,m_deviation,wall_ms\n",
        );
        for s in &self.steps {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                s.iteration,
                s.energy,
                s.distance,
                s.increment_l1,
                s.stats.outer_iterations,
                s.m_deviation,
                s.wall_ms
            ));
        }
        out
    }
}

/// `(1/s_A N) * sum_{i != j} <values_i, diffused_j>` where `diffused`
/// holds the kernel applied to `values` column by column.
fn cross_energy(values: &DenseMatrix, diffused: &DenseMatrix, s_a: f64) -> f64 {
    let n = values.n_rows();
    let mut total = 0.0;
    for x in 0..n {
        let vr = values.row(x);
        let dr = diffused.row(x);
        let vs: f64 = vr.iter().sum();
        let ds: f64 = dr.iter().sum();
        let diag: f64 = vr.iter().zip(dr).map(|(a, b)| a * b).sum();
        total += vs * ds - diag;
    }
    total / (s_a * n as f64)
}

/// Thresholding energy of a clustering: the kernel-smoothed mass
/// sitting across cluster boundaries, normalized by the energy scaling
/// and the point count. One kernel application.
pub fn thresholding_energy(kernel: &DiffusionKernel, c: &Clustering) -> Result<f64> {
    let diffused = kernel.apply_indicator(c)?;
    Ok(cross_energy(
        &c.indicator(),
        &diffused.values,
        kernel.scaling(),
    ))
}

/// Movement term between two clusterings: `-2h` times the cross energy
/// of the indicator difference, which equals the kernel quadratic form
/// of the difference scaled by `2h/(s_A N)`. Nonnegative for kernels
/// positive semidefinite in the plain pairing.
pub fn distance_term(kernel: &DiffusionKernel, c: &Clustering, c_prev: &Clustering) -> Result<f64> {
    if c.n() != c_prev.n() || c.p() != c_prev.p() {
        return Err(Error::Shape(format!(
            "clusterings have shapes {}x{} and {}x{}",
            c.n(),
            c.p(),
            c_prev.n(),
            c_prev.p()
        )));
    }
    let mut psi = c.indicator();
    let prev = c_prev.indicator();
    for (a, b) in psi.data_mut().iter_mut().zip(prev.data()) {
        *a -= b;
    }
    let diffused = kernel.apply(&psi)?;
    Ok(-2.0 * kernel.h() * cross_energy(&psi, &diffused.values, kernel.scaling()))
}

fn add_noise(u: &mut DenseMatrix, rng: &mut ChaCha8Rng, scale: f64) {
    if scale <= 0.0 {
        return;
    }
    for v in u.data_mut().iter_mut() {
        *v += rng.gen_range(-scale..scale);
    }
}

fn indicator_delta(prev: &Clustering, next: &Clustering) -> Vec<(u32, u32, f64)> {
    let mut delta = Vec::new();
    for (x, (&a, &b)) in prev.assign().iter().zip(next.assign()).enumerate() {
        if a != b {
            delta.push((x as u32, a, -1.0));
            delta.push((x as u32, b, 1.0));
        }
    }
    delta
}

fn price_deviation(m: &[f64]) -> f64 {
    let p = m.len() as f64;
    let c = (1.0 - m.iter().sum::<f64>()) / p;
    m.iter()
        .map(|&mi| (mi + c - 1.0 / p).abs())
        .fold(0.0, f64::max)
}

fn finite_energy(e: f64, iteration: usize) -> Result<f64> {
    if e.is_finite() {
        Ok(e)
    } else {
        Err(Error::Internal(format!(
            "thresholding energy became {e} at iteration {iteration}"
        )))
    }
}

/// One iteration: diffuse the previous indicator, optionally perturb,
/// then threshold under the constraints with fidelity points pinned.
/// The record's `iteration` is 0; callers embedding this in a longer
/// run assign their own numbering. `noise` is `(scale, seed)` for this
/// single step.
pub fn mbo_step(
    kernel: &DiffusionKernel,
    c_prev: &Clustering,
    constraints: &VolumeConstraints,
    fidelity: Option<&FidelitySet>,
    m_prev: &[f64],
    noise: Option<(f64, u64)>,
) -> Result<(Clustering, OrderStatistic, StepRecord)> {
    let started = Instant::now();
    let diffused_prev = kernel.apply_indicator(c_prev)?;
    let mut scores = diffused_prev.values.clone();
    if let Some((scale, seed)) = noise {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        add_noise(&mut scores, &mut rng, scale);
    }
    let (next, os, stats) = pinned_solve(&scores, constraints, fidelity, m_prev)?;
    let diffused_next = kernel.apply_indicator(&next)?;
    let record = build_record(
        kernel,
        c_prev,
        &next,
        &diffused_prev,
        &diffused_next,
        &os,
        stats,
        0,
        started,
    )?;
    Ok((next, os, record))
}

#[allow(clippy::too_many_arguments)]
fn build_record(
    kernel: &DiffusionKernel,
    c_prev: &Clustering,
    next: &Clustering,
    diffused_prev: &DiffusedLabels,
    diffused_next: &DiffusedLabels,
    os: &OrderStatistic,
    stats: SolverStats,
    iteration: usize,
    started: Instant,
) -> Result<StepRecord> {
    let s_a = kernel.scaling();
    let energy = finite_energy(
        cross_energy(&next.indicator(), &diffused_next.values, s_a),
        iteration,
    )?;
    let mut psi = next.indicator();
    let prev_ind = c_prev.indicator();
    let mut increment_l1 = 0.0;
    for (a, b) in psi.data_mut().iter_mut().zip(prev_ind.data()) {
        *a -= b;
        increment_l1 += a.abs();
    }
    let mut d_psi = diffused_next.values.clone();
    for (a, b) in d_psi.data_mut().iter_mut().zip(diffused_prev.values.data()) {
        *a -= b;
    }
    let distance = -2.0 * kernel.h() * cross_energy(&psi, &d_psi, s_a);
    let lagrange = lagrange_multiplier(os, kernel.h());
    Ok(StepRecord {
        iteration,
        energy,
        distance,
        increment_l1,
        stats,
        m: os.m.clone(),
        lagrange,
        m_deviation: price_deviation(&os.m),
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runs the scheme from an initial clustering.
///
/// Without temperature the loop stops once the relative energy decrease
/// drops below `stop_eps` (or at `max_iters`) and returns the last
/// iterate. With temperature it runs exactly `fixed_iterations` steps
/// and returns the lowest-energy clustering seen, the initial one
/// included. An initial clustering that violates the constraints (or
/// misassigns a fidelity point) is first repaired by thresholding its
/// own indicator.
pub fn run(
    kernel: &DiffusionKernel,
    config: &MboConfig,
    init: &Clustering,
) -> Result<(Clustering, MboTrace)> {
    let n = kernel.len();
    let p = config.constraints.p();
    if init.n() != n {
        return Err(Error::Shape(format!(
            "initial clustering covers {} points, kernel acts on {n}",
            init.n()
        )));
    }
    if init.p() != p {
        return Err(Error::Shape(format!(
            "initial clustering has {} clusters, constraints describe {p}",
            init.p()
        )));
    }
    if !(config.stop_eps > 0.0) {
        return Err(Error::Parameter(format!(
            "stop_eps = {} must be positive",
            config.stop_eps
        )));
    }
    if config.max_iters == 0 {
        return Err(Error::Parameter("max_iters must be positive".into()));
    }
    if !(kernel.h() > 0.0) {
        return Err(Error::Parameter(
            "the scheme needs a positive time step".into(),
        ));
    }
    if let Some(t) = &config.temperature {
        if !(t.noise_scale >= 0.0) || t.fixed_iterations == 0 {
            return Err(Error::Parameter(
                "temperature needs noise_scale >= 0 and a positive iteration count".into(),
            ));
        }
    }

    // Repair the start if it breaks a constraint or a pinned label.
    let misassigned = config.fidelity.as_ref().is_some_and(|y| {
        (0..p).any(|i| {
            y.class(i)
                .iter()
                .any(|&x| init.assign()[x as usize] != i as u32)
        })
    });
    let mut current = if misassigned || !config.constraints.admits(init.volumes()) {
        let (repaired, _, _) = pinned_solve(
            &init.indicator(),
            &config.constraints,
            config.fidelity.as_ref(),
            &center_price(p),
        )?;
        repaired
    } else {
        init.clone()
    };

    let mut diffused = kernel.apply_indicator(&current)?;
    let initial_energy = finite_energy(
        cross_energy(&current.indicator(), &diffused.values, kernel.scaling()),
        0,
    )?;

    let mut energy_prev = initial_energy;
    let mut best_energy = initial_energy;
    let mut best_iteration = 0usize;
    let mut best = current.clone();
    let mut m_warm = center_price(p);
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut temp_rng = config
        .temperature
        .as_ref()
        .map(|t| ChaCha8Rng::seed_from_u64(t.seed));
    let budget = match &config.temperature {
        Some(t) => t.fixed_iterations,
        None => config.max_iters,
    };

    let mut stopped_by = StopReason::MaxIterations;
    for iteration in 1..=budget {
        let started = Instant::now();
        let mut scores = diffused.values.clone();
        if let Some(t) = &config.temperature {
            let scale = t.noise_scale / iteration as f64;
            add_noise(
                &mut scores,
                temp_rng.as_mut().expect("rng with temperature"),
                scale,
            );
        }
        let (next, os, stats) = pinned_solve(
            &scores,
            &config.constraints,
            config.fidelity.as_ref(),
            &m_warm,
        )?;
        debug_assert!(config.constraints.admits(next.volumes()));

        let delta = indicator_delta(&current, &next);
        let diffused_next = if delta.is_empty() {
            diffused.clone()
        } else if config.use_incremental {
            kernel.apply_incremental(&diffused, &delta)?
        } else {
            kernel.apply_indicator(&next)?
        };
        let record = build_record(
            kernel,
            &current,
            &next,
            &diffused,
            &diffused_next,
            &os,
            stats,
            iteration,
            started,
        )?;
        let energy = record.energy;
        steps.push(record);

        if energy < best_energy {
            best_energy = energy;
            best_iteration = iteration;
            best = next.clone();
        }
        if let WarmStart::Previous = config.warm_start {
            m_warm = os.m.clone();
        }
        current = next;
        diffused = diffused_next;

        if config.temperature.is_none() {
            let rel = (energy_prev - energy) / energy;
            let converged = if rel.is_finite() {
                rel < config.stop_eps
            } else {
                energy == energy_prev
            };
            if converged {
                stopped_by = StopReason::Converged;
                break;
            }
        }
        energy_prev = energy;
    }
    if config.temperature.is_some() {
        stopped_by = StopReason::TemperatureBudget;
    }

    let result = if config.temperature.is_some() {
        best.clone()
    } else {
        current
    };
    let trace = MboTrace {
        steps,
        initial_energy,
        best_energy,
        best_iteration,
        stopped_by,
        kernel_id: kernel.id().to_string(),
        kernel_flags: kernel.flags(),
        scaling: kernel.scaling(),
        n: result.n(),
    };
    Ok((result, trace))
}

/// Outcome of checking the per-iteration increment bound
/// `|chi^l - chi^{l-1}|_1 <= 4 s_A E(chi^0)`, with the norm taken
/// against the uniform empirical measure (a factor `1/N`), matching the
/// normalization of the energy itself.
#[derive(Clone, Debug)]
pub struct SparsityReport {
    /// The bound is only proved for mass-conserving positive
    /// semidefinite kernels; other runs report `applicable = false`.
    pub applicable: bool,
    pub bound: f64,
    pub per_iteration: Vec<bool>,
    pub all_hold: bool,
}

/// Checks every iteration of a trace against the increment bound.
pub fn increment_sparsity_check(trace: &MboTrace) -> SparsityReport {
    let flags = trace.kernel_flags;
    let applicable = flags.conserves_mass && flags.positive_semidefinite;
    let bound = 4.0 * trace.scaling * trace.initial_energy;
    let n = trace.n.max(1) as f64;
    let per_iteration: Vec<bool> = trace
        .steps
        .iter()
        .map(|s| s.increment_l1 / n <= bound + 1e-9)
        .collect();
    let all_hold = applicable && per_iteration.iter().all(|&b| b);
    SparsityReport {
        applicable,
        bound,
        per_iteration,
        all_hold,
    }
}

/// Warm-start quality for one time step of the grid.
#[derive(Clone, Debug)]
pub struct HScalingRow {
    pub h: f64,
    /// Mean volume error of the warm-started price vector, per
    /// iteration of the run at this h.
    pub mean_initial_error: f64,
    /// Fraction of iterations whose prices strayed from center by more
    /// than 1/(4P).
    pub bad_iteration_fraction: f64,
    pub iterations: usize,
}

/// Aggregate of [`sqrt_h_scaling_probe`].
#[derive(Clone, Debug)]
pub struct ScalingReport {
    pub rows: Vec<HScalingRow>,
    /// Least-squares slope of `ln(mean initial error)` against `ln h`,
    /// over rows with positive error; NaN if fewer than two.
    pub slope: f64,
}

/// Measures how the warm-started solver's workload scales with the
/// time step: for each h the scheme runs to convergence (temperature
/// disabled) and the solver's initial volume error per iteration is
/// aggregated. Small errors at small h are what make warm starts pay
/// off.
pub fn sqrt_h_scaling_probe<F>(
    make_kernel: F,
    config: &MboConfig,
    init: &Clustering,
    h_grid: &[f64],
) -> Result<ScalingReport>
where
    F: Fn(f64) -> Result<DiffusionKernel>,
{
    if h_grid.is_empty() {
        return Err(Error::Parameter("empty time-step grid".into()));
    }
    let mut quiet = config.clone();
    quiet.temperature = None;
    let p = quiet.constraints.p();
    let delta = 1.0 / (4.0 * p as f64);
    let mut rows = Vec::with_capacity(h_grid.len());
    for &h in h_grid {
        let kernel = make_kernel(h)?;
        let (_, trace) = run(&kernel, &quiet, init)?;
        let iterations = trace.steps.len();
        let mean_initial_error = if iterations == 0 {
            0.0
        } else {
            trace
                .steps
                .iter()
                .map(|s| s.stats.initial_error as f64)
                .sum::<f64>()
                / iterations as f64
        };
        let bad = trace.steps.iter().filter(|s| s.m_deviation > delta).count();
        rows.push(HScalingRow {
            h,
            mean_initial_error,
            bad_iteration_fraction: if iterations == 0 {
                0.0
            } else {
                bad as f64 / iterations as f64
            },
            iterations,
        });
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mean_initial_error > 0.0 && r.h > 0.0)
        .map(|r| (r.h.ln(), r.mean_initial_error.ln()))
        .collect();
    let slope = if pts.len() < 2 {
        f64::NAN
    } else {
        let k = pts.len() as f64;
        let sx: f64 = pts.iter().map(|p| p.0).sum();
        let sy: f64 = pts.iter().map(|p| p.1).sum();
        let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
        let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
        (k * sxy - sx * sy) / (k * sxx - sx * sx)
    };
    Ok(ScalingReport { rows, slope })
}
