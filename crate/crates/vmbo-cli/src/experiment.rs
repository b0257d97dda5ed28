//! Pipeline orchestration: load or generate data, build the similarity
//! graph and diffusion kernel, initialize, iterate, and score. Trials
//! run in a worker pool, each fully determined by `base seed + trial`,
//! and aggregation walks trials in index order so results never depend
//! on scheduling.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use vmbo::data::{
    accuracy, load_delimited, load_embedding, load_idx, save_embedding, three_moons, LabelColumn,
    LabelMap, LabeledDataset,
};
use vmbo::graph::{knn_graph, partial_spectrum, SparseWeights};
use vmbo::init::{diffusion_init, laguerre_init, voronoi_init, EdgeLength, FidelitySet};
use vmbo::kernels::{
    make_positive_taylor, make_rank_k_heat, make_squared_rw, make_truncated_exponential,
    DiffusionKernel, SquaredVariant,
};
use vmbo::mbo::{run, MboConfig, Temperature, WarmStart};
use vmbo::osstat::{
    center_price, solve_equality, solve_interval, Clustering, OrderStatistic, SolverStats,
    VolumeConstraints,
};

use crate::config::Config;
use crate::CliError;

const FIDELITY_STREAM: u64 = 0x9e37_79b9_7f4a_7c15;
const TEMPERATURE_STREAM: u64 = 0x517c_c1b7_2722_0a95;
const INIT_STREAM: u64 = 0x2545_f491_4f6c_dd1d;

/// Dataset, graph, and kernel for one trial (or shared across trials
/// when the dataset is fixed).
struct Prepared {
    data: LabeledDataset,
    weights: SparseWeights,
    kernel: DiffusionKernel,
}

fn load_dataset(cfg: &Config, seed: u64) -> Result<LabeledDataset, CliError> {
    let ds = &cfg.dataset;
    match ds.kind.as_str() {
        "three-moons" => Ok(three_moons(
            ds.points_per_class,
            ds.noise_sd,
            ds.ambient_dim,
            seed,
        )?),
        "delimited" => {
            let sep = ds.separator.chars().next().expect("validated separator");
            let label = match ds.label_column.as_str() {
                "first" => LabelColumn::First,
                "last" => LabelColumn::Last,
                other => LabelColumn::Index(other.parse().expect("validated label column")),
            };
            Ok(load_delimited(
                ds.path.as_deref().expect("validated path"),
                sep,
                label,
            )?)
        }
        "idx" => Ok(load_idx(
            ds.path.as_deref().expect("validated path"),
            ds.labels_path.as_deref().expect("validated labels path"),
        )?),
        "embedding" => {
            let cloud = load_embedding(ds.path.as_deref().expect("validated path"))?;
            let labels_path = ds.labels_path.as_deref().expect("validated labels path");
            let labels = read_label_lines(labels_path)?;
            let p = labels.iter().copied().max().unwrap_or(0) as usize + 1;
            Ok(LabeledDataset::new(
                cloud,
                labels,
                p.max(2),
                "embedding",
                labels_path.display().to_string(),
            )?)
        }
        other => Err(CliError::Config(format!("dataset.kind = `{other}`"))),
    }
}

/// One integer label per line; blank lines are skipped.
fn read_label_lines(path: &Path) -> Result<Vec<u32>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut labels = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        labels.push(line.parse().map_err(|_| {
            CliError::Data(format!(
                "{} line {}: label `{line}` is not an unsigned integer",
                path.display(),
                lineno + 1
            ))
        })?);
    }
    if labels.is_empty() {
        return Err(CliError::Data(format!(
            "{} contains no labels",
            path.display()
        )));
    }
    Ok(labels)
}

fn build_kernel(cfg: &Config, w: &SparseWeights) -> Result<DiffusionKernel, CliError> {
    let k = &cfg.kernel;
    let kernel = match k.kind.as_str() {
        "rank-k-heat" => {
            let rank = k.rank.min(w.len());
            let spectrum = partial_spectrum(w, rank)?;
            make_rank_k_heat(&spectrum, w.degrees(), k.h, rank)?
        }
        "positive-taylor" => make_positive_taylor(w, k.h, k.order)?,
        "squared-rw" => make_squared_rw(w, SquaredVariant::Plain)?,
        "squared-rw-twice" => make_squared_rw(w, SquaredVariant::Twice)?,
        "shifted-squared-rw" => make_squared_rw(w, SquaredVariant::Shifted(k.shift))?,
        "truncated-exponential" => make_truncated_exponential(w, k.h, k.order)?,
        other => return Err(CliError::Config(format!("kernel.kind = `{other}`"))),
    };
    Ok(kernel)
}

fn prepare(cfg: &Config, seed: u64) -> Result<Prepared, CliError> {
    let data = load_dataset(cfg, seed)?;
    let weights = knn_graph(data.cloud(), cfg.graph.k)?;
    let kernel = build_kernel(cfg, &weights)?;
    Ok(Prepared {
        data,
        weights,
        kernel,
    })
}

fn resolve_constraints(cfg: &Config, volumes: &[usize], n: usize) -> VolumeConstraints {
    match cfg.constraints.mode.as_str() {
        "interval" => {
            let s = cfg.constraints.slack;
            VolumeConstraints::Interval {
                lower: volumes.iter().map(|&v| v.saturating_sub(s)).collect(),
                upper: volumes.iter().map(|&v| (v + s).min(n)).collect(),
            }
        }
        _ => VolumeConstraints::Exact(volumes.to_vec()),
    }
}

fn build_init(
    cfg: &Config,
    prep: &Prepared,
    fidelity: &FidelitySet,
    constraints: &VolumeConstraints,
    seed: u64,
) -> Result<Clustering, CliError> {
    let length = match cfg.init.edge_length.as_str() {
        "euclidean" => EdgeLength::Euclidean(prep.data.cloud()),
        _ => EdgeLength::NegLogWeight,
    };
    let init = match cfg.init.kind.as_str() {
        "voronoi" => voronoi_init(&prep.weights, fidelity, length)?,
        "laguerre" => laguerre_init(&prep.weights, fidelity, constraints, length)?,
        "diffusion" => diffusion_init(&prep.kernel, fidelity, constraints)?,
        "random" => {
            let volumes = prep.data.class_volumes();
            let mut assign = Vec::with_capacity(prep.data.len());
            for (i, &v) in volumes.iter().enumerate() {
                assign.extend(std::iter::repeat_n(i as u32, v));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assign.shuffle(&mut rng);
            Clustering::new(assign, volumes.len())?
        }
        other => return Err(CliError::Config(format!("init.kind = `{other}`"))),
    };
    Ok(init)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub iterations: usize,
    pub stopped_by: String,
    pub best_energy: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub config: Config,
    pub mean_accuracy: f64,
    pub sd_accuracy: f64,
    pub mean_iterations: f64,
    pub trials: Vec<TrialRow>,
}

fn one_trial(
    cfg: &Config,
    shared: Option<&Prepared>,
    trial: usize,
) -> Result<(TrialRow, String), CliError> {
    let started = Instant::now();
    let seed = cfg.run.seed.wrapping_add(trial as u64);
    let local;
    let prep = match shared {
        Some(p) => p,
        None => {
            local = prepare(cfg, seed)?;
            &local
        }
    };
    let p = prep.data.class_count();
    let fidelity = FidelitySet::sample(
        prep.data.labels(),
        p,
        cfg.run.labels_per_class,
        seed ^ FIDELITY_STREAM,
    )?;
    let constraints = resolve_constraints(cfg, &prep.data.class_volumes(), prep.data.len());
    let init = build_init(cfg, prep, &fidelity, &constraints, seed ^ INIT_STREAM)?;

    let mut mbo_cfg = MboConfig::new(constraints);
    mbo_cfg.stop_eps = cfg.run.stop_eps;
    mbo_cfg.max_iters = cfg.run.max_iters;
    mbo_cfg.warm_start = if cfg.run.warm_start == "center" {
        WarmStart::Center
    } else {
        WarmStart::Previous
    };
    mbo_cfg.fidelity = Some(fidelity);
    mbo_cfg.use_incremental = cfg.run.incremental;
    if cfg.run.temperature > 0.0 {
        mbo_cfg.temperature = Some(Temperature {
            noise_scale: cfg.run.temperature,
            fixed_iterations: cfg.run.temperature_iterations,
            seed: seed ^ TEMPERATURE_STREAM,
        });
    }

    let (result, trace) = run(&prep.kernel, &mbo_cfg, &init)?;
    let acc = accuracy(&result, prep.data.labels(), LabelMap::Fixed)?;
    let row = TrialRow {
        trial,
        seed,
        accuracy: acc,
        iterations: trace.steps.len(),
        stopped_by: format!("{:?}", trace.stopped_by),
        best_energy: trace.best_energy,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    Ok((row, trace.to_csv()))
}

pub fn run_experiment(cfg: &Config, out: Option<&Path>) -> Result<RunSummary, CliError> {
    let resample = cfg.dataset.kind == "three-moons" && cfg.dataset.resample_per_trial;
    let shared = if resample {
        None
    } else {
        Some(prepare(cfg, cfg.run.seed)?)
    };

    let mut results: Vec<(TrialRow, String)> = (0..cfg.run.trials)
        .into_par_iter()
        .map(|t| one_trial(cfg, shared.as_ref(), t))
        .collect::<Result<_, _>>()?;
    results.sort_by_key(|(row, _)| row.trial);

    let trials: Vec<TrialRow> = results.iter().map(|(row, _)| row.clone()).collect();
    let k = trials.len() as f64;
    let mean_accuracy = trials.iter().map(|r| r.accuracy).sum::<f64>() / k;
    let sd_accuracy = if trials.len() < 2 {
        0.0
    } else {
        (trials
            .iter()
            .map(|r| (r.accuracy - mean_accuracy).powi(2))
            .sum::<f64>()
            / (k - 1.0))
            .sqrt()
    };
    let mean_iterations = trials.iter().map(|r| r.iterations as f64).sum::<f64>() / k;
    let summary = RunSummary {
        config: cfg.clone(),
        mean_accuracy,
        sd_accuracy,
        mean_iterations,
        trials,
    };

    if let Some(dir) = out {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        let mut csv =
            String::from("trial,seed,accuracy,iterations,stopped_by,best_energy,wall_ms\n");
        for r in &summary.trials {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.trial, r.seed, r.accuracy, r.iterations, r.stopped_by, r.best_energy, r.wall_ms
            ));
        }
        write_file(&dir.join("results.csv"), &csv)?;
        let json = serde_json::to_string_pretty(&summary)
            .map_err(|e| CliError::Runtime(format!("summary serialization: {e}")))?;
        write_file(&dir.join("summary.json"), &json)?;
        if cfg.run.save_traces {
            for (row, trace_csv) in &results {
                write_file(&dir.join(format!("trace_{:03}.csv", row.trial)), trace_csv)?;
            }
        }
    }
    Ok(summary)
}

pub fn print_run_summary(s: &RunSummary) {
    println!("trial  seed  accuracy  iterations  stopped_by");
    for r in &s.trials {
        println!(
            "{:>5}  {:>4}  {:>8.4}  {:>10}  {}",
            r.trial, r.seed, r.accuracy, r.iterations, r.stopped_by
        );
    }
    println!(
        "mean_accuracy={:.4} sd={:.4} trials={} labels_per_class={} kernel={} init={}",
        s.mean_accuracy,
        s.sd_accuracy,
        s.config.run.trials,
        s.config.run.labels_per_class,
        s.config.kernel.kind,
        s.config.init.kind
    );
}

/// Text scores format: a `N P` header line, then N rows of P floats.
fn read_scores(path: &Path) -> Result<vmbo::matrix::DenseMatrix, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::Data(format!("{}: empty scores file", path.display())))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            CliError::Data(format!(
                "{}: header `{header}` is not `N P`",
                path.display()
            ))
        })?;
    if dims.len() != 2 {
        return Err(CliError::Data(format!(
            "{}: header `{header}` is not `N P`",
            path.display()
        )));
    }
    let (n, p) = (dims[0], dims[1]);
    let mut data = Vec::with_capacity(n * p);
    let mut rows = 0usize;
    for (lineno, line) in lines {
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| {
                CliError::Data(format!(
                    "{} line {}: `{tok}` is not a number",
                    path.display(),
                    lineno + 1
                ))
            })?;
            data.push(v);
        }
        if data.len() - before != p {
            return Err(CliError::Data(format!(
                "{} line {}: {} values, expected {p}",
                path.display(),
                lineno + 1,
                data.len() - before
            )));
        }
        rows += 1;
    }
    if rows != n {
        return Err(CliError::Data(format!(
            "{}: {rows} score rows, header promised {n}",
            path.display()
        )));
    }
    Ok(vmbo::matrix::DenseMatrix::from_vec(n, p, data))
}

fn parse_usize_list(key: &str, text: &str) -> Result<Vec<usize>, CliError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{key}: `{t}` is not an unsigned integer")))
        })
        .collect()
}

fn parse_f64_list(key: &str, text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|t| {
            t.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{key}: `{t}` is not a number")))
        })
        .collect()
}

pub struct SolveArgs {
    pub scores: PathBuf,
    pub volumes: Option<String>,
    pub lower: Option<String>,
    pub upper: Option<String>,
    pub m0: Option<String>,
}

/// Standalone solver access: reads a scores file, solves under the
/// given constraints (m0 defaults to the centered vector), writes the
/// assignment and price vector, and prints the solver counters.
pub fn solve_file(args: &SolveArgs, out: Option<&Path>) -> Result<(), CliError> {
    let u = read_scores(&args.scores)?;
    let p = u.n_cols();
    let m0 = match &args.m0 {
        None => center_price(p),
        Some(text) => {
            let m = parse_f64_list("--m0", text)?;
            if m.len() != p {
                return Err(CliError::Config(format!(
                    "--m0 has {} entries, scores have {p} columns",
                    m.len()
                )));
            }
            m
        }
    };
    let (os, stats): (OrderStatistic, SolverStats) = match (&args.volumes, &args.lower, &args.upper)
    {
        (Some(v), None, None) => {
            let v = parse_usize_list("--volumes", v)?;
            solve_equality(&u, &v, &m0)?
        }
        (None, Some(l), Some(h)) => {
            let l = parse_usize_list("--lower", l)?;
            let h = parse_usize_list("--upper", h)?;
            solve_interval(&u, &l, &h, &m0)?
        }
        _ => {
            return Err(CliError::Config(
                "pass either --volumes or both --lower and --upper".into(),
            ))
        }
    };
    println!(
        "outer_iterations={} heap_ops={} initial_error={} wall_ms={:.3}",
        stats.outer_iterations,
        stats.heap_ops,
        stats.initial_error,
        stats.wall_time.as_secs_f64() * 1e3
    );
    println!("m={:?}", os.m);
    let dir = out.unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let mut assignment = String::from("point,cluster\n");
    for (x, &a) in os.induced.assign().iter().enumerate() {
        assignment.push_str(&format!("{x},{a}\n"));
    }
    write_file(&dir.join("assignment.csv"), &assignment)?;
    let mut m_csv = String::from("cluster,m\n");
    for (i, &mi) in os.m.iter().enumerate() {
        m_csv.push_str(&format!("{i},{mi}\n"));
    }
    write_file(&dir.join("m.csv"), &m_csv)?;
    Ok(())
}

/// Scaling probe: runs the scheme once per time step in the grid
/// (temperature off, dataset fixed at the base seed) and reports the
/// warm-started solver's workload per iteration, plus the fitted
/// log-log slope of mean initial error against h.
pub fn probe_scaling(cfg: &Config, out: Option<&Path>) -> Result<f64, CliError> {
    if !matches!(
        cfg.kernel.kind.as_str(),
        "rank-k-heat" | "positive-taylor" | "truncated-exponential"
    ) {
        return Err(CliError::Config(format!(
            "kernel.kind = `{}` has no time step to sweep",
            cfg.kernel.kind
        )));
    }
    let grid: Vec<f64> = if cfg.probe.h_grid.is_empty() {
        let h = cfg.kernel.h;
        vec![h / 4.0, h / 2.0, h, 2.0 * h]
    } else {
        cfg.probe.h_grid.clone()
    };

    let data = load_dataset(cfg, cfg.run.seed)?;
    let weights = knn_graph(data.cloud(), cfg.graph.k)?;
    let seed = cfg.run.seed;
    let p = data.class_count();
    let fidelity = FidelitySet::sample(
        data.labels(),
        p,
        cfg.run.labels_per_class,
        seed ^ FIDELITY_STREAM,
    )?;
    let constraints = resolve_constraints(cfg, &data.class_volumes(), data.len());

    let mut rows = String::from("h,iteration,initial_error,m_deviation,outer_iterations,wall_ms\n");
    let mut per_h: Vec<(f64, f64)> = Vec::new();
    for &h in &grid {
        let mut hcfg = cfg.clone();
        hcfg.kernel.h = h;
        let kernel = build_kernel(&hcfg, &weights)?;
        let prep = Prepared {
            data: data.clone(),
            weights: weights.clone(),
            kernel,
        };
        let init = build_init(cfg, &prep, &fidelity, &constraints, seed ^ INIT_STREAM)?;
        let mut mbo_cfg = MboConfig::new(constraints.clone());
        mbo_cfg.stop_eps = cfg.run.stop_eps;
        mbo_cfg.max_iters = cfg.run.max_iters;
        mbo_cfg.warm_start = if cfg.run.warm_start == "center" {
            WarmStart::Center
        } else {
            WarmStart::Previous
        };
        mbo_cfg.fidelity = Some(fidelity.clone());
        mbo_cfg.use_incremental = cfg.run.incremental;
        let (_, trace) = run(&prep.kernel, &mbo_cfg, &init)?;
        for s in &trace.steps {
            rows.push_str(&format!(
                "{},{},{},{},{},{}\n",
                h,
                s.iteration,
                s.stats.initial_error,
                s.m_deviation,
                s.stats.outer_iterations,
                s.wall_ms
            ));
        }
        let mean = if trace.steps.is_empty() {
            0.0
        } else {
            trace
                .steps
                .iter()
                .map(|s| s.stats.initial_error as f64)
                .sum::<f64>()
                / trace.steps.len() as f64
        };
        println!(
            "h={h} iterations={} mean_initial_error={mean:.3}",
            trace.steps.len()
        );
        per_h.push((h, mean));
    }

    let pts: Vec<(f64, f64)> = per_h
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|(h, e)| (h.ln(), e.ln()))
        .collect();
    let slope = if pts.len() < 2 {
        f64::NAN
    } else {
        let k = pts.len() as f64;
        let sx: f64 = pts.iter().map(|q| q.0).sum();
        let sy: f64 = pts.iter().map(|q| q.1).sum();
        let sxx: f64 = pts.iter().map(|q| q.0 * q.0).sum();
        let sxy: f64 = pts.iter().map(|q| q.0 * q.1).sum();
        (k * sxy - sx * sy) / (k * sxx - sx * sx)
    };
    println!("slope={slope:.4}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        write_file(&dir.join("probe.csv"), &rows)?;
    }
    Ok(slope)
}

/// Writes the smallest rescaled-Laplacian eigenvalues of the dataset's
/// graph (count = kernel.rank) to eigenvalues.csv.
pub fn spectrum_report(cfg: &Config, out: Option<&Path>) -> Result<(), CliError> {
    let data = load_dataset(cfg, cfg.run.seed)?;
    let weights = knn_graph(data.cloud(), cfg.graph.k)?;
    let count = cfg.kernel.rank.min(weights.len());
    let spectrum = partial_spectrum(&weights, count)?;
    let shown = spectrum.eigenvalues.iter().take(5).collect::<Vec<_>>();
    println!(
        "n={} pairs={} smallest={shown:?}",
        weights.len(),
        spectrum.count()
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        let mut csv = String::from("index,eigenvalue\n");
        for (i, lambda) in spectrum.eigenvalues.iter().enumerate() {
            csv.push_str(&format!("{i},{lambda}\n"));
        }
        write_file(&dir.join("eigenvalues.csv"), &csv)?;
    }
    Ok(())
}

/// Generates the synthetic three-moons sample and writes it as an
/// embedding file plus a label CSV.
pub fn gen_moons(cfg: &Config, out: Option<&Path>) -> Result<(), CliError> {
    let ds = &cfg.dataset;
    let data = three_moons(
        ds.points_per_class,
        ds.noise_sd,
        ds.ambient_dim,
        cfg.run.seed,
    )?;
    let dir = out.unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    let emb = dir.join("moons.emb");
    save_embedding(data.cloud(), &emb)?;
    let mut labels = String::new();
    for &l in data.labels() {
        labels.push_str(&format!("{l}\n"));
    }
    let labels_path = dir.join("moons_labels.csv");
    write_file(&labels_path, &labels)?;
    println!(
        "wrote {} points ({} per moon, dim {}) to {} and {}",
        data.len(),
        ds.points_per_class,
        ds.ambient_dim,
        emb.display(),
        labels_path.display()
    );
    Ok(())
}

fn write_file(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}
