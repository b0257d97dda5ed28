//! End-to-end tests for the `vmbo` binary: exit codes, output files,
//! run-to-run determinism, and agreement with the library's reference
//! solvers on small hand-written inputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

use vmbo::data::load_embedding;
use vmbo::matrix::DenseMatrix;
use vmbo::oracle::{exhaustive_optimum, mincostflow_optimum};
use vmbo::osstat::VolumeConstraints;

fn vmbo_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vmbo"))
}

fn run_vmbo(args: &[&str]) -> Output {
    vmbo_bin().args(args).output().expect("spawn vmbo binary")
}

fn assert_ok(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed with {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn assert_code(out: &Output, code: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{what}: expected exit {code}\nstderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn stdout_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_text(path: &Path, text: &str) {
    std::fs::write(path, text).expect("write test file");
}

fn read_text(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// A fast synthetic configuration: 180 points, tiny graph, default
/// squared random-walk kernel. `extra` is appended to the `[run]`
/// section, which is written last for that purpose.
fn moons_config(extra: &str) -> String {
    format!(
        "[dataset]\n\
         points_per_class = 60\n\
         ambient_dim = 2\n\n\
         [graph]\n\
         k = 8\n\n\
         [run]\n\
         trials = 2\n\
         labels_per_class = 3\n\
         max_iters = 60\n\
         {extra}"
    )
}

fn config_file(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    write_text(&path, text);
    path
}

/// Drops the trailing wall-clock column so timing noise does not enter
/// byte comparisons.
fn strip_wall_ms(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            let cut = line.rfind(',').expect("csv row has columns");
            &line[..cut]
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Column `idx` of every data row (header skipped).
fn csv_column(csv: &str, idx: usize) -> Vec<String> {
    csv.lines()
        .skip(1)
        .map(|line| {
            line.split(',')
                .nth(idx)
                .expect("column present")
                .to_string()
        })
        .collect()
}

#[test]
fn run_writes_results_and_repeats_byte_identically() {
    let dir = TempDir::new().unwrap();
    let cfg = config_file(dir.path(), &moons_config("save_traces = true\n"));
    let out1 = dir.path().join("out1");
    let out2 = dir.path().join("out2");

    let first = run_vmbo(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out1.to_str().unwrap(),
    ]);
    assert_ok(&first, "run");
    assert!(
        stdout_of(&first).contains("mean_accuracy="),
        "run summary line missing from stdout"
    );

    let results = read_text(&out1.join("results.csv"));
    let mut lines = results.lines();
    assert_eq!(
        lines.next(),
        Some("trial,seed,accuracy,iterations,stopped_by,best_energy,wall_ms"),
        "results.csv header"
    );
    assert_eq!(lines.count(), 2, "one results row per trial");

    let summary: serde_json::Value =
        serde_json::from_str(&read_text(&out1.join("summary.json"))).expect("summary parses");
    assert_eq!(summary["trials"].as_array().map(Vec::len), Some(2));
    let mean = summary["mean_accuracy"].as_f64().expect("mean_accuracy");
    assert!(
        (0.5..=1.0).contains(&mean),
        "mean accuracy {mean} outside the plausible range for the tiny benchmark"
    );

    for trial in 0..2 {
        let trace = read_text(&out1.join(format!("trace_{trial:03}.csv")));
        assert!(
            trace.starts_with("iteration,energy,distance,increment_l1"),
            "trace_{trial:03}.csv header: {}",
            trace.lines().next().unwrap_or("")
        );
    }

    let second = run_vmbo(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_ok(&second, "second run");
    assert_eq!(
        strip_wall_ms(&results),
        strip_wall_ms(&read_text(&out2.join("results.csv"))),
        "identical config and seed must reproduce results.csv byte for byte \
         (wall-clock column excluded)"
    );
}

#[test]
fn zero_slack_interval_matches_exact_constraints() {
    let dir = TempDir::new().unwrap();
    let cfg = config_file(dir.path(), &moons_config(""));
    let out_exact = dir.path().join("exact");
    let out_interval = dir.path().join("interval");

    for (mode, out) in [("exact", &out_exact), ("interval", &out_interval)] {
        let run = run_vmbo(&[
            "run",
            "--config",
            cfg.to_str().unwrap(),
            "--constraints",
            mode,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_ok(&run, mode);
    }

    let exact = read_text(&out_exact.join("results.csv"));
    let interval = read_text(&out_interval.join("results.csv"));
    // With zero slack the admissible set collapses to the exact volumes,
    // so the two modes must take the same trajectory.
    assert_eq!(
        csv_column(&exact, 2),
        csv_column(&interval, 2),
        "accuracies diverge between exact and zero-slack interval modes"
    );
    assert_eq!(
        csv_column(&exact, 3),
        csv_column(&interval, 3),
        "iteration counts diverge between exact and zero-slack interval modes"
    );
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = config_file(dir.path(), &moons_config("bogus_knob = 3\n"));
    let out = run_vmbo(&["run", "--config", cfg.to_str().unwrap()]);
    assert_code(&out, 2, "unknown key");
    assert!(
        stderr_of(&out).contains("bogus_knob"),
        "error message should name the offending key: {}",
        stderr_of(&out)
    );
}

#[test]
fn out_of_vocabulary_enum_is_a_config_error() {
    let dir = TempDir::new().unwrap();
    let cfg = config_file(dir.path(), &moons_config(""));
    let out = run_vmbo(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--constraints",
        "sideways",
    ]);
    assert_code(&out, 2, "bad constraint mode");
    assert!(
        stderr_of(&out).contains("constraints.mode"),
        "error message should name the field: {}",
        stderr_of(&out)
    );
}

#[test]
fn missing_dataset_file_is_a_data_error() {
    let dir = TempDir::new().unwrap();
    let absent = dir.path().join("absent.csv");
    let cfg = config_file(
        dir.path(),
        &format!(
            "[dataset]\nkind = \"delimited\"\npath = \"{}\"\n",
            absent.display()
        ),
    );
    let out = run_vmbo(&["run", "--config", cfg.to_str().unwrap()]);
    assert_code(&out, 3, "missing dataset");
    assert!(
        stderr_of(&out).contains("absent.csv"),
        "error message should name the missing file: {}",
        stderr_of(&out)
    );
}

/// Six points, three columns, generic values: the optimum is unique.
const SCORES: &str = "6 3\n\
    0.91 0.13 0.05\n\
    0.82 0.24 0.11\n\
    0.21 0.73 0.33\n\
    0.12 0.64 0.27\n\
    0.31 0.22 0.85\n\
    0.04 0.18 0.93\n";

fn scores_matrix() -> DenseMatrix {
    let mut tokens = SCORES.split_whitespace().map(|t| t.parse::<f64>().unwrap());
    let n = tokens.next().unwrap() as usize;
    let p = tokens.next().unwrap() as usize;
    DenseMatrix::from_vec(n, p, tokens.collect())
}

fn scores_file(dir: &Path) -> PathBuf {
    let path = dir.join("scores.txt");
    write_text(&path, SCORES);
    path
}

/// Reads `assignment.csv` back into a plain label vector.
fn read_assignment(dir: &Path) -> Vec<usize> {
    let text = read_text(&dir.join("assignment.csv"));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("point,cluster"), "assignment.csv header");
    lines
        .map(|line| line.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

fn objective_of(u: &DenseMatrix, assign: &[usize]) -> f64 {
    assign.iter().enumerate().map(|(x, &c)| u.get(x, c)).sum()
}

#[test]
fn solve_agrees_with_reference_optima() {
    let dir = TempDir::new().unwrap();
    let scores = scores_file(dir.path());
    let u = scores_matrix();

    let out_eq = dir.path().join("eq");
    let solve = run_vmbo(&[
        "solve",
        scores.to_str().unwrap(),
        "--volumes",
        "2,2,2",
        "--out",
        out_eq.to_str().unwrap(),
    ]);
    assert_ok(&solve, "equality solve");
    let stdout = stdout_of(&solve);
    assert!(
        stdout.contains("outer_iterations="),
        "solver counters on stdout"
    );
    assert!(stdout.contains("m="), "price vector on stdout");

    let assign = read_assignment(&out_eq);
    assert_eq!(assign.len(), 6);
    let mut counts = [0usize; 3];
    for &c in &assign {
        counts[c] += 1;
    }
    assert_eq!(counts, [2, 2, 2], "assignment honors the requested volumes");

    let exact = VolumeConstraints::Exact(vec![2, 2, 2]);
    let (best, _) = exhaustive_optimum(&u, &exact).unwrap();
    assert!(
        (objective_of(&u, &assign) - best).abs() <= 1e-9,
        "equality objective {} differs from the enumerated optimum {best}",
        objective_of(&u, &assign)
    );

    let m_csv = read_text(&out_eq.join("m.csv"));
    assert_eq!(m_csv.lines().next(), Some("cluster,m"), "m.csv header");
    assert_eq!(m_csv.lines().count(), 4, "one price per cluster");

    let out_iv = dir.path().join("iv");
    let solve = run_vmbo(&[
        "solve",
        scores.to_str().unwrap(),
        "--lower",
        "1,1,1",
        "--upper",
        "4,4,4",
        "--out",
        out_iv.to_str().unwrap(),
    ]);
    assert_ok(&solve, "interval solve");
    let assign = read_assignment(&out_iv);
    let interval = VolumeConstraints::Interval {
        lower: vec![1, 1, 1],
        upper: vec![4, 4, 4],
    };
    let best = mincostflow_optimum(&u, &interval).unwrap();
    assert!(
        (objective_of(&u, &assign) - best).abs() <= 1e-9,
        "interval objective {} differs from the flow optimum {best}",
        objective_of(&u, &assign)
    );
}

#[test]
fn solve_start_price_override_reaches_the_same_optimum() {
    let dir = TempDir::new().unwrap();
    let scores = scores_file(dir.path());

    let out_default = dir.path().join("default");
    let solve = run_vmbo(&[
        "solve",
        scores.to_str().unwrap(),
        "--volumes",
        "2,2,2",
        "--out",
        out_default.to_str().unwrap(),
    ]);
    assert_ok(&solve, "default start");

    let out_shifted = dir.path().join("shifted");
    let solve = run_vmbo(&[
        "solve",
        scores.to_str().unwrap(),
        "--volumes",
        "2,2,2",
        "--m0",
        "5.0,-2.0,0.25",
        "--out",
        out_shifted.to_str().unwrap(),
    ]);
    assert_ok(&solve, "shifted start");
    assert_eq!(
        read_assignment(&out_default),
        read_assignment(&out_shifted),
        "the unique optimum must not depend on the starting prices"
    );

    let bad = run_vmbo(&[
        "solve",
        scores.to_str().unwrap(),
        "--volumes",
        "2,2,2",
        "--m0",
        "1.0,2.0",
    ]);
    assert_code(&bad, 2, "wrong m0 length");
    assert!(
        stderr_of(&bad).contains("--m0"),
        "error message should name the flag: {}",
        stderr_of(&bad)
    );
}

#[test]
fn infeasible_constraints_use_their_own_exit_code() {
    let dir = TempDir::new().unwrap();
    let scores = scores_file(dir.path());

    let bad_sum = run_vmbo(&["solve", scores.to_str().unwrap(), "--volumes", "3,3,3"]);
    assert_code(&bad_sum, 4, "volumes sum past the point count");
    assert!(
        stderr_of(&bad_sum).contains("infeasible"),
        "stderr: {}",
        stderr_of(&bad_sum)
    );

    let bad_lower = run_vmbo(&[
        "solve",
        scores.to_str().unwrap(),
        "--lower",
        "3,3,3",
        "--upper",
        "4,4,4",
    ]);
    assert_code(&bad_lower, 4, "lower bounds sum past the point count");
}

#[test]
fn gen_moons_roundtrips_and_feeds_the_pipeline() {
    let dir = TempDir::new().unwrap();
    let cfg = config_file(
        dir.path(),
        "[dataset]\npoints_per_class = 40\nambient_dim = 6\n",
    );
    let g1 = dir.path().join("g1");
    let g2 = dir.path().join("g2");
    for out in [&g1, &g2] {
        let gen = run_vmbo(&[
            "gen-moons",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_ok(&gen, "gen-moons");
    }
    let emb = std::fs::read(g1.join("moons.emb")).unwrap();
    assert_eq!(
        emb,
        std::fs::read(g2.join("moons.emb")).unwrap(),
        "generator output must be byte-identical across runs"
    );
    assert_eq!(
        read_text(&g1.join("moons_labels.csv")),
        read_text(&g2.join("moons_labels.csv"))
    );

    let cloud = load_embedding(&g1.join("moons.emb")).expect("embedding loads back");
    assert_eq!(cloud.len(), 120);
    assert_eq!(cloud.dim(), 6);
    let labels: Vec<u32> = read_text(&g1.join("moons_labels.csv"))
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    assert_eq!(labels.len(), 120);
    let mut counts = [0usize; 3];
    for &l in &labels {
        counts[l as usize] += 1;
    }
    assert_eq!(counts, [40, 40, 40], "forty points per moon");

    let run_cfg = config_file(
        &g1,
        &format!(
            "[dataset]\n\
             kind = \"embedding\"\n\
             path = \"{}\"\n\
             labels_path = \"{}\"\n\n\
             [graph]\nk = 8\n\n\
             [run]\ntrials = 1\nlabels_per_class = 3\n",
            g1.join("moons.emb").display(),
            g1.join("moons_labels.csv").display()
        ),
    );
    let out = g1.join("run");
    let run = run_vmbo(&[
        "run",
        "--config",
        run_cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ok(&run, "run on generated files");
    assert_eq!(
        read_text(&out.join("results.csv")).lines().count(),
        2,
        "header plus one trial row"
    );
}

#[test]
fn spectrum_writes_sorted_nonnegative_eigenvalues() {
    let dir = TempDir::new().unwrap();
    let cfg = config_file(
        dir.path(),
        &format!("{}\n[kernel]\nrank = 12\n", moons_config("")),
    );
    let out = dir.path().join("eigen");
    let spectrum = run_vmbo(&[
        "spectrum",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ok(&spectrum, "spectrum");

    let csv = read_text(&out.join("eigenvalues.csv"));
    let values: Vec<f64> = csv_column(&csv, 1)
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();
    assert_eq!(values.len(), 12);
    assert!(
        values[0].abs() <= 1e-8,
        "leading eigenvalue {} not ~0",
        values[0]
    );
    for w in values.windows(2) {
        assert!(w[0] <= w[1] + 1e-12, "eigenvalues out of order: {w:?}");
    }
    assert!(values.iter().all(|&v| v >= -1e-10), "negative eigenvalue");
}

#[test]
fn probe_fits_a_slope_and_rejects_fixed_kernels() {
    let dir = TempDir::new().unwrap();
    let cfg = config_file(
        dir.path(),
        &format!(
            "{}\n[kernel]\nkind = \"positive-taylor\"\nh = 1.0\n\n[probe]\nh_grid = [0.5, 1.0]\n",
            moons_config("")
        ),
    );
    let out = dir.path().join("probe");
    let probe = run_vmbo(&[
        "probe",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_ok(&probe, "probe");
    assert!(
        stdout_of(&probe).contains("slope="),
        "probe reports a slope"
    );
    let csv = read_text(&out.join("probe.csv"));
    assert!(
        csv.starts_with("h,iteration,initial_error"),
        "probe.csv header: {}",
        csv.lines().next().unwrap_or("")
    );

    let fixed = run_vmbo(&[
        "probe",
        "--config",
        cfg.to_str().unwrap(),
        "--kernel",
        "squared-rw",
    ]);
    assert_code(&fixed, 2, "probe on a kernel without a time step");
}
