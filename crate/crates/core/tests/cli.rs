//! End-to-end tests of the `fracvar` binary: flag handling, exit codes,
//! file formats, and the stdout/stderr split.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fracvar"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn fracvar")
}

fn tmp_path(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("fracvar-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn data_rows(csv: &str) -> Vec<Vec<f64>> {
    csv.lines()
        .skip(1)
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect()
}

#[test]
fn solve_example1_writes_101_rows() {
    let out_path = tmp_path("ex1.csv");
    let out = run(&[
        "solve",
        "--problem",
        "example1",
        "--n",
        "100",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    // Data goes to the file, diagnostics to stderr, nothing on stdout.
    assert!(stdout(&out).is_empty());
    assert!(stderr(&out).contains("iterations"));
    let csv = std::fs::read_to_string(&out_path).unwrap();
    assert!(csv.starts_with("t,x\n"));
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 101);
    assert_eq!(rows[0], vec![0.0, 0.0]);
    assert_eq!(rows[100], vec![10.0, 100.0]);
    assert!(rows.windows(2).all(|w| w[1][0] > w[0][0]));
}

#[test]
fn solve_example2_boundary_rows_are_exact() {
    let out_path = tmp_path("ex2.csv");
    let out = run(&[
        "solve",
        "--problem",
        "example2",
        "--n",
        "100",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let rows = data_rows(&std::fs::read_to_string(&out_path).unwrap());
    assert_eq!(rows.len(), 101);
    assert_eq!(rows[0][1], 0.0);
    assert_eq!(rows[100][0], 1.0);
    assert_eq!(rows[100][1], 1.0);
}

#[test]
fn solve_is_byte_deterministic() {
    let p1 = tmp_path("det1.csv");
    let p2 = tmp_path("det2.csv");
    for p in [&p1, &p2] {
        let out = run(&[
            "solve",
            "--problem",
            "example1",
            "--n",
            "40",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
    }
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn solve_without_n_exits_1_with_usage() {
    let out = run(&[
        "solve",
        "--problem",
        "example1",
        "--out",
        tmp_path("nope.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("--n"), "stderr: {err}");
    assert!(err.contains("usage"), "stderr: {err}");
}

#[test]
fn solve_unknown_problem_exits_1() {
    let out = run(&[
        "solve",
        "--problem",
        "definitely-not-a-problem",
        "--n",
        "10",
        "--out",
        tmp_path("nope2.csv").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!stderr(&out).is_empty());
}

#[test]
fn solve_non_convergence_exits_2_and_still_writes() {
    let out_path = tmp_path("ex2-cap.csv");
    let out = run(&[
        "solve",
        "--problem",
        "example2",
        "--n",
        "50",
        "--max-iter",
        "3",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    let csv = std::fs::read_to_string(&out_path).unwrap();
    assert!(csv.lines().last().unwrap().starts_with("# not converged"));
    assert_eq!(data_rows(&csv).len(), 51);
    // The file still round-trips through the residual command.
    let audit = run(&[
        "residual",
        "--problem",
        "example2",
        "--solution",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(audit.status.code(), Some(0), "stderr: {}", stderr(&audit));
}

#[test]
fn convergence_table_decreases_against_analytic_reference() {
    let csv_path = tmp_path("conv.csv");
    let out = run(&[
        "convergence",
        "--problem",
        "example1",
        "--n-list",
        "10,50,100,200",
        "--reference",
        "analytic:t^2",
        "--out",
        csv_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let table = stdout(&out);
    assert!(table.lines().count() >= 5, "table: {table}");
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut errors = Vec::new();
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        errors.push(fields[1].parse::<f64>().unwrap());
        assert_eq!(fields[5], "true");
    }
    assert_eq!(errors.len(), 4);
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "errors: {errors:?}");
}

#[test]
fn convergence_marks_failed_rows_and_exits_2() {
    let out = run(&[
        "convergence",
        "--problem",
        "example2",
        "--n-list",
        "10,20",
        "--reference",
        "finest",
        "--max-iter",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2), "stderr: {}", stderr(&out));
    assert!(stdout(&out).contains("[not converged]"), "{}", stdout(&out));
}

#[test]
fn convergence_rejects_single_grid_finest_reference() {
    let out = run(&[
        "convergence",
        "--problem",
        "example1",
        "--n-list",
        "100",
        "--reference",
        "finest",
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("at least 2"));
}

#[test]
fn convergence_rejects_malformed_n_list() {
    let out = run(&["convergence", "--problem", "example1", "--n-list", "abc"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn residual_round_trips_solver_output() {
    let sol = tmp_path("ex1-for-residual.csv");
    let out = run(&[
        "solve",
        "--problem",
        "example1",
        "--n",
        "100",
        "--out",
        sol.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let audit = run(&[
        "residual",
        "--problem",
        "example1",
        "--solution",
        sol.to_str().unwrap(),
        "--legendre",
        "--convexity",
        "200",
    ]);
    assert_eq!(audit.status.code(), Some(0), "stderr: {}", stderr(&audit));
    let text = stdout(&audit);
    let grab = |key: &str| -> f64 {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{key}=")))
            .unwrap_or_else(|| panic!("missing {key} in: {text}"))
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap()
    };
    // Solver output satisfies the audited conditions to the termination
    // floor, and the integrand is quadratic in the derivative slot.
    assert!(grab("sup_norm_interior") < 1e-6);
    assert!((grab("legendre_min") - 2.0).abs() < 1e-6);
    assert!(text.contains("convexity=pass"), "{text}");
}

#[test]
fn residual_rejects_mismatched_grid() {
    let sol = tmp_path("bad-grid.csv");
    std::fs::write(&sol, "t,x\n0,0\n0.5,1\n0.7,2\n").unwrap();
    let out = run(&[
        "residual",
        "--problem",
        "example1",
        "--solution",
        sol.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("grid mismatch"), "{}", stderr(&out));
}

#[test]
fn residual_rejects_wrong_row_count() {
    // Truncating the file moves the last node off b, which the implied
    // grid check catches.
    let sol = tmp_path("truncated.csv");
    let full = tmp_path("full-for-truncate.csv");
    let out = run(&[
        "solve",
        "--problem",
        "example1",
        "--n",
        "20",
        "--out",
        full.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = std::fs::read_to_string(&full).unwrap();
    let kept: Vec<&str> = text.lines().take(18).collect();
    std::fs::write(&sol, kept.join("\n") + "\n").unwrap();
    let audit = run(&[
        "residual",
        "--problem",
        "example1",
        "--solution",
        sol.to_str().unwrap(),
    ]);
    assert_eq!(audit.status.code(), Some(1));
}

#[test]
fn problem_file_pipeline_with_free_endpoint_and_transversality() {
    let problem = tmp_path("free.fvp");
    std::fs::write(
        &problem,
        "[problem]\na = 0\nb = 1\nalpha = 0.5\nlagrangian = \"(d - 1)^2\"\nx_a = 0\nx_b = free\n\n[solver]\nn = 40\n",
    )
    .unwrap();
    let sol = tmp_path("free.csv");
    let out = run(&[
        "solve",
        "--problem",
        problem.to_str().unwrap(),
        "--out",
        sol.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let audit = run(&[
        "residual",
        "--problem",
        problem.to_str().unwrap(),
        "--solution",
        sol.to_str().unwrap(),
    ]);
    assert_eq!(audit.status.code(), Some(0), "stderr: {}", stderr(&audit));
    assert!(
        stdout(&audit).contains("transversality_right="),
        "{}",
        stdout(&audit)
    );
}

#[test]
fn isoperimetric_problem_file_with_lambda_audit() {
    let problem = tmp_path("iso.fvp");
    std::fs::write(
        &problem,
        concat!(
            "[problem]\na = 0\nb = 1\nalpha = 0.5\nlagrangian = \"d^2\"\nx_a = 0\nx_b = 1\n\n",
            "[constraint]\nkind = isoperimetric\nintegrand = \"x\"\nlevel = 0.6\n\n",
            "[solver]\nn = 40\n",
        ),
    )
    .unwrap();
    let sol = tmp_path("iso.csv");
    let out = run(&[
        "solve",
        "--problem",
        problem.to_str().unwrap(),
        "--out",
        sol.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", stderr(&out));
    let err = stderr(&out);
    let lambda: f64 = err
        .lines()
        .find_map(|l| l.strip_prefix("multiplier    = "))
        .expect("multiplier in solve summary")
        .trim()
        .parse()
        .unwrap();
    let audit = run(&[
        "residual",
        "--problem",
        problem.to_str().unwrap(),
        "--solution",
        sol.to_str().unwrap(),
        "--lambda",
        &lambda.to_string(),
    ]);
    assert_eq!(audit.status.code(), Some(0), "stderr: {}", stderr(&audit));
    let text = stdout(&audit);
    assert!(text.contains("m_residual_sup="), "{text}");
    assert!(text.contains("abnormal_suspected=false"), "{text}");
}

#[test]
fn holonomic_two_component_audit() {
    let problem = tmp_path("holo.fvp");
    std::fs::write(
        &problem,
        concat!(
            "[problem]\na = 0\nb = 1\nalpha1 = 0.5\nalpha2 = 0.5\n",
            "lagrangian = \"d1^2 + d2^2\"\n",
            "x1_a = 0\nx1_b = 1\nx2_a = 0\nx2_b = 1\n\n",
            "[constraint]\nkind = holonomic\ng = \"x1 - x2\"\n",
        ),
    )
    .unwrap();
    // Hand-built feasible trajectory x1 = x2 = t on the implied grid,
    // in the writer's own number format.
    let n = 10;
    let mut csv = String::from("t,x1,x2\n");
    for j in 0..=n {
        let t = j as f64 / n as f64;
        csv.push_str(&format!("{t:.11e},{t:.11e},{t:.11e}\n"));
    }
    let sol = tmp_path("holo.csv");
    std::fs::write(&sol, csv).unwrap();
    let audit = run(&[
        "residual",
        "--problem",
        problem.to_str().unwrap(),
        "--solution",
        sol.to_str().unwrap(),
    ]);
    assert_eq!(audit.status.code(), Some(0), "stderr: {}", stderr(&audit));
    let text = stdout(&audit);
    let violation: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("constraint_violation="))
        .expect("constraint_violation line")
        .parse()
        .unwrap();
    assert!(violation < 1e-12, "{text}");
}

#[test]
fn help_exits_0() {
    let out = run(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout(&out).contains("solve"));
}
