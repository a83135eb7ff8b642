use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cotwd_cli::{EXIT_ERROR, EXIT_MAX_ITERATIONS, RUN_OUTPUTS};
use cotwd_core::io::{read_dense, read_distance_matrix, read_tree};
use tempfile::TempDir;

fn cotwd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cotwd"))
        .args(args)
        .env_remove("COTWD_THREADS")
        .output()
        .expect("binary runs")
}

fn path(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

/// A reduced toy dataset (16 users × 14 videos) written by `gen-toy`.
fn small_toy(dir: &TempDir) -> String {
    let out = path(dir, "toy");
    #[rustfmt::skip]
    let status = cotwd(&[
        "gen-toy", "--output-dir", &out, "--seed", "3",
        "--users-per-leaf", "2", "--videos-per-leaf", "2",
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    format!("{out}/toy.csv")
}

fn line_count(p: impl AsRef<Path>) -> usize {
    fs::read_to_string(p).unwrap().lines().count()
}

#[test]
fn gen_toy_writes_matrix_and_aligned_labels() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(&dir, "toy");
    assert!(cotwd(&["gen-toy", "--output-dir", &out]).status.success());
    let data = read_dense(format!("{out}/toy.csv"), false).unwrap();
    assert_eq!((data.matrix.nrows(), data.matrix.ncols()), (64, 56));
    assert!(data.matrix.as_array().iter().all(|&v| v >= 0.0));
    assert_eq!(line_count(format!("{out}/row_labels.txt")), 64);
    assert_eq!(line_count(format!("{out}/col_sublabels.txt")), 56);
    assert_eq!(read_distance_matrix(format!("{out}/row_hierarchy_distances.csv")).unwrap().len(), 64);
}

#[test]
fn run_outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_toy(&dir);
    for threads in ["1", "3"] {
        let out = path(&dir, threads);
        #[rustfmt::skip]
        let o = cotwd(&[
            "run", "--input", &input, "--output-dir", &out, "--threads", threads,
            "--algorithm", "alg2", "--threshold-r", "0.99", "--threshold-c", "0.99",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in RUN_OUTPUTS {
        let a = fs::read(dir.path().join("1").join(f)).unwrap();
        let b = fs::read(dir.path().join("3").join(f)).unwrap();
        assert!(a == b, "{f} differs between thread counts");
    }
}

#[test]
fn history_has_a_header_and_one_line_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_toy(&dir);
    let out = path(&dir, "run");
    let o = cotwd(&["run", "--input", &input, "--output-dir", &out, "--record-timings"]);
    assert!(o.status.success());
    let text = fs::read_to_string(format!("{out}/history.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["record"], "config");
    assert_eq!(lines[0]["config"]["max_iterations"], 25);
    assert!(lines.len() >= 2);
    for (i, rec) in lines[1..].iter().enumerate() {
        assert_eq!(rec["iteration"], i + 1);
        assert!(rec["wall_ms"].is_number());
    }
    let (tree, names) = read_tree(format!("{out}/sample_tree.nwk")).unwrap();
    assert_eq!(tree.leaf_count(), 16);
    let mut sorted = names.clone();
    sorted.sort_by_key(|n| n.parse::<usize>().unwrap());
    assert_eq!(sorted, (0..16).map(|i| i.to_string()).collect::<Vec<_>>());
}

#[test]
fn missing_threshold_is_a_usage_error_naming_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_toy(&dir);
    let out = path(&dir, "run");
    let o = cotwd(&["run", "--input", &input, "--output-dir", &out, "--algorithm", "alg2", "--threshold-c", "0.9"]);
    assert_eq!(o.status.code(), Some(EXIT_ERROR));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--threshold-r"));
    assert!(!Path::new(&out).exists(), "nothing is written on a usage error");
}

#[test]
fn invalid_values_name_their_flag() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_toy(&dir);
    let out = path(&dir, "run");
    let cases: [(&[&str], &str); 4] = [
        (&["--threshold-r", "1.5", "--threshold-c", "0.5", "--algorithm", "fixed-mode"], "--threshold-r"),
        (&["--landmark-c", "1"], "--landmark-c"),
        (&["--sample-metric", "provided"], "--sample-distances"),
        (&["--gamma-c=-1"], "--gamma-c"),
    ];
    for (extra, flag) in cases {
        let mut args = vec!["run", "--input", &input, "--output-dir", &out];
        args.extend_from_slice(extra);
        let o = cotwd(&args);
        assert_eq!(o.status.code(), Some(EXIT_ERROR), "{extra:?}");
        assert!(String::from_utf8_lossy(&o.stderr).contains(flag), "{extra:?}");
    }
    let o = cotwd(&["run", "--input", &path(&dir, "missing.csv"), "--output-dir", &out]);
    assert_eq!(o.status.code(), Some(EXIT_ERROR));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--input"));
}

#[test]
fn iteration_limit_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_toy(&dir);
    let out = path(&dir, "run");
    let o = cotwd(&["run", "--input", &input, "--output-dir", &out, "--max-iterations", "1"]);
    assert_eq!(o.status.code(), Some(EXIT_MAX_ITERATIONS));
    assert!(RUN_OUTPUTS.iter().all(|f| Path::new(&out).join(f).exists()));
}

#[test]
fn provided_metrics_are_used_as_given() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_toy(&dir);
    let toy = dir.path().join("toy");
    let row_d: PathBuf = toy.join("row_hierarchy_distances.csv");
    let col_d: PathBuf = toy.join("col_hierarchy_distances.csv");
    let out = path(&dir, "run");
    #[rustfmt::skip]
    let o = cotwd(&[
        "run", "--input", &input, "--output-dir", &out, "--algorithm", "fixed-mode",
        "--threshold-r", "1", "--threshold-c", "1",
        "--sample-metric", "provided", "--sample-distances", &row_d.to_string_lossy(),
        "--feature-metric", "provided", "--feature-distances", &col_d.to_string_lossy(),
    ]);
    assert!(o.status.code() != Some(EXIT_ERROR), "{}", String::from_utf8_lossy(&o.stderr));
    // A 14-point matrix offered for 16 samples is rejected.
    #[rustfmt::skip]
    let o = cotwd(&[
        "run", "--input", &input, "--output-dir", &out,
        "--sample-metric", "provided", "--sample-distances", &col_d.to_string_lossy(),
    ]);
    assert_eq!(o.status.code(), Some(EXIT_ERROR));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--sample-distances"));
}

#[test]
fn knn_on_separated_clusters_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let n = 20;
    let rows: Vec<String> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| match (i == j, i / 10 == j / 10) {
                    (true, _) => "0",
                    (false, true) => "1",
                    (false, false) => "5",
                })
                .collect::<Vec<_>>()
                .join(",")
        })
        .collect();
    let d = path(&dir, "d.csv");
    let labels = path(&dir, "labels.txt");
    fs::write(&d, rows.join("\n") + "\n").unwrap();
    let names: Vec<&str> = (0..n).map(|i| if i < 10 { "left" } else { "right" }).collect();
    fs::write(&labels, names.join("\n") + "\n").unwrap();
    let o = cotwd(&["eval-knn", "--distances", &d, "--labels", &labels, "--k", "1,3,5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let best: serde_json::Value = stdout
        .lines()
        .filter_map(|l| serde_json::from_str::<serde_json::Value>(l).ok())
        .find(|v| v["record"] == "knn-best")
        .unwrap();
    assert_eq!(best["mean"], 1.0);
    assert_eq!(best["k"], 1);
}

#[test]
fn sparsity_of_the_learned_trees_matches_the_history() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_toy(&dir);
    let out = path(&dir, "run");
    assert!(cotwd(&["run", "--input", &input, "--output-dir", &out]).status.success());
    #[rustfmt::skip]
    let o = cotwd(&[
        "eval-sparsity", "--input", &input,
        "--sample-tree", &format!("{out}/sample_tree.nwk"), "--feature-tree", &format!("{out}/feature_tree.nwk"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    let got: serde_json::Value = serde_json::from_str(stdout.lines().last().unwrap()).unwrap();
    let history = fs::read_to_string(format!("{out}/history.jsonl")).unwrap();
    let last: serde_json::Value = serde_json::from_str(history.lines().last().unwrap()).unwrap();
    for key in ["l1_haar_r", "l1_haar_c"] {
        let (a, b) = (got[key].as_f64().unwrap(), last[key].as_f64().unwrap());
        assert!((a - b).abs() <= 1e-9 * b, "{key}: {a} vs {b}");
    }
}

#[test]
fn export_round_trips_through_matrix_market() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_toy(&dir);
    let mtx = path(&dir, "x.mtx");
    let csv = path(&dir, "x.csv");
    assert!(cotwd(&["export", "--input", &input, "--output", &mtx]).status.success());
    assert!(cotwd(&["export", "--input", &mtx, "--output", &csv]).status.success());
    assert_eq!(fs::read(&input).unwrap(), fs::read(&csv).unwrap());
    let o = cotwd(&["export", "--input", &input, "--tree", &mtx, "--output", &csv]);
    assert_eq!(o.status.code(), Some(EXIT_ERROR));
}

#[test]
fn exported_tree_distances_are_a_metric() {
    let dir = tempfile::tempdir().unwrap();
    let input = small_toy(&dir);
    let out = path(&dir, "run");
    assert!(cotwd(&["run", "--input", &input, "--output-dir", &out]).status.success());
    let d = path(&dir, "tree_d.csv");
    let o = cotwd(&["export", "--tree", &format!("{out}/feature_tree.nwk"), "--output", &d]);
    assert!(o.status.success());
    let w = read_distance_matrix(&d).unwrap();
    assert_eq!(w.len(), 14);
    assert!(w.max_triangle_violation() <= 1e-12);
}
