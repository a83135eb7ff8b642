use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use cotwd_core::eval::{default_k_grid, generate_toy, knn_accuracy, Hierarchy, LabeledDistances, ToySpec};
use cotwd_core::io::{
    read_dense, read_distance_matrix, read_labels, read_sparse, write_dense, write_distance_matrix, write_history,
    write_labels, write_sparse, write_tree, Dataset,
};
use cotwd_core::matrix::{row_distances, InitialMetric};
use cotwd_core::pipeline::{run_variant, IterationConfig, RunStatus, Variant};
use cotwd_core::wavelet::{haar_basis, l1_haar_norm};
use cotwd_core::{DistanceMatrix, WeightedBinaryTree};
use serde::Serialize;

use crate::{
    Algorithm, Cli, Command, EvalKnnArgs, EvalSparsityArgs, ExportArgs, GenToyArgs, InputArgs, MetricChoice, RunArgs,
    EXIT_CONVERGED, EXIT_MAX_ITERATIONS,
};

/// Files written by `run`, relative to the output directory.
pub const RUN_OUTPUTS: [&str; 5] = [
    "sample_twd.csv",
    "feature_twd.csv",
    "sample_tree.nwk",
    "feature_tree.nwk",
    "history.jsonl",
];

#[derive(Debug)]
pub enum CliError {
    /// A problem attributable to one flag or the file it names.
    Flag { flag: &'static str, message: String },
    Other(String),
}

impl CliError {
    fn flag(flag: &'static str, message: impl fmt::Display) -> Self {
        CliError::Flag {
            flag,
            message: message.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Flag { flag, message } => write!(f, "{flag}: {message}"),
            CliError::Other(message) => f.write_str(message),
        }
    }
}

impl std::error::Error for CliError {}

impl From<cotwd_core::Error> for CliError {
    fn from(e: cotwd_core::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn execute(cli: &Cli) -> Result<i32> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::flag("--threads", e))?;
    pool.install(|| match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::GenToy(args) => cmd_gen_toy(args),
        Command::EvalKnn(args) => cmd_eval_knn(args),
        Command::EvalSparsity(args) => cmd_eval_sparsity(args),
        Command::Export(args) => cmd_export(args),
    })
}

fn read_matrix(path: &Path, header: bool, flag: &'static str) -> Result<Dataset> {
    let is_sparse = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx"));
    let read = if is_sparse { read_sparse(path) } else { read_dense(path, header) };
    read.map_err(|e| CliError::flag(flag, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::flag("--output-dir", format!("{}: {e}", dir.display())))
}

/// Names used for tree leaves: the dataset's own names, else indices.
fn leaf_names(names: &Option<Vec<String>>, count: usize) -> Vec<String> {
    names.clone().unwrap_or_else(|| (0..count).map(|i| i.to_string()).collect())
}

fn check_range(flag: &'static str, value: f64, ok: bool, expected: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(CliError::flag(flag, format!("must be {expected}, got {value}")))
    }
}

impl RunArgs {
    fn iteration_config(&self) -> IterationConfig {
        IterationConfig {
            gamma_r: self.gamma_r,
            gamma_c: self.gamma_c,
            max_scale: self.max_scale,
            scale_multiplier: self.scale_multiplier,
            threshold_r: self.threshold_r,
            threshold_c: self.threshold_c,
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            seed: self.seed,
            landmark_c: self.landmark_c,
            density_normalize: self.density_normalize,
            regularizer_epsilon: self.regularizer_epsilon,
        }
    }

    /// Flag-level validation, done before any file is read.
    fn validate(&self) -> Result<()> {
        for (flag, g) in [("--gamma-r", self.gamma_r), ("--gamma-c", self.gamma_c)] {
            check_range(flag, g, g.is_finite() && g >= 0.0, "a nonnegative number")?;
        }
        let s = self.scale_multiplier;
        check_range("--scale-multiplier", s, s.is_finite() && s > 0.0, "positive")?;
        let t = self.tolerance;
        check_range("--tolerance", t, t.is_finite() && t > 0.0, "positive")?;
        let e = self.regularizer_epsilon;
        check_range("--regularizer-epsilon", e, e.is_finite() && e > 0.0, "positive")?;
        if self.max_iterations == 0 {
            return Err(CliError::flag("--max-iterations", "must be at least 1"));
        }
        if let Some(c) = self.landmark_c {
            check_range("--landmark-c", c, c > 0.0 && c < 1.0, "in (0, 1)")?;
        }
        for (flag, t) in [("--threshold-r", self.threshold_r), ("--threshold-c", self.threshold_c)] {
            match t {
                Some(t) => check_range(flag, t, t > 0.0 && t <= 1.0, "in (0, 1]")?,
                None if self.algorithm != Algorithm::Alg1 => {
                    return Err(CliError::flag(flag, format!("required with --algorithm {}", self.algorithm_name())));
                }
                None => {}
            }
        }
        for (metric_flag, metric, path_flag, path) in [
            ("--sample-metric", self.sample_metric, "--sample-distances", &self.sample_distances),
            ("--feature-metric", self.feature_metric, "--feature-distances", &self.feature_distances),
        ] {
            match (metric, path) {
                (MetricChoice::Provided, None) => {
                    return Err(CliError::flag(path_flag, format!("required with {metric_flag} provided")));
                }
                (MetricChoice::Cosine | MetricChoice::Euclidean, Some(_)) => {
                    return Err(CliError::flag(path_flag, format!("only used with {metric_flag} provided")));
                }
                _ => {}
            }
        }
        Ok(())
    }

    fn algorithm_name(&self) -> &'static str {
        match self.algorithm {
            Algorithm::Alg1 => "alg1",
            Algorithm::Alg2 => "alg2",
            Algorithm::FixedMode => "fixed-mode",
        }
    }

    fn variant(&self) -> Variant {
        match self.algorithm {
            Algorithm::Alg1 => Variant::ALG1,
            Algorithm::Alg2 => Variant::ALG2,
            Algorithm::FixedMode => Variant::FIXED_MODE,
        }
    }
}

fn initial_metric(
    rows: ndarray::ArrayView2<'_, f64>,
    choice: MetricChoice,
    provided: Option<&Path>,
    metric_flag: &'static str,
    path_flag: &'static str,
) -> Result<DistanceMatrix> {
    let d = match choice {
        MetricChoice::Cosine => row_distances(rows, InitialMetric::Cosine).map_err(|e| CliError::flag(metric_flag, e))?,
        MetricChoice::Euclidean => {
            row_distances(rows, InitialMetric::Euclidean).map_err(|e| CliError::flag(metric_flag, e))?
        }
        MetricChoice::Provided => {
            let path = provided.expect("validated");
            read_distance_matrix(path).map_err(|e| CliError::flag(path_flag, e))?
        }
    };
    if d.len() != rows.nrows() {
        return Err(CliError::flag(
            path_flag,
            format!("{0}×{0} matrix for {1} points", d.len(), rows.nrows()),
        ));
    }
    Ok(d)
}

/// First line of the history log.
#[derive(Serialize)]
struct RunHeader<'a> {
    record: &'static str,
    algorithm: Algorithm,
    input: &'a InputArgs,
    rows: usize,
    columns: usize,
    sample_metric: MetricChoice,
    feature_metric: MetricChoice,
    sample_distances: &'a Option<std::path::PathBuf>,
    feature_distances: &'a Option<std::path::PathBuf>,
    config: &'a IterationConfig,
    initial_l1_haar_r: f64,
    initial_l1_haar_c: f64,
}

#[derive(Serialize)]
struct HistoryLine {
    iteration: usize,
    rel_change_r: f64,
    rel_change_c: f64,
    l1_haar_r: f64,
    l1_haar_c: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_ms: Option<f64>,
}

fn cmd_run(args: &RunArgs) -> Result<i32> {
    args.validate()?;
    let start = Instant::now();
    let data = read_matrix(&args.input.input, args.input.header, "--input")?;
    let x = &data.matrix;
    let m_r = initial_metric(
        x.view(),
        args.sample_metric,
        args.sample_distances.as_deref(),
        "--sample-metric",
        "--sample-distances",
    )?;
    let m_c = initial_metric(
        x.view().t(),
        args.feature_metric,
        args.feature_distances.as_deref(),
        "--feature-metric",
        "--feature-distances",
    )?;
    let config = args.iteration_config();
    let out = run_variant(x, &m_r, &m_c, &config, args.variant(), false)?;

    let dir = &args.output_dir;
    create_dir(dir)?;
    let row_names = leaf_names(&data.row_names, x.nrows());
    let col_names = leaf_names(&data.col_names, x.ncols());
    write_distance_matrix(&out.state.sample_twd, dir.join(RUN_OUTPUTS[0]))?;
    write_distance_matrix(&out.state.feature_twd, dir.join(RUN_OUTPUTS[1]))?;
    write_tree(&out.state.sample_tree, Some(&row_names), dir.join(RUN_OUTPUTS[2]))?;
    write_tree(&out.state.feature_tree, Some(&col_names), dir.join(RUN_OUTPUTS[3]))?;
    let header = RunHeader {
        record: "config",
        algorithm: args.algorithm,
        input: &args.input,
        rows: x.nrows(),
        columns: x.ncols(),
        sample_metric: args.sample_metric,
        feature_metric: args.feature_metric,
        sample_distances: &args.sample_distances,
        feature_distances: &args.feature_distances,
        config: &config,
        initial_l1_haar_r: out.initial_l1.0,
        initial_l1_haar_c: out.initial_l1.1,
    };
    let lines: Vec<HistoryLine> = out
        .history
        .iter()
        .map(|r| HistoryLine {
            iteration: r.iteration,
            rel_change_r: r.rel_change_r,
            rel_change_c: r.rel_change_c,
            l1_haar_r: r.l1_haar_r,
            l1_haar_c: r.l1_haar_c,
            wall_ms: args.record_timings.then_some(r.wall_ms),
        })
        .collect();
    write_history(dir.join(RUN_OUTPUTS[4]), Some(&header), &lines)?;

    let last = out.history.last();
    let status = match out.status {
        RunStatus::Converged => "converged",
        RunStatus::MaxIterations => "stopped at --max-iterations",
    };
    println!(
        "{} {status} after {} iterations (rel change r {:.3e}, c {:.3e}; L1 Haar r {:.4}, c {:.4}) in {:.2}s",
        args.algorithm_name(),
        out.state.iteration,
        last.map_or(f64::NAN, |r| r.rel_change_r),
        last.map_or(f64::NAN, |r| r.rel_change_c),
        last.map_or(out.initial_l1.0, |r| r.l1_haar_r),
        last.map_or(out.initial_l1.1, |r| r.l1_haar_c),
        start.elapsed().as_secs_f64(),
    );
    Ok(match out.status {
        RunStatus::Converged => EXIT_CONVERGED,
        RunStatus::MaxIterations => EXIT_MAX_ITERATIONS,
    })
}

fn names_of(hierarchy: &Hierarchy) -> (Vec<String>, Vec<String>) {
    let top = hierarchy.categories.iter().map(|c| c.name.clone()).collect();
    let sub = hierarchy
        .categories
        .iter()
        .flat_map(|c| c.subcategories.iter().map(move |(s, _)| format!("{}/{s}", c.name)))
        .collect();
    (top, sub)
}

fn cmd_gen_toy(args: &GenToyArgs) -> Result<i32> {
    if args.users_per_leaf == 0 {
        return Err(CliError::flag("--users-per-leaf", "must be at least 1"));
    }
    if args.videos_per_leaf == 0 {
        return Err(CliError::flag("--videos-per-leaf", "must be at least 1"));
    }
    let s = args.noise_sigma;
    check_range("--noise-sigma", s, s.is_finite() && s >= 0.0, "nonnegative")?;
    if args.embed_dim == 0 {
        return Err(CliError::flag("--embed-dim", "must be at least 1"));
    }
    let spec = ToySpec {
        noise_sigma: args.noise_sigma,
        embed_dim: args.embed_dim,
        seed: args.seed,
        user_tree: Hierarchy::users(args.users_per_leaf),
        video_tree: Hierarchy::videos(args.videos_per_leaf),
        ..Default::default()
    };
    let toy = generate_toy(&spec)?;
    let dir = &args.output_dir;
    create_dir(dir)?;
    let (user_top, user_sub) = names_of(&spec.user_tree);
    let (video_top, video_sub) = names_of(&spec.video_tree);
    let pick = |ids: &[usize], names: &[String]| ids.iter().map(|&i| names[i].clone()).collect::<Vec<_>>();
    write_dense(dir.join("toy.csv"), &Dataset::new(toy.x.clone()))?;
    write_labels(&pick(&toy.user_labels, &user_top), dir.join("row_labels.txt"))?;
    write_labels(&pick(&toy.video_labels, &video_top), dir.join("col_labels.txt"))?;
    write_labels(&pick(&toy.user_sublabels, &user_sub), dir.join("row_sublabels.txt"))?;
    write_labels(&pick(&toy.video_sublabels, &video_sub), dir.join("col_sublabels.txt"))?;
    write_distance_matrix(&toy.user_tree_distances, dir.join("row_hierarchy_distances.csv"))?;
    write_distance_matrix(&toy.video_tree_distances, dir.join("col_hierarchy_distances.csv"))?;
    println!(
        "wrote {}×{} toy matrix and labels to {}",
        toy.x.nrows(),
        toy.x.ncols(),
        dir.display()
    );
    Ok(EXIT_CONVERGED)
}

/// Maps label strings to dense ids in sorted order.
fn encode_labels(labels: &[String]) -> (Vec<usize>, Vec<String>) {
    let classes: BTreeMap<&str, usize> = labels.iter().map(|s| (s.as_str(), 0)).collect();
    let names: Vec<String> = classes.keys().map(|s| s.to_string()).collect();
    let ids = labels
        .iter()
        .map(|s| names.binary_search(s).expect("label present"))
        .collect();
    (ids, names)
}

#[derive(Serialize)]
struct KnnLine<'a> {
    record: &'static str,
    k: usize,
    mean: f64,
    std: f64,
    trials: usize,
    distances: &'a Path,
}

fn cmd_eval_knn(args: &EvalKnnArgs) -> Result<i32> {
    let f = args.train_fraction;
    check_range("--train-fraction", f, f > 0.0 && f < 1.0, "in (0, 1)")?;
    if args.trials == 0 {
        return Err(CliError::flag("--trials", "must be at least 1"));
    }
    let grid = args.k.clone().unwrap_or_else(default_k_grid);
    if grid.is_empty() || grid.contains(&0) {
        return Err(CliError::flag("--k", "neighbourhood sizes must be positive"));
    }
    let d = read_distance_matrix(&args.distances).map_err(|e| CliError::flag("--distances", e))?;
    let labels = read_labels(&args.labels).map_err(|e| CliError::flag("--labels", e))?;
    if labels.len() != d.len() {
        return Err(CliError::flag(
            "--labels",
            format!("{} labels for a {1}×{1} distance matrix", labels.len(), d.len()),
        ));
    }
    let (ids, classes) = encode_labels(&labels);
    let data = LabeledDistances::new(d, ids)?;
    let report = knn_accuracy(&data, &grid, args.train_fraction, args.trials, args.seed)?;

    println!("{} points, {} classes, {} trials", labels.len(), classes.len(), args.trials);
    println!("{:>4}  {:>8}  {:>8}", "k", "accuracy", "std");
    for s in &report.per_k {
        println!("{:>4}  {:>8.4}  {:>8.4}", s.k, s.mean, s.std);
    }
    let records = report
        .per_k
        .iter()
        .map(|s| ("knn", s))
        .chain(std::iter::once(("knn-best", &report.best)));
    for (record, s) in records {
        let line = KnnLine {
            record,
            k: s.k,
            mean: s.mean,
            std: s.std,
            trials: args.trials,
            distances: &args.distances,
        };
        println!("{}", serde_json::to_string(&line).expect("serializable"));
    }
    Ok(EXIT_CONVERGED)
}

fn read_named_tree(path: &Path, names: &[String], flag: &'static str) -> Result<WeightedBinaryTree> {
    let text = fs::read_to_string(path).map_err(|e| CliError::flag(flag, format!("{}: {e}", path.display())))?;
    WeightedBinaryTree::from_newick_named(&text, names).map_err(|e| CliError::flag(flag, e))
}

fn cmd_eval_sparsity(args: &EvalSparsityArgs) -> Result<i32> {
    let data = read_matrix(&args.input.input, args.input.header, "--input")?;
    let x = data.matrix.view();
    let row_names = leaf_names(&data.row_names, x.nrows());
    let col_names = leaf_names(&data.col_names, x.ncols());
    let sample_tree = read_named_tree(&args.sample_tree, &row_names, "--sample-tree")?;
    let feature_tree = read_named_tree(&args.feature_tree, &col_names, "--feature-tree")?;
    let r = l1_haar_norm(x.t(), &haar_basis(&sample_tree))?;
    let c = l1_haar_norm(x, &haar_basis(&feature_tree))?;
    println!("{:<8}  {:>12}", "mode", "L1 Haar");
    println!("{:<8}  {:>12.6}", "samples", r);
    println!("{:<8}  {:>12.6}", "features", c);
    let record = serde_json::json!({
        "record": "sparsity",
        "l1_haar_r": r,
        "l1_haar_c": c,
        "input": args.input.input,
    });
    println!("{record}");
    Ok(EXIT_CONVERGED)
}

fn cmd_export(args: &ExportArgs) -> Result<i32> {
    let out = &args.output;
    if let Some(tree_path) = &args.tree {
        let text =
            fs::read_to_string(tree_path).map_err(|e| CliError::flag("--tree", format!("{}: {e}", tree_path.display())))?;
        let (tree, _) = WeightedBinaryTree::from_newick(&text).map_err(|e| CliError::flag("--tree", e))?;
        write_distance_matrix(&tree.pairwise_distances(), out).map_err(|e| CliError::flag("--output", e))?;
        println!("wrote {0}×{0} leaf distances to {1}", tree.leaf_count(), out.display());
        return Ok(EXIT_CONVERGED);
    }
    let input = args.input.as_deref().expect("clap requires --input without --tree");
    let data = read_matrix(input, args.header, "--input")?;
    let to_sparse = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("mtx"));
    let written = if to_sparse {
        write_sparse(out, &data.matrix)
    } else {
        write_dense(out, &data)
    };
    written.map_err(|e| CliError::flag("--output", e))?;
    println!(
        "wrote {}×{} matrix to {}",
        data.matrix.nrows(),
        data.matrix.ncols(),
        out.display()
    );
    Ok(EXIT_CONVERGED)
}
