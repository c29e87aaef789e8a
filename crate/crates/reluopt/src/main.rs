//! Command-line front end for the pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 stage failure, 3 verification
//! failure. The RELUOPT_OUT environment variable overrides --out.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use reluopt::benchfn::{generate, BenchmarkFunction, BenchmarkId};
use reluopt::bounds::{classify, ia_bounds, BoundsSet};
use reluopt::experiment::{
    run_experiment, verify_artifacts, ActivationSpec, ExperimentSpec, StageToggles,
};
use reluopt::milp::{obbt, solve_adversarial, solve_min, BnbOptions, ObbtOptions};
use reluopt::network::Network;
use reluopt::regions::{enumerate, render_svg, EnumerateOptions};
use reluopt::scaling::scale_network;
use reluopt::trainer::{train, TrainConfig};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "reluopt", version, about = "Big-M MILP tooling for trained ReLU networks")]
struct Cli {
    /// Seed for all randomized steps.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Wall-clock limit for branch-and-bound solves, in seconds.
    #[arg(long, global = true, default_value_t = 300.0)]
    time_limit: f64,
    /// Worker threads for experiment rows.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output directory (RELUOPT_OUT overrides this).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a surrogate network on a benchmark function.
    Train {
        #[arg(long, default_value = "peaks")]
        benchmark: BenchmarkId,
        #[arg(long, default_value_t = 2)]
        depth: usize,
        #[arg(long, default_value_t = 25)]
        width: usize,
        /// relu, relu2 or relu5.
        #[arg(long, default_value = "relu")]
        activation: ActivationSpec,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        /// Sample count; 0 means the benchmark's full-scale default.
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        /// Also export the dataset as CSV with its sidecar.
        #[arg(long)]
        export_data: bool,
    },
    /// Rescale a network to minimal l1 norm without changing its function.
    Scale {
        #[arg(long)]
        net: PathBuf,
    },
    /// Interval-arithmetic pre-activation bounds.
    Bounds {
        #[arg(long)]
        net: PathBuf,
    },
    /// LP-based bound tightening.
    Obbt {
        #[arg(long)]
        net: PathBuf,
        /// Starting bounds (defaults to fresh interval arithmetic).
        #[arg(long)]
        bounds: Option<PathBuf>,
    },
    /// Enumerate linear regions.
    Regions {
        #[arg(long)]
        net: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        max_regions: usize,
        /// Also write an SVG rendering here.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Globally minimize the network output.
    Solve {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        bounds: Option<PathBuf>,
    },
    /// Maximize h(x0+e)_k - h(x0+e)_i over an infinity-ball.
    Adversarial {
        #[arg(long)]
        net: PathBuf,
        /// Comma-separated coordinates, e.g. "0.1,-0.2".
        #[arg(long)]
        x0: String,
        #[arg(long)]
        delta: f64,
        /// The (incorrect) label k to push toward.
        #[arg(long)]
        target_label: usize,
        /// The (correct) label i to push away from.
        #[arg(long)]
        true_label: usize,
    },
    /// Run a hyperparameter grid through the full pipeline.
    Experiment {
        /// JSON spec file; overrides the grid flags below.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, default_value = "peaks")]
        benchmark: BenchmarkId,
        #[arg(long, value_delimiter = ',', default_values_t = vec![1, 2, 3, 4, 5])]
        depths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![25])]
        widths: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![ActivationSpec::Relu])]
        activations: Vec<ActivationSpec>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 1e-5, 1e-4])]
        lambdas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.0, 0.2])]
        dropouts: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0, 1])]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        #[arg(long, default_value_t = 300)]
        epochs: usize,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long)]
        no_scale: bool,
        #[arg(long)]
        no_obbt: bool,
        #[arg(long)]
        no_regions: bool,
        #[arg(long)]
        solve: bool,
        #[arg(long)]
        solve_both_arms: bool,
        #[arg(long, default_value_t = 100_000)]
        max_regions: usize,
        /// Accept grid values outside the documented vocabulary.
        #[arg(long)]
        unsafe_grid: bool,
    },
    /// Replay module invariants against stored experiment artifacts.
    Verify {},
    /// Rebuild report.csv / report.json from cached artifacts.
    Report {},
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are success, not usage errors.
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let out = std::env::var_os("RELUOPT_OUT").map(PathBuf::from).unwrap_or_else(|| cli.out.clone());
    match run(cli, &out) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}

fn load_net(path: &Path) -> Result<Network> {
    Network::load(path).with_context(|| format!("loading network from {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)
        .with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli, out: &Path) -> Result<i32> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match cli.command {
        Command::Train {
            benchmark,
            depth,
            width,
            activation,
            lambda,
            dropout,
            epochs,
            batch_size,
            learning_rate,
            samples,
            export_data,
        } => {
            let f = BenchmarkFunction::new(benchmark);
            let n = if samples == 0 { f.default_samples() } else { samples };
            let data = generate(&f, n, cli.seed)?;
            if export_data {
                data.export_csv(&out.join("dataset.csv"))?;
            }
            let cfg = TrainConfig {
                hidden_layers: depth,
                width,
                activation: activation.kind(),
                l1_lambda: lambda,
                dropout_rate: dropout,
                epochs,
                batch_size,
                learning_rate,
                seed: cli.seed,
            };
            let (net, report) = train(&data, &cfg)?;
            let net_path = out.join("network.json");
            net.save(&net_path)?;
            write_json(&out.join("train-report.json"), &report)?;
            println!(
                "trained {benchmark} surrogate ({depth}x{width}, lambda {lambda}, dropout {dropout}): mape {:.4}, saved {}",
                report.test_mape,
                net_path.display()
            );
            Ok(0)
        }
        Command::Scale { net } => {
            let network = load_net(&net)?;
            let (scaled, solution) = scale_network(&network)?;
            let scaled_path = out.join("scaled-network.json");
            scaled.save(&scaled_path)?;
            write_json(&out.join("scaling.json"), &solution.report)?;
            println!(
                "l1 norm {:.6} -> {:.6} in {} iterations ({:?}); saved {}",
                solution.report.objective_before,
                solution.report.objective_after,
                solution.report.iterations,
                solution.report.status,
                scaled_path.display()
            );
            Ok(0)
        }
        Command::Bounds { net } => {
            let network = load_net(&net)?;
            let bounds = ia_bounds(&network);
            let report = classify(&network, &bounds)?;
            let path = out.join("bounds-ia.json");
            std::fs::write(&path, bounds.to_json())?;
            println!(
                "interval bounds: mean hidden width {:.6}, stable {:.2}%; saved {}",
                bounds.mean_hidden_width(),
                100.0 * report.stable_fraction,
                path.display()
            );
            Ok(0)
        }
        Command::Obbt { net, bounds } => {
            let network = load_net(&net)?;
            let start = match bounds {
                Some(p) => BoundsSet::from_json(&std::fs::read_to_string(&p)?)?,
                None => ia_bounds(&network),
            };
            let report = obbt(&network, &start, &ObbtOptions { time_budget_secs: cli.time_limit, passes: 1 })?;
            let path = out.join("bounds-obbt.json");
            std::fs::write(&path, report.bounds.to_json())?;
            write_json(&out.join("obbt-report.json"), &report.stats)?;
            println!(
                "obbt: width {:.6} -> {:.6} with {} LPs, {} newly stable; saved {}",
                start.mean_hidden_width(),
                report.bounds.mean_hidden_width(),
                report.stats.lp_count,
                report.stats.newly_stable,
                path.display()
            );
            Ok(0)
        }
        Command::Regions { net, max_regions, svg } => {
            let network = load_net(&net)?;
            let atlas = enumerate(&network, &EnumerateOptions { max_regions, ..Default::default() })?;
            let path = out.join("atlas.json");
            std::fs::write(&path, atlas.to_json())?;
            if let Some(svg_path) = svg {
                std::fs::write(&svg_path, render_svg(&atlas, Some(&network), 100))?;
            }
            println!(
                "{} regions covering {:.6} of the box area{}; saved {}",
                atlas.regions.len(),
                atlas.total_area / atlas.box_area,
                if atlas.incomplete { " (incomplete)" } else { "" },
                path.display()
            );
            Ok(0)
        }
        Command::Solve { net, bounds } => {
            let network = load_net(&net)?;
            let b = match bounds {
                Some(p) => BoundsSet::from_json(&std::fs::read_to_string(&p)?)?,
                None => ia_bounds(&network),
            };
            let res = solve_min(&network, &b, &BnbOptions { time_limit_secs: cli.time_limit, ..Default::default() })?;
            write_json(&out.join("solve.json"), &res)?;
            println!(
                "{:?}: objective {:.8} at {:?} (bound {:.8}, gap {:.2e}, {} nodes, {:.2}s)",
                res.status, res.objective, res.x, res.best_bound, res.gap, res.nodes, res.wall_secs
            );
            Ok(0)
        }
        Command::Adversarial { net, x0, delta, target_label, true_label } => {
            let network = load_net(&net)?;
            let point: Vec<f64> = x0
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("bad x0 component {s:?}: {e}")))
                .collect::<Result<_>>()?;
            if point.len() != network.input_dim() {
                bail!("x0 has {} components, network expects {}", point.len(), network.input_dim());
            }
            let res = solve_adversarial(
                &network,
                &point,
                delta,
                (target_label, true_label),
                &BnbOptions { time_limit_secs: cli.time_limit, ..Default::default() },
            )?;
            write_json(&out.join("adversarial.json"), &res)?;
            let verdict = if res.objective > 0.0 { "adversarial example found" } else { "robust at x0" };
            println!(
                "{:?}: max margin {:.8} at {:?} -> {verdict} ({} nodes, {:.2}s)",
                res.status, res.objective, res.x, res.nodes, res.wall_secs
            );
            Ok(0)
        }
        Command::Experiment {
            spec,
            benchmark,
            depths,
            widths,
            activations,
            lambdas,
            dropouts,
            seeds,
            samples,
            epochs,
            batch_size,
            learning_rate,
            no_scale,
            no_obbt,
            no_regions,
            solve,
            solve_both_arms,
            max_regions,
            unsafe_grid,
        } => {
            let spec = match spec {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(&p)?)
                    .with_context(|| format!("parsing {}", p.display()))?,
                None => ExperimentSpec {
                    benchmark,
                    depths,
                    widths,
                    activations,
                    lambdas,
                    dropouts,
                    seeds,
                    samples,
                    epochs,
                    batch_size,
                    learning_rate,
                    stages: StageToggles {
                        scale: !no_scale,
                        obbt: !no_obbt,
                        regions: !no_regions,
                        solve,
                        solve_both_arms,
                    },
                    time_limit_secs: cli.time_limit,
                    max_regions,
                    unsafe_grid,
                },
            };
            write_json(&out.join("spec.json"), &spec)?;
            let report = run_experiment(&spec, out, cli.threads.max(1))?;
            let failed = report.rows.iter().filter(|r| !r.errors.is_empty()).count();
            print_aggregates(&report);
            println!(
                "{} rows ({failed} with stage failures); report at {}",
                report.rows.len(),
                out.join("report.csv").display()
            );
            Ok(if failed > 0 { 2 } else { 0 })
        }
        Command::Verify {} => {
            let failures = verify_artifacts(out)?;
            if failures.is_empty() {
                println!("all stored artifacts pass their invariants");
                Ok(0)
            } else {
                for f in &failures {
                    eprintln!("verify: {f}");
                }
                Ok(3)
            }
        }
        Command::Report {} => {
            let spec_path = out.join("spec.json");
            let spec: ExperimentSpec = serde_json::from_str(
                &std::fs::read_to_string(&spec_path)
                    .with_context(|| format!("no experiment spec at {}", spec_path.display()))?,
            )?;
            let report = run_experiment(&spec, out, cli.threads.max(1))?;
            print_aggregates(&report);
            println!("report rebuilt at {}", out.join("report.csv").display());
            Ok(0)
        }
    }
}

fn print_aggregates(report: &reluopt::experiment::ExperimentReport) {
    let fmt = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "n=0".into());
    println!(
        "{:<22} {:>6} {:>12} {:>13} {:>13} {:>11}",
        "comparison", "pairs", "width ratio", "stable delta", "region ratio", "time ratio"
    );
    for b in &report.aggregates {
        println!(
            "{:<22} {:>6} {:>12} {:>13} {:>13} {:>11}",
            b.label,
            b.n_pairs,
            fmt(b.geo_mean_width_ratio),
            fmt(b.mean_stable_delta),
            fmt(b.geo_mean_region_ratio),
            fmt(b.geo_mean_time_ratio),
        );
    }
}
