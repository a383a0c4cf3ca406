use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use oodgat::experiment::{
    gradcheck_suite, homophily_bound_check, run_experiment, ExperimentKind, ExperimentSpec,
    RunOptions,
};
use oodgat::graph::{identity_homophily, node_homophily, write_graph_bundle};
use oodgat::nn::Architecture;
use oodgat::{Error, Exec, Result};

/// Experiments for graph attention with out-of-distribution detection.
#[derive(Parser)]
#[command(name = "oodgat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment spec (TOML). Optional for gradcheck and homophily-check.
    #[arg(long, global = true)]
    spec: Option<PathBuf>,
    /// Output directory; overrides the spec's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Runs trained concurrently (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Offset added to every split and model seed.
    #[arg(long, global = true)]
    seed_base: Option<u64>,
    /// Disable all data parallelism.
    #[arg(long, global = true)]
    sequential: bool,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Train and evaluate one model over every split and seed.
    TrainEval,
    /// Retrain under inter-edge removal and edge-subset conditions.
    EdgeAblation,
    /// Train MLP and GCN and export entropy ROC curves.
    SmoothingRoc,
    /// Train every regularizer combination of the OODGAT loss.
    AblateLosses,
    /// Grid search on validation, then evaluate the best cell.
    Gridsearch,
    /// Write a stochastic block model graph as a bundle.
    GenSbm,
    /// Compare analytic and finite-difference gradients.
    Gradcheck,
    /// Check identity homophily >= node homophily on random graphs.
    HomophilyCheck,
}

impl Command {
    fn kind(self) -> ExperimentKind {
        match self {
            Command::TrainEval => ExperimentKind::TrainEval,
            Command::EdgeAblation => ExperimentKind::EdgeAblation,
            Command::SmoothingRoc => ExperimentKind::SmoothingRoc,
            Command::AblateLosses => ExperimentKind::AblateLosses,
            Command::Gridsearch => ExperimentKind::Gridsearch,
            Command::GenSbm => ExperimentKind::GenSbm,
            Command::Gradcheck => ExperimentKind::Gradcheck,
            Command::HomophilyCheck => ExperimentKind::HomophilyCheck,
        }
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    let kind = cli.command.kind();
    let mut spec = match &cli.spec {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::new(kind, Architecture::Oodgat),
    };
    if spec.name != kind {
        return Err(Error::Config(format!(
            "spec is for {}, not {kind}",
            spec.name
        )));
    }
    if let Some(s) = cli.seed_base {
        spec.seed_base = s;
    }
    spec.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| spec.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(kind.as_str()));
    let opts = RunOptions {
        workers: cli.workers.unwrap_or(0),
        exec: if cli.sequential {
            Exec::Sequential
        } else {
            Exec::default()
        },
    };

    match kind {
        ExperimentKind::GenSbm => {
            let graph = spec.dataset.as_ref().expect("validated").load()?;
            write_graph_bundle(&graph, &out, None)?;
            let map: Vec<u8> = (0..graph.num_classes())
                .map(|c| graph.ood_classes().contains(&c) as u8)
                .collect();
            println!("nodes\t{}", graph.num_nodes());
            println!("edges\t{}", graph.edges().len());
            println!(
                "node_homophily\t{:.4}",
                node_homophily(&graph, graph.labels())?
            );
            println!(
                "identity_homophily\t{:.4}",
                identity_homophily(&graph, &map)?
            );
            println!("wrote {}", out.display());
        }
        ExperimentKind::Gradcheck => {
            let cases = gradcheck_suite(spec.seed_base)?;
            create_dir(&out)?;
            let mut csv = String::from("case,entries,max_rel_error,tolerance,passed\n");
            for c in &cases {
                println!(
                    "{:<28} {:>5} {:.3e} {}",
                    c.name,
                    c.entries,
                    c.max_rel_error,
                    if c.passed() { "ok" } else { "FAIL" }
                );
                csv.push_str(&format!(
                    "{},{},{:e},{:e},{}\n",
                    c.name,
                    c.entries,
                    c.max_rel_error,
                    c.tolerance,
                    c.passed()
                ));
            }
            write(&out.join("gradcheck.csv"), &csv)?;
            let failed: Vec<&str> = cases
                .iter()
                .filter(|c| !c.passed())
                .map(|c| c.name.as_str())
                .collect();
            if !failed.is_empty() {
                return Err(Error::Check(format!(
                    "gradient mismatch in {}",
                    failed.join(", ")
                )));
            }
        }
        ExperimentKind::HomophilyCheck => {
            let check = homophily_bound_check(spec.graphs, spec.seed_base)?;
            create_dir(&out)?;
            let body = serde_json::to_string_pretty(&check).expect("check serializes");
            write(&out.join("homophily.json"), &body)?;
            println!("{body}");
            if check.violations > 0 {
                return Err(Error::Check(format!(
                    "{} of {} graphs violate the bound",
                    check.violations, check.graphs
                )));
            }
        }
        _ => {
            let output = run_experiment(&spec, opts)?;
            output.write(&out)?;
            print!("{}", output.report.to_text());
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            eprintln!("error[E_USAGE]: {first}");
            return ExitCode::from(2);
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.code());
            ExitCode::FAILURE
        }
    }
}
