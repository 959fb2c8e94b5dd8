//! `qmiset` command line: one subcommand per pipeline stage plus the full
//! sweep. Stages exchange JSON so each can be run and inspected alone.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use qmiset::experiment::{identify, noisy_dataset};
use qmiset::qmi::{check_collapse, check_equality_condition, set_diameter};
use qmiset::{
    assemble_lft, emit_results, run_experiment, synthesize_nominal, synthesize_robust_estimator,
    EstimationDataset, ExperimentConfig, Method, OutputFormat, QmiParamSet, SynthesisOptions,
    SynthesisResult,
};

#[derive(Parser)]
#[command(name = "qmiset", version, about = "Data-consistent parameter sets and robust estimator synthesis")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON); missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = MethodArg::Both)]
    method: MethodArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Consistent,
    Superset,
    Both,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Consistent => vec![Method::Consistent],
            MethodArg::Superset => vec![Method::Superset],
            MethodArg::Both => vec![Method::Consistent, Method::Superset],
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Noisy dataset for one (tau0, trial) cell.
    Generate {
        /// Noise split; defaults to the first value of the configured grid.
        #[arg(long)]
        tau0: Option<f64>,
        #[arg(long, default_value_t = 0)]
        trial: u32,
    },
    /// Parameter sets of both matrix blocks from a dataset.
    Identify {
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Set diagnostics: equality with the superset, collapse, diameter.
    Analyze {
        #[arg(long)]
        sets: PathBuf,
    },
    /// Robust estimator for identified sets, plus the true-plant bound.
    Synthesize {
        #[arg(long)]
        sets: PathBuf,
    },
    /// Full tau0 x trial sweep.
    Sweep {
        #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
        format: FormatArg,
        /// Worker threads; all cores when omitted.
        #[arg(long)]
        parallel: Option<usize>,
        /// Write wall_ms as 0 so repeated runs are byte-identical.
        #[arg(long)]
        no_timing: bool,
        /// Set members checked per solved cell.
        #[arg(long)]
        validate: Option<usize>,
    },
}

#[derive(Serialize, Deserialize)]
struct SetPair {
    #[serde(rename = "AB")]
    ab: QmiParamSet,
    #[serde(rename = "CD")]
    cd: QmiParamSet,
}

#[derive(Serialize)]
struct SetReport {
    kind: String,
    diameter: Option<f64>,
    center_max_abs: Option<f64>,
    /// Only for consistent sets.
    equals_superset: Option<bool>,
    lambda_max_m: Option<f64>,
    collapsing: Option<bool>,
}

#[derive(Serialize)]
struct SynthesisOutcome {
    gamma_tr: f64,
    results: BTreeMap<Method, MethodOutcome>,
}

#[derive(Serialize)]
struct MethodOutcome {
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<SynthesisResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn load_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_json(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.methods = common.method.methods();
    cfg.validate()?;
    Ok(cfg)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?)
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| format!("{}: {e}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> CliResult<()> {
    let mut out = output(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

fn report(set: &QmiParamSet) -> SetReport {
    let collapse = check_collapse(set, 1e-6).ok();
    SetReport {
        kind: format!("{:?}", set.kind).to_lowercase(),
        diameter: set_diameter(set).ok(),
        center_max_abs: set.center().ok().map(|c| c.amax()),
        equals_superset: check_equality_condition(set, 1e-8).ok(),
        lambda_max_m: collapse.as_ref().map(|c| c.lambda_max_m),
        collapsing: collapse.map(|c| c.collapsing),
    }
}

/// Returns whether every cell or method succeeded.
fn run(cli: Cli) -> CliResult<bool> {
    let out = cli.common.out.as_deref();
    match cli.command {
        Command::Generate { tau0, trial } => {
            let mut cfg = load_config(&cli.common)?;
            if let Some(t) = tau0 {
                cfg.tau0_grid = vec![t];
                cfg.validate()?;
            }
            let ds = noisy_dataset(&cfg, 0, trial)?;
            write_json(out, &ds)?;
            Ok(true)
        }
        Command::Identify { dataset } => {
            let ds: EstimationDataset = read_json(&dataset)?;
            ds.validate()?;
            let mut sets = BTreeMap::new();
            for m in cli.common.method.methods() {
                let (ab, cd) = identify(&ds, m)?;
                sets.insert(m, SetPair { ab, cd });
            }
            write_json(out, &sets)?;
            Ok(true)
        }
        Command::Analyze { sets } => {
            let sets: BTreeMap<Method, SetPair> = read_json(&sets)?;
            let reports: BTreeMap<Method, BTreeMap<&str, SetReport>> = sets
                .iter()
                .map(|(m, pair)| (*m, BTreeMap::from([("AB", report(&pair.ab)), ("CD", report(&pair.cd))])))
                .collect();
            write_json(out, &reports)?;
            Ok(true)
        }
        Command::Synthesize { sets } => {
            let cfg = load_config(&cli.common)?;
            let sets: BTreeMap<Method, SetPair> = read_json(&sets)?;
            let opts = SynthesisOptions::default();
            let gamma_tr = synthesize_nominal(&cfg.plant, &opts)?.gamma;
            let results: BTreeMap<Method, MethodOutcome> = sets
                .iter()
                .filter(|(m, _)| cfg.methods.contains(m))
                .map(|(m, pair)| {
                    let res = assemble_lft(&pair.ab, &pair.cd, &cfg.plant.cp, &cfg.plant.dp)
                        .and_then(|lft| synthesize_robust_estimator(&lft, &opts));
                    let outcome = match res {
                        Ok(r) => MethodOutcome { status: "ok", result: Some(r), error: None },
                        Err(e) => MethodOutcome { status: "failed", result: None, error: Some(e.to_string()) },
                    };
                    (*m, outcome)
                })
                .collect();
            let all_ok = results.values().all(|o| o.result.is_some());
            write_json(out, &SynthesisOutcome { gamma_tr, results })?;
            Ok(all_ok)
        }
        Command::Sweep {
            format,
            parallel,
            no_timing,
            validate,
        } => {
            let mut cfg = load_config(&cli.common)?;
            cfg.record_wall_time = !no_timing;
            if let Some(k) = validate {
                cfg.validation_samples = k;
            }
            let result = run_experiment(&cfg, parallel)?;
            let fmt = match format {
                FormatArg::Csv => OutputFormat::Csv,
                FormatArg::Json => OutputFormat::Json,
            };
            let mut w = output(out)?;
            emit_results(&result.records, fmt, &mut w)?;
            w.flush()?;
            eprintln!("gamma_tr = {}", result.gamma_tr);
            for s in &result.summary {
                let fmt_opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                eprintln!(
                    "tau0 {:<6} {:<10} ok {:>3} failed {:>3} mean eps {} std {}",
                    s.tau0,
                    s.method,
                    s.ok,
                    s.failed,
                    fmt_opt(s.mean_epsilon),
                    fmt_opt(s.std_epsilon)
                );
            }
            Ok(result.all_ok())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
