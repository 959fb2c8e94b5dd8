//! The tau0 sweep: datasets with structured noise, both set constructions,
//! robust synthesis and the relative error against the true-plant bound.

use std::io::Write;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_dataset_with_rng, make_structured_noise_with_rng, EstimationDataset, NoiseModel,
    PlantRealization, SamplingBox,
};
use crate::error::{Error, Result};
use crate::qmi::{build_consistent_qmi, build_superset_qmi, optimal_right_inverse, set_diameter, QmiParamSet};
use crate::rng::{self, Purpose};
use crate::synthesis::{
    assemble_lft, sample_from_set, synthesize_nominal, synthesize_robust_estimator, validate_estimator,
    SynthesisOptions, SynthesisResult,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Consistent,
    Superset,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Consistent => "consistent",
            Method::Superset => "superset",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consistent" => Ok(Method::Consistent),
            "superset" => Ok(Method::Superset),
            other => Err(Error::Config(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantRealization,
    #[serde(rename = "N")]
    pub n_samples: usize,
    pub tau0_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    /// Spectral-norm bound on both noise matrices.
    pub noise_bound: f64,
    pub sampling: SamplingBox,
    /// Set members per cell checked by `validate_estimator` (0 disables).
    pub validation_samples: usize,
    /// Record wall-clock time per cell; off gives byte-identical output.
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let plant = PlantRealization::fourth_order_benchmark();
        let sampling = SamplingBox::uniform(plant.n_states(), plant.n_inputs(), -10.0, 10.0);
        Self {
            plant,
            n_samples: 100,
            tau0_grid: vec![0.0, 0.5, 0.9, 0.95, 0.99],
            trials: 10,
            seed: 1,
            methods: vec![Method::Consistent, Method::Superset],
            noise_bound: 1.0,
            sampling,
            validation_samples: 0,
            record_wall_time: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.tau0_grid.is_empty() {
            return Err(Error::Config("tau0 grid is empty".into()));
        }
        if let Some(t) = self.tau0_grid.iter().find(|t| !(0.0..1.0).contains(*t)) {
            return Err(Error::Config(format!("tau0 = {t} outside [0, 1)")));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no method selected".into()));
        }
        let regressors = self.plant.n_states() + self.plant.n_inputs();
        if self.n_samples <= regressors {
            return Err(Error::Config(format!(
                "N = {} must exceed the {regressors} regressors",
                self.n_samples
            )));
        }
        if !(self.noise_bound > 0.0 && self.noise_bound.is_finite()) {
            return Err(Error::Config("noise bound must be positive".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Noise-free samples for a trial; the regressor is shared by every tau0.
pub fn clean_dataset(cfg: &ExperimentConfig, trial: u32) -> Result<EstimationDataset> {
    let mut rng = rng::stream(cfg.seed, Purpose::Dataset, 0, trial);
    let mut ds = generate_dataset_with_rng(&cfg.plant, cfg.n_samples, &cfg.sampling, &mut rng)?;
    ds.meta.seed = cfg.seed;
    Ok(ds)
}

/// Dataset of one cell: `X+` and `Y` perturbed by independent structured
/// noise with the same `tau0`.
pub fn noisy_dataset(cfg: &ExperimentConfig, tau_index: usize, trial: u32) -> Result<EstimationDataset> {
    let tau0 = *cfg
        .tau0_grid
        .get(tau_index)
        .ok_or_else(|| Error::Config(format!("tau0 index {tau_index} out of range")))?;
    let mut ds = clean_dataset(cfg, trial)?;
    let reg = ds.regressor();
    let ti = tau_index as u32;
    let mut rng_w = rng::stream(cfg.seed, Purpose::ProcessNoise, ti, trial);
    let mut rng_v = rng::stream(cfg.seed, Purpose::MeasurementNoise, ti, trial);
    let w = make_structured_noise_with_rng(&reg, cfg.plant.n_states(), tau0, cfg.noise_bound, &mut rng_w)?;
    let v = make_structured_noise_with_rng(&reg, cfg.plant.n_measurements(), tau0, cfg.noise_bound, &mut rng_v)?;
    ds.x_plus += w.w;
    ds.y += v.w;
    ds.noise_w = NoiseModel::spectral_ball(cfg.plant.n_states(), cfg.n_samples, cfg.noise_bound);
    ds.noise_v = NoiseModel::spectral_ball(cfg.plant.n_measurements(), cfg.n_samples, cfg.noise_bound);
    ds.meta.tau0 = tau0;
    Ok(ds)
}

/// Both parameter sets of a dataset for the given method.
pub fn identify(ds: &EstimationDataset, method: Method) -> Result<(QmiParamSet, QmiParamSet)> {
    let ab = ds.ab_regression();
    let cd = ds.cd_regression();
    match method {
        Method::Consistent => Ok((
            build_consistent_qmi(&ab, &ds.noise_w, None)?,
            build_consistent_qmi(&cd, &ds.noise_v, None)?,
        )),
        Method::Superset => {
            let g_w = optimal_right_inverse(&ab.x, ds.noise_w.r())?;
            let g_v = optimal_right_inverse(&cd.x, ds.noise_v.r())?;
            Ok((
                build_superset_qmi(&ab, &ds.noise_w, &g_w)?,
                build_superset_qmi(&cd, &ds.noise_v, &g_v)?,
            ))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub tau0: f64,
    pub method: Method,
    pub trial: u32,
    pub gamma: Option<f64>,
    pub gamma_tr: f64,
    pub epsilon: Option<f64>,
    #[serde(rename = "lambda_max_M_AB")]
    pub lambda_max_m_ab: Option<f64>,
    #[serde(rename = "lambda_max_M_CD")]
    pub lambda_max_m_cd: Option<f64>,
    #[serde(rename = "diam_AB")]
    pub diam_ab: Option<f64>,
    #[serde(rename = "diam_CD")]
    pub diam_cd: Option<f64>,
    pub status: String,
    pub wall_ms: f64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl ExperimentRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub tau0: f64,
    pub method: Method,
    pub ok: usize,
    pub failed: usize,
    /// Mean and standard deviation of epsilon over the solved trials.
    pub mean_epsilon: Option<f64>,
    pub std_epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub gamma_tr: f64,
    pub records: Vec<ExperimentRecord>,
    pub summary: Vec<CellSummary>,
}

impl ExperimentOutput {
    pub fn all_ok(&self) -> bool {
        self.records.iter().all(ExperimentRecord::is_ok)
    }
}

fn status_of(e: &Error) -> &'static str {
    match e {
        Error::Solver { status, .. } if status == "infeasible" => "infeasible",
        Error::Solver { .. } => "numerical_failure",
        Error::SlaterViolation { .. } => "slater_violation",
        Error::Recovery(_) => "recovery_failed",
        Error::Certification(_) => "certification_failed",
        Error::Validation(_) => "validation_failed",
        _ => "error",
    }
}

fn run_method(
    cfg: &ExperimentConfig,
    opts: &SynthesisOptions,
    sets: &Result<(QmiParamSet, QmiParamSet)>,
    seed: u64,
) -> Result<SynthesisResult> {
    let (s_ab, s_cd) = match sets {
        Ok(s) => s,
        Err(e) => return Err(clone_err(e)),
    };
    let lft = assemble_lft(s_ab, s_cd, &cfg.plant.cp, &cfg.plant.dp)?;
    let res = synthesize_robust_estimator(&lft, opts)?;
    let (lmax, xmin) = res.recheck(Some(&lft), None)?;
    if !(lmax < 0.0 && xmin > 0.0) {
        return Err(Error::Certification(format!(
            "returned variables give lambda_max = {lmax:e}, x_min = {xmin:e}"
        )));
    }
    if cfg.validation_samples > 0 {
        let ab = sample_from_set(s_ab, cfg.validation_samples, seed)?;
        let cd = sample_from_set(s_cd, cfg.validation_samples, seed.wrapping_add(1))?;
        for (t_ab, t_cd) in ab.iter().zip(&cd) {
            let v = validate_estimator(
                t_ab,
                t_cd,
                &cfg.plant.cp,
                &cfg.plant.dp,
                &res.estimator,
                res.gamma,
                Some((s_ab, s_cd)),
            )?;
            if !v.passed {
                return Err(Error::Validation(format!(
                    "sampled plant exceeds gamma = {} (norm {} at omega {})",
                    res.gamma, v.norm, v.worst_omega
                )));
            }
        }
    }
    Ok(res)
}

fn clone_err(e: &Error) -> Error {
    match e {
        Error::SlaterViolation { lambda_min, lambda_max } => Error::SlaterViolation {
            lambda_min: *lambda_min,
            lambda_max: *lambda_max,
        },
        other => Error::Precondition(other.to_string()),
    }
}

fn run_cell(
    cfg: &ExperimentConfig,
    opts: &SynthesisOptions,
    gamma_tr: f64,
    tau_index: usize,
    trial: u32,
) -> Vec<ExperimentRecord> {
    let tau0 = cfg.tau0_grid[tau_index];
    let ds = noisy_dataset(cfg, tau_index, trial);
    // lambda_max(M) describes the data, whichever set is synthesized from
    let consistent = ds.as_ref().ok().map(|d| identify(d, Method::Consistent));
    let m_max = |s: &QmiParamSet| s.m.as_ref().map(|m| m.max_eigenvalue());
    let (lm_ab, lm_cd) = match &consistent {
        Some(Ok((a, c))) => (m_max(a), m_max(c)),
        _ => (None, None),
    };
    cfg.methods
        .iter()
        .map(|&method| {
            let start = Instant::now();
            let sample_seed = rng::stream(cfg.seed, Purpose::Probe, tau_index as u32, trial).next_u64();
            let (result, diams) = match &ds {
                Err(e) => (Err(clone_err(e)), (None, None)),
                Ok(d) => {
                    let sets = match (method, &consistent) {
                        (Method::Consistent, Some(Ok(s))) => Ok(s.clone()),
                        (Method::Consistent, Some(Err(e))) => Err(clone_err(e)),
                        _ => identify(d, method),
                    };
                    let diams = match &sets {
                        Ok((a, c)) => (set_diameter(a).ok(), set_diameter(c).ok()),
                        Err(_) => (None, None),
                    };
                    (run_method(cfg, opts, &sets, sample_seed), diams)
                }
            };
            let wall_ms = if cfg.record_wall_time {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            };
            let (gamma, status, detail) = match result {
                Ok(r) => (Some(r.gamma), "ok".to_string(), String::new()),
                Err(e) => (None, status_of(&e).to_string(), e.to_string()),
            };
            ExperimentRecord {
                tau0,
                method,
                trial,
                gamma,
                gamma_tr,
                epsilon: gamma.map(|g| (g - gamma_tr) / gamma_tr),
                lambda_max_m_ab: lm_ab,
                lambda_max_m_cd: lm_cd,
                diam_ab: diams.0,
                diam_cd: diams.1,
                status,
                wall_ms,
                detail,
            }
        })
        .collect()
}

fn summarize(cfg: &ExperimentConfig, records: &[ExperimentRecord]) -> Vec<CellSummary> {
    let mut out = Vec::new();
    for &tau0 in &cfg.tau0_grid {
        for &method in &cfg.methods {
            let cell: Vec<&ExperimentRecord> = records
                .iter()
                .filter(|r| r.tau0 == tau0 && r.method == method)
                .collect();
            let eps: Vec<f64> = cell.iter().filter_map(|r| r.epsilon).collect();
            let (mean, std) = if eps.is_empty() {
                (None, None)
            } else {
                let m = eps.iter().sum::<f64>() / eps.len() as f64;
                let var = eps.iter().map(|e| (e - m).powi(2)).sum::<f64>() / eps.len() as f64;
                (Some(m), Some(var.sqrt()))
            };
            out.push(CellSummary {
                tau0,
                method,
                ok: cell.iter().filter(|r| r.is_ok()).count(),
                failed: cell.iter().filter(|r| !r.is_ok()).count(),
                mean_epsilon: mean,
                std_epsilon: std,
            });
        }
    }
    out
}

/// Runs every `(tau0, trial)` cell. Results are ordered by
/// `(tau0, trial, method)` whatever the thread count; `threads = None`
/// uses the global pool.
pub fn run_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentOutput> {
    run_experiment_with(cfg, &SynthesisOptions::default(), threads)
}

pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    opts: &SynthesisOptions,
    threads: Option<usize>,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let gamma_tr = synthesize_nominal(&cfg.plant, opts)?.gamma;
    let cells: Vec<(usize, u32)> = (0..cfg.tau0_grid.len())
        .flat_map(|i| (0..cfg.trials as u32).map(move |t| (i, t)))
        .collect();
    let work = || -> Vec<ExperimentRecord> {
        cells
            .par_iter()
            .map(|&(i, t)| run_cell(cfg, opts, gamma_tr, i, t))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    };
    let records = match threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let summary = summarize(cfg, &records);
    Ok(ExperimentOutput {
        gamma_tr,
        records,
        summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown format `{other}`"))),
        }
    }
}

pub const CSV_COLUMNS: [&str; 12] = [
    "tau0",
    "method",
    "trial",
    "gamma",
    "gamma_tr",
    "epsilon",
    "lambda_max_M_AB",
    "lambda_max_M_CD",
    "diam_AB",
    "diam_CD",
    "status",
    "wall_ms",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

/// Writes records as CSV (fixed columns, empty fields for missing values)
/// or as a JSON array.
pub fn emit_results<W: Write>(records: &[ExperimentRecord], format: OutputFormat, out: W) -> Result<()> {
    match format {
        OutputFormat::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, records)?;
            out.write_all(b"\n")?;
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(CSV_COLUMNS)?;
            for r in records {
                w.write_record([
                    format!("{:?}", r.tau0),
                    r.method.to_string(),
                    r.trial.to_string(),
                    opt(r.gamma),
                    format!("{:?}", r.gamma_tr),
                    opt(r.epsilon),
                    opt(r.lambda_max_m_ab),
                    opt(r.lambda_max_m_cd),
                    opt(r.diam_ab),
                    opt(r.diam_cd),
                    r.status.clone(),
                    format!("{:.3}", r.wall_ms),
                ])?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
