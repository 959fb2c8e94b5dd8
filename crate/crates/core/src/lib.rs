//! Data-consistent parameter sets for linear systems identified from
//! finitely many noisy samples, and robust H-infinity estimator synthesis
//! over those sets.
//!
//! The pipeline is:
//!
//! 1. [`data`]: noise sets, datasets, the Slater check and the structured
//!    noise generator.
//! 2. [`qmi`]: the exact consistent set as a quadratic matrix inequality,
//!    the right-inverse superset, and diagnostics (set equality, collapse,
//!    diameter).
//! 3. [`synthesis`]: the uncertain LFT built from two sets, robust and
//!    nominal estimator synthesis, estimator recovery and frequency-domain
//!    validation.
//! 4. [`sdp`]: canonicalization of block LMIs and an embedded primal-dual
//!    interior-point backend.
//! 5. [`experiment`]: the tau0 sweep harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod lti;
pub mod qmi;
pub mod rng;
pub mod sdp;
pub mod synthesis;

pub use data::{
    check_slater, generate_dataset, make_structured_noise, noise_membership, EstimationDataset,
    NoiseModel, PlantRealization, RegressionData, SamplingBox, SlaterReport, SlaterStatus,
};
pub use error::{Error, Result};
pub use linalg::{PsdCheck, RealMatrix, SymmetricMatrix};
pub use qmi::{
    build_consistent_qmi, build_superset_qmi, direct_membership, qmi_membership, QmiParamSet,
    SetKind,
};
pub use synthesis::{
    assemble_lft, synthesize_nominal, synthesize_robust_estimator, validate_estimator,
    EstimatorRealization, SynthesisOptions, SynthesisResult, UncertainLft,
};
pub use experiment::{
    emit_results, run_experiment, ExperimentConfig, ExperimentOutput, ExperimentRecord, Method,
    OutputFormat,
};
