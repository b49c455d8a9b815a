//! Off-policy policy evaluation (OPPE) for finite-horizon MDPs with
//! representation-balanced model learning.
//!
//! The crate provides:
//!
//! * a minimal reverse-mode [`autodiff`] engine and Adam optimizer,
//! * classic-control and tabular [`environments`],
//! * Q-network [`policies`] (greedy / ε-greedy / softened / tabular),
//! * trajectory [`dataset`] collection, annotation, and storage,
//! * kernel [`balance`] measures (MMD) between sample groups,
//! * the representation-balanced MDP model ([`repbm`]) and its
//!   ablations,
//! * a zoo of [`estimators`] (model-based, importance sampling,
//!   doubly robust, and minimax-style Q learning),
//! * exact-enumeration [`oracle`] checks for the underlying theory,
//! * an experiment [`harness`] that ties it all together.

pub mod autodiff;
pub mod balance;
pub mod dataset;
pub mod environments;
pub mod error;
pub mod estimators;
pub mod harness;
pub mod oracle;
pub mod policies;
pub mod repbm;
pub mod rng;

pub use autodiff::{Adam, AdamConfig, Graph, OpKind, Parameter, Tensor, Var};
pub use balance::{KernelSpec, MmdOutcome};
pub use dataset::{collect, Dataset, Trajectory};
pub use environments::{make_env, EnvSpec, EnvState, Environment, TabularMdp};
pub use error::{Error, Result};
pub use estimators::{
    dr_estimate, is_estimate, model_estimate, mrdr_loss, mrdr_q_estimate, mrdr_train,
    parse_estimator, pdis_estimate, DrVariant, EstimateResult, EstimatorKind, IsVariant,
    ModelProvider, MrdrConfig, MrdrQ, MrdrVariant, PdisVariant, ProviderKind, QProvider,
    ValueProvider, WeightDiagnostics, ZeroProvider, SOFT_EPS,
};
pub use harness::{
    behavior_policy, emit_report, ground_truth, run_experiment, EstimatorScore, ExperimentConfig,
    GroundTruth, PolicySource, ReportFormat, RmseReport, RunEstimate, RunRecord,
};
pub use oracle::Distribution;
pub use policies::{average_return, fit_q_iteration, Policy, QLearningBudget, QNetwork};
pub use repbm::{BatchMode, ModelObjective, RepBmConfig, RepBmModel, TrainingReport};
