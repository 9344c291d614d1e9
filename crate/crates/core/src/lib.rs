//! Penalized least-squares model selection over piecewise-polynomial
//! regression models, with minimal-penalty calibration by dimension jump and
//! a Monte Carlo harness for checking its behavior.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assumptions;
pub mod error;
pub mod fit;
pub mod model;
pub mod quadrature;
pub mod risk;
pub mod sample;
pub mod selection;
pub mod sim;
pub mod truth;

pub use assumptions::{check_assumptions, AssumptionReport, ModelAssumptions};
pub use error::{Error, Result};
pub use fit::{fit_least_squares, project_l2, FittedFunction};
pub use model::{
    build_regular_collection, ModelCollection, PartitionModel, RichnessConstants, RichnessFlags,
};
pub use risk::{
    contrast, diagnostics, empirical_risk, epsilon_n, risk_breakdown, sup_distance,
    true_excess_risk, Diagnostics, ProjectedModel, RiskBreakdown,
};
pub use sample::Sample;
pub use selection::{
    calibrate, compute_path, detect_jump, select, CalibrationResult, GridSettings, JumpMethod,
    PenaltyShape, SelectionPath, ShapeKind,
};
pub use sim::{
    estimate_min_penalty, find_oracle, generate_sample, Experiment, ExperimentReport,
    ExperimentSettings, MinPenaltyEstimate,
};
pub use truth::{DesignDensity, NoiseLaw, NoiseLevel, RegressionFunction, RegressionSpec};
