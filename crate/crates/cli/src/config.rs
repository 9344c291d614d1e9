//! Experiment configuration file (JSON).

use std::path::{Path, PathBuf};

use minpen_core::sim::ExperimentSettings;
use minpen_core::{
    build_regular_collection, GridSettings, JumpMethod, ModelCollection, PenaltyShape,
    RegressionSpec, ShapeKind,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

pub const DEFAULT_BUDGET: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectionConfig {
    /// Polynomial degrees; each is paired with every dyadic level.
    #[serde(default = "default_degrees")]
    pub degrees: Vec<usize>,
    /// Regular partitions with `2^j` cells for `j = 0..=dyadic_max`.
    pub dyadic_max: u32,
}

fn default_degrees() -> Vec<usize> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PenaltyRegime {
    /// `c · shape` for each multiplier `c`.
    Fixed {
        #[serde(default = "default_shape")]
        shape: ShapeKind,
        multipliers: Vec<f64>,
        /// Shape values when `shape` is `user_supplied`.
        #[serde(default)]
        values: Option<Vec<f64>>,
    },
    /// Dimension-jump calibration, then selection at `2 Â_min`.
    Calibration {
        #[serde(default = "default_shape")]
        shape: ShapeKind,
        #[serde(default = "default_method")]
        method: JumpMethod,
        #[serde(default)]
        threshold: Option<usize>,
        #[serde(default)]
        values: Option<Vec<f64>>,
    },
}

fn default_shape() -> ShapeKind {
    ShapeKind::OracleMeanP2
}

fn default_method() -> JumpMethod {
    JumpMethod::MaxJump
}

impl Default for PenaltyRegime {
    fn default() -> Self {
        Self::Fixed {
            shape: default_shape(),
            multipliers: vec![2.0],
            values: None,
        }
    }
}

impl PenaltyRegime {
    pub fn shape_kind(&self) -> ShapeKind {
        match self {
            Self::Fixed { shape, .. } | Self::Calibration { shape, .. } => *shape,
        }
    }

    fn values(&self) -> Option<&[f64]> {
        match self {
            Self::Fixed { values, .. } | Self::Calibration { values, .. } => values.as_deref(),
        }
    }
}

/// Constants for the two theorem experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub c_under: f64,
    pub c_over: f64,
    pub blowup_threshold: Option<usize>,
    pub eta: f64,
    pub a_plus: f64,
    pub a_r: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        let s = ExperimentSettings::default();
        Self {
            c_under: 0.5,
            c_over: 2.0,
            blowup_threshold: None,
            eta: s.eta,
            a_plus: s.a_plus,
            a_r: s.a_r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub truth: RegressionSpec,
    pub collection: CollectionConfig,
    pub n: usize,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub penalty: PenaltyRegime,
    #[serde(default)]
    pub grid: GridSettings,
    #[serde(default = "default_minpen_replicates")]
    pub minpen_replicates: usize,
    #[serde(default)]
    pub theory: TheoryConfig,
    #[serde(default)]
    pub check_assumptions: bool,
    /// Upper bound on `n · replicates`.
    #[serde(default = "default_budget")]
    pub budget: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_replicates() -> usize {
    100
}

fn default_minpen_replicates() -> usize {
    500
}

fn default_budget() -> u64 {
    DEFAULT_BUDGET
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let config: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.n == 0 || self.replicates == 0 {
            return bad("n and replicates must be positive".into());
        }
        let work = (self.n as u64).saturating_mul(self.replicates as u64);
        if work > self.budget {
            return bad(format!(
                "n * replicates = {work} exceeds the budget {}",
                self.budget
            ));
        }
        if self.collection.degrees.is_empty() {
            return bad("collection.degrees is empty".into());
        }
        self.grid
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        match &self.penalty {
            PenaltyRegime::Fixed { multipliers, .. } => {
                if multipliers.is_empty() {
                    return bad("penalty.multipliers is empty".into());
                }
                if let Some(c) = multipliers.iter().find(|c| !(c.is_finite() && **c >= 0.0)) {
                    return bad(format!(
                        "penalty multiplier {c} must be finite and non-negative"
                    ));
                }
            }
            PenaltyRegime::Calibration { .. } => {}
        }
        let kind = self.penalty.shape_kind();
        match (kind, self.penalty.values()) {
            (ShapeKind::UserSupplied, None) => {
                return bad("penalty.values is required for a user_supplied shape".into())
            }
            (ShapeKind::UserSupplied, Some(_)) => {}
            (_, Some(_)) => return bad("penalty.values is only allowed with user_supplied".into()),
            _ => {}
        }
        if !(self.theory.c_under >= 0.0 && self.theory.c_under < 1.0) {
            return bad(format!(
                "theory.c_under = {} must lie in [0, 1)",
                self.theory.c_under
            ));
        }
        if !(self.theory.c_over > 0.0 && self.theory.c_over.is_finite()) {
            return bad(format!(
                "theory.c_over = {} must be positive",
                self.theory.c_over
            ));
        }
        self.collection()?;
        Ok(())
    }

    pub fn collection(&self) -> Result<ModelCollection, CliError> {
        build_regular_collection(self.n, &self.collection.degrees, self.collection.dyadic_max)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn settings(&self) -> ExperimentSettings {
        let (threshold, method) = match &self.penalty {
            PenaltyRegime::Calibration {
                threshold, method, ..
            } => (*threshold, *method),
            PenaltyRegime::Fixed { .. } => (None, JumpMethod::MaxJump),
        };
        ExperimentSettings {
            n: self.n,
            replicates: self.replicates,
            seed: self.seed,
            minpen_replicates: self.minpen_replicates,
            grid: self.grid,
            jump_method: method,
            jump_threshold: threshold,
            blowup_threshold: self.theory.blowup_threshold,
            eta: self.theory.eta,
            a_plus: self.theory.a_plus,
            a_r: self.theory.a_r,
        }
    }

    /// User-supplied shape, if the regime carries one.
    pub fn user_shape(&self) -> Result<Option<PenaltyShape>, CliError> {
        match self.penalty.values() {
            Some(v) => PenaltyShape::user_supplied(v.to_vec())
                .map(Some)
                .map_err(|e| CliError::Config(e.to_string())),
            None => Ok(None),
        }
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}
