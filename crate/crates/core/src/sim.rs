//! Monte Carlo harness: data generation, oracle search, minimal-penalty
//! estimation and replicated selection experiments.
//!
//! Replicate `r` of an experiment seeded with `seed` draws from a ChaCha8
//! generator seeded with `seed ^ r` on a per-purpose stream, so results do
//! not depend on how replicates are scheduled across threads. Aggregation is
//! a fold in replicate order.

use std::io::Write;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelCollection;
use crate::risk::{empirical_risk_of_truth, ProjectedModel, RiskBreakdown};
use crate::sample::Sample;
use crate::selection::{
    argmin_tie_break, calibrate, compute_path, default_dimension_threshold, detect_jump, select,
    CalibrationResult, GridSettings, JumpMethod, PenaltyShape, SelectionPath, ShapeKind,
};
use crate::truth::RegressionSpec;

pub const SCHEMA_VERSION: u32 = 1;

/// Stream used for the replicates of an experiment.
pub const STREAM_EXPERIMENT: u64 = 0;
/// Stream used for the Monte Carlo estimate of the minimal penalty.
pub const STREAM_MIN_PENALTY: u64 = 1;

pub const MIN_PENALTY_MIN_REPLICATES: usize = 50;

pub fn replicate_rng(seed: u64, replicate: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ replicate);
    rng.set_stream(stream);
    rng
}

/// `n` i.i.d. draws of `(X, s*(X) + σ(X) ε)`, `X` by inverse CDF.
pub fn sample_with_rng<R: Rng + ?Sized>(
    spec: &RegressionSpec,
    n: usize,
    rng: &mut R,
) -> Result<Sample> {
    if n == 0 {
        return Err(Error::InvalidArgument(
            "sample size must be positive".into(),
        ));
    }
    let noise = spec.noise().sampler();
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.random();
        let x = spec.design().inverse_cdf(u);
        let e = noise.sample(rng);
        xs.push(x);
        ys.push(spec.s_star(x) + spec.sigma(x) * e);
    }
    Sample::new(xs, ys)
}

pub fn generate_sample(spec: &RegressionSpec, n: usize, seed: u64) -> Result<Sample> {
    sample_with_rng(spec, n, &mut replicate_rng(seed, 0, STREAM_EXPERIMENT))
}

/// Index minimizing `risks`, ties to the smaller dimension then index.
pub fn oracle_from_risks(dimensions: &[usize], risks: &[f64]) -> (usize, f64) {
    let i = argmin_tie_break(dimensions, risks.iter().copied());
    (i, risks[i])
}

/// A collection with projections precomputed for one truth.
#[derive(Debug, Clone)]
pub struct PreparedCollection {
    collection: ModelCollection,
    projected: Vec<ProjectedModel>,
    noise_variance: f64,
}

impl PreparedCollection {
    pub fn new(collection: &ModelCollection, truth: &RegressionSpec) -> Result<Self> {
        let projected = collection
            .models()
            .iter()
            .map(|m| ProjectedModel::new(m, truth))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            collection: collection.clone(),
            projected,
            noise_variance: truth.noise_variance(),
        })
    }

    pub fn collection(&self) -> &ModelCollection {
        &self.collection
    }

    pub fn projected(&self) -> &[ProjectedModel] {
        &self.projected
    }

    /// Breakdown of every model on `sample`.
    pub fn evaluate(&self, sample: &Sample, truth: &RegressionSpec) -> Result<Vec<RiskBreakdown>> {
        let truth_risk = empirical_risk_of_truth(sample, truth)?;
        self.projected
            .iter()
            .map(|pm| {
                let fit = crate::fit::fit_least_squares(pm.model(), sample)?;
                pm.breakdown_for(&fit, sample, truth, truth_risk, self.noise_variance)
            })
            .collect()
    }
}

/// Oracle model `argmin_M ℓ(s*, s_n(M))` for one sample.
pub fn find_oracle(
    collection: &ModelCollection,
    sample: &Sample,
    truth: &RegressionSpec,
) -> Result<(usize, f64)> {
    let rbs = PreparedCollection::new(collection, truth)?.evaluate(sample, truth)?;
    let risks: Vec<f64> = rbs.iter().map(|r| r.excess_risk).collect();
    Ok(oracle_from_risks(&collection.dimensions(), &risks))
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let m = values.len() as f64;
    let mean = values.iter().sum::<f64>() / m;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// Linear-interpolation quantile (`q ∈ [0, 1]`) of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Per-model Monte Carlo estimate of `E[p2]` (the minimal penalty) along
/// with `E[p1]` and `δ̄` statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinPenaltyEstimate {
    pub replicates: usize,
    pub dimensions: Vec<usize>,
    pub mean_p2: Vec<f64>,
    pub se_p2: Vec<f64>,
    pub mean_p1: Vec<f64>,
    pub se_p1: Vec<f64>,
    pub mean_delta_bar: Vec<f64>,
    pub se_delta_bar: Vec<f64>,
}

impl MinPenaltyEstimate {
    pub fn shape(&self) -> PenaltyShape {
        PenaltyShape::new(
            self.mean_p2.iter().map(|v| v.max(0.0)).collect(),
            ShapeKind::OracleMeanP2,
        )
        .expect("Monte Carlo means are finite")
    }

    /// Writes `model_id,D,mean_p2,se_p2`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["model_id", "D", "mean_p2", "se_p2"])?;
        for i in 0..self.dimensions.len() {
            wtr.write_record([
                i.to_string(),
                self.dimensions[i].to_string(),
                self.mean_p2[i].to_string(),
                self.se_p2[i].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub fn estimate_min_penalty(
    spec: &RegressionSpec,
    collection: &ModelCollection,
    n: usize,
    replicates: usize,
    seed: u64,
) -> Result<MinPenaltyEstimate> {
    if replicates < MIN_PENALTY_MIN_REPLICATES {
        return Err(Error::InvalidArgument(format!(
            "minimal-penalty estimation needs at least {MIN_PENALTY_MIN_REPLICATES} replicates, got {replicates}"
        )));
    }
    let prepared = PreparedCollection::new(collection, spec)?;
    let runs: Vec<Vec<RiskBreakdown>> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let sample = sample_with_rng(
                spec,
                n,
                &mut replicate_rng(seed, r as u64, STREAM_MIN_PENALTY),
            )?;
            prepared.evaluate(&sample, spec)
        })
        .collect::<Result<_>>()?;
    let models = collection.len();
    let column = |m: usize, f: fn(&RiskBreakdown) -> f64| {
        runs.iter().map(|rbs| f(&rbs[m])).collect::<Vec<_>>()
    };
    let mut est = MinPenaltyEstimate {
        replicates,
        dimensions: collection.dimensions(),
        mean_p2: Vec::with_capacity(models),
        se_p2: Vec::with_capacity(models),
        mean_p1: Vec::with_capacity(models),
        se_p1: Vec::with_capacity(models),
        mean_delta_bar: Vec::with_capacity(models),
        se_delta_bar: Vec::with_capacity(models),
    };
    for m in 0..models {
        let (a, b) = mean_and_se(&column(m, |r| r.p2));
        est.mean_p2.push(a);
        est.se_p2.push(b);
        let (a, b) = mean_and_se(&column(m, |r| r.p1));
        est.mean_p1.push(a);
        est.se_p1.push(b);
        let (a, b) = mean_and_se(&column(m, |r| r.delta_bar));
        est.mean_delta_bar.push(a);
        est.se_delta_bar.push(b);
    }
    Ok(est)
}

/// Knobs shared by every experiment kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSettings {
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    /// Replicates behind the Monte Carlo minimal penalty.
    pub minpen_replicates: usize,
    pub grid: GridSettings,
    pub jump_method: JumpMethod,
    /// Threshold for [`JumpMethod::Threshold`]; defaults to `n / (2 (ln n)²)`.
    pub jump_threshold: Option<usize>,
    /// Dimension counted as a blow-up; defaults to `n / (4 (ln n)²)`.
    pub blowup_threshold: Option<usize>,
    /// Upper band exponent: `D ≤ n^{1/2 + η}`.
    pub eta: f64,
    /// Lower band constant: `D ≥ a_plus (ln n)³`.
    pub a_plus: f64,
    /// Small-model penalty bound constant: `pen(M) ≤ a_r (ln n)³ / n`.
    pub a_r: f64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            n: 1000,
            replicates: 100,
            seed: 0,
            minpen_replicates: 500,
            grid: GridSettings::default(),
            jump_method: JumpMethod::MaxJump,
            jump_threshold: None,
            blowup_threshold: None,
            eta: 0.25,
            a_plus: 0.01,
            a_r: 1.0,
        }
    }
}

impl ExperimentSettings {
    pub fn blowup_threshold(&self) -> usize {
        self.blowup_threshold.unwrap_or_else(|| {
            let nf = self.n as f64;
            (nf / (4.0 * nf.ln().powi(2))).floor().max(1.0) as usize
        })
    }

    pub fn jump_threshold(&self) -> usize {
        self.jump_threshold
            .unwrap_or_else(|| default_dimension_threshold(self.n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PenaltySweep,
    Theorem1,
    Theorem2,
    Calibration,
}

/// One selection made on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub regime: String,
    /// Multiplier applied to the shape.
    pub multiplier: f64,
    pub index: usize,
    pub dimension: usize,
    pub excess_risk: f64,
    /// `ℓ(s*, s_n(M̂)) / ℓ(s*, s_n(M*))`.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateCalibration {
    pub max_jump: Option<CalibrationResult>,
    pub threshold: Option<CalibrationResult>,
    /// Result of the configured method; `None` when it found no jump.
    pub chosen: Option<CalibrationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub oracle_index: usize,
    pub oracle_dimension: usize,
    pub oracle_risk: f64,
    pub selections: Vec<Selection>,
    pub calibration: Option<ReplicateCalibration>,
    pub risks: Vec<RiskBreakdown>,
}

impl ReplicateRecord {
    pub fn selection(&self, regime: &str) -> Option<&Selection> {
        self.selections.iter().find(|s| s.regime == regime)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub regime: String,
    /// Multiplier for fixed regimes; median multiplier for the calibrated one.
    pub multiplier: f64,
    pub count: usize,
    pub median_dimension: f64,
    pub mean_dimension: f64,
    pub median_ratio: f64,
    pub mean_ratio: f64,
    pub q90_ratio: f64,
    /// Fraction of replicates selecting `D ≥ blowup_threshold`.
    pub fraction_blowup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Summary {
    pub c_under: f64,
    pub dim_threshold: usize,
    pub fraction_above_threshold: f64,
    pub median_dimension: f64,
    pub median_ratio: f64,
    pub max_dimension: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem2Summary {
    pub c_over: f64,
    pub median_ratio: f64,
    pub q90_ratio: f64,
    pub median_dimension: f64,
    pub eta: f64,
    pub band_lower: f64,
    pub band_upper: f64,
    pub fraction_in_band: f64,
    pub a_r: f64,
    /// `a_r (ln n)³ / n`.
    pub small_model_penalty_bound: f64,
    /// Whether every model below the band has `c_over · pen_min ≤ bound`.
    pub small_models_within_bound: bool,
    /// Mean over replicates of `sup ε_n(M)` over models inside the band.
    pub mean_sup_eps_in_band: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub shape_kind: ShapeKind,
    pub method: JumpMethod,
    pub no_jump_count: usize,
    pub median_a_min: f64,
    pub q10_a_min: f64,
    pub q90_a_min: f64,
    /// The other detector, reported side by side.
    pub median_a_min_max_jump: f64,
    pub median_a_min_threshold: f64,
    pub median_jump_magnitude: f64,
    pub median_jump_ratio: f64,
    pub median_final_dimension: f64,
    pub median_ratio: f64,
    pub median_ratio_zero_penalty: f64,
    /// Fraction of jumping replicates where the calibrated ratio is at most
    /// the zero-penalty ratio.
    pub dominance_fraction: f64,
    /// `∫ σ² f`; for the `D/n` shape on homoscedastic data `Â_min ≈ σ²`.
    pub noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub n: usize,
    pub replicates: usize,
    pub seed: u64,
    pub model_dimensions: Vec<usize>,
    pub blowup_threshold: usize,
    pub shape: PenaltyShape,
    pub min_penalty: Option<MinPenaltyEstimate>,
    pub regimes: Vec<RegimeSummary>,
    pub theorem1: Option<Theorem1Summary>,
    pub theorem2: Option<Theorem2Summary>,
    pub calibration: Option<CalibrationSummary>,
    pub records: Vec<ReplicateRecord>,
}

fn ratio(selected: f64, oracle: f64) -> f64 {
    if oracle > 0.0 {
        selected / oracle
    } else if selected <= 0.0 {
        1.0
    } else {
        f64::MAX
    }
}

pub const ZERO_PENALTY: &str = "zero_penalty";
pub const CALIBRATED: &str = "calibrated";

pub fn regime_label(multiplier: f64) -> String {
    format!("x{multiplier}")
}

impl ExperimentReport {
    pub fn regime(&self, regime: &str) -> Option<&RegimeSummary> {
        self.regimes.iter().find(|r| r.regime == regime)
    }

    /// Selections of `regime` across replicates, in replicate order.
    pub fn selections(&self, regime: &str) -> Vec<&Selection> {
        self.records
            .iter()
            .filter_map(|r| r.selection(regime))
            .collect()
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    /// One row per (replicate, regime).
    pub fn write_replicates_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "replicate",
            "regime",
            "multiplier",
            "selected_index",
            "selected_dimension",
            "excess_risk",
            "oracle_index",
            "oracle_dimension",
            "oracle_risk",
            "ratio",
            "a_min_hat",
            "jump_from_dim",
            "jump_to_dim",
        ])?;
        for rec in &self.records {
            let chosen = rec.calibration.as_ref().and_then(|c| c.chosen.as_ref());
            for s in &rec.selections {
                let (a, from, to) = match (s.regime.as_str(), chosen) {
                    (CALIBRATED, Some(c)) => (
                        c.a_min_hat.to_string(),
                        c.jump_from_dim.to_string(),
                        c.jump_to_dim.to_string(),
                    ),
                    _ => (String::new(), String::new(), String::new()),
                };
                wtr.write_record([
                    rec.replicate.to_string(),
                    s.regime.clone(),
                    s.multiplier.to_string(),
                    s.index.to_string(),
                    s.dimension.to_string(),
                    s.excess_risk.to_string(),
                    rec.oracle_index.to_string(),
                    rec.oracle_dimension.to_string(),
                    rec.oracle_risk.to_string(),
                    s.ratio.to_string(),
                    a,
                    from,
                    to,
                ])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// `metric,value` rows for every aggregate.
    pub fn write_aggregates_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["metric", "value"])?;
        let mut row = |k: String, v: String| wtr.write_record([k, v]);
        row("n".into(), self.n.to_string())?;
        row("replicates".into(), self.replicates.to_string())?;
        row("seed".into(), self.seed.to_string())?;
        for r in &self.regimes {
            let p = &r.regime;
            row(format!("{p}.multiplier"), r.multiplier.to_string())?;
            row(format!("{p}.count"), r.count.to_string())?;
            row(
                format!("{p}.median_dimension"),
                r.median_dimension.to_string(),
            )?;
            row(format!("{p}.mean_dimension"), r.mean_dimension.to_string())?;
            row(format!("{p}.median_ratio"), r.median_ratio.to_string())?;
            row(format!("{p}.mean_ratio"), r.mean_ratio.to_string())?;
            row(format!("{p}.q90_ratio"), r.q90_ratio.to_string())?;
            row(
                format!("{p}.fraction_blowup"),
                r.fraction_blowup.to_string(),
            )?;
        }
        if let Some(t) = &self.theorem1 {
            row(
                "theorem1.fraction_above_threshold".into(),
                t.fraction_above_threshold.to_string(),
            )?;
            row("theorem1.median_ratio".into(), t.median_ratio.to_string())?;
            row(
                "theorem1.median_dimension".into(),
                t.median_dimension.to_string(),
            )?;
        }
        if let Some(t) = &self.theorem2 {
            row("theorem2.median_ratio".into(), t.median_ratio.to_string())?;
            row("theorem2.q90_ratio".into(), t.q90_ratio.to_string())?;
            row(
                "theorem2.median_dimension".into(),
                t.median_dimension.to_string(),
            )?;
            row(
                "theorem2.fraction_in_band".into(),
                t.fraction_in_band.to_string(),
            )?;
            row(
                "theorem2.small_models_within_bound".into(),
                t.small_models_within_bound.to_string(),
            )?;
        }
        if let Some(c) = &self.calibration {
            row(
                "calibration.no_jump_count".into(),
                c.no_jump_count.to_string(),
            )?;
            row(
                "calibration.median_a_min".into(),
                c.median_a_min.to_string(),
            )?;
            row(
                "calibration.median_a_min_max_jump".into(),
                c.median_a_min_max_jump.to_string(),
            )?;
            row(
                "calibration.median_a_min_threshold".into(),
                c.median_a_min_threshold.to_string(),
            )?;
            row(
                "calibration.median_jump_ratio".into(),
                c.median_jump_ratio.to_string(),
            )?;
            row(
                "calibration.median_ratio".into(),
                c.median_ratio.to_string(),
            )?;
            row(
                "calibration.median_ratio_zero_penalty".into(),
                c.median_ratio_zero_penalty.to_string(),
            )?;
            row(
                "calibration.dominance_fraction".into(),
                c.dominance_fraction.to_string(),
            )?;
        }
        if let Some(mp) = &self.min_penalty {
            for (i, d) in mp.dimensions.iter().enumerate() {
                row(
                    format!("min_penalty.D{d}.mean_p2"),
                    mp.mean_p2[i].to_string(),
                )?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// A truth, a collection and settings; caches the minimal-penalty estimate.
#[derive(Debug)]
pub struct Experiment {
    spec: RegressionSpec,
    collection: ModelCollection,
    settings: ExperimentSettings,
    min_penalty: OnceLock<MinPenaltyEstimate>,
}

impl Experiment {
    pub fn new(
        spec: RegressionSpec,
        collection: ModelCollection,
        settings: ExperimentSettings,
    ) -> Result<Self> {
        if collection.max_dimension() > settings.n {
            return Err(Error::DimensionExceedsSample {
                dimension: collection.max_dimension(),
                n: settings.n,
            });
        }
        if settings.replicates == 0 {
            return Err(Error::InvalidArgument(
                "at least one replicate is required".into(),
            ));
        }
        settings.grid.validate()?;
        Ok(Self {
            spec,
            collection,
            settings,
            min_penalty: OnceLock::new(),
        })
    }

    /// Reuses a previously computed minimal-penalty estimate.
    pub fn with_min_penalty(self, estimate: MinPenaltyEstimate) -> Result<Self> {
        if estimate.dimensions != self.collection.dimensions() {
            return Err(Error::LengthMismatch {
                expected: self.collection.len(),
                found: estimate.dimensions.len(),
            });
        }
        let _ = self.min_penalty.set(estimate);
        Ok(self)
    }

    pub fn spec(&self) -> &RegressionSpec {
        &self.spec
    }

    pub fn collection(&self) -> &ModelCollection {
        &self.collection
    }

    pub fn settings(&self) -> &ExperimentSettings {
        &self.settings
    }

    pub fn min_penalty(&self) -> Result<&MinPenaltyEstimate> {
        if let Some(est) = self.min_penalty.get() {
            return Ok(est);
        }
        let s = &self.settings;
        let est = estimate_min_penalty(
            &self.spec,
            &self.collection,
            s.n,
            s.minpen_replicates,
            s.seed,
        )?;
        Ok(self.min_penalty.get_or_init(|| est))
    }

    /// Penalty shape of the given kind for this collection.
    pub fn shape(&self, kind: ShapeKind) -> Result<PenaltyShape> {
        match kind {
            ShapeKind::LinearDimension => Ok(PenaltyShape::linear_dimension(
                &self.collection,
                self.settings.n,
            )),
            ShapeKind::OracleMeanP2 => Ok(self.min_penalty()?.shape()),
            ShapeKind::UserSupplied => Err(Error::InvalidArgument(
                "user-supplied shapes go through run_with_shape".into(),
            )),
        }
    }

    /// Risk breakdowns of every model for every replicate, in replicate order.
    pub fn replicate_risks(&self) -> Result<Vec<Vec<RiskBreakdown>>> {
        let prepared = PreparedCollection::new(&self.collection, &self.spec)?;
        let s = &self.settings;
        (0..s.replicates)
            .into_par_iter()
            .map(|r| {
                let sample = sample_with_rng(
                    &self.spec,
                    s.n,
                    &mut replicate_rng(s.seed, r as u64, STREAM_EXPERIMENT),
                )?;
                prepared.evaluate(&sample, &self.spec)
            })
            .collect()
    }

    /// Fixed multipliers of `shape` (plus the zero penalty) and, when
    /// `calibrated` is set, the dimension-jump calibration on every replicate.
    pub fn run_with_shape(
        &self,
        kind: ExperimentKind,
        shape: &PenaltyShape,
        multipliers: &[f64],
        calibrated: bool,
    ) -> Result<ExperimentReport> {
        if shape.len() != self.collection.len() {
            return Err(Error::LengthMismatch {
                expected: self.collection.len(),
                found: shape.len(),
            });
        }
        if let Some(c) = multipliers.iter().find(|c| !(**c >= 0.0 && c.is_finite())) {
            return Err(Error::InvalidPenalty(format!(
                "multiplier {c} must be finite and non-negative"
            )));
        }
        let all_risks = self.replicate_risks()?;
        let dims = self.collection.dimensions();
        let s = &self.settings;
        let records = all_risks
            .into_par_iter()
            .enumerate()
            .map(|(r, risks)| {
                self.replicate_record(r, risks, &dims, shape, multipliers, calibrated)
            })
            .collect::<Result<Vec<_>>>()?;

        let blowup = s.blowup_threshold();
        let mut labels: Vec<(String, Option<f64>)> = vec![(ZERO_PENALTY.to_string(), Some(0.0))];
        labels.extend(multipliers.iter().map(|&c| (regime_label(c), Some(c))));
        if calibrated {
            labels.push((CALIBRATED.to_string(), None));
        }
        let regimes = labels
            .into_iter()
            .map(|(label, mult)| summarize_regime(&records, &label, mult, blowup))
            .collect();

        let calibration = calibrated.then(|| self.summarize_calibration(&records, shape));
        Ok(ExperimentReport {
            schema_version: SCHEMA_VERSION,
            kind,
            n: s.n,
            replicates: s.replicates,
            seed: s.seed,
            model_dimensions: dims,
            blowup_threshold: blowup,
            shape: shape.clone(),
            min_penalty: self.min_penalty.get().cloned(),
            regimes,
            theorem1: None,
            theorem2: None,
            calibration,
            records,
        })
    }

    fn replicate_record(
        &self,
        replicate: usize,
        risks: Vec<RiskBreakdown>,
        dims: &[usize],
        shape: &PenaltyShape,
        multipliers: &[f64],
        calibrated: bool,
    ) -> Result<ReplicateRecord> {
        let excess: Vec<f64> = risks.iter().map(|r| r.excess_risk).collect();
        let emp: Vec<f64> = risks.iter().map(|r| r.empirical_risk).collect();
        let (oracle_index, oracle_risk) = oracle_from_risks(dims, &excess);
        let make = |regime: String, multiplier: f64, index: usize| Selection {
            regime,
            multiplier,
            index,
            dimension: dims[index],
            excess_risk: excess[index],
            ratio: ratio(excess[index], oracle_risk),
        };
        let mut selections = Vec::with_capacity(multipliers.len() + 2);
        let zero = select(&self.collection, &emp, &vec![0.0; dims.len()])?;
        selections.push(make(ZERO_PENALTY.to_string(), 0.0, zero));
        for &c in multipliers {
            let idx = select(&self.collection, &emp, &shape.scaled(c))?;
            selections.push(make(regime_label(c), c, idx));
        }
        let calibration = if calibrated {
            let s = &self.settings;
            let grid = s.grid.build(&emp, shape)?;
            let run = |method: JumpMethod| -> Result<Option<CalibrationResult>> {
                match calibrate(
                    &self.collection,
                    &emp,
                    shape,
                    &grid,
                    method,
                    Some(s.jump_threshold()),
                ) {
                    Ok((_, res)) => Ok(Some(res)),
                    Err(Error::NoJump) => Ok(None),
                    Err(e) => Err(e),
                }
            };
            let max_jump = run(JumpMethod::MaxJump)?;
            let threshold = run(JumpMethod::Threshold)?;
            let chosen = match s.jump_method {
                JumpMethod::MaxJump => max_jump.clone(),
                JumpMethod::Threshold => threshold.clone(),
            };
            if let Some(c) = &chosen {
                let idx = c
                    .final_model_index
                    .expect("calibrate fills the final model");
                selections.push(make(CALIBRATED.to_string(), 2.0 * c.a_min_hat, idx));
            }
            Some(ReplicateCalibration {
                max_jump,
                threshold,
                chosen,
            })
        } else {
            None
        };
        Ok(ReplicateRecord {
            replicate,
            oracle_index,
            oracle_dimension: dims[oracle_index],
            oracle_risk,
            selections,
            calibration,
            risks,
        })
    }

    fn summarize_calibration(
        &self,
        records: &[ReplicateRecord],
        shape: &PenaltyShape,
    ) -> CalibrationSummary {
        let cals: Vec<&ReplicateCalibration> = records
            .iter()
            .filter_map(|r| r.calibration.as_ref())
            .collect();
        let chosen: Vec<&CalibrationResult> =
            cals.iter().filter_map(|c| c.chosen.as_ref()).collect();
        let a_min: Vec<f64> = chosen.iter().map(|c| c.a_min_hat).collect();
        let a_max_jump: Vec<f64> = cals
            .iter()
            .filter_map(|c| c.max_jump.as_ref())
            .map(|c| c.a_min_hat)
            .collect();
        let a_thr: Vec<f64> = cals
            .iter()
            .filter_map(|c| c.threshold.as_ref())
            .map(|c| c.a_min_hat)
            .collect();
        let mut cal_ratios = Vec::new();
        let mut zero_ratios = Vec::new();
        let mut dominated = 0usize;
        for rec in records {
            if let (Some(c), Some(z)) = (rec.selection(CALIBRATED), rec.selection(ZERO_PENALTY)) {
                cal_ratios.push(c.ratio);
                zero_ratios.push(z.ratio);
                if c.ratio <= z.ratio {
                    dominated += 1;
                }
            }
        }
        CalibrationSummary {
            shape_kind: shape.kind(),
            method: self.settings.jump_method,
            no_jump_count: records.len() - chosen.len(),
            median_a_min: median(&a_min),
            q10_a_min: quantile(&a_min, 0.1),
            q90_a_min: quantile(&a_min, 0.9),
            median_a_min_max_jump: median(&a_max_jump),
            median_a_min_threshold: median(&a_thr),
            median_jump_magnitude: median(
                &chosen
                    .iter()
                    .map(|c| c.jump_magnitude() as f64)
                    .collect::<Vec<_>>(),
            ),
            median_jump_ratio: median(&chosen.iter().map(|c| c.jump_ratio()).collect::<Vec<_>>()),
            median_final_dimension: median(
                &chosen
                    .iter()
                    .filter_map(|c| c.final_dimension)
                    .map(|d| d as f64)
                    .collect::<Vec<_>>(),
            ),
            median_ratio: median(&cal_ratios),
            median_ratio_zero_penalty: median(&zero_ratios),
            dominance_fraction: if cal_ratios.is_empty() {
                f64::NAN
            } else {
                dominated as f64 / cal_ratios.len() as f64
            },
            noise_variance: self.spec.noise_variance(),
        }
    }

    /// Selection under `c · pen_min` for every `c` in `multipliers`.
    pub fn penalty_sweep(&self, multipliers: &[f64]) -> Result<ExperimentReport> {
        let shape = self.shape(ShapeKind::OracleMeanP2)?;
        self.run_with_shape(ExperimentKind::PenaltySweep, &shape, multipliers, false)
    }

    /// Penalty `c_under · pen_min` with `c_under < 1`.
    pub fn theorem1(&self, c_under: f64) -> Result<ExperimentReport> {
        if !(0.0..1.0).contains(&c_under) {
            return Err(Error::InvalidArgument(format!(
                "c_under = {c_under} must lie in [0, 1)"
            )));
        }
        let shape = self.shape(ShapeKind::OracleMeanP2)?;
        let mut report =
            self.run_with_shape(ExperimentKind::Theorem1, &shape, &[c_under], false)?;
        let label = regime_label(c_under);
        let sel = report.selections(&label);
        let threshold = report.blowup_threshold;
        let dims: Vec<f64> = sel.iter().map(|s| s.dimension as f64).collect();
        report.theorem1 = Some(Theorem1Summary {
            c_under,
            dim_threshold: threshold,
            fraction_above_threshold: sel.iter().filter(|s| s.dimension >= threshold).count()
                as f64
                / sel.len() as f64,
            median_dimension: median(&dims),
            median_ratio: median(&sel.iter().map(|s| s.ratio).collect::<Vec<_>>()),
            max_dimension: self.collection.max_dimension(),
        });
        Ok(report)
    }

    /// Penalty `c_over · pen_min` with `c_over` near 2.
    pub fn theorem2(&self, c_over: f64) -> Result<ExperimentReport> {
        if !(c_over > 0.0 && c_over.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "c_over = {c_over} must be positive"
            )));
        }
        let shape = self.shape(ShapeKind::OracleMeanP2)?;
        let mut report = self.run_with_shape(ExperimentKind::Theorem2, &shape, &[c_over], false)?;
        let s = &self.settings;
        let nf = s.n as f64;
        let ln3 = nf.ln().powi(3);
        let band_lower = s.a_plus * ln3;
        let band_upper = nf.powf(0.5 + s.eta);
        let in_band = |d: usize| (d as f64) >= band_lower && (d as f64) <= band_upper;
        let bound = s.a_r * ln3 / nf;
        let small_ok = self
            .collection
            .dimensions()
            .iter()
            .zip(shape.values())
            .filter(|(d, _)| (**d as f64) < band_lower)
            .all(|(_, v)| c_over * v <= bound);
        let label = regime_label(c_over);
        let sel = report.selections(&label);
        let ratios: Vec<f64> = sel.iter().map(|s| s.ratio).collect();
        let sup_eps: Vec<f64> = report
            .records
            .iter()
            .map(|rec| {
                rec.risks
                    .iter()
                    .filter(|r| in_band(r.dimension))
                    .map(|r| r.eps_n)
                    .fold(0.0, f64::max)
            })
            .collect();
        report.theorem2 = Some(Theorem2Summary {
            c_over,
            median_ratio: median(&ratios),
            q90_ratio: quantile(&ratios, 0.9),
            median_dimension: median(&sel.iter().map(|s| s.dimension as f64).collect::<Vec<_>>()),
            eta: s.eta,
            band_lower,
            band_upper,
            fraction_in_band: sel.iter().filter(|s| in_band(s.dimension)).count() as f64
                / sel.len() as f64,
            a_r: s.a_r,
            small_model_penalty_bound: bound,
            small_models_within_bound: small_ok,
            mean_sup_eps_in_band: sup_eps.iter().sum::<f64>() / sup_eps.len() as f64,
        });
        Ok(report)
    }

    /// The three-step calibration on every replicate with the given shape.
    pub fn calibration(&self, shape_kind: ShapeKind) -> Result<ExperimentReport> {
        let shape = self.shape(shape_kind)?;
        self.run_with_shape(ExperimentKind::Calibration, &shape, &[], true)
    }

    /// Path and calibration for the first replicate, for plotting.
    pub fn example_path(
        &self,
        shape: &PenaltyShape,
    ) -> Result<(SelectionPath, Option<CalibrationResult>)> {
        if shape.len() != self.collection.len() {
            return Err(Error::LengthMismatch {
                expected: self.collection.len(),
                found: shape.len(),
            });
        }
        let s = &self.settings;
        let prepared = PreparedCollection::new(&self.collection, &self.spec)?;
        let sample = sample_with_rng(
            &self.spec,
            s.n,
            &mut replicate_rng(s.seed, 0, STREAM_EXPERIMENT),
        )?;
        let emp: Vec<f64> = prepared
            .evaluate(&sample, &self.spec)?
            .iter()
            .map(|r| r.empirical_risk)
            .collect();
        let grid = s.grid.build(&emp, shape)?;
        let path = compute_path(&self.collection, &emp, shape, &grid)?;
        let cal = match detect_jump(&path, s.jump_method, Some(s.jump_threshold())) {
            Ok(mut c) => {
                let idx = select(&self.collection, &emp, &shape.scaled(2.0 * c.a_min_hat))?;
                c.final_model_index = Some(idx);
                c.final_dimension = Some(self.collection.dimensions()[idx]);
                Some(c)
            }
            Err(Error::NoJump) => None,
            Err(e) => return Err(e),
        };
        Ok((path, cal))
    }
}

fn summarize_regime(
    records: &[ReplicateRecord],
    label: &str,
    multiplier: Option<f64>,
    blowup: usize,
) -> RegimeSummary {
    let sel: Vec<&Selection> = records.iter().filter_map(|r| r.selection(label)).collect();
    let dims: Vec<f64> = sel.iter().map(|s| s.dimension as f64).collect();
    let ratios: Vec<f64> = sel.iter().map(|s| s.ratio).collect();
    let count = sel.len();
    let mean = |v: &[f64]| {
        if v.is_empty() {
            f64::NAN
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    RegimeSummary {
        regime: label.to_string(),
        multiplier: multiplier
            .unwrap_or_else(|| median(&sel.iter().map(|s| s.multiplier).collect::<Vec<_>>())),
        count,
        median_dimension: median(&dims),
        mean_dimension: mean(&dims),
        median_ratio: median(&ratios),
        mean_ratio: mean(&ratios),
        q90_ratio: quantile(&ratios, 0.9),
        fraction_blowup: if count == 0 {
            f64::NAN
        } else {
            sel.iter().filter(|s| s.dimension >= blowup).count() as f64 / count as f64
        },
    }
}

pub fn run_theorem1_experiment(
    spec: &RegressionSpec,
    collection: &ModelCollection,
    settings: &ExperimentSettings,
    c_under: f64,
) -> Result<ExperimentReport> {
    Experiment::new(spec.clone(), collection.clone(), settings.clone())?.theorem1(c_under)
}

pub fn run_theorem2_experiment(
    spec: &RegressionSpec,
    collection: &ModelCollection,
    settings: &ExperimentSettings,
    c_over: f64,
) -> Result<ExperimentReport> {
    Experiment::new(spec.clone(), collection.clone(), settings.clone())?.theorem2(c_over)
}

pub fn run_calibration_experiment(
    spec: &RegressionSpec,
    collection: &ModelCollection,
    settings: &ExperimentSettings,
    shape_kind: ShapeKind,
) -> Result<ExperimentReport> {
    if shape_kind == ShapeKind::UserSupplied {
        return Err(Error::InvalidArgument(
            "calibration experiments use linear_dimension or oracle_mean_p2 shapes".into(),
        ));
    }
    Experiment::new(spec.clone(), collection.clone(), settings.clone())?.calibration(shape_kind)
}
