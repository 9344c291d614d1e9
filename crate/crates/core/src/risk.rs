//! Risk functionals of a fitted model against a known truth.
//!
//! For a model `M`, sample `P_n` and truth `P` this computes the empirical
//! risk `P_n K s_n(M)`, the bias `ℓ(s*, s_M)`, the true and empirical excess
//! risks of the estimator over the projection (`p1`, `p2`), the centered term
//! `δ̄ = (P_n − P)(K s_M − K s*)`, the ideal penalty, and concentration
//! diagnostics. All `P`-integrals use the same per-cell quadrature as the
//! projection, so `ℓ(s*, s_n) = bias + p1` holds to rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_least_squares, project_l2, weighted_cell_nodes, FittedFunction};
use crate::model::PartitionModel;
use crate::sample::Sample;
use crate::truth::RegressionSpec;

/// Grid resolution of the sup-norm diagnostic for `r > 0`.
pub const SUP_GRID: usize = 4096;

/// Least-squares contrast `(y − s(x))²`.
pub fn contrast(s: &FittedFunction, x: f64, y: f64) -> Result<f64> {
    let r = y - s.evaluate(x)?;
    Ok(r * r)
}

/// `P_n K s = (1/n) Σ (Y_i − s(X_i))²`.
pub fn empirical_risk(s: &FittedFunction, sample: &Sample) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let total: f64 = sample
        .points()
        .map(|(x, y)| {
            let r = y - s.value_unchecked(x);
            r * r
        })
        .sum();
    Ok(total / sample.len() as f64)
}

/// `P_n K s*`, computable in simulation since `s*` is known.
pub fn empirical_risk_of_truth(sample: &Sample, truth: &RegressionSpec) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    let total: f64 = sample
        .points()
        .map(|(x, y)| {
            let r = y - truth.s_star(x);
            r * r
        })
        .sum();
    Ok(total / sample.len() as f64)
}

fn weighted_sq<F: Fn(usize, f64) -> f64>(nodes: &[Vec<(f64, f64)>], f: F) -> f64 {
    nodes
        .iter()
        .enumerate()
        .map(|(cell, pts)| {
            pts.iter()
                .map(|&(x, w)| {
                    let d = f(cell, x);
                    w * d * d
                })
                .sum::<f64>()
        })
        .sum()
}

/// `ℓ(s*, s) = ∫ (s − s*)² f`, by order-32 Gauss–Legendre on each cell of
/// `s`'s model, split at the truth's kinks.
pub fn true_excess_risk(s: &FittedFunction, truth: &RegressionSpec) -> f64 {
    let nodes = weighted_cell_nodes(s.model(), truth);
    weighted_sq(&nodes, |cell, x| s.value_in_cell(cell, x) - truth.s_star(x))
}

/// Every risk quantity for one model on one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskBreakdown {
    pub dimension: usize,
    /// `P_n K s_n(M)`.
    pub empirical_risk: f64,
    /// `P_n K s_M`.
    pub empirical_risk_projection: f64,
    /// `P_n K s*`.
    pub empirical_risk_truth: f64,
    /// `ℓ(s*, s_M)`.
    pub bias: f64,
    /// `P(K s_n(M) − K s_M) = ‖s_n(M) − s_M‖²`.
    pub p1: f64,
    /// `P_n(K s_M − K s_n(M))`.
    pub p2: f64,
    /// `(P_n − P)(K s_M − K s*)`.
    pub delta_bar: f64,
    /// `ℓ(s*, s_n(M))`, integrated directly.
    pub excess_risk: f64,
    /// `P K s_n(M) − P_n K s_n(M)`.
    pub ideal_penalty: f64,
    pub eps_n: f64,
    /// `‖s_n(M) − s_M‖_∞`.
    pub sup_dev: f64,
    /// `2 √(n p2 / D_M)`, so that `p2 = (D_M / 4n) · k1_estimate²`.
    pub k1_estimate: f64,
}

impl RiskBreakdown {
    /// `ℓ − (P_n K s_n + p1 + p2 − δ̄ − P_n K s*)`.
    pub fn decomposition_residual(&self) -> f64 {
        self.excess_risk
            - (self.empirical_risk + self.p1 + self.p2 - self.delta_bar - self.empirical_risk_truth)
    }

    /// `ℓ(s*, s_n) − (bias + p1)`.
    pub fn pythagorean_residual(&self) -> f64 {
        self.excess_risk - (self.bias + self.p1)
    }

    /// `p1 + p2 − δ̄`, the part of the ideal penalty that depends on `M`.
    pub fn centered_ideal_penalty(&self) -> f64 {
        self.p1 + self.p2 - self.delta_bar
    }
}

/// Concentration diagnostics with the proof constant fixed to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub eps_n: f64,
    pub sup_dev: f64,
    pub k1_estimate: f64,
}

/// `max{(ln n / D)^{1/4}, (D ln n / n)^{1/4}, √sup_dev}`.
pub fn epsilon_n(n: usize, dimension: usize, sup_dev: f64) -> f64 {
    let ln_n = (n as f64).ln().max(0.0);
    let d = dimension as f64;
    let nf = n as f64;
    (ln_n / d)
        .powf(0.25)
        .max((d * ln_n / nf).powf(0.25))
        .max(sup_dev.sqrt())
}

/// `‖a − b‖_∞` for two functions on the same model. Histograms are handled
/// exactly per cell; higher degrees use a `SUP_GRID`-point grid plus both
/// ends of every cell.
pub fn sup_distance(a: &FittedFunction, b: &FittedFunction) -> Result<f64> {
    let diff = a.difference(b)?;
    let model = diff.model();
    if model.degree() == 0 {
        return Ok((0..model.cells())
            .map(|c| diff.value_in_cell(c, model.cell_bounds(c).0).abs())
            .fold(0.0, f64::max));
    }
    let mut best: f64 = 0.0;
    for i in 0..SUP_GRID {
        let x = i as f64 / (SUP_GRID - 1) as f64;
        best = best.max(diff.value_unchecked(x).abs());
    }
    for c in 0..model.cells() {
        let (lo, hi) = model.cell_bounds(c);
        best = best
            .max(diff.value_in_cell(c, lo).abs())
            .max(diff.value_in_cell(c, hi).abs());
    }
    Ok(best)
}

/// A model together with its projection and quadrature nodes, reusable
/// across samples drawn from the same truth.
#[derive(Debug, Clone)]
pub struct ProjectedModel {
    model: PartitionModel,
    projection: FittedFunction,
    nodes: Vec<Vec<(f64, f64)>>,
    bias: f64,
}

impl ProjectedModel {
    pub fn new(model: &PartitionModel, truth: &RegressionSpec) -> Result<Self> {
        let projection = project_l2(model, truth)?;
        let nodes = weighted_cell_nodes(model, truth);
        let bias = weighted_sq(&nodes, |cell, x| {
            projection.value_in_cell(cell, x) - truth.s_star(x)
        });
        Ok(Self {
            model: model.clone(),
            projection,
            nodes,
            bias,
        })
    }

    pub fn model(&self) -> &PartitionModel {
        &self.model
    }

    pub fn projection(&self) -> &FittedFunction {
        &self.projection
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    /// Breakdown for an already-fitted estimator. `truth_risk` is `P_n K s*`
    /// and `noise_variance` is `P K s* = ∫ σ² f`.
    pub fn breakdown_for(
        &self,
        fit: &FittedFunction,
        sample: &Sample,
        truth: &RegressionSpec,
        truth_risk: f64,
        noise_variance: f64,
    ) -> Result<RiskBreakdown> {
        let n = sample.len();
        let dimension = self.model.dimension();
        let empirical = empirical_risk(fit, sample)?;
        let empirical_proj = empirical_risk(&self.projection, sample)?;
        let excess = weighted_sq(&self.nodes, |cell, x| {
            fit.value_in_cell(cell, x) - truth.s_star(x)
        });
        let p1 = weighted_sq(&self.nodes, |cell, x| {
            fit.value_in_cell(cell, x) - self.projection.value_in_cell(cell, x)
        });
        let p2 = empirical_proj - empirical;
        let delta_bar = (empirical_proj - truth_risk) - self.bias;
        let sup_dev = sup_distance(fit, &self.projection)?;
        let k1_estimate = 2.0 * (n as f64 * p2.max(0.0) / dimension as f64).sqrt();
        Ok(RiskBreakdown {
            dimension,
            empirical_risk: empirical,
            empirical_risk_projection: empirical_proj,
            empirical_risk_truth: truth_risk,
            bias: self.bias,
            p1,
            p2,
            delta_bar,
            excess_risk: excess,
            ideal_penalty: excess + noise_variance - empirical,
            eps_n: epsilon_n(n, dimension, sup_dev),
            sup_dev,
            k1_estimate,
        })
    }

    /// Fits on `sample` and returns the fit with its breakdown.
    pub fn evaluate(
        &self,
        sample: &Sample,
        truth: &RegressionSpec,
    ) -> Result<(FittedFunction, RiskBreakdown)> {
        let fit = fit_least_squares(&self.model, sample)?;
        let truth_risk = empirical_risk_of_truth(sample, truth)?;
        let rb = self.breakdown_for(&fit, sample, truth, truth_risk, truth.noise_variance())?;
        Ok((fit, rb))
    }
}

pub fn risk_breakdown(
    model: &PartitionModel,
    sample: &Sample,
    truth: &RegressionSpec,
) -> Result<RiskBreakdown> {
    Ok(ProjectedModel::new(model, truth)?
        .evaluate(sample, truth)?
        .1)
}

pub fn diagnostics(
    model: &PartitionModel,
    sample: &Sample,
    truth: &RegressionSpec,
) -> Result<Diagnostics> {
    let rb = risk_breakdown(model, sample, truth)?;
    Ok(Diagnostics {
        eps_n: rb.eps_n,
        sup_dev: rb.sup_dev,
        k1_estimate: rb.k1_estimate,
    })
}
