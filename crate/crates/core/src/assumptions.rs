//! Runnable checks of the structural assumptions on a collection and truth.

use serde::{Deserialize, Serialize};

use crate::model::{ModelCollection, PartitionModel, RichnessFlags};
use crate::truth::RegressionSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelAssumptions {
    pub index: usize,
    pub dimension: usize,
    pub cells: usize,
    pub degree: usize,
    /// `√(|𝒫| · min_I Pˣ(I))`.
    pub lower_regularity: f64,
    /// `√(|𝒫| · min_I Leb(I))`.
    pub lower_regularity_lebesgue: f64,
    /// Largest per-cell localized-basis constant.
    pub sup_norm_constant: f64,
    /// `1 ≤ D_M ≤ n`.
    pub dimension_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub sample_size: usize,
    pub models: Vec<ModelAssumptions>,
    pub richness: RichnessFlags,
    pub density_min: f64,
    pub density_max: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Bound `A` on `|Y|`.
    pub data_bound: f64,
    /// Collection-wide `r_M` (max over models).
    pub max_sup_norm_constant: f64,
    pub max_degree: usize,
}

fn model_assumptions(
    index: usize,
    model: &PartitionModel,
    truth: &RegressionSpec,
    n: usize,
) -> ModelAssumptions {
    let cells = model.cells();
    let (mut min_mass, mut min_len, mut sup_const) = (f64::INFINITY, f64::INFINITY, 0.0f64);
    for c in 0..cells {
        let (a, b) = model.cell_bounds(c);
        min_mass = min_mass.min(truth.design().mass(a, b));
        min_len = min_len.min(b - a);
        sup_const = sup_const.max(model.local_basis(c).sup_norm_constant);
    }
    let d = model.dimension();
    ModelAssumptions {
        index,
        dimension: d,
        cells,
        degree: model.degree(),
        lower_regularity: (cells as f64 * min_mass).sqrt(),
        lower_regularity_lebesgue: (cells as f64 * min_len).sqrt(),
        sup_norm_constant: sup_const,
        dimension_ok: d >= 1 && d <= n,
    }
}

/// Per-model regularity, basis and dimension checks plus collection-level
/// cardinality and richness flags and the bounds of the truth.
pub fn check_assumptions(
    collection: &ModelCollection,
    truth: &RegressionSpec,
    n: usize,
) -> AssumptionReport {
    let models: Vec<ModelAssumptions> = collection
        .models()
        .iter()
        .enumerate()
        .map(|(i, m)| model_assumptions(i, m, truth, n))
        .collect();
    let (density_min, density_max) = truth.design().bounds();
    let (sigma_min, sigma_max) = truth.noise_level().range();
    let richness = RichnessFlags::compute(&collection.dimensions(), n, &Default::default());
    AssumptionReport {
        sample_size: n,
        max_sup_norm_constant: models
            .iter()
            .map(|m| m.sup_norm_constant)
            .fold(0.0, f64::max),
        max_degree: models.iter().map(|m| m.degree).max().unwrap_or(0),
        models,
        richness,
        density_min,
        density_max,
        sigma_min,
        sigma_max,
        data_bound: truth.data_bound(),
    }
}
