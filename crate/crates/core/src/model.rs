//! Partition models, their localized Legendre bases and model collections.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::legendre_values;

/// Piecewise polynomials of a fixed degree on a partition of `[0, 1]`.
///
/// Cells are half-open `[a, b)` except the last, which is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel", into = "RawModel")]
pub struct PartitionModel {
    breakpoints: Vec<f64>,
    degree: usize,
}

#[derive(Serialize, Deserialize)]
struct RawModel {
    breakpoints: Vec<f64>,
    degree: usize,
}

impl TryFrom<RawModel> for PartitionModel {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        Self::new(raw.breakpoints, raw.degree)
    }
}

impl From<PartitionModel> for RawModel {
    fn from(m: PartitionModel) -> Self {
        RawModel {
            breakpoints: m.breakpoints,
            degree: m.degree,
        }
    }
}

impl PartitionModel {
    pub fn new(breakpoints: Vec<f64>, degree: usize) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::InvalidPartition(
                "need at least two breakpoints".into(),
            ));
        }
        if breakpoints[0] != 0.0 || breakpoints[breakpoints.len() - 1] != 1.0 {
            return Err(Error::InvalidPartition(
                "breakpoints must start at 0 and end at 1".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidPartition(
                "breakpoints must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            breakpoints,
            degree,
        })
    }

    /// `cells` equal-width cells.
    pub fn regular(cells: usize, degree: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidPartition("need at least one cell".into()));
        }
        let mut bp: Vec<f64> = (0..=cells).map(|i| i as f64 / cells as f64).collect();
        bp[cells] = 1.0;
        Self::new(bp, degree)
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn cells(&self) -> usize {
        self.breakpoints.len() - 1
    }

    /// Functions per cell, `r + 1`.
    pub fn cell_dimension(&self) -> usize {
        self.degree + 1
    }

    /// `D_M = #cells · (r + 1)`.
    pub fn dimension(&self) -> usize {
        self.cells() * self.cell_dimension()
    }

    pub fn cell_bounds(&self, cell: usize) -> (f64, f64) {
        (self.breakpoints[cell], self.breakpoints[cell + 1])
    }

    pub fn cell_of(&self, x: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutOfDomain(x));
        }
        Ok(self.cell_of_unchecked(x))
    }

    pub(crate) fn cell_of_unchecked(&self, x: f64) -> usize {
        let cells = self.cells();
        self.breakpoints[1..cells].partition_point(|&b| b <= x)
    }

    pub fn local_basis(&self, cell: usize) -> LocalBasis {
        let (left, right) = self.cell_bounds(cell);
        LocalBasis::new(cell, left, right, self.degree, self.dimension())
    }

    /// True when every cell of `self` is contained in a cell of `coarser`.
    pub fn refines(&self, coarser: &PartitionModel) -> bool {
        coarser
            .breakpoints
            .iter()
            .all(|b| self.breakpoints.iter().any(|c| (c - b).abs() <= 1e-15))
    }
}

/// Shifted, scaled Legendre polynomials on one cell, orthonormal in
/// `L²(Leb)` restricted to the cell: `φ_k(x) = √((2k+1)/h) · P_k(2(x−a)/h − 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalBasis {
    pub cell_index: usize,
    pub left: f64,
    pub right: f64,
    pub degree: usize,
    /// Measured `r_M` factor: `sup_x Σ_k |φ_k(x)| / √D_M` over this cell.
    pub sup_norm_constant: f64,
}

impl LocalBasis {
    fn new(
        cell_index: usize,
        left: f64,
        right: f64,
        degree: usize,
        model_dimension: usize,
    ) -> Self {
        let mut basis = Self {
            cell_index,
            left,
            right,
            degree,
            sup_norm_constant: 0.0,
        };
        basis.sup_norm_constant = basis.measure_sup_norm(model_dimension);
        basis
    }

    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    /// Writes `φ_k(x)` into `out[k]`, `out.len() == degree + 1`.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let h = self.width();
        let t = 2.0 * (x - self.left) / h - 1.0;
        legendre_values(t, out);
        for (k, v) in out.iter_mut().enumerate() {
            *v *= ((2 * k + 1) as f64 / h).sqrt();
        }
    }

    pub fn values(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.degree + 1];
        self.eval_into(x, &mut out);
        out
    }

    fn measure_sup_norm(&self, model_dimension: usize) -> f64 {
        const GRID: usize = 1024;
        let mut buf = vec![0.0; self.degree + 1];
        let mut best: f64 = 0.0;
        for i in 0..=GRID {
            let x = self.left + self.width() * i as f64 / GRID as f64;
            self.eval_into(x, &mut buf);
            best = best.max(buf.iter().map(|v| v.abs()).sum());
        }
        best / (model_dimension as f64).sqrt()
    }
}

/// Thresholds behind the cardinality and richness checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RichnessConstants {
    /// `c_M` in `#M_n ≤ c_M n^{α_M}`.
    pub c_card: f64,
    /// `α_M`.
    pub alpha_card: f64,
    /// Upper factor for the model with `√n ≤ D ≤ c_rich √n`.
    pub c_rich: f64,
    /// Factor for the model with `D ≥ a_rich · n / (ln n)²`.
    pub a_rich: f64,
}

impl Default for RichnessConstants {
    fn default() -> Self {
        Self {
            c_card: 1.0,
            alpha_card: 1.0,
            c_rich: 2.0,
            a_rich: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RichnessFlags {
    pub cardinality: usize,
    pub cardinality_ok: bool,
    pub has_root_n_model: bool,
    pub has_large_model: bool,
}

impl RichnessFlags {
    pub fn compute(dimensions: &[usize], n: usize, constants: &RichnessConstants) -> Self {
        let nf = n as f64;
        let root = nf.sqrt();
        let large = constants.a_rich * nf / nf.ln().powi(2);
        Self {
            cardinality: dimensions.len(),
            cardinality_ok: dimensions.len() as f64
                <= constants.c_card * nf.powf(constants.alpha_card),
            has_root_n_model: dimensions
                .iter()
                .any(|&d| d as f64 >= root && d as f64 <= constants.c_rich * root),
            has_large_model: dimensions.iter().any(|&d| d as f64 >= large),
        }
    }

    pub fn rich(&self) -> bool {
        self.has_root_n_model && self.has_large_model
    }
}

/// An ordered, finite collection of partition models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCollection {
    models: Vec<PartitionModel>,
    sample_size: usize,
    richness: RichnessFlags,
}

impl ModelCollection {
    pub fn new(models: Vec<PartitionModel>, sample_size: usize) -> Result<Self> {
        Self::with_constants(models, sample_size, &RichnessConstants::default())
    }

    pub fn with_constants(
        models: Vec<PartitionModel>,
        sample_size: usize,
        constants: &RichnessConstants,
    ) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InvalidArgument("model collection is empty".into()));
        }
        let dims: Vec<usize> = models.iter().map(PartitionModel::dimension).collect();
        let richness = RichnessFlags::compute(&dims, sample_size, constants);
        Ok(Self {
            models,
            sample_size,
            richness,
        })
    }

    pub fn models(&self) -> &[PartitionModel] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&PartitionModel> {
        self.models.get(index)
    }

    pub fn dimensions(&self) -> Vec<usize> {
        self.models.iter().map(PartitionModel::dimension).collect()
    }

    pub fn max_dimension(&self) -> usize {
        self.models
            .iter()
            .map(PartitionModel::dimension)
            .max()
            .unwrap_or(0)
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn richness(&self) -> &RichnessFlags {
        &self.richness
    }
}

/// Regular dyadic partitions with `2^k` cells, `k = 0..=dyadic_max`, crossed
/// with every degree in `degrees`, sorted by dimension (then degree).
pub fn build_regular_collection(
    n: usize,
    degrees: &[usize],
    dyadic_max: u32,
) -> Result<ModelCollection> {
    if n < 4 {
        return Err(Error::InvalidArgument(format!(
            "sample size {n} is below 4"
        )));
    }
    if degrees.is_empty() {
        return Err(Error::InvalidArgument("no polynomial degree given".into()));
    }
    if dyadic_max >= usize::BITS - 1 {
        return Err(Error::InvalidArgument(format!(
            "dyadic_max {dyadic_max} is too large"
        )));
    }
    let mut degrees = degrees.to_vec();
    degrees.sort_unstable();
    degrees.dedup();
    let max_dim = (1usize << dyadic_max) * (degrees[degrees.len() - 1] + 1);
    if max_dim > n {
        return Err(Error::DimensionExceedsSample {
            dimension: max_dim,
            n,
        });
    }
    let mut models = Vec::with_capacity(degrees.len() * (dyadic_max as usize + 1));
    for &r in &degrees {
        for k in 0..=dyadic_max {
            models.push(PartitionModel::regular(1 << k, r)?);
        }
    }
    models.sort_by_key(|m| (m.dimension(), m.degree()));
    ModelCollection::new(models, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussLegendre;

    #[test]
    fn regular_histogram_collection() {
        let c = build_regular_collection(1024, &[0], 8).unwrap();
        assert_eq!(c.dimensions(), vec![1, 2, 4, 8, 16, 32, 64, 128, 256]);
        assert!(c.richness().cardinality_ok);
    }

    #[test]
    fn mixed_degree_collection() {
        let c = build_regular_collection(1024, &[0, 2], 4).unwrap();
        let mut dims = c.dimensions();
        assert_eq!(dims.len(), 10);
        dims.sort_unstable();
        assert_eq!(dims, vec![1, 2, 3, 4, 6, 8, 12, 16, 24, 48]);
        assert!(c.dimensions().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn rejects_oversized_collection() {
        assert!(matches!(
            build_regular_collection(16, &[0], 8),
            Err(Error::DimensionExceedsSample {
                dimension: 256,
                n: 16
            })
        ));
        assert!(build_regular_collection(3, &[0], 0).is_err());
    }

    #[test]
    fn richness_flags_for_reference_collection() {
        let c = build_regular_collection(2000, &[0], 8).unwrap();
        let r = c.richness();
        assert!(r.has_root_n_model, "64 lies in [44.7, 89.4]");
        assert!(r.has_large_model);
        assert!(r.rich());
    }

    #[test]
    fn partition_validation() {
        assert!(PartitionModel::new(vec![0.0], 0).is_err());
        assert!(PartitionModel::new(vec![0.0, 0.5, 0.5, 1.0], 0).is_err());
        assert!(PartitionModel::new(vec![0.1, 1.0], 0).is_err());
        let m = PartitionModel::new(vec![0.0, 0.25, 1.0], 3).unwrap();
        assert_eq!(m.dimension(), 8);
    }

    #[test]
    fn half_open_cells() {
        let m = PartitionModel::regular(2, 0).unwrap();
        assert_eq!(m.cell_of(0.0).unwrap(), 0);
        assert_eq!(m.cell_of(0.49).unwrap(), 0);
        assert_eq!(m.cell_of(0.5).unwrap(), 1);
        assert_eq!(m.cell_of(1.0).unwrap(), 1);
        assert!(m.cell_of(1.0 + 1e-12).is_err());
        assert!(m.cell_of(-0.1).is_err());
    }

    #[test]
    fn local_basis_is_orthonormal() {
        let m = PartitionModel::new(vec![0.0, 0.1, 0.35, 1.0], 4).unwrap();
        let rule = GaussLegendre::standard();
        for cell in 0..m.cells() {
            let b = m.local_basis(cell);
            let mut gram = [[0.0; 5]; 5];
            for (x, w) in rule.mapped(b.left, b.right) {
                let v = b.values(x);
                for (row, vj) in gram.iter_mut().zip(&v) {
                    for (g, vk) in row.iter_mut().zip(&v) {
                        *g += w * vj * vk;
                    }
                }
            }
            for (j, row) in gram.iter().enumerate() {
                for (k, g) in row.iter().enumerate() {
                    let want = if j == k { 1.0 } else { 0.0 };
                    assert!((g - want).abs() < 1e-10, "cell {cell} ({j},{k}) = {g}");
                }
            }
        }
    }

    #[test]
    fn sup_norm_constants() {
        let hist = PartitionModel::regular(8, 0).unwrap();
        for c in 0..8 {
            assert!((hist.local_basis(c).sup_norm_constant - 1.0).abs() < 1e-12);
        }
        let quad = PartitionModel::regular(8, 2).unwrap();
        let expected = (1.0 + 3f64.sqrt() + 5f64.sqrt()) / 3f64.sqrt();
        for c in 0..8 {
            let k = quad.local_basis(c).sup_norm_constant;
            assert!((k - expected).abs() < 1e-12);
            assert!(k <= 3.0);
        }
    }

    #[test]
    fn dyadic_refinement() {
        let coarse = PartitionModel::regular(4, 0).unwrap();
        let fine = PartitionModel::regular(16, 0).unwrap();
        assert!(fine.refines(&coarse));
        assert!(!coarse.refines(&fine));
    }
}
