//! Least-squares fitting on a partition model and `L²(Pˣ)` projection of a
//! known regression function.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PartitionModel;
use crate::quadrature::{split_interval, GaussLegendre};
use crate::sample::Sample;
use crate::truth::RegressionSpec;

/// Relative singular-value cutoff for the per-cell least-squares solves.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// A piecewise polynomial stored as coefficients in each cell's
/// orthonormal Legendre basis (cell-major, `r + 1` entries per cell).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedFunction {
    model: PartitionModel,
    coefficients: Vec<f64>,
}

impl FittedFunction {
    pub fn new(model: PartitionModel, coefficients: Vec<f64>) -> Result<Self> {
        if coefficients.len() != model.dimension() {
            return Err(Error::LengthMismatch {
                expected: model.dimension(),
                found: coefficients.len(),
            });
        }
        Ok(Self {
            model,
            coefficients,
        })
    }

    pub fn zero(model: PartitionModel) -> Self {
        let d = model.dimension();
        Self {
            model,
            coefficients: vec![0.0; d],
        }
    }

    /// Piecewise-constant function with the given value on each cell.
    pub fn from_cell_values(model: PartitionModel, values: &[f64]) -> Result<Self> {
        if values.len() != model.cells() {
            return Err(Error::LengthMismatch {
                expected: model.cells(),
                found: values.len(),
            });
        }
        let p = model.cell_dimension();
        let mut coefficients = vec![0.0; model.dimension()];
        for (cell, &v) in values.iter().enumerate() {
            let (a, b) = model.cell_bounds(cell);
            coefficients[cell * p] = v * (b - a).sqrt();
        }
        Ok(Self {
            model,
            coefficients,
        })
    }

    pub fn model(&self) -> &PartitionModel {
        &self.model
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn cell_coefficients(&self, cell: usize) -> &[f64] {
        let p = self.model.cell_dimension();
        &self.coefficients[cell * p..(cell + 1) * p]
    }

    /// Coefficients of the plain Legendre polynomials `P_k(t)` on `cell`,
    /// with `t` the cell coordinate mapped to `[-1, 1]`. For histograms this
    /// is the constant value on the cell.
    pub fn legendre_coefficients(&self, cell: usize) -> Vec<f64> {
        let (a, b) = self.model.cell_bounds(cell);
        let h = b - a;
        self.cell_coefficients(cell)
            .iter()
            .enumerate()
            .map(|(k, c)| c / (h / (2 * k + 1) as f64).sqrt())
            .collect()
    }

    pub fn evaluate(&self, x: f64) -> Result<f64> {
        let cell = self.model.cell_of(x)?;
        Ok(self.value_in_cell(cell, x))
    }

    /// Value of the polynomial attached to `cell` at `x` (no domain check;
    /// `x` may sit on the closed right end of the cell).
    pub fn value_in_cell(&self, cell: usize, x: f64) -> f64 {
        let (a, b) = self.model.cell_bounds(cell);
        let h = b - a;
        let t = 2.0 * (x - a) / h - 1.0;
        let coefs = self.cell_coefficients(cell);
        // Clenshaw-free direct recurrence; degrees are small.
        let mut p_prev = 1.0;
        let mut p_cur = t;
        let mut acc = coefs[0] / h.sqrt();
        if coefs.len() > 1 {
            acc += coefs[1] * (3.0 / h).sqrt() * t;
        }
        for (k, c) in coefs.iter().enumerate().skip(2) {
            let kf = k as f64;
            let p_next = ((2.0 * kf - 1.0) * t * p_cur - (kf - 1.0) * p_prev) / kf;
            p_prev = p_cur;
            p_cur = p_next;
            acc += c * ((2 * k + 1) as f64 / h).sqrt() * p_cur;
        }
        acc
    }

    pub(crate) fn value_unchecked(&self, x: f64) -> f64 {
        self.value_in_cell(self.model.cell_of_unchecked(x), x)
    }

    /// `self − other` on the same model.
    pub fn difference(&self, other: &FittedFunction) -> Result<FittedFunction> {
        if self.model != other.model {
            return Err(Error::InvalidArgument(
                "functions live on different models".into(),
            ));
        }
        let coefficients = self
            .coefficients
            .iter()
            .zip(&other.coefficients)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self {
            model: self.model.clone(),
            coefficients,
        })
    }
}

/// Indices of the sample points falling in each cell.
pub(crate) fn bucket_by_cell(model: &PartitionModel, sample: &Sample) -> Vec<Vec<usize>> {
    let mut buckets = vec![Vec::new(); model.cells()];
    for (i, &x) in sample.xs().iter().enumerate() {
        buckets[model.cell_of_unchecked(x)].push(i);
    }
    buckets
}

/// Empirical least-squares estimator `s_n(M)`.
///
/// Histograms use cell means. Higher degrees solve each cell by SVD with
/// relative rank cutoff [`RANK_TOLERANCE`], giving the minimum-norm solution
/// on rank-deficient cells, including cells holding fewer than `r + 1`
/// points. Empty cells get the zero polynomial.
pub fn fit_least_squares(model: &PartitionModel, sample: &Sample) -> Result<FittedFunction> {
    let n = sample.len();
    if n == 0 {
        return Err(Error::EmptySample);
    }
    if model.dimension() > n {
        return Err(Error::DimensionExceedsSample {
            dimension: model.dimension(),
            n,
        });
    }
    let p = model.cell_dimension();
    let mut coefficients = vec![0.0; model.dimension()];
    let xs = sample.xs();
    let ys = sample.ys();
    for (cell, idx) in bucket_by_cell(model, sample).into_iter().enumerate() {
        if idx.is_empty() {
            continue;
        }
        let basis = model.local_basis(cell);
        let out = &mut coefficients[cell * p..(cell + 1) * p];
        if p == 1 {
            let mean = idx.iter().map(|&i| ys[i]).sum::<f64>() / idx.len() as f64;
            out[0] = mean * basis.width().sqrt();
            continue;
        }
        let mut design = DMatrix::<f64>::zeros(idx.len(), p);
        let mut row = vec![0.0; p];
        for (r, &i) in idx.iter().enumerate() {
            basis.eval_into(xs[i], &mut row);
            for (c, v) in row.iter().enumerate() {
                design[(r, c)] = *v;
            }
        }
        let rhs = DVector::from_iterator(idx.len(), idx.iter().map(|&i| ys[i]));
        let svd = design.svd(true, true);
        let cutoff = RANK_TOLERANCE * svd.singular_values.max();
        let beta = svd
            .solve(&rhs, cutoff)
            .map_err(|e| Error::InvalidArgument(format!("per-cell least squares failed: {e}")))?;
        out.copy_from_slice(beta.as_slice());
    }
    Ok(FittedFunction {
        model: model.clone(),
        coefficients,
    })
}

/// Quadrature nodes `(x, w · f(x))` for each cell of `model`, with cells
/// split at the truth's non-smooth points.
pub(crate) fn weighted_cell_nodes(
    model: &PartitionModel,
    truth: &RegressionSpec,
) -> Vec<Vec<(f64, f64)>> {
    let rule = GaussLegendre::standard();
    let kinks = truth.kinks();
    (0..model.cells())
        .map(|cell| {
            let (a, b) = model.cell_bounds(cell);
            split_interval(a, b, &kinks)
                .into_iter()
                .flat_map(|(lo, hi)| rule.mapped(lo, hi).collect::<Vec<_>>())
                .map(|(x, w)| (x, w * truth.density(x)))
                .collect()
        })
        .collect()
}

/// Projection `s_M` of `s*` onto `model` in `L²(Pˣ)`.
///
/// Each cell solves its `f`-weighted normal equations by Cholesky; a Gram
/// matrix that is not positive definite means the density vanishes on the
/// cell.
pub fn project_l2(model: &PartitionModel, truth: &RegressionSpec) -> Result<FittedFunction> {
    let p = model.cell_dimension();
    let mut coefficients = vec![0.0; model.dimension()];
    let mut phi = vec![0.0; p];
    for (cell, nodes) in weighted_cell_nodes(model, truth).into_iter().enumerate() {
        let basis = model.local_basis(cell);
        let mut gram = DMatrix::<f64>::zeros(p, p);
        let mut rhs = DVector::<f64>::zeros(p);
        for (x, w) in nodes {
            basis.eval_into(x, &mut phi);
            let target = truth.s_star(x);
            for j in 0..p {
                rhs[j] += w * phi[j] * target;
                for k in 0..=j {
                    gram[(j, k)] += w * phi[j] * phi[k];
                }
            }
        }
        for j in 0..p {
            for k in 0..j {
                gram[(k, j)] = gram[(j, k)];
            }
        }
        let beta = solve_gram(gram, rhs, cell)?;
        coefficients[cell * p..(cell + 1) * p].copy_from_slice(beta.as_slice());
    }
    Ok(FittedFunction {
        model: model.clone(),
        coefficients,
    })
}

/// Cholesky solve of a per-cell weighted Gram system. The diagonal holds the
/// cell means of `f` (basis is Lebesgue-orthonormal), so a vanishing diagonal
/// or pivot means the density vanishes on the cell.
fn solve_gram(gram: DMatrix<f64>, rhs: DVector<f64>, cell: usize) -> Result<DVector<f64>> {
    let scale = gram.diagonal().max();
    if !(scale > GRAM_FLOOR) {
        return Err(Error::SingularGram { cell });
    }
    let chol = gram.cholesky().ok_or(Error::SingularGram { cell })?;
    let pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if pivot * pivot < 1e-14 * scale {
        return Err(Error::SingularGram { cell });
    }
    Ok(chol.solve(&rhs))
}

const GRAM_FLOOR: f64 = 1e-12;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::truth::{DesignDensity, NoiseLaw, NoiseLevel, RegressionFunction};

    fn linear_truth() -> RegressionSpec {
        RegressionSpec::simple(
            RegressionFunction::Polynomial {
                coefficients: vec![0.0, 1.0],
            },
            NoiseLevel::Constant { value: 1.0 },
        )
        .unwrap()
    }

    #[test]
    fn histogram_fit_with_empty_cell() {
        let model = PartitionModel::regular(2, 0).unwrap();
        let sample = Sample::from_pairs(&[(0.2, 1.0), (0.3, 3.0)]).unwrap();
        let fit = fit_least_squares(&model, &sample).unwrap();
        assert!((fit.evaluate(0.1).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(fit.evaluate(0.7).unwrap(), 0.0);
        assert!((fit.legendre_coefficients(0)[0] - 2.0).abs() < 1e-15);
        assert_eq!(fit.legendre_coefficients(1)[0], 0.0);
    }

    #[test]
    fn quadratic_recovered_exactly() {
        let model = PartitionModel::regular(1, 2).unwrap();
        let pts: Vec<(f64, f64)> = (0..50)
            .map(|i| (i as f64 / 49.0, (i as f64 / 49.0).powi(2)))
            .collect();
        let sample = Sample::from_pairs(&pts).unwrap();
        let fit = fit_least_squares(&model, &sample).unwrap();
        for i in 0..=100 {
            let x = i as f64 / 100.0;
            assert!((fit.evaluate(x).unwrap() - x * x).abs() < 1e-10);
        }
    }

    #[test]
    fn deficient_cells_use_min_norm() {
        let model = PartitionModel::regular(2, 1).unwrap();
        // one point in cell 0: fewer than r + 1 = 2; the fit interpolates it and the
        // coefficients are parallel to the basis values there
        let sample = Sample::from_pairs(&[(0.1, 5.0), (0.6, 1.0), (0.6, 3.0), (0.9, 2.0)]).unwrap();
        let fit = fit_least_squares(&model, &sample).unwrap();
        assert!((fit.evaluate(0.1).unwrap() - 5.0).abs() < 1e-12);
        let phi = model.local_basis(0).values(0.1);
        let c = fit.cell_coefficients(0);
        assert!((c[0] * phi[1] - c[1] * phi[0]).abs() < 1e-12);
        // all points at one x in cell 1: rank one, min-norm interpolates the mean there
        let sample = Sample::from_pairs(&[(0.1, 5.0), (0.2, 5.0), (0.6, 1.0), (0.6, 3.0)]).unwrap();
        let fit = fit_least_squares(&model, &sample).unwrap();
        assert!((fit.evaluate(0.6).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let model = PartitionModel::regular(4, 0).unwrap();
        let small = Sample::from_pairs(&[(0.1, 1.0), (0.2, 1.0)]).unwrap();
        assert!(matches!(
            fit_least_squares(&model, &small),
            Err(Error::DimensionExceedsSample { .. })
        ));
        let empty = Sample::new(vec![], vec![]).unwrap();
        assert!(matches!(
            fit_least_squares(&model, &empty),
            Err(Error::EmptySample)
        ));
    }

    #[test]
    fn projection_of_identity_on_two_cells() {
        let model = PartitionModel::regular(2, 0).unwrap();
        let proj = project_l2(&model, &linear_truth()).unwrap();
        assert!((proj.evaluate(0.1).unwrap() - 0.25).abs() < 1e-14);
        assert!((proj.evaluate(0.9).unwrap() - 0.75).abs() < 1e-14);
    }

    #[test]
    fn projection_of_member_is_itself() {
        let truth = RegressionSpec::new(
            RegressionFunction::Polynomial {
                coefficients: vec![0.3, -1.0, 2.0, 0.5],
            },
            NoiseLevel::Constant { value: 1.0 },
            DesignDensity::Linear { slope: 1.2 },
            NoiseLaw::Uniform,
        )
        .unwrap();
        let model = PartitionModel::new(vec![0.0, 0.3, 0.35, 1.0], 3).unwrap();
        let proj = project_l2(&model, &truth).unwrap();
        for i in 0..=200 {
            let x = i as f64 / 200.0;
            assert!((proj.evaluate(x).unwrap() - truth.s_star(x)).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_of_sine_on_one_cell_vanishes() {
        let truth = RegressionSpec::simple(
            RegressionFunction::Sine {
                amplitude: 1.0,
                frequency: 1.0,
                phase: 0.0,
            },
            NoiseLevel::Constant { value: 1.0 },
        )
        .unwrap();
        let proj = project_l2(&PartitionModel::regular(1, 0).unwrap(), &truth).unwrap();
        assert!(proj.evaluate(0.3).unwrap().abs() < 1e-12);
    }

    #[test]
    fn singular_gram_is_reported() {
        let zero = DMatrix::<f64>::zeros(2, 2);
        assert!(matches!(
            solve_gram(zero, DVector::zeros(2), 3),
            Err(Error::SingularGram { cell: 3 })
        ));
        let rank_one = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            solve_gram(rank_one, DVector::zeros(2), 0),
            Err(Error::SingularGram { cell: 0 })
        ));
        let ok = solve_gram(
            DMatrix::identity(2, 2) * 2.0,
            DVector::from_vec(vec![2.0, 4.0]),
            0,
        )
        .unwrap();
        assert!((ok[0] - 1.0).abs() < 1e-14 && (ok[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn evaluation_conventions() {
        let model = PartitionModel::regular(2, 0).unwrap();
        let f = FittedFunction::from_cell_values(model.clone(), &[2.0, 4.0]).unwrap();
        assert!((f.evaluate(0.5).unwrap() - 4.0).abs() < 1e-14);
        assert!((f.evaluate(1.0).unwrap() - 4.0).abs() < 1e-14);
        assert!(f.evaluate(1.5).is_err());
        let z = FittedFunction::zero(model);
        assert_eq!(z.evaluate(0.77).unwrap(), 0.0);

        // e_1 on a cell of width 1/4 evaluates to the normalized constant 1/√h = 2.
        let m = PartitionModel::regular(4, 2).unwrap();
        let mut coefs = vec![0.0; m.dimension()];
        coefs[3] = 1.0;
        let f = FittedFunction::new(m, coefs).unwrap();
        assert!((f.evaluate(0.375).unwrap() - 2.0).abs() < 1e-14);
    }
}
