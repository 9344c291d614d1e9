//! Penalized selection, the penalty-multiplier path and dimension-jump
//! calibration of the penalty constant.
//!
//! With a penalty shape `pen_shape`, the selected model as a function of the
//! multiplier is `M̂(A) ∈ argmin_M { P_n K s_n(M) + A · pen_shape(M) }`. The
//! calibration finds the multiplier `Â_min` at which the selected dimension
//! collapses and returns `M̂(2 Â_min)`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelCollection;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    /// `D_M / n`.
    LinearDimension,
    /// Monte Carlo mean of `p2`.
    OracleMeanP2,
    UserSupplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyShape {
    values: Vec<f64>,
    kind: ShapeKind,
}

impl PenaltyShape {
    pub fn new(values: Vec<f64>, kind: ShapeKind) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidPenalty(format!(
                "penalty shape value {v} is not a finite non-negative number"
            )));
        }
        Ok(Self { values, kind })
    }

    pub fn linear_dimension(collection: &ModelCollection, n: usize) -> Self {
        let values = collection
            .dimensions()
            .iter()
            .map(|&d| d as f64 / n as f64)
            .collect();
        Self {
            values,
            kind: ShapeKind::LinearDimension,
        }
    }

    pub fn user_supplied(values: Vec<f64>) -> Result<Self> {
        Self::new(values, ShapeKind::UserSupplied)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self) -> ShapeKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `multiplier · shape`.
    pub fn scaled(&self, multiplier: f64) -> Vec<f64> {
        self.values.iter().map(|v| multiplier * v).collect()
    }
}

/// Index minimizing `crit`; ties go to the smaller dimension, then the
/// smaller index.
pub(crate) fn argmin_tie_break(dimensions: &[usize], crit: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for (i, c) in crit.enumerate() {
        let better = c < best_val || (c == best_val && dimensions[i] < dimensions[best]);
        if i == 0 || better {
            best = i;
            best_val = c;
        }
    }
    best
}

fn check_lengths(collection: &ModelCollection, a: usize, b: usize) -> Result<()> {
    if a != collection.len() {
        return Err(Error::LengthMismatch {
            expected: collection.len(),
            found: a,
        });
    }
    if b != collection.len() {
        return Err(Error::LengthMismatch {
            expected: collection.len(),
            found: b,
        });
    }
    Ok(())
}

/// `argmin_M { risks[M] + penalty[M] }` with deterministic tie-breaking.
pub fn select(collection: &ModelCollection, risks: &[f64], penalty: &[f64]) -> Result<usize> {
    check_lengths(collection, risks.len(), penalty.len())?;
    if let Some(p) = penalty.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::InvalidPenalty(format!(
            "penalty value {p} is negative or NaN"
        )));
    }
    let dims = collection.dimensions();
    Ok(argmin_tie_break(
        &dims,
        risks.iter().zip(penalty).map(|(r, p)| r + p),
    ))
}

/// Multiplier grid settings; the grid is log-spaced on
/// `[low, high] × median(risks) / median(shape)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSettings {
    pub points: usize,
    pub low: f64,
    pub high: f64,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            points: 200,
            low: 1e-3,
            high: 1e2,
        }
    }
}

pub const MIN_GRID_POINTS: usize = 16;

fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

impl GridSettings {
    pub fn validate(&self) -> Result<()> {
        if self.points < MIN_GRID_POINTS {
            return Err(Error::InvalidGrid(format!(
                "need at least {MIN_GRID_POINTS} points, got {}",
                self.points
            )));
        }
        if !(self.low > 0.0 && self.high > self.low && self.high.is_finite()) {
            return Err(Error::InvalidGrid("need 0 < low < high".into()));
        }
        Ok(())
    }

    pub fn build(&self, risks: &[f64], shape: &PenaltyShape) -> Result<Vec<f64>> {
        self.validate()?;
        let positive: Vec<f64> = shape
            .values()
            .iter()
            .copied()
            .filter(|v| *v > 0.0)
            .collect();
        if positive.is_empty() || risks.is_empty() {
            return Err(Error::InvalidGrid(
                "penalty shape has no positive value".into(),
            ));
        }
        let mut scale = median(risks) / median(&positive);
        if !(scale > 0.0 && scale.is_finite()) {
            scale = 1.0;
        }
        let (lo, hi) = ((self.low * scale).ln(), (self.high * scale).ln());
        let last = (self.points - 1) as f64;
        Ok((0..self.points)
            .map(|i| (lo + (hi - lo) * i as f64 / last).exp())
            .collect())
    }
}

/// `A ↦ M̂(A)` over a grid of multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPath {
    pub grid: Vec<f64>,
    pub selected_index: Vec<usize>,
    pub selected_dimension: Vec<usize>,
    pub criterion_min: Vec<f64>,
    /// Row `a` holds `risks + grid[a] · shape` for every model.
    pub criterion_values: Vec<Vec<f64>>,
    /// Sample size behind the risks; sets the default threshold.
    pub sample_size: usize,
}

impl SelectionPath {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// True when the selected dimension never increases along the grid.
    pub fn is_dimension_monotone(&self) -> bool {
        self.selected_dimension.windows(2).all(|w| w[1] <= w[0])
    }

    /// Writes `A,selected_model_id,selected_dimension,criterion_min`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record([
            "A",
            "selected_model_id",
            "selected_dimension",
            "criterion_min",
        ])?;
        for i in 0..self.len() {
            wtr.write_record([
                self.grid[i].to_string(),
                self.selected_index[i].to_string(),
                self.selected_dimension[i].to_string(),
                self.criterion_min[i].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Step 1 of the calibration: the selected model for every multiplier.
///
/// For a shape increasing with dimension the resulting dimension path is
/// non-increasing; [`SelectionPath::is_dimension_monotone`] reports it.
pub fn compute_path(
    collection: &ModelCollection,
    risks: &[f64],
    shape: &PenaltyShape,
    grid: &[f64],
) -> Result<SelectionPath> {
    check_lengths(collection, risks.len(), shape.len())?;
    if grid.len() < MIN_GRID_POINTS {
        return Err(Error::InvalidGrid(format!(
            "need at least {MIN_GRID_POINTS} points, got {}",
            grid.len()
        )));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || !(grid[0] >= 0.0) {
        return Err(Error::InvalidGrid(
            "grid must be non-negative and strictly increasing".into(),
        ));
    }
    let dims = collection.dimensions();
    let mut path = SelectionPath {
        grid: grid.to_vec(),
        selected_index: Vec::with_capacity(grid.len()),
        selected_dimension: Vec::with_capacity(grid.len()),
        criterion_min: Vec::with_capacity(grid.len()),
        criterion_values: Vec::with_capacity(grid.len()),
        sample_size: collection.sample_size(),
    };
    for &a in grid {
        let row: Vec<f64> = risks
            .iter()
            .zip(shape.values())
            .map(|(r, s)| r + a * s)
            .collect();
        let idx = argmin_tie_break(&dims, row.iter().copied());
        path.selected_index.push(idx);
        path.selected_dimension.push(dims[idx]);
        path.criterion_min.push(row[idx]);
        path.criterion_values.push(row);
    }
    Ok(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpMethod {
    /// Largest drop of the selected dimension between consecutive grid points.
    MaxJump,
    /// First grid point whose selected dimension is at most a threshold.
    Threshold,
}

/// `n / (2 (ln n)²)`.
pub fn default_dimension_threshold(n: usize) -> usize {
    let nf = n as f64;
    (nf / (2.0 * nf.ln().powi(2))).floor().max(1.0) as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub method: JumpMethod,
    /// Grid point right after the jump.
    pub a_min_hat: f64,
    /// Position of `a_min_hat` in the grid.
    pub jump_index: usize,
    pub jump_from_dim: usize,
    pub jump_to_dim: usize,
    /// Model selected at exactly `2 · a_min_hat`; filled by [`calibrate`].
    pub final_model_index: Option<usize>,
    pub final_dimension: Option<usize>,
}

impl CalibrationResult {
    pub fn jump_magnitude(&self) -> usize {
        self.jump_from_dim - self.jump_to_dim
    }

    pub fn jump_ratio(&self) -> f64 {
        self.jump_from_dim as f64 / self.jump_to_dim as f64
    }
}

/// Step 2: locates `Â_min` on the path.
pub fn detect_jump(
    path: &SelectionPath,
    method: JumpMethod,
    dim_threshold: Option<usize>,
) -> Result<CalibrationResult> {
    if path.is_empty() {
        return Err(Error::InvalidArgument("empty selection path".into()));
    }
    let dims = &path.selected_dimension;
    if dims.iter().all(|&d| d == dims[0]) {
        return Err(Error::NoJump);
    }
    let j = match method {
        JumpMethod::MaxJump => {
            let mut best: Option<(usize, usize)> = None;
            for i in 1..dims.len() {
                if dims[i] < dims[i - 1] {
                    let drop = dims[i - 1] - dims[i];
                    if best.is_none_or(|(_, d)| drop > d) {
                        best = Some((i, drop));
                    }
                }
            }
            best.ok_or(Error::NoJump)?.0
        }
        JumpMethod::Threshold => {
            let threshold =
                dim_threshold.unwrap_or_else(|| default_dimension_threshold(path.sample_size));
            match dims.iter().position(|&d| d <= threshold) {
                Some(0) | None => return Err(Error::NoJump),
                Some(i) => i,
            }
        }
    };
    Ok(CalibrationResult {
        method,
        a_min_hat: path.grid[j],
        jump_index: j,
        jump_from_dim: dims[j - 1],
        jump_to_dim: dims[j],
        final_model_index: None,
        final_dimension: None,
    })
}

/// Steps 1–3: path, jump, then a fresh minimization at exactly `2 Â_min`.
pub fn calibrate(
    collection: &ModelCollection,
    risks: &[f64],
    shape: &PenaltyShape,
    grid: &[f64],
    method: JumpMethod,
    dim_threshold: Option<usize>,
) -> Result<(SelectionPath, CalibrationResult)> {
    let path = compute_path(collection, risks, shape, grid)?;
    let mut result = detect_jump(&path, method, dim_threshold)?;
    let idx = select(collection, risks, &shape.scaled(2.0 * result.a_min_hat))?;
    result.final_model_index = Some(idx);
    result.final_dimension = Some(collection.dimensions()[idx]);
    Ok((path, result))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_regular_collection, PartitionModel};

    fn collection(dims_cells: &[usize]) -> ModelCollection {
        let models = dims_cells
            .iter()
            .map(|&c| PartitionModel::regular(c, 0).unwrap())
            .collect();
        ModelCollection::new(models, 1000).unwrap()
    }

    fn path_from_dims(dims: &[usize]) -> SelectionPath {
        SelectionPath {
            grid: (0..dims.len()).map(|i| (i + 1) as f64).collect(),
            selected_index: vec![0; dims.len()],
            selected_dimension: dims.to_vec(),
            criterion_min: vec![0.0; dims.len()],
            criterion_values: vec![],
            sample_size: 1000,
        }
    }

    #[test]
    fn select_examples() {
        let c = collection(&[1, 2]);
        assert_eq!(select(&c, &[1.0, 0.5], &[0.0, 0.0]).unwrap(), 1);
        assert_eq!(select(&c, &[1.0, 0.5], &[0.0, 0.5]).unwrap(), 0);
        assert!(matches!(
            select(&c, &[1.0], &[0.0, 0.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(select(&c, &[1.0, 0.5], &[0.0, -0.1]).is_err());
    }

    #[test]
    fn select_matches_brute_force() {
        let c = collection(&[1, 5, 50]);
        let risks = [0.9, 0.5, 0.1];
        let pen: Vec<f64> = [1.0, 5.0, 50.0].iter().map(|d| 0.01 * d).collect();
        // 0.91, 0.55, 0.6
        assert_eq!(select(&c, &risks, &pen).unwrap(), 1);
    }

    #[test]
    fn path_limits() {
        let c = build_regular_collection(1024, &[0], 8).unwrap();
        let risks: Vec<f64> = c
            .dimensions()
            .iter()
            .map(|&d| 1.0 / (d as f64).sqrt())
            .collect();
        let shape = PenaltyShape::linear_dimension(&c, 1024);
        let mut grid = vec![0.0];
        grid.extend(GridSettings::default().build(&risks, &shape).unwrap());
        let max_risk = risks.iter().copied().fold(0.0, f64::max);
        let min_shape = shape
            .values()
            .iter()
            .copied()
            .filter(|v| *v > 0.0)
            .fold(f64::INFINITY, f64::min);
        grid.push(grid.last().unwrap().max(10.0 * max_risk / min_shape) * 1.5);
        let path = compute_path(&c, &risks, &shape, &grid).unwrap();
        assert_eq!(path.selected_dimension[0], 256);
        assert_eq!(*path.selected_dimension.last().unwrap(), 1);
        assert!(path.is_dimension_monotone());
    }

    #[test]
    fn path_validation() {
        let c = collection(&[1, 2]);
        let shape = PenaltyShape::user_supplied(vec![0.0, 1.0]).unwrap();
        assert!(compute_path(&c, &[1.0, 0.5], &shape, &[1.0, 2.0]).is_err());
        let bad: Vec<f64> = (0..20).map(|i| 20.0 - i as f64).collect();
        assert!(compute_path(&c, &[1.0, 0.5], &shape, &bad).is_err());
        assert!(PenaltyShape::user_supplied(vec![-1.0]).is_err());
        assert!(GridSettings {
            points: 8,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn jump_examples() {
        let r = detect_jump(
            &path_from_dims(&[256, 256, 256, 8, 8, 4]),
            JumpMethod::MaxJump,
            None,
        )
        .unwrap();
        assert_eq!((r.jump_index, r.jump_from_dim, r.jump_to_dim), (3, 256, 8));
        assert_eq!(r.a_min_hat, 4.0);
        let r = detect_jump(
            &path_from_dims(&[256, 128, 64, 32, 16]),
            JumpMethod::MaxJump,
            None,
        )
        .unwrap();
        assert_eq!((r.jump_from_dim, r.jump_to_dim), (256, 128));
        assert!(matches!(
            detect_jump(&path_from_dims(&[8, 8, 8]), JumpMethod::MaxJump, None),
            Err(Error::NoJump)
        ));
        let r = detect_jump(
            &path_from_dims(&[256, 128, 64, 32, 16]),
            JumpMethod::Threshold,
            Some(40),
        )
        .unwrap();
        assert_eq!((r.jump_from_dim, r.jump_to_dim, r.jump_index), (64, 32, 3));
        assert!(detect_jump(
            &path_from_dims(&[256, 128]),
            JumpMethod::Threshold,
            Some(300)
        )
        .is_err());
        assert_eq!(default_dimension_threshold(1000), 10);
    }

    #[test]
    fn calibration_reminimizes_at_twice_the_jump() {
        // Three models with a clean jump: large model wins for A < 1, small after.
        let c = collection(&[1, 8, 64]);
        let risks = [1.0, 0.3, 0.3 - 0.056];
        // crit(64) − crit(8) = −0.056 + A (0.064 − 0.008) → crossing at A = 1
        let shape = PenaltyShape::user_supplied(vec![0.001, 0.008, 0.064]).unwrap();
        let grid: Vec<f64> = (0..40).map(|i| 0.1 * 1.1f64.powi(i)).collect();
        let (path, res) = calibrate(&c, &risks, &shape, &grid, JumpMethod::MaxJump, None).unwrap();
        assert_eq!(res.jump_from_dim, 64);
        assert!(res.a_min_hat >= 1.0 && res.a_min_hat < 1.1);
        let brute = (0..3)
            .min_by(|&i, &j| {
                let ci = risks[i] + 2.0 * res.a_min_hat * shape.values()[i];
                let cj = risks[j] + 2.0 * res.a_min_hat * shape.values()[j];
                ci.total_cmp(&cj)
            })
            .unwrap();
        assert_eq!(res.final_model_index, Some(brute));
        assert!(path.is_dimension_monotone());
        assert!(!grid.contains(&(2.0 * res.a_min_hat)));
    }

    #[test]
    fn path_csv_header() {
        let mut buf = Vec::new();
        path_from_dims(&[4, 2]).write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("A,selected_model_id,selected_dimension,criterion_min\n1,0,4,0\n"));
    }
}
