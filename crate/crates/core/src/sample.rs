//! Observed samples `(X_i, Y_i)` and their CSV representation.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `n` observations with every `x` in `[0, 1]`; houses the empirical measure `P_n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Row {
    x: f64,
    y: f64,
}

impl Sample {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(Error::LengthMismatch {
                expected: xs.len(),
                found: ys.len(),
            });
        }
        if let Some(&x) = xs.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return Err(Error::OutOfDomain(x));
        }
        if ys.iter().any(|y| !y.is_finite()) {
            return Err(Error::InvalidArgument("responses must be finite".into()));
        }
        Ok(Self { xs, ys })
    }

    pub fn from_pairs(points: &[(f64, f64)]) -> Result<Self> {
        let (xs, ys) = points.iter().copied().unzip();
        Self::new(xs, ys)
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    /// Checks `|Y_i| ≤ bound` for every observation.
    pub fn check_bound(&self, bound: f64) -> Result<()> {
        match self.ys.iter().find(|y| y.abs() > bound) {
            Some(y) => Err(Error::InvalidArgument(format!(
                "|y| = {} exceeds the data bound {bound}",
                y.abs()
            ))),
            None => Ok(()),
        }
    }

    /// Reads a CSV with header `x,y`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for row in rdr.deserialize() {
            let row: Row = row?;
            xs.push(row.x);
            ys.push(row.y);
        }
        Self::new(xs, ys)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for (x, y) in self.points() {
            wtr.serialize(Row { x, y })?;
        }
        wtr.flush()?;
        Ok(())
    }
}
