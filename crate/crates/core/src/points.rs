use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A set of points in `[0,1]^p`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    dim: usize,
    coords: Vec<f64>,
}

impl PointSet {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDimension("points need at least one coordinate".into()));
        }
        if coords.len() % dim != 0 {
            return Err(Error::Shape(format!(
                "{} coordinates do not split into rows of length {dim}",
                coords.len()
            )));
        }
        for (i, row) in coords.chunks(dim).enumerate() {
            check_unit_cube(row).map_err(|e| match e {
                Error::Domain(msg) => Error::Domain(format!("point {i}: {msg}")),
                other => other,
            })?;
        }
        Ok(Self { dim, coords })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::Shape("no points given".into()))?;
        let mut coords = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(Error::Shape(format!("ragged rows: {} vs {dim}", r.len())));
            }
            coords.extend_from_slice(r);
        }
        Self::new(dim, coords)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    /// Rows reordered by `order` (row `i` of the result is row `order[i]`).
    pub fn permuted(&self, order: &[usize]) -> Self {
        let mut coords = Vec::with_capacity(self.coords.len());
        for &i in order {
            coords.extend_from_slice(self.row(i));
        }
        Self { dim: self.dim, coords }
    }
}

pub(crate) fn check_unit_cube(x: &[f64]) -> Result<()> {
    for (l, &v) in x.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Domain(format!("coordinate {l} is {v}")));
        }
    }
    Ok(())
}
