// SPDX-License-Identifier: Apache-2.0

//! Regular rectangular grids over parameter space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl GridAxis {
    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.count - 1) as f64
    }

    pub fn coord(&self, j: usize) -> f64 {
        self.lower + (self.upper - self.lower) * j as f64 / (self.count - 1) as f64
    }
}

/// Evaluation points on a rectangular lattice, row-major with the last axis
/// varying fastest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct ParameterGrid {
    axes: Vec<GridAxis>,
}

#[derive(Serialize, Deserialize)]
struct GridSpec {
    axes: Vec<GridAxis>,
}

impl TryFrom<GridSpec> for ParameterGrid {
    type Error = Error;

    fn try_from(spec: GridSpec) -> Result<Self> {
        ParameterGrid::new(spec.axes)
    }
}

impl From<ParameterGrid> for GridSpec {
    fn from(grid: ParameterGrid) -> Self {
        GridSpec { axes: grid.axes }
    }
}

impl ParameterGrid {
    pub fn new(axes: Vec<GridAxis>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::invalid("grid needs at least one axis"));
        }
        for (i, a) in axes.iter().enumerate() {
            if a.count < 2 {
                return Err(Error::invalid(format!("grid axis {i} needs at least 2 points")));
            }
            if !(a.lower.is_finite() && a.upper.is_finite() && a.upper > a.lower) {
                return Err(Error::invalid(format!(
                    "grid axis {i} bounds [{}, {}] are not strictly increasing",
                    a.lower, a.upper
                )));
            }
        }
        Ok(Self { axes })
    }

    /// The same `[lower, upper]` range with `count` points on each of `dim` axes.
    pub fn cube(dim: usize, lower: f64, upper: f64, count: usize) -> Result<Self> {
        Self::new(vec![GridAxis { lower, upper, count }; dim])
    }

    /// `[-10, 10]` with 2001 points.
    pub fn default_1d() -> Self {
        Self::cube(1, -10.0, 10.0, 2001).expect("static grid")
    }

    /// `[-10, 10]²` with 201 × 201 points.
    pub fn default_2d() -> Self {
        Self::cube(2, -10.0, 10.0, 201).expect("static grid")
    }

    pub fn axes(&self) -> &[GridAxis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.count).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_measure(&self) -> f64 {
        self.axes.iter().map(GridAxis::spacing).product()
    }

    /// Writes the coordinates of point `index` into `out`.
    pub fn point_into(&self, index: usize, out: &mut [f64]) {
        let mut rem = index;
        for (a, o) in self.axes.iter().zip(out.iter_mut()).rev() {
            *o = a.coord(rem % a.count);
            rem /= a.count;
        }
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.point_into(index, &mut out);
        out
    }

    /// All points, row-major.
    pub fn points(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; self.len() * d];
        for (i, chunk) in out.chunks_exact_mut(d).enumerate() {
            self.point_into(i, chunk);
        }
        out
    }

    /// Index of the grid point nearest to `theta`, or `None` when `theta` is
    /// more than half a cell outside the grid.
    pub fn nearest_index(&self, theta: &[f64]) -> Option<usize> {
        if theta.len() != self.dim() {
            return None;
        }
        let mut index = 0;
        for (a, t) in self.axes.iter().zip(theta) {
            let pos = (t - a.lower) / a.spacing();
            if !(pos > -0.5 && pos < a.count as f64 - 0.5) {
                return None;
            }
            let j = (pos.round() as usize).min(a.count - 1);
            index = index * a.count + j;
        }
        Some(index)
    }

    /// Index of the grid point whose coordinates equal `theta` to within a
    /// millionth of a cell.
    pub fn exact_index(&self, theta: &[f64]) -> Option<usize> {
        let index = self.nearest_index(theta)?;
        let p = self.point(index);
        let close = p
            .iter()
            .zip(theta)
            .zip(&self.axes)
            .all(|((a, b), ax)| (a - b).abs() <= 1e-6 * ax.spacing());
        close.then_some(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grids() {
        let g = ParameterGrid::default_1d();
        assert_eq!(g.len(), 2001);
        assert!((g.cell_measure() - 0.01).abs() < 1e-15);
        assert_eq!(g.point(1000), vec![0.0]);
        assert_eq!(g.point(0), vec![-10.0]);
        assert_eq!(g.point(2000), vec![10.0]);
        let g2 = ParameterGrid::default_2d();
        assert_eq!(g2.len(), 201 * 201);
        assert_eq!(g2.point(1), vec![-10.0, -9.9]);
        assert_eq!(g2.point(201), vec![-9.9, -10.0]);
    }

    #[test]
    fn rejects_degenerate_axes() {
        assert!(ParameterGrid::cube(1, 0.0, 1.0, 1).is_err());
        assert!(ParameterGrid::cube(1, 1.0, 1.0, 5).is_err());
        assert!(ParameterGrid::new(vec![]).is_err());
        let bad: std::result::Result<ParameterGrid, _> =
            serde_json::from_str(r#"{"axes":[{"lower":2.0,"upper":1.0,"count":3}]}"#);
        assert!(bad.is_err());
    }

    #[test]
    fn nearest_and_exact_lookup() {
        let g = ParameterGrid::cube(2, -1.0, 1.0, 5).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.nearest_index(&g.point(i)), Some(i));
            assert_eq!(g.exact_index(&g.point(i)), Some(i));
        }
        assert_eq!(g.nearest_index(&[0.1, -0.9]), Some(2 * 5));
        assert_eq!(g.exact_index(&[0.1, -0.9]), None);
        assert_eq!(g.nearest_index(&[1.4, 0.0]), None);
    }
}
