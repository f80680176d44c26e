//! Uniform cell-centered grids. All quadrature in the crate is the midpoint
//! rule on these cells, so "integral" always means `sum * cell volume`.

use ndarray::Array1;

use crate::{Error, Result};

/// Cell-centered axis on `[-l, l]` with `n` cells of width `2l/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    l: f64,
    n: usize,
}

impl Axis {
    pub fn new(l: f64, n: usize) -> Result<Self> {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::invalid("axis half-width", format!("{l} is not positive and finite")));
        }
        if n < 4 {
            return Err(Error::invalid("axis cell count", format!("{n} < 4")));
        }
        Ok(Axis { l, n })
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Cell width.
    pub fn h(&self) -> f64 {
        2.0 * self.l / self.n as f64
    }

    /// Center of cell `i`.
    pub fn center(&self, i: usize) -> f64 {
        -self.l + (i as f64 + 0.5) * self.h()
    }

    /// Left edge of cell `i`; `edge(n)` is the right edge of the domain.
    pub fn edge(&self, i: usize) -> f64 {
        -self.l + i as f64 * self.h()
    }

    pub fn centers(&self) -> Array1<f64> {
        Array1::from_iter((0..self.n).map(|i| self.center(i)))
    }

    /// Index of the cell containing `x`, if inside the domain.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        if x < -self.l || x > self.l {
            return None;
        }
        Some((((x + self.l) / self.h()) as usize).min(self.n - 1))
    }
}

/// Phase-space grid: `x`-axis times `v`-axis. Densities are stored as
/// `(nx, nv)` arrays, row `i` holding all velocities at `x_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseGrid {
    pub x: Axis,
    pub v: Axis,
}

impl PhaseGrid {
    pub fn new(lx: f64, nx: usize, lv: f64, nv: usize) -> Result<Self> {
        Ok(PhaseGrid { x: Axis::new(lx, nx)?, v: Axis::new(lv, nv)? })
    }

    /// Phase-space cell volume.
    pub fn cell(&self) -> f64 {
        self.x.h() * self.v.h()
    }
}
