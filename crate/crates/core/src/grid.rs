//! Uniform tensor-product grids and functions sampled on them.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GridError {
    #[error("axis needs lo < hi and both finite, got [{lo}, {hi}]")]
    Bounds { lo: f64, hi: f64 },
    #[error("axis needs at least 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("grid needs at least one axis")]
    NoAxes,
    #[error("{got} values for a grid of {need} nodes")]
    Length { got: usize, need: usize },
    #[error("grids differ")]
    Mismatch,
}

/// `n` equispaced nodes from `lo` to `hi` inclusive.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Axis {
    lo: f64,
    hi: f64,
    n: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self, GridError> {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(GridError::Bounds { lo, hi });
        }
        if n < 3 {
            return Err(GridError::TooFewNodes(n));
        }
        Ok(Axis { lo, hi, n })
    }

    /// Axis with spacing `h` covering at least `[lo, hi]`, symmetric overshoot.
    pub fn with_spacing(lo: f64, hi: f64, h: f64) -> Result<Self, GridError> {
        if !(h > 0.0) || !(hi > lo) {
            return Err(GridError::Bounds { lo, hi });
        }
        let cells = libm::ceil((hi - lo) / h - 1e-9) as usize;
        let extra = cells as f64 * h - (hi - lo);
        Axis::new(lo - extra / 2.0, lo - extra / 2.0 + cells as f64 * h, cells + 1)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.h()
        }
    }

    /// Axis with every other node (`n` must be odd).
    pub fn coarsen(&self) -> Option<Axis> {
        if self.n % 2 == 1 && self.n >= 5 {
            Some(Axis {
                n: (self.n + 1) / 2,
                ..*self
            })
        } else {
            None
        }
    }

    /// Axis with midpoints inserted.
    pub fn refine(&self) -> Axis {
        Axis {
            n: 2 * self.n - 1,
            ..*self
        }
    }
}

/// Tensor product of axes; flat indices are row-major with the last axis fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    pub fn new(axes: Vec<Axis>) -> Result<Self, GridError> {
        if axes.is_empty() {
            return Err(GridError::NoAxes);
        }
        Ok(Grid { axes })
    }

    pub fn uniform(lo: f64, hi: f64, n: usize, dim: usize) -> Result<Self, GridError> {
        Grid::new(vec![Axis::new(lo, hi, n)?; dim])
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(Axis::len).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.axes.iter().map(Axis::h).collect()
    }

    /// Product of the spacings.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::h).product()
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        let mut f = 0;
        for (a, &i) in self.axes.iter().zip(idx) {
            f = f * a.len() + i;
        }
        f
    }

    pub fn unflat(&self, mut flat: usize, idx: &mut [usize]) {
        for d in (0..self.dim()).rev() {
            let n = self.axes[d].len();
            idx[d] = flat % n;
            flat /= n;
        }
    }

    pub fn point(&self, flat: usize, out: &mut [f64]) {
        let mut idx = vec![0; self.dim()];
        self.unflat(flat, &mut idx);
        for d in 0..self.dim() {
            out[d] = self.axes[d].node(idx[d]);
        }
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|k| {
                let mut p = vec![0.0; self.dim()];
                self.point(k, &mut p);
                p
            })
            .collect()
    }

    /// Composite trapezoid weight of a node, including the cell volume.
    pub fn trapezoid_weight(&self, idx: &[usize]) -> f64 {
        let mut w = 1.0;
        for (a, &i) in self.axes.iter().zip(idx) {
            let edge = i == 0 || i + 1 == a.len();
            w *= if edge { 0.5 * a.h() } else { a.h() };
        }
        w
    }

    /// True when the node lies on the outer boundary.
    pub fn on_boundary(&self, idx: &[usize]) -> bool {
        self.axes
            .iter()
            .zip(idx)
            .any(|(a, &i)| i == 0 || i + 1 == a.len())
    }

    pub fn coarsen(&self) -> Option<Grid> {
        let axes = self.axes.iter().map(Axis::coarsen).collect::<Option<Vec<_>>>()?;
        Some(Grid { axes })
    }

    pub fn refine(&self) -> Grid {
        Grid {
            axes: self.axes.iter().map(Axis::refine).collect(),
        }
    }
}

/// Values of a function at the nodes of a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFn {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFn {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Length {
                got: values.len(),
                need: grid.len(),
            });
        }
        Ok(GridFn { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.len();
        GridFn {
            grid,
            values: vec![0.0; n],
        }
    }

    pub fn sample<F: FnMut(&[f64]) -> f64>(grid: Grid, mut f: F) -> Self {
        let mut p = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|k| {
                grid.point(k, &mut p);
                f(&p)
            })
            .collect();
        GridFn { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `self - other` on the same grid.
    pub fn sub(&self, other: &GridFn) -> Result<GridFn, GridError> {
        if self.grid != other.grid {
            return Err(GridError::Mismatch);
        }
        Ok(GridFn {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    /// Trapezoid approximation of the integral.
    pub fn integral(&self) -> f64 {
        let mut idx = vec![0; self.grid.dim()];
        let mut s = 0.0;
        for (k, v) in self.values.iter().enumerate() {
            self.grid.unflat(k, &mut idx);
            s += self.grid.trapezoid_weight(&idx) * v;
        }
        s
    }

    /// Restriction to every other node.
    pub fn coarsen(&self) -> Option<GridFn> {
        let coarse = self.grid.coarsen()?;
        let mut idx = vec![0; coarse.dim()];
        let values = (0..coarse.len())
            .map(|k| {
                coarse.unflat(k, &mut idx);
                for i in idx.iter_mut() {
                    *i *= 2;
                }
                self.values[self.grid.flat(&idx)]
            })
            .collect();
        Some(GridFn {
            grid: coarse,
            values,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_nodes_hit_both_ends() {
        let a = Axis::new(-1.0, 1.0, 5).unwrap();
        assert_eq!(a.h(), 0.5);
        assert_eq!(a.node(0), -1.0);
        assert_eq!(a.node(4), 1.0);
        assert!(Axis::new(0.0, 1.0, 2).is_err());
        assert!(Axis::new(1.0, 0.0, 5).is_err());
    }

    #[test]
    fn with_spacing_covers_interval() {
        let a = Axis::with_spacing(-3.0, 2.9, 0.25).unwrap();
        assert!((a.h() - 0.25).abs() < 1e-12);
        assert!(a.lo() <= -3.0 && a.hi() >= 2.9);
    }

    #[test]
    fn flat_indexing_round_trips() {
        let g = Grid::new(vec![Axis::new(0.0, 1.0, 3).unwrap(), Axis::new(0.0, 2.0, 5).unwrap()])
            .unwrap();
        let mut idx = [0, 0];
        for k in 0..g.len() {
            g.unflat(k, &mut idx);
            assert_eq!(g.flat(&idx), k);
        }
        let mut p = [0.0; 2];
        g.point(g.flat(&[1, 3]), &mut p);
        assert_eq!(p, [0.5, 1.5]);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let g = Grid::uniform(0.0, 2.0, 11, 2).unwrap();
        let f = GridFn::sample(g, |p| 1.0 + p[0] + 2.0 * p[1]);
        assert!((f.integral() - (4.0 + 4.0 + 8.0)).abs() < 1e-12);
    }

    #[test]
    fn coarsen_then_refine_grid() {
        let g = Grid::uniform(0.0, 1.0, 9, 1).unwrap();
        let c = g.coarsen().unwrap();
        assert_eq!(c.len(), 5);
        assert_eq!(c.refine(), g);
        let f = GridFn::sample(g, |p| p[0]);
        assert_eq!(f.coarsen().unwrap().values(), &[0.0, 0.25, 0.5, 0.75, 1.0]);
    }
}
