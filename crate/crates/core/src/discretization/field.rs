use rayon::prelude::*;

use super::grid::Grid;
use crate::error::{Error, Result};

/// Leaves of the summation tree.
const PAIRWISE_BASE: usize = 256;
/// Independent subtrees handed to the thread pool. Fixed, so results do not
/// depend on the number of threads.
const PAIRWISE_CHUNK: usize = 1 << 16;

fn pairwise_rec<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
    let len = hi - lo;
    if len <= PAIRWISE_BASE {
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        acc
    } else {
        let mid = lo + len / 2;
        pairwise_rec(lo, mid, f) + pairwise_rec(mid, hi, f)
    }
}

/// Deterministic pairwise sum of `f(0) + ... + f(n - 1)`.
pub fn pairwise_sum_by<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    if n <= PAIRWISE_CHUNK {
        return pairwise_rec(0, n, &f);
    }
    let chunks = n.div_ceil(PAIRWISE_CHUNK);
    let partial: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|c| pairwise_rec(c * PAIRWISE_CHUNK, ((c + 1) * PAIRWISE_CHUNK).min(n), &f))
        .collect();
    pairwise_rec(0, partial.len(), &|i| partial[i])
}

pub fn pairwise_sum(values: &[f64]) -> f64 {
    pairwise_sum_by(values.len(), |i| values[i])
}

/// One value per grid point, in the grid's storage order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &Grid) -> Self {
        ScalarField { values: vec![0.0; grid.len()] }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        ScalarField { values: vec![c; grid.len()] }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!("{} values for a grid of {} points", values.len(), grid.len())));
        }
        Ok(ScalarField { values })
    }

    /// Samples `f(coords)` at every grid point.
    pub fn from_fn<F>(grid: &Grid, f: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let dim = grid.dim();
        let mut values = vec![0.0; grid.len()];
        values.par_chunks_mut(grid.block_len()).enumerate().for_each(|(blk, chunk)| {
            let mut p = vec![0.0; dim];
            for (v, out) in chunk.iter_mut().enumerate() {
                grid.point(blk * grid.block_len() + v, &mut p);
                *out = f(&p);
            }
        });
        ScalarField { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map<F: Fn(f64) -> f64 + Sync>(&self, f: F) -> Self {
        ScalarField { values: self.values.par_iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map<F: Fn(f64, f64) -> f64 + Sync>(&self, other: &ScalarField, f: F) -> Self {
        debug_assert_eq!(self.len(), other.len());
        ScalarField { values: self.values.par_iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &ScalarField) {
        self.values.par_iter_mut().zip(&other.values).for_each(|(a, &b)| *a += c * b);
    }

    pub fn min(&self) -> f64 {
        self.values.par_iter().cloned().reduce(|| f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.par_iter().cloned().reduce(|| f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.par_iter().map(|v| v.abs()).reduce(|| 0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.values.par_iter().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, grid: &Grid) -> Result<()> {
        if self.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!("field of {} values on a grid of {} points", self.len(), grid.len())));
        }
        Ok(())
    }

    pub fn check_positive(&self) -> Result<()> {
        let min = self.min();
        if !(min > 0.0) {
            return Err(Error::NotPositive { min });
        }
        Ok(())
    }
}

/// Rank-`r` horizontal tensor field; component `(a_1, .., a_r)` is stored at
/// flat position `sum_i a_i m^(r-1-i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorField {
    pub rank: usize,
    pub m: usize,
    pub components: Vec<ScalarField>,
}

impl TensorField {
    pub fn new(rank: usize, m: usize, components: Vec<ScalarField>) -> Result<Self> {
        if rank == 0 || components.len() != m.pow(rank as u32) {
            return Err(Error::ShapeMismatch(format!(
                "rank {rank} tensor over m = {m} needs {} components, got {}",
                m.pow(rank as u32),
                components.len()
            )));
        }
        Ok(TensorField { rank, m, components })
    }

    pub fn zeros(grid: &Grid, rank: usize) -> Self {
        let m = grid.m();
        TensorField { rank, m, components: (0..m.pow(rank as u32)).map(|_| ScalarField::zeros(grid)).collect() }
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &a| acc * self.m + a)
    }

    pub fn get(&self, idx: &[usize]) -> &ScalarField {
        &self.components[self.flat(idx)]
    }

    pub fn get_mut(&mut self, idx: &[usize]) -> &mut ScalarField {
        let i = self.flat(idx);
        &mut self.components[i]
    }

    pub fn same_shape(&self, other: &TensorField) -> bool {
        self.rank == other.rank
            && self.m == other.m
            && self.components.iter().zip(&other.components).all(|(a, b)| a.len() == b.len())
    }

    pub fn max_abs(&self) -> f64 {
        self.components.iter().map(|c| c.max_abs()).fold(0.0, f64::max)
    }
}

/// `vol_density * sum_points f / N`, the equal-weight rule over the unit domain.
pub fn integrate(grid: &Grid, f: &ScalarField) -> Result<f64> {
    f.check_shape(grid)?;
    integrate_by(grid, |i| f.values[i])
}

/// [`integrate`] of a pointwise expression, without materializing it.
pub fn integrate_by<F>(grid: &Grid, f: F) -> Result<f64>
where
    F: Fn(usize) -> f64 + Sync,
{
    let n = grid.len();
    let s = pairwise_sum_by(n, f);
    if !s.is_finite() {
        return Err(Error::NonFiniteValue("integrate"));
    }
    Ok(grid.vol_density() * s / n as f64)
}

/// `integral of a * b`.
pub fn field_inner(grid: &Grid, a: &ScalarField, b: &ScalarField) -> Result<f64> {
    a.check_shape(grid)?;
    b.check_shape(grid)?;
    integrate_by(grid, |i| a.values[i] * b.values[i])
}

/// `integral of sum_I a_I b_I` over all frame indices.
pub fn tensor_inner(grid: &Grid, a: &TensorField, b: &TensorField) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch(format!("rank {} vs rank {} tensor", a.rank, b.rank)));
    }
    for c in &a.components {
        c.check_shape(grid)?;
    }
    let comps = a.components.len();
    integrate_by(grid, |i| (0..comps).map(|c| a.components[c].values[i] * b.components[c].values[i]).sum())
}
