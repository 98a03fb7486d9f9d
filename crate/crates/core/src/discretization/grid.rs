use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ComplexStructures;

/// Central-difference stencil order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StencilOrder {
    Two,
    Four,
}

impl StencilOrder {
    pub fn from_usize(p: usize) -> Result<Self> {
        match p {
            2 => Ok(StencilOrder::Two),
            4 => Ok(StencilOrder::Four),
            other => Err(Error::ConfigInvalid(format!("stencil order must be 2 or 4, got {other}"))),
        }
    }

    pub fn as_usize(self) -> usize {
        match self {
            StencilOrder::Two => 2,
            StencilOrder::Four => 4,
        }
    }

    /// Antisymmetric weights `w_j`: `f'(x) ~ sum_j w_j (f(x + jh) - f(x - jh)) / h`.
    pub fn weights(self) -> &'static [f64] {
        match self {
            StencilOrder::Two => &[0.5],
            StencilOrder::Four => &[2.0 / 3.0, -1.0 / 12.0],
        }
    }

    pub fn reach(self) -> usize {
        self.weights().len()
    }

    /// `sum_j 2|w_j|`, the row sum of `|D|` times `h`.
    pub fn abs_row_sum(self) -> f64 {
        self.weights().iter().map(|w| 2.0 * w.abs()).sum()
    }
}

/// Upper bound on the number of grid points (2 GiB per scalar field).
pub const MAX_GRID_POINTS: usize = 1 << 28;

/// Uniform grid over the fundamental domain `[-1/2, 1/2)^(m+k)`.
///
/// Axes are ordered `[x_1..x_m, t_1..t_k]` and stored row-major, so every
/// horizontal multi-index owns one contiguous block of `block_len` vertical
/// points. Crossing a horizontal face shifts the vertical indices by an
/// integer amount (the lattice shear); vertical faces are plain periodic.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    sizes: Vec<usize>,
    spacings: Vec<f64>,
    m: usize,
    k: usize,
    order: StencilOrder,
    block_len: usize,
    blocks: usize,
    h_strides: Vec<usize>,
    v_strides: Vec<usize>,
    /// `structure[s][a * m + c] = (I_s)_{ac}`
    structure: Vec<Vec<i64>>,
    /// `alpha[(blk * k + s) * m + a]`: vertical coefficient of `e_a` at block `blk`.
    alpha: Vec<f64>,
    /// `shear[(blk * m + a) * k + s]`: vertical index shift when crossing the
    /// upper `x_a` face from block `blk`.
    shear: Vec<i64>,
    vol_density: f64,
}

impl Grid {
    pub fn new(sizes: &[usize], cs: &ComplexStructures, order: StencilOrder) -> Result<Self> {
        let m = cs.dim();
        let k = cs.count();
        if sizes.len() != m + k {
            return Err(Error::GridIncompatible(format!("expected {} axis sizes, got {}", m + k, sizes.len())));
        }
        if m + k > 16 {
            return Err(Error::GridIncompatible(format!("{} axes exceed the supported maximum of 16", m + k)));
        }
        let total = sizes.iter().try_fold(1usize, |acc, &s| acc.checked_mul(s));
        if !matches!(total, Some(t) if t <= MAX_GRID_POINTS) {
            return Err(Error::GridIncompatible(format!("more than {MAX_GRID_POINTS} grid points")));
        }
        if let Some(&bad) = sizes.iter().find(|&&s| s < 2 * order.reach() + 1) {
            return Err(Error::GridIncompatible(format!("axis size {bad} is too small for the stencil")));
        }
        let structure: Vec<Vec<i64>> = cs
            .matrices
            .iter()
            .map(|mat| {
                let mut v = Vec::with_capacity(m * m);
                for a in 0..m {
                    for c in 0..m {
                        let x = mat[(a, c)];
                        if x.fract() != 0.0 {
                            return Err(Error::GridIncompatible("complex structure is not integral".into()));
                        }
                        v.push(x as i64);
                    }
                }
                Ok(v)
            })
            .collect::<Result<_>>()?;

        for s in 0..k {
            let nt = sizes[m + s];
            for a in 0..m {
                for c in 0..m {
                    if structure[s][a * m + c] == 0 {
                        continue;
                    }
                    let nc = sizes[c];
                    if nt % 2 != 0 || nt % nc != 0 {
                        return Err(Error::GridIncompatible(format!(
                            "vertical axis t{} has {nt} points; crossing the x{} face shears it by x{}, \
                             so its count must be even and divisible by {nc}",
                            s + 1,
                            a + 1,
                            c + 1
                        )));
                    }
                }
            }
        }

        let block_len: usize = sizes[m..].iter().product();
        let blocks: usize = sizes[..m].iter().product();
        let mut h_strides = vec![1usize; m];
        for a in (0..m.saturating_sub(1)).rev() {
            h_strides[a] = h_strides[a + 1] * sizes[a + 1];
        }
        let mut v_strides = vec![1usize; k];
        for s in (0..k.saturating_sub(1)).rev() {
            v_strides[s] = v_strides[s + 1] * sizes[m + s + 1];
        }
        let spacings: Vec<f64> = sizes.iter().map(|&n| 1.0 / n as f64).collect();

        let mut alpha = vec![0.0; blocks * k * m];
        let mut shear = vec![0i64; blocks * m * k];
        let mut idx = vec![0usize; m];
        for blk in 0..blocks {
            let mut r = blk;
            for a in 0..m {
                idx[a] = r / h_strides[a];
                r %= h_strides[a];
            }
            for s in 0..k {
                let nt = sizes[m + s] as i64;
                for a in 0..m {
                    let mut al = 0.0;
                    let mut sh = 0i64;
                    for c in 0..m {
                        let x_c = -0.5 + idx[c] as f64 / sizes[c] as f64;
                        al += x_c * structure[s][c * m + a] as f64;
                        let i_ac = structure[s][a * m + c];
                        if i_ac != 0 {
                            sh += i_ac * (nt / 2 - idx[c] as i64 * (nt / sizes[c] as i64));
                        }
                    }
                    alpha[(blk * k + s) * m + a] = al;
                    shear[(blk * m + a) * k + s] = sh;
                }
            }
        }

        Ok(Grid {
            sizes: sizes.to_vec(),
            spacings,
            m,
            k,
            order,
            block_len,
            blocks,
            h_strides,
            v_strides,
            structure,
            alpha,
            shear,
            vol_density: 1.0,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }
    pub fn spacings(&self) -> &[f64] {
        &self.spacings
    }
    pub fn order(&self) -> StencilOrder {
        self.order
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn k(&self) -> usize {
        self.k
    }
    pub fn dim(&self) -> usize {
        self.m + self.k
    }
    pub fn len(&self) -> usize {
        self.blocks * self.block_len
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn block_len(&self) -> usize {
        self.block_len
    }
    pub fn blocks(&self) -> usize {
        self.blocks
    }
    pub fn vol_density(&self) -> f64 {
        self.vol_density
    }
    /// Volume of the fundamental domain.
    pub fn volume(&self) -> f64 {
        self.vol_density
    }
    pub fn h_min(&self) -> f64 {
        self.spacings.iter().cloned().fold(f64::INFINITY, f64::min)
    }
    /// Largest horizontal spacing; the reference `h` of refinement studies.
    pub fn h_ref(&self) -> f64 {
        self.spacings[..self.m].iter().cloned().fold(0.0, f64::max)
    }
    pub fn h_strides(&self) -> &[usize] {
        &self.h_strides
    }
    pub fn v_strides(&self) -> &[usize] {
        &self.v_strides
    }

    /// `(I_s)_{ac}`.
    pub fn structure(&self, s: usize, a: usize, c: usize) -> i64 {
        self.structure[s][a * self.m + c]
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        -0.5 + i as f64 * self.spacings[axis]
    }

    /// Vertical coefficient `alpha_{s,a}` of `e_a` on horizontal block `blk`.
    #[inline]
    pub fn alpha(&self, blk: usize, s: usize, a: usize) -> f64 {
        self.alpha[(blk * self.k + s) * self.m + a]
    }

    /// Vertical index shift applied when crossing the upper `x_a` face from `blk`.
    #[inline]
    pub fn shear(&self, blk: usize, a: usize, s: usize) -> i64 {
        self.shear[(blk * self.m + a) * self.k + s]
    }

    /// Multi-index of a flat point index.
    pub fn multi_index(&self, idx: usize, out: &mut [usize]) {
        let mut blk = idx / self.block_len;
        let mut v = idx % self.block_len;
        for a in 0..self.m {
            out[a] = blk / self.h_strides[a];
            blk %= self.h_strides[a];
        }
        for s in 0..self.k {
            out[self.m + s] = v / self.v_strides[s];
            v %= self.v_strides[s];
        }
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let blk: usize = (0..self.m).map(|a| multi[a] * self.h_strides[a]).sum();
        let v: usize = (0..self.k).map(|s| multi[self.m + s] * self.v_strides[s]).sum();
        blk * self.block_len + v
    }

    /// Coordinates of a flat point index.
    pub fn point(&self, idx: usize, out: &mut [f64]) {
        let mut blk = idx / self.block_len;
        let mut v = idx % self.block_len;
        for a in 0..self.m {
            out[a] = self.coord(a, blk / self.h_strides[a]);
            blk %= self.h_strides[a];
        }
        for s in 0..self.k {
            out[self.m + s] = self.coord(self.m + s, v / self.v_strides[s]);
            v %= self.v_strides[s];
        }
    }

    /// Neighbor block along horizontal axis `a` at offset `off`, and the number
    /// of upper-face crossings (negative for lower-face crossings).
    #[inline]
    pub fn block_neighbor(&self, blk: usize, a: usize, off: isize) -> (usize, i64) {
        let n = self.sizes[a] as isize;
        let stride = self.h_strides[a];
        let i = ((blk / stride) % self.sizes[a]) as isize;
        let j = i + off;
        let crossing = j.div_euclid(n);
        let jw = j.rem_euclid(n);
        let nb = (blk as isize + (jw - i) * stride as isize) as usize;
        (nb, crossing as i64)
    }

    /// The point identified with stepping `off` grid cells along `axis` from
    /// `idx`, following the lattice identification across faces.
    pub fn wrap_neighbor(&self, idx: usize, axis: usize, off: isize) -> usize {
        let mut buf = [0usize; 16];
        let mi = &mut buf[..self.dim()];
        self.multi_index(idx, mi);
        if axis < self.m {
            let blk = idx / self.block_len;
            let (nb, crossing) = self.block_neighbor(blk, axis, off);
            let n = self.sizes[axis];
            mi[axis] = nb / self.h_strides[axis] % n;
            if crossing != 0 {
                for s in 0..self.k {
                    let nt = self.sizes[self.m + s] as i64;
                    let shifted = mi[self.m + s] as i64 + crossing * self.shear(blk, axis, s);
                    mi[self.m + s] = shifted.rem_euclid(nt) as usize;
                }
            }
        } else {
            let n = self.sizes[axis] as isize;
            mi[axis] = (mi[axis] as isize + off).rem_euclid(n) as usize;
        }
        self.flat_index(mi)
    }

    /// Upper bound on the spectral radius of the discrete `-Delta`:
    /// `sum_a ||E_a||_inf^2` with `||E_a||_inf <= S/h_a + sum_s sup|alpha_{s,a}| S/h_{t_s}`.
    pub fn laplacian_bound(&self) -> f64 {
        let sw = self.order.abs_row_sum();
        let mut total = 0.0;
        for a in 0..self.m {
            let mut norm = sw / self.spacings[a];
            for s in 0..self.k {
                let sup = (0..self.blocks).map(|b| self.alpha(b, s, a).abs()).fold(0.0, f64::max);
                norm += sup * sw / self.spacings[self.m + s];
            }
            total += norm * norm;
        }
        total
    }

    /// Dimensionless stability constant `Lambda = bound * h_min^2`.
    pub fn stability_lambda(&self) -> f64 {
        self.laplacian_bound() * self.h_min() * self.h_min()
    }

    pub fn describe(&self) -> String {
        self.sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Geometry, ModelKind};

    fn grid(kind: ModelKind, n: usize, sizes: &[usize]) -> Grid {
        let g = Geometry::new(kind, n).unwrap();
        Grid::new(sizes, &g.structures, StencilOrder::Four).unwrap()
    }

    #[test]
    fn divisibility() {
        let g = Geometry::new(ModelKind::Cr, 1).unwrap();
        assert!(Grid::new(&[32, 32, 64], &g.structures, StencilOrder::Four).is_ok());
        assert!(Grid::new(&[16, 16, 16], &g.structures, StencilOrder::Four).is_ok());
        assert!(Grid::new(&[32, 32, 63], &g.structures, StencilOrder::Four).is_err());
        assert!(Grid::new(&[32, 16, 24], &g.structures, StencilOrder::Four).is_err());
        let q = Geometry::new(ModelKind::Qc, 1).unwrap();
        assert!(Grid::new(&[12; 7], &q.structures, StencilOrder::Four).is_ok());
        assert!(Grid::new(&[8, 8, 8, 8, 8, 8, 12], &q.structures, StencilOrder::Four).is_err());
    }

    #[test]
    fn wrap_tables_are_bijections() {
        for (kind, n, sizes) in [
            (ModelKind::Cr, 1, vec![8, 8, 16]),
            (ModelKind::Cr, 2, vec![8, 8, 8, 8, 8]),
            (ModelKind::Qc, 1, vec![6; 7]),
        ] {
            let gr = grid(kind, n, &sizes);
            for axis in 0..gr.dim() {
                for off in [1isize, -2, 9] {
                    let mut seen = vec![false; gr.len()];
                    for i in 0..gr.len() {
                        let j = gr.wrap_neighbor(i, axis, off);
                        assert!(!seen[j], "axis {axis} off {off} not injective");
                        seen[j] = true;
                        assert_eq!(gr.wrap_neighbor(j, axis, -off), i);
                    }
                }
            }
        }
    }

    #[test]
    fn wrap_matches_lattice_action() {
        // Stepping across the x face lands on the image of the lattice translation.
        let gr = grid(ModelKind::Cr, 1, &[8, 8, 16]);
        let mi = [7usize, 2, 5];
        let idx = gr.flat_index(&mi);
        let j = gr.wrap_neighbor(idx, 0, 1);
        let mut p = [0.0; 3];
        gr.point(j, &mut p);
        let y = gr.coord(1, 2);
        let t = gr.coord(2, 5);
        // (x + 1, y, t) ~ (x, y, t - (I)_{0,1} y) with (I)_{0,1} = -1
        let expect_t = (t + y + 0.5).rem_euclid(1.0) - 0.5;
        assert_eq!(p[0], -0.5);
        assert!((p[2] - expect_t).abs() < 1e-15, "{} vs {}", p[2], expect_t);
    }

    #[test]
    fn bound_is_positive_and_scales() {
        let a = grid(ModelKind::Cr, 1, &[16, 16, 16]);
        let b = grid(ModelKind::Cr, 1, &[32, 32, 32]);
        assert!((b.laplacian_bound() / a.laplacian_bound() - 4.0).abs() < 0.2);
        assert!(a.stability_lambda() > 0.0);
    }
}
