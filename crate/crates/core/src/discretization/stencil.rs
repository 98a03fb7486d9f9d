//! Frame-derivative kernels.
//!
//! `E_a f = D_a f + sum_s alpha_{s,a}(x) D_{t_s} f` where `D` are central
//! differences and `alpha` is evaluated exactly at the grid point. Each pass
//! handles one horizontal block: neighbor blocks along `x_a` are read
//! directly, or through a rotated vertical gather when the step crosses a
//! face, and the vertical stencil runs inside the block. Both parts are
//! skew-adjoint, so discrete integrals of derivatives telescope to zero.

use rayon::prelude::*;

use super::field::{ScalarField, TensorField};
use super::grid::Grid;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FrameIndex {
    /// `e_a`, zero-based.
    Horizontal(usize),
    /// `xi_s`, zero-based.
    Vertical(usize),
}

fn add_scaled(out: &mut [f64], src: &[f64], c: f64) {
    for (o, s) in out.iter_mut().zip(src) {
        *o += c * s;
    }
}

/// `out[v] += c * src[v + delta]` with per-axis periodic rotation of the
/// vertical multi-index.
fn add_rotated(grid: &Grid, out: &mut [f64], src: &[f64], deltas: &[i64], c: f64) {
    let m = grid.m();
    let k = grid.k();
    let sizes = grid.sizes();
    let strides = grid.v_strides();
    let nl = sizes[m + k - 1];
    let dl = deltas[k - 1].rem_euclid(nl as i64) as usize;
    let rows = out.len() / nl;
    for r in 0..rows {
        let base = r * nl;
        let mut src_off = 0;
        for s in 0..k - 1 {
            let n = sizes[m + s];
            let i = (base / strides[s]) % n;
            let rot = (i as i64 + deltas[s]).rem_euclid(n as i64) as usize;
            src_off += rot * strides[s];
        }
        let o = &mut out[base..base + nl];
        let s = &src[src_off..src_off + nl];
        let split = nl - dl;
        add_scaled(&mut o[..split], &s[dl..], c);
        add_scaled(&mut o[split..], &s[..dl], c);
    }
}

fn add_diff(out: &mut [f64], plus: &[f64], minus: &[f64], c: f64) {
    for ((o, p), q) in out.iter_mut().zip(plus).zip(minus) {
        *o += c * (p - q);
    }
}

/// `out += c * D_{t_s} src` inside one vertical block (`c` includes `1/h`).
fn add_vertical(grid: &Grid, out: &mut [f64], src: &[f64], s: usize, c: f64) {
    let n = grid.sizes()[grid.m() + s];
    let st = grid.v_strides()[s];
    let weights = grid.order().weights();
    let len = n * st;
    for base in (0..out.len()).step_by(len) {
        let o = &mut out[base..base + len];
        let x = &src[base..base + len];
        for (j, &w) in weights.iter().enumerate() {
            let sh = (j + 1) * st;
            let cw = c * w;
            if 2 * sh <= len {
                // o[i] += cw * (x[i + sh] - x[i - sh]), indices mod len
                add_diff(&mut o[..sh], &x[sh..2 * sh], &x[len - sh..], cw);
                add_diff(&mut o[sh..len - sh], &x[2 * sh..], &x[..len - 2 * sh], cw);
                add_diff(&mut o[len - sh..], &x[..sh], &x[len - 2 * sh..len - sh], cw);
            } else {
                for i in 0..len {
                    o[i] += cw * (x[(i + sh) % len] - x[(i + len - sh % len) % len]);
                }
            }
        }
    }
}

fn horizontal_block(grid: &Grid, f: &[f64], a: usize, blk: usize, out: &mut [f64]) {
    let v = grid.block_len();
    let k = grid.k();
    let m = grid.m();
    let inv_h = 1.0 / grid.spacings()[a];
    let mut deltas = [0i64; 8];
    out.fill(0.0);
    for (j, &w) in grid.order().weights().iter().enumerate() {
        let step = (j + 1) as isize;
        for (sign, off) in [(1.0, step), (-1.0, -step)] {
            let (nb, crossing) = grid.block_neighbor(blk, a, off);
            let src = &f[nb * v..(nb + 1) * v];
            let c = sign * w * inv_h;
            let mut shifted = false;
            for (s, d) in deltas.iter_mut().enumerate().take(k) {
                *d = crossing * grid.shear(blk, a, s);
                shifted |= *d != 0;
            }
            if shifted {
                add_rotated(grid, out, src, &deltas[..k], c);
            } else {
                add_scaled(out, src, c);
            }
        }
    }
    let fb = &f[blk * v..(blk + 1) * v];
    for s in 0..k {
        let al = grid.alpha(blk, s, a);
        if al != 0.0 {
            add_vertical(grid, out, fb, s, al / grid.spacings()[m + s]);
        }
    }
}

fn check_index(grid: &Grid, idx: FrameIndex) -> Result<()> {
    match idx {
        FrameIndex::Horizontal(a) if a >= grid.m() => {
            Err(Error::IndexOutOfRange { index: a, expected: format!("horizontal index < {}", grid.m()) })
        }
        FrameIndex::Vertical(s) if s >= grid.k() => {
            Err(Error::IndexOutOfRange { index: s, expected: format!("vertical index < {}", grid.k()) })
        }
        _ => Ok(()),
    }
}

/// Writes the frame derivative of `f` into `out`.
pub fn frame_derivative_into(grid: &Grid, f: &[f64], idx: FrameIndex, out: &mut [f64]) -> Result<()> {
    check_index(grid, idx)?;
    if f.len() != grid.len() || out.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!("buffers of {} / {} values on {} points", f.len(), out.len(), grid.len())));
    }
    let v = grid.block_len();
    match idx {
        FrameIndex::Horizontal(a) => {
            out.par_chunks_mut(v).enumerate().for_each(|(blk, o)| horizontal_block(grid, f, a, blk, o));
        }
        FrameIndex::Vertical(s) => {
            let c = 1.0 / grid.spacings()[grid.m() + s];
            out.par_chunks_mut(v).enumerate().for_each(|(blk, o)| {
                o.fill(0.0);
                add_vertical(grid, o, &f[blk * v..(blk + 1) * v], s, c);
            });
        }
    }
    Ok(())
}

/// `out += c * (frame derivative of f)`, using one block of scratch per task.
pub fn frame_derivative_acc(grid: &Grid, f: &[f64], idx: FrameIndex, c: f64, out: &mut [f64]) -> Result<()> {
    check_index(grid, idx)?;
    if f.len() != grid.len() || out.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!("buffers of {} / {} values on {} points", f.len(), out.len(), grid.len())));
    }
    let v = grid.block_len();
    out.par_chunks_mut(v).enumerate().for_each_init(
        || vec![0.0; v],
        |buf, (blk, o)| {
            match idx {
                FrameIndex::Horizontal(a) => horizontal_block(grid, f, a, blk, buf),
                FrameIndex::Vertical(s) => {
                    buf.fill(0.0);
                    add_vertical(grid, buf, &f[blk * v..(blk + 1) * v], s, 1.0 / grid.spacings()[grid.m() + s]);
                }
            }
            add_scaled(o, buf, c);
        },
    );
    Ok(())
}

/// `e_a f` or `xi_s f` by order-p central differences.
pub fn frame_derivative(grid: &Grid, f: &ScalarField, idx: FrameIndex) -> Result<ScalarField> {
    let mut out = ScalarField::zeros(grid);
    frame_derivative_into(grid, &f.values, idx, &mut out.values)?;
    Ok(out)
}

/// `e_a f` for a zero-based horizontal index.
pub fn e(grid: &Grid, f: &ScalarField, a: usize) -> Result<ScalarField> {
    frame_derivative(grid, f, FrameIndex::Horizontal(a))
}

/// `xi_s f` for a zero-based vertical index.
pub fn xi(grid: &Grid, f: &ScalarField, s: usize) -> Result<ScalarField> {
    frame_derivative(grid, f, FrameIndex::Vertical(s))
}

/// `sum_a e_a sigma_a`, the discrete horizontal divergence (`-nabla^* sigma`).
pub fn horizontal_divergence(grid: &Grid, sigma: &TensorField) -> Result<ScalarField> {
    if sigma.rank != 1 || sigma.m != grid.m() {
        return Err(Error::ShapeMismatch(format!("divergence of a rank {} field", sigma.rank)));
    }
    let mut acc = ScalarField::zeros(grid);
    let mut tmp = ScalarField::zeros(grid);
    for (a, comp) in sigma.components.iter().enumerate() {
        comp.check_shape(grid)?;
        frame_derivative_into(grid, &comp.values, FrameIndex::Horizontal(a), &mut tmp.values)?;
        acc.axpy(1.0, &tmp);
    }
    Ok(acc)
}
