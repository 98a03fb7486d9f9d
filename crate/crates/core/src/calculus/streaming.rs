//! Lean evaluation of the calculus identities.
//!
//! Same quantities as the bundle routes, computed with a few live fields at a
//! time so they fit at 7-dimensional resolutions. Derivatives are recomputed
//! rather than stored when that saves a field.

use rayon::prelude::*;

use super::{bilinear_field, is_zero, p_torsion_matrix, bochner_curvature_matrix};
use crate::discretization::{frame_derivative_acc, frame_derivative_into, integrate_by, FrameIndex, Grid, ScalarField};
use crate::error::Result;
use crate::geometry::{GeometricTensors, Model};
use crate::heat::PotentialTriple;
use crate::report::ResidualReport;

fn d(grid: &Grid, f: &ScalarField, idx: FrameIndex) -> Result<ScalarField> {
    let mut out = ScalarField::zeros(grid);
    frame_derivative_into(grid, &f.values, idx, &mut out.values)?;
    Ok(out)
}

fn d_into(grid: &Grid, f: &ScalarField, idx: FrameIndex, out: &mut ScalarField) -> Result<()> {
    frame_derivative_into(grid, &f.values, idx, &mut out.values)
}

fn acc(grid: &Grid, f: &ScalarField, idx: FrameIndex, c: f64, out: &mut ScalarField) -> Result<()> {
    frame_derivative_acc(grid, &f.values, idx, c, &mut out.values)
}

fn update<F: Fn(usize, &mut f64) + Sync>(out: &mut ScalarField, f: F) {
    out.values.par_iter_mut().enumerate().for_each(|(i, v)| f(i, v));
}

/// `res += term(i)` and `mag += |term(i)|`.
fn add_term<F: Fn(usize) -> f64 + Sync>(res: &mut ScalarField, mag: &mut ScalarField, term: F) {
    res.values.par_iter_mut().zip(mag.values.par_iter_mut()).enumerate().for_each(|(i, (r, m))| {
        let x = term(i);
        *r += x;
        *m += x.abs();
    });
}

fn l2(grid: &Grid, f: &ScalarField) -> Result<f64> {
    Ok(integrate_by(grid, |i| f.values[i] * f.values[i])?.sqrt())
}

const H: fn(usize) -> FrameIndex = FrameIndex::Horizontal;
const V: fn(usize) -> FrameIndex = FrameIndex::Vertical;

pub fn laplacian(grid: &Grid, f: &ScalarField) -> Result<ScalarField> {
    f.check_shape(grid)?;
    let mut out = ScalarField::zeros(grid);
    let mut g = ScalarField::zeros(grid);
    for a in 0..grid.m() {
        d_into(grid, f, H(a), &mut g)?;
        acc(grid, &g, H(a), 1.0, &mut out)?;
    }
    Ok(out)
}

pub fn gradient(grid: &Grid, f: &ScalarField) -> Result<Vec<ScalarField>> {
    (0..grid.m()).map(|a| d(grid, f, H(a))).collect()
}

/// `g(nabla^2 f, omega_s) = sum_{a,b} (I_s)_{ba} e_a(e_b f)`.
pub fn omega_pairing(grid: &Grid, f: &ScalarField, s: usize) -> Result<ScalarField> {
    let mut out = ScalarField::zeros(grid);
    let mut g = ScalarField::zeros(grid);
    for b in 0..grid.m() {
        let row: Vec<(usize, i64)> = (0..grid.m()).map(|a| (a, grid.structure(s, b, a))).filter(|(_, c)| *c != 0).collect();
        if row.is_empty() {
            continue;
        }
        d_into(grid, f, H(b), &mut g)?;
        for (a, c) in row {
            acc(grid, &g, H(a), c as f64, &mut out)?;
        }
    }
    Ok(out)
}

/// `(I_s v)_c = sum_a (I_s)_{ca} v_a` pointwise, for gradient components `v`.
fn rotate(grid: &Grid, s: usize, c: usize, v: &[ScalarField], i: usize) -> f64 {
    let mut acc = 0.0;
    for (a, va) in v.iter().enumerate() {
        let x = grid.structure(s, c, a);
        if x != 0 {
            acc += x as f64 * va.values[i];
        }
    }
    acc
}

/// Components `P_f(e_a)`.
pub fn p_components(model: &Model, f: &ScalarField, tensors: &GeometricTensors) -> Result<Vec<ScalarField>> {
    let grid = &model.grid;
    let (m, k) = (model.m(), model.k());
    let tors = p_torsion_matrix(&model.geometry, tensors)?;
    let lap = laplacian(grid, f)?;
    let mut out = (0..m).map(|a| d(grid, &lap, H(a))).collect::<Result<Vec<_>>>()?;
    drop(lap);
    for s in 0..k {
        let om = omega_pairing(grid, f, s)?;
        for c in 0..m {
            for (a, oa) in out.iter_mut().enumerate() {
                let x = grid.structure(s, c, a);
                if x != 0 {
                    acc(grid, &om, H(c), x as f64, oa)?;
                }
            }
        }
    }
    if !is_zero(&tors) {
        let g = gradient(grid, f)?;
        for (a, oa) in out.iter_mut().enumerate() {
            for (b, gb) in g.iter().enumerate() {
                if tors[(a, b)] != 0.0 {
                    oa.axpy(tors[(a, b)], gb);
                }
            }
        }
    }
    Ok(out)
}

/// `P_f(nabla f)`. Gradient components are recomputed per term so that only
/// four fields are live.
pub fn p_function(model: &Model, f: &ScalarField, tensors: &GeometricTensors) -> Result<ScalarField> {
    let grid = &model.grid;
    let (m, k) = (model.m(), model.k());
    let tors = p_torsion_matrix(&model.geometry, tensors)?;
    let mut out = ScalarField::zeros(grid);
    let mut t = ScalarField::zeros(grid);
    let mut v = ScalarField::zeros(grid);
    {
        let lap = laplacian(grid, f)?;
        for a in 0..m {
            d_into(grid, f, H(a), &mut v)?;
            d_into(grid, &lap, H(a), &mut t)?;
            update(&mut out, |i, o| *o += v.values[i] * t.values[i]);
        }
    }
    for s in 0..k {
        let om = omega_pairing(grid, f, s)?;
        for c in 0..m {
            d_into(grid, &om, H(c), &mut t)?;
            // v = (I_s nabla f)_c
            update(&mut v, |_, o| *o = 0.0);
            for a in 0..m {
                let x = grid.structure(s, c, a);
                if x != 0 {
                    acc(grid, f, H(a), x as f64, &mut v)?;
                }
            }
            update(&mut out, |i, o| *o += t.values[i] * v.values[i]);
        }
    }
    if !is_zero(&tors) {
        let mut w = t;
        for a in 0..m {
            d_into(grid, f, H(a), &mut v)?;
            update(&mut w, |_, o| *o = 0.0);
            for b in 0..m {
                if tors[(a, b)] != 0.0 {
                    acc(grid, f, H(b), tors[(a, b)], &mut w)?;
                }
            }
            update(&mut out, |i, o| *o += v.values[i] * w.values[i]);
        }
    }
    Ok(out)
}

/// `R_f(nabla f) = sum_s sum_c xi_s(e_c f) (I_s nabla f)_c`.
pub fn r_function(model: &Model, f: &ScalarField) -> Result<ScalarField> {
    let grid = &model.grid;
    let g = gradient(grid, f)?;
    let mut out = ScalarField::zeros(grid);
    let mut t = ScalarField::zeros(grid);
    for s in 0..model.k() {
        for (c, gc) in g.iter().enumerate() {
            d_into(grid, gc, V(s), &mut t)?;
            update(&mut out, |i, o| *o += t.values[i] * rotate(grid, s, c, &g, i));
        }
    }
    Ok(out)
}

/// Lean equivalent of [`super::traceless_hessian_sq`].
pub fn traceless_hessian_sq(model: &Model, f: &ScalarField) -> Result<ScalarField> {
    let grid = &model.grid;
    let m = model.m();
    let mut out = ScalarField::zeros(grid);
    let mut lap = ScalarField::zeros(grid);
    let mut g = ScalarField::zeros(grid);
    let mut t = ScalarField::zeros(grid);
    for b in 0..m {
        d_into(grid, f, H(b), &mut g)?;
        for a in 0..m {
            d_into(grid, &g, H(a), &mut t)?;
            update(&mut out, |i, o| *o += t.values[i] * t.values[i]);
            if a == b {
                lap.axpy(1.0, &t);
            }
        }
    }
    drop(g);
    drop(t);
    let inv_m = 1.0 / m as f64;
    update(&mut out, |i, o| *o -= inv_m * lap.values[i] * lap.values[i]);
    for s in 0..model.k() {
        let om = omega_pairing(grid, f, s)?;
        update(&mut out, |i, o| *o -= inv_m * om.values[i] * om.values[i]);
    }
    Ok(out)
}

/// Lean equivalent of [`super::ricci_identity_residual`].
pub fn ricci_identity_residual(model: &Model, f: &ScalarField) -> Result<ResidualReport> {
    let grid = &model.grid;
    f.check_shape(grid)?;
    let (m, k) = (model.m(), model.k());
    let frame = model.frame();
    let vert = (0..k).map(|s| d(grid, f, V(s))).collect::<Result<Vec<_>>>()?;
    let mut sq = 0.0;
    let mut scale = 0.0;
    let mut ga = ScalarField::zeros(grid);
    let mut gb = ScalarField::zeros(grid);
    let mut hab = ScalarField::zeros(grid);
    let mut hba = ScalarField::zeros(grid);
    for a in 0..m {
        d_into(grid, f, H(a), &mut ga)?;
        d_into(grid, &ga, H(a), &mut hab)?;
        scale += integrate_by(grid, |i| hab.values[i] * hab.values[i])?;
        for b in (a + 1)..m {
            d_into(grid, f, H(b), &mut gb)?;
            d_into(grid, &gb, H(a), &mut hab)?;
            d_into(grid, &ga, H(b), &mut hba)?;
            let om: Vec<f64> = (0..k).map(|s| 2.0 * frame.omega(s, a, b)).collect();
            sq += integrate_by(grid, |i| {
                let mut r = hab.values[i] - hba.values[i];
                for (s, v) in vert.iter().enumerate() {
                    r += om[s] * v.values[i];
                }
                r * r
            })?;
            scale += integrate_by(grid, |i| hab.values[i] * hab.values[i] + hba.values[i] * hba.values[i])?;
        }
    }
    drop((ga, gb, hab, hba));
    for (s, v) in vert.iter().enumerate() {
        let om = omega_pairing(grid, f, s)?;
        sq += integrate_by(grid, |i| {
            let r = om.values[i] + m as f64 * v.values[i];
            r * r
        })?;
    }
    Ok(ResidualReport::new("ricci_identity", sq.sqrt(), scale.sqrt(), grid.h_ref()))
}

/// Lean equivalent of [`super::bochner_residual`].
pub fn bochner_residual(model: &Model, f: &ScalarField, tensors: &GeometricTensors) -> Result<ResidualReport> {
    let grid = &model.grid;
    f.check_shape(grid)?;
    let m = model.m();
    let curv = bochner_curvature_matrix(&model.geometry, tensors)?;
    let g = gradient(grid, f)?;
    let mut res = {
        let mut q = ScalarField::zeros(grid);
        for ga in &g {
            update(&mut q, |i, o| *o += ga.values[i] * ga.values[i]);
        }
        laplacian(grid, &q)?.scale(0.5)
    };
    let mut t = ScalarField::zeros(grid);
    let mut hsq = ScalarField::zeros(grid);
    {
        let mut lap = ScalarField::zeros(grid);
        for b in 0..m {
            for a in 0..m {
                d_into(grid, &g[b], H(a), &mut t)?;
                update(&mut hsq, |i, o| *o += t.values[i] * t.values[i]);
                if a == b {
                    lap.axpy(1.0, &t);
                }
            }
        }
        for (a, ga) in g.iter().enumerate() {
            d_into(grid, &lap, H(a), &mut t)?;
            update(&mut res, |i, o| *o -= ga.values[i] * t.values[i]);
        }
    }
    res.axpy(-1.0, &hsq);
    for s in 0..model.k() {
        for (c, gc) in g.iter().enumerate() {
            d_into(grid, gc, V(s), &mut t)?;
            update(&mut res, |i, o| *o -= 4.0 * t.values[i] * rotate(grid, s, c, &g, i));
        }
    }
    if !is_zero(&curv) {
        res.axpy(-1.0, &bilinear_field(&g, &curv, &g));
    }
    let abs = l2(grid, &res)?;
    let scale = l2(grid, &hsq)?;
    Ok(ResidualReport::new("bochner", abs, scale, grid.h_ref()))
}

/// Test family for the general change of variable `f = phi(F)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum GeneralPhi {
    /// `phi(F) = c F`
    Linear(f64),
    /// `phi(F) = -2 ln F`
    MinusTwoLog,
}

impl GeneralPhi {
    /// `(phi, phi', phi'', phi''')` at `x`.
    pub fn derivatives(self, x: f64) -> [f64; 4] {
        match self {
            GeneralPhi::Linear(c) => [c * x, c, 0.0, 0.0],
            GeneralPhi::MinusTwoLog => [-2.0 * x.ln(), -2.0 / x, 2.0 / (x * x), -4.0 / (x * x * x)],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ChangeOfVariableMode {
    /// Componentwise `P_{phi(F)}(e_a)` against its expansion in `F`.
    GeneralPhi(GeneralPhi),
    /// `u P_f(nabla f) = 4 P_F(nabla F) + [-|nabla f|^4/4 + |nabla f|^2 Delta f / 2 + nabla^2 f(nabla f, nabla f)] u`
    /// with `u = F^2`, `f = -2 ln F`.
    SqrtU,
}

/// Residual of the selected change-of-variable identity; both sides are
/// computed independently from `F`.
pub fn change_of_variable_residual(
    model: &Model,
    big_f: &ScalarField,
    mode: ChangeOfVariableMode,
    tensors: &GeometricTensors,
) -> Result<ResidualReport> {
    let grid = &model.grid;
    big_f.check_shape(grid)?;
    big_f.check_positive()?;
    match mode {
        ChangeOfVariableMode::GeneralPhi(phi) => general_phi(model, big_f, phi, tensors),
        ChangeOfVariableMode::SqrtU => sqrt_u(model, big_f, tensors),
    }
}

/// `out_a += w(i) P_f(e_a)`, keeping two scratch fields besides `out`.
fn p_components_weighted_acc<W: Fn(usize) -> f64 + Sync>(
    model: &Model,
    f: &ScalarField,
    tensors: &GeometricTensors,
    w: W,
    out: &mut [ScalarField],
) -> Result<()> {
    let grid = &model.grid;
    let (m, k) = (model.m(), model.k());
    let tors = p_torsion_matrix(&model.geometry, tensors)?;
    let mut t = ScalarField::zeros(grid);
    {
        let lap = laplacian(grid, f)?;
        for (a, oa) in out.iter_mut().enumerate() {
            d_into(grid, &lap, H(a), &mut t)?;
            update(oa, |i, o| *o += w(i) * t.values[i]);
        }
    }
    for s in 0..k {
        let om = omega_pairing(grid, f, s)?;
        for c in 0..m {
            d_into(grid, &om, H(c), &mut t)?;
            for (a, oa) in out.iter_mut().enumerate() {
                let x = grid.structure(s, c, a) as f64;
                if x != 0.0 {
                    update(oa, |i, o| *o += w(i) * x * t.values[i]);
                }
            }
        }
    }
    if !is_zero(&tors) {
        for b in 0..m {
            d_into(grid, f, H(b), &mut t)?;
            for (a, oa) in out.iter_mut().enumerate() {
                let x = tors[(a, b)];
                if x != 0.0 {
                    update(oa, |i, o| *o += w(i) * x * t.values[i]);
                }
            }
        }
    }
    Ok(())
}

fn general_phi(model: &Model, big_f: &ScalarField, phi: GeneralPhi, tensors: &GeometricTensors) -> Result<ResidualReport> {
    let grid = &model.grid;
    let (m, k) = (model.m(), model.k());
    let dphi = |i: usize| phi.derivatives(big_f.values[i]);
    let mut out = {
        let f = big_f.map(|x| phi.derivatives(x)[0]);
        p_components(model, &f, tensors)?
    };
    let mut scale = 0.0;
    for oa in &out {
        scale += integrate_by(grid, |i| oa.values[i] * oa.values[i])?;
    }
    p_components_weighted_acc(model, big_f, tensors, |i| -dphi(i)[1], &mut out)?;
    if !matches!(phi, GeneralPhi::Linear(_)) {
        // gradient components are recomputed where needed to keep few fields live
        let mut t = ScalarField::zeros(grid);
        let mut gb = ScalarField::zeros(grid);
        let mut nsq = ScalarField::zeros(grid);
        let mut lap = ScalarField::zeros(grid);
        for b in 0..m {
            d_into(grid, big_f, H(b), &mut gb)?;
            d_into(grid, &gb, H(b), &mut t)?;
            lap.axpy(1.0, &t);
            update(&mut nsq, |i, o| *o += gb.values[i] * gb.values[i]);
        }
        let mut ga = ScalarField::zeros(grid);
        for (a, oa) in out.iter_mut().enumerate() {
            d_into(grid, big_f, H(a), &mut ga)?;
            update(oa, |i, o| {
                let d = dphi(i);
                *o -= (d[3] * nsq.values[i] + d[2] * lap.values[i]) * ga.values[i];
            });
            for b in 0..m {
                d_into(grid, big_f, H(b), &mut gb)?;
                d_into(grid, &gb, H(a), &mut t)?;
                update(oa, |i, o| *o -= 2.0 * dphi(i)[2] * t.values[i] * gb.values[i]);
            }
        }
        drop((nsq, lap, ga));
        for s in 0..k {
            let om = omega_pairing(grid, big_f, s)?;
            for c in 0..m {
                d_into(grid, big_f, H(c), &mut gb)?;
                for (a, oa) in out.iter_mut().enumerate() {
                    let x = grid.structure(s, c, a) as f64;
                    if x != 0.0 {
                        update(oa, |i, o| *o -= dphi(i)[2] * om.values[i] * x * gb.values[i]);
                    }
                }
            }
        }
    }
    let mut sq = 0.0;
    for oa in &out {
        sq += integrate_by(grid, |i| oa.values[i] * oa.values[i])?;
    }
    Ok(ResidualReport::new("change_of_variable_general", sq.sqrt(), scale.sqrt(), grid.h_ref()))
}

fn sqrt_u(model: &Model, big_f: &ScalarField, tensors: &GeometricTensors) -> Result<ResidualReport> {
    let grid = &model.grid;
    let m = model.m();
    let u = |i: usize| big_f.values[i] * big_f.values[i];
    let f = big_f.map(|x| -2.0 * x.ln());
    let mut res = ScalarField::zeros(grid);
    let mut mag = ScalarField::zeros(grid);
    {
        let pf = p_function(model, &f, tensors)?;
        add_term(&mut res, &mut mag, |i| u(i) * pf.values[i]);
    }
    {
        let pf = p_function(model, big_f, tensors)?;
        add_term(&mut res, &mut mag, |i| -4.0 * pf.values[i]);
    }
    let g = gradient(grid, &f)?;
    drop(f);
    let mut lap = ScalarField::zeros(grid);
    let mut hq = ScalarField::zeros(grid);
    let mut t = ScalarField::zeros(grid);
    for b in 0..m {
        for a in 0..m {
            d_into(grid, &g[b], H(a), &mut t)?;
            let (ga, gb) = (&g[a], &g[b]);
            update(&mut hq, |i, o| *o += ga.values[i] * gb.values[i] * t.values[i]);
            if a == b {
                lap.axpy(1.0, &t);
            }
        }
    }
    drop(t);
    add_term(&mut res, &mut mag, |i| {
        let n: f64 = g.iter().map(|c| c.values[i] * c.values[i]).sum();
        -(-0.25 * n * n + 0.5 * n * lap.values[i] + hq.values[i]) * u(i)
    });
    let abs = l2(grid, &res)?;
    let scale = l2(grid, &mag)?;
    Ok(ResidualReport::new("change_of_variable_sqrt_u", abs, scale, grid.h_ref()))
}

/// `(d/dt - Delta)(u w) = [2 g(nabla Delta f, nabla f) - Delta |nabla f|^2] u` with
/// `w = 2 Delta f - |nabla f|^2` and the time derivatives replaced through
/// `u_t = Delta u`, `f_t = Delta f - |nabla f|^2`.
pub fn dt_lap_residual(model: &Model, pt: &PotentialTriple) -> Result<ResidualReport> {
    let grid = &model.grid;
    let (u, f) = (&pt.u, &pt.f);
    u.check_shape(grid)?;
    f.check_shape(grid)?;
    u.check_positive()?;
    let m = model.m();
    let mut res = ScalarField::zeros(grid);
    let mut mag = ScalarField::zeros(grid);
    let mut lap = ScalarField::zeros(grid);
    let mut n = ScalarField::zeros(grid);
    let mut ga = ScalarField::zeros(grid);
    for a in 0..m {
        d_into(grid, f, H(a), &mut ga)?;
        update(&mut n, |i, o| *o += ga.values[i] * ga.values[i]);
        acc(grid, &ga, H(a), 1.0, &mut lap)?;
    }
    // right-hand side, moved to the left
    let mut t = ScalarField::zeros(grid);
    for a in 0..m {
        d_into(grid, f, H(a), &mut ga)?;
        d_into(grid, &lap, H(a), &mut t)?;
        add_term(&mut res, &mut mag, |i| -2.0 * u.values[i] * ga.values[i] * t.values[i]);
    }
    {
        let dn = laplacian(grid, &n)?;
        add_term(&mut res, &mut mag, |i| u.values[i] * dn.values[i]);
    }
    // lap becomes h = f_t, n becomes w
    update(&mut lap, |i, o| *o -= n.values[i]);
    update(&mut n, |i, o| *o += 2.0 * lap.values[i]);
    let (h, w) = (lap, n);
    {
        let du = laplacian(grid, u)?;
        add_term(&mut res, &mut mag, |i| w.values[i] * du.values[i]);
    }
    {
        let dh = laplacian(grid, &h)?;
        add_term(&mut res, &mut mag, |i| 2.0 * u.values[i] * dh.values[i]);
    }
    for a in 0..m {
        d_into(grid, f, H(a), &mut ga)?;
        d_into(grid, &h, H(a), &mut t)?;
        add_term(&mut res, &mut mag, |i| -2.0 * u.values[i] * ga.values[i] * t.values[i]);
    }
    drop((ga, t, h));
    let uw = u.zip_map(&w, |a, b| a * b);
    drop(w);
    let duw = laplacian(grid, &uw)?;
    add_term(&mut res, &mut mag, |i| -duw.values[i]);
    let abs = l2(grid, &res)?;
    let scale = l2(grid, &mag)?;
    Ok(ResidualReport::new("dt_lap", abs, scale, grid.h_ref()))
}

/// `C f = Delta(Delta f) + sum_s g(nabla^2 Omega_s, omega_s) + sum_{a,b} M_ab e_a e_b f` with
/// `Omega_s = g(nabla^2 f, omega_s)`; algebraically `sum_a e_a(P_f(e_a))`.
pub fn c_operator(model: &Model, f: &ScalarField, tensors: &GeometricTensors) -> Result<ScalarField> {
    let grid = &model.grid;
    let tors = p_torsion_matrix(&model.geometry, tensors)?;
    let mut out = {
        let lap = laplacian(grid, f)?;
        laplacian(grid, &lap)?
    };
    for s in 0..model.k() {
        let om = omega_pairing(grid, f, s)?;
        let oo = omega_pairing(grid, &om, s)?;
        out.axpy(1.0, &oo);
    }
    if !is_zero(&tors) {
        let mut g = ScalarField::zeros(grid);
        for b in 0..model.m() {
            d_into(grid, f, H(b), &mut g)?;
            for a in 0..model.m() {
                if tors[(a, b)] != 0.0 {
                    acc(grid, &g, H(a), tors[(a, b)], &mut out)?;
                }
            }
        }
    }
    Ok(out)
}
