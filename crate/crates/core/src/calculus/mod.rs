//! Differential operators and pointwise identities in the flat frame.
//!
//! Conventions: `hess[a][b] = e_a(e_b f)`, `third[a][b][c] = e_a(e_b(e_c f))`,
//! `mixed[s][b] = xi_s(e_b f)`. `|nabla^2 f|^2` is the full Frobenius norm of
//! `hess`, antisymmetric part included. Frame indices are zero-based.
//!
//! The functions here work on a [`DerivativeBundle`], which stores every
//! derivative up to order three; [`streaming`] evaluates the same quantities
//! while keeping only a handful of fields alive, for the 7-dimensional grids.

pub mod streaming;

use crate::discretization::{frame_derivative_into, integrate_by, FrameIndex, Grid, ScalarField, TensorField};
use crate::error::{Error, Result};
use crate::geometry::{ricci_matrix, GeometricTensors, Geometry, Matrix, Model, ModelKind};
use crate::report::ResidualReport;

pub use streaming::{change_of_variable_residual, dt_lap_residual, GeneralPhi, ChangeOfVariableMode};

/// Frame derivatives of `f` up to a given order.
#[derive(Clone, Debug)]
pub struct DerivativeBundle {
    pub order: usize,
    pub f: ScalarField,
    pub grad: TensorField,
    pub vert: Vec<ScalarField>,
    pub hess: Option<TensorField>,
    /// `mixed[s * m + b] = xi_s(e_b f)`
    pub mixed: Option<Vec<ScalarField>>,
    pub third: Option<TensorField>,
}

impl DerivativeBundle {
    pub fn hess(&self) -> Result<&TensorField> {
        self.hess.as_ref().ok_or_else(|| Error::ShapeMismatch("bundle of order >= 2 required".into()))
    }

    pub fn mixed(&self) -> Result<&[ScalarField]> {
        self.mixed.as_deref().ok_or_else(|| Error::ShapeMismatch("bundle of order >= 2 required".into()))
    }

    pub fn third(&self) -> Result<&TensorField> {
        self.third.as_ref().ok_or_else(|| Error::ShapeMismatch("bundle of order 3 required".into()))
    }
}

fn deriv(grid: &Grid, f: &ScalarField, idx: FrameIndex) -> Result<ScalarField> {
    let mut out = ScalarField::zeros(grid);
    frame_derivative_into(grid, &f.values, idx, &mut out.values)?;
    Ok(out)
}

/// Fills a bundle by iterated frame derivatives.
pub fn covariant_derivatives(model: &Model, f: &ScalarField, order: usize) -> Result<DerivativeBundle> {
    if !(1..=3).contains(&order) {
        return Err(Error::IndexOutOfRange { index: order, expected: "derivative order 1..=3".into() });
    }
    let grid = &model.grid;
    f.check_shape(grid)?;
    let (m, k) = (model.m(), model.k());
    let grad_c = (0..m).map(|a| deriv(grid, f, FrameIndex::Horizontal(a))).collect::<Result<Vec<_>>>()?;
    let vert = (0..k).map(|s| deriv(grid, f, FrameIndex::Vertical(s))).collect::<Result<Vec<_>>>()?;
    let grad = TensorField::new(1, m, grad_c)?;
    let mut bundle = DerivativeBundle { order, f: f.clone(), grad, vert, hess: None, mixed: None, third: None };
    if order >= 2 {
        let mut h = Vec::with_capacity(m * m);
        for a in 0..m {
            for b in 0..m {
                h.push(deriv(grid, &bundle.grad.components[b], FrameIndex::Horizontal(a))?);
            }
        }
        let mut mixed = Vec::with_capacity(k * m);
        for s in 0..k {
            for b in 0..m {
                mixed.push(deriv(grid, &bundle.grad.components[b], FrameIndex::Vertical(s))?);
            }
        }
        bundle.hess = Some(TensorField::new(2, m, h)?);
        bundle.mixed = Some(mixed);
    }
    if order >= 3 {
        let hess = bundle.hess.as_ref().unwrap();
        let mut t = Vec::with_capacity(m * m * m);
        for a in 0..m {
            for bc in 0..m * m {
                t.push(deriv(grid, &hess.components[bc], FrameIndex::Horizontal(a))?);
            }
        }
        bundle.third = Some(TensorField::new(3, m, t)?);
    }
    Ok(bundle)
}

/// `Delta f = sum_a e_a e_a f`.
pub fn sub_laplacian(grid: &Grid, f: &ScalarField) -> Result<ScalarField> {
    streaming::laplacian(grid, f)
}

/// `g(nabla^2 f, omega_s) = sum_{a,b} hess[a][b] (I_s)_{ba}` for every `s`.
pub fn omega_pairings(model: &Model, hess: &TensorField) -> Vec<ScalarField> {
    let grid = &model.grid;
    let m = model.m();
    (0..model.k())
        .map(|s| {
            let mut acc = ScalarField::zeros(grid);
            for a in 0..m {
                for b in 0..m {
                    let c = grid.structure(s, b, a);
                    if c != 0 {
                        acc.axpy(c as f64, hess.get(&[a, b]));
                    }
                }
            }
            acc
        })
        .collect()
}

fn trace(hess: &TensorField, grid: &Grid) -> ScalarField {
    let mut acc = ScalarField::zeros(grid);
    for a in 0..hess.m {
        acc.axpy(1.0, hess.get(&[a, a]));
    }
    acc
}

fn frobenius_sq(t: &TensorField) -> ScalarField {
    let n = t.components[0].len();
    ScalarField { values: (0..n).map(|i| t.components.iter().map(|c| c.values[i] * c.values[i]).sum()).collect() }
}

/// `|(nabla^2 f)_0|^2 = |nabla^2 f|^2 - (1/m) [ (Delta f)^2 + sum_s g(nabla^2 f, omega_s)^2 ]`.
pub fn traceless_hessian_sq(db: &DerivativeBundle, model: &Model) -> Result<ScalarField> {
    let hess = db.hess()?;
    let m = model.m() as f64;
    let lap = trace(hess, &model.grid);
    let om = omega_pairings(model, hess);
    let full = frobenius_sq(hess);
    let n = full.len();
    Ok(ScalarField {
        values: (0..n)
            .map(|i| {
                let inv: f64 = lap.values[i].powi(2) + om.iter().map(|o| o.values[i].powi(2)).sum::<f64>();
                full.values[i] - inv / m
            })
            .collect(),
    })
}

/// Matrix `M` with `P_f(e_a) = (flat part) + sum_b M_ab e_b f`.
///
/// QC: `-4nS g + 4n T0 - 8n(n-2)/(n-1) U`; CR: `4n A J`.
pub fn p_torsion_matrix(geom: &Geometry, tensors: &GeometricTensors) -> Result<Matrix> {
    let spec = &geom.spec;
    let (m, n) = (spec.m, spec.n as f64);
    match spec.kind {
        ModelKind::Qc => {
            let mut mat = Matrix::identity(m, m) * (-4.0 * n * tensors.s) + &tensors.t0 * (4.0 * n);
            if let Some(u) = tensors.u_checked(spec)? {
                mat -= u * (8.0 * n * (n - 2.0) / (n - 1.0));
            }
            Ok(mat)
        }
        ModelKind::Cr => {
            let j = &geom.structures.matrices[0];
            Ok(tensors.a.as_ref().map_or_else(|| Matrix::zeros(m, m), |a| a * j * (4.0 * n)))
        }
    }
}

/// Matrix of the zeroth-order Bochner terms as a quadratic form in `nabla f`.
///
/// QC: `2(n+2) S g + 2(n+2) T0 + 4(n+1) U`; CR: `Ric + 2 J^T A`.
pub fn bochner_curvature_matrix(geom: &Geometry, tensors: &GeometricTensors) -> Result<Matrix> {
    let spec = &geom.spec;
    let (m, n) = (spec.m, spec.n as f64);
    match spec.kind {
        ModelKind::Qc => {
            let mut mat = Matrix::identity(m, m) * (2.0 * (n + 2.0) * tensors.s) + &tensors.t0 * (2.0 * (n + 2.0));
            if let Some(u) = tensors.u_checked(spec)? {
                mat += u * (4.0 * (n + 1.0));
            }
            Ok(mat)
        }
        ModelKind::Cr => {
            let j = &geom.structures.matrices[0];
            let mut mat = ricci_matrix(geom, tensors)?;
            if let Some(a) = &tensors.a {
                mat += j.transpose() * a * 2.0;
            }
            Ok(mat)
        }
    }
}

/// Zeroth-order terms of the two `R_f` integral formulas as quadratic forms in `nabla f`.
///
/// QC: `-S g + (n+1)/(n-1) U` and `-T0 + 3U`; CR: `J^T A` and `-J^T A`.
pub fn rf_curvature_matrices(geom: &Geometry, tensors: &GeometricTensors) -> Result<(Matrix, Matrix)> {
    let spec = &geom.spec;
    let (m, n) = (spec.m, spec.n as f64);
    match spec.kind {
        ModelKind::Qc => {
            let mut m1 = Matrix::identity(m, m) * -tensors.s;
            let mut m2 = -tensors.t0.clone();
            if let Some(u) = tensors.u_checked(spec)? {
                m1 += u * ((n + 1.0) / (n - 1.0));
                m2 += u * 3.0;
            }
            Ok((m1, m2))
        }
        ModelKind::Cr => {
            let j = &geom.structures.matrices[0];
            let ja = tensors.a.as_ref().map_or_else(|| Matrix::zeros(m, m), |a| j.transpose() * a);
            Ok((ja.clone(), -ja))
        }
    }
}

pub(crate) fn is_zero(mat: &Matrix) -> bool {
    mat.iter().all(|v| *v == 0.0)
}

/// `sum_{a,b} v_a M_ab w_b` pointwise.
pub(crate) fn bilinear_field(v: &[ScalarField], mat: &Matrix, w: &[ScalarField]) -> ScalarField {
    let n = v[0].len();
    let m = v.len();
    ScalarField {
        values: (0..n)
            .map(|i| {
                let mut acc = 0.0;
                for a in 0..m {
                    for b in 0..m {
                        let c = mat[(a, b)];
                        if c != 0.0 {
                            acc += v[a].values[i] * c * w[b].values[i];
                        }
                    }
                }
                acc
            })
            .collect(),
    }
}

/// The P-form: `P_f(X) = sum_b nabla^3 f(X, e_b, e_b) + sum_s sum_b nabla^3 f(I_s X, e_b, I_s e_b)`
/// plus torsion terms.
pub fn p_form(db: &DerivativeBundle, model: &Model, tensors: &GeometricTensors) -> Result<TensorField> {
    let third = db.third()?;
    let grid = &model.grid;
    let (m, k) = (model.m(), model.k());
    let tors = p_torsion_matrix(&model.geometry, tensors)?;
    let mut comps = Vec::with_capacity(m);
    for a in 0..m {
        let mut acc = ScalarField::zeros(grid);
        for b in 0..m {
            acc.axpy(1.0, third.get(&[a, b, b]));
        }
        for s in 0..k {
            for c in 0..m {
                let ica = grid.structure(s, c, a);
                if ica == 0 {
                    continue;
                }
                for b in 0..m {
                    for d in 0..m {
                        let idb = grid.structure(s, d, b);
                        if idb != 0 {
                            acc.axpy((ica * idb) as f64, third.get(&[c, b, d]));
                        }
                    }
                }
            }
        }
        for b in 0..m {
            let c = tors[(a, b)];
            if c != 0.0 {
                acc.axpy(c, &db.grad.components[b]);
            }
        }
        comps.push(acc);
    }
    TensorField::new(1, m, comps)
}

/// `C f = sum_a e_a (P_f(e_a))`.
pub fn c_operator(model: &Model, f: &ScalarField, tensors: &GeometricTensors) -> Result<ScalarField> {
    let grid = &model.grid;
    let p = streaming::p_components(model, f, tensors)?;
    let mut acc = ScalarField::zeros(grid);
    let mut tmp = ScalarField::zeros(grid);
    for (a, pa) in p.iter().enumerate() {
        frame_derivative_into(grid, &pa.values, FrameIndex::Horizontal(a), &mut tmp.values)?;
        acc.axpy(1.0, &tmp);
    }
    Ok(acc)
}

/// `R_f(e_a) = sum_s nabla^2 f(xi_s, I_s e_a) = sum_s sum_c (I_s)_{ca} xi_s(e_c f)`.
pub fn r_form(db: &DerivativeBundle, model: &Model) -> Result<TensorField> {
    let mixed = db.mixed()?;
    let grid = &model.grid;
    let (m, k) = (model.m(), model.k());
    let comps = (0..m)
        .map(|a| {
            let mut acc = ScalarField::zeros(grid);
            for s in 0..k {
                for c in 0..m {
                    let ica = grid.structure(s, c, a);
                    if ica != 0 {
                        acc.axpy(ica as f64, &mixed[s * m + c]);
                    }
                }
            }
            acc
        })
        .collect();
    TensorField::new(1, m, comps)
}

/// Ricci identity and pairing residuals with the documented `omega` sign
/// (`sign = 1`) or a flipped one (`sign = -1`, the negative control).
pub fn ricci_identity_residual_signed(db: &DerivativeBundle, model: &Model, sign: f64) -> Result<ResidualReport> {
    let hess = db.hess()?;
    let grid = &model.grid;
    let frame = model.frame();
    let (m, k) = (model.m(), model.k());
    let mut sq = 0.0;
    for a in 0..m {
        for b in (a + 1)..m {
            let (hab, hba) = (hess.get(&[a, b]), hess.get(&[b, a]));
            let om: Vec<f64> = (0..k).map(|s| sign * frame.omega(s, a, b)).collect();
            sq += integrate_by(grid, |i| {
                let mut r = hab.values[i] - hba.values[i];
                for s in 0..k {
                    r += 2.0 * om[s] * db.vert[s].values[i];
                }
                r * r
            })?;
        }
    }
    let pair = omega_pairings(model, hess);
    for s in 0..k {
        sq += integrate_by(grid, |i| {
            let r = sign * pair[s].values[i] + m as f64 * db.vert[s].values[i];
            r * r
        })?;
    }
    let scale = integrate_by(grid, |i| hess.components.iter().map(|c| c.values[i].powi(2)).sum())?;
    Ok(ResidualReport::new("ricci_identity", sq.sqrt(), scale.sqrt(), grid.h_ref()))
}

/// `hess_ab - hess_ba + 2 sum_s omega_s(e_a, e_b) xi_s f` over `a < b`, plus
/// `g(nabla^2 f, omega_s) + m xi_s f`, in L2.
pub fn ricci_identity_residual(db: &DerivativeBundle, model: &Model) -> Result<ResidualReport> {
    ricci_identity_residual_signed(db, model, 1.0)
}

/// `1/2 Delta |nabla f|^2 - |nabla^2 f|^2 - g(nabla Delta f, nabla f) - curvature - 4 R_f(nabla f)` in L2.
pub fn bochner_residual(db: &DerivativeBundle, model: &Model, tensors: &GeometricTensors) -> Result<ResidualReport> {
    let third = db.third()?;
    let hess = db.hess()?;
    let grid = &model.grid;
    let m = model.m();
    let g = &db.grad.components;
    let n = grid.len();
    let grad_sq = ScalarField { values: (0..n).map(|i| g.iter().map(|c| c.values[i].powi(2)).sum()).collect() };
    let lhs = sub_laplacian(grid, &grad_sq)?.scale(0.5);
    let hsq = frobenius_sq(hess);
    let r = r_form(db, model)?;
    let curv = bochner_curvature_matrix(&model.geometry, tensors)?;
    let curv_field = (!is_zero(&curv)).then(|| bilinear_field(g, &curv, g));
    let res = integrate_by(grid, |i| {
        let mut rhs = hsq.values[i];
        for a in 0..m {
            let dlap: f64 = (0..m).map(|b| third.get(&[a, b, b]).values[i]).sum();
            rhs += g[a].values[i] * (dlap + 4.0 * r.components[a].values[i]);
        }
        if let Some(c) = &curv_field {
            rhs += c.values[i];
        }
        (lhs.values[i] - rhs).powi(2)
    })?;
    let scale = integrate_by(grid, |i| hsq.values[i].powi(2))?;
    Ok(ResidualReport::new("bochner", res.sqrt(), scale.sqrt(), grid.h_ref()))
}

#[cfg(test)]
mod tests;
