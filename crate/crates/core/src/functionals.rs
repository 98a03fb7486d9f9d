//! Entropy, energy, the predicted energy derivative and the integral
//! identities checked along flows.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::calculus::bilinear_field;
use crate::calculus::rf_curvature_matrices;
use crate::calculus::streaming::{c_operator, omega_pairing, p_function, r_function, traceless_hessian_sq};
use crate::discretization::{frame_derivative_into, integrate, integrate_by, FrameIndex, Grid, ScalarField};
use crate::error::{Error, Result};
use crate::geometry::{polarized_lichnerowicz, GeometricTensors, Geometry, Matrix, Model, ModelKind};
use crate::heat::{FlowState, PotentialTriple};
use crate::report::ResidualReport;

/// `N = integral u ln u`.
pub fn entropy(grid: &Grid, u: &ScalarField) -> Result<f64> {
    u.check_shape(grid)?;
    u.check_positive()?;
    integrate_by(grid, |i| {
        let x = u.values[i];
        x * x.ln()
    })
}

/// `|nabla f|^2` and `Delta f`.
fn gradient_sq_and_laplacian(grid: &Grid, f: &ScalarField) -> Result<(ScalarField, ScalarField)> {
    let mut n = ScalarField::zeros(grid);
    let mut lap = ScalarField::zeros(grid);
    let mut g = ScalarField::zeros(grid);
    let mut t = ScalarField::zeros(grid);
    for a in 0..grid.m() {
        frame_derivative_into(grid, &f.values, FrameIndex::Horizontal(a), &mut g.values)?;
        frame_derivative_into(grid, &g.values, FrameIndex::Horizontal(a), &mut t.values)?;
        for i in 0..n.len() {
            n.values[i] += g.values[i] * g.values[i];
            lap.values[i] += t.values[i];
        }
    }
    Ok((n, lap))
}

/// `E = integral |nabla f|^2 u`.
pub fn energy(grid: &Grid, pt: &PotentialTriple) -> Result<f64> {
    pt.u.check_positive()?;
    let (n, _) = gradient_sq_and_laplacian(grid, &pt.f)?;
    integrate_by(grid, |i| n.values[i] * pt.u.values[i])
}

/// Matrix of the Lichnerowicz-type form `L` in the frame.
pub fn lichnerowicz_matrix(geom: &Geometry, tensors: &GeometricTensors) -> Result<Matrix> {
    let m = geom.spec.m;
    let basis = |i: usize| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect::<Vec<_>>();
    let mut out = Matrix::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            out[(a, b)] = polarized_lichnerowicz(geom, tensors, &basis(a), &basis(b))?;
        }
    }
    Ok(out)
}

/// Integrals entering the energy derivative, evaluated from `u` alone.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyIntegrals {
    pub entropy: f64,
    pub energy: f64,
    /// `integral |(nabla^2 f)_0|^2 u`
    pub traceless: f64,
    /// `integral L(nabla f, nabla f) u`
    pub lichnerowicz: f64,
    /// `integral |nabla f|^4 u`
    pub quartic: f64,
    /// `integral (2 (Delta f)^2 - 3 |nabla f|^2 Delta f) u`
    pub formula2: f64,
    /// `integral P_F(nabla F)`
    pub p_pairing: f64,
    /// `integral F C F`
    pub paneitz_pairing: f64,
    /// `integral |F C F|`
    pub paneitz_abs: f64,
    /// Predicted `E'`.
    pub e_prime: f64,
}

/// Computes every integral of [`EnergyIntegrals`], phase by phase to keep
/// the number of live fields small.
pub fn energy_integrals(model: &Model, tensors: &GeometricTensors, u: &ScalarField) -> Result<EnergyIntegrals> {
    let grid = &model.grid;
    u.check_shape(grid)?;
    u.check_positive()?;
    let mut out = EnergyIntegrals { entropy: entropy(grid, u)?, ..Default::default() };
    let f = u.map(|x| -x.ln());
    {
        let (n, lap) = gradient_sq_and_laplacian(grid, &f)?;
        let uv = &u.values;
        out.energy = integrate_by(grid, |i| n.values[i] * uv[i])?;
        out.quartic = integrate_by(grid, |i| n.values[i] * n.values[i] * uv[i])?;
        out.formula2 = integrate_by(grid, |i| {
            let (l, q) = (lap.values[i], n.values[i]);
            (2.0 * l * l - 3.0 * q * l) * uv[i]
        })?;
    }
    {
        let t = traceless_hessian_sq(model, &f)?;
        out.traceless = integrate_by(grid, |i| t.values[i] * u.values[i])?;
    }
    let lmat = lichnerowicz_matrix(&model.geometry, tensors)?;
    if lmat.iter().any(|v| *v != 0.0) {
        let g = crate::calculus::streaming::gradient(grid, &f)?;
        let q = bilinear_field(&g, &lmat, &g);
        out.lichnerowicz = integrate_by(grid, |i| q.values[i] * u.values[i])?;
    }
    drop(f);
    let big_f = u.map(f64::sqrt);
    {
        let p = p_function(model, &big_f, tensors)?;
        out.p_pairing = integrate(grid, &p)?;
    }
    {
        let c = c_operator(model, &big_f, tensors)?;
        out.paneitz_pairing = integrate_by(grid, |i| big_f.values[i] * c.values[i])?;
        out.paneitz_abs = integrate_by(grid, |i| (big_f.values[i] * c.values[i]).abs())?;
    }
    out.e_prime = predicted_e_prime(model, &out);
    Ok(out)
}

/// Solves the energy inequality relation for `E'`.
///
/// QC: `(2n+1)/(4n) E' = -integral[|H_0|^2 + (2n+1)/2 L + |nabla f|^4/(16n)] u + (3/n) integral P_F(nabla F)`.
/// CR: `(n+1)/(2n) E' = -integral[|H_0|^2 + (2n+1)/2 L + |nabla f|^4/(8n)] u - (6/n) integral F C F`.
pub fn predicted_e_prime(model: &Model, x: &EnergyIntegrals) -> f64 {
    let n = model.n() as f64;
    let common = x.traceless + (2.0 * n + 1.0) / 2.0 * x.lichnerowicz;
    match model.kind() {
        ModelKind::Qc => {
            let rhs = -(common + x.quartic / (16.0 * n)) + 3.0 / n * x.p_pairing;
            rhs * 4.0 * n / (2.0 * n + 1.0)
        }
        ModelKind::Cr => {
            let rhs = -(common + x.quartic / (8.0 * n)) - 6.0 / n * x.paneitz_pairing;
            rhs * 2.0 * n / (n + 1.0)
        }
    }
}

/// Predicted `E'` for a potential triple.
pub fn energy_prime_rhs(model: &Model, pt: &PotentialTriple, tensors: &GeometricTensors) -> Result<f64> {
    Ok(energy_integrals(model, tensors, &pt.u)?.e_prime)
}

/// `integral P_f(nabla f) u = 1/4 integral |nabla f|^4 u + 4 integral P_F(nabla F)`,
/// left side through `f`, right side through `F`.
pub fn paneitz_identity_residual(model: &Model, pt: &PotentialTriple, tensors: &GeometricTensors) -> Result<ResidualReport> {
    let grid = &model.grid;
    pt.u.check_positive()?;
    let lhs = {
        let p = p_function(model, &pt.f, tensors)?;
        integrate_by(grid, |i| p.values[i] * pt.u.values[i])?
    };
    let quartic = {
        let (n, _) = gradient_sq_and_laplacian(grid, &pt.f)?;
        integrate_by(grid, |i| n.values[i] * n.values[i] * pt.u.values[i])?
    };
    let pf = {
        let p = p_function(model, &pt.big_f, tensors)?;
        integrate(grid, &p)?
    };
    let rhs = 0.25 * quartic + 4.0 * pf;
    let scale = lhs.abs() + 0.25 * quartic.abs() + 4.0 * pf.abs();
    Ok(ResidualReport::new("paneitz_identity", lhs - rhs, scale, grid.h_ref()))
}

/// Direct `integral R_f(nabla f) u` against its two integrated forms:
///
/// `RHS_1 = integral[-(1/m) P_f(nabla f) - (1/m)(Delta f)^2 + (1/m)|nabla f|^2 Delta f + M_1(nabla f, nabla f)] u`,
/// `RHS_2 = integral[-(1/m) sum_s g(nabla^2 f, omega_s)^2 + M_2(nabla f, nabla f)] u`,
/// `m` the horizontal dimension and `M_1`, `M_2` from [`rf_curvature_matrices`].
pub fn rf_integral_gap(
    model: &Model,
    pt: &PotentialTriple,
    tensors: &GeometricTensors,
) -> Result<(ResidualReport, ResidualReport)> {
    let grid = &model.grid;
    let u = &pt.u;
    u.check_positive()?;
    let inv_m = 1.0 / model.m() as f64;
    let (m1, m2) = rf_curvature_matrices(&model.geometry, tensors)?;
    let direct = {
        let r = r_function(model, &pt.f)?;
        integrate_by(grid, |i| r.values[i] * u.values[i])?
    };
    let p_term = {
        let p = p_function(model, &pt.f, tensors)?;
        -inv_m * integrate_by(grid, |i| p.values[i] * u.values[i])?
    };
    let (lap_sq, mixed) = {
        let (n, lap) = gradient_sq_and_laplacian(grid, &pt.f)?;
        let a = -inv_m * integrate_by(grid, |i| lap.values[i] * lap.values[i] * u.values[i])?;
        let b = inv_m * integrate_by(grid, |i| n.values[i] * lap.values[i] * u.values[i])?;
        (a, b)
    };
    let omega_sq = {
        let mut acc = 0.0;
        for s in 0..model.k() {
            let om = omega_pairing(grid, &pt.f, s)?;
            acc += integrate_by(grid, |i| om.values[i] * om.values[i] * u.values[i])?;
        }
        -inv_m * acc
    };
    let (c1, c2) = if m1.iter().chain(m2.iter()).any(|v| *v != 0.0) {
        let g = crate::calculus::streaming::gradient(grid, &pt.f)?;
        let q1 = bilinear_field(&g, &m1, &g);
        let q2 = bilinear_field(&g, &m2, &g);
        (
            integrate_by(grid, |i| q1.values[i] * u.values[i])?,
            integrate_by(grid, |i| q2.values[i] * u.values[i])?,
        )
    } else {
        (0.0, 0.0)
    };
    let rhs1 = p_term + lap_sq + mixed + c1;
    let rhs2 = omega_sq + c2;
    let scale1 = direct.abs() + p_term.abs() + lap_sq.abs() + mixed.abs() + c1.abs();
    let scale2 = direct.abs() + omega_sq.abs() + c2.abs();
    let h = grid.h_ref();
    Ok((
        ResidualReport::new("rf_gap_1", direct - rhs1, scale1, h),
        ResidualReport::new("rf_gap_2", direct - rhs2, scale2, h),
    ))
}

/// One sampled time of a flow.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub t: f64,
    pub step: u64,
    pub mass: f64,
    pub min_u: f64,
    pub integrals: EnergyIntegrals,
}

/// Evaluates the functionals at a flow state.
pub fn sample(model: &Model, tensors: &GeometricTensors, state: &FlowState) -> Result<FlowSample> {
    let grid = &model.grid;
    Ok(FlowSample {
        t: state.t,
        step: state.step_count,
        mass: integrate(grid, &state.u)?,
        min_u: state.u.min(),
        integrals: energy_integrals(model, tensors, &state.u)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowTrace {
    /// Time between consecutive samples.
    pub interval: f64,
    pub samples: Vec<FlowSample>,
}

impl FlowTrace {
    pub fn new(interval: f64) -> Self {
        FlowTrace { interval, samples: Vec::new() }
    }

    pub fn push(&mut self, s: FlowSample) {
        self.samples.push(s);
    }

    /// CSV with columns `t,N,E,E_rhs,paneitz_pairing,mass,min_u`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["t", "N", "E", "E_rhs", "paneitz_pairing", "mass", "min_u"]).map_err(io)?;
        for s in &self.samples {
            let x = &s.integrals;
            let row = [s.t, x.entropy, x.energy, x.e_prime, x.paneitz_pairing, s.mass, s.min_u];
            w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The hypothesis the verdict depends on did not hold.
    Inconclusive,
}

/// Outcome of [`flow_identity_checks`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowChecks {
    /// (a) `dN/dt + E`
    pub entropy_rate: ResidualReport,
    /// (b) `dE/dt - E'_predicted`
    pub energy_prime: ResidualReport,
    /// (c) `integral(2(Delta f)^2 - 3|nabla f|^2 Delta f) u + dE/dt + integral |nabla f|^4 u`
    pub formula2: ResidualReport,
    /// (d) `max_j (N_{j+1} - N_j)` and `max_j (E_{j+1} - E_j)`
    pub entropy_increase: f64,
    pub energy_increase: f64,
    /// (e) `min_j integral F C F`, and the smallest value relative to `integral |F C F|`
    pub min_paneitz_pairing: f64,
    pub min_paneitz_ratio: f64,
    pub paneitz_nonnegative: bool,
    pub monotone: Verdict,
    /// Largest relative mass drift against sample 0.
    pub mass_drift: f64,
}

pub const MONOTONE_MARGIN: f64 = 1e-10;

/// Time-differenced identities along a sampled flow. Interior samples use
/// central differences over the sample interval.
pub fn flow_identity_checks(trace: &FlowTrace) -> Result<FlowChecks> {
    let s = &trace.samples;
    if s.len() < 3 {
        return Err(Error::InsufficientSamples { needed: 3, have: s.len() });
    }
    let h = trace.interval;
    let (mut a_abs, mut a_scale) = (0.0f64, 0.0f64);
    let (mut b_abs, mut b_scale) = (0.0f64, 0.0f64);
    let (mut c_abs, mut c_scale) = (0.0f64, 0.0f64);
    for j in 1..s.len() - 1 {
        let dt = s[j + 1].t - s[j - 1].t;
        let (p, c, n) = (&s[j - 1].integrals, &s[j].integrals, &s[j + 1].integrals);
        let dn = (n.entropy - p.entropy) / dt;
        let de = (n.energy - p.energy) / dt;
        a_abs = a_abs.max((dn + c.energy).abs());
        a_scale = a_scale.max(c.energy.abs());
        b_abs = b_abs.max((de - c.e_prime).abs());
        b_scale = b_scale.max(de.abs().max(c.e_prime.abs()));
        c_abs = c_abs.max((c.formula2 + de + c.quartic).abs());
        c_scale = c_scale.max(c.formula2.abs() + de.abs() + c.quartic.abs());
    }
    let mut dn_max = f64::NEG_INFINITY;
    let mut de_max = f64::NEG_INFINITY;
    for w in s.windows(2) {
        dn_max = dn_max.max(w[1].integrals.entropy - w[0].integrals.entropy);
        de_max = de_max.max(w[1].integrals.energy - w[0].integrals.energy);
    }
    let mut min_pairing = f64::INFINITY;
    let mut min_ratio = f64::INFINITY;
    let mut nonneg = true;
    for x in s.iter().map(|x| &x.integrals) {
        min_pairing = min_pairing.min(x.paneitz_pairing);
        let ratio = if x.paneitz_abs > 0.0 { x.paneitz_pairing / x.paneitz_abs } else { 0.0 };
        min_ratio = min_ratio.min(ratio);
        nonneg &= x.paneitz_pairing >= -MONOTONE_MARGIN * x.paneitz_abs;
    }
    let (n0, e0) = (s[0].integrals.entropy, s[0].integrals.energy);
    let within = dn_max <= MONOTONE_MARGIN * n0.abs() && de_max <= MONOTONE_MARGIN * e0.abs();
    let monotone = match (nonneg, within) {
        (true, true) => Verdict::Pass,
        (true, false) => Verdict::Fail,
        (false, _) => Verdict::Inconclusive,
    };
    let m0 = s[0].mass;
    let mass_drift = s.iter().map(|x| ((x.mass - m0) / m0).abs()).fold(0.0, f64::max);
    Ok(FlowChecks {
        entropy_rate: ResidualReport::new("entropy_rate", a_abs, a_scale, h),
        energy_prime: ResidualReport::new("energy_prime", b_abs, b_scale, h),
        formula2: ResidualReport::new("energy_formula2", c_abs, c_scale, h),
        entropy_increase: dn_max,
        energy_increase: de_max,
        min_paneitz_pairing: min_pairing,
        min_paneitz_ratio: min_ratio,
        paneitz_nonnegative: nonneg,
        monotone,
        mass_drift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::StencilOrder;
    use crate::geometry::{build_model, small_model};
    use std::f64::consts::PI;

    fn cr(sizes: &[usize]) -> (Model, GeometricTensors) {
        build_model(ModelKind::Cr, 1, sizes, StencilOrder::Four).unwrap()
    }

    #[test]
    fn entropy_of_constants() {
        let (model, _) = cr(&[8, 8, 16]);
        let g = &model.grid;
        assert_eq!(entropy(g, &ScalarField::constant(g, 1.0)).unwrap(), 0.0);
        let c: f64 = 2.5;
        let n = entropy(g, &ScalarField::constant(g, c)).unwrap();
        assert!((n - c * c.ln() * g.volume()).abs() < 1e-12);
        assert!(entropy(g, &ScalarField::constant(g, 0.0)).is_err());
    }

    #[test]
    fn entropy_against_dense_quadrature() {
        let (model, _) = cr(&[32, 32, 64]);
        let g = &model.grid;
        let eps = 0.1;
        let u = ScalarField::from_fn(g, |p| 1.0 + eps * (2.0 * PI * p[0]).sin());
        let n = entropy(g, &u).unwrap();
        let k = 200_000;
        let oracle: f64 = (0..k)
            .map(|i| {
                let x = (i as f64 + 0.5) / k as f64;
                let v = 1.0 + eps * (2.0 * PI * x).sin();
                v * v.ln()
            })
            .sum::<f64>()
            / k as f64;
        assert!((n - oracle).abs() < 1e-9, "{n} vs {oracle}");
    }

    #[test]
    fn energy_scaling_and_oracle() {
        let (model, _) = cr(&[32, 32, 64]);
        let g = &model.grid;
        let eps = 0.2;
        let u = ScalarField::from_fn(g, |p| (-eps * (2.0 * PI * p[0]).sin()).exp());
        let pt = PotentialTriple::from_density(g, u.clone()).unwrap();
        let e = energy(g, &pt).unwrap();
        let k = 200_000;
        let oracle: f64 = (0..k)
            .map(|i| {
                let x = (i as f64 + 0.5) / k as f64;
                let df = eps * 2.0 * PI * (2.0 * PI * x).cos();
                df * df * (-eps * (2.0 * PI * x).sin()).exp()
            })
            .sum::<f64>()
            / k as f64;
        assert!(((e - oracle) / oracle).abs() < 5e-4, "{e} vs {oracle}");
        let pt3 = PotentialTriple::from_density(g, u.scale(3.0)).unwrap();
        assert!((energy(g, &pt3).unwrap() - 3.0 * e).abs() < 1e-12 * e);
        let c = PotentialTriple::from_density(g, ScalarField::constant(g, 2.0)).unwrap();
        assert_eq!(energy(g, &c).unwrap(), 0.0);
    }

    #[test]
    fn constant_density_integrals_vanish() {
        for (kind, n, sizes) in [(ModelKind::Cr, 1, vec![8, 8, 16]), (ModelKind::Qc, 1, vec![6; 7])] {
            let (model, tensors) = small_model(kind, n, &sizes, StencilOrder::Two);
            let u = ScalarField::constant(&model.grid, 1.3);
            let x = energy_integrals(&model, &tensors, &u).unwrap();
            assert_eq!(x.energy, 0.0);
            assert_eq!(x.e_prime, 0.0);
            assert_eq!(x.paneitz_pairing, 0.0);
            let pt = PotentialTriple::from_density(&model.grid, u).unwrap();
            assert_eq!(paneitz_identity_residual(&model, &pt, &tensors).unwrap().abs, 0.0);
            let (r1, r2) = rf_integral_gap(&model, &pt, &tensors).unwrap();
            assert_eq!((r1.abs, r2.abs), (0.0, 0.0));
        }
    }

    #[test]
    fn checks_need_three_samples() {
        let t = FlowTrace::new(0.1);
        assert!(matches!(flow_identity_checks(&t), Err(Error::InsufficientSamples { needed: 3, have: 0 })));
    }

    #[test]
    fn constant_flow_checks() {
        let mut t = FlowTrace::new(0.1);
        for j in 0..4 {
            t.push(FlowSample {
                t: 0.1 * j as f64,
                step: j,
                mass: 1.0,
                min_u: 1.0,
                integrals: EnergyIntegrals::default(),
            });
        }
        let c = flow_identity_checks(&t).unwrap();
        assert_eq!(c.entropy_rate.abs, 0.0);
        assert_eq!(c.energy_prime.abs, 0.0);
        assert_eq!(c.monotone, Verdict::Pass);
        assert_eq!(c.mass_drift, 0.0);
    }
}
