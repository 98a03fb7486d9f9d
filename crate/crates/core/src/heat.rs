//! Explicit RK4 integration of `u_t = Delta u`.

use crate::calculus::streaming::laplacian;
use crate::discretization::io::{read_field, DecodedField, Reader};
use crate::discretization::{frame_derivative_into, integrate, FrameIndex, Grid, ScalarField};
use crate::error::{Error, Result};
use crate::functionals::{sample, FlowTrace};
use crate::geometry::{GeometricTensors, Model};

/// Right end of the RK4 stability interval on the negative real axis.
pub const RK4_STABILITY_RADIUS: f64 = 2.785;
pub const DEFAULT_SIGMA: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub t: f64,
    pub u: ScalarField,
    pub step_count: u64,
    pub dt: f64,
}

impl FlowState {
    pub fn new(u: ScalarField, dt: f64) -> Result<Self> {
        u.check_positive()?;
        Ok(FlowState { t: 0.0, u, step_count: 0, dt })
    }
}

/// `u`, `f = -ln u` and `F = sqrt(u)`; `w = 2 Delta f - |nabla f|^2` is
/// computed on demand by [`PotentialTriple::w`].
#[derive(Clone, Debug)]
pub struct PotentialTriple {
    pub u: ScalarField,
    pub f: ScalarField,
    pub big_f: ScalarField,
}

impl PotentialTriple {
    pub fn from_density(grid: &Grid, u: ScalarField) -> Result<Self> {
        u.check_shape(grid)?;
        u.check_positive()?;
        let f = u.map(|x| -x.ln());
        let big_f = u.map(f64::sqrt);
        Ok(PotentialTriple { u, f, big_f })
    }

    /// `w = 2 Delta f - |nabla f|^2`.
    pub fn w(&self, grid: &Grid) -> Result<ScalarField> {
        let mut w = laplacian(grid, &self.f)?.scale(2.0);
        let mut g = ScalarField::zeros(grid);
        for a in 0..grid.m() {
            frame_derivative_into(grid, &self.f.values, FrameIndex::Horizontal(a), &mut g.values)?;
            for (wi, gi) in w.values.iter_mut().zip(&g.values) {
                *wi -= gi * gi;
            }
        }
        Ok(w)
    }

    /// Largest relative mismatch of `F^2` and `e^{-f}` against `u`.
    pub fn consistency_defect(&self) -> f64 {
        self.u
            .values
            .iter()
            .zip(&self.f.values)
            .zip(&self.big_f.values)
            .map(|((&u, &f), &bf)| ((bf * bf - u).abs().max(((-f).exp() - u).abs())) / u)
            .fold(0.0, f64::max)
    }
}

/// Largest stable step for the grid's Laplacian bound.
pub fn stability_limit(grid: &Grid) -> f64 {
    RK4_STABILITY_RADIUS / grid.laplacian_bound()
}

/// `sigma * h_min^2 / Lambda`.
pub fn auto_dt(grid: &Grid, sigma: f64) -> f64 {
    sigma * grid.h_min() * grid.h_min() / grid.stability_lambda()
}

/// One classical RK4 step.
pub fn step(grid: &Grid, state: &FlowState, dt: f64) -> Result<FlowState> {
    let limit = stability_limit(grid);
    if !(dt > 0.0) || dt > limit {
        return Err(Error::StabilityViolated { dt, limit });
    }
    let u = &state.u;
    u.check_shape(grid)?;
    let k1 = laplacian(grid, u)?;
    let mut next = u.clone();
    next.axpy(dt / 6.0, &k1);
    let mut stage = u.clone();
    stage.axpy(0.5 * dt, &k1);
    drop(k1);
    let k2 = laplacian(grid, &stage)?;
    next.axpy(dt / 3.0, &k2);
    stage.values.copy_from_slice(&u.values);
    stage.axpy(0.5 * dt, &k2);
    drop(k2);
    let k3 = laplacian(grid, &stage)?;
    next.axpy(dt / 3.0, &k3);
    stage.values.copy_from_slice(&u.values);
    stage.axpy(dt, &k3);
    drop(k3);
    let k4 = laplacian(grid, &stage)?;
    next.axpy(dt / 6.0, &k4);
    let step_count = state.step_count + 1;
    if !next.is_finite() {
        return Err(Error::PositivityLost { step: step_count as usize, min: f64::NAN });
    }
    let min = next.min();
    if min <= 0.0 {
        return Err(Error::PositivityLost { step: step_count as usize, min });
    }
    Ok(FlowState { t: state.t + dt, u: next, step_count, dt })
}

/// Time stepping parameters for [`run_flow`].
#[derive(Clone, Debug, PartialEq)]
pub struct FlowConfig {
    pub t_final: f64,
    /// Steps between samples.
    pub sample_every: usize,
    pub sigma: f64,
    /// Overrides the automatic step.
    pub dt: Option<f64>,
}

impl FlowConfig {
    pub fn new(t_final: f64, sample_every: usize) -> Self {
        FlowConfig { t_final, sample_every, sigma: DEFAULT_SIGMA, dt: None }
    }

    /// Uniform step no larger than the requested one that lands on `t_final`
    /// after a whole number of sample intervals, and the number of steps.
    pub fn schedule(&self, grid: &Grid) -> Result<(f64, usize)> {
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(Error::ConfigInvalid(format!("t_final = {}", self.t_final)));
        }
        if self.sample_every == 0 {
            return Err(Error::ConfigInvalid("sample interval must be positive".into()));
        }
        let target = self.dt.unwrap_or_else(|| auto_dt(grid, self.sigma));
        if !(target > 0.0) {
            return Err(Error::ConfigInvalid(format!("time step {target}")));
        }
        if self.t_final == 0.0 {
            return Ok((target, 0));
        }
        let per = self.sample_every;
        let steps = ((self.t_final / target).ceil() as usize).div_ceil(per) * per;
        Ok((self.t_final / steps as f64, steps))
    }
}

/// Advances `u0` to `t_final`, sampling functionals at step 0, every
/// `sample_every` steps and at the end.
pub fn run_flow(model: &Model, tensors: &GeometricTensors, u0: ScalarField, cfg: &FlowConfig) -> Result<FlowTrace> {
    let grid = &model.grid;
    let (dt, steps) = cfg.schedule(grid)?;
    let mut state = FlowState::new(u0, dt)?;
    let mut trace = FlowTrace::new(dt * cfg.sample_every as f64);
    trace.push(sample(model, tensors, &state)?);
    for i in 1..=steps {
        state = step(grid, &state, dt)?;
        if i == steps {
            // keeps t_final exact in the record
            state.t = cfg.t_final;
        }
        if i % cfg.sample_every == 0 || i == steps {
            trace.push(sample(model, tensors, &state)?);
        }
    }
    Ok(trace)
}

/// Mass `integral u` of a state.
pub fn mass(grid: &Grid, state: &FlowState) -> Result<f64> {
    integrate(grid, &state.u)
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"NHC1";

/// `b"NHC1"  f64 t  u64 step_count  f64 dt` followed by the field record.
pub fn encode_checkpoint(grid: &Grid, state: &FlowState) -> Result<Vec<u8>> {
    let field = crate::discretization::io::encode_field(grid, &state.u)?;
    let mut out = Vec::with_capacity(28 + field.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&state.t.to_le_bytes());
    out.extend_from_slice(&state.step_count.to_le_bytes());
    out.extend_from_slice(&state.dt.to_le_bytes());
    out.extend_from_slice(&field);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecodedCheckpoint {
    pub t: f64,
    pub step_count: u64,
    pub dt: f64,
    pub field: DecodedField,
}

impl DecodedCheckpoint {
    pub fn into_state(self, grid: &Grid) -> Result<FlowState> {
        let u = self.field.into_field(grid)?;
        u.check_positive()?;
        Ok(FlowState { t: self.t, u, step_count: self.step_count, dt: self.dt })
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<DecodedCheckpoint> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Decode("bad checkpoint magic".into()));
    }
    let t = r.f64()?;
    let step_count = r.u64()?;
    let dt = r.f64()?;
    if !t.is_finite() || t < 0.0 {
        return Err(Error::Decode(format!("checkpoint time {t}")));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::Decode(format!("checkpoint step {dt}")));
    }
    let field = read_field(&mut r)?;
    if r.remaining() != 0 {
        return Err(Error::Decode(format!("{} trailing bytes", r.remaining())));
    }
    Ok(DecodedCheckpoint { t, step_count, dt, field })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::StencilOrder;
    use crate::geometry::{build_model, ModelKind};
    use std::f64::consts::PI;

    fn cr(sizes: &[usize]) -> (Model, GeometricTensors) {
        build_model(ModelKind::Cr, 1, sizes, StencilOrder::Four).unwrap()
    }

    #[test]
    fn constant_is_fixed_bitwise() {
        let (model, _) = cr(&[8, 8, 16]);
        let s = FlowState::new(ScalarField::constant(&model.grid, 1.7), 1e-4).unwrap();
        let dt = auto_dt(&model.grid, DEFAULT_SIGMA);
        let next = step(&model.grid, &s, dt).unwrap();
        assert_eq!(next.u, s.u);
        assert_eq!(next.step_count, 1);
    }

    #[test]
    fn rejects_unstable_step() {
        let (model, _) = cr(&[8, 8, 16]);
        let s = FlowState::new(ScalarField::constant(&model.grid, 1.0), 1.0).unwrap();
        let limit = stability_limit(&model.grid);
        assert!(matches!(step(&model.grid, &s, 1.01 * limit), Err(Error::StabilityViolated { .. })));
        assert!(matches!(step(&model.grid, &s, 0.0), Err(Error::StabilityViolated { .. })));
    }

    #[test]
    fn single_mode_decay() {
        let (model, _) = cr(&[32, 32, 64]);
        let grid = &model.grid;
        let eps = 0.1;
        let u0 = ScalarField::from_fn(grid, |p| 1.0 + eps * (2.0 * PI * p[0]).sin());
        let cfg = FlowConfig::new(0.01, 1000);
        let (dt, steps) = cfg.schedule(grid).unwrap();
        let mut s = FlowState::new(u0, dt).unwrap();
        for _ in 0..steps {
            s = step(grid, &s, dt).unwrap();
        }
        let t = steps as f64 * dt;
        let decay = (-4.0 * PI * PI * t).exp();
        let exact = ScalarField::from_fn(grid, |p| 1.0 + eps * decay * (2.0 * PI * p[0]).sin());
        let err = s.u.zip_map(&exact, |a, b| a - b).max_abs();
        assert!(err < 1e-5, "err {err}");
    }

    #[test]
    fn mass_conserved() {
        let (model, _) = cr(&[16, 16, 32]);
        let grid = &model.grid;
        let u0 = ScalarField::from_fn(grid, |p| 2.0 + (2.0 * PI * p[0]).sin() * (2.0 * PI * p[1]).cos());
        let dt = auto_dt(grid, DEFAULT_SIGMA);
        let mut s = FlowState::new(u0, dt).unwrap();
        let m0 = mass(grid, &s).unwrap();
        for _ in 0..100 {
            s = step(grid, &s, dt).unwrap();
        }
        assert!(((mass(grid, &s).unwrap() - m0) / m0).abs() < 1e-12);
    }

    #[test]
    fn schedule_lands_on_t_final() {
        let (model, _) = cr(&[8, 8, 16]);
        let cfg = FlowConfig::new(0.013, 3);
        let (dt, steps) = cfg.schedule(&model.grid).unwrap();
        assert!(dt <= auto_dt(&model.grid, DEFAULT_SIGMA));
        assert!((dt * steps as f64 - 0.013).abs() < 1e-15);
        assert_eq!(FlowConfig::new(0.0, 3).schedule(&model.grid).unwrap().1, 0);
        assert!(FlowConfig::new(-1.0, 3).schedule(&model.grid).is_err());
    }

    #[test]
    fn potentials_consistent() {
        let (model, _) = cr(&[8, 8, 16]);
        let u = ScalarField::from_fn(&model.grid, |p| 1.5 + 0.3 * (2.0 * PI * p[1]).cos());
        let pt = PotentialTriple::from_density(&model.grid, u).unwrap();
        assert!(pt.consistency_defect() < 1e-13);
        let w = pt.w(&model.grid).unwrap();
        let lap = laplacian(&model.grid, &pt.f).unwrap();
        let mut g0 = ScalarField::zeros(&model.grid);
        let mut g1 = ScalarField::zeros(&model.grid);
        frame_derivative_into(&model.grid, &pt.f.values, FrameIndex::Horizontal(0), &mut g0.values).unwrap();
        frame_derivative_into(&model.grid, &pt.f.values, FrameIndex::Horizontal(1), &mut g1.values).unwrap();
        let i = 5;
        let expect = 2.0 * lap.values[i] - g0.values[i].powi(2) - g1.values[i].powi(2);
        assert!((w.values[i] - expect).abs() < 1e-12);
        let bad = ScalarField::constant(&model.grid, -1.0);
        assert!(matches!(PotentialTriple::from_density(&model.grid, bad), Err(Error::NotPositive { .. })));
    }

    #[test]
    fn checkpoint_roundtrip() {
        let (model, _) = cr(&[8, 8, 16]);
        let u = ScalarField::from_fn(&model.grid, |p| 1.0 + 0.1 * p[0]);
        let s = FlowState { t: 0.25, u, step_count: 7, dt: 1e-3 };
        let bytes = encode_checkpoint(&model.grid, &s).unwrap();
        let back = decode_checkpoint(&bytes).unwrap().into_state(&model.grid).unwrap();
        assert_eq!(back, s);
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_checkpoint(&extra).is_err());
        let mut neg = bytes;
        neg[4..12].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(decode_checkpoint(&neg).is_err());
    }
}
