//! Suite orchestration: configuration files, static verification ladders,
//! refinement tables and flow runs, with CSV and JSON reports.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calculus::streaming::{self, bochner_residual, ricci_identity_residual};
use crate::calculus::{change_of_variable_residual, dt_lap_residual, ChangeOfVariableMode, GeneralPhi};
use crate::discretization::{
    frame_derivative, horizontal_divergence, integrate, integrate_by, make_initial_density, FrameIndex,
    InitialDataSpec, InitialShape, ScalarField, StencilOrder, TensorField,
};
use crate::error::{Error, Result};
use crate::functionals::{flow_identity_checks, paneitz_identity_residual, rf_integral_gap, FlowChecks, FlowTrace, Verdict};
use crate::geometry::{build_model, GeometricTensors, Model, ModelKind};
use crate::heat::{auto_dt, run_flow, step, FlowConfig, FlowState, PotentialTriple, DEFAULT_SIGMA};
use crate::report::{annotate_orders, ResidualReport};

/// Tolerances used to turn residuals into verdicts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Relative bound for checks that hold exactly on the grid.
    pub exact: f64,
    /// Observed orders must lie in `[p - order_below, p + order_above]`.
    pub order_below: f64,
    pub order_above: f64,
    /// Window offsets for the Paneitz identity.
    pub paneitz_below: f64,
    pub paneitz_above: f64,
    /// Window offsets for the closed-form oracles.
    pub oracle_below: f64,
    pub oracle_above: f64,
    /// `dN/dt + E` relative to `E` at the finest resolution.
    pub entropy_rate: f64,
    /// Relative bound for the linear change of variable, exact up to rounding
    /// that grows like `h^-3` through the third derivatives.
    pub linear_identity: f64,
    /// `dE/dt - E'` relative at the finest resolution (cr models).
    pub energy_prime: f64,
    pub mass_drift: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            exact: 1e-12,
            order_below: 0.5,
            order_above: 0.7,
            paneitz_below: 0.7,
            paneitz_above: 0.7,
            oracle_below: 0.3,
            oracle_above: 0.5,
            entropy_rate: 1e-4,
            linear_identity: 1e-9,
            energy_prime: 1e-3,
            mass_drift: 1e-12,
        }
    }
}

/// A validated suite description.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub model: ModelKind,
    pub n: usize,
    /// Resolution ladder, coarse to fine.
    pub grids: Vec<Vec<usize>>,
    pub order: StencilOrder,
    /// Initial density; its seed is [`SuiteConfig::seed`].
    pub init: InitialDataSpec,
    pub flow: FlowConfig,
    pub tol: Tolerances,
    /// Number of random fields in the divergence check.
    pub divergence_fields: usize,
    pub out: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GridEntry {
    Text(String),
    List(Vec<GridItem>),
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum GridItem {
    Text(String),
    Sizes(Vec<usize>),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInit {
    shape: Option<String>,
    amplitude: Option<f64>,
    band_limit: Option<usize>,
    bump_radius: Option<f64>,
    truncation_radius: Option<usize>,
    vertical_modulation: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFlow {
    t_final: Option<f64>,
    sample_every: Option<usize>,
    sigma: Option<f64>,
    dt: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    model: String,
    n: usize,
    grid: GridEntry,
    order: Option<usize>,
    #[serde(default)]
    init: RawInit,
    #[serde(default)]
    flow: RawFlow,
    #[serde(default)]
    tol: Tolerances,
    divergence_fields: Option<usize>,
    out: Option<PathBuf>,
    seed: Option<u64>,
}

/// Parses `"16x16x32,32x32x64"` into a ladder of axis sizes.
pub fn parse_grid_list(s: &str) -> Result<Vec<Vec<usize>>> {
    let ladder: Vec<Vec<usize>> = s
        .split(',')
        .map(str::trim)
        .filter(|e| !e.is_empty())
        .map(parse_grid)
        .collect::<Result<_>>()?;
    if ladder.is_empty() {
        return Err(Error::ConfigInvalid("empty resolution ladder".into()));
    }
    Ok(ladder)
}

/// Parses one `"16x16x32"` entry.
pub fn parse_grid(s: &str) -> Result<Vec<usize>> {
    s.trim()
        .split(['x', 'X'])
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::ConfigInvalid(format!("bad grid entry `{s}`")))
        })
        .collect()
}

pub fn grid_label(sizes: &[usize]) -> String {
    sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x")
}

impl SuiteConfig {
    /// Defaults for a model with the given ladder.
    pub fn new(model: ModelKind, n: usize, grids: Vec<Vec<usize>>) -> Self {
        SuiteConfig {
            model,
            n,
            grids,
            order: StencilOrder::Four,
            init: InitialDataSpec::bump(0.5, 0),
            flow: FlowConfig { t_final: 0.01, sample_every: 10, sigma: DEFAULT_SIGMA, dt: None },
            tol: Tolerances::default(),
            divergence_fields: 10,
            out: PathBuf::from("out"),
            seed: 0,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.message().to_string()))?;
        let grids = match raw.grid {
            GridEntry::Text(s) => parse_grid_list(&s)?,
            GridEntry::List(items) => items
                .into_iter()
                .map(|it| match it {
                    GridItem::Text(s) => parse_grid(&s),
                    GridItem::Sizes(v) => Ok(v),
                })
                .collect::<Result<_>>()?,
        };
        let mut cfg = SuiteConfig::new(ModelKind::parse(&raw.model)?, raw.n, grids);
        if let Some(p) = raw.order {
            cfg.order = StencilOrder::from_usize(p)?;
        }
        let i = raw.init;
        if let Some(s) = i.shape {
            cfg.init.shape = InitialShape::parse(&s)?;
        }
        cfg.init.amplitude = i.amplitude.unwrap_or(cfg.init.amplitude);
        cfg.init.band_limit = i.band_limit.unwrap_or(cfg.init.band_limit);
        cfg.init.bump_radius = i.bump_radius.unwrap_or(cfg.init.bump_radius);
        cfg.init.truncation_radius = i.truncation_radius.unwrap_or(cfg.init.truncation_radius);
        cfg.init.vertical_modulation = i.vertical_modulation.unwrap_or(cfg.init.vertical_modulation);
        let f = raw.flow;
        cfg.flow.t_final = f.t_final.unwrap_or(cfg.flow.t_final);
        cfg.flow.sample_every = f.sample_every.unwrap_or(cfg.flow.sample_every);
        cfg.flow.sigma = f.sigma.unwrap_or(cfg.flow.sigma);
        cfg.flow.dt = f.dt;
        cfg.tol = raw.tol;
        cfg.divergence_fields = raw.divergence_fields.unwrap_or(cfg.divergence_fields);
        cfg.out = raw.out.unwrap_or(cfg.out);
        cfg.seed = raw.seed.unwrap_or(0);
        cfg.init.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    /// Checks every ladder entry against the lattice and the scalar settings.
    pub fn validate(&self) -> Result<()> {
        if self.grids.is_empty() {
            return Err(Error::ConfigInvalid("empty resolution ladder".into()));
        }
        for g in &self.grids {
            build_model(self.model, self.n, g, self.order)?;
        }
        let i = &self.init;
        if !i.amplitude.is_finite() || !i.bump_radius.is_finite() || !i.vertical_modulation.is_finite() {
            return Err(Error::ConfigInvalid("non-finite initial-data parameter".into()));
        }
        if i.shape == InitialShape::Constant && i.amplitude <= 0.0 {
            return Err(Error::ConfigInvalid("constant initial data must be positive".into()));
        }
        if i.shape == InitialShape::PeriodizedBump && (i.bump_radius <= 0.0 || i.amplitude <= -1.0) {
            return Err(Error::ConfigInvalid("bump needs radius > 0 and amplitude > -1".into()));
        }
        if !(self.flow.sigma > 0.0 && self.flow.sigma.is_finite()) {
            return Err(Error::ConfigInvalid(format!("flow.sigma = {}", self.flow.sigma)));
        }
        if let Some(dt) = self.flow.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::ConfigInvalid(format!("flow.dt = {dt}")));
            }
        }
        if !(self.flow.t_final >= 0.0 && self.flow.t_final.is_finite()) || self.flow.sample_every == 0 {
            return Err(Error::ConfigInvalid("flow.t_final must be >= 0 and flow.sample_every > 0".into()));
        }
        let t = &self.tol;
        let all = [
            t.exact,
            t.order_below,
            t.order_above,
            t.paneitz_below,
            t.paneitz_above,
            t.oracle_below,
            t.oracle_above,
            t.entropy_rate,
            t.linear_identity,
            t.energy_prime,
            t.mass_drift,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::ConfigInvalid("tolerances must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<()> {
        if let Some(m) = &o.model {
            self.model = ModelKind::parse(m)?;
        }
        if let Some(n) = o.n {
            self.n = n;
        }
        if let Some(g) = &o.grid {
            self.grids = parse_grid_list(g)?;
        }
        if let Some(p) = o.order {
            self.order = StencilOrder::from_usize(p)?;
        }
        if let Some(t) = o.t_final {
            self.flow.t_final = t;
        }
        if let Some(s) = o.seed {
            self.seed = s;
            self.init.seed = s;
        }
        if let Some(out) = &o.out {
            self.out = out.clone();
        }
        self.validate()
    }

    fn p(&self) -> f64 {
        self.order.as_usize() as f64
    }
}

/// Command-line overrides of config keys.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub model: Option<String>,
    pub n: Option<usize>,
    pub grid: Option<String>,
    pub order: Option<usize>,
    pub t_final: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// Holds to rounding on every grid, within the given relative bound.
    Exact(f64),
    /// Converges at order `p` inside the window `[p - below, p + above]`.
    Convergent { below: f64, above: f64 },
    /// Recorded, never fails.
    Diagnostic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Error,
    /// A convergence check on a single resolution.
    Unrated,
    Diagnostic,
    /// A conditional verdict whose hypothesis failed.
    Inconclusive,
}

impl Status {
    pub fn is_failure(self) -> bool {
        matches!(self, Status::Fail | Status::Error)
    }
}

/// One residual at one resolution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckRow {
    pub check: String,
    pub model: String,
    pub grid: String,
    pub h: f64,
    pub abs: f64,
    pub rel: f64,
    pub order_vs_prev: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckSummary {
    pub status: Status,
    pub abs: f64,
    pub rel: f64,
    pub order: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Residual rows of a suite and the per-check verdicts.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct SuiteReport {
    pub rows: Vec<CheckRow>,
    pub summary: BTreeMap<String, CheckSummary>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.summary.values().all(|s| !s.status.is_failure())
    }

    pub fn status(&self, check: &str) -> Option<Status> {
        self.summary.get(check).map(|s| s.status)
    }

    /// Rows of one check, coarse to fine.
    pub fn ladder(&self, check: &str) -> Vec<&CheckRow> {
        self.rows.iter().filter(|r| r.check == check).collect()
    }

    /// `check_name,model,grid,h,abs_residual,rel_residual,order_vs_prev`
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["check_name", "model", "grid", "h", "abs_residual", "rel_residual", "order_vs_prev"])
            .map_err(csv_err)?;
        for r in &self.rows {
            w.write_record([
                r.check.clone(),
                r.model.clone(),
                r.grid.clone(),
                format!("{:e}", r.h),
                format!("{:e}", r.abs),
                format!("{:e}", r.rel),
                r.order_vs_prev.map(|o| format!("{o:.4}")).unwrap_or_default(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// `check,h_coarse,h_fine,order` for each consecutive pair of a ladder.
    pub fn write_order_table<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["check", "h_coarse", "h_fine", "order"]).map_err(csv_err)?;
        for name in self.summary.keys() {
            let ladder = self.ladder(name);
            for pair in ladder.windows(2) {
                w.write_record([
                    name.clone(),
                    format!("{:e}", pair[0].h),
                    format!("{:e}", pair[1].h),
                    pair[1].order_vs_prev.map(|o| format!("{o:.4}")).unwrap_or_default(),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.summary).map_err(|e| Error::Decode(e.to_string()))
    }

    /// Writes `<prefix>_residuals.csv` and `<prefix>_summary.json` under `dir`.
    pub fn write_files(&self, dir: &Path, prefix: &str) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.write_csv(fs::File::create(dir.join(format!("{prefix}_residuals.csv")))?)?;
        fs::write(dir.join(format!("{prefix}_summary.json")), self.summary_json()?)?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

struct Ctx<'a> {
    model: &'a Model,
    tensors: &'a GeometricTensors,
    /// Potentials of the initial density; a constant stand-in when no group reads them.
    pt: &'a PotentialTriple,
    seed: u64,
    fields: usize,
}

type CheckFn = fn(&Ctx) -> Result<Vec<ResidualReport>>;

struct CheckGroup {
    names: &'static [&'static str],
    run: CheckFn,
    /// Whether the check reads the initial density.
    density: bool,
}

const STATIC_GROUPS: &[CheckGroup] = &[
    CheckGroup { names: &["divergence"], run: divergence_check, density: true },
    CheckGroup { names: &["ricci_identity"], run: ricci, density: true },
    CheckGroup { names: &["bochner"], run: bochner, density: true },
    CheckGroup { names: &["change_of_variable_minus_two_log"], run: cov_minus_two_log, density: true },
    CheckGroup { names: &["change_of_variable_linear"], run: cov_linear, density: true },
    CheckGroup { names: &["change_of_variable_sqrt_u"], run: cov_sqrt_u, density: true },
    CheckGroup { names: &["paneitz_identity"], run: paneitz, density: true },
    CheckGroup { names: &["rf_gap_1", "rf_gap_2"], run: rf_gaps, density: true },
    CheckGroup { names: &["dt_lap"], run: dt_lap, density: true },
    CheckGroup {
        names: &["c_divergence", "c_summation_by_parts", "paneitz_pairing_sign", "traceless_hessian_min"],
        run: c_operator_checks,
        density: true,
    },
];

const ORACLE_GROUPS: &[CheckGroup] = &[
    CheckGroup { names: &["laplacian_oracle"], run: laplacian_oracle, density: false },
    CheckGroup { names: &["heat_decay_oracle"], run: heat_decay_oracle, density: false },
];

fn kind_of(name: &str, tol: &Tolerances) -> CheckKind {
    match name {
        "divergence" | "c_divergence" | "c_summation_by_parts" => CheckKind::Exact(tol.exact),
        "change_of_variable_linear" => CheckKind::Exact(tol.linear_identity),
        "paneitz_pairing_sign" | "traceless_hessian_min" => CheckKind::Diagnostic,
        "paneitz_identity" => CheckKind::Convergent { below: tol.paneitz_below, above: tol.paneitz_above },
        "laplacian_oracle" | "heat_decay_oracle" => {
            CheckKind::Convergent { below: tol.oracle_below, above: tol.oracle_above }
        }
        _ => CheckKind::Convergent { below: tol.order_below, above: tol.order_above },
    }
}

/// `max_j |integral nabla^* sigma_j| / ||sigma_j||_inf` over random horizontal
/// fields `sigma_j,a = e_{a+j} g_j`, `g_j` random bumps.
fn divergence_check(c: &Ctx) -> Result<Vec<ResidualReport>> {
    let grid = &c.model.grid;
    let m = grid.m();
    let (mut worst_abs, mut worst_rel) = (0.0f64, 0.0f64);
    for j in 0..c.fields {
        let seed = c.seed.wrapping_mul(1000).wrapping_add(17 + j as u64);
        let g = make_initial_density(&InitialDataSpec::bump(1.0, seed), &c.model.geometry, grid)?;
        let comps = (0..m)
            .map(|a| frame_derivative(grid, &g, FrameIndex::Horizontal((a + j) % m)))
            .collect::<Result<Vec<_>>>()?;
        drop(g);
        let sup = comps.iter().map(ScalarField::max_abs).fold(0.0, f64::max);
        let sigma = TensorField::new(1, m, comps)?;
        let total = integrate(grid, &horizontal_divergence(grid, &sigma)?)?.abs();
        worst_abs = worst_abs.max(total);
        if sup > 0.0 {
            worst_rel = worst_rel.max(total / sup);
        }
    }
    let mut r = ResidualReport::new("divergence", worst_abs, 0.0, grid.h_ref());
    r.rel = worst_rel;
    Ok(vec![r])
}

fn ricci(c: &Ctx) -> Result<Vec<ResidualReport>> {
    Ok(vec![ricci_identity_residual(c.model, &c.pt.f)?])
}

fn bochner(c: &Ctx) -> Result<Vec<ResidualReport>> {
    Ok(vec![bochner_residual(c.model, &c.pt.f, c.tensors)?])
}

fn paneitz(c: &Ctx) -> Result<Vec<ResidualReport>> {
    Ok(vec![paneitz_identity_residual(c.model, c.pt, c.tensors)?])
}

fn dt_lap(c: &Ctx) -> Result<Vec<ResidualReport>> {
    Ok(vec![dt_lap_residual(c.model, c.pt)?])
}

fn cov_minus_two_log(c: &Ctx) -> Result<Vec<ResidualReport>> {
    let mode = ChangeOfVariableMode::GeneralPhi(GeneralPhi::MinusTwoLog);
    Ok(vec![change_of_variable_residual(c.model, &c.pt.big_f, mode, c.tensors)?])
}

fn cov_linear(c: &Ctx) -> Result<Vec<ResidualReport>> {
    let mode = ChangeOfVariableMode::GeneralPhi(GeneralPhi::Linear(-1.7));
    Ok(vec![change_of_variable_residual(c.model, &c.pt.big_f, mode, c.tensors)?])
}

fn cov_sqrt_u(c: &Ctx) -> Result<Vec<ResidualReport>> {
    Ok(vec![change_of_variable_residual(c.model, &c.pt.big_f, ChangeOfVariableMode::SqrtU, c.tensors)?])
}

fn rf_gaps(c: &Ctx) -> Result<Vec<ResidualReport>> {
    let (a, b) = rf_integral_gap(c.model, c.pt, c.tensors)?;
    Ok(vec![a, b])
}

/// `integral C F`, `integral F C F + integral P_F(nabla F)`, and two signed
/// diagnostics: the ratio `integral F C F / integral |F C F|` and
/// `min |(nabla^2 f)_0|^2`.
fn c_operator_checks(c: &Ctx) -> Result<Vec<ResidualReport>> {
    let grid = &c.model.grid;
    let h = grid.h_ref();
    let big_f = &c.pt.big_f;
    let cf = streaming::c_operator(c.model, big_f, c.tensors)?;
    let total = integrate(grid, &cf)?;
    let total_abs = integrate_by(grid, |i| cf.values[i].abs())?;
    let pairing = integrate_by(grid, |i| big_f.values[i] * cf.values[i])?;
    let pairing_abs = integrate_by(grid, |i| (big_f.values[i] * cf.values[i]).abs())?;
    drop(cf);
    let pf = integrate(grid, &streaming::p_function(c.model, big_f, c.tensors)?)?;
    let tl = streaming::traceless_hessian_sq(c.model, &c.pt.f)?;
    let tl_min = tl.min();
    let tl_max = tl.max_abs();
    let mut sign = ResidualReport::new("paneitz_pairing_sign", 0.0, 0.0, h);
    sign.abs = pairing;
    sign.rel = if pairing_abs > 0.0 { pairing / pairing_abs } else { 0.0 };
    let mut tmin = ResidualReport::new("traceless_hessian_min", 0.0, 0.0, h);
    tmin.abs = tl_min;
    tmin.rel = if tl_max > 0.0 { tl_min / tl_max } else { 0.0 };
    Ok(vec![
        ResidualReport::new("c_divergence", total, total_abs, h),
        ResidualReport::new("c_summation_by_parts", pairing + pf, pairing_abs.max(pf.abs()), h),
        sign,
        tmin,
    ])
}

/// `Delta sin(2 pi x_1) = -4 pi^2 sin(2 pi x_1)`, max-norm relative error.
fn laplacian_oracle(c: &Ctx) -> Result<Vec<ResidualReport>> {
    let grid = &c.model.grid;
    let k = 2.0 * PI;
    let f = ScalarField::from_fn(grid, |p| (k * p[0]).sin());
    let lap = streaming::laplacian(grid, &f)?;
    let err = lap.values.iter().zip(&f.values).map(|(l, s)| (l + k * k * s).abs()).fold(0.0, f64::max);
    Ok(vec![ResidualReport::new("laplacian_oracle", err, k * k, grid.h_ref())])
}

pub const ORACLE_T_FINAL: f64 = 0.01;
pub const ORACLE_EPSILON: f64 = 0.1;
/// Safety factor of the oracle run; the mode decays slowly, so time error stays negligible.
pub const ORACLE_SIGMA: f64 = 2.0;

/// `u = 1 + eps exp(-4 pi^2 t) sin(2 pi x_1)` evolved to `t = 0.01`.
fn heat_decay_oracle(c: &Ctx) -> Result<Vec<ResidualReport>> {
    let grid = &c.model.grid;
    let k = 2.0 * PI;
    let u0 = ScalarField::from_fn(grid, |p| 1.0 + ORACLE_EPSILON * (k * p[0]).sin());
    let steps = (ORACLE_T_FINAL / auto_dt(grid, ORACLE_SIGMA)).ceil() as usize;
    let dt = ORACLE_T_FINAL / steps as f64;
    let mut state = FlowState::new(u0, dt)?;
    for _ in 0..steps {
        state = step(grid, &state, dt)?;
    }
    let amp = ORACLE_EPSILON * (-k * k * ORACLE_T_FINAL).exp();
    let exact = ScalarField::from_fn(grid, |p| 1.0 + amp * (k * p[0]).sin());
    let err = state.u.zip_map(&exact, |a, b| a - b).max_abs();
    Ok(vec![ResidualReport::new("heat_decay_oracle", err, amp, grid.h_ref())])
}

fn model_label(cfg: &SuiteConfig) -> String {
    format!("{}{}", cfg.model, cfg.n)
}

fn run_groups(cfg: &SuiteConfig, sizes: &[usize], groups: &[&CheckGroup]) -> Vec<(String, std::result::Result<ResidualReport, String>)> {
    let fail_all = |msg: String| {
        groups
            .iter()
            .flat_map(|g| g.names.iter().map(|n| (n.to_string(), Err(msg.clone()))).collect::<Vec<_>>())
            .collect::<Vec<_>>()
    };
    let (model, tensors) = match build_model(cfg.model, cfg.n, sizes, cfg.order) {
        Ok(x) => x,
        Err(e) => return fail_all(e.to_string()),
    };
    let density = if groups.iter().any(|g| g.density) {
        make_initial_density(&cfg.init, &model.geometry, &model.grid)
    } else {
        Ok(ScalarField::constant(&model.grid, 1.0))
    };
    let pt = match density.and_then(|u| PotentialTriple::from_density(&model.grid, u)) {
        Ok(pt) => pt,
        Err(e) => return fail_all(e.to_string()),
    };
    let ctx = Ctx { model: &model, tensors: &tensors, pt: &pt, seed: cfg.seed, fields: cfg.divergence_fields };
    let mut out = Vec::new();
    for g in groups {
        match (g.run)(&ctx) {
            Ok(reports) => {
                for (name, r) in g.names.iter().zip(reports) {
                    out.push((name.to_string(), Ok(r)));
                }
            }
            Err(e) => {
                for name in g.names {
                    out.push((name.to_string(), Err(e.to_string())));
                }
            }
        }
    }
    out
}

/// Model/size combinations where the heat oracle runs (it is too slow on 7-D grids).
fn oracle_groups(cfg: &SuiteConfig) -> Vec<&'static CheckGroup> {
    ORACLE_GROUPS
        .iter()
        .filter(|g| g.names[0] != "heat_decay_oracle" || cfg.model == ModelKind::Cr)
        .collect()
}

fn run_ladder(cfg: &SuiteConfig, groups: &[&CheckGroup]) -> SuiteReport {
    let h_of = |sizes: &[usize]| {
        build_model(cfg.model, cfg.n, sizes, cfg.order).map(|(m, _)| m.grid.h_ref()).unwrap_or(f64::NAN)
    };
    let mut per_check: BTreeMap<String, Vec<(String, std::result::Result<ResidualReport, String>)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for sizes in &cfg.grids {
        let label = grid_label(sizes);
        for (name, res) in run_groups(cfg, sizes, groups) {
            if !per_check.contains_key(&name) {
                order.push(name.clone());
            }
            per_check.entry(name).or_default().push((label.clone(), res));
        }
    }
    let mut report = SuiteReport::default();
    let label = model_label(cfg);
    for name in order {
        let entries = per_check.remove(&name).unwrap_or_default();
        let mut ladder: Vec<ResidualReport> = Vec::new();
        let mut errors: Vec<Option<String>> = Vec::new();
        for (grid, res) in &entries {
            match res {
                Ok(r) => {
                    ladder.push(r.clone());
                    errors.push(None);
                }
                Err(e) => {
                    let sizes = parse_grid(grid).unwrap_or_default();
                    let mut r = ResidualReport::new(name.clone(), f64::NAN, 0.0, h_of(&sizes));
                    r.rel = f64::NAN;
                    ladder.push(r);
                    errors.push(Some(e.clone()));
                }
            }
        }
        let kind = kind_of(&name, &cfg.tol);
        if matches!(kind, CheckKind::Convergent { .. }) {
            annotate_orders(&mut ladder);
        }
        for ((grid, _), (r, e)) in entries.iter().zip(ladder.iter().zip(&errors)) {
            report.rows.push(CheckRow {
                check: name.clone(),
                model: label.clone(),
                grid: grid.clone(),
                h: r.h,
                abs: r.abs,
                rel: r.rel,
                order_vs_prev: r.order_vs_prev,
                error: e.clone(),
            });
        }
        let first_error = errors.iter().flatten().next().cloned();
        let status = if first_error.is_some() {
            Status::Error
        } else {
            ladder_status(cfg, kind, &ladder)
        };
        let last = ladder.last().expect("ladder has at least one resolution");
        report.summary.insert(
            name.clone(),
            CheckSummary { status, abs: last.abs, rel: last.rel, order: last.order_vs_prev, error: first_error },
        );
    }
    report
}

/// Verdict for one check across the ladder. cr ladders are judged by the
/// order window, qc ladders (too coarse for orders) by strict decrease.
fn ladder_status(cfg: &SuiteConfig, kind: CheckKind, ladder: &[ResidualReport]) -> Status {
    match kind {
        CheckKind::Diagnostic => Status::Diagnostic,
        CheckKind::Exact(bound) => {
            if ladder.iter().all(|r| r.rel <= bound) {
                Status::Pass
            } else {
                Status::Fail
            }
        }
        CheckKind::Convergent { below, above } => {
            if ladder.iter().all(|r| r.abs == 0.0) {
                return Status::Pass;
            }
            if ladder.iter().any(|r| !r.abs.is_finite()) {
                return Status::Fail;
            }
            if ladder.len() < 2 {
                return Status::Unrated;
            }
            let ok = match cfg.model {
                ModelKind::Cr => {
                    let p = cfg.p();
                    ladder[1..]
                        .iter()
                        .all(|r| r.order_vs_prev.is_some_and(|o| o >= p - below && o <= p + above))
                }
                ModelKind::Qc => ladder.windows(2).all(|w| w[1].abs < w[0].abs),
            };
            if ok {
                Status::Pass
            } else {
                Status::Fail
            }
        }
    }
}

/// Static residual suite at every resolution of the ladder.
pub fn verify(cfg: &SuiteConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    let groups: Vec<&CheckGroup> = STATIC_GROUPS.iter().collect();
    Ok(run_ladder(cfg, &groups))
}

/// The static suite plus the closed-form oracles; needs at least two resolutions.
pub fn refine(cfg: &SuiteConfig) -> Result<SuiteReport> {
    cfg.validate()?;
    if cfg.grids.len() < 2 {
        return Err(Error::ConfigInvalid("refinement needs at least two resolutions".into()));
    }
    let mut groups: Vec<&CheckGroup> = STATIC_GROUPS.iter().collect();
    groups.extend(oracle_groups(cfg));
    Ok(run_ladder(cfg, &groups))
}

/// Runs only the named checks (static or oracle) over the ladder.
pub fn run_checks(cfg: &SuiteConfig, names: &[&str]) -> Result<SuiteReport> {
    cfg.validate()?;
    let groups: Vec<&CheckGroup> = STATIC_GROUPS
        .iter()
        .chain(ORACLE_GROUPS)
        .filter(|g| g.names.iter().any(|n| names.contains(n)))
        .collect();
    if groups.is_empty() {
        return Err(Error::ConfigInvalid(format!("no check named {names:?}")));
    }
    let mut report = run_ladder(cfg, &groups);
    report.rows.retain(|r| names.contains(&r.check.as_str()));
    report.summary.retain(|k, _| names.contains(&k.as_str()));
    Ok(report)
}

/// All check names known to the harness.
pub fn check_names() -> Vec<&'static str> {
    STATIC_GROUPS.iter().chain(ORACLE_GROUPS).flat_map(|g| g.names.iter().copied()).collect()
}

/// One flow run per resolution with its identity checks.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationReport {
    pub grids: Vec<String>,
    pub traces: Vec<FlowTrace>,
    pub checks: Vec<FlowChecks>,
    pub report: SuiteReport,
}

impl SimulationReport {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }

    /// `trace_<grid>.csv` per resolution plus `simulate_residuals.csv` and
    /// `simulate_summary.json`.
    pub fn write_files(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (g, t) in self.grids.iter().zip(&self.traces) {
            t.write_csv(fs::File::create(dir.join(format!("trace_{g}.csv")))?)?;
        }
        self.report.write_files(dir, "simulate")
    }
}

/// Runs the heat flow at each resolution and evaluates the time-differenced
/// identities. The finest resolution is the reference for the tolerances.
pub fn simulate(cfg: &SuiteConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    if !(cfg.flow.t_final > 0.0) {
        return Err(Error::ConfigInvalid("simulation needs t_final > 0".into()));
    }
    let mut grids = Vec::new();
    let mut traces = Vec::new();
    let mut checks = Vec::new();
    for sizes in &cfg.grids {
        let (model, tensors) = build_model(cfg.model, cfg.n, sizes, cfg.order)?;
        let u0 = make_initial_density(&cfg.init, &model.geometry, &model.grid)?;
        let trace = run_flow(&model, &tensors, u0, &cfg.flow)?;
        checks.push(flow_identity_checks(&trace)?);
        traces.push(trace);
        grids.push(grid_label(sizes));
    }
    let report = flow_report(cfg, &grids, &checks);
    Ok(SimulationReport { grids, traces, checks, report })
}

fn flow_report(cfg: &SuiteConfig, grids: &[String], checks: &[FlowChecks]) -> SuiteReport {
    let label = model_label(cfg);
    let mut report = SuiteReport::default();
    let signed = |name: &str, v: f64, rel: f64, h: f64| {
        let mut r = ResidualReport::new(name, 0.0, 0.0, h);
        r.abs = v;
        r.rel = rel;
        r
    };
    let mut ladders: Vec<(&str, Vec<ResidualReport>)> = vec![
        ("entropy_rate", Vec::new()),
        ("energy_prime", Vec::new()),
        ("energy_formula2", Vec::new()),
        ("mass_drift", Vec::new()),
        ("entropy_increase", Vec::new()),
        ("energy_increase", Vec::new()),
        ("paneitz_pairing_min", Vec::new()),
    ];
    for c in checks {
        let h = c.entropy_rate.h;
        ladders[0].1.push(c.entropy_rate.clone());
        ladders[1].1.push(c.energy_prime.clone());
        ladders[2].1.push(c.formula2.clone());
        ladders[3].1.push(signed("mass_drift", c.mass_drift, c.mass_drift, h));
        ladders[4].1.push(signed("entropy_increase", c.entropy_increase, c.entropy_increase, h));
        ladders[5].1.push(signed("energy_increase", c.energy_increase, c.energy_increase, h));
        ladders[6].1.push(signed("paneitz_pairing_min", c.min_paneitz_pairing, c.min_paneitz_ratio, h));
    }
    let reference = checks.last().expect("at least one resolution");
    for (name, mut ladder) in ladders {
        let status = match name {
            "entropy_rate" => pass_if(ladder.last().is_some_and(|r| r.rel <= cfg.tol.entropy_rate)),
            "energy_prime" => {
                let at_ref = cfg.model == ModelKind::Qc || ladder.last().is_some_and(|r| r.rel <= cfg.tol.energy_prime);
                let decreasing = ladder.windows(2).all(|w| w[1].abs < w[0].abs);
                pass_if(at_ref && decreasing)
            }
            "mass_drift" => pass_if(ladder.iter().all(|r| r.abs <= cfg.tol.mass_drift)),
            "entropy_increase" | "energy_increase" => match reference.monotone {
                Verdict::Pass => Status::Pass,
                Verdict::Fail => Status::Fail,
                Verdict::Inconclusive => Status::Inconclusive,
            },
            _ => Status::Diagnostic,
        };
        if matches!(name, "entropy_rate" | "energy_prime" | "energy_formula2") {
            annotate_orders(&mut ladder);
        }
        for (g, r) in grids.iter().zip(&ladder) {
            report.rows.push(CheckRow {
                check: name.to_string(),
                model: label.clone(),
                grid: g.clone(),
                h: r.h,
                abs: r.abs,
                rel: r.rel,
                order_vs_prev: r.order_vs_prev,
                error: None,
            });
        }
        let last = ladder.last().expect("at least one resolution");
        report.summary.insert(
            name.to_string(),
            CheckSummary { status, abs: last.abs, rel: last.rel, order: last.order_vs_prev, error: None },
        );
    }
    report
}

fn pass_if(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_lists() {
        assert_eq!(parse_grid_list("16x16x32, 32x32x64").unwrap(), vec![vec![16, 16, 32], vec![32, 32, 64]]);
        assert!(parse_grid_list("").is_err());
        assert!(parse_grid_list("16xx32").is_err());
        assert!(parse_grid("16x-1").is_err());
    }

    #[test]
    fn config_from_toml() {
        let text = r#"
model = "cr"
n = 1
grid = "16x16x32,32x32x64"
order = 2
seed = 7
out = "results"
init.shape = "planar_modes"
init.amplitude = 0.3
flow.t_final = 0.02
flow.sample_every = 4
tol.exact = 1e-11
"#;
        let cfg = SuiteConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.grids.len(), 2);
        assert_eq!(cfg.order, StencilOrder::Two);
        assert_eq!(cfg.init.shape, InitialShape::PlanarModes);
        assert_eq!(cfg.init.seed, 7);
        assert_eq!(cfg.flow.sample_every, 4);
        assert_eq!(cfg.tol.exact, 1e-11);
        assert_eq!(cfg.tol.order_above, 0.7);
        assert_eq!(cfg.out, PathBuf::from("results"));

        let list = "model = \"qc\"\nn = 1\ngrid = [[8,8,8,8,8,8,8]]\n";
        assert_eq!(SuiteConfig::from_toml_str(list).unwrap().grids, vec![vec![8; 7]]);
    }

    #[test]
    fn bad_configs_rejected() {
        let cases = [
            "model = \"cr\"\nn = 3\ngrid = \"16x16x32\"\n",
            "model = \"cr\"\nn = 1\ngrid = \"16x16x24\"\n",
            "model = \"cr\"\nn = 1\ngrid = \"16x16x32\"\nbogus = 1\n",
            "model = \"cr\"\nn = 1\ngrid = \"16x16x32\"\nflow.sample_every = 0\n",
            "model = \"cr\"\nn = 1\ngrid = \"16x16x32\"\ntol.exact = -1.0\n",
            "model = \"cr\"\nn = 1\ngrid = \"16x16x32\"\norder = 3\n",
            "model = \"xx\"\nn = 1\ngrid = \"16x16x32\"\n",
        ];
        for c in cases {
            assert!(SuiteConfig::from_toml_str(c).is_err(), "{c}");
        }
    }

    #[test]
    fn overrides_apply() {
        let mut cfg = SuiteConfig::new(ModelKind::Cr, 1, vec![vec![16, 16, 32]]);
        let o = Overrides { grid: Some("8x8x16".into()), seed: Some(3), t_final: Some(0.5), ..Default::default() };
        cfg.apply(&o).unwrap();
        assert_eq!(cfg.grids, vec![vec![8, 8, 16]]);
        assert_eq!(cfg.init.seed, 3);
        assert_eq!(cfg.flow.t_final, 0.5);
        assert!(cfg.apply(&Overrides { n: Some(5), ..Default::default() }).is_err());
    }

    #[test]
    fn constant_data_pass_everything() {
        let mut cfg = SuiteConfig::new(ModelKind::Cr, 1, vec![vec![8, 8, 16], vec![16, 16, 32]]);
        cfg.init = InitialDataSpec::constant(1.3);
        cfg.divergence_fields = 2;
        let r = verify(&cfg).unwrap();
        assert!(r.passed(), "{:?}", r.summary);
        for row in &r.rows {
            if matches!(kind_of(&row.check, &cfg.tol), CheckKind::Convergent { .. } | CheckKind::Diagnostic) {
                assert_eq!(row.abs, 0.0, "{}", row.check);
            }
        }
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("check_name,model,grid,h,abs_residual,rel_residual,order_vs_prev\n"));
    }

    #[test]
    fn errors_become_rows() {
        let mut cfg = SuiteConfig::new(ModelKind::Cr, 1, vec![vec![8, 8, 16]]);
        cfg.init = InitialDataSpec::bump(-1.5, 1);
        // run_ladder skips validation, so the density is allowed to go negative
        let groups: Vec<&CheckGroup> = STATIC_GROUPS.iter().collect();
        let r = run_ladder(&cfg, &groups);
        assert!(!r.passed());
        assert!(r.summary.values().all(|s| s.status == Status::Error));
        assert!(r.rows.iter().all(|row| row.error.is_some()));
    }

    #[test]
    fn flat_flow_is_monotone() {
        let mut cfg = SuiteConfig::new(ModelKind::Cr, 1, vec![vec![8, 8, 16]]);
        cfg.init = InitialDataSpec::constant(2.0);
        cfg.flow.t_final = 1e-3;
        cfg.flow.sample_every = 2;
        let sim = simulate(&cfg).unwrap();
        assert_eq!(sim.report.status("entropy_increase"), Some(Status::Pass));
        assert_eq!(sim.report.status("mass_drift"), Some(Status::Pass));
        assert_eq!(sim.checks[0].monotone, Verdict::Pass);
    }
}
