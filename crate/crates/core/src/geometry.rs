//! Flat model manifolds: the CR Heisenberg nilmanifolds and the quaternionic
//! Heisenberg nilmanifold, with their left-invariant frames, complex
//! structures and the algebraic curvature/torsion assemblies.
//!
//! Every model is a two-step nilpotent group `R^m x R^k` with exponential
//! coordinates `(x, t)` and product
//!
//! ```text
//! (x, t) * (x', t') = (x + x', t_s + t'_s + sum_{b,c} x_b x'_c (I_s)_{bc})
//! ```
//!
//! where `I_1..I_k` are the complex structures on the horizontal space. The
//! left-invariant horizontal frame is `e_a = d/dx_a + sum_s alpha_{s,a}(x) d/dt_s`
//! with `alpha_{s,a}(x) = sum_c x_c (I_s)_{ca}`, the vertical frame is
//! `xi_s = d/dt_s`, and
//!
//! ```text
//! [e_a, e_b] = 2 (I_s)_{ab} xi_s,    omega_s(e_a, e_b) = g(I_s e_a, e_b) = -(I_s)_{ab}.
//! ```
//!
//! so that `2 omega_s = d eta_s` on the horizontal space and the Ricci identity
//! reads `X(Yf) - Y(Xf) = -2 sum_s omega_s(X, Y) xi_s f`. All connection
//! coefficients vanish in this frame; torsion and curvature are zero.

use std::fmt;

use nalgebra::DMatrix;
use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::discretization::{Grid, StencilOrder};
use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Identifier of the lattice convention documented in the module header.
pub const LATTICE_ID: &str = "integer-lattice/centered-domain/v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cr,
    Qc,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cr" => Ok(ModelKind::Cr),
            "qc" => Ok(ModelKind::Qc),
            other => Err(Error::ConfigInvalid(format!("unknown model kind `{other}` (use cr or qc)"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::Cr => write!(f, "CR"),
            ModelKind::Qc => write!(f, "QC"),
        }
    }
}

/// `alpha_n = 2(2n+3)/(2n+1)` as an exact rational.
pub fn alpha_ratio(n: usize) -> Ratio<i64> {
    let n = n as i64;
    Ratio::new(2 * (2 * n + 3), 2 * n + 1)
}

/// `beta_n = 4(2n-1)(n+2)/((2n+1)(n-1))`; undefined at `n = 1`.
pub fn beta_ratio(n: usize) -> Option<Ratio<i64>> {
    if n < 2 {
        return None;
    }
    let n = n as i64;
    Some(Ratio::new(4 * (2 * n - 1) * (n + 2), (2 * n + 1) * (n - 1)))
}

fn ratio_to_f64(r: Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub n: usize,
    /// Horizontal dimension (2n for CR, 4n for QC).
    pub m: usize,
    /// Vertical dimension (1 for CR, 3 for QC).
    pub k: usize,
    pub grid_sizes: Vec<usize>,
    pub lattice_id: &'static str,
    pub alpha_n: f64,
    pub beta_n: Option<f64>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::UnsupportedModel { kind: kind.to_string(), n });
        }
        let (m, k) = match kind {
            ModelKind::Cr => (2 * n, 1),
            ModelKind::Qc => (4 * n, 3),
        };
        Ok(ModelSpec {
            kind,
            n,
            m,
            k,
            grid_sizes: Vec::new(),
            lattice_id: LATTICE_ID,
            alpha_n: ratio_to_f64(alpha_ratio(n)),
            beta_n: match kind {
                ModelKind::Qc => beta_ratio(n).map(ratio_to_f64),
                ModelKind::Cr => None,
            },
        })
    }

    pub fn dim(&self) -> usize {
        self.m + self.k
    }

    pub fn label(&self) -> String {
        format!("{}{}", self.kind, self.n)
    }
}

/// The complex structures `J` (CR) or `I_1, I_2, I_3` (QC) as orthogonal
/// matrices acting on horizontal frame components: `I_s e_a = sum_b (I_s)_{ba} e_b`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexStructures {
    pub matrices: Vec<Matrix>,
}

impl ComplexStructures {
    fn cr(n: usize) -> Self {
        let m = 2 * n;
        let mut j = Matrix::zeros(m, m);
        for i in 0..n {
            // J x_i = y_i, J y_i = -x_i
            j[(2 * i + 1, 2 * i)] = 1.0;
            j[(2 * i, 2 * i + 1)] = -1.0;
        }
        ComplexStructures { matrices: vec![j] }
    }

    fn qc(n: usize) -> Self {
        // left multiplication by i, j, k on each quaternionic block (1, i, j, k)
        let li: [[f64; 4]; 4] = [
            [0.0, -1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, -1.0],
            [0.0, 0.0, 1.0, 0.0],
        ];
        let lj: [[f64; 4]; 4] = [
            [0.0, 0.0, -1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
            [1.0, 0.0, 0.0, 0.0],
            [0.0, -1.0, 0.0, 0.0],
        ];
        let lk: [[f64; 4]; 4] = [
            [0.0, 0.0, 0.0, -1.0],
            [0.0, 0.0, -1.0, 0.0],
            [0.0, 1.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
        ];
        let m = 4 * n;
        let matrices = [li, lj, lk]
            .iter()
            .map(|block| {
                let mut mat = Matrix::zeros(m, m);
                for q in 0..n {
                    for r in 0..4 {
                        for c in 0..4 {
                            mat[(4 * q + r, 4 * q + c)] = block[r][c];
                        }
                    }
                }
                mat
            })
            .collect();
        ComplexStructures { matrices }
    }

    pub fn count(&self) -> usize {
        self.matrices.len()
    }

    pub fn dim(&self) -> usize {
        self.matrices.first().map_or(0, |m| m.nrows())
    }

    /// `omega_s(e_a, e_b) = g(I_s e_a, e_b) = (I_s)_{ba}`.
    pub fn omega(&self, s: usize) -> Matrix {
        self.matrices[s].transpose()
    }
}

/// Left-invariant frame data of a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub m: usize,
    pub k: usize,
    /// `structure_constants[s][(a, b)] = c^s_{ab}` with `[e_a, e_b] = sum_s c^s_{ab} xi_s`.
    pub structure_constants: Vec<Matrix>,
    /// `coefficients[s][(c, a)]`: `alpha_{s,a}(x) = sum_c x_c coefficients[s][(c, a)]`.
    pub coefficients: Vec<Matrix>,
    /// Haar density of `Vol_eta` in exponential coordinates.
    pub vol_density: f64,
}

impl Frame {
    fn from_structures(cs: &ComplexStructures) -> Self {
        let m = cs.dim();
        Frame {
            m,
            k: cs.count(),
            structure_constants: cs.matrices.iter().map(|i| i * 2.0).collect(),
            coefficients: cs.matrices.clone(),
            vol_density: 1.0,
        }
    }

    /// `alpha_{s,a}(x)`, the `d/dt_s` coefficient of `e_a` at horizontal position `x`.
    pub fn vertical_coefficient(&self, s: usize, a: usize, x: &[f64]) -> f64 {
        let c = &self.coefficients[s];
        (0..self.m).map(|j| x[j] * c[(j, a)]).sum()
    }

    /// `omega_s(e_a, e_b) = -c^s_{ab} / 2`.
    pub fn omega(&self, s: usize, a: usize, b: usize) -> f64 {
        -0.5 * self.structure_constants[s][(a, b)]
    }
}

/// Left-invariant (frame-constant) curvature and torsion tensors. All zero on
/// the flat models; nonzero values are synthetic algebraic inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometricTensors {
    /// Normalized qc-scalar curvature (or the CR analog).
    pub s: f64,
    pub t0: Matrix,
    /// Absent for CR and for QC with `n = 1`.
    pub u: Option<Matrix>,
    /// Webster torsion (CR only).
    pub a: Option<Matrix>,
    /// Webster Ricci form (CR only): antisymmetric and `J`-invariant, so
    /// that `rho(JX, Y)` is the symmetric Ricci tensor.
    pub rho: Option<Matrix>,
}

impl GeometricTensors {
    pub fn flat(spec: &ModelSpec) -> Self {
        let z = Matrix::zeros(spec.m, spec.m);
        match spec.kind {
            ModelKind::Qc => GeometricTensors {
                s: 0.0,
                t0: z.clone(),
                u: (spec.n > 1).then(|| z.clone()),
                a: None,
                rho: None,
            },
            ModelKind::Cr => GeometricTensors {
                s: 0.0,
                t0: z.clone(),
                u: None,
                a: Some(z.clone()),
                rho: Some(z),
            },
        }
    }

    pub fn is_flat(&self) -> bool {
        let zero = |m: &Matrix| m.iter().all(|v| *v == 0.0);
        self.s == 0.0
            && zero(&self.t0)
            && self.u.as_ref().map_or(true, zero)
            && self.a.as_ref().map_or(true, zero)
            && self.rho.as_ref().map_or(true, zero)
    }

    /// Random tensors satisfying the Sp(n)Sp(1) decomposition rules: `T0`
    /// lies in the kernel of the Sp(1)-average, `U` is Sp(1)-invariant and
    /// trace-free; for CR the torsion `A` is symmetric and anticommutes with
    /// `J`, and `rho` is an antisymmetric `J`-invariant form.
    pub fn synthetic<R: Rng>(geom: &Geometry, rng: &mut R) -> Self {
        let m = geom.spec.m;
        let random_symmetric = |rng: &mut R| {
            let b = Matrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
            (&b + b.transpose()) * 0.5
        };
        match geom.spec.kind {
            ModelKind::Qc => {
                let b = random_symmetric(rng);
                let t0 = &b - sp1_average(&geom.structures, &b);
                let u = (geom.spec.n > 1).then(|| {
                    let v = sp1_average(&geom.structures, &random_symmetric(rng));
                    let tr = v.trace() / m as f64;
                    v - Matrix::identity(m, m) * tr
                });
                GeometricTensors { s: rng.gen_range(-1.0..1.0), t0, u, a: None, rho: None }
            }
            ModelKind::Cr => {
                let j = &geom.structures.matrices[0];
                let b = random_symmetric(rng);
                let a = (&b - j.transpose() * &b * j) * 0.5;
                let r = random_symmetric(rng);
                let rho = (&r + j.transpose() * &r * j) * 0.5 * j;
                GeometricTensors {
                    s: rng.gen_range(-1.0..1.0),
                    t0: Matrix::zeros(m, m),
                    u: None,
                    a: Some(a),
                    rho: Some(rho),
                }
            }
        }
    }

    /// Checks the algebraic invariants; returns the largest violation.
    pub fn invariant_defect(&self, geom: &Geometry) -> f64 {
        let mut worst: f64 = 0.0;
        let mut upd = |v: f64| worst = worst.max(v.abs());
        upd(self.t0.trace());
        if let Some(u) = &self.u {
            upd(u.trace());
        }
        if let (Some(a), Some(rho), Some(j)) = (&self.a, &self.rho, geom.structures.matrices.first()) {
            if geom.spec.kind == ModelKind::Cr {
                (a - a.transpose()).iter().for_each(|v| upd(*v));
                (j.transpose() * a * j + a).iter().for_each(|v| upd(*v));
                (rho + rho.transpose()).iter().for_each(|v| upd(*v));
                (j.transpose() * rho * j - rho).iter().for_each(|v| upd(*v));
            }
        }
        if geom.spec.kind == ModelKind::Qc {
            let avg = sp1_average(&geom.structures, &self.t0);
            avg.iter().for_each(|v| upd(*v));
            if let Some(u) = &self.u {
                for i in &geom.structures.matrices {
                    (i.transpose() * u * i - u).iter().for_each(|v| upd(*v));
                }
            }
        }
        worst
    }

    pub(crate) fn u_checked(&self, spec: &ModelSpec) -> Result<Option<&Matrix>> {
        match (&self.u, spec.kind, spec.n) {
            (Some(_), ModelKind::Qc, 1) => Err(Error::UTermAtN1),
            (u, ModelKind::Qc, _) => Ok(u.as_ref()),
            _ => Ok(None),
        }
    }
}

/// `(1/4) sum_{s=0..3} I_s^T B I_s` with `I_0 = Id`: projection onto the
/// Sp(1)-invariant bilinear forms.
pub fn sp1_average(cs: &ComplexStructures, b: &Matrix) -> Matrix {
    let mut acc = b.clone();
    for i in &cs.matrices {
        acc += i.transpose() * b * i;
    }
    acc / (cs.count() as f64 + 1.0)
}

/// Algebraic model data (no grid).
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    pub spec: ModelSpec,
    pub frame: Frame,
    pub structures: ComplexStructures,
}

impl Geometry {
    /// Any rank `n >= 1`; only the flat models listed in [`build_model`] are
    /// simulated on grids.
    pub fn new(kind: ModelKind, n: usize) -> Result<Self> {
        let spec = ModelSpec::new(kind, n)?;
        let structures = match kind {
            ModelKind::Cr => ComplexStructures::cr(n),
            ModelKind::Qc => ComplexStructures::qc(n),
        };
        let frame = Frame::from_structures(&structures);
        Ok(Geometry { spec, frame, structures })
    }
}

/// A simulated model: geometry plus its grid over the fundamental domain.
#[derive(Clone, Debug)]
pub struct Model {
    pub geometry: Geometry,
    pub grid: Grid,
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.geometry.spec
    }
    pub fn frame(&self) -> &Frame {
        &self.geometry.frame
    }
    pub fn structures(&self) -> &ComplexStructures {
        &self.geometry.structures
    }
    pub fn m(&self) -> usize {
        self.geometry.spec.m
    }
    pub fn k(&self) -> usize {
        self.geometry.spec.k
    }
    pub fn n(&self) -> usize {
        self.geometry.spec.n
    }
    pub fn kind(&self) -> ModelKind {
        self.geometry.spec.kind
    }
    pub fn label(&self) -> String {
        self.geometry.spec.label()
    }
}

pub fn is_supported(kind: ModelKind, n: usize) -> bool {
    matches!((kind, n), (ModelKind::Cr, 1) | (ModelKind::Cr, 2) | (ModelKind::Qc, 1))
}

/// Instantiates one of the simulated flat models on a grid.
pub fn build_model(
    kind: ModelKind,
    n: usize,
    grid_sizes: &[usize],
    order: StencilOrder,
) -> Result<(Model, GeometricTensors)> {
    if !is_supported(kind, n) {
        return Err(Error::UnsupportedModel { kind: kind.to_string(), n });
    }
    let mut geometry = Geometry::new(kind, n)?;
    let dim = geometry.spec.dim();
    if grid_sizes.len() != dim {
        return Err(Error::GridIncompatible(format!(
            "{} model needs {dim} axis sizes, got {}",
            geometry.spec.label(),
            grid_sizes.len()
        )));
    }
    if let Some(bad) = grid_sizes.iter().find(|&&s| s < 8) {
        return Err(Error::GridIncompatible(format!("axis size {bad} is below the minimum of 8")));
    }
    let grid = Grid::new(grid_sizes, &geometry.structures, order)?;
    geometry.spec.grid_sizes = grid_sizes.to_vec();
    let tensors = GeometricTensors::flat(&geometry.spec);
    Ok((Model { geometry, grid }, tensors))
}

/// Like [`build_model`] without the minimum axis size, for cheap unit tests.
#[cfg(test)]
pub(crate) fn small_model(kind: ModelKind, n: usize, sizes: &[usize], order: StencilOrder) -> (Model, GeometricTensors) {
    let mut geometry = Geometry::new(kind, n).unwrap();
    let grid = Grid::new(sizes, &geometry.structures, order).unwrap();
    geometry.spec.grid_sizes = sizes.to_vec();
    let tensors = GeometricTensors::flat(&geometry.spec);
    (Model { geometry, grid }, tensors)
}

/// `I_s v` (or `J v`); `s` is 1-based.
pub fn complex_action(cs: &ComplexStructures, s: usize, v: &[f64]) -> Result<Vec<f64>> {
    if s == 0 || s > cs.count() {
        return Err(Error::IndexOutOfRange { index: s, expected: format!("1..={}", cs.count()) });
    }
    let mat = &cs.matrices[s - 1];
    if v.len() != mat.nrows() {
        return Err(Error::ShapeMismatch(format!("vector of length {} for m = {}", v.len(), mat.nrows())));
    }
    Ok((0..mat.nrows()).map(|r| (0..mat.ncols()).map(|c| mat[(r, c)] * v[c]).sum()).collect())
}

fn bilinear(b: &Matrix, x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for r in 0..b.nrows() {
        for c in 0..b.ncols() {
            acc += x[r] * b[(r, c)] * y[c];
        }
    }
    acc
}

/// The Ricci-type tensor `L(X, X)` at a single horizontal vector.
///
/// QC: `2 S g(X,X) + alpha_n T0(X,X) + beta_n U(X,X)` (U-term dropped at n = 1).
/// CR: `rho(JX, X) + 2n A(JX, X)`.
pub fn lichnerowicz(geom: &Geometry, tensors: &GeometricTensors, x: &[f64]) -> Result<f64> {
    polarized_lichnerowicz(geom, tensors, x, x)
}

/// Bilinear form behind [`lichnerowicz`].
pub fn polarized_lichnerowicz(geom: &Geometry, tensors: &GeometricTensors, x: &[f64], y: &[f64]) -> Result<f64> {
    let spec = &geom.spec;
    check_len(spec, x)?;
    check_len(spec, y)?;
    match spec.kind {
        ModelKind::Qc => {
            let g: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            let mut val = 2.0 * tensors.s * g + spec.alpha_n * bilinear(&tensors.t0, x, y);
            if let (Some(u), Some(beta)) = (tensors.u_checked(spec)?, spec.beta_n) {
                val += beta * bilinear(u, x, y);
            }
            Ok(val)
        }
        ModelKind::Cr => {
            let jx = complex_action(&geom.structures, 1, x)?;
            let n = spec.n as f64;
            let rho = tensors.rho.as_ref().map_or(0.0, |r| bilinear(r, &jx, y));
            let a = tensors.a.as_ref().map_or(0.0, |a| bilinear(a, &jx, y));
            Ok(rho + 2.0 * n * a)
        }
    }
}

/// Horizontal Ricci tensor expressed through torsion.
///
/// QC: `(2n+2) T0(X,Y) + (4n+10) U(X,Y) + S/(4n) g(X,Y)`.
/// CR: `rho(JX, Y) + 2(n-1) A(JX, Y)`.
pub fn ricci_from_torsion(geom: &Geometry, tensors: &GeometricTensors, x: &[f64], y: &[f64]) -> Result<f64> {
    let spec = &geom.spec;
    check_len(spec, x)?;
    check_len(spec, y)?;
    let n = spec.n as f64;
    match spec.kind {
        ModelKind::Qc => {
            let g: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
            let mut val = (2.0 * n + 2.0) * bilinear(&tensors.t0, x, y) + tensors.s / (4.0 * n) * g;
            if let Some(u) = tensors.u_checked(spec)? {
                val += (4.0 * n + 10.0) * bilinear(u, x, y);
            }
            Ok(val)
        }
        ModelKind::Cr => {
            let jx = complex_action(&geom.structures, 1, x)?;
            let rho = tensors.rho.as_ref().map_or(0.0, |r| bilinear(r, &jx, y));
            let a = tensors.a.as_ref().map_or(0.0, |a| bilinear(a, &jx, y));
            Ok(rho + 2.0 * (n - 1.0) * a)
        }
    }
}

/// Matrix of [`ricci_from_torsion`] in the frame.
pub fn ricci_matrix(geom: &Geometry, tensors: &GeometricTensors) -> Result<Matrix> {
    let m = geom.spec.m;
    let mut out = Matrix::zeros(m, m);
    let basis = |i: usize| (0..m).map(|j| if i == j { 1.0 } else { 0.0 }).collect::<Vec<_>>();
    for a in 0..m {
        for b in 0..m {
            out[(a, b)] = ricci_from_torsion(geom, tensors, &basis(a), &basis(b))?;
        }
    }
    Ok(out)
}

/// Bilinear forms `T(xi_s, X, Y)` assembled from the stored decomposition:
/// the `T0` part solves `4 T0(xi_s, I_s X, Y) = T0(X,Y) - T0(I_s X, I_s Y)` and
/// the `U` part is `g(I_s u X, Y)`.
pub fn qc_torsion_forms(geom: &Geometry, tensors: &GeometricTensors) -> Result<Vec<Matrix>> {
    if geom.spec.kind != ModelKind::Qc {
        return Err(Error::UnsupportedModel { kind: "torsion forms on CR".into(), n: geom.spec.n });
    }
    let u = tensors.u_checked(&geom.spec)?;
    Ok(geom
        .structures
        .matrices
        .iter()
        .map(|i| {
            let mut form = (i.transpose() * &tensors.t0 + &tensors.t0 * i) * -0.25;
            if let Some(u) = u {
                form += u * i.transpose();
            }
            form
        })
        .collect())
}

/// `sum_s T(xi_s, I_s X, Y)` as a bilinear-form matrix.
pub fn torsion_trace(geom: &Geometry, tensors: &GeometricTensors) -> Result<Matrix> {
    let forms = qc_torsion_forms(geom, tensors)?;
    let m = geom.spec.m;
    let mut acc = Matrix::zeros(m, m);
    for (form, i) in forms.iter().zip(&geom.structures.matrices) {
        acc += i.transpose() * form;
    }
    Ok(acc)
}

fn check_len(spec: &ModelSpec, v: &[f64]) -> Result<()> {
    if v.len() != spec.m {
        return Err(Error::ShapeMismatch(format!("horizontal vector of length {} for m = {}", v.len(), spec.m)));
    }
    Ok(())
}

/// Human-readable description of the group law, frame and lattice of a model.
pub fn convention_sheet(geom: &Geometry, grid: Option<&Grid>) -> String {
    let spec = &geom.spec;
    let mut s = String::new();
    let coord = |j: usize| {
        if j < spec.m {
            format!("x{}", j + 1)
        } else {
            format!("t{}", j - spec.m + 1)
        }
    };
    s.push_str(&format!("# Model convention sheet: {} (n = {})\n\n", spec.label(), spec.n));
    s.push_str(&format!("lattice: {}\n", spec.lattice_id));
    s.push_str(&format!("horizontal dimension m = {}, vertical dimension k = {}\n\n", spec.m, spec.k));
    s.push_str("## Group law\n\n");
    s.push_str("(x, t) * (x', t') = (x + x', t_s + t'_s + sum_{b,c} x_b x'_c (I_s)_{bc})\n\n");
    s.push_str("## Complex structures (I_s e_a = sum_b (I_s)_{ba} e_b)\n\n");
    for (i, mat) in geom.structures.matrices.iter().enumerate() {
        s.push_str(&format!("I_{} =\n", i + 1));
        for r in 0..mat.nrows() {
            let row: Vec<String> = (0..mat.ncols()).map(|c| format!("{:>3}", mat[(r, c)])).collect();
            s.push_str(&format!("  [{}]\n", row.join(" ")));
        }
    }
    s.push_str("\n## Frame\n\n");
    for a in 0..spec.m {
        let mut terms = vec![format!("d/d{}", coord(a))];
        for sidx in 0..spec.k {
            let c = &geom.frame.coefficients[sidx];
            for j in 0..spec.m {
                let v = c[(j, a)];
                if v != 0.0 {
                    let sign = if v > 0.0 { "+" } else { "-" };
                    terms.push(format!("{sign} {}*{} d/d{}", v.abs(), coord(j), coord(spec.m + sidx)));
                }
            }
        }
        s.push_str(&format!("e{} = {}\n", a + 1, terms.join(" ")));
    }
    for sidx in 0..spec.k {
        s.push_str(&format!("xi{} = d/d{}\n", sidx + 1, coord(spec.m + sidx)));
    }
    s.push_str("\n## Structure constants ([e_a, e_b] = sum_s c^s_ab xi_s)\n\n");
    for a in 0..spec.m {
        for b in (a + 1)..spec.m {
            for sidx in 0..spec.k {
                let c = geom.frame.structure_constants[sidx][(a, b)];
                if c != 0.0 {
                    s.push_str(&format!("[e{}, e{}] = {} xi{}\n", a + 1, b + 1, c, sidx + 1));
                }
            }
        }
    }
    s.push_str("\nomega_s(e_a, e_b) = g(I_s e_a, e_b) = -c^s_ab / 2; 2 omega_s = d eta_s on H\n");
    s.push_str("Ricci identity: X(Yf) - Y(Xf) = -2 sum_s omega_s(X, Y) xi_s f\n");
    s.push_str("Vol_eta = Lebesgue measure dx dt (density 1); fundamental domain has volume 1\n");
    s.push_str(&format!("alpha_n = {}", alpha_ratio(spec.n)));
    match spec.beta_n {
        Some(_) => s.push_str(&format!(", beta_n = {}\n", beta_ratio(spec.n).unwrap())),
        None => s.push_str(", beta_n: not used\n"),
    }
    s.push_str("\n## Lattice and wrap\n\n");
    s.push_str("Gamma = Z^(m+k) acting on the left. Fundamental domain [-1/2, 1/2)^(m+k).\n");
    s.push_str("Crossing the x_a face: f(x + e_a, t) = f(x, t_s - sum_c (I_s)_{ac} x_c).\n");
    s.push_str("Vertical faces are plain periodic.\n");
    if let Some(grid) = grid {
        s.push_str(&format!("\ngrid sizes: {:?}\n", grid.sizes()));
        s.push_str(&format!("stencil order: {}\n", grid.order().as_usize()));
    }
    s
}
