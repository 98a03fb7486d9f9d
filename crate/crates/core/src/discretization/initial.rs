use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::ScalarField;
use super::grid::Grid;
use crate::error::{Error, Result};
use crate::geometry::Geometry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialShape {
    Constant,
    PlanarModes,
    PeriodizedBump,
}

impl InitialShape {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(InitialShape::Constant),
            "planar_modes" => Ok(InitialShape::PlanarModes),
            "periodized_bump" => Ok(InitialShape::PeriodizedBump),
            other => Err(Error::ConfigInvalid(format!("unknown initial shape `{other}`"))),
        }
    }
}

/// Recipe for the initial density `u0`.
///
/// * `constant`: `u0 = amplitude`.
/// * `planar_modes`: `u0 = exp(phi(x))`, `phi` a random trigonometric
///   polynomial in the horizontal coordinates with frequencies up to
///   `band_limit` and `max |phi| <= amplitude`.
/// * `periodized_bump`: `u0 = 1 + amplitude * S / S(peak)` where `S` sums a
///   Gaussian bump (width `bump_radius`) with vertical profile
///   `1 + vertical_modulation * cos(2 pi (t - tau))` over the lattice
///   translates `|a|_inf <= truncation_radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialDataSpec {
    pub shape: InitialShape,
    pub amplitude: f64,
    pub band_limit: usize,
    pub seed: u64,
    pub bump_radius: f64,
    pub truncation_radius: usize,
    pub vertical_modulation: f64,
}

impl Default for InitialDataSpec {
    fn default() -> Self {
        InitialDataSpec {
            shape: InitialShape::PlanarModes,
            amplitude: 0.5,
            band_limit: 2,
            seed: 0,
            bump_radius: 0.3,
            truncation_radius: 3,
            vertical_modulation: 0.5,
        }
    }
}

impl InitialDataSpec {
    pub fn constant(c: f64) -> Self {
        InitialDataSpec { shape: InitialShape::Constant, amplitude: c, ..Default::default() }
    }

    pub fn bump(amplitude: f64, seed: u64) -> Self {
        InitialDataSpec { shape: InitialShape::PeriodizedBump, amplitude, seed, ..Default::default() }
    }
}

/// Random trigonometric polynomial in the horizontal coordinates.
#[derive(Clone, Debug)]
pub struct PlanarModes {
    m: usize,
    modes: Vec<(Vec<i64>, f64, f64)>,
}

impl PlanarModes {
    pub fn new(m: usize, band_limit: usize, amplitude: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = band_limit as i64;
        let mut modes = Vec::new();
        let total = (2 * l + 1).pow(m as u32);
        for code in 0..total {
            let kv: Vec<i64> = (0..m).map(|b| (code / (2 * l + 1).pow(b as u32)) % (2 * l + 1) - l).collect();
            // one representative of each +-k pair
            match kv.iter().find(|&&c| c != 0) {
                Some(&c) if c > 0 => {}
                _ => continue,
            }
            let k2: i64 = kv.iter().map(|c| c * c).sum();
            let damp = 1.0 / (1.0 + k2 as f64);
            let a = damp * rng.gen_range(-1.0..1.0);
            let b = damp * rng.gen_range(-1.0..1.0);
            modes.push((kv, a, b));
        }
        let norm: f64 = modes.iter().map(|(_, a, b)| a.abs() + b.abs()).sum();
        if norm > 0.0 {
            for (_, a, b) in modes.iter_mut() {
                *a *= amplitude / norm;
                *b *= amplitude / norm;
            }
        }
        PlanarModes { m, modes }
    }

    pub fn eval(&self, p: &[f64]) -> f64 {
        self.modes
            .iter()
            .map(|(kv, a, b)| {
                let ph: f64 = 2.0 * PI * (0..self.m).map(|j| kv[j] as f64 * p[j]).sum::<f64>();
                a * ph.cos() + b * ph.sin()
            })
            .sum()
    }
}

/// Lattice periodization of a Gaussian bump, evaluated literally.
#[derive(Clone, Debug)]
pub struct PeriodizedBump {
    m: usize,
    k: usize,
    structure: Vec<Vec<f64>>,
    centers: Vec<f64>,
    phases: Vec<f64>,
    width: f64,
    modulation: f64,
    radius: i64,
}

impl PeriodizedBump {
    pub fn new(geom: &Geometry, spec: &InitialDataSpec) -> Self {
        let m = geom.spec.m;
        let k = geom.spec.k;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let centers = (0..m).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let phases = (0..k).map(|_| rng.gen_range(0.0..1.0)).collect();
        let structure = geom
            .structures
            .matrices
            .iter()
            .map(|mat| (0..m * m).map(|i| mat[(i / m, i % m)]).collect())
            .collect();
        PeriodizedBump {
            m,
            k,
            structure,
            centers,
            phases,
            width: spec.bump_radius,
            modulation: spec.vertical_modulation,
            radius: spec.truncation_radius as i64,
        }
    }

    fn g(&self, y: f64) -> f64 {
        (-y * y / (2.0 * self.width * self.width)).exp()
    }

    /// `sum_a phi((a, 0) * p)` over the truncated lattice cube.
    pub fn eval(&self, p: &[f64]) -> f64 {
        let (m, k, r) = (self.m, self.k, self.radius);
        let side = (2 * r + 1) as usize;
        let mut acc = 0.0;
        let mut a = vec![0i64; m];
        for code in 0..side.pow(m as u32) {
            let mut c = code;
            for ab in a.iter_mut() {
                *ab = (c % side) as i64 - r;
                c /= side;
            }
            let mut term = 1.0;
            for b in 0..m {
                term *= self.g(p[b] + a[b] as f64 - self.centers[b]);
            }
            if term == 0.0 {
                continue;
            }
            for s in 0..k {
                let mut shift = 0.0;
                for b in 0..m {
                    if a[b] == 0 {
                        continue;
                    }
                    for cc in 0..m {
                        shift += a[b] as f64 * self.structure[s][b * m + cc] * p[cc];
                    }
                }
                term *= 1.0 + self.modulation * (2.0 * PI * (p[m + s] + shift - self.phases[s])).cos();
            }
            acc += term;
        }
        acc
    }

    /// Value at the bump peak, used for normalization.
    pub fn peak(&self) -> f64 {
        let mut p = self.centers.clone();
        p.extend_from_slice(&self.phases);
        self.eval(&p)
    }

    /// Grid evaluation through the Fourier expansion of the vertical profile.
    pub fn sample(&self, grid: &Grid) -> Vec<f64> {
        let (m, k, r) = (self.m, self.k, self.radius);
        let kcount = 3usize.pow(k as u32);
        let kvecs: Vec<Vec<i64>> =
            (0..kcount).map(|code| (0..k).map(|s| ((code / 3usize.pow(s as u32)) % 3) as i64 - 1).collect()).collect();
        let theta: Vec<Complex64> = kvecs
            .iter()
            .map(|kv| {
                kv.iter().enumerate().fold(Complex64::new(1.0, 0.0), |acc, (s, &ks)| {
                    if ks == 0 {
                        acc
                    } else {
                        acc * Complex64::from_polar(0.5 * self.modulation, -2.0 * PI * ks as f64 * self.phases[s])
                    }
                })
            })
            .collect();
        let vlen = grid.block_len();
        let mut vtable = vec![Complex64::new(0.0, 0.0); kcount * vlen];
        let mut p = vec![0.0; grid.dim()];
        for v in 0..vlen {
            grid.point(v, &mut p);
            for (ki, kv) in kvecs.iter().enumerate() {
                let ph: f64 = (0..k).map(|s| kv[s] as f64 * p[m + s]).sum();
                vtable[ki * vlen + v] = Complex64::from_polar(1.0, 2.0 * PI * ph);
            }
        }
        let mut out = vec![0.0; grid.len()];
        out.par_chunks_mut(vlen).enumerate().for_each(|(blk, chunk)| {
            let mut p = vec![0.0; grid.dim()];
            grid.point(blk * vlen, &mut p);
            let coef: Vec<Complex64> = kvecs
                .iter()
                .zip(&theta)
                .map(|(kv, th)| {
                    let mut c = *th;
                    for b in 0..m {
                        let phi: f64 =
                            (0..k).map(|s| kv[s] as f64 * (0..m).map(|cc| self.structure[s][b * m + cc] * p[cc]).sum::<f64>()).sum();
                        let mut gsum = Complex64::new(0.0, 0.0);
                        for a in -r..=r {
                            let gv = self.g(p[b] + a as f64 - self.centers[b]);
                            if gv != 0.0 {
                                gsum += Complex64::from_polar(gv, 2.0 * PI * a as f64 * phi);
                            }
                        }
                        c *= gsum;
                    }
                    c
                })
                .collect();
            for (v, o) in chunk.iter_mut().enumerate() {
                let mut acc = 0.0;
                for ki in 0..kcount {
                    let z = coef[ki] * vtable[ki * vlen + v];
                    acc += z.re;
                }
                *o = acc;
            }
        });
        out
    }
}

/// `max_a |S(gamma_a p) - S(p)| / max |S|` over `samples` random points, with
/// `gamma_a` the unit lattice translations along each horizontal axis.
pub fn wrap_consistency_residual(geom: &Geometry, spec: &InitialDataSpec, samples: usize) -> f64 {
    let m = geom.spec.m;
    let k = geom.spec.k;
    let eval: Box<dyn Fn(&[f64]) -> f64> = match spec.shape {
        InitialShape::Constant => return 0.0,
        InitialShape::PlanarModes => {
            let pm = PlanarModes::new(m, spec.band_limit, spec.amplitude, spec.seed);
            Box::new(move |p| pm.eval(p).exp())
        }
        InitialShape::PeriodizedBump => {
            let b = PeriodizedBump::new(geom, spec);
            Box::new(move |p| b.eval(p))
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed);
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for _ in 0..samples {
        let p: Vec<f64> = (0..m + k).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let base = eval(&p);
        scale = scale.max(base.abs());
        for a in 0..m {
            let mut q = p.clone();
            q[a] += 1.0;
            for s in 0..k {
                let row = &geom.structures.matrices[s];
                q[m + s] += (0..m).map(|c| row[(a, c)] * p[c]).sum::<f64>();
            }
            worst = worst.max((eval(&q) - base).abs());
        }
    }
    if scale > 0.0 {
        worst / scale
    } else {
        worst
    }
}

/// Synthesizes `u0` on the grid.
pub fn make_initial_density(spec: &InitialDataSpec, geom: &Geometry, grid: &Grid) -> Result<ScalarField> {
    let u = match spec.shape {
        InitialShape::Constant => ScalarField::constant(grid, spec.amplitude),
        InitialShape::PlanarModes => {
            let pm = PlanarModes::new(geom.spec.m, spec.band_limit, spec.amplitude, spec.seed);
            ScalarField::from_fn(grid, |p| pm.eval(p).exp())
        }
        InitialShape::PeriodizedBump => {
            let b = PeriodizedBump::new(geom, spec);
            let peak = b.peak();
            let res = wrap_consistency_residual(geom, spec, 4);
            if res > 1e-12 {
                return Err(Error::NotWrapConsistent(res));
            }
            let s = b.sample(grid);
            let a = spec.amplitude / peak;
            ScalarField { values: s.into_iter().map(|v| 1.0 + a * v).collect() }
        }
    };
    if !u.is_finite() {
        return Err(Error::NonFiniteValue("initial density"));
    }
    u.check_positive()?;
    Ok(u)
}
