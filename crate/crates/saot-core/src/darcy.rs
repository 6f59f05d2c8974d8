//! Synthetic Darcy-flow data: two-level permeability fields drawn from a
//! thresholded Gaussian random field, a conservative finite-difference
//! solver for −∇·(a∇u) = f with zero boundary values, and bilinear
//! resampling between endpoint-aligned grids.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::GridSample;
use crate::ops::grid_dims;
use crate::spectral::{fft2, ifft2_real_part};
use crate::tensor::Tensor;

/// Two-level coefficient field plus the knobs that produced it.
#[derive(Debug, Clone)]
pub struct CoefficientField {
    pub a: Tensor,
    pub seed: u64,
    pub smoothness: f64,
}

/// Solution field; zero on the boundary ring by construction.
#[derive(Debug, Clone)]
pub struct PressureField {
    pub u: Tensor,
}

/// Standardized (mean 0, variance 1) smooth random field: filter white
/// noise in Fourier space with (1 + |k'|²)^(−s/2) over centered
/// frequencies, drop the DC mode, and take the real part.
pub fn gaussian_random_field(seed: u64, h: usize, w: usize, smoothness: f64) -> Result<Tensor> {
    if h < 2 || w < 2 {
        return Err(Error::Config(format!("field of {h}×{w} is too small")));
    }
    if !(smoothness > 0.0) {
        return Err(Error::Config("smoothness must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise: Vec<f64> = (0..h * w).map(|_| rng.sample(StandardNormal)).collect();
    let mut spec = fft2(&Tensor::from_values(&[h, w, 1], noise)?)?;
    for k1 in 0..h {
        for k2 in 0..w {
            let k1c = if k1 <= h / 2 { k1 as f64 } else { k1 as f64 - h as f64 };
            let k2c = if k2 <= w / 2 { k2 as f64 } else { k2 as f64 - w as f64 };
            let gain = (1.0 + k1c * k1c + k2c * k2c).powf(-smoothness / 2.0);
            let i = k1 * w + k2;
            spec.re[i] *= gain;
            spec.im[i] *= gain;
        }
    }
    spec.re[0] = 0.0;
    spec.im[0] = 0.0;
    let (field, _) = ifft2_real_part(&spec);
    let n = (h * w) as f64;
    let mean = field.values.iter().sum::<f64>() / n;
    let var = field.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if !(var > 0.0) {
        return Err(Error::Numeric("degenerate random field with zero variance".into()));
    }
    let std = var.sqrt();
    let values = field.values.iter().map(|v| (v - mean) / std).collect();
    Tensor::from_values(&[h, w, 1], values)
}

/// Threshold a standardized random field into the two-level set {lo, hi}.
pub fn sample_coefficient(
    seed: u64,
    h: usize,
    w: usize,
    smoothness: f64,
    levels: (f64, f64),
    threshold: f64,
) -> Result<CoefficientField> {
    let (lo, hi) = levels;
    if !(lo > 0.0) || !(hi > 0.0) {
        return Err(Error::Config(format!(
            "coefficient levels must be positive, got ({lo}, {hi})"
        )));
    }
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!(
            "coefficient grids must have even sides, got {h}×{w}"
        )));
    }
    let field = gaussian_random_field(seed, h, w, smoothness)?;
    let values = field
        .values
        .iter()
        .map(|&v| if v >= threshold { hi } else { lo })
        .collect();
    Ok(CoefficientField {
        a: Tensor::from_values(&[h, w, 1], values)?,
        seed,
        smoothness,
    })
}

fn harmonic(a1: f64, a2: f64) -> f64 {
    2.0 * a1 * a2 / (a1 + a2)
}

struct Stencil {
    h: usize,
    w: usize,
    /// vertical face between (i,j) and (i+1,j), i < h-1
    av: Vec<f64>,
    /// horizontal face between (i,j) and (i,j+1), j < w-1
    ah: Vec<f64>,
    inv_h1sq: f64,
    inv_h2sq: f64,
}

impl Stencil {
    fn new(a: &Tensor) -> Result<Stencil> {
        let (h, w, c) = grid_dims(a)?;
        if c != 1 {
            return Err(Error::Dimension(format!(
                "coefficient field must have one channel, got {c}"
            )));
        }
        if h < 3 || w < 3 {
            return Err(Error::Dimension(format!(
                "grid {h}×{w} has no interior to solve on"
            )));
        }
        if a.values.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("coefficient must be strictly positive".into()));
        }
        let at = |i: usize, j: usize| a.values[i * w + j];
        let mut av = vec![0.0; (h - 1) * w];
        for i in 0..h - 1 {
            for j in 0..w {
                av[i * w + j] = harmonic(at(i, j), at(i + 1, j));
            }
        }
        let mut ah = vec![0.0; h * (w - 1)];
        for i in 0..h {
            for j in 0..w - 1 {
                ah[i * (w - 1) + j] = harmonic(at(i, j), at(i, j + 1));
            }
        }
        let h1 = 1.0 / (h - 1) as f64;
        let h2 = 1.0 / (w - 1) as f64;
        Ok(Stencil { h, w, av, ah, inv_h1sq: 1.0 / (h1 * h1), inv_h2sq: 1.0 / (h2 * h2) })
    }

    fn unknowns(&self) -> usize {
        (self.h - 2) * (self.w - 2)
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        (i - 1) * (self.w - 2) + (j - 1)
    }

    /// out = A u over the interior (boundary values are zero).
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let (h, w) = (self.h, self.w);
        for i in 1..h - 1 {
            for j in 1..w - 1 {
                let c = u[self.idx(i, j)];
                let un = if i > 1 { u[self.idx(i - 1, j)] } else { 0.0 };
                let us = if i < h - 2 { u[self.idx(i + 1, j)] } else { 0.0 };
                let uw = if j > 1 { u[self.idx(i, j - 1)] } else { 0.0 };
                let ue = if j < w - 2 { u[self.idx(i, j + 1)] } else { 0.0 };
                let fn_ = self.av[(i - 1) * w + j];
                let fs = self.av[i * w + j];
                let fw = self.ah[i * (w - 1) + j - 1];
                let fe = self.ah[i * (w - 1) + j];
                out[self.idx(i, j)] = (fn_ * (c - un) + fs * (c - us)) * self.inv_h1sq
                    + (fw * (c - uw) + fe * (c - ue)) * self.inv_h2sq;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut d = vec![0.0; self.unknowns()];
        for i in 1..h - 1 {
            for j in 1..w - 1 {
                d[self.idx(i, j)] = (self.av[(i - 1) * w + j] + self.av[i * w + j])
                    * self.inv_h1sq
                    + (self.ah[i * (w - 1) + j - 1] + self.ah[i * (w - 1) + j]) * self.inv_h2sq;
            }
        }
        d
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub const SOLVER_TOLERANCE: f64 = 1e-10;

/// Jacobi-preconditioned conjugate gradients on the interior system.
fn solve_interior(stencil: &Stencil, forcing: f64, tol: f64, budget: usize) -> Result<Vec<f64>> {
    let n = stencil.unknowns();
    let b = vec![forcing; n];
    let bnorm = dot(&b, &b).sqrt();
    if bnorm == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let d = stencil.diagonal();
    let mut u = vec![0.0; n];
    let mut r = b;
    let mut z: Vec<f64> = r.iter().zip(&d).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut q = vec![0.0; n];
    for it in 0..budget {
        let rel = dot(&r, &r).sqrt() / bnorm;
        if rel < tol {
            return Ok(u);
        }
        if !rel.is_finite() {
            return Err(Error::Numeric(format!(
                "solver residual became non-finite at iteration {it}"
            )));
        }
        stencil.apply(&p, &mut q);
        let alpha = rz / dot(&p, &q);
        for i in 0..n {
            u[i] += alpha * p[i];
            r[i] -= alpha * q[i];
        }
        for i in 0..n {
            z[i] = r[i] / d[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        rz = rz_next;
    }
    let rel = dot(&r, &r).sqrt() / bnorm;
    if rel < tol {
        Ok(u)
    } else {
        Err(Error::Convergence { residual: rel, iterations: budget })
    }
}

fn embed_interior(stencil: &Stencil, interior: Vec<f64>) -> Tensor {
    let (h, w) = (stencil.h, stencil.w);
    let mut full = vec![0.0; h * w];
    for i in 1..h - 1 {
        for j in 1..w - 1 {
            full[i * w + j] = interior[stencil.idx(i, j)];
        }
    }
    Tensor { shape: vec![h, w, 1], values: full, requires_grad: false, grad: Vec::new() }
}

/// Solve −∇·(a∇u) = forcing with zero Dirichlet boundary on the unit
/// square. Uses a 5-point conservative stencil with harmonic face averages
/// and an iteration budget of 10·H·W.
pub fn solve_grid(a: &Tensor, forcing: f64) -> Result<Tensor> {
    let stencil = Stencil::new(a)?;
    let budget = 10 * stencil.h * stencil.w;
    let interior = solve_interior(&stencil, forcing, SOLVER_TOLERANCE, budget)?;
    Ok(embed_interior(&stencil, interior))
}

pub fn solve_darcy(field: &CoefficientField) -> Result<PressureField> {
    Ok(PressureField { u: solve_grid(&field.a, 1.0)? })
}

/// Relative residual ‖A u − f‖/‖f‖ of a full-grid solution.
pub fn solver_residual(a: &Tensor, u: &Tensor, forcing: f64) -> Result<f64> {
    let stencil = Stencil::new(a)?;
    let (h, w, c) = grid_dims(u)?;
    if (h, w) != (stencil.h, stencil.w) || c != 1 {
        return Err(Error::Dimension("solution grid does not match coefficient grid".into()));
    }
    let n = stencil.unknowns();
    let mut interior = vec![0.0; n];
    for i in 1..h - 1 {
        for j in 1..w - 1 {
            interior[stencil.idx(i, j)] = u.values[i * w + j];
        }
    }
    let mut au = vec![0.0; n];
    stencil.apply(&interior, &mut au);
    let b = vec![forcing; n];
    let bnorm = dot(&b, &b).sqrt();
    if bnorm == 0.0 {
        return Ok(dot(&au, &au).sqrt());
    }
    let r: Vec<f64> = au.iter().zip(&b).map(|(x, y)| x - y).collect();
    Ok(dot(&r, &r).sqrt() / bnorm)
}

/// Bilinear interpolation between endpoint-aligned grids on the unit square.
pub fn resample(x: &Tensor, h2: usize, w2: usize) -> Result<Tensor> {
    let (h, w, c) = grid_dims(x)?;
    if h2 < 2 || w2 < 2 {
        return Err(Error::Config(format!(
            "resample target {h2}×{w2} is below the 2×2 minimum"
        )));
    }
    if h < 2 || w < 2 {
        return Err(Error::Dimension(format!("cannot resample from {h}×{w}")));
    }
    let mut out = vec![0.0; h2 * w2 * c];
    for i2 in 0..h2 {
        // multiply before dividing so same-size grids map indices exactly
        let si = (i2 * (h - 1)) as f64 / (h2 - 1) as f64;
        let i0 = (si.floor() as usize).min(h - 2);
        let fi = si - i0 as f64;
        for j2 in 0..w2 {
            let sj = (j2 * (w - 1)) as f64 / (w2 - 1) as f64;
            let j0 = (sj.floor() as usize).min(w - 2);
            let fj = sj - j0 as f64;
            for ch in 0..c {
                let at = |i: usize, j: usize| x.values[(i * w + j) * c + ch];
                let v = at(i0, j0) * (1.0 - fi) * (1.0 - fj)
                    + at(i0, j0 + 1) * (1.0 - fi) * fj
                    + at(i0 + 1, j0) * fi * (1.0 - fj)
                    + at(i0 + 1, j0 + 1) * fi * fj;
                out[(i2 * w2 + j2) * c + ch] = v;
            }
        }
    }
    Tensor::from_values(&[h2, w2, c], out)
}

/// Everything cmd-generate needs: each sample is drawn and solved at
/// `source_resolution`, then both fields are resampled to `resolution`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub count: usize,
    pub seed: u64,
    pub resolution: usize,
    pub source_resolution: usize,
    pub smoothness: f64,
    pub lo: f64,
    pub hi: f64,
    pub threshold: f64,
    pub forcing: f64,
}

impl Default for GenerationConfig {
    fn default() -> GenerationConfig {
        GenerationConfig {
            count: 64,
            seed: 0,
            resolution: 32,
            source_resolution: 128,
            smoothness: 4.0,
            lo: 3.0,
            hi: 12.0,
            threshold: 0.0,
            forcing: 1.0,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("resolution", self.resolution), ("source_resolution", self.source_resolution)] {
            if r % 2 != 0 || r < 4 {
                return Err(Error::Config(format!(
                    "{name} must be even and at least 4, got {r}"
                )));
            }
        }
        if !(self.lo > 0.0) || !(self.hi > 0.0) {
            return Err(Error::Config("coefficient levels must be positive".into()));
        }
        if !(self.smoothness > 0.0) {
            return Err(Error::Config("smoothness must be positive".into()));
        }
        if !self.forcing.is_finite() || !self.threshold.is_finite() && self.threshold != f64::NEG_INFINITY {
            return Err(Error::Config("forcing and threshold must be finite".into()));
        }
        Ok(())
    }

    pub fn sample_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }
}

/// Generate `count` independent samples, deterministic per (seed, config).
pub fn generate(cfg: &GenerationConfig) -> Result<Vec<GridSample>> {
    cfg.validate()?;
    (0..cfg.count)
        .map(|i| {
            let field = sample_coefficient(
                cfg.sample_seed(i),
                cfg.source_resolution,
                cfg.source_resolution,
                cfg.smoothness,
                (cfg.lo, cfg.hi),
                cfg.threshold,
            )?;
            let u = solve_grid(&field.a, cfg.forcing)?;
            let a = resample(&field.a, cfg.resolution, cfg.resolution)?;
            let u = resample(&u, cfg.resolution, cfg.resolution)?;
            GridSample::new(a, u)
        })
        .collect()
}
