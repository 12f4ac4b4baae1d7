//! Named metric families and seeded smooth random tensor fields.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::geometry::tensor_pointwise_norm;
use crate::grid::Grid;
use crate::tensor::{MetricField, TensorField, Valence};

/// A metric recipe that can be realised on any grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum MetricFamily {
    Flat,
    /// `e^{2a sin(kx₁) sin(kx₂)} δ`, `k = 2π / period` on each axis.
    Conformal { amplitude: f64 },
    /// `g_ii = exp(2aᵢ sin(kx_{i+1}) cos(kx_{i+2}))`, axes taken cyclically.
    Diagonal { amplitudes: Vec<f64> },
}

impl MetricFamily {
    pub fn build(&self, grid: &Arc<Grid>) -> Result<MetricField> {
        match self {
            MetricFamily::Flat => Ok(MetricField::flat(grid)),
            MetricFamily::Conformal { amplitude } => conformal_bump(grid, *amplitude),
            MetricFamily::Diagonal { amplitudes } => diagonal_bump(grid, amplitudes),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MetricFamily::Flat => "flat",
            MetricFamily::Conformal { .. } => "conformal",
            MetricFamily::Diagonal { .. } => "diagonal",
        }
    }
}

fn wave(grid: &Grid, axis: usize, x: &[f64; 3]) -> f64 {
    2.0 * PI * x[axis] / grid.periods()[axis]
}

/// Conformal factor exponent `u = a sin(kx₁) sin(kx₂)`.
pub fn conformal_exponent(grid: &Grid, amplitude: f64, x: &[f64; 3]) -> f64 {
    amplitude * wave(grid, 0, x).sin() * wave(grid, 1, x).sin()
}

pub fn conformal_bump(grid: &Arc<Grid>, amplitude: f64) -> Result<MetricField> {
    let n = grid.dim();
    let f = TensorField::from_fn(grid, Valence::SYM2, |x, out| {
        let e = (2.0 * conformal_exponent(grid, amplitude, x)).exp();
        for i in 0..n {
            out[i * n + i] = e;
        }
    })?;
    MetricField::new(f)
}

pub fn diagonal_bump(grid: &Arc<Grid>, amplitudes: &[f64]) -> Result<MetricField> {
    let n = grid.dim();
    if amplitudes.len() != n {
        return Err(FlowError::Config(format!("{} amplitudes for a {n}-dimensional grid", amplitudes.len())));
    }
    let f = TensorField::from_fn(grid, Valence::SYM2, |x, out| {
        for i in 0..n {
            let p = wave(grid, (i + 1) % n, x).sin();
            let q = wave(grid, (i + 2) % n, x).cos();
            out[i * n + i] = (2.0 * amplitudes[i] * p * q).exp();
        }
    })?;
    MetricField::new(f)
}

/// Seeded symmetric 2-tensor built from Fourier modes with `|k|_∞ ≤ max_mode`,
/// coefficient scale `1/(1 + |k|²)`, normalised to unit sup of the Euclidean entry size.
pub fn random_smooth_sym2(grid: &Arc<Grid>, seed: u64, max_mode: usize) -> Result<TensorField> {
    random_modes_sym2(grid, seed, max_mode, |k2| Some(1.0 / (1.0 + k2 as f64)))
}

/// Like [`random_smooth_sym2`] but using only the wave vectors with `|k|² = radius_sq`,
/// all with unit coefficient scale.
pub fn random_shell_sym2(grid: &Arc<Grid>, seed: u64, radius_sq: usize) -> Result<TensorField> {
    let max_mode = (radius_sq as f64).sqrt().floor() as usize;
    if max_mode == 0 {
        return Err(FlowError::Config("shell radius must be at least 1".into()));
    }
    random_modes_sym2(grid, seed, max_mode, |k2| (k2 == radius_sq).then_some(1.0))
}

fn random_modes_sym2(grid: &Arc<Grid>, seed: u64, max_mode: usize, weight: impl Fn(usize) -> Option<f64>) -> Result<TensorField> {
    let n = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = 2 * max_mode + 1;
    let mut modes = Vec::new();
    for m in 0..span.pow(n as u32) {
        let mut k = [0i64; 3];
        let mut r = m;
        for a in 0..n {
            k[a] = (r % span) as i64 - max_mode as i64;
            r /= span;
        }
        let Some(decay) = weight(k.iter().map(|v| (v * v) as usize).sum()) else {
            continue;
        };
        let mut coef = [[0.0; 9]; 2];
        for c in coef.iter_mut() {
            for i in 0..n {
                for j in i..n {
                    let v: f64 = rng.sample::<f64, _>(StandardNormal) * decay;
                    c[i * n + j] = v;
                    c[j * n + i] = v;
                }
            }
        }
        modes.push((k, coef));
    }
    let f = TensorField::from_fn(grid, Valence::SYM2, |x, out| {
        for (k, coef) in &modes {
            let phase: f64 = (0..n).map(|a| k[a] as f64 * wave(grid, a, x)).sum();
            let (s, c) = phase.sin_cos();
            for (i, o) in out.iter_mut().enumerate() {
                *o += coef[0][i] * c + coef[1][i] * s;
            }
        }
    })?;
    let m = f.max_abs();
    Ok(if m > 0.0 { f.scale(1.0 / m) } else { f })
}

/// Seeded `(1,2)` field `S^k_{ij}`, symmetric in the lower pair, unit sup of entries.
pub fn random_smooth_connection(grid: &Arc<Grid>, seed: u64, max_mode: usize) -> Result<TensorField> {
    InputFamily::LowModes { max_mode }.connection(grid, seed)
}

/// Spectral recipe for seeded random test fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputFamily {
    /// [`random_smooth_sym2`].
    LowModes { max_mode: usize },
    /// [`random_shell_sym2`].
    Shell { radius_sq: usize },
}

impl Default for InputFamily {
    fn default() -> Self {
        InputFamily::LowModes { max_mode: 1 }
    }
}

impl InputFamily {
    pub fn sym2(self, grid: &Arc<Grid>, seed: u64) -> Result<TensorField> {
        match self {
            InputFamily::LowModes { max_mode } => random_smooth_sym2(grid, seed, max_mode),
            InputFamily::Shell { radius_sq } => random_shell_sym2(grid, seed, radius_sq),
        }
    }

    /// `(1,2)` field whose `k`-th slice is an independent [`InputFamily::sym2`] draw.
    pub fn connection(self, grid: &Arc<Grid>, seed: u64) -> Result<TensorField> {
        connection_from_slices(grid, |k| self.sym2(grid, seed.wrapping_mul(0x9E37_79B9).wrapping_add(k as u64 + 1)))
    }
}

fn connection_from_slices(grid: &Arc<Grid>, slice: impl Fn(usize) -> Result<TensorField>) -> Result<TensorField> {
    let n = grid.dim();
    let slices = (0..n).map(slice).collect::<Result<Vec<_>>>()?;
    let mut data = vec![0.0; grid.len() * n * n * n];
    for x in 0..grid.len() {
        for (k, sl) in slices.iter().enumerate() {
            data[x * n * n * n + k * n * n..x * n * n * n + (k + 1) * n * n].copy_from_slice(sl.at(x));
        }
    }
    TensorField::from_vec(grid, Valence::CONNECTION, data)
}

/// Rescales `h` so that `sup |h|_g = 1`.
pub fn unit_sup_normalized(h: &TensorField, g: &MetricField) -> Result<TensorField> {
    let sup = tensor_pointwise_norm(h, g)?.max_abs();
    if sup == 0.0 {
        return Err(FlowError::Config("cannot normalise a zero field".into()));
    }
    Ok(h.scale(1.0 / sup))
}

/// Seeded scalar field from low modes, unit sup.
pub fn random_smooth_scalar(grid: &Arc<Grid>, seed: u64, max_mode: usize) -> Result<TensorField> {
    let h = random_smooth_sym2(grid, seed, max_mode)?;
    let f = TensorField::from_vec(grid, Valence::SCALAR, (0..grid.len()).map(|x| h.at(x)[0]).collect())?;
    let m = f.max_abs();
    Ok(f.scale(1.0 / m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_fields_repeat() {
        let g = Arc::new(Grid::new(2, &[16, 16], &[1.0, 1.0]).unwrap());
        let a = random_smooth_sym2(&g, 7, 2).unwrap();
        let b = random_smooth_sym2(&g, 7, 2).unwrap();
        let c = random_smooth_sym2(&g, 8, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!((a.max_abs() - 1.0).abs() < 1e-15);
        assert_eq!(a.asymmetry(), 0.0);
    }

    #[test]
    fn families_are_metrics() {
        let g = Arc::new(Grid::new(3, &[8, 8, 8], &[1.0, 1.0, 1.0]).unwrap());
        let d = MetricFamily::Diagonal { amplitudes: vec![0.1, 0.05, 0.02] }.build(&g).unwrap();
        assert!(!d.is_exactly_flat());
        assert!(MetricFamily::Flat.build(&g).unwrap().is_exactly_flat());
        assert!(MetricFamily::Diagonal { amplitudes: vec![0.1] }.build(&g).is_err());
    }
}
