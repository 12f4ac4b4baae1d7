//! Recovering a Ricci flow from a DeTurck flow by pulling back along the flow of `X`.
//!
//! With `∂_t ĝ = −2 Ric(ĝ) − L_X ĝ` and `∂_t φ_t = V ∘ φ_t`, the pullback satisfies
//! `∂_t (φ_t^* ĝ_t) = φ_t^*(−2 Ric(ĝ_t) − L_X ĝ_t + L_V ĝ_t)`, so `V = +X` closes the
//! Ricci flow equation. [`VelocitySign::Minus`] is kept for the sign check.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::derivative::gradient;
use crate::deturck::deturck_vector_field;
use crate::error::{FlowError, Result};
use crate::geometry::{tensor_pointwise_norm, MetricGeometry};
use crate::grid::Grid;
use crate::solver::{BackgroundMode, FlowTrajectory, StepMeta};
use crate::tensor::{MetricField, TensorField, Valence};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VelocitySign {
    #[default]
    Plus,
    Minus,
}

impl VelocitySign {
    fn factor(self) -> f64 {
        match self {
            VelocitySign::Plus => 1.0,
            VelocitySign::Minus => -1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PullbackReport {
    pub sign: VelocitySign,
    /// `sup |∂_t g̃ + 2 Ric(g̃)|_{g̃}` over interior samples.
    pub residual: f64,
    /// Per-sample residual, `(t, sup)`; end samples carry no central difference and are omitted.
    pub residual_series: Vec<(f64, f64)>,
    /// `sup |2 Ric(g̃)|_{g̃}`, the scale the residual is judged against.
    pub ricci_scale: f64,
    pub max_displacement: f64,
    pub min_jacobian: f64,
    pub max_jacobian: f64,
    pub max_vector_field: f64,
}

/// 4-point Lagrange weights on nodes `-1, 0, 1, 2` at offset `s ∈ [0, 1)`.
fn cubic_weights(s: f64) -> [f64; 4] {
    [
        -s * (s - 1.0) * (s - 2.0) / 6.0,
        (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
        -(s + 1.0) * s * (s - 2.0) / 2.0,
        (s + 1.0) * s * (s - 1.0) / 6.0,
    ]
}

/// Periodic tensor-product cubic interpolation of every component at a physical point.
pub fn interpolate_at(f: &TensorField, x: &[f64; 3], out: &mut [f64]) {
    let grid = f.grid();
    let n = grid.dim();
    let mut base = [0isize; 3];
    let mut w = [[0.0; 4]; 3];
    for a in 0..n {
        let u = x[a] / grid.spacing()[a];
        let i = u.floor();
        base[a] = i as isize;
        w[a] = cubic_weights(u - i);
    }
    out.iter_mut().for_each(|o| *o = 0.0);
    let count = 4usize.pow(n as u32);
    let mut coords = [0usize; 3];
    for m in 0..count {
        let mut weight = 1.0;
        let mut r = m;
        for a in 0..n {
            let k = r % 4;
            r /= 4;
            weight *= w[a][k];
            let res = grid.resolution()[a] as isize;
            coords[a] = (base[a] + k as isize - 1).rem_euclid(res) as usize;
        }
        let v = f.at(grid.node(&coords[..n]));
        for (o, vi) in out.iter_mut().zip(v) {
            *o += weight * vi;
        }
    }
}

/// Vector field at the midpoint of samples `k` and `k + 1` by cubic interpolation in time.
fn midpoint_field(fields: &[TensorField], k: usize) -> Result<TensorField> {
    let m = fields.len();
    if m < 4 {
        return fields[k].scale(0.5).axpy(0.5, &fields[k + 1]);
    }
    let start = k.saturating_sub(1).min(m - 4);
    let s = (k - start) as f64 + 0.5;
    let w = cubic_weights(s - 1.0);
    let mut out = fields[start].scale(w[0]);
    for j in 1..4 {
        out = out.axpy(w[j], &fields[start + j])?;
    }
    Ok(out)
}

/// Velocity at physical points `p + u`.
fn velocity(field: &TensorField, grid: &Grid, disp: &[[f64; 3]], sign: f64) -> Vec<[f64; 3]> {
    let n = grid.dim();
    let mut buf = vec![0.0; n];
    (0..grid.len())
        .map(|p| {
            let base = grid.position(p);
            let mut x = [0.0; 3];
            for a in 0..n {
                x[a] = base[a] + disp[p][a];
            }
            interpolate_at(field, &x, &mut buf);
            let mut v = [0.0; 3];
            for a in 0..n {
                v[a] = sign * buf[a];
            }
            v
        })
        .collect()
}

fn advance(disp: &[[f64; 3]], k: &[[f64; 3]], a: f64, n: usize) -> Vec<[f64; 3]> {
    disp.iter()
        .zip(k)
        .map(|(d, v)| {
            let mut o = *d;
            for i in 0..n {
                o[i] += a * v[i];
            }
            o
        })
        .collect()
}

/// `φ^* ĝ` for the map `p ↦ p + u(p)`, with finite-difference Jacobians of `u`.
fn pull_back(g_hat: &TensorField, disp: &[[f64; 3]], time: f64) -> Result<(MetricField, f64, f64)> {
    let grid = g_hat.grid().clone();
    let n = grid.dim();
    let u = TensorField::from_vec(&grid, Valence::VECTOR, disp.iter().flat_map(|d| d[..n].to_vec()).collect())?;
    let du = gradient(&u);
    let mut out = vec![0.0; grid.len() * n * n];
    let mut buf = vec![0.0; n * n];
    let (mut jmin, mut jmax) = (f64::INFINITY, 0.0f64);
    for p in 0..grid.len() {
        let base = grid.position(p);
        let mut x = [0.0; 3];
        for a in 0..n {
            x[a] = base[a] + disp[p][a];
        }
        interpolate_at(g_hat, &x, &mut buf);
        // J^a_i = δ^a_i + ∂_i u^a
        let d = du.at(p);
        let mut jac = [[0.0; 3]; 3];
        for a in 0..n {
            for i in 0..n {
                jac[a][i] = if a == i { 1.0 } else { 0.0 } + d[a * n + i];
            }
        }
        let det = crate::linalg::det(&jac, n);
        if !(0.1..=10.0).contains(&det) {
            return Err(FlowError::JacobianDegenerate { node: p, time, det });
        }
        jmin = jmin.min(det);
        jmax = jmax.max(det);
        let o = &mut out[p * n * n..(p + 1) * n * n];
        for i in 0..n {
            for j in i..n {
                let mut s = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        s += buf[a * n + b] * jac[a][i] * jac[b][j];
                    }
                }
                o[i * n + j] = s;
                o[j * n + i] = s;
            }
        }
    }
    let g = MetricField::new(TensorField::from_vec(&grid, Valence::SYM2, out)?.with_time(time))?;
    Ok((g, jmin, jmax))
}

/// Pulls a DeTurck trajectory `ĝ_t` (full metrics) back along the flow of `X_{ḡ(t)}(ĝ_t)`.
pub fn recover_ricci_flow(deturck: &FlowTrajectory, bg: &BackgroundMode) -> Result<(FlowTrajectory, PullbackReport)> {
    recover_ricci_flow_with(deturck, bg, VelocitySign::Plus)
}

pub fn recover_ricci_flow_with(deturck: &FlowTrajectory, bg: &BackgroundMode, sign: VelocitySign) -> Result<(FlowTrajectory, PullbackReport)> {
    let grid: Arc<Grid> = deturck.grid.clone();
    let n = grid.dim();
    let m = deturck.times.len();
    if m < 3 {
        return Err(FlowError::Config("the pullback needs at least three samples".into()));
    }
    let metrics = deturck
        .fields
        .iter()
        .zip(&deturck.times)
        .map(|(f, &t)| {
            MetricField::new(f.clone()).map_err(|e| match e {
                FlowError::NotPositiveDefinite { node, .. } => FlowError::PerturbationTooLarge { time: t, node },
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let fields = metrics
        .iter()
        .zip(&deturck.times)
        .map(|(g, &t)| deturck_vector_field(g, &bg.metric_at(t)?))
        .collect::<Result<Vec<_>>>()?;
    let max_vector_field = fields.iter().map(|f| f.max_abs()).fold(0.0, f64::max);

    let s = sign.factor();
    let mut disp = vec![[0.0; 3]; grid.len()];
    let mut pulled = Vec::with_capacity(m);
    let (mut jmin, mut jmax) = (f64::INFINITY, 0.0f64);
    let mut max_displacement = 0.0f64;
    for k in 0..m {
        if k > 0 {
            let dt = deturck.times[k] - deturck.times[k - 1];
            let mid = midpoint_field(&fields, k - 1)?;
            let k1 = velocity(&fields[k - 1], &grid, &disp, s);
            let k2 = velocity(&mid, &grid, &advance(&disp, &k1, 0.5 * dt, n), s);
            let k3 = velocity(&mid, &grid, &advance(&disp, &k2, 0.5 * dt, n), s);
            let k4 = velocity(&fields[k], &grid, &advance(&disp, &k3, dt, n), s);
            for p in 0..grid.len() {
                for a in 0..n {
                    disp[p][a] += dt / 6.0 * (k1[p][a] + 2.0 * k2[p][a] + 2.0 * k3[p][a] + k4[p][a]);
                    max_displacement = max_displacement.max(disp[p][a].abs());
                }
            }
        }
        let (g, lo, hi) = pull_back(metrics[k].field(), &disp, deturck.times[k])?;
        jmin = jmin.min(lo);
        jmax = jmax.max(hi);
        pulled.push(g);
    }

    let mut residual_series = Vec::new();
    let mut ricci_scale = 0.0f64;
    for k in 1..m - 1 {
        let dt = deturck.times[k + 1] - deturck.times[k - 1];
        let dg = pulled[k + 1].field().axpy(-1.0, pulled[k - 1].field())?.scale(1.0 / dt);
        let geo = MetricGeometry::new(&pulled[k])?;
        let two_ric = geo.ricci.scale(2.0);
        ricci_scale = ricci_scale.max(tensor_pointwise_norm(&two_ric, &pulled[k])?.max_abs());
        let r = dg.axpy(1.0, &two_ric)?;
        residual_series.push((deturck.times[k], tensor_pointwise_norm(&r, &pulled[k])?.max_abs()));
    }
    let residual = residual_series.iter().map(|p| p.1).fold(0.0, f64::max);
    let traj = FlowTrajectory::new(
        grid,
        deturck.times.clone(),
        pulled.into_iter().map(|g| g.into_field()).collect(),
        StepMeta { integrator: "pullback".into(), ..deturck.meta.clone() },
    )?;
    Ok((
        traj,
        PullbackReport {
            sign,
            residual,
            residual_series,
            ricci_scale,
            max_displacement,
            min_jacobian: jmin,
            max_jacobian: jmax,
            max_vector_field,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn cubic_interpolation_is_exact_on_cubics() {
        let w = cubic_weights(0.3);
        let f = |x: f64| 1.0 + 2.0 * x - x * x + 0.5 * x * x * x;
        let v: f64 = (0..4).map(|j| w[j] * f(j as f64 - 1.0)).sum();
        assert!((v - f(0.3)).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn interpolation_reproduces_nodes_and_wraps() {
        let grid = Arc::new(Grid::new(2, &[16, 16], &[2.0 * PI, 2.0 * PI]).unwrap());
        let f = TensorField::from_fn(&grid, Valence::SCALAR, |x, o| o[0] = x[0].sin() * x[1].cos()).unwrap();
        let mut out = [0.0];
        let node = grid.node(&[3, 5]);
        interpolate_at(&f, &grid.position(node), &mut out);
        assert!((out[0] - f.at(node)[0]).abs() < 1e-15);
        interpolate_at(&f, &[2.0 * PI + 0.1, -0.2, 0.0], &mut out);
        assert!((out[0] - 0.1f64.sin() * 0.2f64.cos()).abs() < 2e-3);
    }
}
