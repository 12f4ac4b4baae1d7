//! Method-of-lines time stepping: the Lichnerowicz heat flow with and without forcing,
//! the background Ricci flow, the full DeTurck flow, and heat-kernel probes.
//!
//! All integrators are classical RK4 with `Δt ≤ cfl · Δx²_min / (2n)`.

mod kernel;
mod trajectory;

use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::deturck::{deturck_operator_with, lichnerowicz_with, ForcingDecomposition};
use crate::error::{FlowError, Result};
use crate::geometry::MetricGeometry;
use crate::grid::Grid;
use crate::tensor::{MetricField, TensorField, Valence};

pub use kernel::{kernel_probe, GaussianFitReport, KernelProbe, ProbeConfig, ProbeSample};
pub use trajectory::{load_sample, FlowTrajectory, StepMeta};

/// Time-step policy shared by every integrator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepConfig {
    pub cfl: f64,
    /// Integrator steps between stored samples.
    pub sample_stride: usize,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig { cfl: 0.2, sample_stride: 1 }
    }
}

impl StepConfig {
    pub fn new(cfl: f64, sample_stride: usize) -> Self {
        StepConfig { cfl, sample_stride: sample_stride.max(1) }
    }

    /// Largest accepted CFL number for a grid: half the RK4 real-axis stability bound
    /// against the stencil's Nyquist eigenvalue in every direction.
    pub fn cfl_limit(grid: &Grid) -> f64 {
        2.785 / grid.stencil().second_spectral_radius()
    }

    pub fn max_dt(&self, grid: &Grid) -> Result<f64> {
        let limit = Self::cfl_limit(grid);
        if !(self.cfl > 0.0 && self.cfl <= limit) {
            return Err(FlowError::Cfl { cfl: self.cfl, limit });
        }
        let h = grid.min_spacing();
        Ok(self.cfl * h * h / (2.0 * grid.dim() as f64))
    }

    /// Step count (a multiple of the sample stride) and uniform step covering `span`.
    pub fn steps(&self, grid: &Grid, span: f64) -> Result<(usize, f64)> {
        if !(span > 0.0) {
            return Err(FlowError::Config(format!("time span {span} must be positive")));
        }
        let dt_max = self.max_dt(grid)?;
        let stride = self.sample_stride.max(1);
        let mut n = ((span / dt_max) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        n = n.div_ceil(stride) * stride;
        Ok((n, span / n as f64))
    }

    /// Sample times `t0, t0 + stride·dt, …, t1` of an integration over `[t0, t1]`.
    pub fn sample_times(&self, grid: &Grid, t0: f64, t1: f64) -> Result<Vec<f64>> {
        let (n, dt) = self.steps(grid, t1 - t0)?;
        let stride = self.sample_stride.max(1);
        let mut times: Vec<f64> = (0..=n / stride).map(|j| t0 + (j * stride) as f64 * dt).collect();
        *times.last_mut().expect("non-empty") = t1;
        Ok(times)
    }
}

/// Generic RK4 driver storing every `sample_stride`-th state.
pub(crate) fn rk4<F>(y0: TensorField, t0: f64, t1: f64, cfg: &StepConfig, name: &str, mut rhs: F) -> Result<FlowTrajectory>
where
    F: FnMut(f64, &TensorField) -> Result<TensorField>,
{
    let grid = y0.grid().clone();
    let (n, dt) = cfg.steps(&grid, t1 - t0)?;
    let stride = cfg.sample_stride.max(1);
    let mut times = vec![t0];
    let mut fields = vec![y0.clone().with_time(t0)];
    let mut y = y0;
    for k in 0..n {
        let t = t0 + k as f64 * dt;
        let th = t0 + (k as f64 + 0.5) * dt;
        let te = if k + 1 == n { t1 } else { t0 + (k + 1) as f64 * dt };
        let k1 = rhs(t, &y)?;
        let k2 = rhs(th, &y.axpy(0.5 * dt, &k1)?)?;
        let k3 = rhs(th, &y.axpy(0.5 * dt, &k2)?)?;
        let k4 = rhs(te, &y.axpy(dt, &k3)?)?;
        let mut next = y.clone();
        {
            let d = next.data_mut();
            let (a, b, c, e) = (k1.data(), k2.data(), k3.data(), k4.data());
            for i in 0..d.len() {
                d[i] += dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + e[i]);
            }
        }
        next.check_finite("rk4 step")?;
        y = next;
        if (k + 1) % stride == 0 {
            times.push(te);
            fields.push(y.clone().with_time(te));
        }
    }
    FlowTrajectory::new(grid, times, fields, StepMeta { integrator: name.to_string(), dt, cfl: cfg.cfl, sample_stride: stride })
}

/// Monitored history of a Ricci-flow integration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RicciFlowDiagnostics {
    pub times: Vec<f64>,
    pub sup_rm: Vec<f64>,
    pub sup_scalar: Vec<f64>,
    pub volume: Vec<f64>,
    /// Largest `sup|Rm|` seen at any step.
    pub max_sup_rm: f64,
    pub lambda_max: f64,
}

/// A Ricci-flow background stored as metric samples, read through cubic interpolation.
pub struct RicciBackground {
    trajectory: Arc<FlowTrajectory>,
    offset: f64,
    diagnostics: Arc<RicciFlowDiagnostics>,
    cache: Mutex<Vec<(u64, Arc<MetricGeometry>)>>,
}

impl Clone for RicciBackground {
    fn clone(&self) -> Self {
        RicciBackground {
            trajectory: self.trajectory.clone(),
            offset: self.offset,
            diagnostics: self.diagnostics.clone(),
            cache: Mutex::new(Vec::new()),
        }
    }
}

impl std::fmt::Debug for RicciBackground {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RicciBackground")
            .field("samples", &self.trajectory.len())
            .field("offset", &self.offset)
            .field("max_sup_rm", &self.diagnostics.max_sup_rm)
            .finish()
    }
}

/// Background metric for the linear and nonlinear solves: frozen `g₀`, or `g_t` along Ricci flow.
#[derive(Clone, Debug)]
pub enum BackgroundMode {
    Static(Arc<MetricGeometry>),
    RicciFlow(RicciBackground),
}

impl BackgroundMode {
    pub fn static_metric(g: &MetricField) -> Result<Self> {
        Ok(BackgroundMode::Static(Arc::new(MetricGeometry::new(g)?)))
    }

    /// Integrates the Ricci flow from `g0` over `[0, horizon]` and wraps it.
    pub fn ricci_flow(g0: &MetricField, horizon: f64, cfg: &StepConfig, lambda_max: f64) -> Result<Self> {
        let (traj, diag) = integrate_ricci_flow(g0, horizon, cfg, lambda_max)?;
        Ok(Self::from_ricci_trajectory(traj, diag))
    }

    pub fn from_ricci_trajectory(trajectory: FlowTrajectory, diagnostics: RicciFlowDiagnostics) -> Self {
        BackgroundMode::RicciFlow(RicciBackground {
            trajectory: Arc::new(trajectory),
            offset: 0.0,
            diagnostics: Arc::new(diagnostics),
            cache: Mutex::new(Vec::new()),
        })
    }

    /// The same background viewed from `start`: local time 0 is global time `start`.
    pub fn shifted(&self, start: f64) -> Self {
        match self {
            BackgroundMode::Static(g) => BackgroundMode::Static(g.clone()),
            BackgroundMode::RicciFlow(r) => {
                BackgroundMode::RicciFlow(RicciBackground { offset: r.offset + start, ..r.clone() })
            }
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self, BackgroundMode::Static(_))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        match self {
            BackgroundMode::Static(g) => g.grid(),
            BackgroundMode::RicciFlow(r) => &r.trajectory.grid,
        }
    }

    /// Local time horizon covered by the background (infinite when static).
    pub fn horizon(&self) -> f64 {
        match self {
            BackgroundMode::Static(_) => f64::INFINITY,
            BackgroundMode::RicciFlow(r) => r.trajectory.horizon() - r.offset,
        }
    }

    pub fn metric_at(&self, t: f64) -> Result<MetricField> {
        match self {
            BackgroundMode::Static(g) => Ok(g.metric.clone()),
            BackgroundMode::RicciFlow(r) => MetricField::new(r.trajectory.interpolate(t + r.offset)?),
        }
    }

    pub fn initial_metric(&self) -> Result<MetricField> {
        self.metric_at(0.0)
    }

    pub fn geometry_at(&self, t: f64) -> Result<Arc<MetricGeometry>> {
        match self {
            BackgroundMode::Static(g) => Ok(g.clone()),
            BackgroundMode::RicciFlow(r) => {
                let key = (t + r.offset).to_bits();
                {
                    let cache = r.cache.lock().expect("cache lock");
                    if let Some((_, g)) = cache.iter().find(|(k, _)| *k == key) {
                        return Ok(g.clone());
                    }
                }
                let geo = Arc::new(MetricGeometry::new(&self.metric_at(t)?)?);
                let mut cache = r.cache.lock().expect("cache lock");
                if cache.len() >= 4 {
                    cache.remove(0);
                }
                cache.push((key, geo.clone()));
                Ok(geo)
            }
        }
    }

    /// Monitored `sup|Rm|` over the background's lifetime (static: of `g₀`).
    pub fn monitored_sup_rm(&self) -> f64 {
        match self {
            BackgroundMode::Static(g) => g.sup_rm(),
            BackgroundMode::RicciFlow(r) => r.diagnostics.max_sup_rm,
        }
    }

    pub fn diagnostics(&self) -> Option<&RicciFlowDiagnostics> {
        match self {
            BackgroundMode::Static(_) => None,
            BackgroundMode::RicciFlow(r) => Some(&r.diagnostics),
        }
    }

    pub fn trajectory(&self) -> Option<&FlowTrajectory> {
        match self {
            BackgroundMode::Static(_) => None,
            BackgroundMode::RicciFlow(r) => Some(&r.trajectory),
        }
    }
}

/// Time-indexed forcing decompositions, sampled at a solve's sample times.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcingSeries {
    pub times: Vec<f64>,
    pub parts: Vec<ForcingDecomposition>,
}

impl ForcingSeries {
    pub fn zeros(grid: &Arc<Grid>, times: &[f64]) -> Self {
        ForcingSeries { times: times.to_vec(), parts: times.iter().map(|_| ForcingDecomposition::zeros(grid)).collect() }
    }

    pub fn scale(&self, a: f64) -> Self {
        ForcingSeries { times: self.times.clone(), parts: self.parts.iter().map(|p| p.scale(a)).collect() }
    }

    pub fn axpy(&self, a: f64, other: &ForcingSeries) -> Result<Self> {
        if self.times != other.times {
            return Err(FlowError::Shape("forcing series sampled at different times".into()));
        }
        let parts = self.parts.iter().zip(&other.parts).map(|(p, q)| p.axpy(a, q)).collect::<Result<_>>()?;
        Ok(ForcingSeries { times: self.times.clone(), parts })
    }

    pub fn is_zero(&self) -> bool {
        self.parts.iter().all(|p| p.is_zero())
    }
}

/// `Δ_L h` with respect to `g`.
pub fn lichnerowicz_apply(h: &TensorField, g: &MetricField) -> Result<TensorField> {
    if h.valence() != Valence::SYM2 {
        return Err(FlowError::Shape(format!("Δ_L acts on (0,2) fields, got {}", h.valence())));
    }
    Ok(lichnerowicz_with(h, &MetricGeometry::new(g)?))
}

fn heat_rhs(bg: &BackgroundMode, t: f64, u: &TensorField) -> Result<TensorField> {
    Ok(lichnerowicz_with(u, &*bg.geometry_at(t)?))
}

/// Solves `(∂_τ − Δ_L^{g(τ)}) u = 0` from `s` to `t`.
pub fn evolve_homogeneous(u0: &TensorField, s: f64, t: f64, bg: &BackgroundMode, cfg: &StepConfig) -> Result<TensorField> {
    let (n, _) = cfg.steps(u0.grid(), t - s)?;
    let c = StepConfig { cfl: cfg.cfl, sample_stride: n };
    Ok(evolve_homogeneous_trajectory(u0, s, t, bg, &c)?.last().clone())
}

/// [`evolve_homogeneous`] keeping the samples.
pub fn evolve_homogeneous_trajectory(u0: &TensorField, s: f64, t: f64, bg: &BackgroundMode, cfg: &StepConfig) -> Result<FlowTrajectory> {
    if u0.valence() != Valence::SYM2 {
        return Err(FlowError::Shape(format!("heat flow acts on (0,2) fields, got {}", u0.valence())));
    }
    if t > s + bg.horizon() + 1e-12 && !bg.is_static() {
        return Err(FlowError::Config(format!("background ends before t = {t}")));
    }
    rk4(u0.clone(), s, t, cfg, "rk4-lichnerowicz", |tau, u| heat_rhs(bg, tau, u))
}

/// Solves `(∂_t − Δ_L) h = r + ∇*s` on `[0, horizon]` with `h(0) = h0`.
///
/// `forcing` must be sampled at exactly the sample times this solve produces
/// (see [`StepConfig::sample_times`]); stage values are cubic in time between samples.
pub fn duhamel_solve(
    h0: &TensorField,
    forcing: Option<&ForcingSeries>,
    bg: &BackgroundMode,
    horizon: f64,
    cfg: &StepConfig,
) -> Result<FlowTrajectory> {
    let grid = h0.grid().clone();
    let times = cfg.sample_times(&grid, 0.0, horizon)?;
    let assembled = match forcing {
        Some(f) if !f.is_zero() => {
            let tol = 1e-12 * horizon.max(1.0);
            if f.times.len() != times.len() || f.times.iter().zip(&times).any(|(a, b)| (a - b).abs() > tol) {
                return Err(FlowError::Shape(format!(
                    "forcing has {} samples but the solve produces {}",
                    f.times.len(),
                    times.len()
                )));
            }
            let fields = f
                .parts
                .iter()
                .zip(&times)
                .map(|(p, &t)| Ok(p.assemble(&*bg.geometry_at(t)?)?.with_time(t)))
                .collect::<Result<Vec<_>>>()?;
            Some(FlowTrajectory::new(grid.clone(), times.clone(), fields, StepMeta {
                integrator: "forcing".into(),
                dt: 0.0,
                cfl: cfg.cfl,
                sample_stride: cfg.sample_stride,
            })?)
        }
        _ => None,
    };
    rk4(h0.clone(), 0.0, horizon, cfg, "rk4-duhamel", |t, h| {
        let mut out = heat_rhs(bg, t, h)?;
        if let Some(f) = &assembled {
            out = out.axpy(1.0, &f.interpolate(t)?)?;
        }
        Ok(out)
    })
}

/// `∂_t g = −2 Ric(g)` from `g0` over `[0, horizon]`, monitoring `sup|Rm|` every step.
pub fn integrate_ricci_flow(
    g0: &MetricField,
    horizon: f64,
    cfg: &StepConfig,
    lambda_max: f64,
) -> Result<(FlowTrajectory, RicciFlowDiagnostics)> {
    let mut diag = RicciFlowDiagnostics { lambda_max, ..Default::default() };
    let stride = cfg.sample_stride.max(1);
    let mut stage = 0usize;
    let traj = rk4(g0.field().clone(), 0.0, horizon, cfg, "rk4-ricci", |t, y| {
        let g = MetricField::new(y.clone()).map_err(|e| e.context(format!("Ricci flow at t = {t:.6}")))?;
        let geo = MetricGeometry::new(&g)?;
        if stage.is_multiple_of(4) {
            let rm = geo.sup_rm();
            diag.max_sup_rm = diag.max_sup_rm.max(rm);
            if rm > lambda_max {
                return Err(FlowError::BlowUp { value: rm, limit: lambda_max, time: t });
            }
            let step = stage / 4;
            if step.is_multiple_of(stride) {
                diag.times.push(t);
                diag.sup_rm.push(rm);
                diag.sup_scalar.push(geo.scalar.max_abs());
                diag.volume.push(geo.total_volume());
            }
        }
        stage += 1;
        Ok(geo.ricci.scale(-2.0))
    })?;
    let last = MetricField::new(traj.last().clone())?;
    let geo = MetricGeometry::new(&last)?;
    let rm = geo.sup_rm();
    diag.max_sup_rm = diag.max_sup_rm.max(rm);
    diag.times.push(horizon);
    diag.sup_rm.push(rm);
    diag.sup_scalar.push(geo.scalar.max_abs());
    diag.volume.push(geo.total_volume());
    if rm > lambda_max {
        return Err(FlowError::BlowUp { value: rm, limit: lambda_max, time: horizon });
    }
    Ok((traj, diag))
}

/// Full nonlinear DeTurck flow `∂_t ĝ = P_{ḡ(t)}(ĝ)` with `ḡ(t)` the background; returns
/// `h_t = ĝ_t − ḡ(t)` at the sample times. This path never touches the `L`/`Q` split.
pub fn integrate_deturck_direct(g_hat0: &MetricField, bg: &BackgroundMode, horizon: f64, cfg: &StepConfig) -> Result<FlowTrajectory> {
    let static_bar = match bg {
        BackgroundMode::Static(g) => Some(g.clone()),
        BackgroundMode::RicciFlow(_) => None,
    };
    let ghat = rk4(g_hat0.field().clone(), 0.0, horizon, cfg, "rk4-deturck", |t, y| {
        let g = MetricField::new(y.clone()).map_err(|e| match e {
            FlowError::NotPositiveDefinite { node, .. } => FlowError::PerturbationTooLarge { time: t, node },
            other => other,
        })?;
        let bar = match &static_bar {
            Some(b) => b.clone(),
            None => bg.geometry_at(t)?,
        };
        let geo = MetricGeometry::new(&g)?;
        if g == bar.metric {
            Ok(deturck_operator_with(&geo, None))
        } else {
            Ok(deturck_operator_with(&geo, Some(&bar.christoffel)))
        }
    })?;
    let fields = ghat
        .fields
        .iter()
        .zip(&ghat.times)
        .map(|(f, &t)| Ok(f.axpy(-1.0, bg.metric_at(t)?.field())?.with_time(t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FlowTrajectory { fields, ..ghat })
}
