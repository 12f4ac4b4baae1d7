//! The Picard map `Φ` and its iteration in the `X_T` ball of radius `δ`.
//!
//! `Φ(h)` is the solution of `(∂_t − Δ_L) k = Z + R[h] + ∇*S[h]` with `k(0) = h₀`:
//! in static-existence mode `Z = −2 Ric(g₀)` and `h₀ = 0`; in perturbation mode
//! `Z = 0` and `h₀ = ĝ₀ − g₀`, with `Δ_L` taken along the background flow.

use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::deturck::{quadratic_terms_with, DeturckContext, ForcingDecomposition};
use crate::error::{FlowError, Result};
use crate::norms::{NormConfig, NormContext};
use crate::solver::{duhamel_solve, BackgroundMode, FlowTrajectory, ForcingSeries, StepConfig, StepMeta};
use crate::tensor::{MetricField, TensorField, Valence};

#[derive(Clone, Debug)]
pub enum PicardMode {
    StaticExistence,
    Perturbation { h0: TensorField },
}

#[derive(Clone, Debug)]
pub struct PicardProblem {
    pub mode: PicardMode,
    pub bg: BackgroundMode,
    pub horizon: f64,
    pub delta: f64,
    /// Absolute tolerance on `‖h_{k+1} − h_k‖_{X_T}`.
    pub tol: f64,
    pub max_iter: usize,
    pub step: StepConfig,
    pub norm: NormConfig,
}

impl PicardProblem {
    /// `ḡ = g₀`, `Z = −2 Ric(g₀)`, zero initial value.
    pub fn static_existence(g0: &MetricField, horizon: f64, delta: f64) -> Result<Self> {
        Self::new(PicardMode::StaticExistence, BackgroundMode::static_metric(g0)?, horizon, delta)
    }

    /// Perturbation `h₀` of a background that is itself a Ricci flow.
    pub fn perturbation(bg: BackgroundMode, h0: TensorField, horizon: f64, delta: f64) -> Result<Self> {
        Self::new(PicardMode::Perturbation { h0 }, bg, horizon, delta)
    }

    pub fn new(mode: PicardMode, bg: BackgroundMode, horizon: f64, delta: f64) -> Result<Self> {
        let p = PicardProblem {
            mode,
            bg,
            horizon,
            delta,
            tol: 1e-10 * delta,
            max_iter: 50,
            step: StepConfig::default(),
            norm: NormConfig::default(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_step(mut self, step: StepConfig) -> Self {
        self.step = step;
        self
    }

    pub fn with_norm(mut self, norm: NormConfig) -> Self {
        self.norm = norm;
        self
    }

    pub fn with_tolerance(mut self, tol: f64, max_iter: usize) -> Self {
        self.tol = tol;
        self.max_iter = max_iter;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.delta > 0.0 && self.tol > 0.0) {
            return Err(FlowError::Config("horizon, delta and tol must be positive".into()));
        }
        if self.horizon > self.bg.horizon() * (1.0 + 1e-12) {
            return Err(FlowError::Config(format!("background ends before T = {}", self.horizon)));
        }
        match &self.mode {
            PicardMode::StaticExistence => {
                if !self.bg.is_static() {
                    return Err(FlowError::Config("static-existence mode needs a static background".into()));
                }
            }
            PicardMode::Perturbation { h0 } => {
                if h0.valence() != Valence::SYM2 || **h0.grid() != **self.bg.grid() {
                    return Err(FlowError::Shape("h₀ must be a (0,2) field on the background grid".into()));
                }
                if let BackgroundMode::Static(g) = &self.bg {
                    if g.ricci.max_abs() > 1e-10 {
                        return Err(FlowError::Config(
                            "perturbation mode needs a Ricci-flow background; a static one must be Ricci flat".into(),
                        ));
                    }
                }
                let sup = crate::geometry::tensor_pointwise_norm(h0, &self.bg.initial_metric()?)?.max_abs();
                if sup >= self.delta {
                    return Err(FlowError::Config(format!("‖h₀‖_∞ = {sup} is not below δ = {}", self.delta)));
                }
            }
        }
        Ok(())
    }

    pub fn sample_times(&self) -> Result<Vec<f64>> {
        self.step.sample_times(self.bg.grid(), 0.0, self.horizon)
    }

    /// Precomputes everything `Φ` reuses across iterations.
    pub fn workspace(&self) -> Result<PicardWorkspace> {
        self.validate()?;
        let times = self.sample_times()?;
        let norms = NormContext::new(&self.bg, &times, self.horizon, &self.norm)?;
        let contexts = (0..times.len()).map(|k| Arc::new(DeturckContext::diagonal(norms.geometry(k).clone()))).collect();
        let grid = self.bg.grid().clone();
        let (h0, z) = match &self.mode {
            PicardMode::StaticExistence => {
                (TensorField::zeros(&grid, Valence::SYM2), Some(norms.geometry(0).ricci.scale(-2.0)))
            }
            PicardMode::Perturbation { h0 } => (h0.clone(), None),
        };
        Ok(PicardWorkspace { times, contexts, norms, h0, z })
    }
}

/// Per-problem data shared by every application of `Φ`.
pub struct PicardWorkspace {
    pub times: Vec<f64>,
    contexts: Vec<Arc<DeturckContext>>,
    pub norms: NormContext,
    h0: TensorField,
    z: Option<TensorField>,
}

impl PicardWorkspace {
    /// `(R[h] + Z, S[h])` at every sample.
    pub fn forcing(&self, h: &FlowTrajectory, with_z: bool) -> Result<ForcingSeries> {
        if h.times.len() != self.times.len() {
            return Err(FlowError::Shape(format!("{} samples, expected {}", h.times.len(), self.times.len())));
        }
        let parts = h
            .fields
            .iter()
            .zip(&self.contexts)
            .zip(&self.times)
            .map(|((f, ctx), &t)| {
                let mut q = quadratic_terms_with(f, ctx).map_err(|e| match e {
                    FlowError::NotPositiveDefinite { node, .. } => FlowError::PerturbationTooLarge { time: t, node },
                    other => other,
                })?;
                if let (true, Some(z)) = (with_z, &self.z) {
                    q.r_part = q.r_part.axpy(1.0, z)?;
                }
                Ok(q)
            })
            .collect::<Result<Vec<ForcingDecomposition>>>()?;
        Ok(ForcingSeries { times: self.times.clone(), parts })
    }

    pub fn phi(&self, prob: &PicardProblem, h: &FlowTrajectory) -> Result<FlowTrajectory> {
        let q = self.forcing(h, true)?;
        duhamel_solve(&self.h0, Some(&q), &prob.bg, prob.horizon, &prob.step)
    }

    /// `Φ(v) − Φ(w)`, a single forced solve from zero data.
    pub fn phi_difference(&self, prob: &PicardProblem, v: &FlowTrajectory, w: &FlowTrajectory) -> Result<FlowTrajectory> {
        let q = self.forcing(v, false)?.axpy(-1.0, &self.forcing(w, false)?)?;
        let zero = TensorField::zeros(self.h0.grid(), Valence::SYM2);
        duhamel_solve(&zero, Some(&q), &prob.bg, prob.horizon, &prob.step)
    }

    pub fn zero_trajectory(&self, prob: &PicardProblem) -> Result<FlowTrajectory> {
        let zero = TensorField::zeros(self.h0.grid(), Valence::SYM2);
        FlowTrajectory::new(
            self.h0.grid().clone(),
            self.times.clone(),
            self.times.iter().map(|&t| zero.clone().with_time(t)).collect(),
            StepMeta { integrator: "zero".into(), dt: 0.0, cfl: prob.step.cfl, sample_stride: prob.step.sample_stride },
        )
    }

    /// The iteration's starting point: zero (static) or the homogeneous evolution of `h₀`.
    pub fn start(&self, prob: &PicardProblem) -> Result<FlowTrajectory> {
        match prob.mode {
            PicardMode::StaticExistence => self.zero_trajectory(prob),
            PicardMode::Perturbation { .. } => duhamel_solve(&self.h0, None, &prob.bg, prob.horizon, &prob.step),
        }
    }
}

/// `Φ(h)` for one trajectory sampled at the problem's sample times.
pub fn phi_apply(h: &FlowTrajectory, prob: &PicardProblem) -> Result<FlowTrajectory> {
    prob.workspace()?.phi(prob, h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `‖h_k‖_{X_T}` of the new iterate.
    pub norm: f64,
    /// `‖h_k − h_{k−1}‖_{X_T}`.
    pub increment: f64,
    /// Increment over the previous increment.
    pub ratio: Option<f64>,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest increment ratio past the first iteration.
    pub measured_ratio: Option<f64>,
}

impl IterationTrace {
    /// Wall times stay out of the CSV so repeated runs produce identical files.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iteration,norm,increment,ratio\n");
        for r in &self.records {
            let ratio = r.ratio.map_or_else(String::new, |v| format!("{v:.16e}"));
            let _ = writeln!(out, "{},{:.16e},{:.16e},{}", r.iteration, r.norm, r.increment, ratio);
        }
        out
    }

    /// Every ratio past the first iteration is below one.
    pub fn geometric(&self) -> bool {
        self.records.iter().skip(1).all(|r| r.ratio.is_none_or(|q| q < 1.0))
    }
}

/// Iterates `h_{k+1} = Φ(h_k)` from the mode's natural start until the increment
/// drops below `tol`, checking `‖h_k‖_{X_T} ≤ δ` at every iterate.
pub fn picard_solve(prob: &PicardProblem) -> Result<(FlowTrajectory, IterationTrace)> {
    let ws = prob.workspace()?;
    let start = ws.start(prob)?;
    picard_iterate(prob, &ws, start)
}

/// [`picard_solve`] from a caller-supplied start.
pub fn picard_iterate(prob: &PicardProblem, ws: &PicardWorkspace, start: FlowTrajectory) -> Result<(FlowTrajectory, IterationTrace)> {
    let mut trace = IterationTrace::default();
    let norm0 = ws.norms.x_norm(&start)?.value;
    if norm0 > prob.delta {
        return Err(FlowError::BallEscape { iteration: 0, norm: norm0, delta: prob.delta });
    }
    let mut h = start;
    let mut last_increment: Option<f64> = None;
    for k in 1..=prob.max_iter {
        let clock = Instant::now();
        let next = ws.phi(prob, &h)?;
        let increment = ws.norms.x_norm(&next.axpy(-1.0, &h)?)?.value;
        let norm = ws.norms.x_norm(&next)?.value;
        let ratio = last_increment.filter(|&p| p > 0.0).map(|p| increment / p);
        trace.records.push(IterationRecord { iteration: k, norm, increment, ratio, wall_seconds: clock.elapsed().as_secs_f64() });
        trace.iterations = k;
        if norm > prob.delta {
            return Err(FlowError::BallEscape { iteration: k, norm, delta: prob.delta });
        }
        h = next;
        if increment <= prob.tol {
            trace.converged = true;
            break;
        }
        last_increment = Some(increment);
    }
    trace.measured_ratio = trace.records.iter().skip(1).filter_map(|r| r.ratio).reduce(f64::max);
    if !trace.converged {
        return Err(FlowError::NoConvergence { iterations: prob.max_iter, ratio: trace.measured_ratio.unwrap_or(f64::NAN) });
    }
    Ok((h, trace))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    pub ratio: f64,
    pub norm_v: f64,
    pub norm_w: f64,
    pub norm_difference: f64,
    pub norm_image_difference: f64,
}

/// `‖Φ(v) − Φ(w)‖_{X_T} / ‖v − w‖_{X_T}`.
pub fn contraction_ratio(v: &FlowTrajectory, w: &FlowTrajectory, prob: &PicardProblem) -> Result<ContractionReport> {
    contraction_ratio_with(v, w, prob, &prob.workspace()?)
}

pub fn contraction_ratio_with(v: &FlowTrajectory, w: &FlowTrajectory, prob: &PicardProblem, ws: &PicardWorkspace) -> Result<ContractionReport> {
    let diff = ws.norms.x_norm(&v.axpy(-1.0, w)?)?.value;
    if diff == 0.0 {
        return Err(FlowError::DegeneratePair);
    }
    let image = ws.norms.x_norm(&ws.phi_difference(prob, v, w)?)?.value;
    Ok(ContractionReport {
        ratio: image / diff,
        norm_v: ws.norms.x_norm(v)?.value,
        norm_w: ws.norms.x_norm(w)?.value,
        norm_difference: diff,
        norm_image_difference: image,
    })
}
