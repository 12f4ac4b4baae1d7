//! Localized and global `X_T`, `Y_T` norms over parabolic cylinders.
//!
//! For a centre `x` and radius `r`, `P(x, r²) = B(x, r) × (0, r²)` and
//! `Ω(x, r²) = B(x, r) × (r²/2, r²)`. Balls and `|B|` use the initial background
//! metric; pointwise norms, covariant derivatives and volume elements use the
//! background at the sample time.
//!
//! Time integrals are sums over stored samples, sample `k` standing for the cell
//! `(t_{k−1}, t_k]`. A cutoff `τ` is snapped to the sample index nearest `τ / Δt`.
//! Spatial integrals are `Σ_y w(y) √det g(y) · cell volume` over ball nodes.
//! Radii run dyadically `√T, √T/2, …` down to three grid spacings, `r = √T` included.

mod audit;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::ball::{default_window, BallSearcher, GeodesicBall};
use crate::derivative::gradient;
use crate::error::{FlowError, Result};
use crate::geometry::{covariant_derivative_from_partial, pointwise_norm_with, MetricGeometry};
use crate::grid::Grid;
use crate::solver::{BackgroundMode, FlowTrajectory, ForcingSeries};
use crate::tensor::TensorField;

pub use audit::{norm_inequality_audit, AuditConfig, AuditRow, AuditTable, InequalityKind};

/// One value per node, one row per sample.
type PerSample = Vec<Vec<f64>>;

/// Which supremum is taken.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    X,
    Y0,
    Y1,
    /// `Y⁰_T + Y¹_T` of a supplied decomposition.
    Y,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormConfig {
    /// Centres are the nodes whose every coordinate index is a multiple of this.
    pub center_stride: usize,
    /// Smallest admitted radius in units of the largest grid spacing.
    pub min_radius_cells: f64,
    /// Neighbour window for the ball search; `None` picks the dimension default.
    pub window: Option<usize>,
}

impl Default for NormConfig {
    fn default() -> Self {
        NormConfig { center_stride: 1, min_radius_cells: 3.0, window: None }
    }
}

/// Space-time sets of one local norm, with the snapped sample indices.
#[derive(Clone, Debug, PartialEq)]
pub struct ParabolicCylinder {
    pub center: usize,
    pub radius: f64,
    pub ball: Arc<GeodesicBall>,
    /// `P` covers samples `1..=p_end`; the sup term also reads sample 0.
    pub p_end: usize,
    /// `Ω` covers samples `omega_start + 1..=p_end`.
    pub omega_start: usize,
    /// Snapped time of `r²`.
    pub p_time: f64,
    /// Snapped time of `r²/2`.
    pub omega_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub center: usize,
    pub position: [f64; 3],
    pub radius: f64,
}

/// The two (or three) terms of one local norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalNorm {
    pub center: usize,
    pub radius: f64,
    pub value: f64,
    pub terms: Vec<(String, f64)>,
}

/// A global norm with its witness and the scanned local values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub kind: NormKind,
    pub value: f64,
    pub witness: Witness,
    /// Terms of the local norm at the witness.
    pub terms: Vec<(String, f64)>,
    pub horizon: f64,
    pub radii: Vec<f64>,
    pub center_stride: usize,
    pub centers: usize,
    /// For `Y`: the separate `Y⁰` and `Y¹` reports.
    pub parts: Vec<NormReport>,
    #[serde(skip)]
    pub table: Vec<LocalNorm>,
}

impl NormReport {
    /// Per-(x, r) local values as CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("center,radius,value");
        if let Some(first) = self.table.first() {
            for (name, _) in &first.terms {
                out.push(',');
                out.push_str(name);
            }
        }
        out.push('\n');
        for row in &self.table {
            let _ = write!(out, "{},{:.16e},{:.16e}", row.center, row.radius, row.value);
            for (_, v) in &row.terms {
                let _ = write!(out, ",{v:.16e}");
            }
            out.push('\n');
        }
        out
    }
}

/// Per-node time-prefix data for one field sequence: running sup of the pointwise
/// size and running time integrals of two powers.
struct Prefix {
    /// `[node][k]`, length `K + 1` per node.
    sup: Vec<f64>,
    first: Vec<f64>,
    second: Vec<f64>,
    samples: usize,
}

impl Prefix {
    fn build(values: &[Vec<f64>], dvol: &[Vec<f64>], weights: &[f64], p1: f64, p2: f64) -> Prefix {
        let k1 = values.len();
        let nodes = values[0].len();
        let mut sup = vec![0.0; nodes * k1];
        let mut first = vec![0.0; nodes * k1];
        let mut second = vec![0.0; nodes * k1];
        for y in 0..nodes {
            let o = y * k1;
            sup[o] = values[0][y];
            for k in 1..k1 {
                let v = values[k][y];
                let w = weights[k] * dvol[k][y];
                sup[o + k] = sup[o + k - 1].max(v);
                first[o + k] = first[o + k - 1] + w * v.powf(p1);
                second[o + k] = second[o + k - 1] + w * v.powf(p2);
            }
        }
        Prefix { sup, first, second, samples: k1 }
    }

    fn sup_until(&self, ball: &GeodesicBall, end: usize) -> f64 {
        ball.nodes.iter().map(|&y| self.sup[y * self.samples + end]).fold(0.0, f64::max)
    }

    fn first_between(&self, ball: &GeodesicBall, start: usize, end: usize) -> f64 {
        ball.nodes.iter().map(|&y| self.first[y * self.samples + end] - self.first[y * self.samples + start]).sum()
    }

    fn second_between(&self, ball: &GeodesicBall, start: usize, end: usize) -> f64 {
        ball.nodes.iter().map(|&y| self.second[y * self.samples + end] - self.second[y * self.samples + start]).sum()
    }
}

/// Reusable setup for norm evaluations on one sample grid: centres, radii, balls and
/// the background geometry at every sample.
pub struct NormContext {
    grid: Arc<Grid>,
    times: Vec<f64>,
    horizon: f64,
    cfg: NormConfig,
    radii: Vec<f64>,
    centers: Vec<usize>,
    /// `[radius][centre]`.
    balls: Vec<Vec<Arc<GeodesicBall>>>,
    geometries: Vec<Arc<MetricGeometry>>,
    /// `√det g_t · cell volume` per sample and node.
    dvol: Vec<Vec<f64>>,
    weights: Vec<f64>,
    searcher_window: usize,
    initial: crate::tensor::MetricField,
}

impl std::fmt::Debug for NormContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NormContext")
            .field("horizon", &self.horizon)
            .field("samples", &self.times.len())
            .field("radii", &self.radii)
            .field("centers", &self.centers.len())
            .finish()
    }
}

fn exponent(n: usize, num: f64) -> f64 {
    num / (n as f64 + 4.0)
}

impl NormContext {
    /// `times` are the sample times of the fields to be measured; the first must be 0
    /// and the last at least `horizon`. Samples beyond `horizon` are ignored.
    pub fn new(bg: &BackgroundMode, times: &[f64], horizon: f64, cfg: &NormConfig) -> Result<Self> {
        let grid = bg.grid().clone();
        if times.len() < 2 || times[0].abs() > 1e-14 {
            return Err(FlowError::Config("norm samples must start at t = 0 and contain a positive time".into()));
        }
        if !(horizon > 0.0) || horizon > times[times.len() - 1] * (1.0 + 1e-12) {
            return Err(FlowError::Config(format!(
                "horizon {horizon} not covered by samples ending at {}",
                times[times.len() - 1]
            )));
        }
        let keep = times.iter().take_while(|&&t| t <= horizon * (1.0 + 1e-12)).count();
        let times = times[..keep].to_vec();
        let spacing = times[1] - times[0];
        if times.windows(2).any(|w| ((w[1] - w[0]) - spacing).abs() > 1e-9 * spacing) {
            return Err(FlowError::Config("norm samples must be uniformly spaced".into()));
        }
        let mut weights = vec![0.0; times.len()];
        for k in 1..times.len() {
            weights[k] = times[k] - times[k - 1];
        }
        let min_r = cfg.min_radius_cells * grid.max_spacing();
        let mut radii = Vec::new();
        let mut r = horizon.sqrt();
        while r >= min_r * (1.0 - 1e-12) {
            radii.push(r);
            r *= 0.5;
        }
        if radii.is_empty() {
            return Err(FlowError::Config(format!(
                "no admissible radius: √T = {} is below {} grid spacings",
                horizon.sqrt(),
                cfg.min_radius_cells
            )));
        }
        let stride = cfg.center_stride.max(1);
        let centers: Vec<usize> = (0..grid.len())
            .filter(|&x| grid.coords(x)[..grid.dim()].iter().all(|c| c % stride == 0))
            .collect();
        let initial = bg.initial_metric()?;
        let window = cfg.window.unwrap_or(default_window(grid.dim()));
        let mut searcher = BallSearcher::with_window(&initial, window);
        let balls = radii
            .iter()
            .map(|&r| centers.iter().map(|&x| Arc::new(searcher.ball(x, r))).collect())
            .collect();
        let geometries: Vec<Arc<MetricGeometry>> = if bg.is_static() {
            let g = bg.geometry_at(0.0)?;
            times.iter().map(|_| g.clone()).collect()
        } else {
            times.iter().map(|&t| bg.geometry_at(t)).collect::<Result<_>>()?
        };
        let cell = grid.cell_volume();
        let dvol = geometries.iter().map(|g| g.volume_density.iter().map(|v| v * cell).collect()).collect();
        Ok(NormContext {
            grid,
            times,
            horizon,
            cfg: cfg.clone(),
            radii,
            centers,
            balls,
            geometries,
            dvol,
            weights,
            searcher_window: window,
            initial,
        })
    }

    /// Context on a trajectory's own sample times.
    pub fn for_trajectory(bg: &BackgroundMode, f: &FlowTrajectory, horizon: f64, cfg: &NormConfig) -> Result<Self> {
        Self::new(bg, &f.times, horizon, cfg)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn centers(&self) -> &[usize] {
        &self.centers
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    /// Background geometry at sample `k`.
    pub fn geometry(&self, k: usize) -> &Arc<MetricGeometry> {
        &self.geometries[k]
    }

    fn snap(&self, tau: f64) -> usize {
        let dt = self.weights[1];
        ((tau / dt).round() as usize).min(self.times.len() - 1)
    }

    fn cylinder_with(&self, center: usize, radius: f64, ball: Arc<GeodesicBall>) -> Result<ParabolicCylinder> {
        let p_end = self.snap(radius * radius);
        if p_end == 0 {
            return Err(FlowError::EmptyCylinder { r2: radius * radius, first: self.times[1] });
        }
        let omega_start = self.snap(0.5 * radius * radius).min(p_end - 1);
        Ok(ParabolicCylinder {
            center,
            radius,
            ball,
            p_end,
            omega_start,
            p_time: self.times[p_end],
            omega_time: self.times[omega_start],
        })
    }

    /// The cylinder at an arbitrary centre and radius, with a freshly searched ball.
    pub fn cylinder(&self, center: usize, radius: f64) -> Result<ParabolicCylinder> {
        if center >= self.grid.len() || !(radius > 0.0) {
            return Err(FlowError::Config(format!("invalid cylinder ({center}, {radius})")));
        }
        let mut searcher = BallSearcher::with_window(&self.initial, self.searcher_window);
        self.cylinder_with(center, radius, Arc::new(searcher.ball(center, radius)))
    }

    fn check_times(&self, times: &[f64]) -> Result<()> {
        let tol = 1e-12 * self.horizon.max(1.0);
        if times.len() < self.times.len() || self.times.iter().zip(times).any(|(a, b)| (a - b).abs() > tol) {
            return Err(FlowError::Shape("fields are not sampled at the norm context's times".into()));
        }
        Ok(())
    }

    /// `|f|` and `|∇f|` at every sample and node.
    fn field_sizes(&self, fields: &[TensorField]) -> Result<(PerSample, PerSample)> {
        let mut sizes = Vec::with_capacity(self.times.len());
        let mut grads = Vec::with_capacity(self.times.len());
        for (k, f) in fields.iter().take(self.times.len()).enumerate() {
            if **f.grid() != *self.grid {
                return Err(FlowError::Shape("field on a different grid".into()));
            }
            let geo = &self.geometries[k];
            sizes.push(pointwise_norm_with(f, geo));
            let d = covariant_derivative_from_partial(f, &gradient(f), geo);
            grads.push(pointwise_norm_with(&d, geo));
        }
        Ok((sizes, grads))
    }

    fn x_prefix(&self, f: &FlowTrajectory) -> Result<(Prefix, Prefix)> {
        self.check_times(&f.times)?;
        let n = self.grid.dim() as f64;
        let (sizes, grads) = self.field_sizes(&f.fields)?;
        let size_prefix = Prefix::build(&sizes, &self.dvol, &self.weights, 1.0, 1.0);
        let grad_prefix = Prefix::build(&grads, &self.dvol, &self.weights, 2.0, n + 4.0);
        Ok((size_prefix, grad_prefix))
    }

    fn local_x_with(&self, pre: &(Prefix, Prefix), cyl: &ParabolicCylinder) -> LocalNorm {
        let n = self.grid.dim();
        let (sizes, grads) = pre;
        let vol = cyl.ball.volume;
        let sup = sizes.sup_until(&cyl.ball, cyl.p_end);
        let l2 = grads.first_between(&cyl.ball, 0, cyl.p_end).max(0.0).sqrt() / vol.sqrt();
        let q = n as f64 + 4.0;
        let lq = cyl.radius.powf(exponent(n, n as f64 + 2.0))
            * grads.second_between(&cyl.ball, cyl.omega_start, cyl.p_end).max(0.0).powf(1.0 / q)
            / vol.powf(1.0 / q);
        LocalNorm {
            center: cyl.center,
            radius: cyl.radius,
            value: sup + l2 + lq,
            terms: vec![("sup".into(), sup), ("grad_l2".into(), l2), ("grad_lq".into(), lq)],
        }
    }

    fn y_prefix(&self, series: &ForcingSeries, slot: NormKind) -> Result<Prefix> {
        self.check_times(&series.times)?;
        let n = self.grid.dim() as f64;
        let fields: Vec<TensorField> = series
            .parts
            .iter()
            .take(self.times.len())
            .map(|p| if slot == NormKind::Y0 { p.r_part.clone() } else { p.s_part.clone() })
            .collect();
        let sizes: Vec<Vec<f64>> =
            fields.iter().zip(&self.geometries).map(|(f, g)| pointwise_norm_with(f, g)).collect();
        Ok(if slot == NormKind::Y0 {
            Prefix::build(&sizes, &self.dvol, &self.weights, 1.0, 0.5 * (n + 4.0))
        } else {
            Prefix::build(&sizes, &self.dvol, &self.weights, 2.0, n + 4.0)
        })
    }

    fn local_y_with(&self, pre: &Prefix, slot: NormKind, cyl: &ParabolicCylinder) -> LocalNorm {
        let n = self.grid.dim();
        let q = n as f64 + 4.0;
        let vol = cyl.ball.volume;
        let first = pre.first_between(&cyl.ball, 0, cyl.p_end).max(0.0);
        let second = pre.second_between(&cyl.ball, cyl.omega_start, cyl.p_end).max(0.0);
        let (a, b, names) = if slot == NormKind::Y0 {
            (
                first / vol,
                cyl.radius.powf(exponent(n, 2.0 * n as f64 + 4.0)) * second.powf(2.0 / q) / vol.powf(2.0 / q),
                ["l1", "l_half_q"],
            )
        } else {
            (
                first.sqrt() / vol.sqrt(),
                cyl.radius.powf(exponent(n, n as f64 + 2.0)) * second.powf(1.0 / q) / vol.powf(1.0 / q),
                ["l2", "lq"],
            )
        };
        LocalNorm {
            center: cyl.center,
            radius: cyl.radius,
            value: a + b,
            terms: vec![(names[0].into(), a), (names[1].into(), b)],
        }
    }

    fn scan(&self, kind: NormKind, local: impl Fn(&ParabolicCylinder) -> LocalNorm) -> Result<NormReport> {
        let mut table: Vec<LocalNorm> = Vec::with_capacity(self.radii.len() * self.centers.len());
        let mut best: Option<usize> = None;
        for (ri, &r) in self.radii.iter().enumerate() {
            for (ci, &x) in self.centers.iter().enumerate() {
                let cyl = self.cylinder_with(x, r, self.balls[ri][ci].clone())?;
                let row = local(&cyl);
                if best.is_none_or(|b| row.value > table[b].value) {
                    best = Some(table.len());
                }
                table.push(row);
            }
        }
        let b: &LocalNorm = &table[best.expect("at least one cylinder")];
        Ok(NormReport {
            kind,
            value: b.value,
            witness: Witness { center: b.center, position: self.grid.position(b.center), radius: b.radius },
            terms: b.terms.clone(),
            horizon: self.horizon,
            radii: self.radii.clone(),
            center_stride: self.cfg.center_stride.max(1),
            centers: self.centers.len(),
            parts: Vec::new(),
            table,
        })
    }

    pub fn x_norm(&self, f: &FlowTrajectory) -> Result<NormReport> {
        let pre = self.x_prefix(f)?;
        self.scan(NormKind::X, |c| self.local_x_with(&pre, c))
    }

    /// `‖r‖_{Y⁰_T} + ‖s‖_{Y¹_T}`, each supremum taken separately.
    pub fn y_norm(&self, q: &ForcingSeries) -> Result<NormReport> {
        let p0 = self.y_prefix(q, NormKind::Y0)?;
        let p1 = self.y_prefix(q, NormKind::Y1)?;
        let y0 = self.scan(NormKind::Y0, |c| self.local_y_with(&p0, NormKind::Y0, c))?;
        let y1 = self.scan(NormKind::Y1, |c| self.local_y_with(&p1, NormKind::Y1, c))?;
        let lead = if y0.value >= y1.value { &y0 } else { &y1 };
        Ok(NormReport {
            kind: NormKind::Y,
            value: y0.value + y1.value,
            witness: lead.witness,
            terms: vec![("y0".into(), y0.value), ("y1".into(), y1.value)],
            horizon: self.horizon,
            radii: self.radii.clone(),
            center_stride: y0.center_stride,
            centers: y0.centers,
            table: Vec::new(),
            parts: vec![y0, y1],
        })
    }

    /// The local `X_{B(x,r)}` norm, recomputed from scratch.
    pub fn local_x(&self, f: &FlowTrajectory, center: usize, radius: f64) -> Result<LocalNorm> {
        let cyl = self.cylinder(center, radius)?;
        Ok(self.local_x_with(&self.x_prefix(f)?, &cyl))
    }

    /// The local `Y⁰` or `Y¹` norm of the matching part of `q`.
    pub fn local_y(&self, q: &ForcingSeries, slot: NormKind, center: usize, radius: f64) -> Result<LocalNorm> {
        if !matches!(slot, NormKind::Y0 | NormKind::Y1) {
            return Err(FlowError::Config("local Y norms are taken per part".into()));
        }
        let cyl = self.cylinder(center, radius)?;
        Ok(self.local_y_with(&self.y_prefix(q, slot)?, slot, &cyl))
    }

    /// `sup |f|` over the samples in `[0, T]`.
    pub fn sup_norm(&self, f: &FlowTrajectory) -> Result<f64> {
        self.check_times(&f.times)?;
        let (sizes, _) = self.field_sizes(&f.fields)?;
        Ok(sizes.iter().flatten().cloned().fold(0.0, f64::max))
    }
}

/// `X_T` norm of a trajectory on its own samples with default settings.
pub fn x_norm(f: &FlowTrajectory, bg: &BackgroundMode, horizon: f64) -> Result<NormReport> {
    NormContext::for_trajectory(bg, f, horizon, &NormConfig::default())?.x_norm(f)
}

/// `Y_T` bound of a decomposition on its own samples with default settings.
pub fn y_norm(q: &ForcingSeries, bg: &BackgroundMode, horizon: f64) -> Result<NormReport> {
    NormContext::new(bg, &q.times, horizon, &NormConfig::default())?.y_norm(q)
}

/// Caches contexts by horizon for callers that evaluate many norms on one sample grid.
#[derive(Default)]
pub struct NormCache {
    contexts: HashMap<u64, Arc<NormContext>>,
}

impl NormCache {
    pub fn get(&mut self, bg: &BackgroundMode, times: &[f64], horizon: f64, cfg: &NormConfig) -> Result<Arc<NormContext>> {
        let key = horizon.to_bits() ^ (times.len() as u64).rotate_left(32);
        if let Some(c) = self.contexts.get(&key) {
            if c.times.len() <= times.len() && c.check_times(times).is_ok() {
                return Ok(c.clone());
            }
        }
        let c = Arc::new(NormContext::new(bg, times, horizon, cfg)?);
        self.contexts.insert(key, c.clone());
        Ok(c)
    }
}
