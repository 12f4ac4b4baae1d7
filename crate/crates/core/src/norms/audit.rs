//! Measured constants for the linear and quadratic norm inequalities.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{NormConfig, NormContext};
use crate::deturck::{quadratic_terms_with, DeturckContext, ForcingDecomposition};
use crate::error::Result;
use crate::families::{unit_sup_normalized, InputFamily};
use crate::geometry::tensor_pointwise_norm;
use crate::solver::{duhamel_solve, evolve_homogeneous_trajectory, BackgroundMode, ForcingSeries, StepConfig};
use crate::tensor::TensorField;

/// The inequality a row measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InequalityKind {
    /// `‖∫K Q‖_X ≤ C ‖Q‖_Y`.
    DuhamelBound,
    /// `‖∫K Z‖_X ≤ C T ‖Z‖_∞` with `Z` time independent.
    ForcingLinearInT,
    /// `‖Q[h]‖_Y ≤ C ‖h‖²_X`.
    QuadraticBound,
    /// `‖∫K(·, t; y, 0) h₀‖_X ≤ C ‖h₀‖_∞`.
    HomogeneousBound,
}

impl InequalityKind {
    pub fn name(self) -> &'static str {
        match self {
            InequalityKind::DuhamelBound => "duhamel-bound",
            InequalityKind::ForcingLinearInT => "forcing-linear-in-t",
            InequalityKind::QuadraticBound => "quadratic-bound",
            InequalityKind::HomogeneousBound => "homogeneous-bound",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AuditConfig {
    pub seeds: Vec<u64>,
    pub horizon: f64,
    /// Horizons for the `T`-scaling fit.
    pub horizons: Vec<f64>,
    /// `‖h‖`-ladder for the quadratic bound.
    pub scales: Vec<f64>,
    /// Spectral recipe of the random inputs.
    pub inputs: InputFamily,
    pub step: StepConfig,
    pub norm: NormConfig,
    /// Constant forcing used for the `T`-scaling; `None` takes `−2 Ric(g₀)`.
    pub constant_forcing: Option<Vec<f64>>,
    pub kinds: Vec<InequalityKind>,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            seeds: (1..=10).collect(),
            horizon: 0.0625,
            horizons: vec![0.0625, 0.125, 0.25],
            scales: vec![1e-1, 1e-2, 1e-3],
            inputs: InputFamily::Shell { radius_sq: 5 },
            step: StepConfig::new(0.2, 4),
            norm: NormConfig::default(),
            constant_forcing: None,
            kinds: vec![
                InequalityKind::DuhamelBound,
                InequalityKind::ForcingLinearInT,
                InequalityKind::QuadraticBound,
                InequalityKind::HomogeneousBound,
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub kind: InequalityKind,
    /// Grid resolution along the first axis.
    pub resolution: usize,
    pub seed: u64,
    /// Horizon for the `T`-scaling rows, `‖h‖` scale for the quadratic rows, else the horizon.
    pub parameter: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// `None` when both sides vanish.
    pub ratio: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub kind: InequalityKind,
    pub trials: usize,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub median_ratio: f64,
    /// `max |ratio / median − 1|`; for the `T`-scaling rows, taken within each horizon
    /// since the variation across horizons is what the exponent measures.
    pub spread: f64,
    /// Least-squares slope of `log LHS` against `log T` (`T`-scaling rows only).
    pub exponent: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditTable {
    pub rows: Vec<AuditRow>,
    pub summaries: Vec<AuditSummary>,
}

impl AuditTable {
    pub fn summary(&self, kind: InequalityKind) -> Option<&AuditSummary> {
        self.summaries.iter().find(|s| s.kind == kind)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,resolution,seed,parameter,lhs,rhs,ratio\n");
        for r in &self.rows {
            let ratio = r.ratio.map_or_else(|| "nan".to_string(), |v| format!("{v:.16e}"));
            out.push_str(&format!("{},{},{},{:.16e},{:.16e},{:.16e},{}\n", r.kind.name(), r.resolution, r.seed, r.parameter, r.lhs, r.rhs, ratio));
        }
        out
    }

    /// Pools the rows of several tables (for instance one per resolution) and re-summarizes.
    pub fn pooled(tables: impl IntoIterator<Item = AuditTable>) -> AuditTable {
        let mut out = AuditTable::default();
        for t in tables {
            out.rows.extend(t.rows);
        }
        out.summarize();
        out
    }

    /// Recomputes the summaries from the rows.
    pub fn summarize(&mut self) {
        let mut kinds: Vec<InequalityKind> = Vec::new();
        for r in &self.rows {
            if !kinds.contains(&r.kind) {
                kinds.push(r.kind);
            }
        }
        self.summaries = kinds
            .into_iter()
            .map(|kind| {
                let rows: Vec<&AuditRow> = self.rows.iter().filter(|r| r.kind == kind).collect();
                let mut ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).collect();
                ratios.sort_by(f64::total_cmp);
                let median = median_of_sorted(&ratios);
                let spread = if kind == InequalityKind::ForcingLinearInT {
                    let mut params: Vec<f64> = rows.iter().map(|r| r.parameter).collect();
                    params.sort_by(f64::total_cmp);
                    params.dedup();
                    params
                        .iter()
                        .map(|&p| {
                            let mut group: Vec<f64> = rows.iter().filter(|r| r.parameter == p).filter_map(|r| r.ratio).collect();
                            group.sort_by(f64::total_cmp);
                            relative_spread(&group, median_of_sorted(&group))
                        })
                        .fold(0.0, f64::max)
                } else {
                    relative_spread(&ratios, median)
                };
                let exponent = (kind == InequalityKind::ForcingLinearInT).then(|| {
                    let pts: Vec<(f64, f64)> =
                        rows.iter().filter(|r| r.lhs > 0.0).map(|r| (r.parameter.ln(), r.lhs.ln())).collect();
                    slope(&pts)
                });
                AuditSummary {
                    kind,
                    trials: rows.len(),
                    min_ratio: ratios.first().copied().unwrap_or(0.0),
                    max_ratio: ratios.last().copied().unwrap_or(0.0),
                    median_ratio: median,
                    spread,
                    exponent,
                }
            })
            .collect();
    }
}

fn median_of_sorted(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v[v.len() / 2]
    }
}

fn relative_spread(v: &[f64], median: f64) -> f64 {
    if median > 0.0 {
        v.iter().map(|r| (r / median - 1.0).abs()).fold(0.0, f64::max)
    } else {
        0.0
    }
}

fn slope(pts: &[(f64, f64)]) -> f64 {
    let m = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (mx, my) = (sx / m, sy / m);
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if den > 0.0 {
        num / den
    } else {
        f64::NAN
    }
}

fn ratio(lhs: f64, rhs: f64) -> Option<f64> {
    if lhs == 0.0 && rhs == 0.0 {
        None
    } else {
        Some(lhs / rhs)
    }
}

/// Smooth random forcing, modulated in time by `½ + t/T`.
fn random_forcing(bg: &BackgroundMode, times: &[f64], horizon: f64, seed: u64, inputs: InputFamily) -> Result<ForcingSeries> {
    let grid = bg.grid();
    let r = inputs.sym2(grid, seed)?;
    let s = inputs.connection(grid, seed ^ 0x5bd1_e995)?;
    let parts = times
        .iter()
        .map(|&t| {
            let a = 0.5 + t / horizon;
            ForcingDecomposition { r_part: r.scale(a), s_part: s.scale(a) }
        })
        .collect();
    Ok(ForcingSeries { times: times.to_vec(), parts })
}

/// Evaluates LHS and RHS of each configured inequality on seeded inputs.
///
/// Rows with both sides zero carry no ratio. The quadratic rows use the time-linear
/// trajectory `h(t) = ε (t/T) φ` with `φ` of unit sup in `g₀`.
pub fn norm_inequality_audit(bg: &BackgroundMode, cfg: &AuditConfig) -> Result<AuditTable> {
    let grid = bg.grid().clone();
    let mut table = AuditTable::default();
    let g0 = bg.initial_metric()?;
    let times = cfg.step.sample_times(&grid, 0.0, cfg.horizon)?;
    let ctx = NormContext::new(bg, &times, cfg.horizon, &cfg.norm)?;
    let zero = TensorField::zeros(&grid, crate::tensor::Valence::SYM2);

    if cfg.kinds.contains(&InequalityKind::DuhamelBound) {
        for &seed in &cfg.seeds {
            let q = random_forcing(bg, &times, cfg.horizon, seed, cfg.inputs)?;
            let h = duhamel_solve(&zero, Some(&q), bg, cfg.horizon, &cfg.step)?;
            let lhs = ctx.x_norm(&h)?.value;
            let rhs = ctx.y_norm(&q)?.value;
            table.rows.push(AuditRow {
                resolution: grid.resolution()[0],
                kind: InequalityKind::DuhamelBound,
                seed,
                parameter: cfg.horizon,
                lhs,
                rhs,
                ratio: ratio(lhs, rhs),
            });
        }
    }

    if cfg.kinds.contains(&InequalityKind::ForcingLinearInT) {
        let z = match &cfg.constant_forcing {
            Some(v) => TensorField::constant(&grid, crate::tensor::Valence::SYM2, v)?,
            None => bg.geometry_at(0.0)?.ricci.scale(-2.0),
        };
        let z_sup = tensor_pointwise_norm(&z, &g0)?.max_abs();
        for &horizon in &cfg.horizons {
            let t_times = cfg.step.sample_times(&grid, 0.0, horizon)?;
            let parts =
                t_times.iter().map(|_| ForcingDecomposition { r_part: z.clone(), s_part: ForcingDecomposition::zeros(&grid).s_part }).collect();
            let q = ForcingSeries { times: t_times.clone(), parts };
            let h = duhamel_solve(&zero, Some(&q), bg, horizon, &cfg.step)?;
            let lhs = NormContext::new(bg, &t_times, horizon, &cfg.norm)?.x_norm(&h)?.value;
            let rhs = horizon * z_sup;
            table.rows.push(AuditRow {
                resolution: grid.resolution()[0],
                kind: InequalityKind::ForcingLinearInT,
                seed: 0,
                parameter: horizon,
                lhs,
                rhs,
                ratio: ratio(lhs, rhs),
            });
        }
    }

    if cfg.kinds.contains(&InequalityKind::QuadraticBound) {
        let geos: Vec<Arc<DeturckContext>> = times
            .iter()
            .map(|&t| Ok(Arc::new(DeturckContext::with_geometry(bg.geometry_at(t)?, &bg.metric_at(t)?)?)))
            .collect::<Result<_>>()?;
        for &seed in &cfg.seeds {
            let phi = unit_sup_normalized(&cfg.inputs.sym2(&grid, seed)?, &g0)?;
            for &eps in &cfg.scales {
                let fields: Vec<TensorField> =
                    times.iter().map(|&t| phi.scale(eps * t / cfg.horizon).with_time(t)).collect();
                let h = crate::solver::FlowTrajectory::new(grid.clone(), times.clone(), fields, crate::solver::StepMeta {
                    integrator: "prescribed".into(),
                    dt: 0.0,
                    cfl: cfg.step.cfl,
                    sample_stride: cfg.step.sample_stride,
                })?;
                let parts = h
                    .fields
                    .iter()
                    .zip(&geos)
                    .map(|(f, c)| quadratic_terms_with(f, c))
                    .collect::<Result<Vec<_>>>()?;
                let q = ForcingSeries { times: times.clone(), parts };
                let lhs = ctx.y_norm(&q)?.value;
                let hx = ctx.x_norm(&h)?.value;
                let rhs = hx * hx;
                table.rows.push(AuditRow {
                    resolution: grid.resolution()[0],
                kind: InequalityKind::QuadraticBound,
                    seed,
                    parameter: eps,
                    lhs,
                    rhs,
                    ratio: ratio(lhs, rhs),
                });
            }
        }
    }

    if cfg.kinds.contains(&InequalityKind::HomogeneousBound) {
        for &seed in &cfg.seeds {
            let h0 = unit_sup_normalized(&cfg.inputs.sym2(&grid, seed)?, &g0)?;
            let h = evolve_homogeneous_trajectory(&h0, 0.0, cfg.horizon, bg, &cfg.step)?;
            let lhs = ctx.x_norm(&h)?.value;
            let rhs = tensor_pointwise_norm(&h0, &g0)?.max_abs();
            table.rows.push(AuditRow {
                resolution: grid.resolution()[0],
                kind: InequalityKind::HomogeneousBound,
                seed,
                parameter: cfg.horizon,
                lhs,
                rhs,
                ratio: ratio(lhs, rhs),
            });
        }
    }

    table.summarize();
    Ok(table)
}
