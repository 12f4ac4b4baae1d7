//! Empirical heat-kernel columns and Gaussian-bound fitting.
//!
//! A column `x ↦ K(x, t; y₀, s)·E` is obtained by evolving the Kronecker datum
//! `E δ_{y₀} / (√det g(y₀) · cell volume)` with the Lichnerowicz heat flow. Its
//! pointwise size `|K E|_{g(t)} / |E|_{g(s)}` is compared with
//! `C / |B(x, √τ)| · exp(−d²/(4Dτ))`, `τ = t − s`, distances and balls taken in `g(t)`.

use serde::{Deserialize, Serialize};

use super::{evolve_homogeneous, rk4, BackgroundMode, StepConfig};
use crate::ball::BallSearcher;
use crate::deturck::lichnerowicz_with;
use crate::error::{FlowError, Result};
use crate::geometry::{covariant_derivative, covariant_hessian_sym2, norm_sym2, pointwise_norm_with, MetricGeometry};
use crate::linalg;
use crate::tensor::{MetricField, TensorField, Valence};

/// What to probe and how to fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub y0: usize,
    pub s: f64,
    /// Lags `t − s`, each at least the burn-in and at most `(min period / 6)²`.
    pub lags: Vec<f64>,
    /// Basis component `(a, b)` of the datum; off-diagonal data are symmetrized.
    pub component: (usize, usize),
    pub step: StepConfig,
    /// Relative margin added to the fitted `C` and `D`.
    pub fit_margin: f64,
    /// Points below `floor · max|K|` at their lag are left out of fit and audit.
    pub floor: f64,
    /// Audit radius; defaults to a third of the smallest period.
    pub audit_radius: Option<f64>,
    /// Backward ladder for `∇_y K(x₀, t; ·, s)`: decreasing `s` values at the fixed `t`.
    pub gradient_ladder: Vec<f64>,
    pub gradient_target: f64,
}

impl ProbeConfig {
    pub fn new(y0: usize, s: f64, lags: Vec<f64>) -> Self {
        ProbeConfig {
            y0,
            s,
            lags,
            component: (0, 0),
            step: StepConfig::default(),
            fit_margin: 0.1,
            floor: 1e-6,
            audit_radius: None,
            gradient_ladder: Vec::new(),
            gradient_target: 0.0,
        }
    }
}

/// One probed column.
#[derive(Clone, Debug)]
pub struct ProbeSample {
    pub lag: f64,
    pub time: f64,
    pub column: TensorField,
    pub sup_kernel: f64,
    /// `∫ (K E)_c dV_{g(t)}` per stored component.
    pub mass: Vec<f64>,
    /// `max |K E − G E| / max G` against the periodized Euclidean Gaussian (flat static only).
    pub gaussian_deviation: Option<f64>,
    /// `√τ sup_x |∇_x K|`.
    pub grad_x_scaled: f64,
    /// `τ sup_x |∇²_x K|`.
    pub hess_x_scaled: f64,
}

/// `H = −½ tr_g ∂_s g` sampled at one time, with its distance to `±R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdjointPotentialSample {
    pub s: f64,
    pub sup_h: f64,
    pub sup_h_minus_scalar: f64,
    pub sup_h_plus_scalar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFitReport {
    pub y0: usize,
    pub s: f64,
    pub t_list: Vec<f64>,
    pub burn_in: f64,
    pub audit_radius: f64,
    pub fitted_c: f64,
    pub fitted_d: f64,
    /// Constants after the margin; the audit uses these.
    pub reported_c: f64,
    pub reported_d: f64,
    pub max_violation_ratio: f64,
    /// Points entering both the fit and the audit.
    pub audited_points: usize,
    pub max_gaussian_deviation: Option<f64>,
    pub max_mass_error: Option<f64>,
    pub max_grad_x_scaled: f64,
    /// `τ sup|∇²K|` restricted to probes with `¼ < s < t < 1`; `None` if none qualify.
    pub max_hess_x_scaled_window: Option<f64>,
    /// `(s, sup_y |∇_y K(x₀, t; y, s)|)` along the backward ladder.
    pub gradient_y: Vec<(f64, f64)>,
    /// Ladder values stay within 10% of the first one.
    pub gradient_y_bounded: Option<bool>,
    pub adjoint_potential: Vec<AdjointPotentialSample>,
}

#[derive(Clone, Debug)]
pub struct KernelProbe {
    pub samples: Vec<ProbeSample>,
    pub report: GaussianFitReport,
}

struct Datum {
    field: TensorField,
    basis: Vec<f64>,
    norm: f64,
}

fn delta_datum(geo: &MetricGeometry, y0: usize, (a, b): (usize, usize)) -> Result<Datum> {
    let n = geo.dim();
    if a >= n || b >= n {
        return Err(FlowError::Config(format!("probe component ({a}, {b}) out of range")));
    }
    let mut basis = vec![0.0; n * n];
    basis[a * n + b] = 1.0;
    basis[b * n + a] = 1.0;
    let norm = norm_sym2(&linalg::load_mat(&basis, n), &geo.ginv(y0), n);
    let mut field = TensorField::zeros(geo.grid(), Valence::SYM2);
    let w = 1.0 / (geo.volume_density[y0] * geo.grid().cell_volume());
    for (c, v) in basis.iter().enumerate() {
        field.data_mut()[y0 * n * n + c] = v * w;
    }
    Ok(Datum { field, basis, norm })
}

/// Periodized Euclidean heat kernel `(4πτ)^{−n/2} Σ_m exp(−|x − y + mL|²/(4τ))`.
fn periodic_gaussian(grid: &crate::grid::Grid, x: usize, y: usize, tau: f64) -> f64 {
    let n = grid.dim();
    let (px, py) = (grid.position(x), grid.position(y));
    let images = 3usize.pow(n as u32);
    let mut sum = 0.0;
    for m in 0..images {
        let mut r2 = 0.0;
        let mut k = m;
        for a in 0..n {
            let shift = (k % 3) as f64 - 1.0;
            k /= 3;
            let l = grid.periods()[a];
            let mut d = px[a] - py[a];
            d -= l * (d / l).round();
            d += shift * l;
            r2 += d * d;
        }
        sum += (-r2 / (4.0 * tau)).exp();
    }
    sum / (4.0 * std::f64::consts::PI * tau).powf(n as f64 / 2.0)
}

/// `−½ g^{ij} ∂_s g_ij` from the background samples, by a three-point difference.
fn adjoint_potential(bg: &BackgroundMode, s: f64) -> Result<TensorField> {
    let grid = bg.grid().clone();
    let Some(traj) = bg.trajectory() else {
        return Ok(TensorField::zeros(&grid, Valence::SCALAR));
    };
    let horizon = bg.horizon();
    let d = 0.25 * traj.sample_spacing().max(1e-12);
    let (pts, w): ([f64; 3], [f64; 3]) = if s - d < 0.0 {
        ([s, s + d, s + 2.0 * d], [-1.5, 2.0, -0.5])
    } else if s + d > horizon {
        ([s, s - d, s - 2.0 * d], [1.5, -2.0, 0.5])
    } else {
        ([s - d, s, s + d], [-0.5, 0.0, 0.5])
    };
    let mut dg = TensorField::zeros(&grid, Valence::SYM2);
    for (p, wk) in pts.iter().zip(w) {
        if wk != 0.0 {
            dg = dg.axpy(wk / d, bg.metric_at(*p)?.field())?;
        }
    }
    let g = bg.geometry_at(s)?;
    let n = grid.dim();
    let out = (0..grid.len())
        .map(|x| {
            let gi = g.ginv(x);
            let m = dg.at(x);
            -0.5 * (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| gi[i][j] * m[i * n + j]).sum::<f64>()
        })
        .collect();
    TensorField::from_vec(&grid, Valence::SCALAR, out)
}

fn potential_sample(bg: &BackgroundMode, s: f64) -> Result<(TensorField, AdjointPotentialSample)> {
    let h = adjoint_potential(bg, s)?;
    let r = &bg.geometry_at(s)?.scalar;
    let sample = AdjointPotentialSample {
        s,
        sup_h: h.max_abs(),
        sup_h_minus_scalar: h.axpy(-1.0, r)?.max_abs(),
        sup_h_plus_scalar: h.axpy(1.0, r)?.max_abs(),
    };
    Ok((h, sample))
}

fn sup_gradient(u: &TensorField, geo: &MetricGeometry) -> Result<f64> {
    Ok(pointwise_norm_with(&covariant_derivative(u, geo)?, geo).into_iter().fold(0.0, f64::max))
}

/// Evolves delta data from `(y₀, s)` to every `s + lag`, fits `(C, D)` and audits the bound.
pub fn kernel_probe(bg: &BackgroundMode, cfg: &ProbeConfig) -> Result<KernelProbe> {
    let grid = bg.grid().clone();
    if cfg.y0 >= grid.len() {
        return Err(FlowError::Config(format!("probe node {} outside a grid of {} nodes", cfg.y0, grid.len())));
    }
    if cfg.lags.is_empty() {
        return Err(FlowError::Config("kernel probe needs at least one lag".into()));
    }
    let horizon_lag = (grid.min_period() / 6.0).powi(2);
    let burn_in = 2.0 * grid.max_spacing().powi(2);
    let mut lags = cfg.lags.clone();
    lags.sort_by(f64::total_cmp);
    for &lag in &lags {
        if lag > horizon_lag * (1.0 + 1e-12) {
            return Err(FlowError::ProbeHorizon { lag, limit: horizon_lag });
        }
        if lag < burn_in * (1.0 - 1e-12) {
            return Err(FlowError::Config(format!("lag {lag} is shorter than the burn-in {burn_in}")));
        }
    }
    if cfg.s + lags[lags.len() - 1] > bg.horizon() + 1e-12 {
        return Err(FlowError::Config(format!("background ends before t = {}", cfg.s + lags[lags.len() - 1])));
    }
    let audit_radius = cfg.audit_radius.unwrap_or(grid.min_period() / 3.0);
    let flat_static = match bg {
        BackgroundMode::Static(g) => g.metric.is_exactly_flat(),
        BackgroundMode::RicciFlow(_) => false,
    };

    let geo_s = bg.geometry_at(cfg.s)?;
    let datum = delta_datum(&geo_s, cfg.y0, cfg.component)?;
    let nc = datum.basis.len();

    // (τ, d, |K|, |B(x,√τ)|) for every audited point
    let mut points: Vec<(f64, f64, f64, f64)> = Vec::new();
    let mut samples = Vec::with_capacity(lags.len());
    let mut u = datum.field.clone();
    let mut t_prev = cfg.s;
    for &lag in &lags {
        let t = cfg.s + lag;
        if t > t_prev {
            u = evolve_homogeneous(&u, t_prev, t, bg, &cfg.step)?;
        }
        t_prev = t;
        let geo = bg.geometry_at(t)?;
        let k: Vec<f64> = (0..grid.len())
            .map(|x| norm_sym2(&linalg::load_mat(u.at(x), grid.dim()), &geo.ginv(x), grid.dim()) / datum.norm)
            .collect();
        let peak = k.iter().cloned().fold(0.0, f64::max);
        let mut mass = vec![0.0; nc];
        for x in 0..grid.len() {
            let w = geo.volume_density[x] * grid.cell_volume();
            for c in 0..nc {
                mass[c] += u.at(x)[c] * w;
            }
        }
        let gaussian_deviation = flat_static.then(|| {
            let mut gmax: f64 = 0.0;
            let mut dev: f64 = 0.0;
            for x in 0..grid.len() {
                let gx = periodic_gaussian(&grid, x, cfg.y0, lag);
                gmax = gmax.max(gx);
                for c in 0..nc {
                    dev = dev.max((u.at(x)[c] - gx * datum.basis[c]).abs());
                }
            }
            dev / gmax
        });
        let grad_x_scaled = lag.sqrt() * sup_gradient(&u, &geo)? / datum.norm;
        let hess = covariant_hessian_sym2(&u, &geo)?;
        let hess_x_scaled = lag * pointwise_norm_with(&hess, &geo).into_iter().fold(0.0, f64::max) / datum.norm;

        let mut searcher = BallSearcher::new(&MetricField::new(geo.metric.field().clone())?);
        let reach = searcher.ball(cfg.y0, audit_radius);
        for (&x, &d) in reach.nodes.iter().zip(&reach.distances) {
            if k[x] >= cfg.floor * peak && k[x] > 0.0 {
                let vol = searcher.ball(x, lag.sqrt()).volume;
                points.push((lag, d, k[x], vol));
            }
        }
        samples.push(ProbeSample {
            lag,
            time: t,
            column: u.clone().with_time(t),
            sup_kernel: peak,
            mass,
            gaussian_deviation,
            grad_x_scaled,
            hess_x_scaled,
        });
    }

    // least squares for ln(|K||B|) = ln C − z / D with z = d²/(4τ)
    let (mut sz, mut sy, mut szz, mut szy) = (0.0, 0.0, 0.0, 0.0);
    for &(tau, d, k, vol) in &points {
        let z = d * d / (4.0 * tau);
        let y = (k * vol).ln();
        sz += z;
        sy += y;
        szz += z * z;
        szy += z * y;
    }
    let m = points.len() as f64;
    let var = szz - sz * sz / m;
    let slope = if var > 0.0 { (szy - sz * sy / m) / var } else { 0.0 };
    let fitted_d = if slope < 0.0 { -1.0 / slope } else { f64::INFINITY };
    let envelope = |dd: f64| {
        points.iter().map(|&(tau, d, k, vol)| k * vol * (d * d / (4.0 * dd * tau)).exp()).fold(0.0, f64::max)
    };
    let fitted_c = envelope(fitted_d);
    let reported_d = fitted_d * (1.0 + cfg.fit_margin);
    let reported_c = fitted_c * (1.0 + cfg.fit_margin);
    let max_violation_ratio = envelope(reported_d) / reported_c;

    let max_gaussian_deviation = flat_static.then(|| {
        let window = 4.0 * grid.max_spacing().powi(2) * (1.0 - 1e-12);
        samples.iter().filter(|p| p.lag >= window).filter_map(|p| p.gaussian_deviation).fold(0.0, f64::max)
    });
    let max_mass_error = flat_static.then(|| {
        samples
            .iter()
            .flat_map(|p| p.mass.iter().zip(&datum.basis).map(|(m, e)| (m - e).abs()))
            .fold(0.0, f64::max)
    });
    let max_hess_x_scaled_window = samples
        .iter()
        .filter(|p| cfg.s > 0.25 && p.time < 1.0)
        .map(|p| p.hess_x_scaled)
        .reduce(f64::max);

    let mut adjoint = vec![potential_sample(bg, cfg.s)?.1];
    let gradient_y = if cfg.gradient_ladder.is_empty() {
        Vec::new()
    } else {
        let (ladder, potentials) = gradient_ladder(bg, cfg)?;
        adjoint.extend(potentials);
        ladder
    };
    let gradient_y_bounded = gradient_y.first().map(|&(_, first)| {
        gradient_y.iter().all(|&(_, v)| v.is_finite() && v <= 1.1 * first)
    });

    let report = GaussianFitReport {
        y0: cfg.y0,
        s: cfg.s,
        t_list: samples.iter().map(|p| p.time).collect(),
        burn_in,
        audit_radius,
        fitted_c,
        fitted_d,
        reported_c,
        reported_d,
        max_violation_ratio,
        audited_points: points.len(),
        max_gaussian_deviation,
        max_mass_error,
        max_grad_x_scaled: samples.iter().map(|p| p.grad_x_scaled).fold(0.0, f64::max),
        max_hess_x_scaled_window,
        gradient_y,
        gradient_y_bounded,
        adjoint_potential: adjoint,
    };
    Ok(KernelProbe { samples, report })
}

type AdjointSamples = Vec<AdjointPotentialSample>;

/// Solves `(−∂_s − Δ_L + H) w = 0` backward from a delta at `(y₀, t)` and records
/// `sup_y |∇w(·, s)|` at each ladder time.
fn gradient_ladder(bg: &BackgroundMode, cfg: &ProbeConfig) -> Result<(Vec<(f64, f64)>, AdjointSamples)> {
    let t = cfg.gradient_target;
    let mut ladder = cfg.gradient_ladder.clone();
    ladder.sort_by(|a, b| b.total_cmp(a));
    if ladder.iter().any(|&s| !(s >= 0.0 && s < t)) || t > bg.horizon() + 1e-12 {
        return Err(FlowError::Config(format!("gradient ladder must satisfy 0 ≤ s < t = {t} within the background")));
    }
    let geo_t = bg.geometry_at(t)?;
    let datum = delta_datum(&geo_t, cfg.y0, cfg.component)?;
    let mut w = datum.field;
    let mut sigma = 0.0;
    let mut out = Vec::with_capacity(ladder.len());
    let mut potentials = Vec::with_capacity(ladder.len());
    for &s in &ladder {
        let target = t - s;
        if target > sigma {
            let step = StepConfig { cfl: cfg.step.cfl, sample_stride: cfg.step.steps(bg.grid(), target - sigma)?.0 };
            let traj = rk4(w, sigma, target, &step, "rk4-adjoint", |sg, v| {
                let time = t - sg;
                let geo = bg.geometry_at(time)?;
                let mut rhs = lichnerowicz_with(v, &geo);
                if !bg.is_static() {
                    let h = adjoint_potential(bg, time)?;
                    let n2 = v.components();
                    let d = rhs.data_mut();
                    for x in 0..h.data().len() {
                        for c in 0..n2 {
                            d[x * n2 + c] -= h.data()[x] * v.at(x)[c];
                        }
                    }
                }
                Ok(rhs)
            })?;
            w = traj.last().clone();
            sigma = target;
        }
        let geo = bg.geometry_at(s)?;
        out.push((s, sup_gradient(&w, &geo)? / datum.norm));
        potentials.push(potential_sample(bg, s)?.1);
    }
    Ok((out, potentials))
}
