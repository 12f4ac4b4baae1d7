//! Helpers shared by the integration tests: grids, seeded metrics and closed-form oracles.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::sync::Arc;

use flowlab::families::random_smooth_sym2;
use flowlab::norms::{NormConfig, NormContext};
use flowlab::solver::{BackgroundMode, FlowTrajectory, StepConfig, StepMeta};
use flowlab::{Grid, MetricField, TensorField, Valence};

pub fn grid2(res: usize, period: f64) -> Arc<Grid> {
    Arc::new(Grid::new(2, &[res, res], &[period, period]).unwrap())
}

pub fn grid3(res: usize, period: f64) -> Arc<Grid> {
    Arc::new(Grid::new(3, &[res, res, res], &[period, period, period]).unwrap())
}

/// `δ + a·(seeded smooth field)`, positive definite for `a` well below 1.
pub fn random_metric(grid: &Arc<Grid>, seed: u64, a: f64) -> MetricField {
    let h = random_smooth_sym2(grid, seed, 1).unwrap();
    let h = h.scale(a / h.max_abs().max(1e-300));
    MetricField::flat(grid).perturbed(&h).unwrap()
}

/// `h_{00} = A sin(k x₀)`, every other component zero.
pub fn sin_mode(grid: &Arc<Grid>, amplitude: f64, k: f64) -> TensorField {
    let n = grid.dim();
    TensorField::from_fn(grid, Valence::SYM2, |x, out| {
        out.iter_mut().for_each(|v| *v = 0.0);
        out[0] = amplitude * (k * x[0]).sin();
        let _ = n;
    })
    .unwrap()
}

/// A trajectory holding `f` at every one of `times`.
pub fn constant_trajectory(grid: &Arc<Grid>, f: &TensorField, times: &[f64]) -> FlowTrajectory {
    let fields = times.iter().map(|&t| f.clone().with_time(t)).collect();
    let meta = StepMeta { integrator: "constant".into(), dt: 0.0, cfl: 0.0, sample_stride: 1 };
    FlowTrajectory::new(grid.clone(), times.to_vec(), fields, meta).unwrap()
}

/// `J₁(x) = (1/π) ∫₀^π cos(τ − x sin τ) dτ`, composite Simpson with 2000 panels.
pub fn bessel_j1(x: f64) -> f64 {
    let m = 2000;
    let h = PI / m as f64;
    let f = |tau: f64| (tau - x * tau.sin()).cos();
    let mut s = f(0.0) + f(PI);
    for i in 1..m {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
    }
    s * h / 3.0 / PI
}

/// Mean of `cos(κ·e₀·(x − c))` over a Euclidean disk of radius `r` centred at `c`.
pub fn disk_cos_mean(kappa: f64, r: f64) -> f64 {
    let s = kappa * r;
    if s.abs() < 1e-12 {
        1.0
    } else {
        2.0 * bessel_j1(s) / s
    }
}

/// Closed-form local `X` norm of the time-independent field `A sin(k x₀) dx⁰⊗dx⁰` on the flat
/// plane (n = 2), over the disk `B(c, r)` and the time windows `(0, p]`, `(ω, p]`.
///
/// `|∇h| = A k |cos(k x₀)|` and the disk means of `cos²`, `cos⁶` expand in `cos(2jk x₀)`,
/// whose disk means are `cos(2jk c₀)·2J₁(2jkr)/(2jkr)`.
pub fn sin_mode_local_x(amplitude: f64, k: f64, c0: f64, r: f64, p: f64, omega: f64) -> f64 {
    let lo = k * (c0 - r);
    let hi = k * (c0 + r);
    // sup of |sin| over the interval [lo, hi]
    let sup = if (hi - lo) >= PI {
        1.0
    } else {
        let next_peak = ((lo - PI / 2.0) / PI).ceil() * PI + PI / 2.0;
        if next_peak <= hi {
            1.0
        } else {
            lo.sin().abs().max(hi.sin().abs())
        }
    };
    let mean = |j: f64| (2.0 * j * k * c0).cos() * disk_cos_mean(2.0 * j * k, r);
    let cos2 = 0.5 + 0.5 * mean(1.0);
    let cos6 = (10.0 + 15.0 * mean(1.0) + 6.0 * mean(2.0) + mean(3.0)) / 32.0;
    let ak = amplitude * k;
    let l2 = (p * ak * ak * cos2).sqrt();
    let q = 6.0;
    let lq = r.powf(4.0 / q) * ((p - omega) * ak.powf(q) * cos6).powf(1.0 / q);
    amplitude * sup + l2 + lq
}

/// Global X norm of the sin mode from the library next to the closed form taken over the
/// same centres, radii and snapped time windows.
pub fn sin_mode_x_norm_pair(res: usize, stride: usize) -> (f64, f64) {
    let period = 2.0 * PI;
    let grid = grid2(res, period);
    let bg = BackgroundMode::static_metric(&MetricField::flat(&grid)).unwrap();
    let horizon = 1.0;
    let step = StepConfig::new(0.2, 16);
    let times = step.sample_times(&grid, 0.0, horizon).unwrap();
    let cfg = NormConfig { center_stride: stride, ..NormConfig::default() };
    let ctx = NormContext::new(&bg, &times, horizon, &cfg).unwrap();
    let (a, k) = (0.3, 1.0);
    let h = sin_mode(&grid, a, k);
    let traj = constant_trajectory(&grid, &h, &times);
    let lib = ctx.x_norm(&traj).unwrap().value;
    let mut exact = 0.0f64;
    for &r in ctx.radii() {
        for &c in ctx.centers() {
            let cyl = ctx.cylinder(c, r).unwrap();
            let c0 = grid.position(c)[0];
            exact = exact.max(sin_mode_local_x(a, k, c0, r, cyl.p_time, cyl.omega_time));
        }
    }
    (lib, exact)
}

/// Relative difference, safe at zero.
pub fn rel(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}
