mod common;

use common::{bessel_j1, constant_trajectory, grid2, rel, sin_mode_x_norm_pair};
use flowlab::deturck::ForcingDecomposition;
use flowlab::families::{random_smooth_connection, random_smooth_sym2};
use flowlab::norms::{NormConfig, NormContext, NormKind};
use flowlab::solver::{BackgroundMode, FlowTrajectory, ForcingSeries, StepConfig};
use flowlab::{MetricField, TensorField, Valence};
use proptest::prelude::*;

#[test]
fn bessel_oracle_matches_tabulated_values() {
    // J₁(1), J₁(3.8317...) = first zero, J₁(5)
    assert!((bessel_j1(1.0) - 0.440_050_585_744_933_5).abs() < 1e-12);
    assert!(bessel_j1(3.831_705_970_207_512).abs() < 1e-12);
    assert!((bessel_j1(5.0) + 0.327_579_137_591_465_2).abs() < 1e-12);
}

#[test]
fn sin_mode_x_norm_matches_closed_form() {
    let (lib, exact) = sin_mode_x_norm_pair(64, 4);
    println!("sin-mode X norm: library {lib:.6}, closed form {exact:.6}");
    assert!(rel(lib, exact) < 0.03, "library {lib}, closed form {exact}");
}

/// For a constant forcing of pointwise size `c` on the flat plane the local `Y⁰` norm is
/// `p·c + r^{(2n+4)/(n+4)} ((p − ω) c^{(n+4)/2})^{2/(n+4)}` with snapped windows `p`, `ω`.
#[test]
fn constant_forcing_y_norm_is_exact() {
    let grid = grid2(32, 2.0);
    let bg = BackgroundMode::static_metric(&MetricField::flat(&grid)).unwrap();
    let horizon = 0.25;
    let times = StepConfig::new(0.2, 8).sample_times(&grid, 0.0, horizon).unwrap();
    let ctx = NormContext::new(&bg, &times, horizon, &NormConfig { center_stride: 8, ..NormConfig::default() }).unwrap();
    let z = TensorField::constant(&grid, Valence::SYM2, &[0.6, 0.0, 0.0, 0.8]).unwrap();
    let c = 1.0;
    let parts = times.iter().map(|_| ForcingDecomposition { r_part: z.clone(), ..ForcingDecomposition::zeros(&grid) }).collect();
    let q = ForcingSeries { times: times.clone(), parts };
    let report = ctx.y_norm(&q).unwrap();
    let q_exp = 6.0;
    let mut exact = 0.0f64;
    for &r in ctx.radii() {
        let cyl = ctx.cylinder(ctx.centers()[0], r).unwrap();
        let (p, w) = (cyl.p_time, cyl.omega_time);
        exact = exact.max(p * c + r.powf(8.0 / q_exp) * ((p - w) * c.powf(q_exp / 2.0)).powf(2.0 / q_exp));
    }
    assert!(rel(report.parts[0].value, exact) < 1e-12, "{} vs {exact}", report.parts[0].value);
    assert_eq!(report.parts[1].value, 0.0);
    assert_eq!(report.kind, NormKind::Y);
}

#[test]
fn zero_fields_have_zero_norms() {
    let grid = grid2(16, 2.0);
    let bg = BackgroundMode::static_metric(&MetricField::flat(&grid)).unwrap();
    let times = StepConfig::new(0.2, 4).sample_times(&grid, 0.0, 0.25).unwrap();
    let ctx = NormContext::new(&bg, &times, 0.25, &NormConfig { min_radius_cells: 2.0, ..NormConfig::default() }).unwrap();
    let zero = constant_trajectory(&grid, &TensorField::zeros(&grid, Valence::SYM2), &times);
    assert_eq!(ctx.x_norm(&zero).unwrap().value, 0.0);
    assert_eq!(ctx.y_norm(&ForcingSeries::zeros(&grid, &times)).unwrap().value, 0.0);
}

#[test]
fn radii_run_dyadically_from_root_horizon() {
    let grid = grid2(32, 2.0);
    let bg = BackgroundMode::static_metric(&MetricField::flat(&grid)).unwrap();
    let times = StepConfig::new(0.2, 4).sample_times(&grid, 0.0, 0.25).unwrap();
    let ctx = NormContext::new(&bg, &times, 0.25, &NormConfig::default()).unwrap();
    assert_eq!(ctx.radii()[0], 0.5);
    assert!(ctx.radii().windows(2).all(|w| w[1] == 0.5 * w[0]));
    assert!(*ctx.radii().last().unwrap() >= 3.0 * grid.max_spacing() * (1.0 - 1e-12));
}

struct Fixture {
    ctx: NormContext,
    grid: std::sync::Arc<flowlab::Grid>,
    times: Vec<f64>,
}

fn fixture() -> Fixture {
    let grid = grid2(16, 2.0);
    let g = common::random_metric(&grid, 77, 0.1);
    let bg = BackgroundMode::static_metric(&g).unwrap();
    let times = StepConfig::new(0.2, 4).sample_times(&grid, 0.0, 0.25).unwrap();
    let cfg = NormConfig { center_stride: 2, min_radius_cells: 2.0, window: None };
    let ctx = NormContext::new(&bg, &times, 0.25, &cfg).unwrap();
    Fixture { ctx, grid, times }
}

fn random_trajectory(fx: &Fixture, seed: u64) -> FlowTrajectory {
    let a = random_smooth_sym2(&fx.grid, seed, 2).unwrap();
    let b = random_smooth_sym2(&fx.grid, seed + 1, 2).unwrap();
    let fields = fx.times.iter().map(|&t| a.axpy(t.sqrt(), &b).unwrap().with_time(t)).collect();
    FlowTrajectory::new(fx.grid.clone(), fx.times.clone(), fields, constant_trajectory(&fx.grid, &a, &fx.times).meta).unwrap()
}

fn random_forcing(fx: &Fixture, seed: u64) -> ForcingSeries {
    let r = random_smooth_sym2(&fx.grid, seed, 2).unwrap();
    let s = random_smooth_connection(&fx.grid, seed + 1, 2).unwrap();
    let parts = fx
        .times
        .iter()
        .map(|&t| ForcingDecomposition { r_part: r.scale(1.0 + t), s_part: s.scale(1.0 - t) })
        .collect();
    ForcingSeries { times: fx.times.clone(), parts }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn x_norm_is_a_seminorm(seed in 0u64..10_000, alpha in -4.0f64..4.0) {
        let fx = fixture();
        let (u, v) = (random_trajectory(&fx, seed), random_trajectory(&fx, seed + 2));
        let (nu, nv) = (fx.ctx.x_norm(&u).unwrap().value, fx.ctx.x_norm(&v).unwrap().value);
        let nsum = fx.ctx.x_norm(&u.axpy(1.0, &v).unwrap()).unwrap().value;
        prop_assert!(nsum <= (nu + nv) * (1.0 + 1e-12));
        let na = fx.ctx.x_norm(&u.scale(alpha)).unwrap().value;
        prop_assert!(rel(na, alpha.abs() * nu) < 1e-12);
    }

    #[test]
    fn y_norm_is_a_seminorm(seed in 0u64..10_000, alpha in -4.0f64..4.0) {
        let fx = fixture();
        let (p, q) = (random_forcing(&fx, seed), random_forcing(&fx, seed + 2));
        let (np, nq) = (fx.ctx.y_norm(&p).unwrap().value, fx.ctx.y_norm(&q).unwrap().value);
        let nsum = fx.ctx.y_norm(&p.axpy(1.0, &q).unwrap()).unwrap().value;
        prop_assert!(nsum <= (np + nq) * (1.0 + 1e-12));
        let na = fx.ctx.y_norm(&p.scale(alpha)).unwrap().value;
        prop_assert!(rel(na, alpha.abs() * np) < 1e-12);
    }

    /// The `r = √T` balls around the centres cover every node, so the sup term sees all of `[0, T]`.
    #[test]
    fn x_norm_dominates_the_sup_of_the_field(seed in 0u64..10_000) {
        let fx = fixture();
        let u = random_trajectory(&fx, seed);
        prop_assert!(fx.ctx.x_norm(&u).unwrap().value >= fx.ctx.sup_norm(&u).unwrap() * (1.0 - 1e-12));
    }
}
