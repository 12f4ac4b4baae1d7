mod common;

use common::{grid2, rel};
use flowlab::families::{conformal_bump, random_smooth_sym2};
use flowlab::norms::NormConfig;
use flowlab::picard::{contraction_ratio, phi_apply, picard_solve, PicardProblem};
use flowlab::solver::{integrate_deturck_direct, BackgroundMode, StepConfig};
use flowlab::{FlowError, MetricField, TensorField, Valence};

fn small_norm() -> NormConfig {
    NormConfig { center_stride: 4, min_radius_cells: 2.0, window: None }
}

/// `Φ(0)(t) = ∫₀ᵗ e^{(t−s)Δ_L} Z ds = tZ + O(t²)`.
#[test]
fn first_image_of_zero_is_linear_in_time_to_leading_order() {
    let grid = grid2(24, 2.0);
    let g0 = conformal_bump(&grid, 0.02).unwrap();
    let prob = PicardProblem::static_existence(&g0, 0.05, 1.0)
        .unwrap()
        .with_step(StepConfig::new(0.2, 2))
        .with_norm(small_norm());
    let ws = prob.workspace().unwrap();
    let image = ws.phi(&prob, &ws.start(&prob).unwrap()).unwrap();
    let z = ws.forcing(&ws.zero_trajectory(&prob).unwrap(), true).unwrap().parts[0].r_part.clone();
    let defect = |k: usize| {
        let t = image.times[k];
        image.fields[k].axpy(-t, &z).unwrap().max_abs() / (t * z.max_abs())
    };
    let (k1, k2) = (2, 4);
    let ratio = defect(k2) / defect(k1);
    let expect = image.times[k2] / image.times[k1];
    assert!(rel(ratio, expect) < 0.2, "defect ratio {ratio}, time ratio {expect}");
    assert!(defect(1) < 0.1);
}

#[test]
fn zero_perturbation_of_a_flat_background_is_a_fixed_point() {
    let grid = grid2(16, 2.0);
    let bg = BackgroundMode::static_metric(&MetricField::flat(&grid)).unwrap();
    let prob = PicardProblem::perturbation(bg, TensorField::zeros(&grid, Valence::SYM2), 0.1, 1e-2)
        .unwrap()
        .with_norm(small_norm());
    let (h, trace) = picard_solve(&prob).unwrap();
    assert!(trace.converged);
    assert_eq!(trace.iterations, 1);
    assert_eq!(h.max_abs(), 0.0);
}

#[test]
fn identical_pairs_are_rejected() {
    let grid = grid2(16, 2.0);
    let g0 = conformal_bump(&grid, 0.02).unwrap();
    let prob = PicardProblem::static_existence(&g0, 0.1, 1.0).unwrap().with_norm(small_norm());
    let v = prob.workspace().unwrap().zero_trajectory(&prob).unwrap();
    assert!(matches!(contraction_ratio(&v, &v, &prob), Err(FlowError::DegeneratePair)));
}

#[test]
fn iterates_leaving_the_ball_are_reported() {
    let grid = grid2(16, 2.0);
    let g0 = conformal_bump(&grid, 0.05).unwrap();
    let prob = PicardProblem::static_existence(&g0, 0.1, 1e-6).unwrap().with_norm(small_norm());
    match picard_solve(&prob) {
        Err(FlowError::BallEscape { iteration, norm, delta }) => {
            assert_eq!(iteration, 1);
            assert!(norm > delta);
        }
        other => panic!("expected a ball escape, got {other:?}"),
    }
}

#[test]
fn initial_data_outside_the_ball_is_rejected() {
    let grid = grid2(16, 2.0);
    let bg = BackgroundMode::static_metric(&MetricField::flat(&grid)).unwrap();
    let h0 = random_smooth_sym2(&grid, 4, 1).unwrap();
    let h0 = h0.scale(0.02 / h0.max_abs());
    let err = PicardProblem::perturbation(bg.clone(), h0.clone(), 0.1, 1e-2).unwrap_err();
    assert!(matches!(err, FlowError::Config(_)), "{err}");
    assert!(PicardProblem::perturbation(bg, h0, 0.05, 0.1).is_ok());
}

#[test]
fn perturbations_of_curved_static_backgrounds_are_rejected() {
    let grid = grid2(16, 2.0);
    let bg = BackgroundMode::static_metric(&conformal_bump(&grid, 0.05).unwrap()).unwrap();
    let err = PicardProblem::perturbation(bg, TensorField::zeros(&grid, Valence::SYM2), 0.1, 1e-2).unwrap_err();
    assert!(matches!(err, FlowError::Config(_)));
}

/// The fixed point and the direct DeTurck integration describe the same flow.
#[test]
fn fixed_point_matches_direct_integration() {
    let grid = grid2(24, 2.0);
    let g0 = conformal_bump(&grid, 0.002).unwrap();
    let step = StepConfig::new(0.2, 4);
    let prob = PicardProblem::static_existence(&g0, 0.05, 1e-2)
        .unwrap()
        .with_step(step.clone())
        .with_norm(small_norm())
        .with_tolerance(1e-12, 30);
    let (picard, trace) = picard_solve(&prob).unwrap();
    assert!(trace.converged && trace.geometric(), "{trace:?}");
    let direct = integrate_deturck_direct(&g0, &prob.bg, 0.05, &step).unwrap();
    let gap = picard.axpy(-1.0, &direct).unwrap().max_abs();
    assert!(gap < 1e-8, "gap {gap}");
    let again = phi_apply(&picard, &prob).unwrap();
    assert!(again.axpy(-1.0, &picard).unwrap().max_abs() < 1e-10);
}
