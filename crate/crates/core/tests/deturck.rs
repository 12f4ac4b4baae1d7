mod common;

use std::f64::consts::PI;
use std::sync::Arc;

use common::{grid2, grid3, random_metric};
use flowlab::deturck::{
    deturck_vector_field, linearized_apply, quadratic_terms, ricci_deturck_operator, verify_decomposition,
};
use flowlab::families::{conformal_bump, random_smooth_sym2};
use flowlab::geometry::{covariant_derivative, MetricGeometry};
use flowlab::{Grid, MetricField, Stencil, TensorField, Valence};
use proptest::prelude::*;

fn lie_derivative_of_metric(x: &TensorField, g: &MetricField) -> TensorField {
    let n = g.dim();
    let grid = g.grid();
    let mut lowered = TensorField::zeros(grid, Valence::COVECTOR);
    for node in 0..grid.len() {
        let gm = g.field().at(node).to_vec();
        let xv = x.at(node).to_vec();
        for j in 0..n {
            lowered.data_mut()[node * n + j] = (0..n).map(|k| gm[j * n + k] * xv[k]).sum();
        }
    }
    let geo = MetricGeometry::new(g).unwrap();
    let d = covariant_derivative(&lowered, &geo).unwrap();
    d.axpy(1.0, &transpose(&d)).unwrap()
}

fn transpose(t: &TensorField) -> TensorField {
    let n = t.dim();
    let mut out = t.clone();
    for node in 0..t.grid().len() {
        for i in 0..n {
            for j in 0..n {
                out.data_mut()[node * n * n + i * n + j] = t.at(node)[j * n + i];
            }
        }
    }
    out
}

#[test]
fn operator_is_minus_twice_ricci_minus_lie_derivative() {
    let grid = grid2(48, 2.0);
    let g = random_metric(&grid, 3, 0.15);
    let g_bar = random_metric(&grid, 4, 0.1);
    let geo = MetricGeometry::new(&g).unwrap();
    let x = deturck_vector_field(&g, &g_bar).unwrap();
    assert!(x.max_abs() > 1e-2);
    let expect = geo.ricci.scale(-2.0).axpy(-1.0, &lie_derivative_of_metric(&x, &g)).unwrap();
    let p = ricci_deturck_operator(&g, &g_bar).unwrap();
    let err = p.axpy(-1.0, &expect).unwrap().max_abs();
    assert!(err < 1e-6 * p.max_abs(), "err {err}");
}

#[test]
fn vector_field_vanishes_when_metric_equals_background() {
    let g = random_metric(&grid3(8, 2.0), 5, 0.2);
    assert_eq!(deturck_vector_field(&g, &g).unwrap().max_abs(), 0.0);
    let geo = MetricGeometry::new(&g).unwrap();
    let p = ricci_deturck_operator(&g, &g).unwrap();
    assert!(p.axpy(2.0, &geo.ricci).unwrap().max_abs() <= 1e-12 * geo.ricci.max_abs());
}

#[test]
fn conformal_pairs_have_no_deturck_field_in_two_dimensions() {
    // g^{ij}(Γ̄ − Γ) = (2 − n) ∇u for g = e^{2u} ḡ
    let grid = grid2(64, 2.0);
    let g = conformal_bump(&grid, 0.1).unwrap();
    let x = deturck_vector_field(&g, &MetricField::flat(&grid)).unwrap();
    assert!(x.max_abs() < 1e-8, "{}", x.max_abs());
    let grid = grid3(16, 2.0);
    let g = conformal_bump(&grid, 0.1).unwrap();
    assert!(deturck_vector_field(&g, &MetricField::flat(&grid)).unwrap().max_abs() > 1e-2);
}

#[test]
fn flat_inputs_give_zero_everywhere() {
    let grid = grid2(16, 2.0);
    let flat = MetricField::flat(&grid);
    assert_eq!(deturck_vector_field(&flat, &flat).unwrap().max_abs(), 0.0);
    assert!(ricci_deturck_operator(&flat, &flat).unwrap().max_abs() <= 1e-10);
    let h = TensorField::zeros(&grid, Valence::SYM2);
    let q = quadratic_terms(&h, &flat, &flat).unwrap();
    assert!(q.is_zero());
    assert_eq!(linearized_apply(&h, &flat, &flat).unwrap().max_abs(), 0.0);
    let rep = verify_decomposition(&flat, &flat, &flat).unwrap();
    assert!(rep.sup_residual <= 1e-10);
}

/// `(P(g + εh) − P(g)) / ε − Lh = O(ε)`: halving ε halves the defect.
#[test]
fn gateaux_slope_is_the_linearization() {
    let grid = grid2(32, 2.0);
    let g = random_metric(&grid, 11, 0.1);
    let g_bar = random_metric(&grid, 12, 0.1);
    let h = random_smooth_sym2(&grid, 13, 1).unwrap();
    let h = h.scale(1.0 / h.max_abs());
    let p0 = ricci_deturck_operator(&g, &g_bar).unwrap();
    let lh = linearized_apply(&h, &g, &g_bar).unwrap();
    let defect = |eps: f64| {
        let p = ricci_deturck_operator(&g.perturbed(&h.scale(eps)).unwrap(), &g_bar).unwrap();
        p.axpy(-1.0, &p0).unwrap().scale(1.0 / eps).axpy(-1.0, &lh).unwrap().max_abs()
    };
    let (d1, d2) = (defect(1e-3), defect(5e-4));
    assert!(d1 < 1e-2 * lh.max_abs());
    assert!((d1 / d2 - 2.0).abs() < 0.05, "ratio {}", d1 / d2);
}

/// `Q[εh]` scales like `ε²` for small ε.
#[test]
fn remainder_is_quadratic() {
    let grid = grid2(32, 2.0);
    let g = random_metric(&grid, 21, 0.1);
    let h = random_smooth_sym2(&grid, 22, 1).unwrap();
    let h = h.scale(1.0 / h.max_abs());
    let geo = MetricGeometry::new(&g).unwrap();
    let q = |eps: f64| quadratic_terms(&h.scale(eps), &g, &g).unwrap().assemble(&geo).unwrap().max_abs();
    let ratio = q(2e-3) / q(1e-3);
    assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
}

#[test]
fn decomposition_closes_on_a_bumpy_three_torus() {
    let grid = Arc::new(Grid::with_stencil(3, &[16; 3], &[2.0; 3], Stencil::from_order(14).unwrap()).unwrap());
    let g = random_metric(&grid, 31, 0.05);
    let h = random_smooth_sym2(&grid, 32, 1).unwrap();
    let g_hat = g.perturbed(&h.scale(0.05 / h.max_abs())).unwrap();
    let g_bar = random_metric(&grid, 33, 0.05);
    let rep = verify_decomposition(&g, &g_hat, &g_bar).unwrap();
    assert!(rep.relative_residual < 1e-6, "{rep:?}");
}

#[test]
fn decomposition_residual_converges_under_refinement() {
    let res: Vec<f64> = [32, 64]
        .iter()
        .map(|&n| {
            let grid = grid2(n, 2.0);
            let k = 2.0 * PI / 2.0;
            let g = conformal_bump(&grid, 0.05).unwrap();
            let h = TensorField::from_fn(&grid, Valence::SYM2, |x, out| {
                let v = 0.05 * (k * x[0]).cos() * (k * x[1]).sin();
                out.copy_from_slice(&[v, 0.5 * v, 0.5 * v, -v]);
            })
            .unwrap();
            let g_hat = g.perturbed(&h).unwrap();
            verify_decomposition(&g, &g_hat, &MetricField::flat(&grid)).unwrap().relative_residual
        })
        .collect();
    assert!(res[0] / res[1] > 8.0, "{res:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn linearization_is_linear(seed in 0u64..500, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let grid = grid2(16, 2.0);
        let g = random_metric(&grid, seed, 0.1);
        let g_bar = random_metric(&grid, seed + 1, 0.1);
        let h1 = random_smooth_sym2(&grid, seed + 2, 1).unwrap();
        let h2 = random_smooth_sym2(&grid, seed + 3, 1).unwrap();
        let lhs = linearized_apply(&h1.scale(a).axpy(b, &h2).unwrap(), &g, &g_bar).unwrap();
        let rhs = linearized_apply(&h1, &g, &g_bar).unwrap().scale(a)
            .axpy(b, &linearized_apply(&h2, &g, &g_bar).unwrap()).unwrap();
        prop_assert!(lhs.axpy(-1.0, &rhs).unwrap().max_abs() <= 1e-10 * rhs.max_abs().max(1.0));
    }

    #[test]
    fn decomposition_holds_for_random_perturbations(seed in 0u64..500, eps in 0.005f64..0.1) {
        let grid = grid2(64, 2.0);
        let g = random_metric(&grid, seed, 0.1);
        let h = random_smooth_sym2(&grid, seed + 1, 1).unwrap();
        let g_hat = g.perturbed(&h.scale(eps / h.max_abs())).unwrap();
        let g_bar = random_metric(&grid, seed + 2, 0.1);
        let rep = verify_decomposition(&g, &g_hat, &g_bar).unwrap();
        prop_assert!(rep.relative_residual < 1e-6, "{:?}", rep);
    }

    #[test]
    fn vector_field_is_exact_for_equal_metrics(seed in 0u64..500) {
        let g = random_metric(&grid2(16, 2.0), seed, 0.3);
        prop_assert_eq!(deturck_vector_field(&g, &g).unwrap().max_abs(), 0.0);
    }
}
