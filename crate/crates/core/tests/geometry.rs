mod common;

use std::f64::consts::PI;

use common::{grid2, grid3, random_metric, rel};
use flowlab::geometry::{christoffel, tensor_pointwise_norm, MetricGeometry};
use flowlab::{MetricField, TensorField, Valence};
use proptest::prelude::*;

#[test]
fn flat_metric_has_no_curvature() {
    for grid in [grid2(16, 2.0), grid3(8, 1.0)] {
        let geo = MetricGeometry::new(&MetricField::flat(&grid)).unwrap();
        for f in [&geo.christoffel, &geo.riemann, &geo.ricci, &geo.scalar] {
            assert!(f.max_abs() <= 1e-10);
        }
        assert!(geo.sup_rm() <= 1e-10);
    }
}

fn conformal(res: usize, a: f64) -> (MetricField, TensorField) {
    let grid = grid2(res, 2.0);
    let k = PI;
    let u = |x: &[f64; 3]| a * (k * x[0]).sin() * (k * x[1]).sin();
    let g = TensorField::from_fn(&grid, Valence::SYM2, |x, out| {
        let e = (2.0 * u(x)).exp();
        out.copy_from_slice(&[e, 0.0, 0.0, e]);
    })
    .unwrap();
    // R = −2 e^{−2u} Δu with Δu = −2k² u
    let r = TensorField::from_fn(&grid, Valence::SCALAR, |x, out| {
        out[0] = 4.0 * k * k * u(x) * (-2.0 * u(x)).exp();
    })
    .unwrap();
    (MetricField::new(g).unwrap(), r)
}

#[test]
fn conformal_scalar_curvature_matches_closed_form() {
    let mut errors = Vec::new();
    for res in [32, 64] {
        let (g, exact) = conformal(res, 0.1);
        let geo = MetricGeometry::new(&g).unwrap();
        let err = geo.scalar.axpy(-1.0, &exact).unwrap().max_abs() / exact.max_abs();
        errors.push(err);
    }
    assert!(errors[1] < 1e-5, "{errors:?}");
    // sixth-order stencil: halving h should cut the error by ~64
    assert!(errors[0] / errors[1] > 30.0, "{errors:?}");
}

#[test]
fn two_dimensional_ricci_is_half_scalar_times_metric() {
    let g = random_metric(&grid2(32, 2.0), 4, 0.1);
    let geo = MetricGeometry::new(&g).unwrap();
    let mut expect = TensorField::zeros(g.grid(), Valence::SYM2);
    for node in 0..g.grid().len() {
        let s = geo.scalar.at(node)[0];
        let gm = g.field().at(node).to_vec();
        expect.data_mut()[node * 4..node * 4 + 4].iter_mut().zip(gm).for_each(|(e, v)| *e = 0.5 * s * v);
    }
    assert!(geo.ricci.axpy(-1.0, &expect).unwrap().max_abs() < 1e-10 * geo.ricci.max_abs().max(1.0));
}

#[test]
fn gauss_bonnet_total_curvature_vanishes_on_the_torus() {
    let g = random_metric(&grid2(48, 2.0), 9, 0.2);
    let geo = MetricGeometry::new(&g).unwrap();
    let cell = g.grid().cell_volume();
    let (mut total, mut abs) = (0.0, 0.0);
    for (node, dv) in geo.volume_density.iter().enumerate() {
        let r = geo.scalar.at(node)[0];
        total += r * dv * cell;
        abs += r.abs() * dv * cell;
    }
    assert!(total.abs() < 1e-6 * abs, "∫R = {total}, ∫|R| = {abs}");
}

#[test]
fn diagonal_christoffel_symbols_match_closed_form() {
    let grid = grid2(64, 2.0);
    let k = PI;
    let (a, b) = (0.1, -0.07);
    let fa = |x: &[f64; 3]| a * (k * x[1]).sin() * (k * x[0]).cos();
    let fb = |x: &[f64; 3]| b * (k * x[0]).sin();
    let g = TensorField::from_fn(&grid, Valence::SYM2, |x, out| {
        out.copy_from_slice(&[(2.0 * fa(x)).exp(), 0.0, 0.0, (2.0 * fb(x)).exp()]);
    })
    .unwrap();
    let gamma = christoffel(&MetricField::new(g).unwrap()).unwrap();
    let mut worst = 0.0f64;
    for node in 0..grid.len() {
        let x = grid.position(node);
        let (pa0, pa1) = (-a * k * (k * x[1]).sin() * (k * x[0]).sin(), a * k * (k * x[1]).cos() * (k * x[0]).cos());
        let pb0 = b * k * (k * x[0]).cos();
        let e = (2.0 * fb(&x) - 2.0 * fa(&x)).exp();
        // g = diag(e^{2α}, e^{2β}), β independent of x₁
        let exact = [
            ([0, 0, 0], pa0),
            ([0, 0, 1], pa1),
            ([0, 1, 1], -e * pb0),
            ([1, 0, 0], -pa1 / e),
            ([1, 0, 1], pb0),
            ([1, 1, 1], 0.0),
        ];
        for (idx, v) in exact {
            worst = worst.max((gamma.get(node, &idx) - v).abs());
        }
    }
    assert!(worst < 1e-6, "worst Christoffel error {worst}");
}

#[test]
fn pointwise_norm_of_the_metric_is_root_dimension() {
    for grid in [grid2(16, 2.0), grid3(8, 2.0)] {
        let g = random_metric(&grid, 2, 0.2);
        let n = tensor_pointwise_norm(g.field(), &g).unwrap();
        let d = (grid.dim() as f64).sqrt();
        assert!(n.data().iter().all(|v| (v - d).abs() < 1e-12));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn riemann_has_its_algebraic_symmetries(seed in 0u64..1000, a in 0.01f64..0.3) {
        let g = random_metric(&grid3(8, 2.0), seed, a);
        let geo = MetricGeometry::new(&g).unwrap();
        let rm = geo.lowered_riemann();
        let scale = rm.max_abs().max(1e-12);
        let n = 3;
        for node in (0..g.grid().len()).step_by(37) {
            for i in 0..n { for j in 0..n { for k in 0..n { for l in 0..n {
                let v = rm.get(node, &[i, j, k, l]);
                prop_assert!((v + rm.get(node, &[j, i, k, l])).abs() < 1e-9 * scale);
                prop_assert!((v + rm.get(node, &[i, j, l, k])).abs() < 1e-9 * scale);
                prop_assert!((v - rm.get(node, &[k, l, i, j])).abs() < 1e-9 * scale);
                let bianchi = v + rm.get(node, &[i, k, l, j]) + rm.get(node, &[i, l, j, k]);
                prop_assert!(bianchi.abs() < 1e-9 * scale);
            }}}}
        }
    }

    #[test]
    fn ricci_is_symmetric(seed in 0u64..1000) {
        let g = random_metric(&grid3(8, 2.0), seed, 0.2);
        let geo = MetricGeometry::new(&g).unwrap();
        prop_assert!(geo.ricci.asymmetry() < 1e-12 * geo.ricci.max_abs().max(1.0));
    }

    #[test]
    fn pointwise_norm_is_absolutely_homogeneous(seed in 0u64..1000, s in -5.0f64..5.0) {
        let grid = grid2(16, 2.0);
        let g = random_metric(&grid, seed, 0.2);
        let h = random_metric(&grid, seed + 1, 0.3).into_field();
        let a = tensor_pointwise_norm(&h.scale(s), &g).unwrap();
        let b = tensor_pointwise_norm(&h, &g).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!(rel(*x, s.abs() * y) < 1e-12);
        }
    }

    #[test]
    fn inner_product_is_symmetric(seed in 0u64..1000) {
        let grid = grid2(16, 2.0);
        let geo = MetricGeometry::new(&random_metric(&grid, seed, 0.2)).unwrap();
        let a = random_metric(&grid, seed + 7, 0.5).into_field();
        let b = random_metric(&grid, seed + 8, 0.5).into_field();
        prop_assert!(rel(geo.inner_product(&a, &b).unwrap(), geo.inner_product(&b, &a).unwrap()) < 1e-12);
    }
}
