//! Central finite differences with periodic wrap.

use crate::error::{FlowError, Result};
use crate::grid::Grid;
use crate::tensor::TensorField;

/// Output layout for a stencil sweep: component `c` of node `x` goes to
/// `x * node_stride + c * comp_step + offset`.
#[derive(Clone, Copy)]
struct Layout {
    node_stride: usize,
    comp_step: usize,
    offset: usize,
}

fn sweep(grid: &Grid, src: &[f64], nc: usize, axis: usize, second: bool, dst: &mut [f64], lay: Layout) {
    let st = grid.stencil();
    let reach = st.reach();
    let h = grid.spacing()[axis];
    let shifts = grid.shift_table(axis, reach);
    let res = grid.resolution()[axis];
    let stride = grid.strides()[axis];
    let (c0, w): (f64, Vec<f64>) = if second {
        let (c0, w) = st.second();
        (c0 / (h * h), w.iter().map(|x| x / (h * h)).collect())
    } else {
        (0.0, st.first().iter().map(|x| x / h).collect())
    };
    let mut acc = vec![0.0; nc];
    for node in 0..grid.len() {
        let ca = (node / stride) % res;
        let base = node * nc;
        for (c, a) in acc.iter_mut().enumerate() {
            *a = c0 * src[base + c];
        }
        for (k, wk) in w.iter().enumerate() {
            let plus = (node as isize + shifts[reach + k + 1][ca]) as usize * nc;
            let minus = (node as isize + shifts[reach - k - 1][ca]) as usize * nc;
            if second {
                for c in 0..nc {
                    acc[c] += wk * (src[plus + c] + src[minus + c]);
                }
            } else {
                for c in 0..nc {
                    acc[c] += wk * (src[plus + c] - src[minus + c]);
                }
            }
        }
        let o = node * lay.node_stride + lay.offset;
        for c in 0..nc {
            dst[o + c * lay.comp_step] = acc[c];
        }
    }
}

fn check_axis(f: &TensorField, axis: usize) -> Result<()> {
    if axis >= f.dim() {
        return Err(FlowError::Shape(format!("axis {axis} out of range for dimension {}", f.dim())));
    }
    Ok(())
}

/// Derivative along one coordinate axis; valence unchanged.
pub fn partial_derivative(f: &TensorField, axis: usize) -> Result<TensorField> {
    check_axis(f, axis)?;
    let nc = f.components();
    let mut out = vec![0.0; f.data().len()];
    sweep(f.grid(), f.data(), nc, axis, false, &mut out, Layout { node_stride: nc, comp_step: 1, offset: 0 });
    Ok(TensorField::from_raw(f.grid(), f.valence(), out))
}

/// Compact second derivative along one axis.
pub fn second_partial(f: &TensorField, axis: usize) -> Result<TensorField> {
    check_axis(f, axis)?;
    let nc = f.components();
    let mut out = vec![0.0; f.data().len()];
    sweep(f.grid(), f.data(), nc, axis, true, &mut out, Layout { node_stride: nc, comp_step: 1, offset: 0 });
    Ok(TensorField::from_raw(f.grid(), f.valence(), out))
}

/// Coordinate gradient: one covariant slot appended last, `(∂f)_{..., a} = ∂_a f_{...}`.
pub fn gradient(f: &TensorField) -> TensorField {
    let n = f.dim();
    let nc = f.components();
    let mut out = vec![0.0; f.data().len() * n];
    for a in 0..n {
        sweep(f.grid(), f.data(), nc, a, false, &mut out, Layout { node_stride: nc * n, comp_step: n, offset: a });
    }
    TensorField::from_raw(f.grid(), f.valence().with_lower(1), out)
}

/// Coordinate Hessian with two slots appended: compact stencils on the diagonal,
/// composed first differences off it. Exactly symmetric in the appended pair.
pub fn hessian(f: &TensorField) -> TensorField {
    hessian_with_gradient(f, &gradient(f))
}

/// [`hessian`] reusing a gradient already computed with [`gradient`].
pub fn hessian_with_gradient(f: &TensorField, grad: &TensorField) -> TensorField {
    let n = f.dim();
    let nc = f.components();
    let grid = f.grid();
    let mut out = vec![0.0; f.data().len() * n * n];
    for a in 0..n {
        sweep(grid, f.data(), nc, a, true, &mut out, Layout { node_stride: nc * n * n, comp_step: n * n, offset: a * n + a });
    }
    if n > 1 {
        // d_b (d_a f) for a < b, read from the gradient's slot a
        let mut col = vec![0.0; f.data().len()];
        let mut tmp = vec![0.0; f.data().len()];
        for a in 0..n {
            for (x, chunk) in grad.data().chunks(nc * n).enumerate() {
                for c in 0..nc {
                    col[x * nc + c] = chunk[c * n + a];
                }
            }
            for b in a + 1..n {
                sweep(grid, &col, nc, b, false, &mut tmp, Layout { node_stride: nc, comp_step: 1, offset: 0 });
                for x in 0..grid.len() {
                    let o = x * nc * n * n;
                    for c in 0..nc {
                        let v = tmp[x * nc + c];
                        out[o + c * n * n + a * n + b] = v;
                        out[o + c * n * n + b * n + a] = v;
                    }
                }
            }
        }
    }
    TensorField::from_raw(grid, f.valence().with_lower(2), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Stencil;
    use crate::tensor::Valence;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn sin_field(res: usize, st: Stencil) -> TensorField {
        let g = Arc::new(Grid::with_stencil(2, &[res, res], &[2.0 * PI, 2.0 * PI], st).unwrap());
        TensorField::from_fn(&g, Valence::SCALAR, |x, o| o[0] = x[0].sin()).unwrap()
    }

    fn err(res: usize, st: Stencil) -> f64 {
        let f = sin_field(res, st);
        let d = partial_derivative(&f, 0).unwrap();
        (0..f.grid().len()).map(|x| (d.at(x)[0] - f.grid().position(x)[0].cos()).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn constants_are_exact() {
        let g = Arc::new(Grid::new(3, &[8, 9, 10], &[1.0, 2.0, 3.0]).unwrap());
        let f = TensorField::constant(&g, Valence::SYM2, &[1.5, 0.2, 0.0, 0.2, 2.0, 0.1, 0.0, 0.1, 0.7]).unwrap();
        for a in 0..3 {
            assert!(partial_derivative(&f, a).unwrap().max_abs() < 1e-12);
        }
        assert!(hessian(&f).max_abs() < 1e-10);
    }

    #[test]
    fn fourth_order_refinement() {
        let e1 = err(32, Stencil::FOURTH);
        let e2 = err(64, Stencil::FOURTH);
        assert!(e1 / e2 > 14.0 && e1 / e2 < 18.0, "ratio {}", e1 / e2);
        assert!(err(64, Stencil::SIXTH) < e2 / 50.0);
    }

    #[test]
    fn hessian_mixed() {
        let g = Arc::new(Grid::new(2, &[48, 48], &[2.0 * PI, 2.0 * PI]).unwrap());
        let f = TensorField::from_fn(&g, Valence::SCALAR, |x, o| o[0] = x[0].sin() * (2.0 * x[1]).cos()).unwrap();
        let h = hessian(&f);
        for x in 0..g.len() {
            let p = g.position(x);
            let exact = [
                -p[0].sin() * (2.0 * p[1]).cos(),
                -2.0 * p[0].cos() * (2.0 * p[1]).sin(),
                -2.0 * p[0].cos() * (2.0 * p[1]).sin(),
                -4.0 * p[0].sin() * (2.0 * p[1]).cos(),
            ];
            for c in 0..4 {
                assert!((h.at(x)[c] - exact[c]).abs() < 1e-4);
            }
        }
    }
}
