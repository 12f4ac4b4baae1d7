//! Levi-Civita connection, curvature and covariant calculus of a grid metric.
//!
//! Curvature convention: `R(∂_i, ∂_j)∂_k = R^l_{ijk} ∂_l`, so
//! `R^l_{ijk} = ∂_i Γ^l_{jk} - ∂_j Γ^l_{ik} + Γ^l_{im} Γ^m_{jk} - Γ^l_{jm} Γ^m_{ik}`,
//! `Ric_{jk} = R^i_{ijk}` and `R_{ijkl} = g_{lm} R^m_{ijk}` (so `R_{ijji} > 0` on spheres).

use std::sync::Arc;

use crate::derivative::{gradient, hessian, hessian_with_gradient};
use crate::error::{FlowError, Result};
use crate::grid::Grid;
use crate::linalg::{self, Mat, T3, T4, ZERO_MAT, ZERO_T3, ZERO_T4};
use crate::tensor::{MetricField, TensorField, Valence};

/// Riemann, Ricci and scalar curvature together with the Christoffel symbols they came from.
#[derive(Clone, Debug)]
pub struct CurvatureBundle {
    /// `R^l_{ijk}`, valence (1,3).
    pub riemann: TensorField,
    /// `R_{jk}`, valence (0,2).
    pub ricci: TensorField,
    pub scalar: TensorField,
    /// `Γ^k_{ij}`, valence (1,2).
    pub christoffel: TensorField,
}

/// Everything derived from a metric that the operators reuse.
#[derive(Clone, Debug)]
pub struct MetricGeometry {
    pub metric: MetricField,
    /// `g^{ij}`, valence (2,0).
    pub inverse: TensorField,
    /// `√det g` per node.
    pub volume_density: Vec<f64>,
    /// `Γ^k_{ij}`.
    pub christoffel: TensorField,
    /// `∂_a Γ^k_{ij}` with the derivative slot last, valence (1,3).
    pub christoffel_derivative: TensorField,
    pub riemann: TensorField,
    pub ricci: TensorField,
    pub scalar: TensorField,
}

/// Christoffel symbols `Γ^k_{ij} = ½ g^{kl}(∂_i g_{jl} + ∂_j g_{il} - ∂_l g_{ij})`.
pub fn christoffel(g: &MetricField) -> Result<TensorField> {
    let n = g.dim();
    let dg = gradient(g.field());
    let grid = g.grid();
    let mut out = vec![0.0; grid.len() * n * n * n];
    for x in 0..grid.len() {
        let (ginv, _) = linalg::inverse(&g.mat(x), n).ok_or(FlowError::SingularMetric { node: x })?;
        let d = linalg::load_t3(dg.at(x), n);
        let gam = christoffel_node(&ginv, &d, n);
        linalg::store_t3(&gam, n, &mut out[x * n * n * n..]);
    }
    let f = TensorField::from_raw(grid, Valence::CONNECTION, out);
    f.check_finite("christoffel")?;
    Ok(f)
}

/// Lowered symbols `Γ_{m,jk}` from `d[i][j][a] = ∂_a g_{ij}`.
fn lowered_christoffel(d: &T3, n: usize) -> T3 {
    let mut low = ZERO_T3;
    for m in 0..n {
        for j in 0..n {
            for k in 0..n {
                low[m][j][k] = 0.5 * (d[k][m][j] + d[j][m][k] - d[j][k][m]);
            }
        }
    }
    low
}

fn raise_first(ginv: &Mat, low: &T3, n: usize) -> T3 {
    let mut up = ZERO_T3;
    for l in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut s = 0.0;
                for m in 0..n {
                    s += ginv[l][m] * low[m][j][k];
                }
                up[l][j][k] = s;
            }
        }
    }
    up
}

fn christoffel_node(ginv: &Mat, d: &T3, n: usize) -> T3 {
    raise_first(ginv, &lowered_christoffel(d, n), n)
}

/// Curvature of `g`; see the module docs for index conventions.
pub fn curvature(g: &MetricField) -> Result<CurvatureBundle> {
    let geo = MetricGeometry::new(g)?;
    Ok(CurvatureBundle { riemann: geo.riemann, ricci: geo.ricci, scalar: geo.scalar, christoffel: geo.christoffel })
}

impl MetricGeometry {
    pub fn new(g: &MetricField) -> Result<Self> {
        let n = g.dim();
        let grid = g.grid().clone();
        let dg = gradient(g.field());
        let ddg = hessian_with_gradient(g.field(), &dg);
        let len = grid.len();
        let (n2, n3, n4) = (n * n, n * n * n, n * n * n * n);
        let mut inv = vec![0.0; len * n2];
        let mut vol = vec![0.0; len];
        let mut gam = vec![0.0; len * n3];
        let mut dgam = vec![0.0; len * n4];
        let mut riem = vec![0.0; len * n4];
        let mut ric = vec![0.0; len * n2];
        let mut scal = vec![0.0; len];
        for x in 0..len {
            let gm = g.mat(x);
            let (gi, det) = linalg::inverse(&gm, n).ok_or(FlowError::SingularMetric { node: x })?;
            if det <= 0.0 {
                return Err(FlowError::NotPositiveDefinite { node: x, eigenvalue: linalg::min_eigenvalue(&gm, n) });
            }
            vol[x] = det.sqrt();
            let d = linalg::load_t3(dg.at(x), n);
            let dd = linalg::load_t4(ddg.at(x), n);
            let low = lowered_christoffel(&d, n);
            let up = raise_first(&gi, &low, n);
            // ∂_a g^{lm} = -g^{lp} ∂_a g_{pq} g^{qm}
            let mut dginv = ZERO_T3; // [a][l][m]
            for a in 0..n {
                for l in 0..n {
                    for m in 0..n {
                        let mut s = 0.0;
                        for p in 0..n {
                            for q in 0..n {
                                s -= gi[l][p] * d[p][q][a] * gi[q][m];
                            }
                        }
                        dginv[a][l][m] = s;
                    }
                }
            }
            // ∂_a Γ^l_{jk}, stored [l][j][k][a]
            let mut dg_up = ZERO_T4;
            for l in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for a in 0..n {
                            let mut s = 0.0;
                            for m in 0..n {
                                let dlow = 0.5 * (dd[k][m][a][j] + dd[j][m][a][k] - dd[j][k][a][m]);
                                s += dginv[a][l][m] * low[m][j][k] + gi[l][m] * dlow;
                            }
                            dg_up[l][j][k][a] = s;
                        }
                    }
                }
            }
            let mut rm = ZERO_T4; // [l][i][j][k]
            for l in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        for k in 0..n {
                            let mut s = dg_up[l][j][k][i] - dg_up[l][i][k][j];
                            for m in 0..n {
                                s += up[l][i][m] * up[m][j][k] - up[l][j][m] * up[m][i][k];
                            }
                            rm[l][i][j][k] = s;
                        }
                    }
                }
            }
            let mut rc = ZERO_MAT;
            for j in 0..n {
                for k in 0..n {
                    rc[j][k] = (0..n).map(|i| rm[i][i][j][k]).sum();
                }
            }
            for j in 0..n {
                for k in j + 1..n {
                    let v = 0.5 * (rc[j][k] + rc[k][j]);
                    rc[j][k] = v;
                    rc[k][j] = v;
                }
            }
            let mut r = 0.0;
            for j in 0..n {
                for k in 0..n {
                    r += gi[j][k] * rc[j][k];
                }
            }
            linalg::store_mat(&gi, n, &mut inv[x * n2..]);
            linalg::store_t3(&up, n, &mut gam[x * n3..]);
            linalg::store_t4(&dg_up, n, &mut dgam[x * n4..]);
            linalg::store_t4(&rm, n, &mut riem[x * n4..]);
            linalg::store_mat(&rc, n, &mut ric[x * n2..]);
            scal[x] = r;
        }
        let geo = MetricGeometry {
            metric: g.clone(),
            inverse: TensorField::from_raw(&grid, Valence::INVERSE, inv),
            volume_density: vol,
            christoffel: TensorField::from_raw(&grid, Valence::CONNECTION, gam),
            christoffel_derivative: TensorField::from_raw(&grid, Valence::new(1, 3), dgam),
            riemann: TensorField::from_raw(&grid, Valence::new(1, 3), riem),
            ricci: TensorField::from_raw(&grid, Valence::SYM2, ric),
            scalar: TensorField::from_raw(&grid, Valence::SCALAR, scal),
        };
        geo.riemann.check_finite("curvature")?;
        Ok(geo)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.metric.grid()
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn ginv(&self, x: usize) -> Mat {
        linalg::load_mat(self.inverse.at(x), self.dim())
    }

    pub fn gamma(&self, x: usize) -> T3 {
        linalg::load_t3(self.christoffel.at(x), self.dim())
    }

    /// Lowered Riemann tensor `R_{ijkl} = g_{lm} R^m_{ijk}`, valence (0,4).
    pub fn lowered_riemann(&self) -> TensorField {
        let n = self.dim();
        let n4 = n.pow(4);
        let mut out = vec![0.0; self.grid().len() * n4];
        for x in 0..self.grid().len() {
            let g = self.metric.mat(x);
            let rm = linalg::load_t4(self.riemann.at(x), n);
            let mut low = ZERO_T4;
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        for l in 0..n {
                            low[i][j][k][l] = (0..n).map(|m| g[l][m] * rm[m][i][j][k]).sum();
                        }
                    }
                }
            }
            linalg::store_t4(&low, n, &mut out[x * n4..]);
        }
        TensorField::from_raw(self.grid(), Valence::new(0, 4), out)
    }

    /// Pointwise `|Rm|_g` at every node.
    pub fn riemann_norm(&self) -> Vec<f64> {
        pointwise_norm_with(&self.riemann, self)
    }

    /// `sup_M |Rm|_g`.
    pub fn sup_rm(&self) -> f64 {
        self.riemann_norm().into_iter().fold(0.0, f64::max)
    }

    /// Riemannian volume `Σ √det g · cell volume`.
    pub fn total_volume(&self) -> f64 {
        self.volume_density.iter().sum::<f64>() * self.grid().cell_volume()
    }

    /// `∫ ⟨a, b⟩_g dV_g` for two fields of the same valence.
    pub fn inner_product(&self, a: &TensorField, b: &TensorField) -> Result<f64> {
        a.same_shape(b)?;
        let mut s = 0.0;
        let mut buf = Vec::new();
        for x in 0..self.grid().len() {
            flip_all(a.at(x), a.valence(), self, x, &mut buf);
            s += b.at(x).iter().zip(&buf).map(|(p, q)| p * q).sum::<f64>() * self.volume_density[x];
        }
        Ok(s * self.grid().cell_volume())
    }
}

/// Contract one slot of a node-local tensor with a matrix: `dst[.., a, ..] = Σ_b m[a][b] src[.., b, ..]`.
fn contract_slot(src: &[f64], rank: usize, slot: usize, m: &Mat, n: usize, dst: &mut [f64]) {
    let stride = n.pow((rank - slot - 1) as u32);
    let block = stride * n;
    for (s, d) in src.chunks(block).zip(dst.chunks_mut(block)) {
        for a in 0..n {
            for r in 0..stride {
                let mut acc = 0.0;
                for b in 0..n {
                    acc += m[a][b] * s[b * stride + r];
                }
                d[a * stride + r] = acc;
            }
        }
    }
}

/// Raise every covariant and lower every contravariant slot at node `x`.
fn flip_all(src: &[f64], val: Valence, geo: &MetricGeometry, x: usize, out: &mut Vec<f64>) {
    let n = geo.dim();
    let rank = val.rank();
    let g = geo.metric.mat(x);
    let gi = geo.ginv(x);
    out.clear();
    out.extend_from_slice(src);
    let mut tmp = vec![0.0; src.len()];
    for slot in 0..rank {
        let m = if slot < val.upper { &g } else { &gi };
        contract_slot(out, rank, slot, m, n, &mut tmp);
        std::mem::swap(out, &mut tmp);
    }
}

pub(crate) fn pointwise_norm_with(t: &TensorField, geo: &MetricGeometry) -> Vec<f64> {
    let mut buf = Vec::new();
    (0..t.grid().len())
        .map(|x| {
            flip_all(t.at(x), t.valence(), geo, x, &mut buf);
            t.at(x).iter().zip(&buf).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
        })
        .collect()
}

/// `|T|_g` at each node by full contraction of every index with `g` or `g^{-1}`.
pub fn tensor_pointwise_norm(t: &TensorField, g: &MetricField) -> Result<TensorField> {
    t.grid().as_ref().eq(g.grid().as_ref()).then_some(()).ok_or_else(|| FlowError::Shape("grids differ".into()))?;
    let n = g.dim();
    let rank = t.valence().rank();
    let mut out = vec![0.0; t.grid().len()];
    let mut a = Vec::new();
    let mut b = vec![0.0; t.components()];
    for (x, o) in out.iter_mut().enumerate() {
        let gm = g.mat(x);
        let (gi, _) = linalg::inverse(&gm, n).ok_or(FlowError::SingularMetric { node: x })?;
        a.clear();
        a.extend_from_slice(t.at(x));
        for slot in 0..rank {
            let m = if slot < t.valence().upper { &gm } else { &gi };
            contract_slot(&a, rank, slot, m, n, &mut b);
            std::mem::swap(&mut a, &mut b);
        }
        *o = t.at(x).iter().zip(&a).map(|(p, q)| p * q).sum::<f64>().max(0.0).sqrt();
    }
    Ok(TensorField::from_raw(t.grid(), Valence::SCALAR, out))
}

/// `|h|_g` for a symmetric 2-tensor given `g^{-1}`.
pub fn norm_sym2(h: &Mat, ginv: &Mat, n: usize) -> f64 {
    let mut m = ZERO_MAT; // g^{-1} h
    for i in 0..n {
        for j in 0..n {
            m[i][j] = (0..n).map(|k| ginv[i][k] * h[k][j]).sum();
        }
    }
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += m[i][j] * m[j][i];
        }
    }
    s.max(0.0).sqrt()
}

/// `|T|_g` for a `(0,3)` tensor `T_{ijk}` given `g^{-1}`.
pub fn norm_03(t: &T3, ginv: &Mat, n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut up = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        for c in 0..n {
                            up += ginv[i][a] * ginv[j][b] * ginv[k][c] * t[a][b][c];
                        }
                    }
                }
                s += up * t[i][j][k];
            }
        }
    }
    s.max(0.0).sqrt()
}

/// `|T|_g` for a `(1,2)` tensor `T^k_{ij}` given `g` and `g^{-1}`.
pub fn norm_12(t: &T3, g: &Mat, ginv: &Mat, n: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                let mut f = 0.0;
                for c in 0..n {
                    for a in 0..n {
                        for b in 0..n {
                            f += g[k][c] * ginv[i][a] * ginv[j][b] * t[c][a][b];
                        }
                    }
                }
                s += f * t[k][i][j];
            }
        }
    }
    s.max(0.0).sqrt()
}

/// Covariant derivative `∇T`, derivative slot appended last.
pub fn covariant_derivative(t: &TensorField, geo: &MetricGeometry) -> Result<TensorField> {
    if *t.grid() != *geo.grid() {
        return Err(FlowError::Shape("tensor and metric live on different grids".into()));
    }
    Ok(covariant_derivative_from_partial(t, &gradient(t), geo))
}

/// [`covariant_derivative`] given the coordinate gradient of `t`.
pub fn covariant_derivative_from_partial(t: &TensorField, dt: &TensorField, geo: &MetricGeometry) -> TensorField {
    let n = geo.dim();
    let val = t.valence();
    let rank = val.rank();
    let nc = t.components();
    let mut out = dt.data().to_vec();
    // index digits of every component, most significant first
    let digits: Vec<Vec<usize>> = (0..nc)
        .map(|c| {
            let mut d = vec![0; rank];
            let mut r = c;
            for s in (0..rank).rev() {
                d[s] = r % n;
                r /= n;
            }
            d
        })
        .collect();
    let strides: Vec<usize> = (0..rank).map(|s| n.pow((rank - s - 1) as u32)).collect();
    for x in 0..geo.grid().len() {
        let tx = t.at(x);
        let gam = geo.gamma(x);
        let o = &mut out[x * nc * n..(x + 1) * nc * n];
        for (c, dig) in digits.iter().enumerate() {
            for k in 0..n {
                let mut acc = 0.0;
                for s in 0..rank {
                    let base = c - dig[s] * strides[s];
                    if s < val.upper {
                        for m in 0..n {
                            acc += gam[dig[s]][k][m] * tx[base + m * strides[s]];
                        }
                    } else {
                        for m in 0..n {
                            acc -= gam[m][k][dig[s]] * tx[base + m * strides[s]];
                        }
                    }
                }
                o[c * n + k] += acc;
            }
        }
    }
    TensorField::from_raw(geo.grid(), val.with_lower(1), out)
}

/// Node-local pieces shared by the second covariant derivative of a symmetric 2-tensor.
struct SecondOrder {
    /// `∇_k h_{ij}` as `[i][j][k]`.
    nabla: T3,
    /// `∂_l A_{ijk}` as `[i][j][k][l]`, `A_{ijk} = Γ^m_{ki} h_{mj} + Γ^m_{kj} h_{im}`.
    d_a: T4,
}

fn second_order_parts(h: &Mat, dh: &T3, gam: &T3, dgam: &T4, n: usize) -> SecondOrder {
    let mut nabla = ZERO_T3;
    let mut d_a = ZERO_T4;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let mut a = 0.0;
                for m in 0..n {
                    a += gam[m][k][i] * h[m][j] + gam[m][k][j] * h[i][m];
                }
                nabla[i][j][k] = dh[i][j][k] - a;
                for l in 0..n {
                    let mut s = 0.0;
                    for m in 0..n {
                        s += dgam[m][k][i][l] * h[m][j]
                            + gam[m][k][i] * dh[m][j][l]
                            + dgam[m][k][j][l] * h[i][m]
                            + gam[m][k][j] * dh[i][m][l];
                    }
                    d_a[i][j][k][l] = s;
                }
            }
        }
    }
    SecondOrder { nabla, d_a }
}

/// `∇_l ∇_k h_{ij}` as a (0,4) field `[i][j][k][l]` for a symmetric 2-tensor `h`.
pub fn covariant_hessian_sym2(h: &TensorField, geo: &MetricGeometry) -> Result<TensorField> {
    if h.valence() != Valence::SYM2 {
        return Err(FlowError::Shape(format!("expected a (0,2) field, got {}", h.valence())));
    }
    let n = geo.dim();
    let dh = gradient(h);
    let hh = hessian_with_gradient(h, &dh);
    let n4 = n.pow(4);
    let mut out = vec![0.0; geo.grid().len() * n4];
    for x in 0..geo.grid().len() {
        let hm = linalg::load_mat(h.at(x), n);
        let d = linalg::load_t3(dh.at(x), n);
        let dd = linalg::load_t4(hh.at(x), n);
        let gam = geo.gamma(x);
        let dgam = linalg::load_t4(geo.christoffel_derivative.at(x), n);
        let p = second_order_parts(&hm, &d, &gam, &dgam, n);
        let mut res = ZERO_T4;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let mut s = dd[i][j][k][l] - p.d_a[i][j][k][l];
                        for m in 0..n {
                            s -= gam[m][l][i] * p.nabla[m][j][k]
                                + gam[m][l][j] * p.nabla[i][m][k]
                                + gam[m][l][k] * p.nabla[i][j][m];
                        }
                        res[i][j][k][l] = s;
                    }
                }
            }
        }
        linalg::store_t4(&res, n, &mut out[x * n4..]);
    }
    Ok(TensorField::from_raw(geo.grid(), Valence::new(0, 4), out))
}

/// Rough Laplacian `g^{kl} ∇_l ∇_k h_{ij}` of a symmetric 2-tensor.
pub fn rough_laplacian(h: &TensorField, geo: &MetricGeometry) -> TensorField {
    let n = geo.dim();
    let dh = gradient(h);
    let hh = hessian_with_gradient(h, &dh);
    let n2 = n * n;
    let mut out = vec![0.0; geo.grid().len() * n2];
    for x in 0..geo.grid().len() {
        let hm = linalg::load_mat(h.at(x), n);
        let d = linalg::load_t3(dh.at(x), n);
        let dd = linalg::load_t4(hh.at(x), n);
        let gi = geo.ginv(x);
        let gam = geo.gamma(x);
        let dgam = linalg::load_t4(geo.christoffel_derivative.at(x), n);
        let p = second_order_parts(&hm, &d, &gam, &dgam, n);
        // Γ^m = g^{kl} Γ^m_{kl}
        let mut trace_gam = [0.0; 3];
        for m in 0..n {
            for k in 0..n {
                for l in 0..n {
                    trace_gam[m] += gi[k][l] * gam[m][k][l];
                }
            }
        }
        let mut res = ZERO_MAT;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..n {
                    for l in 0..n {
                        let w = gi[k][l];
                        if w == 0.0 {
                            continue;
                        }
                        let mut t = dd[i][j][k][l] - p.d_a[i][j][k][l];
                        for m in 0..n {
                            t -= gam[m][l][i] * p.nabla[m][j][k] + gam[m][l][j] * p.nabla[i][m][k];
                        }
                        s += w * t;
                    }
                }
                for m in 0..n {
                    s -= trace_gam[m] * p.nabla[i][j][m];
                }
                res[i][j] = s;
            }
        }
        linalg::store_mat(&res, n, &mut out[x * n2..]);
    }
    TensorField::from_raw(geo.grid(), Valence::SYM2, out).symmetrized()
}

/// Coordinate Hessian of a scalar field contracted with `g^{-1}` minus the connection term:
/// the Laplace–Beltrami operator.
pub fn scalar_laplacian(f: &TensorField, geo: &MetricGeometry) -> Result<TensorField> {
    if f.valence() != Valence::SCALAR {
        return Err(FlowError::Shape("scalar_laplacian needs a (0,0) field".into()));
    }
    let n = geo.dim();
    let d = gradient(f);
    let hh = hessian(f);
    let mut out = vec![0.0; geo.grid().len()];
    for (x, o) in out.iter_mut().enumerate() {
        let gi = geo.ginv(x);
        let gam = geo.gamma(x);
        let mut s = 0.0;
        for k in 0..n {
            for l in 0..n {
                let mut t = hh.at(x)[k * n + l];
                for m in 0..n {
                    t -= gam[m][k][l] * d.at(x)[m];
                }
                s += gi[k][l] * t;
            }
        }
        *o = s;
    }
    Ok(TensorField::from_raw(geo.grid(), Valence::SCALAR, out))
}
