//! The DeTurck operator `P_ḡ(g) = −2 Ric(g) − L_X g`, its linearization `L`, and the
//! quadratic remainder `Q[h] = ∇*S[h] + R[h]` with `P_ḡ(g + h) − P_ḡ(g) = Lh + Q[h]`.
//!
//! `X^k = g^{ij}(Γ̄^k_{ij} − Γ^k_{ij})`. The opposite sign convention `−2Ric + L_X g`
//! also appears in the literature; everything here uses the one above, under which the
//! decomposition closes (see [`verify_decomposition`]).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::derivative::{gradient, second_partial};
use crate::error::{FlowError, Result};
use crate::geometry::{christoffel, covariant_derivative, rough_laplacian, MetricGeometry};
use crate::linalg::{self, Mat, T3, T4, ZERO_MAT, ZERO_T3};
use crate::tensor::{MetricField, TensorField, Valence};

/// The forcing pair realizing `Q = R + ∇*S` at one instant.
#[derive(Clone, Debug, PartialEq)]
pub struct ForcingDecomposition {
    /// `(0,2)` part, symmetric.
    pub r_part: TensorField,
    /// `(1,2)` part `S^k_{ij}`, symmetric in the lower pair.
    pub s_part: TensorField,
}

impl ForcingDecomposition {
    pub fn zeros(grid: &Arc<crate::grid::Grid>) -> Self {
        ForcingDecomposition {
            r_part: TensorField::zeros(grid, Valence::SYM2),
            s_part: TensorField::zeros(grid, Valence::CONNECTION),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        ForcingDecomposition { r_part: self.r_part.scale(a), s_part: self.s_part.scale(a) }
    }

    pub fn axpy(&self, a: f64, other: &ForcingDecomposition) -> Result<Self> {
        Ok(ForcingDecomposition { r_part: self.r_part.axpy(a, &other.r_part)?, s_part: self.s_part.axpy(a, &other.s_part)? })
    }

    /// `r_part + ∇*s_part` with respect to `geo`.
    pub fn assemble(&self, geo: &MetricGeometry) -> Result<TensorField> {
        self.r_part.axpy(1.0, &divergence_of_s_with(&self.s_part, geo)?)
    }

    pub fn is_zero(&self) -> bool {
        self.r_part.data().iter().chain(self.s_part.data()).all(|&v| v == 0.0)
    }
}

/// `γ̄ = Γ̄ − Γ` and the derived quantities entering `L` and `Q`; absent when `ḡ = g`.
#[derive(Clone, Debug)]
pub struct GammaBarTerms {
    /// `γ̄^k_{ij}`.
    pub gamma_bar: TensorField,
    /// `∇_a γ̄^k_{ij}`, slot order `[k][i][j][a]`.
    pub nabla_gamma_bar: TensorField,
    /// `X^k = g^{ij} γ̄^k_{ij}`.
    pub x: TensorField,
    /// `∇_a X^k`, slot order `[k][a]`.
    pub nabla_x: TensorField,
}

/// Geometry of the base metric `g` plus, when `ḡ ≠ g`, the `γ̄` terms.
#[derive(Clone, Debug)]
pub struct DeturckContext {
    pub geometry: Arc<MetricGeometry>,
    pub gamma_bar: Option<GammaBarTerms>,
}

impl DeturckContext {
    pub fn new(g: &MetricField, g_bar: &MetricField) -> Result<Self> {
        let geo = Arc::new(MetricGeometry::new(g)?);
        Self::with_geometry(geo, g_bar)
    }

    /// Context for `ḡ = g`.
    pub fn diagonal(geometry: Arc<MetricGeometry>) -> Self {
        DeturckContext { geometry, gamma_bar: None }
    }

    pub fn with_geometry(geo: Arc<MetricGeometry>, g_bar: &MetricField) -> Result<Self> {
        if g_bar == &geo.metric {
            return Ok(Self::diagonal(geo));
        }
        let gam_bar = christoffel(g_bar)?;
        let gb = gam_bar.axpy(-1.0, &geo.christoffel)?;
        if gb.data().iter().all(|&v| v == 0.0) {
            return Ok(Self::diagonal(geo));
        }
        let x = contract_x(&gb, &geo);
        let nabla_gamma_bar = covariant_derivative(&gb, &geo)?;
        let nabla_x = covariant_derivative(&x, &geo)?;
        Ok(DeturckContext { geometry: geo, gamma_bar: Some(GammaBarTerms { gamma_bar: gb, nabla_gamma_bar, x, nabla_x }) })
    }

    pub fn metric(&self) -> &MetricField {
        &self.geometry.metric
    }
}

fn contract_x(gb: &TensorField, geo: &MetricGeometry) -> TensorField {
    let n = geo.dim();
    let mut out = vec![0.0; geo.grid().len() * n];
    for x in 0..geo.grid().len() {
        let gi = geo.ginv(x);
        let t = linalg::load_t3(gb.at(x), n);
        for k in 0..n {
            let mut s = 0.0;
            for i in 0..n {
                for j in 0..n {
                    s += gi[i][j] * t[k][i][j];
                }
            }
            out[x * n + k] = s;
        }
    }
    TensorField::from_raw(geo.grid(), Valence::VECTOR, out)
}

fn same_grid(a: &MetricField, b: &MetricField) -> Result<()> {
    if a.grid() != b.grid() && **a.grid() != **b.grid() {
        return Err(FlowError::Shape("metrics live on different grids".into()));
    }
    Ok(())
}

/// DeTurck vector field `X^k = g^{ij}(Γ̄^k_{ij} − Γ^k_{ij})`; exactly zero when `g = ḡ`.
pub fn deturck_vector_field(g: &MetricField, g_bar: &MetricField) -> Result<TensorField> {
    same_grid(g, g_bar)?;
    if g == g_bar {
        return Ok(TensorField::zeros(g.grid(), Valence::VECTOR));
    }
    let geo = MetricGeometry::new(g)?;
    let gb = christoffel(g_bar)?.axpy(-1.0, &geo.christoffel)?;
    Ok(contract_x(&gb, &geo))
}

/// `P_ḡ(g) = −2 Ric(g) − (X_{i,j} + X_{j,i})`.
pub fn ricci_deturck_operator(g: &MetricField, g_bar: &MetricField) -> Result<TensorField> {
    same_grid(g, g_bar)?;
    let geo = MetricGeometry::new(g)?;
    if g == g_bar {
        return Ok(deturck_operator_with(&geo, None));
    }
    let gam_bar = christoffel(g_bar)?;
    Ok(deturck_operator_with(&geo, Some(&gam_bar)))
}

/// [`ricci_deturck_operator`] given the geometry of `g` and the Christoffel symbols of `ḡ`
/// (`None` meaning `ḡ = g`).
pub fn deturck_operator_with(geo: &MetricGeometry, christoffel_bar: Option<&TensorField>) -> TensorField {
    let minus_two_ric = geo.ricci.scale(-2.0);
    let Some(gam_bar) = christoffel_bar else {
        return minus_two_ric;
    };
    let n = geo.dim();
    let len = geo.grid().len();
    // X_i = g_{ik} X^k
    let mut xl = vec![0.0; len * n];
    for x in 0..len {
        let gi = geo.ginv(x);
        let g = geo.metric.mat(x);
        let gam = geo.gamma(x);
        let gb = linalg::load_t3(gam_bar.at(x), n);
        let mut up = [0.0; 3];
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    up[k] += gi[i][j] * (gb[k][i][j] - gam[k][i][j]);
                }
            }
        }
        for i in 0..n {
            xl[x * n + i] = (0..n).map(|k| g[i][k] * up[k]).sum();
        }
    }
    let xf = TensorField::from_raw(geo.grid(), Valence::COVECTOR, xl);
    let dx = gradient(&xf);
    let mut out = minus_two_ric.into_data();
    for x in 0..len {
        let gam = geo.gamma(x);
        let xv = xf.at(x);
        let d = dx.at(x);
        let mut cov = ZERO_MAT; // X_{i,j}
        for i in 0..n {
            for j in 0..n {
                cov[i][j] = d[i * n + j] - (0..n).map(|m| gam[m][j][i] * xv[m]).sum::<f64>();
            }
        }
        for i in 0..n {
            for j in 0..n {
                out[x * n * n + i * n + j] -= cov[i][j] + cov[j][i];
            }
        }
    }
    TensorField::from_raw(geo.grid(), Valence::SYM2, out)
}

/// `Δ_L h = Δh + 2R_{ipqj}h^{pq} − R_i^p h_{pj} − R_j^p h_{pi}`.
pub fn lichnerowicz_with(h: &TensorField, geo: &MetricGeometry) -> TensorField {
    let n = geo.dim();
    if geo.metric.is_exactly_flat() {
        let mut out = second_partial(h, 0).expect("axis in range");
        for a in 1..n {
            out = out.axpy(1.0, &second_partial(h, a).expect("axis in range")).expect("same shape");
        }
        return out;
    }
    let mut out = rough_laplacian(h, geo).into_data();
    for x in 0..geo.grid().len() {
        let g = geo.metric.mat(x);
        let gi = geo.ginv(x);
        let hm = linalg::load_mat(h.at(x), n);
        let hup = raise_both(&hm, &gi, n);
        let rm = linalg::load_t4(geo.riemann.at(x), n);
        let rc = linalg::load_mat(geo.ricci.at(x), n);
        let mut ric_mixed = ZERO_MAT; // R_i^p
        for i in 0..n {
            for p in 0..n {
                ric_mixed[i][p] = (0..n).map(|a| rc[i][a] * gi[a][p]).sum();
            }
        }
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..n {
                    for q in 0..n {
                        let mut r_ipqj = 0.0;
                        for m in 0..n {
                            r_ipqj += g[j][m] * rm[m][i][p][q];
                        }
                        s += 2.0 * r_ipqj * hup[p][q];
                    }
                    s -= ric_mixed[i][p] * hm[p][j] + ric_mixed[j][p] * hm[p][i];
                }
                out[x * n * n + i * n + j] += s;
            }
        }
    }
    TensorField::from_raw(geo.grid(), Valence::SYM2, out).symmetrized()
}

fn raise_both(h: &Mat, gi: &Mat, n: usize) -> Mat {
    let mut t = ZERO_MAT;
    for p in 0..n {
        for b in 0..n {
            t[p][b] = (0..n).map(|a| gi[p][a] * h[a][b]).sum();
        }
    }
    let mut out = ZERO_MAT;
    for p in 0..n {
        for q in 0..n {
            out[p][q] = (0..n).map(|b| t[p][b] * gi[b][q]).sum();
        }
    }
    out
}

/// `Lh = Δ_L h − L_X h + L_{h∘γ̄} g`.
pub fn linearized_apply(h: &TensorField, g: &MetricField, g_bar: &MetricField) -> Result<TensorField> {
    same_grid(g, g_bar)?;
    linearized_apply_with(h, &DeturckContext::new(g, g_bar)?)
}

pub fn linearized_apply_with(h: &TensorField, ctx: &DeturckContext) -> Result<TensorField> {
    if h.valence() != Valence::SYM2 {
        return Err(FlowError::Shape(format!("L acts on (0,2) fields, got {}", h.valence())));
    }
    let geo = &ctx.geometry;
    let lich = lichnerowicz_with(h, geo);
    let Some(gb) = &ctx.gamma_bar else {
        return Ok(lich);
    };
    let n = geo.dim();
    let nh = covariant_derivative(h, geo)?;
    let mut out = lich.into_data();
    for x in 0..geo.grid().len() {
        let g = geo.metric.mat(x);
        let gi = geo.ginv(x);
        let hm = linalg::load_mat(h.at(x), n);
        let hup = raise_both(&hm, &gi, n);
        let d = linalg::load_t3(nh.at(x), n);
        let gam = linalg::load_t3(gb.gamma_bar.at(x), n);
        let ngam = linalg::load_t4(gb.nabla_gamma_bar.at(x), n);
        let xv = gb.x.at(x);
        let nx = linalg::load_mat(gb.nabla_x.at(x), n);
        // ∇_c h^{pq}
        let mut dup = ZERO_T3;
        for c in 0..n {
            let slice = {
                let mut m = ZERO_MAT;
                for a in 0..n {
                    for b in 0..n {
                        m[a][b] = d[a][b][c];
                    }
                }
                raise_both(&m, &gi, n)
            };
            for p in 0..n {
                for q in 0..n {
                    dup[p][q][c] = slice[p][q];
                }
            }
        }
        // dv[i][j] = ∇_j V_i, V_i = h^{pq} g_{ik} γ̄^k_{pq}
        let mut dv = ZERO_MAT;
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..n {
                    for q in 0..n {
                        for k in 0..n {
                            s += g[i][k] * (dup[p][q][j] * gam[k][p][q] + hup[p][q] * ngam[k][p][q][j]);
                        }
                    }
                }
                dv[i][j] = s;
            }
        }
        for i in 0..n {
            for j in 0..n {
                let mut s = dv[i][j] + dv[j][i];
                for k in 0..n {
                    s -= xv[k] * d[i][j][k] + hm[k][j] * nx[k][i] + hm[i][k] * nx[k][j];
                }
                out[x * n * n + i * n + j] += s;
            }
        }
    }
    Ok(TensorField::from_raw(geo.grid(), Valence::SYM2, out).symmetrized())
}

/// `(∇*S)_{ij} = −∇_k S^k_{ij}`.
pub fn divergence_of_s(s: &TensorField, g: &MetricField) -> Result<TensorField> {
    divergence_of_s_with(s, &MetricGeometry::new(g)?)
}

pub fn divergence_of_s_with(s: &TensorField, geo: &MetricGeometry) -> Result<TensorField> {
    if s.valence() != Valence::CONNECTION {
        return Err(FlowError::Shape(format!("∇* acts on (1,2) fields, got {}", s.valence())));
    }
    if s.data().iter().all(|&v| v == 0.0) {
        return Ok(TensorField::zeros(geo.grid(), Valence::SYM2));
    }
    let n = geo.dim();
    let ns = covariant_derivative(s, geo)?;
    let mut out = vec![0.0; geo.grid().len() * n * n];
    for x in 0..geo.grid().len() {
        let t = linalg::load_t4(ns.at(x), n);
        for i in 0..n {
            for j in 0..n {
                out[x * n * n + i * n + j] = -(0..n).map(|k| t[k][i][j][k]).sum::<f64>();
            }
        }
    }
    Ok(TensorField::from_raw(geo.grid(), Valence::SYM2, out).symmetrized())
}

/// `S[h]` and `R[h]` with every term of the decomposition.
pub fn quadratic_terms(h: &TensorField, g: &MetricField, g_bar: &MetricField) -> Result<ForcingDecomposition> {
    same_grid(g, g_bar)?;
    quadratic_terms_with(h, &DeturckContext::new(g, g_bar)?)
}

/// Node-local inputs to the quadratic terms.
struct NodeData<'a> {
    n: usize,
    gi: Mat,
    ghat: Mat,
    ghi: Mat,
    h: Mat,
    /// `∇_c h_{ab}` as `[a][b][c]`
    nh: T3,
    u: Mat,
    /// `∇_i u^{kl}` as `[k][l][i]`
    nu: T3,
    /// `R^s_{pij}`
    riem: &'a T4,
    gamma_bar: Option<(T3, T4)>,
}

fn quadratic_node(d: &NodeData) -> (T3, Mat) {
    let n = d.n;
    let mut bg = ZERO_T3; // 𝛄_{ijl}
    for i in 0..n {
        for j in 0..n {
            for l in 0..n {
                bg[i][j][l] = 0.5 * (d.nh[i][l][j] + d.nh[j][l][i] - d.nh[i][j][l]);
            }
        }
    }
    let mut b = [0.0; 3];
    for l in 0..n {
        for i in 0..n {
            for j in 0..n {
                b[l] += d.gi[i][j] * bg[i][j][l];
            }
        }
    }
    let mut vartheta = [0.0; 3];
    for l in 0..n {
        vartheta[l] = (0..n).map(|k| d.gi[l][k] * b[k]).sum();
    }
    let mut gh = ZERO_T3; // γ̂^k_{ij}
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                gh[k][i][j] = (0..n).map(|l| d.ghi[k][l] * bg[i][j][l]).sum();
            }
        }
    }
    let mut s = ZERO_T3;
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                s[k][i][j] = -(0..n).map(|l| d.u[k][l] * d.nh[i][j][l]).sum::<f64>();
            }
        }
    }

    // γ̄-dependent pieces
    let mut w = gh; // W^k_{pq} = γ̂^k_{pq} + g^{lm} h_{qm} γ̄^k_{pl}
    let mut dhg = [[[[0.0; 3]; 3]; 3]; 3]; // g^{lm}(h_{qm}γ̄^k_{pl})_{,i} as [k][p][q][i]
    let mut hg = [0.0; 3]; // (h∘γ̄)^k
    let mut tt = ZERO_MAT; // T^k_i = g^{pq}g^{ms}(h_{sq}γ̄^k_{mp})_{,i} as [k][i]
    if let Some((gam, ngam)) = &d.gamma_bar {
        let hup = raise_both(&d.h, &d.gi, n);
        // h_q^l = g^{lm} h_{qm}
        let mut hmix = ZERO_MAT; // [q][l]
        for q in 0..n {
            for l in 0..n {
                hmix[q][l] = (0..n).map(|m| d.gi[l][m] * d.h[q][m]).sum();
            }
        }
        for k in 0..n {
            for p in 0..n {
                for q in 0..n {
                    w[k][p][q] += (0..n).map(|l| hmix[q][l] * gam[k][p][l]).sum::<f64>();
                    for i in 0..n {
                        let mut acc = 0.0;
                        for l in 0..n {
                            for m in 0..n {
                                acc += d.gi[l][m] * (d.nh[q][m][i] * gam[k][p][l] + d.h[q][m] * ngam[k][p][l][i]);
                            }
                        }
                        dhg[k][p][q][i] = acc;
                    }
                }
            }
            for i in 0..n {
                for j in 0..n {
                    hg[k] += hup[i][j] * gam[k][i][j];
                }
            }
            for i in 0..n {
                let mut acc = 0.0;
                for p in 0..n {
                    for q in 0..n {
                        for m in 0..n {
                            for s_ in 0..n {
                                let c = d.gi[p][q] * d.gi[m][s_];
                                if c != 0.0 {
                                    acc += c * (d.nh[s_][q][i] * gam[k][m][p] + d.h[s_][q] * ngam[k][m][p][i]);
                                }
                            }
                        }
                    }
                }
                tt[k][i] = acc;
            }
        }
    }

    let mut r = ZERO_MAT;
    // −u^{qp}_{,q} h_{ij,p}
    let mut div_u = [0.0; 3];
    for p in 0..n {
        div_u[p] = (0..n).map(|q| d.nu[q][p][q]).sum();
    }
    // A_i^k as [i][k]
    let mut a = ZERO_MAT;
    for i in 0..n {
        for k in 0..n {
            let mut acc = 0.0;
            for l in 0..n {
                acc += d.nu[k][l][i] * b[l];
            }
            for p in 0..n {
                for q in 0..n {
                    acc += d.nu[p][q][i] * w[k][p][q] + d.u[p][q] * dhg[k][p][q][i];
                    for l in 0..n {
                        acc += d.u[p][q] * d.nu[k][l][i] * bg[p][q][l];
                    }
                }
            }
            a[i][k] = acc;
        }
    }
    // coefficient of h_{ij,k} in II
    let mut c = [0.0; 3];
    for k in 0..n {
        let mut acc = vartheta[k] + hg[k];
        for l in 0..n {
            acc += d.u[k][l] * b[l];
        }
        for p in 0..n {
            for q in 0..n {
                acc += d.u[p][q] * w[k][p][q];
            }
        }
        c[k] = acc;
    }
    for i in 0..n {
        for j in 0..n {
            let mut v = 0.0;
            for p in 0..n {
                v -= div_u[p] * d.nh[i][j][p];
            }
            // I
            let mut t1 = 0.0;
            for l in 0..n {
                for q in 0..n {
                    t1 += d.nu[l][q][l] * bg[i][j][q] - d.nu[l][q][j] * bg[i][l][q];
                }
            }
            v -= 2.0 * t1;
            for l in 0..n {
                for p in 0..n {
                    v += -2.0 * gh[l][l][p] * gh[p][i][j] + 2.0 * gh[l][j][p] * gh[p][i][l];
                }
            }
            // II
            for k in 0..n {
                v += a[i][k] * d.ghat[k][j] + a[j][k] * d.ghat[k][i];
                v += c[k] * d.nh[i][j][k];
                v += tt[k][i] * d.h[k][j] + tt[k][j] * d.h[k][i];
            }
            // III
            let rm = d.riem;
            for p in 0..n {
                for q in 0..n {
                    let upq = d.u[p][q];
                    if upq == 0.0 {
                        continue;
                    }
                    let mut acc = 0.0;
                    for s_ in 0..n {
                        acc += rm[s_][p][j][q] * d.h[s_][i]
                            + rm[s_][p][j][i] * d.h[s_][q]
                            + rm[s_][p][i][q] * d.h[s_][j]
                            + rm[s_][p][i][j] * d.h[s_][q]
                            + 0.5 * (rm[s_][i][j][p] * d.h[s_][q] + rm[s_][i][j][q] * d.h[s_][p]);
                    }
                    v += upq * acc;
                }
            }
            r[i][j] = v;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let m = 0.5 * (r[i][j] + r[j][i]);
            r[i][j] = m;
            r[j][i] = m;
        }
    }
    (s, r)
}

/// `u^{ij} = ĝ^{ij} − g^{ij}` by exact nodal inversion; errors when `g + h` is not positive definite.
pub fn inverse_difference(h: &TensorField, geo: &MetricGeometry) -> Result<(TensorField, Vec<Mat>)> {
    let n = geo.dim();
    let mut u = vec![0.0; geo.grid().len() * n * n];
    let mut ghi_all = Vec::with_capacity(geo.grid().len());
    for x in 0..geo.grid().len() {
        let g = geo.metric.mat(x);
        let hm = linalg::load_mat(h.at(x), n);
        let mut ghat = ZERO_MAT;
        for i in 0..n {
            for j in 0..n {
                ghat[i][j] = g[i][j] + hm[i][j];
            }
        }
        let lam = linalg::min_eigenvalue(&ghat, n);
        if !(lam > 0.0) {
            return Err(FlowError::NotPositiveDefinite { node: x, eigenvalue: lam });
        }
        let (ghi, _) = linalg::inverse(&ghat, n).ok_or(FlowError::SingularMetric { node: x })?;
        let gi = geo.ginv(x);
        for i in 0..n {
            for j in 0..n {
                u[x * n * n + i * n + j] = ghi[i][j] - gi[i][j];
            }
        }
        ghi_all.push(ghi);
    }
    Ok((TensorField::from_raw(geo.grid(), Valence::INVERSE, u), ghi_all))
}

pub fn quadratic_terms_with(h: &TensorField, ctx: &DeturckContext) -> Result<ForcingDecomposition> {
    if h.valence() != Valence::SYM2 {
        return Err(FlowError::Shape(format!("Q acts on (0,2) fields, got {}", h.valence())));
    }
    let geo = &ctx.geometry;
    let grid = geo.grid();
    if h.data().iter().all(|&v| v == 0.0) {
        return Ok(ForcingDecomposition::zeros(grid));
    }
    let n = geo.dim();
    let (u, ghi_all) = inverse_difference(h, geo)?;
    let nh = covariant_derivative(h, geo)?;
    let nu = covariant_derivative(&u, geo)?;
    let mut s_out = vec![0.0; grid.len() * n * n * n];
    let mut r_out = vec![0.0; grid.len() * n * n];
    for x in 0..grid.len() {
        let g = geo.metric.mat(x);
        let hm = linalg::load_mat(h.at(x), n);
        let mut ghat = ZERO_MAT;
        for i in 0..n {
            for j in 0..n {
                ghat[i][j] = g[i][j] + hm[i][j];
            }
        }
        let riem = linalg::load_t4(geo.riemann.at(x), n);
        let gamma_bar = ctx.gamma_bar.as_ref().map(|t| {
            (linalg::load_t3(t.gamma_bar.at(x), n), linalg::load_t4(t.nabla_gamma_bar.at(x), n))
        });
        let data = NodeData {
            n,
            gi: geo.ginv(x),
            ghat,
            ghi: ghi_all[x],
            h: hm,
            nh: linalg::load_t3(nh.at(x), n),
            u: linalg::load_mat(u.at(x), n),
            nu: linalg::load_t3(nu.at(x), n),
            riem: &riem,
            gamma_bar,
        };
        let (s, r) = quadratic_node(&data);
        linalg::store_t3(&s, n, &mut s_out[x * n * n * n..]);
        linalg::store_mat(&r, n, &mut r_out[x * n * n..]);
    }
    let fd = ForcingDecomposition {
        r_part: TensorField::from_raw(grid, Valence::SYM2, r_out),
        s_part: TensorField::from_raw(grid, Valence::CONNECTION, s_out),
    };
    fd.r_part.check_finite("quadratic_terms")?;
    fd.s_part.check_finite("quadratic_terms")?;
    Ok(fd)
}

/// `Q[h] = ∇*S[h] + R[h]` as one field.
pub fn quadratic_remainder_with(h: &TensorField, ctx: &DeturckContext) -> Result<TensorField> {
    quadratic_terms_with(h, ctx)?.assemble(&ctx.geometry)
}

/// Every intermediate tensor of the Christoffel-difference calculus at one instant.
#[derive(Clone, Debug)]
pub struct ChristoffelDeltaBundle {
    pub gamma_bar: TensorField,
    /// `𝛄_{ijl} = ½(h_{il,j} + h_{jl,i} − h_{ij,l})`.
    pub bold_gamma: TensorField,
    pub b: TensorField,
    pub vartheta: TensorField,
    /// `γ̂^k_{ij} = ĝ^{kl} 𝛄_{ijl}`.
    pub gamma_hat: TensorField,
    pub u: TensorField,
    /// `G^k = u^{kl}B_l + u^{ij}(γ̂^k_{ij} + g^{lq}h_{jq}γ̄^k_{il})`.
    pub g_vec: TensorField,
    /// `Y = X̂ − X = −ϑ − h∘γ̄ − G`.
    pub y: TensorField,
}

pub fn christoffel_delta_bundle(g: &MetricField, g_hat: &MetricField, g_bar: &MetricField) -> Result<ChristoffelDeltaBundle> {
    same_grid(g, g_hat)?;
    same_grid(g, g_bar)?;
    let geo = MetricGeometry::new(g)?;
    let n = geo.dim();
    let grid = geo.grid().clone();
    let h = g_hat.field().axpy(-1.0, g.field())?;
    let gb = christoffel(g_bar)?.axpy(-1.0, &geo.christoffel)?;
    let (u, ghi_all) = inverse_difference(&h, &geo)?;
    let nh = covariant_derivative(&h, &geo)?;
    let len = grid.len();
    let (mut bold, mut bv, mut th, mut gh_out, mut gv, mut yv) =
        (vec![0.0; len * n * n * n], vec![0.0; len * n], vec![0.0; len * n], vec![0.0; len * n * n * n], vec![0.0; len * n], vec![0.0; len * n]);
    for x in 0..len {
        let gi = geo.ginv(x);
        let d = linalg::load_t3(nh.at(x), n);
        let um = linalg::load_mat(u.at(x), n);
        let hm = linalg::load_mat(h.at(x), n);
        let gam = linalg::load_t3(gb.at(x), n);
        let ghi = ghi_all[x];
        let mut bg = ZERO_T3;
        for i in 0..n {
            for j in 0..n {
                for l in 0..n {
                    bg[i][j][l] = 0.5 * (d[i][l][j] + d[j][l][i] - d[i][j][l]);
                }
            }
        }
        let mut b = [0.0; 3];
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    b[l] += gi[i][j] * bg[i][j][l];
                }
            }
        }
        let mut ghat = ZERO_T3;
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    ghat[k][i][j] = (0..n).map(|l| ghi[k][l] * bg[i][j][l]).sum();
                }
            }
        }
        let hup = raise_both(&hm, &gi, n);
        for k in 0..n {
            let theta: f64 = (0..n).map(|l| gi[k][l] * b[l]).sum();
            let mut gk: f64 = (0..n).map(|l| um[k][l] * b[l]).sum();
            let mut hg = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let mut t = ghat[k][i][j];
                    for l in 0..n {
                        for q in 0..n {
                            t += gi[l][q] * hm[j][q] * gam[k][i][l];
                        }
                    }
                    gk += um[i][j] * t;
                    hg += hup[i][j] * gam[k][i][j];
                }
            }
            bv[x * n + k] = b[k];
            th[x * n + k] = theta;
            gv[x * n + k] = gk;
            yv[x * n + k] = -theta - hg - gk;
        }
        linalg::store_t3(&bg, n, &mut bold[x * n * n * n..]);
        linalg::store_t3(&ghat, n, &mut gh_out[x * n * n * n..]);
    }
    Ok(ChristoffelDeltaBundle {
        gamma_bar: gb,
        bold_gamma: TensorField::from_raw(&grid, Valence::new(0, 3), bold),
        b: TensorField::from_raw(&grid, Valence::COVECTOR, bv),
        vartheta: TensorField::from_raw(&grid, Valence::VECTOR, th),
        gamma_hat: TensorField::from_raw(&grid, Valence::CONNECTION, gh_out),
        u,
        g_vec: TensorField::from_raw(&grid, Valence::VECTOR, gv),
        y: TensorField::from_raw(&grid, Valence::VECTOR, yv),
    })
}

/// Outcome of comparing `P(ĝ) − P(g)` against `Lh + ∇*S + R`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DecompositionReport {
    pub sup_residual: f64,
    pub l2_residual: f64,
    pub max_lhs: f64,
    /// `sup_residual / max_lhs`, or 0 when both vanish.
    pub relative_residual: f64,
    pub max_linear: f64,
    pub max_divergence: f64,
    pub max_r_part: f64,
    pub max_s_part: f64,
}

/// Residual of `P_ḡ(ĝ) − P_ḡ(g) = Lh + Q[h]`, `h = ĝ − g`, with the two sides computed independently.
pub fn verify_decomposition(g: &MetricField, g_hat: &MetricField, g_bar: &MetricField) -> Result<DecompositionReport> {
    same_grid(g, g_hat)?;
    same_grid(g, g_bar)?;
    let lhs = ricci_deturck_operator(g_hat, g_bar)?.axpy(-1.0, &ricci_deturck_operator(g, g_bar)?)?;
    let h = g_hat.field().axpy(-1.0, g.field())?;
    let ctx = DeturckContext::new(g, g_bar)?;
    let lin = linearized_apply_with(&h, &ctx)?;
    let q = quadratic_terms_with(&h, &ctx)?;
    let div = divergence_of_s_with(&q.s_part, &ctx.geometry)?;
    let rhs = lin.axpy(1.0, &div)?.axpy(1.0, &q.r_part)?;
    let res = lhs.axpy(-1.0, &rhs)?;
    let sup = res.max_abs();
    let l2 = (res.data().iter().map(|v| v * v).sum::<f64>() * g.grid().cell_volume()).sqrt();
    let max_lhs = lhs.max_abs();
    Ok(DecompositionReport {
        sup_residual: sup,
        l2_residual: l2,
        max_lhs,
        relative_residual: if max_lhs > 0.0 { sup / max_lhs } else if sup == 0.0 { 0.0 } else { f64::INFINITY },
        max_linear: lin.max_abs(),
        max_divergence: div.max_abs(),
        max_r_part: q.r_part.max_abs(),
        max_s_part: q.s_part.max_abs(),
    })
}
