//! Fixed-size per-node linear algebra for n <= 3.

pub type Vec3 = [f64; 3];
pub type Mat = [[f64; 3]; 3];
pub type T3 = [[[f64; 3]; 3]; 3];
pub type T4 = [[[[f64; 3]; 3]; 3]; 3];

pub const ZERO_MAT: Mat = [[0.0; 3]; 3];
pub const ZERO_T3: T3 = [[[0.0; 3]; 3]; 3];
pub const ZERO_T4: T4 = [[[[0.0; 3]; 3]; 3]; 3];

pub fn load_vec(s: &[f64], n: usize) -> Vec3 {
    let mut v = [0.0; 3];
    v[..n].copy_from_slice(&s[..n]);
    v
}

pub fn load_mat(s: &[f64], n: usize) -> Mat {
    let mut m = ZERO_MAT;
    for i in 0..n {
        for j in 0..n {
            m[i][j] = s[i * n + j];
        }
    }
    m
}

pub fn load_t3(s: &[f64], n: usize) -> T3 {
    let mut t = ZERO_T3;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                t[i][j][k] = s[(i * n + j) * n + k];
            }
        }
    }
    t
}

pub fn load_t4(s: &[f64], n: usize) -> T4 {
    let mut t = ZERO_T4;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    t[i][j][k][l] = s[((i * n + j) * n + k) * n + l];
                }
            }
        }
    }
    t
}

pub fn store_vec(v: &Vec3, n: usize, out: &mut [f64]) {
    out[..n].copy_from_slice(&v[..n]);
}

pub fn store_mat(m: &Mat, n: usize, out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = m[i][j];
        }
    }
}

pub fn store_t3(t: &T3, n: usize, out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out[(i * n + j) * n + k] = t[i][j][k];
            }
        }
    }
}

pub fn store_t4(t: &T4, n: usize, out: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                for l in 0..n {
                    out[((i * n + j) * n + k) * n + l] = t[i][j][k][l];
                }
            }
        }
    }
}

pub fn det(m: &Mat, n: usize) -> f64 {
    if n == 2 {
        m[0][0] * m[1][1] - m[0][1] * m[1][0]
    } else {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }
}

/// Inverse by cofactors; `None` when the determinant is not a usable nonzero number.
pub fn inverse(m: &Mat, n: usize) -> Option<(Mat, f64)> {
    let d = det(m, n);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let mut inv = ZERO_MAT;
    if n == 2 {
        inv[0][0] = m[1][1] / d;
        inv[1][1] = m[0][0] / d;
        inv[0][1] = -m[0][1] / d;
        inv[1][0] = -m[1][0] / d;
    } else {
        for i in 0..3 {
            for j in 0..3 {
                let (a, b) = ((j + 1) % 3, (j + 2) % 3);
                let (c, e) = ((i + 1) % 3, (i + 2) % 3);
                inv[i][j] = (m[a][c] * m[b][e] - m[a][e] * m[b][c]) / d;
            }
        }
    }
    Some((inv, d))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &Mat, n: usize) -> f64 {
    sym_eigenvalues(m, n)[0]
}

/// Eigenvalues of a symmetric matrix in ascending order (unused slots are +inf).
pub fn sym_eigenvalues(m: &Mat, n: usize) -> [f64; 3] {
    if n == 2 {
        let tr = 0.5 * (m[0][0] + m[1][1]);
        let diff = 0.5 * (m[0][0] - m[1][1]);
        let r = (diff * diff + m[0][1] * m[1][0]).max(0.0).sqrt();
        return [tr - r, tr + r, f64::INFINITY];
    }
    let p1 = m[0][1] * m[0][1] + m[0][2] * m[0][2] + m[1][2] * m[1][2];
    let q = (m[0][0] + m[1][1] + m[2][2]) / 3.0;
    if p1 == 0.0 {
        let mut d = [m[0][0], m[1][1], m[2][2]];
        d.sort_by(|a, b| a.total_cmp(b));
        return d;
    }
    let p2 = (m[0][0] - q).powi(2) + (m[1][1] - q).powi(2) + (m[2][2] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let mut b = ZERO_MAT;
    for i in 0..3 {
        for j in 0..3 {
            b[i][j] = (m[i][j] - if i == j { q } else { 0.0 }) / p;
        }
    }
    let r = (det(&b, 3) / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    [e3, e2, e1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_3x3() {
        let m = [[2.0, 0.3, 0.1], [0.3, 1.5, -0.2], [0.1, -0.2, 1.1]];
        let (inv, _) = inverse(&m, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| m[i][k] * inv[k][j]).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn eigen_3x3() {
        let m = [[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]];
        let e = sym_eigenvalues(&m, 3);
        assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12 && (e[2] - 5.0).abs() < 1e-12);
        let m2 = [[1.0, 2.0, 0.0], [2.0, 1.0, 0.0], [0.0; 3]];
        assert!((min_eigenvalue(&m2, 2) + 1.0).abs() < 1e-14);
    }
}
