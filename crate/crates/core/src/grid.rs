//! Periodic lattices on flat tori.

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};

/// Smallest resolution accepted on any axis.
pub const MIN_RESOLUTION: usize = 8;

/// Central difference stencil of even order `2m`, reaching `m` nodes either side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "usize", try_from = "usize")]
pub struct Stencil {
    order: usize,
}

impl Default for Stencil {
    fn default() -> Self {
        Stencil::SIXTH
    }
}

impl From<Stencil> for usize {
    fn from(s: Stencil) -> usize {
        s.order
    }
}

impl TryFrom<usize> for Stencil {
    type Error = FlowError;
    fn try_from(order: usize) -> Result<Self> {
        Stencil::from_order(order)
    }
}

/// `(m!)² / ((m − j)! (m + j)!)`, evaluated as a running product.
fn factorial_ratio(m: usize, j: usize) -> f64 {
    (1..=j).map(|i| (m + 1 - i) as f64 / (m + i) as f64).product()
}

impl Stencil {
    pub const FOURTH: Stencil = Stencil { order: 4 };
    pub const SIXTH: Stencil = Stencil { order: 6 };
    pub const EIGHTH: Stencil = Stencil { order: 8 };
    pub const MAX_ORDER: usize = 16;

    pub fn order(self) -> usize {
        self.order
    }

    pub fn from_order(order: usize) -> Result<Self> {
        if !(4..=Self::MAX_ORDER).contains(&order) || order % 2 == 1 {
            return Err(FlowError::Config(format!(
                "unsupported stencil order {order}; use an even order from 4 to {}",
                Self::MAX_ORDER
            )));
        }
        Ok(Stencil { order })
    }

    /// Half-width of the stencil in nodes.
    pub fn reach(self) -> usize {
        self.order / 2
    }

    /// Antisymmetric first-derivative weights for offsets 1..=reach (unit spacing).
    pub fn first(self) -> Vec<f64> {
        let m = self.reach();
        (1..=m).map(|j| sign(j) * factorial_ratio(m, j) / j as f64).collect()
    }

    /// Symmetric second-derivative weights: centre weight and offsets 1..=reach (unit spacing).
    pub fn second(self) -> (f64, Vec<f64>) {
        let m = self.reach();
        let w: Vec<f64> = (1..=m).map(|j| 2.0 * sign(j) * factorial_ratio(m, j) / (j * j) as f64).collect();
        (-2.0 * w.iter().sum::<f64>(), w)
    }

    /// Largest eigenvalue magnitude of the 1D second-difference operator at unit spacing.
    pub fn second_spectral_radius(self) -> f64 {
        let (c0, c) = self.second();
        // evaluated at the Nyquist mode, where every odd offset flips sign
        let mut s = -c0;
        for (k, w) in c.iter().enumerate() {
            s += 2.0 * w * sign(k + 1);
        }
        s
    }
}

fn sign(j: usize) -> f64 {
    if j % 2 == 1 {
        1.0
    } else {
        -1.0
    }
}

/// A periodic n-dimensional lattice, n in {2, 3}. Axis 0 varies slowest in node numbering.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    resolution: Vec<usize>,
    periods: Vec<f64>,
    spacing: Vec<f64>,
    strides: Vec<usize>,
    stencil: Stencil,
    len: usize,
}

impl Grid {
    pub fn new(dim: usize, resolution: &[usize], periods: &[f64]) -> Result<Self> {
        Self::with_stencil(dim, resolution, periods, Stencil::default())
    }

    pub fn with_stencil(dim: usize, resolution: &[usize], periods: &[f64], stencil: Stencil) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(FlowError::Config(format!("dimension must be 2 or 3, got {dim}")));
        }
        if resolution.len() != dim || periods.len() != dim {
            return Err(FlowError::Config(format!(
                "expected {dim} resolutions and periods, got {} and {}",
                resolution.len(),
                periods.len()
            )));
        }
        let need = MIN_RESOLUTION.max(2 * stencil.reach() + 1);
        if let Some(r) = resolution.iter().find(|&&r| r < need) {
            return Err(FlowError::Config(format!(
                "resolution {r} is below the stencil minimum {need}"
            )));
        }
        if let Some(p) = periods.iter().find(|&&p| !(p > 0.0 && p.is_finite())) {
            return Err(FlowError::Config(format!("period {p} must be positive and finite")));
        }
        let spacing = periods.iter().zip(resolution).map(|(p, &r)| p / r as f64).collect();
        let mut strides = vec![1; dim];
        for a in (0..dim - 1).rev() {
            strides[a] = strides[a + 1] * resolution[a + 1];
        }
        Ok(Grid {
            dim,
            resolution: resolution.to_vec(),
            periods: periods.to_vec(),
            spacing,
            strides,
            stencil,
            len: resolution.iter().product(),
        })
    }

    /// Same lattice with a different stencil order.
    pub fn reorder(&self, stencil: Stencil) -> Result<Grid> {
        Grid::with_stencil(self.dim, &self.resolution, &self.periods, stencil)
    }

    /// Same periods with every resolution multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Result<Grid> {
        let res: Vec<usize> = self.resolution.iter().map(|r| r * factor).collect();
        Grid::with_stencil(self.dim, &res, &self.periods, self.stencil)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }
    pub fn periods(&self) -> &[f64] {
        &self.periods
    }
    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }
    pub fn stencil(&self) -> Stencil {
        self.stencil
    }
    pub fn len(&self) -> usize {
        self.len
    }
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_spacing(&self) -> f64 {
        self.spacing.iter().cloned().fold(0.0, f64::max)
    }

    pub fn min_period(&self) -> f64 {
        self.periods.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Lattice coordinates of a node.
    pub fn coords(&self, node: usize) -> [usize; 3] {
        let mut c = [0; 3];
        let mut rem = node;
        for a in 0..self.dim {
            c[a] = rem / self.strides[a];
            rem %= self.strides[a];
        }
        c
    }

    pub fn node(&self, coords: &[usize]) -> usize {
        (0..self.dim).map(|a| (coords[a] % self.resolution[a]) * self.strides[a]).sum()
    }

    /// Node reached from `node` by an integer lattice displacement, wrapping on every axis.
    pub fn offset(&self, node: usize, delta: &[isize]) -> usize {
        let c = self.coords(node);
        let mut out = 0;
        for a in 0..self.dim {
            let r = self.resolution[a] as isize;
            let v = (c[a] as isize + delta[a]).rem_euclid(r) as usize;
            out += v * self.strides[a];
        }
        out
    }

    /// Physical position of a node in the fundamental domain.
    pub fn position(&self, node: usize) -> [f64; 3] {
        let c = self.coords(node);
        let mut x = [0.0; 3];
        for a in 0..self.dim {
            x[a] = c[a] as f64 * self.spacing[a];
        }
        x
    }

    /// Index deltas `shift[k][c]` such that the node at axis coordinate `c`
    /// moved by `k - reach` along `axis` is `node + shift[k][c]`.
    pub(crate) fn shift_table(&self, axis: usize, reach: usize) -> Vec<Vec<isize>> {
        let r = self.resolution[axis] as isize;
        let s = self.strides[axis] as isize;
        (0..=2 * reach)
            .map(|k| {
                let o = k as isize - reach as isize;
                (0..r).map(|c| ((c + o).rem_euclid(r) - c) * s).collect()
            })
            .collect()
    }

    /// Squared periodic distance between two nodes in the flat coordinate metric.
    pub fn flat_distance_sq(&self, a: usize, b: usize) -> f64 {
        let ca = self.coords(a);
        let cb = self.coords(b);
        let mut d2 = 0.0;
        for ax in 0..self.dim {
            let r = self.resolution[ax] as isize;
            let mut d = (ca[ax] as isize - cb[ax] as isize).rem_euclid(r);
            if d > r / 2 {
                d -= r;
            }
            let x = d as f64 * self.spacing[ax];
            d2 += x * x;
        }
        d2
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn sizes_and_spacing() {
        let g = Grid::new(2, &[64, 64], &[2.0 * PI, 2.0 * PI]).unwrap();
        assert_eq!(g.len(), 4096);
        assert_eq!(g.spacing()[0], 2.0 * PI / 64.0);
        let g3 = Grid::new(3, &[16, 16, 16], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(g3.len(), 4096);
        assert_eq!(g3.spacing(), &[1.0 / 16.0; 3]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(Grid::new(2, &[4, 64], &[1.0, 1.0]), Err(FlowError::Config(_))));
        assert!(matches!(Grid::new(2, &[8, 8], &[0.0, 1.0]), Err(FlowError::Config(_))));
        assert!(matches!(Grid::new(4, &[8; 4], &[1.0; 4]), Err(FlowError::Config(_))));
    }

    #[test]
    fn wraps() {
        let g = Grid::new(3, &[8, 9, 10], &[1.0; 3]).unwrap();
        for node in [0, 17, 719] {
            assert_eq!(g.node(&g.coords(node)), node);
        }
        assert_eq!(g.offset(0, &[-1, 0, 0]), g.node(&[7, 0, 0]));
        assert_eq!(g.offset(0, &[8, 9, 10]), 0);
    }

    #[test]
    fn nyquist_radius() {
        // 4th order: 16/3 at the Nyquist mode
        assert!((Stencil::FOURTH.second_spectral_radius() - 16.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn tabulated_weights() {
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-15);
        assert!(close(&Stencil::FOURTH.first(), &[2.0 / 3.0, -1.0 / 12.0]));
        assert!(close(&Stencil::SIXTH.first(), &[3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0]));
        assert!(close(&Stencil::EIGHTH.first(), &[4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0]));
        let (c0, w) = Stencil::SIXTH.second();
        assert!((c0 + 49.0 / 18.0).abs() < 1e-14);
        assert!(close(&w, &[3.0 / 2.0, -3.0 / 20.0, 1.0 / 90.0]));
        let (c0, w) = Stencil::EIGHTH.second();
        assert!((c0 + 205.0 / 72.0).abs() < 1e-14);
        assert!(close(&w, &[8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0]));
    }

    #[test]
    fn wide_stencils_need_room() {
        let st = Stencil::from_order(16).unwrap();
        assert!(Grid::with_stencil(2, &[16, 16], &[1.0, 1.0], st).is_err());
        assert!(Grid::with_stencil(2, &[17, 17], &[1.0, 1.0], st).is_ok());
        assert!(Stencil::from_order(5).is_err());
        assert!(Stencil::from_order(18).is_err());
    }
}
