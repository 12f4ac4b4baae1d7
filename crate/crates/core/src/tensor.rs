//! Node-major tensor fields and metrics.

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, FlowError, Result};
use crate::grid::Grid;
use crate::linalg::{self, Mat};

/// Contravariant and covariant ranks `(p, q)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Valence {
    pub upper: usize,
    pub lower: usize,
}

impl Valence {
    pub const SCALAR: Valence = Valence { upper: 0, lower: 0 };
    pub const VECTOR: Valence = Valence { upper: 1, lower: 0 };
    pub const COVECTOR: Valence = Valence { upper: 0, lower: 1 };
    pub const SYM2: Valence = Valence { upper: 0, lower: 2 };
    pub const INVERSE: Valence = Valence { upper: 2, lower: 0 };
    pub const CONNECTION: Valence = Valence { upper: 1, lower: 2 };

    pub const fn new(upper: usize, lower: usize) -> Self {
        Valence { upper, lower }
    }

    pub fn rank(self) -> usize {
        self.upper + self.lower
    }

    pub fn components(self, dim: usize) -> usize {
        dim.pow(self.rank() as u32)
    }

    /// One more covariant slot, appended last.
    pub fn with_lower(self, extra: usize) -> Self {
        Valence { upper: self.upper, lower: self.lower + extra }
    }
}

impl fmt::Display for Valence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.upper, self.lower)
    }
}

/// Values of a `(p, q)` tensor at every node of a grid at one instant.
///
/// Storage is node-major: component `c` of node `x` lives at `x * n^(p+q) + c`,
/// with component multi-indices flattened row-major, upper slots first.
#[derive(Clone, Debug)]
pub struct TensorField {
    grid: Arc<Grid>,
    valence: Valence,
    data: Vec<f64>,
    time: Option<f64>,
}

impl PartialEq for TensorField {
    fn eq(&self, other: &Self) -> bool {
        self.valence == other.valence && *self.grid == *other.grid && self.data == other.data && self.time == other.time
    }
}

impl TensorField {
    pub fn zeros(grid: &Arc<Grid>, valence: Valence) -> Self {
        let len = grid.len() * valence.components(grid.dim());
        TensorField { grid: grid.clone(), valence, data: vec![0.0; len], time: None }
    }

    pub fn from_vec(grid: &Arc<Grid>, valence: Valence, data: Vec<f64>) -> Result<Self> {
        let len = grid.len() * valence.components(grid.dim());
        if data.len() != len {
            return Err(FlowError::Shape(format!(
                "valence {valence} on {} nodes needs {len} values, got {}",
                grid.len(),
                data.len()
            )));
        }
        ensure_finite(&data, "TensorField::from_vec")?;
        Ok(TensorField { grid: grid.clone(), valence, data, time: None })
    }

    pub(crate) fn from_raw(grid: &Arc<Grid>, valence: Valence, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), grid.len() * valence.components(grid.dim()));
        TensorField { grid: grid.clone(), valence, data, time: None }
    }

    /// Field whose value at each node is produced by `f(position, out)`.
    pub fn from_fn(grid: &Arc<Grid>, valence: Valence, mut f: impl FnMut(&[f64; 3], &mut [f64])) -> Result<Self> {
        let nc = valence.components(grid.dim());
        let mut data = vec![0.0; grid.len() * nc];
        for (node, chunk) in data.chunks_mut(nc).enumerate() {
            f(&grid.position(node), chunk);
        }
        Self::from_vec(grid, valence, data)
    }

    /// The same tensor value at every node.
    pub fn constant(grid: &Arc<Grid>, valence: Valence, value: &[f64]) -> Result<Self> {
        let nc = valence.components(grid.dim());
        if value.len() != nc {
            return Err(FlowError::Shape(format!("constant of valence {valence} needs {nc} components")));
        }
        Self::from_fn(grid, valence, |_, out| out.copy_from_slice(value))
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }
    pub fn valence(&self) -> Valence {
        self.valence
    }
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }
    pub fn components(&self) -> usize {
        self.valence.components(self.grid.dim())
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
    pub fn time(&self) -> Option<f64> {
        self.time
    }

    pub fn with_time(mut self, t: f64) -> Self {
        self.time = Some(t);
        self
    }

    pub fn at(&self, node: usize) -> &[f64] {
        let nc = self.components();
        &self.data[node * nc..(node + 1) * nc]
    }

    /// Component at `node` for a full multi-index.
    pub fn get(&self, node: usize, index: &[usize]) -> f64 {
        let n = self.dim();
        let c = index.iter().fold(0, |acc, &i| acc * n + i);
        self.at(node)[c]
    }

    pub fn same_shape(&self, other: &TensorField) -> Result<()> {
        if self.valence != other.valence || *self.grid != *other.grid {
            return Err(FlowError::Shape(format!(
                "fields differ: {} on {:?} vs {} on {:?}",
                self.valence,
                self.grid.resolution(),
                other.valence,
                other.grid.resolution()
            )));
        }
        Ok(())
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        ensure_finite(&self.data, what)
    }

    /// `self + a * other`.
    pub fn axpy(&self, a: f64, other: &TensorField) -> Result<TensorField> {
        self.same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(x, y)| x + a * y).collect();
        Ok(TensorField { data, ..self.clone() })
    }

    pub fn scale(&self, a: f64) -> TensorField {
        TensorField { data: self.data.iter().map(|x| a * x).collect(), ..self.clone() }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> TensorField {
        TensorField { data: self.data.iter().map(|&x| f(x)).collect(), ..self.clone() }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Symmetrize the last two (covariant) slots.
    pub fn symmetrized(&self) -> TensorField {
        let n = self.dim();
        let nc = self.components();
        let block = n * n;
        let mut out = self.clone();
        for chunk in out.data.chunks_mut(nc) {
            for b in chunk.chunks_mut(block) {
                for i in 0..n {
                    for j in i + 1..n {
                        let v = 0.5 * (b[i * n + j] + b[j * n + i]);
                        b[i * n + j] = v;
                        b[j * n + i] = v;
                    }
                }
            }
        }
        out
    }

    /// Largest |T_ij - T_ji| over the last two slots.
    pub fn asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut worst: f64 = 0.0;
        for b in self.data.chunks(n * n) {
            for i in 0..n {
                for j in i + 1..n {
                    worst = worst.max((b[i * n + j] - b[j * n + i]).abs());
                }
            }
        }
        worst
    }

    /// Rigid lattice translation: output at node `x` is input at `x - delta`.
    pub fn translated(&self, delta: &[isize]) -> TensorField {
        let nc = self.components();
        let neg: Vec<isize> = delta.iter().map(|d| -d).collect();
        let mut data = vec![0.0; self.data.len()];
        for node in 0..self.grid.len() {
            let src = self.grid.offset(node, &neg);
            data[node * nc..(node + 1) * nc].copy_from_slice(self.at(src));
        }
        TensorField { data, ..self.clone() }
    }
}

impl Add for &TensorField {
    type Output = TensorField;
    fn add(self, rhs: &TensorField) -> TensorField {
        self.axpy(1.0, rhs).expect("field shapes differ")
    }
}

impl Sub for &TensorField {
    type Output = TensorField;
    fn sub(self, rhs: &TensorField) -> TensorField {
        self.axpy(-1.0, rhs).expect("field shapes differ")
    }
}

impl Mul<&TensorField> for f64 {
    type Output = TensorField;
    fn mul(self, rhs: &TensorField) -> TensorField {
        rhs.scale(self)
    }
}

/// A symmetric positive definite `(0,2)` field.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricField(TensorField);

impl MetricField {
    /// Validates symmetry (exact) and positive definiteness at every node.
    pub fn new(field: TensorField) -> Result<Self> {
        if field.valence() != Valence::SYM2 {
            return Err(FlowError::Shape(format!("a metric needs valence (0,2), got {}", field.valence())));
        }
        field.check_finite("MetricField::new")?;
        let n = field.dim();
        for node in 0..field.grid().len() {
            let m = linalg::load_mat(field.at(node), n);
            for i in 0..n {
                for j in i + 1..n {
                    if m[i][j] != m[j][i] {
                        return Err(FlowError::Shape(format!("metric not symmetric at node {node}")));
                    }
                }
            }
            let lam = linalg::min_eigenvalue(&m, n);
            if !(lam > 0.0) {
                return Err(FlowError::NotPositiveDefinite { node, eigenvalue: lam });
            }
        }
        Ok(MetricField(field))
    }

    /// Symmetrizes first; used for metrics assembled from arithmetic that can break exact symmetry.
    pub fn from_symmetrized(field: TensorField) -> Result<Self> {
        Self::new(field.symmetrized())
    }

    pub fn flat(grid: &Arc<Grid>) -> Self {
        let n = grid.dim();
        let id: Vec<f64> = (0..n * n).map(|c| if c / n == c % n { 1.0 } else { 0.0 }).collect();
        MetricField(TensorField::constant(grid, Valence::SYM2, &id).expect("identity has n^2 components"))
    }

    pub fn field(&self) -> &TensorField {
        &self.0
    }
    pub fn into_field(self) -> TensorField {
        self.0
    }
    pub fn grid(&self) -> &Arc<Grid> {
        self.0.grid()
    }
    pub fn dim(&self) -> usize {
        self.0.dim()
    }
    pub fn mat(&self, node: usize) -> Mat {
        linalg::load_mat(self.0.at(node), self.dim())
    }
    pub fn with_time(self, t: f64) -> Self {
        MetricField(self.0.with_time(t))
    }

    /// Whether every component is bitwise equal to the flat identity.
    pub fn is_exactly_flat(&self) -> bool {
        let n = self.dim();
        self.0.data().chunks(n * n).all(|b| (0..n * n).all(|c| b[c] == if c / n == c % n { 1.0 } else { 0.0 }))
    }

    /// `self + h`, validated.
    pub fn perturbed(&self, h: &TensorField) -> Result<MetricField> {
        MetricField::new(self.0.axpy(1.0, h)?)
    }
}

impl AsRef<TensorField> for MetricField {
    fn as_ref(&self) -> &TensorField {
        &self.0
    }
}
