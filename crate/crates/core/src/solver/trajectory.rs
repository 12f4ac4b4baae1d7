use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dump::{read_field, write_field};
use crate::error::{FlowError, Result};
use crate::grid::Grid;
use crate::tensor::TensorField;

/// Integrator bookkeeping attached to a trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMeta {
    pub integrator: String,
    /// Integrator step.
    pub dt: f64,
    pub cfl: f64,
    /// Integrator steps between stored samples.
    pub sample_stride: usize,
}

/// Time-indexed fields `t_0 < t_1 < … < t_K` with a uniform sample spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowTrajectory {
    pub grid: Arc<Grid>,
    pub times: Vec<f64>,
    pub fields: Vec<TensorField>,
    pub meta: StepMeta,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    times: Vec<f64>,
    files: Vec<String>,
    #[serde(flatten)]
    meta: StepMeta,
}

impl FlowTrajectory {
    pub fn new(grid: Arc<Grid>, times: Vec<f64>, fields: Vec<TensorField>, meta: StepMeta) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(FlowError::Shape(format!("{} times for {} fields", times.len(), fields.len())));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(FlowError::Shape("trajectory times must increase strictly".into()));
        }
        for f in &fields {
            if **f.grid() != *grid {
                return Err(FlowError::Shape("trajectory field on a different grid".into()));
            }
        }
        Ok(FlowTrajectory { grid, times, fields, meta })
    }

    /// A trajectory that is zero at every one of `times`.
    pub fn zeros_like(&self) -> Self {
        let fields = self.fields.iter().map(|f| f.scale(0.0)).collect();
        FlowTrajectory { fields, ..self.clone() }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        *self.times.last().expect("non-empty")
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn last(&self) -> &TensorField {
        self.fields.last().expect("non-empty")
    }

    pub fn sample_spacing(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            (self.horizon() - self.start()) / (self.times.len() - 1) as f64
        }
    }

    /// Index of the sample closest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, &s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }

    pub fn same_times(&self, other: &FlowTrajectory) -> Result<()> {
        let tol = 1e-12 * self.horizon().abs().max(1.0);
        if self.times.len() != other.times.len() || self.times.iter().zip(&other.times).any(|(a, b)| (a - b).abs() > tol) {
            return Err(FlowError::Shape(format!(
                "trajectories sampled at different times ({} vs {} samples)",
                self.times.len(),
                other.times.len()
            )));
        }
        Ok(())
    }

    /// `self + a * other` sample by sample.
    pub fn axpy(&self, a: f64, other: &FlowTrajectory) -> Result<FlowTrajectory> {
        self.same_times(other)?;
        let fields = self.fields.iter().zip(&other.fields).map(|(x, y)| x.axpy(a, y)).collect::<Result<_>>()?;
        Ok(FlowTrajectory { fields, ..self.clone() })
    }

    pub fn scale(&self, a: f64) -> FlowTrajectory {
        FlowTrajectory { fields: self.fields.iter().map(|f| f.scale(a)).collect(), ..self.clone() }
    }

    pub fn max_abs(&self) -> f64 {
        self.fields.iter().map(|f| f.max_abs()).fold(0.0, f64::max)
    }

    /// Cubic Lagrange interpolation in time on the uniform sample grid.
    /// Exactly reproduces stored samples.
    pub fn interpolate(&self, t: f64) -> Result<TensorField> {
        let k = self.times.len();
        let (t0, t1) = (self.start(), self.horizon());
        let tol = 1e-9 * (t1 - t0).abs().max(1e-300);
        if t < t0 - tol || t > t1 + tol {
            return Err(FlowError::Shape(format!("time {t} outside trajectory span [{t0}, {t1}]")));
        }
        if k == 1 {
            return Ok(self.fields[0].clone().with_time(t));
        }
        let dt = self.sample_spacing();
        let pos = ((t - t0) / dt).clamp(0.0, (k - 1) as f64);
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        if frac == 0.0 {
            return Ok(self.fields[i].clone().with_time(t));
        }
        if k < 4 {
            // linear fallback for very short trajectories
            let j = (i + 1).min(k - 1);
            let f = self.fields[i].scale(1.0 - frac).axpy(frac, &self.fields[j])?;
            return Ok(f.with_time(t));
        }
        let base = i.saturating_sub(1).min(k - 4);
        let s = pos - base as f64;
        let nodes = [0.0, 1.0, 2.0, 3.0];
        let mut w = [1.0; 4];
        for a in 0..4 {
            for b in 0..4 {
                if a != b {
                    w[a] *= (s - nodes[b]) / (nodes[a] - nodes[b]);
                }
            }
        }
        let mut out = self.fields[base].scale(w[0]);
        for a in 1..4 {
            out = out.axpy(w[a], &self.fields[base + a])?;
        }
        Ok(out.with_time(t))
    }

    /// Writes one field dump per sample plus `manifest.json`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| FlowError::io(dir, e))?;
        let mut files = Vec::new();
        for (i, f) in self.fields.iter().enumerate() {
            let name = format!("field_{i:05}.csv");
            write_field(&f.clone().with_time(self.times[i]), &dir.join(&name))?;
            files.push(name);
        }
        let manifest = Manifest { times: self.times.clone(), files, meta: self.meta.clone() };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| FlowError::io(&path, e))
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| FlowError::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(|e| FlowError::Parse { path: path.clone(), message: e.to_string() })?;
        let fields = m.files.iter().map(|f| read_field(&dir.join(f))).collect::<Result<Vec<_>>>()?;
        let grid = fields.first().ok_or_else(|| FlowError::Parse { path, message: "no samples".into() })?.grid().clone();
        FlowTrajectory::new(grid, m.times, fields, m.meta)
    }
}

/// Reads the sample of a dumped trajectory closest to `time`.
pub fn load_sample(dir: &Path, time: f64) -> Result<TensorField> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| FlowError::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| FlowError::Parse { path: path.clone(), message: e.to_string() })?;
    let idx = (0..m.times.len())
        .min_by(|&a, &b| (m.times[a] - time).abs().total_cmp(&(m.times[b] - time).abs()))
        .ok_or_else(|| FlowError::Parse { path, message: "empty manifest".into() })?;
    read_field(&dir.join(&m.files[idx]))
}
