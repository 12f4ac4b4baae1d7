//! Scenario configuration, read from TOML.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FlowError, Result};
use crate::families::{InputFamily, MetricFamily};
use crate::grid::{Grid, Stencil};
use crate::norms::{AuditConfig, NormConfig};
use crate::solver::StepConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Identity,
    Kernel,
    Norms,
    Existence,
    Contraction,
    ContinuousDependence,
    ChainedDependence,
    Pullback,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::Identity,
        Scenario::Kernel,
        Scenario::Norms,
        Scenario::Existence,
        Scenario::Contraction,
        Scenario::ContinuousDependence,
        Scenario::ChainedDependence,
        Scenario::Pullback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Identity => "identity",
            Scenario::Kernel => "kernel",
            Scenario::Norms => "norms",
            Scenario::Existence => "existence",
            Scenario::Contraction => "contraction",
            Scenario::ContinuousDependence => "continuous-dependence",
            Scenario::ChainedDependence => "chained-dependence",
            Scenario::Pullback => "pullback",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            Scenario::Identity => "P(g+h) - P(g) = Lh + Q[h] residual, with refinement",
            Scenario::Kernel => "heat-kernel probe: Gaussian fit, mass, gradient audit",
            Scenario::Norms => "X/Y norm axioms and the inequality audits",
            Scenario::Existence => "static-background Picard solve against the direct solver",
            Scenario::Contraction => "contraction ratio of the Picard map on seeded pairs",
            Scenario::ContinuousDependence => "sup|g_hat - g| / eps over an epsilon ladder",
            Scenario::ChainedDependence => "continuous dependence chained over N time pieces",
            Scenario::Pullback => "Ricci flow recovered by pullback, with refinement",
        }
    }

    /// Metric names a `[pass]` table may constrain; `_max` bounds from above, `_min` from below.
    pub fn pass_keys(self) -> &'static [&'static str] {
        match self {
            Scenario::Identity => &["identity_residual_max", "identity_shrink_min"],
            Scenario::Kernel => &[
                "kernel_gaussian_deviation_max",
                "kernel_d_error_max",
                "kernel_mass_error_max",
                "kernel_violation_ratio_max",
                "kernel_gradient_bounded_min",
            ],
            Scenario::Norms => &["norm_triangle_excess_max", "norm_homogeneity_error_max", "audit_spread_max", "audit_exponent_error_max"],
            Scenario::Existence => &["existence_gap_max", "existence_ratio_max"],
            Scenario::Contraction => &["contraction_ratio_max"],
            Scenario::ContinuousDependence => &["cd_ladder_spread_max", "cd_zero_response_max"],
            Scenario::ChainedDependence => &["chain_bound_excess_max", "chain_amplification_max"],
            Scenario::Pullback => &["pullback_residual_max", "pullback_shrink_min", "pullback_sign_separation_min"],
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = FlowError;
    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
            FlowError::Config(format!("unknown scenario '{s}'; valid scenarios: {}", names.join(", ")))
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub resolution: Vec<usize>,
    pub periods: Vec<f64>,
    #[serde(default)]
    pub stencil: Stencil,
}

impl GridConfig {
    pub fn build(&self) -> Result<Arc<Grid>> {
        Ok(Arc::new(Grid::with_stencil(self.dim, &self.resolution, &self.periods, self.stencil)?))
    }
}

fn default_lambda() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundConfig {
    #[serde(flatten)]
    pub family: MetricFamily,
    /// Evolve the background by Ricci flow instead of holding it fixed.
    #[serde(default)]
    pub evolving: bool,
    /// Abort the background flow when `sup|Rm|` exceeds this.
    #[serde(default = "default_lambda")]
    pub lambda_max: f64,
}

/// Probe placement for the kernel scenario; the source node is given in lattice coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeOptions {
    pub source: Vec<usize>,
    #[serde(default)]
    pub s: f64,
    pub lags: Vec<f64>,
    #[serde(default = "default_components")]
    pub components: Vec<[usize; 2]>,
    #[serde(default)]
    pub gradient_ladder: Vec<f64>,
    #[serde(default)]
    pub gradient_target: f64,
}

fn default_components() -> Vec<[usize; 2]> {
    vec![[0, 0]]
}

fn default_horizon() -> f64 {
    0.05
}
fn default_delta() -> f64 {
    1e-2
}
fn default_max_iter() -> usize {
    50
}
fn default_pairs() -> usize {
    20
}
fn default_pieces() -> usize {
    1
}
fn default_identity_epsilon() -> f64 {
    0.05
}
fn default_sign_probe_epsilon() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; the CLI's `--out` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub grid: GridConfig,
    pub background: BackgroundConfig,
    #[serde(default)]
    pub step: StepConfig,
    #[serde(default)]
    pub norm: NormConfig,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub epsilons: Vec<f64>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Absolute Picard tolerance; defaults to `1e-10 · delta`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub inputs: InputFamily,
    /// Extra metric families for the identity scenario (the background family is always included).
    #[serde(default)]
    pub families: Vec<MetricFamily>,
    #[serde(default = "default_identity_epsilon")]
    pub identity_epsilon: f64,
    /// Size of the non-conformal initial perturbation in the pullback sign probe.
    #[serde(default = "default_sign_probe_epsilon")]
    pub sign_probe_epsilon: f64,
    /// Repeat the scenario on the grid refined by this factor (identity, pullback).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine: Option<usize>,
    /// Seeded pairs (contraction) or random pairs (norm axioms).
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    /// Extra radii `δ` for the contraction scaling study.
    #[serde(default)]
    pub deltas: Vec<f64>,
    #[serde(default = "default_pieces")]
    pub pieces: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditConfig>,
    /// Additional uniform resolutions the audit is repeated on.
    #[serde(default)]
    pub audit_resolutions: Vec<usize>,
    /// Pass criteria, keyed by the names in [`Scenario::pass_keys`].
    #[serde(default)]
    pub pass: BTreeMap<String, f64>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, String> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FlowError::io(path, e))?;
        let cfg = Self::from_toml_str(&text).map_err(|message| FlowError::Parse { path: path.to_path_buf(), message })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.build()?;
        let keys = self.scenario.pass_keys();
        if let Some(k) = self.pass.keys().find(|k| !keys.contains(&k.as_str())) {
            return Err(FlowError::Config(format!(
                "unknown pass criterion '{k}' for scenario {}; valid: {}",
                self.scenario,
                keys.join(", ")
            )));
        }
        if self.pass.is_empty() {
            return Err(FlowError::Config(format!(
                "scenario {} has no pass criteria; choose from {}",
                self.scenario,
                keys.join(", ")
            )));
        }
        if !(self.horizon > 0.0 && self.delta > 0.0) {
            return Err(FlowError::Config("horizon and delta must be positive".into()));
        }
        if self.epsilons.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(FlowError::Config("epsilons must be finite and non-negative".into()));
        }
        if self.pieces == 0 {
            return Err(FlowError::Config("pieces must be at least 1".into()));
        }
        if self.refine == Some(0) || self.refine == Some(1) {
            return Err(FlowError::Config("refine factor must be at least 2".into()));
        }
        match self.scenario {
            Scenario::Kernel if self.probe.is_none() => Err(FlowError::Config("the kernel scenario needs a [probe] table".into())),
            Scenario::ContinuousDependence | Scenario::ChainedDependence if self.epsilons.is_empty() => {
                Err(FlowError::Config(format!("scenario {} needs a non-empty epsilons ladder", self.scenario)))
            }
            Scenario::Pullback if self.refine.is_none() => Err(FlowError::Config("the pullback scenario needs a refine factor".into())),
            _ => Ok(()),
        }
    }

    pub fn tolerance(&self) -> f64 {
        self.tol.unwrap_or(1e-10 * self.delta)
    }

    /// SHA-256 over the canonical JSON form, with the output directory left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}
