//! Scenario reports and the artifacts written next to them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Scenario};
use crate::dump::write_field;
use crate::error::{FlowError, Result};
use crate::solver::FlowTrajectory;
use crate::tensor::TensorField;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Relation {
    AtMost,
    AtLeast,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub metric: String,
    pub value: f64,
    pub threshold: f64,
    pub relation: Relation,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSummary {
    pub family: String,
    pub evolving: bool,
    pub sup_rm_initial: f64,
    /// Largest `sup|Rm|` the background integrator saw (equal to the initial value when static).
    pub sup_rm_monitored: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub crate_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: Scenario,
    pub provenance: Provenance,
    pub background: BackgroundSummary,
    /// Headline numbers, each also written as a row of `headline.csv`.
    pub headline: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub pass: bool,
    pub tables: Vec<String>,
    pub fields: Vec<String>,
}

impl ExperimentReport {
    pub fn summary_lines(&self) -> Vec<String> {
        let mut out = vec![format!("scenario {} ({})", self.scenario, if self.pass { "PASS" } else { "FAIL" })];
        for c in &self.checks {
            let op = match c.relation {
                Relation::AtMost => "<=",
                Relation::AtLeast => ">=",
            };
            out.push(format!(
                "  [{}] {} = {:.6e} {op} {:.6e}",
                if c.pass { "pass" } else { "FAIL" },
                c.metric,
                c.value,
                c.threshold
            ));
        }
        out
    }
}

/// Everything a scenario produced, before it is written out.
#[derive(Debug, Default)]
pub struct Outcome {
    pub headline: BTreeMap<String, f64>,
    /// Metric values the `[pass]` table is checked against.
    pub metrics: BTreeMap<String, f64>,
    pub tables: Vec<(String, String)>,
    pub fields: Vec<(String, TensorField)>,
    pub trajectories: Vec<(String, FlowTrajectory)>,
    pub background: Option<BackgroundSummary>,
}

impl Outcome {
    pub fn headline(&mut self, name: &str, value: f64) {
        self.headline.insert(name.to_string(), value);
    }

    /// A pass-checked metric, also recorded as a headline number.
    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
        self.headline(name, value);
    }

    pub fn table(&mut self, name: &str, csv: String) {
        self.tables.push((name.to_string(), csv));
    }

    pub fn headline_csv(&self) -> String {
        let mut out = String::from("name,value\n");
        for (k, v) in &self.headline {
            let _ = writeln!(out, "{k},{v:.16e}");
        }
        out
    }

    pub fn checks(&self, cfg: &ExperimentConfig) -> Vec<Check> {
        cfg.pass
            .iter()
            .map(|(key, &threshold)| {
                let (metric, relation) = match key.strip_suffix("_max") {
                    Some(m) => (m.to_string(), Relation::AtMost),
                    None => (key.strip_suffix("_min").unwrap_or(key).to_string(), Relation::AtLeast),
                };
                let value = self.metrics.get(&metric).copied().unwrap_or(f64::NAN);
                let pass = match relation {
                    Relation::AtMost => value <= threshold,
                    Relation::AtLeast => value >= threshold,
                };
                Check { name: key.clone(), metric, value, threshold, relation, pass }
            })
            .collect()
    }

    pub fn into_report(self, cfg: &ExperimentConfig) -> (ExperimentReport, Outcome) {
        let checks = self.checks(cfg);
        let report = ExperimentReport {
            scenario: cfg.scenario,
            provenance: Provenance {
                config_hash: cfg.hash(),
                seed: cfg.seed,
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
            },
            background: self.background.clone().unwrap_or(BackgroundSummary {
                family: cfg.background.family.name().to_string(),
                evolving: cfg.background.evolving,
                sup_rm_initial: f64::NAN,
                sup_rm_monitored: f64::NAN,
            }),
            headline: self.headline.clone(),
            pass: checks.iter().all(|c| c.pass),
            checks,
            tables: std::iter::once("headline.csv".to_string()).chain(self.tables.iter().map(|t| t.0.clone())).collect(),
            fields: self
                .fields
                .iter()
                .map(|f| f.0.clone())
                .chain(self.trajectories.iter().map(|t| format!("{}/manifest.json", t.0)))
                .collect(),
        };
        (report, self)
    }

    /// Writes `report.json`, `headline.csv`, every table and every field dump into `dir`.
    pub fn write(&self, report: &ExperimentReport, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| FlowError::io(dir, e))?;
        let put = |name: &str, text: &str| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| FlowError::io(&p, e))
        };
        put("report.json", &serde_json::to_string_pretty(report).expect("report serializes"))?;
        put("headline.csv", &self.headline_csv())?;
        for (name, csv) in &self.tables {
            put(name, csv)?;
        }
        for (name, f) in &self.fields {
            write_field(f, &dir.join(name))?;
        }
        for (name, t) in &self.trajectories {
            t.write_dir(&dir.join(name))?;
        }
        Ok(())
    }
}
