//! Acceptance suite: one PASS/FAIL line per criterion, thresholds pinned below.
//!
//! Scenario runs come from `configs/`; their `[pass]` tables are ignored here so that
//! editing a config cannot loosen a criterion.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use flowlab::deturck::{deturck_vector_field, linearized_apply, quadratic_terms, ricci_deturck_operator, verify_decomposition};
use flowlab::experiments::{run_scenario, ExperimentConfig, ExperimentReport, Outcome, Scenario};
use flowlab::geometry::MetricGeometry;
use flowlab::norms::NormConfig;
use flowlab::picard::{picard_solve, PicardProblem};
use flowlab::pullback::recover_ricci_flow;
use flowlab::solver::{integrate_deturck_direct, integrate_ricci_flow, BackgroundMode, StepConfig};
use flowlab::{MetricField, TensorField, Valence};

const IDENTITY_RESIDUAL: f64 = 1e-6;
const IDENTITY_SHRINK: f64 = 8.0;
const IDENTITY_SECONDS: f64 = 60.0;

const KERNEL_GAUSSIAN: f64 = 0.02;
const KERNEL_D: f64 = 0.2;
const KERNEL_MASS: f64 = 1e-3;
const KERNEL_SECONDS: f64 = 60.0;

const VIOLATION_RATIO: f64 = 1.0;
const CURVATURE_BOUND: f64 = 1.0;

const NORM_AXIOMS: f64 = 1e-12;
const SIN_MODE: f64 = 0.03;

const AUDIT_SPREAD: f64 = 0.25;
const AUDIT_EXPONENT: f64 = 0.1;

const CONTRACTION: f64 = 0.5;
const PICARD_GAP: f64 = 1e-4;
const PICARD_SECONDS: f64 = 600.0;

const LADDER_SPREAD: f64 = 0.1;
const DEPENDENCE_SECONDS: f64 = 900.0;

const PULLBACK_SHRINK: f64 = 3.0;
const SIGN_SEPARATION: f64 = 10.0;

const FLAT_ZERO: f64 = 1e-10;

struct Run {
    report: ExperimentReport,
    outcome: Outcome,
    seconds: f64,
}

impl Run {
    fn metric(&self, name: &str) -> f64 {
        self.outcome.metrics.get(name).copied().unwrap_or(f64::NAN)
    }

    fn headline(&self, name: &str) -> f64 {
        self.report.headline.get(name).copied().unwrap_or(f64::NAN)
    }

    fn table(&self, name: &str) -> Option<&str> {
        self.outcome.tables.iter().find(|t| t.0 == name).map(|t| t.1.as_str())
    }
}

#[derive(Default)]
struct Suite {
    runs: BTreeMap<String, Run>,
    failures: Vec<usize>,
}

fn config(name: &str) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"));
    let mut cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    cfg.out = None;
    cfg
}

fn execute(cfg: &ExperimentConfig) -> Result<Run, String> {
    let clock = Instant::now();
    let (report, outcome) = run_scenario(cfg).map_err(|e| e.to_string())?;
    Ok(Run { report, outcome, seconds: clock.elapsed().as_secs_f64() })
}

impl Suite {
    fn run(&mut self, name: &str) -> Result<&Run, String> {
        if !self.runs.contains_key(name) {
            let run = execute(&config(name)).map_err(|e| format!("{name}: {e}"))?;
            self.runs.insert(name.to_string(), run);
        }
        Ok(&self.runs[name])
    }

    fn criterion(&mut self, id: usize, title: &str, body: impl FnOnce(&mut Suite) -> Result<(bool, String), String>) {
        let clock = Instant::now();
        let (pass, detail) = body(self).unwrap_or_else(|e| (false, format!("error: {e}")));
        let secs = clock.elapsed().as_secs_f64();
        println!("[{}] {id:>2} {title}: {detail} ({secs:.1} s)", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures.push(id);
        }
    }
}

fn at_most(v: f64, bound: f64) -> bool {
    v <= bound
}

fn at_least(v: f64, bound: f64) -> bool {
    v >= bound
}

fn identity(s: &mut Suite) -> Result<(bool, String), String> {
    let two = s.run("identity-2d")?;
    let (r2, shrink, t2) = (two.metric("identity_residual"), two.metric("identity_shrink"), two.seconds);
    let three = s.run("identity-3d")?;
    let (r3, t3) = (three.metric("identity_residual"), three.seconds);
    let pass = at_most(r2, IDENTITY_RESIDUAL)
        && at_most(r3, IDENTITY_RESIDUAL)
        && at_least(shrink, IDENTITY_SHRINK)
        && t2.max(t3) < IDENTITY_SECONDS;
    Ok((pass, format!("residual 2D {r2:.2e}, 3D {r3:.2e} (<= {IDENTITY_RESIDUAL:.0e}); shrink {shrink:.1} (>= {IDENTITY_SHRINK}); slowest {:.1} s", t2.max(t3))))
}

fn kernel_flat(s: &mut Suite) -> Result<(bool, String), String> {
    let r = s.run("kernel-flat")?;
    let (dev, derr, mass) = (r.metric("kernel_gaussian_deviation"), r.metric("kernel_d_error"), r.metric("kernel_mass_error"));
    let pass = at_most(dev, KERNEL_GAUSSIAN) && at_most(derr, KERNEL_D) && at_most(mass, KERNEL_MASS) && r.seconds < KERNEL_SECONDS;
    Ok((pass, format!("gaussian dev {dev:.2e}, |D - 1| {derr:.3}, mass error {mass:.2e}, run {:.1} s", r.seconds)))
}

fn kernel_bumpy(s: &mut Suite) -> Result<(bool, String), String> {
    let st = s.run("kernel-bumpy")?;
    let (vs, rs) = (st.metric("kernel_violation_ratio"), st.report.background.sup_rm_monitored);
    let ev = s.run("kernel-evolving")?;
    let (ve, re, grad) = (ev.metric("kernel_violation_ratio"), ev.report.background.sup_rm_monitored, ev.metric("kernel_gradient_bounded"));
    let pass = at_most(vs, VIOLATION_RATIO)
        && at_most(ve, VIOLATION_RATIO)
        && at_most(rs, CURVATURE_BOUND)
        && at_most(re, CURVATURE_BOUND)
        && grad == 1.0;
    Ok((pass, format!("violation static {vs:.3}, evolving {ve:.3}; sup|Rm| {rs:.3}/{re:.3}; gradient bounded {}", grad == 1.0)))
}

fn norm_axioms(s: &mut Suite) -> Result<(bool, String), String> {
    let r = s.run("norms")?;
    let (tri, hom) = (r.metric("norm_triangle_excess"), r.metric("norm_homogeneity_error"));
    let (lib, exact) = common::sin_mode_x_norm_pair(64, 4);
    let dev = common::rel(lib, exact);
    let pass = at_most(tri, NORM_AXIOMS) && at_most(hom, NORM_AXIOMS) && at_most(dev, SIN_MODE);
    Ok((pass, format!("triangle excess {tri:.1e}, homogeneity {hom:.1e}; sin mode {lib:.5} vs {exact:.5} ({:.2}%)", 100.0 * dev)))
}

fn audits(s: &mut Suite) -> Result<(bool, String), String> {
    let r = s.run("norms")?;
    let (spread, err) = (r.metric("audit_spread"), r.metric("audit_exponent_error"));
    let pass = at_most(spread, AUDIT_SPREAD) && at_most(err, AUDIT_EXPONENT);
    Ok((pass, format!("spread {spread:.3} (<= {AUDIT_SPREAD}), exponent {:.4}", r.headline("audit_exponent"))))
}

fn picard(s: &mut Suite) -> Result<(bool, String), String> {
    let flat = s.run("contraction-flat")?;
    let (cf, tf) = (flat.metric("contraction_ratio"), flat.seconds);
    let bumpy = s.run("contraction-bumpy")?;
    let (cb, tb) = (bumpy.metric("contraction_ratio"), bumpy.seconds);
    let ex = s.run("existence")?;
    let (gap, ratio, te) = (ex.metric("existence_gap"), ex.metric("existence_ratio"), ex.seconds);
    let converged = ex.headline("existence_converged") == 1.0;
    let total = tf + tb + te;
    let pass = at_most(cf, CONTRACTION)
        && at_most(cb, CONTRACTION)
        && converged
        && ratio < 1.0
        && at_most(gap, PICARD_GAP)
        && total < PICARD_SECONDS;
    Ok((pass, format!("contraction flat {cf:.2e}, bumpy {cb:.2e}; increment ratio {ratio:.2e}; gap to direct {gap:.2e}; {total:.0} s")))
}

fn continuous_dependence(s: &mut Suite) -> Result<(bool, String), String> {
    let r = s.run("continuous-dependence")?;
    let (spread, zero) = (r.metric("cd_ladder_spread"), r.metric("cd_zero_response"));
    let constants: Vec<f64> = r.report.headline.iter().filter(|(k, _)| k.starts_with("cd_constant_eps_")).map(|(_, v)| *v).collect();
    let finite = !constants.is_empty() && constants.iter().all(|c| c.is_finite());
    let pass = finite && at_most(spread, LADDER_SPREAD) && zero == 0.0 && r.seconds < DEPENDENCE_SECONDS;
    Ok((pass, format!("C(eps) {constants:.4?}, ladder spread {spread:.2e}, eps = 0 response {zero:e}, {:.0} s", r.seconds)))
}

fn chained(s: &mut Suite) -> Result<(bool, String), String> {
    let four = s.run("chained-dependence")?;
    let (excess, amp) = (four.metric("chain_bound_excess"), four.metric("chain_amplification"));
    let single_cd = s.run("continuous-dependence")?.table("cd_ladder.csv").map(str::to_owned);
    let mut one = config("continuous-dependence");
    one.scenario = Scenario::ChainedDependence;
    one.pieces = 1;
    one.pass = BTreeMap::from([("chain_amplification_max".to_string(), f64::INFINITY)]);
    let one = execute(&one)?;
    let bitwise = single_cd.is_some() && one.table("chain_ladder.csv").map(str::to_owned) == single_cd;
    let pass = excess.is_finite() && at_most(excess, 0.0) && bitwise;
    Ok((pass, format!("N = 4 completed, A = {amp:.4}, response/(A eps) - 1 = {excess:.2e}; N = 1 ladder bitwise equal: {bitwise}")))
}

fn pullback(s: &mut Suite) -> Result<(bool, String), String> {
    let r = s.run("pullback")?;
    let (res, shrink, sep) = (r.metric("pullback_residual"), r.metric("pullback_shrink"), r.metric("pullback_sign_separation"));
    let pass = at_least(shrink, PULLBACK_SHRINK) && at_least(sep, SIGN_SEPARATION);
    Ok((pass, format!("fine residual {res:.2e}, shrink {shrink:.1} (>= {PULLBACK_SHRINK}), opposite sign / chosen sign {sep:.0}")))
}

fn flat_zero(_: &mut Suite) -> Result<(bool, String), String> {
    let e = |x: flowlab::FlowError| x.to_string();
    let mut worst = 0.0f64;
    for grid in [common::grid2(16, 2.0), common::grid3(8, 2.0)] {
        let flat = MetricField::flat(&grid);
        let geo = MetricGeometry::new(&flat).map_err(e)?;
        worst = worst.max(geo.riemann.max_abs()).max(geo.ricci.max_abs()).max(geo.scalar.max_abs());
        worst = worst.max(deturck_vector_field(&flat, &flat).map_err(e)?.max_abs());
        worst = worst.max(ricci_deturck_operator(&flat, &flat).map_err(e)?.max_abs());
        let zero = TensorField::zeros(&grid, Valence::SYM2);
        worst = worst.max(quadratic_terms(&zero, &flat, &flat).map_err(e)?.assemble(&geo).map_err(e)?.max_abs());
        worst = worst.max(linearized_apply(&zero, &flat, &flat).map_err(e)?.max_abs());
        worst = worst.max(verify_decomposition(&flat, &flat, &flat).map_err(e)?.sup_residual);
    }
    let grid = common::grid2(16, 2.0);
    let flat = MetricField::flat(&grid);
    let step = StepConfig::new(0.2, 4);
    let horizon = 0.1;
    let (traj, diag) = integrate_ricci_flow(&flat, horizon, &step, CURVATURE_BOUND).map_err(e)?;
    for f in &traj.fields {
        worst = worst.max(f.axpy(-1.0, flat.field()).map_err(e)?.max_abs());
    }
    worst = worst.max(diag.max_sup_rm);
    let bg = BackgroundMode::static_metric(&flat).map_err(e)?;
    worst = worst.max(integrate_deturck_direct(&flat, &bg, horizon, &step).map_err(e)?.max_abs());
    let prob = PicardProblem::static_existence(&flat, horizon, 1e-2)
        .map_err(e)?
        .with_step(step.clone())
        .with_norm(NormConfig { center_stride: 4, min_radius_cells: 2.0, window: None });
    let (h, _) = picard_solve(&prob).map_err(e)?;
    worst = worst.max(h.max_abs());
    let times = step.sample_times(&grid, 0.0, horizon).map_err(e)?;
    let ghat = common::constant_trajectory(&grid, flat.field(), &times);
    let (recovered, rep) = recover_ricci_flow(&ghat, &bg).map_err(e)?;
    worst = worst.max(rep.residual).max(rep.max_vector_field);
    for f in &recovered.fields {
        worst = worst.max(f.axpy(-1.0, flat.field()).map_err(e)?.max_abs());
    }
    Ok((at_most(worst, FLAT_ZERO), format!("largest entry over all flat outputs {worst:.1e} (<= {FLAT_ZERO:.0e})")))
}

fn main() {
    let clock = Instant::now();
    let mut suite = Suite::default();
    suite.criterion(1, "decomposition identity", identity);
    suite.criterion(2, "flat heat kernel", kernel_flat);
    suite.criterion(3, "kernel bounds on curved backgrounds", kernel_bumpy);
    suite.criterion(4, "norm axioms and sin-mode norm", norm_axioms);
    suite.criterion(5, "inequality audits", audits);
    suite.criterion(6, "Picard contraction and convergence", picard);
    suite.criterion(7, "continuous dependence", continuous_dependence);
    suite.criterion(8, "chained dependence", chained);
    suite.criterion(9, "pullback convergence", pullback);
    suite.criterion(10, "flat inputs give zero", flat_zero);
    let total = clock.elapsed().as_secs_f64();
    if suite.failures.is_empty() {
        println!("acceptance: all 10 criteria pass ({total:.0} s)");
    } else {
        println!("acceptance: failed criteria {:?} ({total:.0} s)", suite.failures);
        std::process::exit(1);
    }
}
