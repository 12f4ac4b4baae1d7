//! Scenario runner: wires the library into end-to-end experiments with CSV and JSON output.
//!
//! Each scenario produces an [`Outcome`] (headline numbers, pass-checked metrics, tables and
//! field dumps); [`run_suite`] turns it into an [`ExperimentReport`] and writes everything to
//! the configured output directory. Pass thresholds come from the config's `[pass]` table.

mod config;
mod report;

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{BackgroundConfig, ExperimentConfig, GridConfig, ProbeOptions, Scenario};
pub use report::{BackgroundSummary, Check, ExperimentReport, Outcome, Provenance, Relation};

use crate::deturck::{verify_decomposition, ForcingDecomposition};
use crate::error::{FlowError, Result};
use crate::families::unit_sup_normalized;
use crate::geometry::{tensor_pointwise_norm, MetricGeometry};
use crate::grid::Grid;
use crate::norms::{norm_inequality_audit, AuditTable, InequalityKind, NormContext};
use crate::picard::{contraction_ratio_with, picard_iterate, IterationTrace, PicardProblem, PicardWorkspace};
use crate::pullback::{recover_ricci_flow, recover_ricci_flow_with, VelocitySign};
use crate::solver::{integrate_deturck_direct, kernel_probe, BackgroundMode, FlowTrajectory, ForcingSeries, ProbeConfig};
use crate::tensor::{MetricField, TensorField};

/// Runs the configured scenario and writes its artifacts when an output directory is set.
pub fn run_suite(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let (report, outcome) = run_scenario(cfg)?;
    if let Some(dir) = &cfg.out {
        outcome.write(&report, dir)?;
    }
    Ok(report)
}

/// Runs the configured scenario without writing anything.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<(ExperimentReport, Outcome)> {
    cfg.validate()?;
    let outcome = match cfg.scenario {
        Scenario::Identity => identity(cfg),
        Scenario::Kernel => kernel(cfg),
        Scenario::Norms => norms(cfg),
        Scenario::Existence => existence(cfg),
        Scenario::Contraction => contraction(cfg),
        Scenario::ContinuousDependence => continuous_dependence(cfg),
        Scenario::ChainedDependence => chained_dependence(cfg),
        Scenario::Pullback => pullback(cfg),
    }
    .map_err(|e| e.context(format!("scenario {}", cfg.scenario)))?;
    Ok(outcome.into_report(cfg))
}

fn expect(cfg: &ExperimentConfig, scenario: Scenario) -> Result<()> {
    if cfg.scenario != scenario {
        return Err(FlowError::Config(format!("expected a {scenario} config, got {}", cfg.scenario)));
    }
    Ok(())
}

/// The continuous-dependence scenario: `C(ε) = M(ε)/ε` over the ladder.
pub fn run_continuous_dependence(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    expect(cfg, Scenario::ContinuousDependence)?;
    run_suite(cfg)
}

/// The chained scenario: the dependence step re-anchored on each of `pieces` intervals.
pub fn run_chained_dependence(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    expect(cfg, Scenario::ChainedDependence)?;
    run_suite(cfg)
}

/// Initial metric and background, with the curvature summary every report carries.
pub fn build_background(cfg: &ExperimentConfig, grid: &Arc<Grid>, horizon: f64) -> Result<(MetricField, BackgroundMode, BackgroundSummary)> {
    let g0 = cfg.background.family.build(grid)?;
    let sup_rm_initial = MetricGeometry::new(&g0)?.sup_rm();
    let (bg, monitored) = if cfg.background.evolving {
        let bg = BackgroundMode::ricci_flow(&g0, horizon, &cfg.step, cfg.background.lambda_max)?;
        let m = bg.diagnostics().map_or(sup_rm_initial, |d| d.max_sup_rm);
        (bg, m)
    } else {
        (BackgroundMode::static_metric(&g0)?, sup_rm_initial)
    };
    let summary = BackgroundSummary {
        family: cfg.background.family.name().to_string(),
        evolving: cfg.background.evolving,
        sup_rm_initial,
        sup_rm_monitored: monitored,
    };
    Ok((g0, bg, summary))
}

/// The seeded perturbation direction: unit sup norm in `g₀`.
pub fn perturbation_direction(cfg: &ExperimentConfig, grid: &Arc<Grid>, g0: &MetricField) -> Result<TensorField> {
    unit_sup_normalized(&cfg.inputs.sym2(grid, cfg.seed)?, g0)
}

/// `sup_{M×[0,T]} |h_t|_{g_t}` with `g_t` read from the background at each sample.
pub fn sup_in_background(h: &FlowTrajectory, bg: &BackgroundMode) -> Result<f64> {
    let mut sup = 0.0f64;
    for (f, &t) in h.fields.iter().zip(&h.times) {
        sup = sup.max(tensor_pointwise_norm(f, &bg.metric_at(t)?)?.max_abs());
    }
    Ok(sup)
}

fn fmt_key(prefix: &str, x: f64) -> String {
    format!("{prefix}{x:.3e}")
}

fn identity(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut families = vec![cfg.background.family.clone()];
    families.extend(cfg.families.iter().filter(|f| **f != cfg.background.family).cloned());
    let base = cfg.grid.build()?;
    let mut grids = vec![base.clone()];
    if let Some(f) = cfg.refine {
        grids.push(Arc::new(base.refined(f)?));
    }
    let mut csv = String::from("family,resolution,relative_residual,sup_residual,l2_residual,max_lhs,max_r_part,max_s_part\n");
    let mut worst = 0.0f64;
    let mut shrink = f64::INFINITY;
    for fam in &families {
        let mut rel = Vec::new();
        for grid in &grids {
            let g = fam.build(grid)?;
            let phi = unit_sup_normalized(&cfg.inputs.sym2(grid, cfg.seed)?, &g)?;
            let g_hat = g.perturbed(&phi.scale(cfg.identity_epsilon))?;
            let r = verify_decomposition(&g, &g_hat, &MetricField::flat(grid))?;
            let _ = writeln!(
                csv,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                fam.name(),
                grid.resolution()[0],
                r.relative_residual,
                r.sup_residual,
                r.l2_residual,
                r.max_lhs,
                r.max_r_part,
                r.max_s_part
            );
            out.headline(&format!("identity_residual_{}_{}", fam.name(), grid.resolution()[0]), r.relative_residual);
            worst = worst.max(r.relative_residual);
            rel.push(r.relative_residual);
        }
        if rel.len() == 2 {
            let s = if rel[1] > 0.0 { rel[0] / rel[1] } else { f64::INFINITY };
            out.headline(&format!("identity_shrink_{}", fam.name()), s);
            shrink = shrink.min(s);
        }
    }
    out.metric("identity_residual", worst);
    if cfg.refine.is_some() {
        out.metric("identity_shrink", shrink);
    }
    out.table("identity.csv", csv);
    let g0 = cfg.background.family.build(&base)?;
    let rm = MetricGeometry::new(&g0)?.sup_rm();
    out.background = Some(BackgroundSummary {
        family: cfg.background.family.name().to_string(),
        evolving: false,
        sup_rm_initial: rm,
        sup_rm_monitored: rm,
    });
    Ok(out)
}

fn kernel(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let probe = cfg.probe.as_ref().expect("validated");
    let grid = cfg.grid.build()?;
    let horizon = probe.s + probe.lags.iter().cloned().fold(0.0, f64::max);
    let (_, bg, summary) = build_background(cfg, &grid, horizon)?;
    out.background = Some(summary);
    if probe.source.len() != grid.dim() {
        return Err(FlowError::Config(format!("probe source needs {} lattice coordinates", grid.dim())));
    }
    let y0 = grid.node(&probe.source);
    let mut samples = String::from("component,lag,time,sup_kernel,gaussian_deviation,mass,grad_x_scaled,hess_x_scaled\n");
    let mut gradient = String::from("component,s,sup_grad_y\n");
    let mut adjoint = String::from("component,s,sup_h,sup_h_minus_scalar,sup_h_plus_scalar\n");
    let mut fits = String::from("component,fitted_c,fitted_d,reported_c,reported_d,max_violation_ratio,audited_points,burn_in,audit_radius\n");
    let (mut dev, mut derr, mut mass, mut viol) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut any_dev, mut any_mass) = (false, false);
    let mut bounded: Option<bool> = None;
    for c in &probe.components {
        let mut pc = ProbeConfig::new(y0, probe.s, probe.lags.clone());
        pc.component = (c[0], c[1]);
        pc.step = cfg.step.clone();
        pc.gradient_ladder = probe.gradient_ladder.clone();
        pc.gradient_target = probe.gradient_target;
        let p = kernel_probe(&bg, &pc)?;
        let tag = format!("{}{}", c[0], c[1]);
        for s in &p.samples {
            let masses: Vec<String> = s.mass.iter().map(|m| format!("{m:.16e}")).collect();
            let _ = writeln!(
                samples,
                "{tag},{:.16e},{:.16e},{:.16e},{},{},{:.16e},{:.16e}",
                s.lag,
                s.time,
                s.sup_kernel,
                s.gaussian_deviation.map_or("nan".into(), |v| format!("{v:.16e}")),
                masses.join(";"),
                s.grad_x_scaled,
                s.hess_x_scaled
            );
        }
        for (s, v) in &p.report.gradient_y {
            let _ = writeln!(gradient, "{tag},{s:.16e},{v:.16e}");
        }
        for a in &p.report.adjoint_potential {
            let _ = writeln!(adjoint, "{tag},{:.16e},{:.16e},{:.16e},{:.16e}", a.s, a.sup_h, a.sup_h_minus_scalar, a.sup_h_plus_scalar);
        }
        let r = &p.report;
        let _ = writeln!(
            fits,
            "{tag},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{:.16e},{:.16e}",
            r.fitted_c, r.fitted_d, r.reported_c, r.reported_d, r.max_violation_ratio, r.audited_points, r.burn_in, r.audit_radius
        );
        out.headline(&format!("kernel_fitted_c_{tag}"), r.fitted_c);
        out.headline(&format!("kernel_fitted_d_{tag}"), r.fitted_d);
        if let Some(d) = r.max_gaussian_deviation {
            dev = dev.max(d);
            any_dev = true;
        }
        if let Some(m) = r.max_mass_error {
            mass = mass.max(m);
            any_mass = true;
        }
        derr = derr.max((r.fitted_d - 1.0).abs());
        viol = viol.max(r.max_violation_ratio);
        if let Some(b) = r.gradient_y_bounded {
            bounded = Some(bounded.unwrap_or(true) && b);
        }
        if let Some(last) = p.samples.last() {
            out.fields.push((format!("kernel_column_{tag}.csv"), last.column.clone()));
        }
    }
    if any_dev {
        out.metric("kernel_gaussian_deviation", dev);
    }
    if any_mass {
        out.metric("kernel_mass_error", mass);
    }
    out.metric("kernel_d_error", derr);
    out.metric("kernel_violation_ratio", viol);
    if let Some(b) = bounded {
        out.metric("kernel_gradient_bounded", if b { 1.0 } else { 0.0 });
    }
    out.table("kernel_samples.csv", samples);
    out.table("kernel_fit.csv", fits);
    out.table("kernel_gradient.csv", gradient);
    out.table("kernel_adjoint.csv", adjoint);
    Ok(out)
}

/// Seeded smooth trajectory `(a + b t/T) φ₁ + (t/T)² φ₂` on the given samples.
fn random_trajectory(cfg: &ExperimentConfig, grid: &Arc<Grid>, times: &[f64], seed: u64) -> Result<FlowTrajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p1 = cfg.inputs.sym2(grid, seed.wrapping_mul(2).wrapping_add(11))?;
    let p2 = cfg.inputs.sym2(grid, seed.wrapping_mul(2).wrapping_add(12))?;
    let a: f64 = rng.random_range(-1.0..1.0);
    let b: f64 = rng.random_range(-1.0..1.0);
    let horizon = times[times.len() - 1];
    let fields = times
        .iter()
        .map(|&t| {
            let s = t / horizon;
            Ok(p1.scale(a + b * s).axpy(s * s, &p2)?.with_time(t))
        })
        .collect::<Result<Vec<_>>>()?;
    FlowTrajectory::new(grid.clone(), times.to_vec(), fields, prescribed_meta(cfg))
}

fn prescribed_meta(cfg: &ExperimentConfig) -> crate::solver::StepMeta {
    crate::solver::StepMeta { integrator: "prescribed".into(), dt: 0.0, cfl: cfg.step.cfl, sample_stride: cfg.step.sample_stride }
}

fn random_forcing(cfg: &ExperimentConfig, grid: &Arc<Grid>, times: &[f64], seed: u64) -> Result<ForcingSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xF0F0);
    let r = cfg.inputs.sym2(grid, seed.wrapping_mul(3).wrapping_add(5))?;
    let s = cfg.inputs.connection(grid, seed.wrapping_mul(3).wrapping_add(6))?;
    let (a, b): (f64, f64) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let horizon = times[times.len() - 1];
    let parts = times
        .iter()
        .map(|&t| ForcingDecomposition { r_part: r.scale(a + t / horizon), s_part: s.scale(b - t / horizon) })
        .collect();
    Ok(ForcingSeries { times: times.to_vec(), parts })
}

fn norms(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let grid = cfg.grid.build()?;
    let audit_horizon = cfg.audit.as_ref().map_or(0.0, |a| {
        let t = if a.kinds.contains(&InequalityKind::ForcingLinearInT) {
            a.horizons.iter().cloned().fold(0.0, f64::max)
        } else {
            0.0
        };
        t.max(a.horizon)
    });
    let (_, bg, summary) = build_background(cfg, &grid, cfg.horizon.max(audit_horizon))?;
    out.background = Some(summary);
    let times = cfg.step.sample_times(&grid, 0.0, cfg.horizon)?;
    let ctx = NormContext::new(&bg, &times, cfg.horizon, &cfg.norm)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut csv = String::from("pair,norm,lhs_sum,rhs_sum,triangle_excess,alpha,homogeneity_error\n");
    let (mut tri, mut hom) = (f64::NEG_INFINITY, 0.0f64);
    for i in 0..cfg.pairs {
        let base = cfg.seed.wrapping_mul(1_000_003).wrapping_add(2 * i as u64);
        let alpha: f64 = rng.random_range(-3.0..3.0);
        let u = random_trajectory(cfg, &grid, &times, base)?;
        let v = random_trajectory(cfg, &grid, &times, base + 1)?;
        let (nu, nv) = (ctx.x_norm(&u)?.value, ctx.x_norm(&v)?.value);
        let nsum = ctx.x_norm(&u.axpy(1.0, &v)?)?.value;
        let nalpha = ctx.x_norm(&u.scale(alpha))?.value;
        let (te, he) = ((nsum - nu - nv) / (nu + nv), (nalpha - alpha.abs() * nu).abs() / (alpha.abs() * nu));
        let _ = writeln!(csv, "{i},x,{nsum:.16e},{:.16e},{te:.16e},{alpha:.16e},{he:.16e}", nu + nv);
        tri = tri.max(te);
        hom = hom.max(he);

        let p = random_forcing(cfg, &grid, &times, base)?;
        let q = random_forcing(cfg, &grid, &times, base + 1)?;
        let (np, nq) = (ctx.y_norm(&p)?.value, ctx.y_norm(&q)?.value);
        let nsum = ctx.y_norm(&p.axpy(1.0, &q)?)?.value;
        let nalpha = ctx.y_norm(&p.scale(alpha))?.value;
        let (te, he) = ((nsum - np - nq) / (np + nq), (nalpha - alpha.abs() * np).abs() / (alpha.abs() * np));
        let _ = writeln!(csv, "{i},y,{nsum:.16e},{:.16e},{te:.16e},{alpha:.16e},{he:.16e}", np + nq);
        tri = tri.max(te);
        hom = hom.max(he);
    }
    if cfg.pairs > 0 {
        out.metric("norm_triangle_excess", tri.max(0.0));
        out.metric("norm_homogeneity_error", hom);
        out.table("norm_axioms.csv", csv);
    }

    if let Some(audit) = &cfg.audit {
        let mut tables = vec![norm_inequality_audit(&bg, audit)?];
        for &r in &cfg.audit_resolutions {
            let g2 = Arc::new(Grid::with_stencil(grid.dim(), &vec![r; grid.dim()], grid.periods(), grid.stencil())?);
            let (_, bg2, _) = build_background(cfg, &g2, cfg.horizon.max(audit_horizon))?;
            tables.push(norm_inequality_audit(&bg2, audit)?);
        }
        let pooled = AuditTable::pooled(tables);
        let mut summary = String::from("kind,trials,min_ratio,max_ratio,median_ratio,spread,exponent\n");
        let mut spread = 0.0f64;
        for s in &pooled.summaries {
            let _ = writeln!(
                summary,
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                s.kind.name(),
                s.trials,
                s.min_ratio,
                s.max_ratio,
                s.median_ratio,
                s.spread,
                s.exponent.map_or("nan".into(), |e| format!("{e:.16e}"))
            );
            out.headline(&format!("audit_max_ratio_{}", s.kind.name()), s.max_ratio);
            out.headline(&format!("audit_spread_{}", s.kind.name()), s.spread);
            spread = spread.max(s.spread);
            if let Some(e) = s.exponent {
                out.headline("audit_exponent", e);
                out.metric("audit_exponent_error", (e - 1.0).abs());
            }
        }
        out.metric("audit_spread", spread);
        out.table("audit_rows.csv", pooled.to_csv());
        out.table("audit_summary.csv", summary);
    }
    Ok(out)
}

/// Everything the existence scenario computes, kept for the pullback scenario and tests.
pub struct ExistenceRun {
    pub g0: MetricField,
    pub background: BackgroundMode,
    pub summary: BackgroundSummary,
    pub problem: PicardProblem,
    /// Picard solution `h = ĝ − g₀`.
    pub picard: FlowTrajectory,
    pub trace: IterationTrace,
    /// Direct DeTurck solution `ĝ − g₀`.
    pub direct: FlowTrajectory,
    /// Largest entry of `h_picard − h_direct` over every sample.
    pub gap: f64,
}

impl ExistenceRun {
    /// `ĝ_t = g₀ + h_t` from the Picard solution.
    pub fn metric_trajectory(&self) -> Result<FlowTrajectory> {
        let g = self.g0.field();
        let fields = self.picard.fields.iter().map(|h| h.axpy(1.0, g)).collect::<Result<Vec<_>>>()?;
        FlowTrajectory::new(self.picard.grid.clone(), self.picard.times.clone(), fields, self.picard.meta.clone())
    }
}

/// Static-existence Picard solve on `grid` plus the direct solver on the same samples.
pub fn existence_run(cfg: &ExperimentConfig, grid: &Arc<Grid>) -> Result<ExistenceRun> {
    if cfg.background.evolving {
        return Err(FlowError::Config("the existence problem uses a static background".into()));
    }
    let (g0, bg, summary) = build_background(cfg, grid, cfg.horizon)?;
    let problem = PicardProblem::static_existence(&g0, cfg.horizon, cfg.delta)?
        .with_step(cfg.step.clone())
        .with_norm(cfg.norm.clone())
        .with_tolerance(cfg.tolerance(), cfg.max_iter);
    let ws = problem.workspace()?;
    let (picard, trace) = picard_iterate(&problem, &ws, ws.start(&problem)?)?;
    let direct = integrate_deturck_direct(&g0, &bg, cfg.horizon, &cfg.step)?;
    let gap = picard.axpy(-1.0, &direct)?.max_abs();
    Ok(ExistenceRun { g0, background: bg, summary, problem, picard, trace, direct, gap })
}

fn existence(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let grid = cfg.grid.build()?;
    let run = existence_run(cfg, &grid)?;
    out.background = Some(run.summary.clone());
    out.metric("existence_gap", run.gap);
    out.metric("existence_ratio", run.trace.measured_ratio.unwrap_or(0.0));
    out.headline("existence_iterations", run.trace.iterations as f64);
    out.headline("existence_converged", if run.trace.converged { 1.0 } else { 0.0 });
    out.headline("existence_norm", run.trace.records.last().map_or(0.0, |r| r.norm));
    out.headline("existence_sup", run.picard.max_abs());
    let mut gap = String::from("time,gap\n");
    for ((a, b), t) in run.picard.fields.iter().zip(&run.direct.fields).zip(&run.picard.times) {
        let _ = writeln!(gap, "{t:.16e},{:.16e}", a.axpy(-1.0, b)?.max_abs());
    }
    out.table("picard_trace.csv", run.trace.to_csv());
    out.table("existence_gap.csv", gap);
    out.fields.push(("picard_final.csv".into(), run.picard.last().clone()));
    out.fields.push(("direct_final.csv".into(), run.direct.last().clone()));
    out.trajectories.push(("picard".into(), run.picard));
    Ok(out)
}

/// Seeded contraction pair member with `‖v‖_{X_T} = radius · u`, `u ∈ [¼, 1]`.
pub fn ball_member(cfg: &ExperimentConfig, ws: &PicardWorkspace, radius: f64, seed: u64) -> Result<FlowTrajectory> {
    let grid = ws.norms.grid().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xC0FFEE);
    let p1 = cfg.inputs.sym2(&grid, seed.wrapping_mul(2).wrapping_add(101))?;
    let p2 = cfg.inputs.sym2(&grid, seed.wrapping_mul(2).wrapping_add(102))?;
    let b: f64 = rng.random_range(-1.0..1.0);
    let u: f64 = rng.random_range(0.25..=1.0);
    let horizon = ws.norms.horizon();
    let fields = ws
        .times
        .iter()
        .map(|&t| {
            let s = t / horizon;
            Ok(p1.scale(s).axpy(b * s * s, &p2)?.with_time(t))
        })
        .collect::<Result<Vec<_>>>()?;
    let shape = FlowTrajectory::new(grid, ws.times.clone(), fields, prescribed_meta(cfg))?;
    let n = ws.norms.x_norm(&shape)?.value;
    Ok(shape.scale(radius * u / n))
}

fn contraction(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let grid = cfg.grid.build()?;
    let (g0, _, summary) = build_background(cfg, &grid, cfg.horizon)?;
    out.background = Some(summary);
    let mut deltas = vec![cfg.delta];
    deltas.extend(cfg.deltas.iter().filter(|d| **d != cfg.delta));
    let mut csv = String::from("delta,pair,norm_v,norm_w,norm_difference,norm_image_difference,ratio\n");
    let mut scaling = Vec::new();
    for (di, &delta) in deltas.iter().enumerate() {
        let problem = PicardProblem::static_existence(&g0, cfg.horizon, delta)?.with_step(cfg.step.clone()).with_norm(cfg.norm.clone());
        let ws = problem.workspace()?;
        let mut worst = 0.0f64;
        for i in 0..cfg.pairs {
            let base = cfg.seed.wrapping_mul(7919).wrapping_add(2 * i as u64);
            let v = ball_member(cfg, &ws, delta, base)?;
            let w = ball_member(cfg, &ws, delta, base + 1)?;
            let r = contraction_ratio_with(&v, &w, &problem, &ws)?;
            let _ = writeln!(
                csv,
                "{delta:.16e},{i},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.norm_v, r.norm_w, r.norm_difference, r.norm_image_difference, r.ratio
            );
            worst = worst.max(r.ratio);
        }
        out.headline(&fmt_key("contraction_max_ratio_delta_", delta), worst);
        if di == 0 {
            out.metric("contraction_ratio", worst);
        }
        scaling.push((delta.ln(), worst.ln()));
    }
    if scaling.len() > 1 {
        let m = scaling.len() as f64;
        let (mx, my) = scaling.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / m, a.1 + p.1 / m));
        let num: f64 = scaling.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let den: f64 = scaling.iter().map(|p| (p.0 - mx).powi(2)).sum();
        out.headline("contraction_delta_exponent", num / den);
    }
    out.table("contraction_pairs.csv", csv);
    Ok(out)
}

/// One perturbation solve: Picard from the homogeneous evolution of `h₀`.
pub struct DependencePiece {
    pub h: FlowTrajectory,
    pub trace: IterationTrace,
    /// `sup |h|_{g_t}` over the piece.
    pub response: f64,
    /// `sup |h|_{g_t}` at the end of the piece.
    pub terminal: f64,
}

pub fn dependence_piece(cfg: &ExperimentConfig, bg: &BackgroundMode, h0: &TensorField, horizon: f64) -> Result<DependencePiece> {
    let problem = PicardProblem::perturbation(bg.clone(), h0.clone(), horizon, cfg.delta)?
        .with_step(cfg.step.clone())
        .with_norm(cfg.norm.clone())
        .with_tolerance(cfg.tolerance(), cfg.max_iter);
    let ws = problem.workspace()?;
    let (h, trace) = picard_iterate(&problem, &ws, ws.start(&problem)?)?;
    let response = sup_in_background(&h, bg)?;
    let end = *h.times.last().expect("trajectory has samples");
    let terminal = tensor_pointwise_norm(h.last(), &bg.metric_at(end)?)?.max_abs();
    Ok(DependencePiece { h, trace, response, terminal })
}

fn continuous_dependence(cfg: &ExperimentConfig) -> Result<Outcome> {
    chained(cfg, 1, "cd")
}

fn chained_dependence(cfg: &ExperimentConfig) -> Result<Outcome> {
    chained(cfg, cfg.pieces, "chain")
}

/// Shared body: `pieces = 1` is the plain continuous-dependence measurement.
fn chained(cfg: &ExperimentConfig, pieces: usize, prefix: &str) -> Result<Outcome> {
    let mut out = Outcome::default();
    let grid = cfg.grid.build()?;
    let (g0, bg, summary) = build_background(cfg, &grid, cfg.horizon)?;
    out.background = Some(summary);
    let phi = perturbation_direction(cfg, &grid, &g0)?;
    let piece_len = cfg.horizon / pieces as f64;
    let mut ladder = String::from("epsilon,response,constant,amplification,terminal_constant,iterations\n");
    let mut piece_csv = String::from("epsilon,piece,start,initial_size,response,constant,iterations,measured_ratio\n");
    let mut traces = String::from("epsilon,piece,iteration,norm,increment,ratio\n");
    let mut constants = Vec::new();
    let mut zero_response: Option<f64> = None;
    let (mut excess, mut amp_max) = (f64::NEG_INFINITY, 0.0f64);
    for &eps in &cfg.epsilons {
        let mut h0 = phi.scale(eps);
        let mut amplification = 1.0;
        let mut total = 0.0f64;
        let mut iterations = 0;
        let mut terminal = 0.0;
        for k in 0..pieces {
            let start = k as f64 * piece_len;
            let bg_k = bg.shifted(start);
            let size = if k == 0 { eps } else { tensor_pointwise_norm(&h0, &bg_k.initial_metric()?)?.max_abs() };
            let piece = dependence_piece(cfg, &bg_k, &h0, piece_len).map_err(|e| e.context(format!("piece {k} of {pieces}")))?;
            let c = if size > 0.0 { piece.response / size } else { 0.0 };
            let _ = writeln!(
                piece_csv,
                "{eps:.16e},{k},{start:.16e},{size:.16e},{:.16e},{c:.16e},{},{}",
                piece.response,
                piece.trace.iterations,
                piece.trace.measured_ratio.map_or("nan".into(), |r| format!("{r:.16e}"))
            );
            for r in &piece.trace.records {
                let _ = writeln!(
                    traces,
                    "{eps:.16e},{k},{},{:.16e},{:.16e},{}",
                    r.iteration,
                    r.norm,
                    r.increment,
                    r.ratio.map_or(String::new(), |v| format!("{v:.16e}"))
                );
            }
            if pieces > 1 {
                out.headline(&format!("{}_piece{k}", fmt_key("chain_constant_eps_", eps)), c);
            }
            amplification *= c;
            total = total.max(piece.response);
            iterations += piece.trace.iterations;
            terminal = piece.terminal;
            h0 = piece.h.last().clone();
        }
        let constant = if eps > 0.0 { total / eps } else { 0.0 };
        let terminal_constant = if eps > 0.0 { terminal / eps } else { 0.0 };
        let _ = writeln!(ladder, "{eps:.16e},{total:.16e},{constant:.16e},{amplification:.16e},{terminal_constant:.16e},{iterations}");
        out.headline(&fmt_key(&format!("{prefix}_response_eps_"), eps), total);
        if eps == 0.0 {
            zero_response = Some(total);
        } else {
            constants.push(constant);
            out.headline(&fmt_key(&format!("{prefix}_constant_eps_"), eps), constant);
            out.headline(&fmt_key(&format!("{prefix}_amplification_eps_"), eps), amplification);
            // The sup over the piece includes t = 0, so the constant is at least 1; the end value shows the decay.
            out.headline(&fmt_key(&format!("{prefix}_terminal_constant_eps_"), eps), terminal_constant);
            excess = excess.max(total / (amplification * eps) - 1.0);
            amp_max = amp_max.max(amplification);
        }
    }
    if prefix == "cd" {
        if let Some(&c0) = constants.first() {
            let spread = constants.iter().map(|c| (c / c0 - 1.0).abs()).fold(0.0, f64::max);
            out.metric("cd_ladder_spread", spread);
        }
        if let Some(z) = zero_response {
            out.metric("cd_zero_response", z);
        }
        out.table("cd_ladder.csv", ladder);
        out.table("cd_traces.csv", traces);
    } else {
        if !constants.is_empty() {
            out.metric("chain_bound_excess", excess);
            out.metric("chain_amplification", amp_max);
        }
        out.table("chain_ladder.csv", ladder);
        out.table("chain_pieces.csv", piece_csv);
        out.table("chain_traces.csv", traces);
    }
    Ok(out)
}

fn pullback(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let coarse = cfg.grid.build()?;
    let fine = Arc::new(coarse.refined(cfg.refine.expect("validated"))?);
    let mut csv = String::from("resolution,sign,residual,ricci_scale,max_displacement,min_jacobian,max_jacobian,max_vector_field,picard_gap\n");
    let mut residuals = Vec::new();
    for (i, grid) in [coarse, fine].iter().enumerate() {
        let run = existence_run(cfg, grid)?;
        if i == 0 {
            out.background = Some(run.summary.clone());
        }
        let ghat = run.metric_trajectory()?;
        let mut signs = vec![VelocitySign::Plus];
        if i == 0 {
            signs.push(VelocitySign::Minus);
        }
        for sign in signs {
            let (recovered, rep) = if sign == VelocitySign::Plus {
                recover_ricci_flow(&ghat, &run.background)?
            } else {
                recover_ricci_flow_with(&ghat, &run.background, sign)?
            };
            let _ = writeln!(
                csv,
                "{},{:?},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                grid.resolution()[0],
                sign,
                rep.residual,
                rep.ricci_scale,
                rep.max_displacement,
                rep.min_jacobian,
                rep.max_jacobian,
                rep.max_vector_field,
                run.gap
            );
            match sign {
                VelocitySign::Plus => {
                    out.headline(&format!("pullback_residual_{}", grid.resolution()[0]), rep.residual);
                    out.headline(&format!("pullback_max_vector_field_{}", grid.resolution()[0]), rep.max_vector_field);
                    residuals.push(rep.residual);
                    if i == 1 {
                        out.fields.push(("recovered_final.csv".into(), recovered.last().clone()));
                    }
                }
                VelocitySign::Minus => out.headline("pullback_residual_opposite_sign", rep.residual),
            }
        }
    }
    let (plus, minus) = sign_probe(cfg, &cfg.grid.build()?)?;
    out.headline("pullback_sign_probe_plus", plus);
    out.headline("pullback_sign_probe_minus", minus);
    out.metric("pullback_sign_separation", minus / plus);
    out.metric("pullback_residual", residuals[1]);
    out.metric("pullback_shrink", residuals[0] / residuals[1]);
    out.table("pullback.csv", csv);
    Ok(out)
}

/// Pullback residuals `(plus, minus)` for a DeTurck flow started off the background by a
/// seeded perturbation, so that `X` is nonzero from the start. Along the existence run
/// itself `X` vanishes in two dimensions and both signs agree.
pub fn sign_probe(cfg: &ExperimentConfig, grid: &Arc<Grid>) -> Result<(f64, f64)> {
    let (g0, bg, _) = build_background(cfg, grid, cfg.horizon)?;
    let h0 = perturbation_direction(cfg, grid, &g0)?.scale(cfg.sign_probe_epsilon);
    let start = MetricField::new(g0.field().axpy(1.0, &h0)?)?;
    let h = integrate_deturck_direct(&start, &bg, cfg.horizon, &cfg.step)?;
    let fields = h.fields.iter().map(|f| f.axpy(1.0, g0.field())).collect::<Result<Vec<_>>>()?;
    let ghat = FlowTrajectory::new(h.grid.clone(), h.times.clone(), fields, h.meta.clone())?;
    let (_, plus) = recover_ricci_flow_with(&ghat, &bg, VelocitySign::Plus)?;
    let (_, minus) = recover_ricci_flow_with(&ghat, &bg, VelocitySign::Minus)?;
    Ok((plus.residual, minus.residual))
}

/// Names and one-line descriptions of every scenario.
pub fn list_scenarios() -> Vec<(&'static str, &'static str)> {
    Scenario::ALL.iter().map(|s| (s.name(), s.summary())).collect()
}
