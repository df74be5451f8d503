//! One function per CLI subcommand; each writes its files into `out`.

use crate::config::{ExperimentConfig, PhysicsKind};
use crate::error::Result;
use crate::experiments::{
    build_problem, run_convergence_study, run_test1, run_test2, source_raster, wells, Problem,
};
use crate::manifest::RunOutput;
use crate::table::{PlotData, ResultTable};
use nlmc_core::fine_solver::{
    solve_monotone, solve_two_phase, solve_unsaturated, LinearLaw, TimeSource, TwoPhaseConfig, UnsaturatedLaw,
};
use nlmc_core::mesh::SpaceTimePartition;
use nlmc_core::nlmc::{
    assemble_upscaled, build_basis_linear, solve_coarse_linear, solve_coarse_nonlinear, CoarseSolution, NlmcContext,
};
use nlmc_core::spacetime::{solve_spacetime_coarse, storage_coefficients, SpaceTimeContext};
use nlmc_core::surrogate::{build_graph, generate_dataset, train, Dataset, ModelKind, Physics, TransContext};
use std::path::Path;

fn fine_raster(out: &mut RunOutput, name: &str, p: &Problem, values: &[f64]) -> Result<()> {
    out.raster(name, p.fine.nx, p.fine.ny, values)
}

fn macro_table(p: &Problem, values: &[f64], multipliers: Option<&[f64]>) -> Result<ResultTable> {
    let mut t = ResultTable::new(&["continuum", "coarse_cell", "kind", "macro", "multiplier"])?;
    for (c, cont) in p.space.continua.iter().enumerate() {
        t.push(vec![
            c.into(),
            cont.coarse_cell.into(),
            format!("{:?}", cont.kind).to_lowercase().into(),
            values[c].into(),
            multipliers.map_or(f64::NAN, |m| m[c]).into(),
        ])?;
    }
    Ok(t)
}

/// Monotone elliptic fine solve.
pub fn solve_fine(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let p = build_problem(cfg)?;
    let f = source_raster(cfg, &p);
    let law = cfg.law.monotone();
    let rep = out.time("solve", || {
        solve_monotone(&p.fine, &p.field, &law, &f, cfg.nlmc.boundary.into(), &cfg.solver.newton)
    })?;
    fine_raster(out, "permeability.txt", &p, &p.field.values)?;
    fine_raster(out, "u_fine.txt", &p, &rep.u)?;
    let mut t = ResultTable::new(&["iterations", "residual", "conservation", "used_picard"])?;
    t.push(vec![
        rep.iterations.into(),
        rep.residual.into(),
        rep.conservation.into(),
        rep.used_picard.to_string().into(),
    ])?;
    out.table("fine.csv", &t)
}

fn linear_context<'a>(cfg: &ExperimentConfig, p: &'a Problem) -> Result<NlmcContext<'a>> {
    Ok(NlmcContext::new(&p.space, &p.field.values, &LinearLaw, cfg.nlmc.boundary.into())?
        .with_newton(cfg.solver.newton)
        .with_exec(cfg.output.exec))
}

/// Linear constrained basis, its moment residuals and the upscaled matrix.
pub fn build_basis(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let p = build_problem(cfg)?;
    let ctx = linear_context(cfg, &p)?;
    let basis = out.time("basis", || build_basis_linear(&ctx, cfg.nlmc.layers))?;
    let f = source_raster(cfg, &p);
    let sys = assemble_upscaled(&ctx, &basis, &f)?;
    let mut t = ResultTable::new(&["continuum", "coarse_cell", "support_cells", "moment_residual"])?;
    for b in &basis.functions {
        t.push(vec![
            b.continuum.into(),
            p.space.continua[b.continuum].coarse_cell.into(),
            b.rect.len().into(),
            b.moment_residual.into(),
        ])?;
    }
    out.table("basis.csv", &t)?;
    out.text("upscaled_matrix.txt", &sys.to_coordinate_text())
}

/// Linear NLMC through the Galerkin basis system.
pub fn solve_nlmc(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let p = build_problem(cfg)?;
    let ctx = linear_context(cfg, &p)?;
    let f = source_raster(cfg, &p);
    let (m, u_ms) = out.time("solve", || -> Result<_> {
        let basis = build_basis_linear(&ctx, cfg.nlmc.layers)?;
        let sys = assemble_upscaled(&ctx, &basis, &f)?;
        Ok(solve_coarse_linear(&ctx, &sys, &basis)?)
    })?;
    out.table("macro.csv", &macro_table(&p, &m.values, None)?)?;
    fine_raster(out, "u_ms.txt", &p, &u_ms)
}

fn write_coarse(out: &mut RunOutput, p: &Problem, sol: &CoarseSolution) -> Result<()> {
    out.table("macro.csv", &macro_table(p, &sol.macro_values, Some(&sol.multipliers))?)?;
    fine_raster(out, "u_ms.txt", p, &sol.u_ms)?;
    let mut t = ResultTable::new(&["iteration", "residual"])?;
    for (i, r) in sol.residual_history.iter().enumerate() {
        t.push(vec![i.into(), (*r).into()])?;
    }
    out.table("residuals.csv", &t)?;
    out.plot("residuals.plot", &PlotData::from_table(&t, "iteration", "residual", None, true)?)
}

/// Localized nonlinear NLMC with the monotone law.
pub fn solve_nonlinear(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let p = build_problem(cfg)?;
    let law = cfg.law.monotone();
    let ctx = NlmcContext::new(&p.space, &p.field.values, &law, cfg.nlmc.boundary.into())?
        .with_newton(cfg.solver.newton)
        .with_exec(cfg.output.exec);
    let f = source_raster(cfg, &p);
    let sol = out.time("solve", || solve_coarse_nonlinear(&ctx, cfg.nlmc.layers, &f, &cfg.solver.coarse))?;
    write_coarse(out, &p, &sol)
}

/// Space-time NLMC for the unsaturated equation.
pub fn solve_spacetime(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let p = build_problem(cfg)?;
    let cons = cfg.law.constitutive();
    let law = UnsaturatedLaw { constitutive: cons };
    let storage = storage_coefficients(&p.fractures.indicator, &cons);
    let base = NlmcContext::new(&p.space, &p.field.values, &law, cfg.nlmc.boundary.into())?
        .with_newton(cfg.solver.newton)
        .with_exec(cfg.output.exec);
    let t = &cfg.time;
    let part = SpaceTimePartition::uniform(t.t_max, t.intervals, t.steps / t.intervals, t.extension)?;
    let ctx = SpaceTimeContext::new(&base, &storage, &part)?;
    let src = TimeSource::constant(source_raster(cfg, &p));
    let sol = out.time("solve", || solve_spacetime_coarse(&ctx, cfg.nlmc.layers, &src, &cfg.solver.coarse))?;
    let mut table = ResultTable::new(&["interval", "continuum", "macro", "multiplier"])?;
    for (n, (u, l)) in sol.macro_series.iter().zip(&sol.multipliers).enumerate() {
        for c in 0..u.len() {
            table.push(vec![n.into(), c.into(), u[c].into(), l[c].into()])?;
        }
    }
    out.table("macro_series.csv", &table)?;
    fine_raster(out, "u_final.txt", &p, sol.states.last().unwrap())
}

/// Fine run of the configured physics, sampled into a transmissibility dataset.
pub fn build_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let p = build_problem(cfg)?;
    let cons = cfg.law.constitutive();
    let steps = cfg.time.steps;
    let dt = cfg.time.t_max / steps as f64;
    let graph = build_graph(&p.space, &p.field.values);
    let s = &cfg.surrogate;
    match s.physics {
        PhysicsKind::Unsaturated => {
            let src = TimeSource::constant(source_raster(cfg, &p));
            let fine = solve_unsaturated(
                &p.fine,
                &p.field,
                &p.fractures.indicator,
                &cons,
                dt,
                steps,
                &src,
                cfg.nlmc.boundary.into(),
                &cfg.solver.newton,
            )?;
            let ctx = TransContext::new(&p.space, &p.field.values, Physics::Unsaturated(cons));
            Ok(generate_dataset(&ctx, &graph, &fine.states, None, s.stride, s.seed, cfg.output.exec)?)
        }
        PhysicsKind::TwoPhase => {
            let run = solve_two_phase(
                &p.fine,
                &p.field,
                &p.fractures.indicator,
                &cons,
                &wells(cfg, &p),
                &vec![0.0; p.fine.len()],
                &TwoPhaseConfig::new(dt, steps),
            )?;
            let ctx = TransContext::new(&p.space, &p.field.values, Physics::TwoPhase(cons));
            Ok(generate_dataset(
                &ctx,
                &graph,
                &run.pressure,
                Some(&run.saturation),
                s.stride,
                s.seed,
                cfg.output.exec,
            )?)
        }
    }
}

pub fn gen_dataset(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let d = out.time("dataset", || build_dataset(cfg))?;
    out.text("dataset.csv", &d.to_csv()?)
}

/// Trains the configured regressor on a dataset file, or on a freshly
/// generated dataset when `dataset` is `None`.
pub fn train_surrogate(cfg: &ExperimentConfig, dataset: Option<&Path>, out: &mut RunOutput) -> Result<()> {
    let d = match dataset {
        Some(path) => Dataset::read(path, cfg.surrogate.seed)?,
        None => out.time("dataset", || build_dataset(cfg))?,
    };
    let kind = ModelKind::parse(&cfg.surrogate.model)?;
    let (reg, report) = out.time("train", || train(kind, &d, cfg.surrogate.seed))?;
    out.text("regressor.txt", &reg.to_text())?;
    out.text("validation.csv", &report.to_csv())
}

fn record(out: &mut RunOutput, timings: &[(String, f64)]) {
    for (s, t) in timings {
        out.record(s, *t);
    }
}

fn coarse_raster(out: &mut RunOutput, name: &str, n: usize, values: &[f64]) -> Result<()> {
    out.raster(name, n, n, values)
}

pub fn test1(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let r = run_test1(cfg)?;
    record(out, &r.timings);
    out.table("errors.csv", &r.table)?;
    let n = cfg.grid.coarse_cells;
    let k = cfg.time.steps;
    coarse_raster(out, "mean_fine.txt", n, &r.reference[k])?;
    coarse_raster(out, "mean_nl.txt", n, &r.nl[k])?;
    coarse_raster(out, "mean_up.txt", n, &r.up[k])?;
    if let Some((s, means)) = &r.surrogate {
        coarse_raster(out, "mean_surrogate.txt", n, &means[k])?;
        out.text("validation.csv", &s.report.to_csv())?;
    }
    out.raster("u_fine.txt", cfg.grid.fine_cells, cfg.grid.fine_cells, &r.fine.states[k])?;
    out.plot("errors.plot", &PlotData::from_table(&r.table, "step", "error", Some("method"), true)?)
}

pub fn test2(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let r = run_test2(cfg)?;
    record(out, &r.timings);
    out.table("errors.csv", &r.table)?;
    let n = cfg.grid.coarse_cells;
    let nf = cfg.grid.fine_cells;
    for &k in &r.snapshots {
        out.raster(&format!("pressure_fine_{k}.txt"), nf, nf, &r.fine.pressure[k])?;
        out.raster(&format!("saturation_fine_{k}.txt"), nf, nf, &r.fine.saturation[k])?;
        coarse_raster(out, &format!("saturation_up_{k}.txt"), n, &r.up.saturation[k])?;
    }
    if let Some((s, _)) = &r.surrogate {
        out.text("validation.csv", &s.report.to_csv())?;
    }
    out.plot(
        "saturation_errors.plot",
        &PlotData::from_table(&r.table, "step", "error_s", Some("method"), true)?,
    )
}

pub fn convergence(cfg: &ExperimentConfig, with_global: bool, out: &mut RunOutput) -> Result<()> {
    let t = out.time("study", || run_convergence_study(cfg, with_global))?;
    out.table("convergence.csv", &t)?;
    out.plot("convergence.plot", &PlotData::from_table(&t, "h", "energy_error", Some("layers"), true)?)
}
