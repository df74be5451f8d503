//! Experiment drivers shared by the CLI and the acceptance suite.

use crate::config::{ExperimentConfig, FractureSource, SourceKind};
use crate::error::{HarnessError, Result};
use crate::table::{Cell, ResultTable};
use nlmc_core::continua::{build_continua, AuxiliarySpace};
use nlmc_core::fine_solver::{
    solve_monotone, solve_two_phase, solve_unsaturated, GlobalBoundary, TimeSeries, TimeSource, TwoPhaseConfig,
    TwoPhaseRun, WellSet,
};
use nlmc_core::media::io::{read_field, read_fractures};
use nlmc_core::media::{
    compute_weights, generate_field, rasterize_fractures, CoefficientField, FractureRaster, FractureSet, Segment,
};
use nlmc_core::mesh::{build_grids, build_partition_of_unity, CoarseGrid, FineGrid};
use nlmc_core::nlmc::analysis::fit_log_linear;
use nlmc_core::nlmc::{solve_coarse_nonlinear, solve_global_method, NlmcContext};
use nlmc_core::surrogate::{
    baseline_upscale, build_graph, coarse_mean_error, generate_dataset, solve_test1_coarse, solve_test2_coarse,
    train, CoarseRun, ContinuumGraph, Dataset, ExactProvider, ModelKind, Physics, Regressor, SurrogateProvider,
    TrainReport, TransContext, TransmissibilityProvider, TwoPhaseCoarseRun, UpscaledProvider,
};
use std::time::Instant;

/// Grids, medium and continua of one configuration.
pub struct Problem {
    pub coarse: CoarseGrid,
    pub fine: FineGrid,
    pub field: CoefficientField,
    pub fractures: FractureRaster,
    pub space: AuxiliarySpace,
}

/// The two crossing segments of the desk-scale tests.
pub fn two_fracture_segments() -> Vec<Segment> {
    vec![Segment::new(0.15, 0.3, 0.8, 0.45), Segment::new(0.55, 0.1, 0.4, 0.85)]
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let g = &cfg.grid;
    let ratio = g.fine_cells / g.coarse_cells;
    let (coarse, fine) = build_grids(g.coarse_cells, g.coarse_cells, ratio)?;
    let m = &cfg.media;
    let base = match &m.field_file {
        Some(p) => {
            let f = read_field(p)?;
            if (f.nx, f.ny) != (fine.nx, fine.ny) {
                return Err(HarnessError::Config(format!(
                    "field file {} is {}x{}, grid is {}x{}",
                    p.display(),
                    f.nx,
                    f.ny,
                    fine.nx,
                    fine.ny
                )));
            }
            f
        }
        None => generate_field(&fine, m.seed, m.contrast, m.correlation_length)?,
    };
    let segments = match m.fractures {
        FractureSource::None => vec![],
        FractureSource::Two => two_fracture_segments(),
        FractureSource::File => {
            let p = m.fracture_file.as_ref().ok_or_else(|| HarnessError::Config("missing fracture_file".into()))?;
            read_fractures(p)?
        }
    };
    let (fractures, field) = if segments.is_empty() {
        (FractureRaster::empty(&fine), base)
    } else {
        let set = FractureSet {
            segments,
            permeability: m.fracture_permeability,
        };
        rasterize_fractures(&set, &fine, &base)?
    };
    let pou = build_partition_of_unity(&coarse, &fine)?;
    let weights = compute_weights(&field, &pou)?;
    let space = build_continua(&coarse, &fine, &fractures.indicator, &weights)?;
    Ok(Problem {
        coarse,
        fine,
        field,
        fractures,
        space,
    })
}

fn block_cells(p: &Problem, cell: [usize; 2]) -> Vec<usize> {
    p.coarse
        .fine_block(p.coarse.index(cell[0], cell[1]))
        .iter()
        .map(|(x, y)| p.fine.index(x, y))
        .collect()
}

/// Source density per fine cell.
pub fn source_raster(cfg: &ExperimentConfig, p: &Problem) -> Vec<f64> {
    use std::f64::consts::PI;
    let s = &cfg.source;
    match s.kind {
        SourceKind::Zero => vec![0.0; p.fine.len()],
        SourceKind::Polynomial => p.fine.sample(|x, y| 1.0 + x * (1.0 - y)),
        SourceKind::Smooth => p.fine.sample(|x, y| s.rate * (PI * x).cos() * (PI * y).cos()),
        SourceKind::Dipole => {
            let mut f = vec![0.0; p.fine.len()];
            for i in block_cells(p, s.from) {
                f[i] += s.rate;
            }
            for i in block_cells(p, s.to) {
                f[i] -= s.rate;
            }
            f
        }
    }
}

pub fn wells(cfg: &ExperimentConfig, p: &Problem) -> WellSet {
    WellSet {
        injector: block_cells(p, cfg.source.from),
        producer: block_cells(p, cfg.source.to),
        rate: cfg.source.rate,
    }
}

pub struct SurrogateOutcome {
    pub dataset: Dataset,
    pub regressor: Regressor,
    pub report: TrainReport,
}

fn fit_surrogate(
    cfg: &ExperimentConfig,
    ctx: &TransContext<'_>,
    graph: &ContinuumGraph,
    states: &[Vec<f64>],
    sats: Option<&[Vec<f64>]>,
) -> Result<SurrogateOutcome> {
    let s = &cfg.surrogate;
    let dataset = generate_dataset(ctx, graph, states, sats, s.stride, s.seed, cfg.output.exec)?;
    let (regressor, report) = train(ModelKind::parse(&s.model)?, &dataset, s.seed)?;
    Ok(SurrogateOutcome {
        dataset,
        regressor,
        report,
    })
}

/// Runs one stage, records its wall time and tags failures with its name.
fn timed<T, E: Into<HarnessError>>(
    timings: &mut Vec<(String, f64)>,
    stage: &str,
    f: impl FnOnce() -> std::result::Result<T, E>,
) -> Result<T> {
    let t = Instant::now();
    let out = f();
    timings.push((stage.to_string(), t.elapsed().as_secs_f64()));
    out.map_err(|e| HarnessError::Stage {
        stage: stage.to_string(),
        source: Box::new(e.into()),
    })
}

pub struct Test1Outcome {
    /// Columns `step, method, error`.
    pub table: ResultTable,
    pub snapshots: Vec<usize>,
    pub fine: TimeSeries,
    /// Plain coarse means of the fine states at every time node.
    pub reference: Vec<Vec<f64>>,
    /// Coarse-cell means of each coarse model at every time node.
    pub nl: Vec<Vec<f64>>,
    pub up: Vec<Vec<f64>>,
    pub surrogate: Option<(SurrogateOutcome, Vec<Vec<f64>>)>,
    pub nl_run: CoarseRun,
    pub timings: Vec<(String, f64)>,
}

impl Test1Outcome {
    pub fn error(&self, method: &str, step: usize) -> Option<f64> {
        let t = &self.table;
        t.find("method", method)
            .into_iter()
            .find(|&r| t.num(r, "step") == Some(step as f64))
            .and_then(|r| t.num(r, "error"))
    }
}

/// Unsaturated flow: fine reference, NL coarse model with exact
/// transmissibilities, the upscaled baseline and optionally the surrogate.
pub fn run_test1(cfg: &ExperimentConfig) -> Result<Test1Outcome> {
    cfg.validate()?;
    let mut timings = Vec::new();
    let p = build_problem(cfg)?;
    let cons = cfg.law.constitutive();
    let exec = cfg.output.exec;
    let steps = cfg.time.steps;
    let dt = cfg.time.t_max / steps as f64;
    let src = TimeSource::constant(source_raster(cfg, &p));
    let fine = timed(&mut timings, "fine", || {
        solve_unsaturated(
            &p.fine,
            &p.field,
            &p.fractures.indicator,
            &cons,
            dt,
            steps,
            &src,
            cfg.nlmc.boundary.into(),
            &cfg.solver.newton,
        )
    })?;
    let ctx = TransContext::new(&p.space, &p.field.values, Physics::Unsaturated(cons));
    let graph = build_graph(&p.space, &p.field.values);
    let picard = cfg.solver.picard();
    let exact = ExactProvider::new(&ctx, &graph, exec);
    let nl_run = timed(&mut timings, "nl_exact", || {
        solve_test1_coarse(&exact, &cons, &p.fractures.indicator, &src, dt, steps, &picard)
    })?;
    let cells = timed(&mut timings, "upscale", || baseline_upscale(&p.coarse, &p.fine, &p.field.values, exec))?;
    let up_provider = UpscaledProvider {
        cells: &cells,
        physics: Physics::Unsaturated(cons),
    };
    let up = timed(&mut timings, "up", || {
        solve_test1_coarse(&up_provider, &cons, &p.fractures.indicator, &src, dt, steps, &picard)
    })?
    .means;
    let layout = exact.layout();
    let nl: Vec<Vec<f64>> = nl_run.means.iter().map(|m| layout.cell_means(m)).collect();
    let reference: Vec<Vec<f64>> = fine.states.iter().map(|u| cells.layout.means(u)).collect();
    let surrogate = if cfg.surrogate.enabled {
        let out = timed(&mut timings, "surrogate_fit", || fit_surrogate(cfg, &ctx, &graph, &fine.states, None))?;
        let sp = SurrogateProvider::new(&ctx, &graph, &out.regressor, exec);
        let run = timed(&mut timings, "nl_surrogate", || {
            solve_test1_coarse(&sp, &cons, &p.fractures.indicator, &src, dt, steps, &picard)
        })?;
        let means: Vec<Vec<f64>> = run.means.iter().map(|m| layout.cell_means(m)).collect();
        Some((out, means))
    } else {
        None
    };
    let snapshots = vec![(steps / 2).max(1), steps];
    let mut table = ResultTable::new(&["step", "method", "error"])?;
    for &k in &snapshots {
        let r = &reference[k];
        table.push(vec![k.into(), "nl_exact".into(), coarse_mean_error(r, &nl[k]).into()])?;
        table.push(vec![k.into(), "up".into(), coarse_mean_error(r, &up[k]).into()])?;
        if let Some((_, s)) = &surrogate {
            table.push(vec![k.into(), "nl_surrogate".into(), coarse_mean_error(r, &s[k]).into()])?;
            table.push(vec![k.into(), "surrogate_vs_exact".into(), coarse_mean_error(&nl[k], &s[k]).into()])?;
        }
    }
    Ok(Test1Outcome {
        table,
        snapshots,
        fine,
        reference,
        nl,
        up,
        surrogate,
        nl_run,
        timings,
    })
}

pub struct Test2Outcome {
    /// Columns `step, method, error_p, error_s`.
    pub table: ResultTable,
    pub snapshots: Vec<usize>,
    pub fine: TwoPhaseRun,
    pub nl: TwoPhaseCoarseRun,
    pub up: TwoPhaseCoarseRun,
    pub surrogate: Option<(SurrogateOutcome, TwoPhaseCoarseRun)>,
    pub timings: Vec<(String, f64)>,
}

impl Test2Outcome {
    pub fn errors(&self, method: &str, step: usize) -> Option<(f64, f64)> {
        let t = &self.table;
        let r = t
            .find("method", method)
            .into_iter()
            .find(|&r| t.num(r, "step") == Some(step as f64))?;
        Some((t.num(r, "error_p")?, t.num(r, "error_s")?))
    }
}

/// Snapshot steps at fractions 3/7 and 1 of the run.
pub fn two_phase_snapshots(steps: usize) -> Vec<usize> {
    vec![(steps * 3 / 7).max(1), steps]
}

/// Two-phase IMPES: fine reference, NL coarse model, upscaled baseline and
/// optionally the surrogate.
pub fn run_test2(cfg: &ExperimentConfig) -> Result<Test2Outcome> {
    cfg.validate()?;
    let mut timings = Vec::new();
    let p = build_problem(cfg)?;
    let cons = cfg.law.constitutive();
    let exec = cfg.output.exec;
    let steps = cfg.time.steps;
    let tp = TwoPhaseConfig::new(cfg.time.t_max / steps as f64, steps);
    let w = wells(cfg, &p);
    let s0 = vec![0.0; p.fine.len()];
    let fine = timed(&mut timings, "fine", || {
        solve_two_phase(&p.fine, &p.field, &p.fractures.indicator, &cons, &w, &s0, &tp)
    })?;
    let ctx = TransContext::new(&p.space, &p.field.values, Physics::TwoPhase(cons));
    let graph = build_graph(&p.space, &p.field.values);
    let picard = cfg.solver.picard();
    let exact = ExactProvider::new(&ctx, &graph, exec);
    let nl = timed(&mut timings, "nl_exact", || {
        solve_test2_coarse(&exact, &cons, &p.fractures.indicator, &w, &s0, &tp, &picard)
    })?;
    let cells = timed(&mut timings, "upscale", || baseline_upscale(&p.coarse, &p.fine, &p.field.values, exec))?;
    let up_provider = UpscaledProvider {
        cells: &cells,
        physics: Physics::TwoPhase(cons),
    };
    let up = timed(&mut timings, "up", || {
        solve_test2_coarse(&up_provider, &cons, &p.fractures.indicator, &w, &s0, &tp, &picard)
    })?;
    let surrogate = if cfg.surrogate.enabled {
        let out = timed(&mut timings, "surrogate_fit", || {
            fit_surrogate(cfg, &ctx, &graph, &fine.pressure, Some(&fine.saturation))
        })?;
        let sp = SurrogateProvider::new(&ctx, &graph, &out.regressor, exec);
        let run = timed(&mut timings, "nl_surrogate", || {
            solve_test2_coarse(&sp, &cons, &p.fractures.indicator, &w, &s0, &tp, &picard)
        })?;
        Some((out, run))
    } else {
        None
    };
    let layout = exact.layout();
    let snapshots = two_phase_snapshots(steps);
    let mut table = ResultTable::new(&["step", "method", "error_p", "error_s"])?;
    for &k in &snapshots {
        let pr = cells.layout.means(&fine.pressure[k]);
        let sr = cells.layout.means(&fine.saturation[k]);
        let row = |name: &str, p: &[f64], s: &[f64]| -> Vec<Cell> {
            vec![k.into(), name.into(), coarse_mean_error(&pr, p).into(), coarse_mean_error(&sr, s).into()]
        };
        table.push(row(
            "nl_exact",
            &layout.cell_means(&nl.pressure[k]),
            &layout.cell_means(&nl.saturation[k]),
        ))?;
        table.push(row("up", &up.pressure[k], &up.saturation[k]))?;
        if let Some((_, s)) = &surrogate {
            table.push(row(
                "nl_surrogate",
                &layout.cell_means(&s.pressure[k]),
                &layout.cell_means(&s.saturation[k]),
            ))?;
        }
    }
    Ok(Test2Outcome {
        table,
        snapshots,
        fine,
        nl,
        up,
        surrogate,
        timings,
    })
}

/// Columns of the convergence table. Data rows have `kind = run`; fit rows
/// (`h_ratio`, `layer_ratio`, `layer_r2`) carry their result in `value`.
pub const CONVERGENCE_COLUMNS: [&str; 8] =
    ["kind", "coarse_cells", "h", "layers", "energy_error", "global_gap", "value", "status"];

/// Energy errors of localized nonlinear NLMC against the fine solution over
/// a sweep of coarse sizes and layer counts on one fine grid.
///
/// `global_gap` is ‖u_ms(M) − u_glo‖_a / ‖u_glo‖_a when `with_global` is
/// set, NaN otherwise. Failed runs become rows with a failure status.
pub fn run_convergence_study(cfg: &ExperimentConfig, with_global: bool) -> Result<ResultTable> {
    let sweep = &cfg.convergence;
    if sweep.coarse_cells.is_empty() || sweep.layers.is_empty() {
        return Err(HarnessError::Config("convergence sweep is empty".into()));
    }
    let mut table = ResultTable::new(&CONVERGENCE_COLUMNS)?;
    let law = cfg.law.monotone();
    let boundary: GlobalBoundary = cfg.nlmc.boundary.into();
    let mut fine_ref: Option<Vec<f64>> = None;
    // (coarse cells, layers, energy error, global gap)
    let mut ok: Vec<(usize, usize, f64, f64)> = Vec::new();
    for &nc in &sweep.coarse_cells {
        let mut c = cfg.clone();
        c.grid.coarse_cells = nc;
        c.source.from = [0, 0];
        c.source.to = [nc - 1, nc - 1];
        let fail = |table: &mut ResultTable, m: usize, e: &dyn std::fmt::Display| {
            table.push(vec![
                "run".into(),
                nc.into(),
                (1.0 / nc as f64).into(),
                m.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                f64::NAN.into(),
                format!("failed: {e}").into(),
            ])
        };
        let p = match c.validate().and_then(|_| build_problem(&c)) {
            Ok(p) => p,
            Err(e) => {
                for &m in &sweep.layers {
                    fail(&mut table, m, &e)?;
                }
                continue;
            }
        };
        let f = source_raster(&c, &p);
        if fine_ref.is_none() {
            fine_ref = Some(solve_monotone(&p.fine, &p.field, &law, &f, boundary, &c.solver.newton)?.u);
        }
        let u_fine = fine_ref.as_ref().unwrap();
        let ctx = NlmcContext::new(&p.space, &p.field.values, &law, boundary)?
            .with_newton(c.solver.newton)
            .with_exec(c.output.exec);
        let glo = if with_global {
            match solve_global_method(&ctx, &f, &c.solver.coarse) {
                Ok(g) => Some(g.u_ms),
                Err(e) => {
                    for &m in &sweep.layers {
                        fail(&mut table, m, &e)?;
                    }
                    continue;
                }
            }
        } else {
            None
        };
        let e_ref = ctx.energy_norm(u_fine);
        for &m in &sweep.layers {
            match solve_coarse_nonlinear(&ctx, m, &f, &c.solver.coarse) {
                Ok(sol) => {
                    let rel = |a: &[f64], b: &[f64], n: f64| {
                        let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
                        ctx.energy_norm(&d) / n
                    };
                    let e = rel(&sol.u_ms, u_fine, e_ref);
                    let gap = glo.as_ref().map_or(f64::NAN, |g| rel(&sol.u_ms, g, ctx.energy_norm(g)));
                    ok.push((nc, m, e, gap));
                    table.push(vec![
                        "run".into(),
                        nc.into(),
                        (1.0 / nc as f64).into(),
                        m.into(),
                        e.into(),
                        gap.into(),
                        f64::NAN.into(),
                        "ok".into(),
                    ])?;
                }
                Err(e) => fail(&mut table, m, &e)?,
            }
        }
    }
    let fit_row = |kind: &str, nc: usize, m: usize, v: f64| -> Vec<Cell> {
        let h = if nc > 0 { 1.0 / nc as f64 } else { f64::NAN };
        vec![
            kind.into(),
            nc.into(),
            h.into(),
            m.into(),
            f64::NAN.into(),
            f64::NAN.into(),
            v.into(),
            "ok".into(),
        ]
    };
    // error(H) / error(H / 2) style ratio between consecutive coarse sizes
    for &m in &sweep.layers {
        let runs: Vec<_> = ok.iter().filter(|r| r.1 == m).collect();
        for w in runs.windows(2) {
            table.push(fit_row("h_ratio", w[1].0, m, w[0].2 / w[1].2))?;
        }
    }
    for &nc in &sweep.coarse_cells {
        let runs: Vec<_> = ok.iter().filter(|r| r.0 == nc).collect();
        if runs.len() >= 2 {
            let x: Vec<f64> = runs.iter().map(|r| r.1 as f64).collect();
            let y: Vec<f64> = runs.iter().map(|r| if with_global { r.3 } else { r.2 }).collect();
            let (b, _, r2) = fit_log_linear(&x, &y);
            table.push(fit_row("layer_ratio", nc, 0, b.exp()))?;
            table.push(fit_row("layer_r2", nc, 0, r2))?;
        }
    }
    Ok(table)
}
