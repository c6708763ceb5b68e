//! Experiment drivers: each subcommand builds its problems, runs the
//! solves, and returns a CSV string plus the number of failed rows.
//! Row failures (solver errors, breakdowns that survive level
//! reduction) are reported on stderr and do not stop the remaining
//! rows.

use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use hessmg_core::analysis::{
    approximation_report, control_error_vs_exact, manufactured_desired_state,
};
use hessmg_core::fem::{Coefficient, FeProblem};
use hessmg_core::hierarchy::{build_hierarchy, Hierarchy, HierarchyConfig};
use hessmg_core::mesh::{build_structured_mesh, face, refine_uniform, Mesh};
use hessmg_core::optctl::{ControlProblem, ControlSolver, PrecondKind, SolveReport};

use crate::config::{ExperimentConfig, KappaSpec, PrecondChoice, YdSpec};
use crate::meshio;
use crate::report;

/// CSV output plus the count of failed rows.
pub struct RunOutput {
    /// The CSV table.
    pub csv: String,
    /// Rows that errored or ended in breakdown.
    pub failures: usize,
}

fn base_mesh(cfg: &ExperimentConfig) -> Result<Mesh> {
    match &cfg.mesh_file {
        Some(path) => {
            let mesh = meshio::load_mesh(path)?;
            if mesh.dim() != cfg.dim {
                anyhow::bail!(
                    "mesh file is {}D but the configuration asks for {}D",
                    mesh.dim(),
                    cfg.dim
                );
            }
            Ok(mesh)
        }
        None => build_structured_mesh(cfg.dim, cfg.cells).map_err(|e| anyhow!("{e}")),
    }
}

fn hierarchy_config(cfg: &ExperimentConfig) -> HierarchyConfig {
    let mut hc = HierarchyConfig::for_dim(cfg.dim, cfg.mode);
    if let Some(theta) = cfg.theta {
        hc.theta = theta;
    }
    hc.omega_factor = cfg.omega;
    hc.coarse_cap = cfg.coarse_cap;
    hc.max_levels = cfg.max_levels;
    hc.aggressive_first = cfg.aggressive;
    hc
}

fn levels_for(cfg: &ExperimentConfig, h: &Hierarchy) -> usize {
    if cfg.levels == 0 {
        h.num_levels()
    } else {
        cfg.levels.min(h.num_levels())
    }
}

fn control_problem(
    cfg: &ExperimentConfig,
    fe: &FeProblem,
    h: &Hierarchy,
    beta: f64,
) -> ControlProblem {
    let y_d = match cfg.y_d {
        YdSpec::ClosedForm => fe.sample_state(manufactured_desired_state(cfg.dim, beta)),
        YdSpec::Constant(c) => vec![c; fe.num_state_dofs()],
    };
    let mut p = ControlProblem::new(beta, y_d);
    p.forward_tol = cfg.forward_tol;
    p.mass_tol = cfg.mass_tol;
    p.coarse_tol = cfg.coarse_tol;
    p.outer_tol = cfg.outer_tol;
    p.n_levels_used = levels_for(cfg, h);
    p
}

fn timed_solve(
    solver: &ControlSolver,
    kind: PrecondKind,
    timing: bool,
) -> hessmg_core::error::Result<SolveReport> {
    let start = Instant::now();
    let mut report = solver.solve(kind)?;
    if timing {
        report.wall_time_s = start.elapsed().as_secs_f64();
    }
    Ok(report)
}

// The closed-form control is exact only for the manufactured problem:
// unit coefficient, Dirichlet conditions on the whole boundary.
fn exact_error_applicable(cfg: &ExperimentConfig) -> bool {
    cfg.y_d == YdSpec::ClosedForm
        && cfg.kappa == KappaSpec::Constant(1.0)
        && cfg
            .dirichlet_faces()
            .map(|m| m == face::all(cfg.dim))
            .unwrap_or(false)
}

fn maybe_dump_hierarchy(cfg: &ExperimentConfig, h: &Hierarchy) -> Result<()> {
    if let Some(path) = &cfg.hierarchy_csv {
        std::fs::write(path, report::hierarchy_csv(h))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

/// `solve`: outer CG runs over a sweep of mesh sizes and weights.
pub fn run_solve(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let kappa = cfg.kappa.coefficient();
    let faces = cfg.dirichlet_faces()?;
    let with_error = exact_error_applicable(cfg);

    let mut csv = String::from(report::SOLVE_HEADER);
    csv.push('\n');
    let mut failures = 0usize;

    let mut mesh = base_mesh(cfg)?;
    for refinement in 0..cfg.refinements {
        if refinement > 0 {
            mesh = refine_uniform(&mesh).map_err(|e| anyhow!("{e}"))?;
        }
        let fe = FeProblem::new(mesh.clone(), faces);
        let h = build_hierarchy(&fe, &kappa, &hierarchy_config(cfg)).map_err(|e| anyhow!("{e}"))?;
        maybe_dump_hierarchy(cfg, &h)?;
        for &beta in &cfg.betas {
            let problem = control_problem(cfg, &fe, &h, beta);
            let solver = ControlSolver::new(&h, problem).map_err(|e| anyhow!("{e}"))?;
            let kinds: &[PrecondKind] = match cfg.precond {
                PrecondChoice::None => &[PrecondKind::None],
                PrecondChoice::Multilevel => &[PrecondKind::Multilevel],
                PrecondChoice::Both => &[PrecondKind::None, PrecondKind::Multilevel],
            };
            for &kind in kinds {
                match timed_solve(&solver, kind, cfg.timing) {
                    Ok(rep) => {
                        if rep.breakdown {
                            eprintln!(
                                "solve N={} beta={beta} {}: breakdown at {} levels",
                                rep.n_controls,
                                kind.name(),
                                rep.levels_used
                            );
                            failures += 1;
                        }
                        let err = with_error.then(|| control_error_vs_exact(&rep.control, &mesh));
                        csv.push_str(&report::solve_row(&rep, err, cfg.timing));
                        csv.push('\n');
                    }
                    Err(e) => {
                        eprintln!("solve N={} beta={beta} {}: {e}", fe.num_control_dofs(), kind.name());
                        failures += 1;
                    }
                }
            }
        }
    }
    Ok(RunOutput { csv, failures })
}

/// `aj-study`: two-grid approximation quality per level.
///
/// `refinements` is read as the number of coarsenings to study; the
/// hierarchy is built that deep regardless of `coarse_cap`.
pub fn run_aj_study(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let kappa = cfg.kappa.coefficient();
    let faces = cfg.dirichlet_faces()?;
    let mesh = base_mesh(cfg)?;
    let fe = FeProblem::new(mesh, faces);

    let mut hc = hierarchy_config(cfg);
    hc.max_levels = cfg.refinements + 1;
    hc.coarse_cap = 1;
    let h = build_hierarchy(&fe, &kappa, &hc).map_err(|e| anyhow!("{e}"))?;
    if h.num_levels() < cfg.refinements + 1 {
        eprintln!(
            "aj-study: hierarchy stopped at {} levels (requested {})",
            h.num_levels(),
            cfg.refinements + 1
        );
    }
    maybe_dump_hierarchy(cfg, &h)?;

    let mut problem = control_problem(cfg, &fe, &h, cfg.betas[0]);
    problem.n_levels_used = h.num_levels();
    let solver = ControlSolver::new(&h, problem).map_err(|e| anyhow!("{e}"))?;
    let approx = approximation_report(&solver, cfg.with_exact).map_err(|e| anyhow!("{e}"))?;
    Ok(RunOutput {
        csv: report::aj_csv(&approx),
        failures: 0,
    })
}

/// `compare-hierarchies`: multilevel-preconditioned iteration counts for
/// geometric and smoothed-aggregation transfers across a size sweep.
pub fn run_compare(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let kappa = cfg.kappa.coefficient();
    let faces = cfg.dirichlet_faces()?;
    let beta = cfg.betas[0];

    let mut csv = String::from(report::COMPARE_HEADER);
    csv.push('\n');
    let mut failures = 0usize;

    let mut mesh = base_mesh(cfg)?;
    for refinement in 0..cfg.refinements {
        if refinement > 0 {
            mesh = refine_uniform(&mesh).map_err(|e| anyhow!("{e}"))?;
        }
        let fe = FeProblem::new(mesh.clone(), faces);
        let mut iters = [0usize; 2];
        let mut row_ok = true;
        for (slot, mode) in [
            (0, hessmg_core::hierarchy::CoarseningMode::Geometric),
            (1, hessmg_core::hierarchy::CoarseningMode::Amg),
        ] {
            let mut hc = hierarchy_config(cfg);
            hc.mode = mode;
            let h = match build_hierarchy(&fe, &kappa, &hc) {
                Ok(h) => h,
                Err(e) => {
                    eprintln!("compare N={}: {e}", fe.num_control_dofs());
                    row_ok = false;
                    break;
                }
            };
            let problem = control_problem(cfg, &fe, &h, beta);
            let outcome = ControlSolver::new(&h, problem)
                .and_then(|s| timed_solve(&s, PrecondKind::Multilevel, cfg.timing));
            match outcome {
                Ok(rep) if !rep.breakdown => iters[slot] = rep.iterations,
                Ok(rep) => {
                    eprintln!(
                        "compare N={}: breakdown at {} levels",
                        rep.n_controls, rep.levels_used
                    );
                    row_ok = false;
                }
                Err(e) => {
                    eprintln!("compare N={}: {e}", fe.num_control_dofs());
                    row_ok = false;
                }
            }
        }
        if row_ok {
            csv.push_str(&report::compare_row(fe.num_control_dofs(), iters[0], iters[1]));
            csv.push('\n');
        } else {
            failures += 1;
        }
    }
    Ok(RunOutput { csv, failures })
}

/// `varying-kappa`: unpreconditioned vs multilevel iteration counts over
/// a sweep of ball-coefficient contrasts on one mesh.
pub fn run_varying_kappa(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let faces = cfg.dirichlet_faces()?;
    let beta = cfg.betas[0];

    let mut csv = String::from(report::VARYING_HEADER);
    csv.push('\n');
    let mut failures = 0usize;

    let mesh = base_mesh(cfg)?;
    let fe = FeProblem::new(mesh, faces);
    for &alpha in &cfg.alphas {
        let kappa = Coefficient::centered_ball(alpha);
        let h = match build_hierarchy(&fe, &kappa, &hierarchy_config(cfg)) {
            Ok(h) => h,
            Err(e) => {
                eprintln!("varying-kappa alpha={alpha}: {e}");
                failures += 1;
                continue;
            }
        };
        let problem = control_problem(cfg, &fe, &h, beta);
        let run = || -> hessmg_core::error::Result<(SolveReport, SolveReport)> {
            let solver = ControlSolver::new(&h, problem.clone())?;
            let plain = timed_solve(&solver, PrecondKind::None, cfg.timing)?;
            let ml = timed_solve(&solver, PrecondKind::Multilevel, cfg.timing)?;
            Ok((plain, ml))
        };
        match run() {
            Ok((plain, ml)) if !plain.breakdown && !ml.breakdown => {
                csv.push_str(&report::varying_row(
                    alpha,
                    fe.num_control_dofs(),
                    plain.iterations,
                    ml.iterations,
                    ml.levels_used,
                ));
                csv.push('\n');
            }
            Ok((_, ml)) => {
                eprintln!(
                    "varying-kappa alpha={alpha}: breakdown at {} levels",
                    ml.levels_used
                );
                failures += 1;
            }
            Err(e) => {
                eprintln!("varying-kappa alpha={alpha}: {e}");
                failures += 1;
            }
        }
    }
    Ok(RunOutput { csv, failures })
}
