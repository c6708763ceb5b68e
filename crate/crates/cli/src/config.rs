//! Experiment configuration: per-subcommand defaults, a plain key=value
//! config file, and command-line flags that override file keys.

use std::fmt;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Result};
use clap::Args;
use hessmg_core::fem::Coefficient;
use hessmg_core::hierarchy::CoarseningMode;
use hessmg_core::mesh::face;

/// Diffusion coefficient choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KappaSpec {
    /// Constant coefficient.
    Constant(f64),
    /// Contrast `alpha` in the centered ball of radius 1/4, 1 outside.
    Ball(f64),
}

impl KappaSpec {
    /// The corresponding evaluator.
    pub fn coefficient(&self) -> Coefficient {
        match self {
            Self::Constant(v) => Coefficient::Constant(*v),
            Self::Ball(alpha) => Coefficient::centered_ball(*alpha),
        }
    }
}

impl fmt::Display for KappaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) => write!(f, "constant:{v}"),
            Self::Ball(a) => write!(f, "ball:{a}"),
        }
    }
}

/// Desired-state choice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YdSpec {
    /// The manufactured desired state whose optimal control is
    /// `prod_k sin(pi x_k)`.
    ClosedForm,
    /// A constant desired state.
    Constant(f64),
}

/// Which outer solves a run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrecondChoice {
    /// Unpreconditioned only.
    None,
    /// Multilevel-preconditioned only.
    Multilevel,
    /// Both, reported as separate rows.
    Both,
}

/// Fully resolved experiment configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    /// Spatial dimension, 2 or 3.
    pub dim: usize,
    /// Cells per side of the base mesh.
    pub cells: usize,
    /// Number of mesh sizes (solve, compare) or studied coarsenings
    /// (aj-study).
    pub refinements: usize,
    /// Regularization weights, one row group per value.
    pub betas: Vec<f64>,
    /// Ball-coefficient contrasts for `varying-kappa`.
    pub alphas: Vec<f64>,
    /// Diffusion coefficient.
    pub kappa: KappaSpec,
    /// Hierarchy coarsening mode.
    pub mode: CoarseningMode,
    /// Aggressive (squared-graph) first coarsening.
    pub aggressive: bool,
    /// Preconditioner levels; 0 means every level the hierarchy has.
    pub levels: usize,
    /// Strength threshold; `None` takes the dimension default.
    pub theta: Option<f64>,
    /// Prolongator smoothing factor.
    pub omega: f64,
    /// Hierarchy stops once the coarsest control space is below this.
    pub coarse_cap: usize,
    /// Hierarchy level cap.
    pub max_levels: usize,
    /// Inner forward/adjoint solve tolerance.
    pub forward_tol: f64,
    /// Mass solve tolerance.
    pub mass_tol: f64,
    /// Coarsest Hessian solve tolerance.
    pub coarse_tol: f64,
    /// Outer CG tolerance.
    pub outer_tol: f64,
    /// Dirichlet faces: `all`, `none`, or comma-separated face names.
    pub dirichlet: String,
    /// Desired state.
    pub y_d: YdSpec,
    /// Outer solve selection.
    pub precond: PrecondChoice,
    /// Load the base mesh from a file instead of generating it.
    pub mesh_file: Option<PathBuf>,
    /// CSV output path; stdout when absent.
    pub output: Option<PathBuf>,
    /// Optional per-level hierarchy summary CSV.
    pub hierarchy_csv: Option<PathBuf>,
    /// Fill the wall-time column (makes output time-dependent).
    pub timing: bool,
    /// aj-study: also compute dense exact values where sizes permit.
    pub with_exact: bool,
}

impl ExperimentConfig {
    fn base() -> Self {
        Self {
            dim: 3,
            cells: 4,
            refinements: 1,
            betas: vec![1e-2],
            alphas: vec![1e-4, 1e-2, 1e-1, 1.0],
            kappa: KappaSpec::Constant(1.0),
            mode: CoarseningMode::Amg,
            aggressive: false,
            levels: 0,
            theta: None,
            omega: 4.0 / 3.0,
            coarse_cap: 2000,
            max_levels: 10,
            forward_tol: 1e-8,
            mass_tol: 1e-8,
            coarse_tol: 1e-4,
            outer_tol: 1e-8,
            dirichlet: "all".into(),
            y_d: YdSpec::ClosedForm,
            precond: PrecondChoice::Multilevel,
            mesh_file: None,
            output: None,
            hierarchy_csv: None,
            timing: false,
            with_exact: true,
        }
    }

    /// Defaults for `solve`.
    pub fn solve_defaults() -> Self {
        Self::base()
    }

    /// Defaults for `aj-study`: 2D geometric with four coarsenings on a
    /// 32-cell grid, dense exact values where possible.
    pub fn aj_study_defaults() -> Self {
        Self {
            dim: 2,
            cells: 32,
            refinements: 4,
            mode: CoarseningMode::Geometric,
            ..Self::base()
        }
    }

    /// Defaults for `compare-hierarchies`: 3D two-grid over four sizes at
    /// beta 1e-4, hierarchies coarsened all the way so the two-grid
    /// preconditioner is genuine at every size.
    pub fn compare_defaults() -> Self {
        Self {
            dim: 3,
            cells: 4,
            refinements: 4,
            betas: vec![1e-4],
            levels: 2,
            coarse_cap: 1,
            ..Self::base()
        }
    }

    /// Defaults for `varying-kappa`: the ball-coefficient study with
    /// Dirichlet conditions on z = 0 only, a constant desired state, and
    /// a hierarchy deep enough for level reduction to matter.
    pub fn varying_kappa_defaults() -> Self {
        Self {
            dim: 3,
            cells: 16,
            betas: vec![1.0],
            aggressive: true,
            coarse_cap: 1,
            max_levels: 4,
            dirichlet: "z0".into(),
            y_d: YdSpec::Constant(1.0),
            precond: PrecondChoice::Both,
            ..Self::base()
        }
    }

    /// Applies `key = value` lines from a config file. Unknown keys and
    /// malformed values are rejected with their line number.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {line_no}: expected 'key = value', found '{line}'"))?;
            let (key, value) = (key.trim(), value.trim());
            self.apply_key(key, value)
                .map_err(|e| anyhow!("line {line_no}: key '{key}': {e}"))?;
        }
        Ok(())
    }

    fn apply_key(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dim" => self.dim = value.parse()?,
            "cells" => self.cells = value.parse()?,
            "refinements" => self.refinements = value.parse()?,
            "beta" => self.betas = parse_f64_list(value)?,
            "alpha" => self.alphas = parse_f64_list(value)?,
            "kappa" => self.kappa = parse_kappa(value)?,
            "mode" => self.mode = parse_mode(value)?,
            "aggressive" => self.aggressive = parse_bool(value)?,
            "levels" => self.levels = value.parse()?,
            "theta" => self.theta = Some(value.parse()?),
            "omega" => self.omega = value.parse()?,
            "coarse_cap" => self.coarse_cap = value.parse()?,
            "max_levels" => self.max_levels = value.parse()?,
            "forward_tol" => self.forward_tol = value.parse()?,
            "mass_tol" => self.mass_tol = value.parse()?,
            "coarse_tol" => self.coarse_tol = value.parse()?,
            "outer_tol" => self.outer_tol = value.parse()?,
            "dirichlet" => self.dirichlet = value.to_string(),
            "y_d" => self.y_d = parse_yd(value)?,
            "precond" => self.precond = parse_precond(value)?,
            "mesh_file" => self.mesh_file = Some(PathBuf::from(value)),
            "output" => self.output = Some(PathBuf::from(value)),
            "hierarchy_csv" => self.hierarchy_csv = Some(PathBuf::from(value)),
            "timing" => self.timing = parse_bool(value)?,
            "with_exact" => self.with_exact = parse_bool(value)?,
            _ => bail!("unknown key"),
        }
        Ok(())
    }

    /// Overlays command-line flags (flags win over file keys).
    pub fn apply_flags(&mut self, args: &CommonArgs) -> Result<()> {
        if let Some(v) = args.dim {
            self.dim = v;
        }
        if let Some(v) = args.cells {
            self.cells = v;
        }
        if let Some(v) = args.refinements {
            self.refinements = v;
        }
        if let Some(v) = &args.beta {
            self.betas = parse_f64_list(v)?;
        }
        if let Some(v) = &args.alpha {
            self.alphas = parse_f64_list(v)?;
        }
        if let Some(v) = &args.kappa {
            self.kappa = parse_kappa(v)?;
        }
        if let Some(v) = &args.mode {
            self.mode = parse_mode(v)?;
        }
        if let Some(v) = args.aggressive {
            self.aggressive = v;
        }
        if let Some(v) = args.levels {
            self.levels = v;
        }
        if let Some(v) = args.theta {
            self.theta = Some(v);
        }
        if let Some(v) = args.omega {
            self.omega = v;
        }
        if let Some(v) = args.coarse_cap {
            self.coarse_cap = v;
        }
        if let Some(v) = args.max_levels {
            self.max_levels = v;
        }
        if let Some(v) = args.forward_tol {
            self.forward_tol = v;
        }
        if let Some(v) = args.mass_tol {
            self.mass_tol = v;
        }
        if let Some(v) = args.coarse_tol {
            self.coarse_tol = v;
        }
        if let Some(v) = args.outer_tol {
            self.outer_tol = v;
        }
        if let Some(v) = &args.dirichlet {
            self.dirichlet = v.clone();
        }
        if let Some(v) = &args.y_d {
            self.y_d = parse_yd(v)?;
        }
        if let Some(v) = &args.precond {
            self.precond = parse_precond(v)?;
        }
        if let Some(v) = &args.mesh_file {
            self.mesh_file = Some(v.clone());
        }
        if let Some(v) = &args.output {
            self.output = Some(v.clone());
        }
        if let Some(v) = &args.hierarchy_csv {
            self.hierarchy_csv = Some(v.clone());
        }
        if args.timing {
            self.timing = true;
        }
        if let Some(v) = args.with_exact {
            self.with_exact = v;
        }
        Ok(())
    }

    /// Validates ranges before any mesh or matrix is built.
    pub fn validate(&self) -> Result<()> {
        if self.dim != 2 && self.dim != 3 {
            bail!("dim must be 2 or 3, got {}", self.dim);
        }
        if self.cells < 1 {
            bail!("cells must be at least 1");
        }
        if self.refinements < 1 {
            bail!("refinements must be at least 1");
        }
        if self.betas.is_empty() || self.betas.iter().any(|&b| b <= 0.0) {
            bail!("beta list must be nonempty and positive");
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|&a| a <= 0.0) {
            bail!("alpha list must be nonempty and positive");
        }
        for (name, tol) in [
            ("forward_tol", self.forward_tol),
            ("mass_tol", self.mass_tol),
            ("coarse_tol", self.coarse_tol),
            ("outer_tol", self.outer_tol),
        ] {
            if !(tol > 0.0 && tol < 1.0) {
                bail!("{name} must lie in (0, 1), got {tol}");
            }
        }
        if let Some(theta) = self.theta {
            if !(0.0..1.0).contains(&theta) {
                bail!("theta must lie in [0, 1), got {theta}");
            }
        }
        if self.max_levels < 1 {
            bail!("max_levels must be at least 1");
        }
        self.dirichlet_faces()?;
        Ok(())
    }

    /// Dirichlet face bitmask for the configured dimension.
    pub fn dirichlet_faces(&self) -> Result<u8> {
        parse_faces(&self.dirichlet, self.dim)
    }
}

fn parse_f64_list(value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| anyhow!("bad number '{t}': {e}"))
        })
        .collect()
}

fn parse_bool(value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => bail!("expected true/false, got '{value}'"),
    }
}

fn parse_kappa(value: &str) -> Result<KappaSpec> {
    if let Some(rest) = value.strip_prefix("ball:") {
        return Ok(KappaSpec::Ball(rest.parse()?));
    }
    let rest = value.strip_prefix("constant:").unwrap_or(value);
    Ok(KappaSpec::Constant(rest.parse()?))
}

fn parse_mode(value: &str) -> Result<CoarseningMode> {
    match value {
        "amg" => Ok(CoarseningMode::Amg),
        "geometric" => Ok(CoarseningMode::Geometric),
        _ => bail!("expected amg or geometric, got '{value}'"),
    }
}

fn parse_yd(value: &str) -> Result<YdSpec> {
    if value == "closed-form" {
        return Ok(YdSpec::ClosedForm);
    }
    if let Some(rest) = value.strip_prefix("constant:") {
        return Ok(YdSpec::Constant(rest.parse()?));
    }
    bail!("expected 'closed-form' or 'constant:<value>', got '{value}'")
}

fn parse_precond(value: &str) -> Result<PrecondChoice> {
    match value {
        "none" => Ok(PrecondChoice::None),
        "multilevel" => Ok(PrecondChoice::Multilevel),
        "both" => Ok(PrecondChoice::Both),
        _ => bail!("expected none, multilevel or both, got '{value}'"),
    }
}

/// Parses a Dirichlet face list for a given dimension.
pub fn parse_faces(spec: &str, dim: usize) -> Result<u8> {
    match spec {
        "all" => Ok(face::all(dim)),
        "none" => Ok(0),
        _ => {
            let mut mask = 0u8;
            for tag in spec.split(',') {
                let tag = tag.trim();
                let bit = face::NAMES
                    .iter()
                    .find(|(name, _)| *name == tag)
                    .map(|(_, bit)| *bit)
                    .ok_or_else(|| anyhow!("unknown face '{tag}'"))?;
                if dim == 2 && (bit == face::Z0 || bit == face::Z1) {
                    bail!("face '{tag}' does not exist in 2D");
                }
                mask |= bit;
            }
            Ok(mask)
        }
    }
}

/// Command-line flags shared by every subcommand; every flag overrides
/// the matching config-file key.
#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// Plain-text config file with key = value lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Spatial dimension (2 or 3) [defaults: solve/compare/varying 3, aj-study 2].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Cells per side of the base mesh [defaults: solve 4, aj-study 32, compare 4, varying 16].
    #[arg(long)]
    pub cells: Option<usize>,
    /// Mesh sizes to sweep (solve, compare) or coarsenings to study (aj-study) [defaults: solve 1, aj-study 4, compare 4].
    #[arg(long)]
    pub refinements: Option<usize>,
    /// Comma-separated regularization weights [default: 1e-2; compare 1e-4; varying 1].
    #[arg(long)]
    pub beta: Option<String>,
    /// Comma-separated ball contrasts for varying-kappa [default: 1e-4,1e-2,1e-1,1].
    #[arg(long)]
    pub alpha: Option<String>,
    /// Coefficient: '<v>', 'constant:<v>' or 'ball:<alpha>' [default: constant:1].
    #[arg(long)]
    pub kappa: Option<String>,
    /// Hierarchy mode: amg or geometric [default: amg; aj-study geometric].
    #[arg(long)]
    pub mode: Option<String>,
    /// Aggressive (squared-graph) first coarsening [default: false; varying true].
    #[arg(long)]
    pub aggressive: Option<bool>,
    /// Preconditioner levels, 0 = all available [default: 0; compare 2].
    #[arg(long)]
    pub levels: Option<usize>,
    /// Strength-of-connection threshold [default: 0.08].
    #[arg(long)]
    pub theta: Option<f64>,
    /// Prolongator smoothing factor [default: 4/3].
    #[arg(long)]
    pub omega: Option<f64>,
    /// Stop coarsening below this control-space size [default: 2000; compare/varying 1].
    #[arg(long)]
    pub coarse_cap: Option<usize>,
    /// Hierarchy level cap [default: 10; varying 4].
    #[arg(long)]
    pub max_levels: Option<usize>,
    /// Forward/adjoint solve tolerance [default: 1e-8].
    #[arg(long)]
    pub forward_tol: Option<f64>,
    /// Mass solve tolerance [default: 1e-8].
    #[arg(long)]
    pub mass_tol: Option<f64>,
    /// Coarsest Hessian solve tolerance [default: 1e-4].
    #[arg(long)]
    pub coarse_tol: Option<f64>,
    /// Outer CG tolerance [default: 1e-8].
    #[arg(long)]
    pub outer_tol: Option<f64>,
    /// Dirichlet faces: all, none, or comma-separated of x0,x1,y0,y1,z0,z1
    /// [default: all; varying z0].
    #[arg(long)]
    pub dirichlet: Option<String>,
    /// Desired state: 'closed-form' or 'constant:<v>' [default: closed-form; varying constant:1].
    #[arg(long)]
    pub y_d: Option<String>,
    /// Outer solves: none, multilevel or both [default: multilevel; varying both].
    #[arg(long)]
    pub precond: Option<String>,
    /// Load the base mesh from a file instead of generating it.
    #[arg(long)]
    pub mesh_file: Option<PathBuf>,
    /// CSV output path [default: stdout].
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Also write a per-level hierarchy summary CSV here.
    #[arg(long)]
    pub hierarchy_csv: Option<PathBuf>,
    /// Fill the wall-time column (off by default so reruns are
    /// byte-identical).
    #[arg(long)]
    pub timing: bool,
    /// aj-study: compute dense exact values where sizes permit [default: true].
    #[arg(long)]
    pub with_exact: Option<bool>,
}
