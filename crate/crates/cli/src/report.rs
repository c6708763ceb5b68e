//! Deterministic CSV serialization of experiment results.
//!
//! Numbers carry six significant digits; the wall-time column stays
//! empty unless timing was requested, so reruns of the same config are
//! byte-identical.

use hessmg_core::analysis::ApproxReport;
use hessmg_core::hierarchy::Hierarchy;
use hessmg_core::optctl::SolveReport;

/// Six significant digits, scientific.
pub fn fmt_g6(x: f64) -> String {
    format!("{x:.5e}")
}

/// Header of the solve CSV (schema v1).
pub const SOLVE_HEADER: &str =
    "N,beta,levels,preconditioner,iterations,final_residual,control_l2_error,wall_time_s";

/// One solve row; `error` fills the control-error column when an exact
/// solution is known, `timing` fills the wall-time column.
pub fn solve_row(report: &SolveReport, error: Option<f64>, timing: bool) -> String {
    format!(
        "{},{},{},{},{},{},{},{}",
        report.n_controls,
        fmt_g6(report.beta),
        report.levels_used,
        report.preconditioner.name(),
        report.iterations,
        fmt_g6(report.final_rel_residual),
        error.map(fmt_g6).unwrap_or_default(),
        if timing {
            fmt_g6(report.wall_time_s)
        } else {
            String::new()
        },
    )
}

/// Header of the approximation-study CSV (schema v1).
pub const AJ_HEADER: &str = "level,a_j,aj_tilde,f";

/// Approximation-study CSV: row `j` carries the dense value where
/// computed, the power estimate, and the decay ratio
/// `a_tilde[j-1] / a_tilde[j]` from the second row on.
pub fn aj_csv(report: &ApproxReport) -> String {
    let mut out = String::from(AJ_HEADER);
    out.push('\n');
    for j in 0..report.a_tilde.len() {
        let exact = report.a_exact[j].map(fmt_g6).unwrap_or_default();
        let ratio = if j > 0 {
            fmt_g6(report.ratios[j - 1])
        } else {
            String::new()
        };
        out.push_str(&format!(
            "{j},{exact},{},{ratio}\n",
            fmt_g6(report.a_tilde[j])
        ));
    }
    out
}

/// Header of the hierarchy-comparison CSV (schema v1).
pub const COMPARE_HEADER: &str = "N,iters_geometric,iters_amg";

/// One hierarchy-comparison row.
pub fn compare_row(n: usize, iters_geometric: usize, iters_amg: usize) -> String {
    format!("{n},{iters_geometric},{iters_amg}")
}

/// Header of the varying-coefficient CSV (schema v1).
pub const VARYING_HEADER: &str = "alpha,N,iters_none,iters_multilevel,levels_used";

/// One varying-coefficient row.
pub fn varying_row(
    alpha: f64,
    n: usize,
    iters_none: usize,
    iters_multilevel: usize,
    levels_used: usize,
) -> String {
    format!(
        "{},{n},{iters_none},{iters_multilevel},{levels_used}",
        fmt_g6(alpha)
    )
}

/// Per-level hierarchy summary CSV (schema v1).
pub fn hierarchy_csv(h: &Hierarchy) -> String {
    let mut out = String::from("level,state_dofs,control_dofs,a_nnz\n");
    for row in h.summary() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.level, row.state_dofs, row.control_dofs, row.a_nnz
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(fmt_g6(3.14159265e-4), "3.14159e-4");
        assert_eq!(fmt_g6(1.0), "1.00000e0");
        assert_eq!(fmt_g6(-271828.18), "-2.71828e5");
    }
}
