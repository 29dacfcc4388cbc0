//! Independent KKT residual evaluation: plain loops over symbolic derivative
//! tables, no solver state, unscaled problem space.

use crate::collocate::TranscribedProgram;

use super::compiled::CompiledProgram;
use super::KktResidual;

/// Residuals of a primal/dual point. Convention:
/// stationarity = grad f + J^T y - z_L + z_U over the variables.
pub fn check_kkt_full(
    program: &TranscribedProgram,
    compiled: &CompiledProgram,
    x: &[f64],
    row_duals: &[f64],
    bound_lower: &[f64],
    bound_upper: &[f64],
) -> KktResidual {
    assert_eq!(x.len(), program.n_vars(), "dimension mismatch");
    assert_eq!(row_duals.len(), program.n_constraints(), "dimension mismatch");
    let mut buf = vec![];
    let (_, cons) = compiled.eval_full(x, &mut buf);

    let n = program.n_vars();
    let mut stat = vec![0.0f64; n];
    for &(v, slot) in &compiled.obj_grad {
        stat[v as usize] += buf[slot as usize];
    }
    for (r, row) in compiled.jac.iter().enumerate() {
        if row_duals[r] != 0.0 {
            for &(v, slot) in row {
                stat[v as usize] += row_duals[r] * buf[slot as usize];
            }
        }
    }
    for i in 0..n {
        stat[i] -= bound_lower[i];
        stat[i] += bound_upper[i];
    }
    let mut stationarity = 0.0f64;
    for (i, v) in program.vars.iter().enumerate() {
        if v.lb < v.ub {
            stationarity = stationarity.max(stat[i].abs());
        }
    }

    let mut primal = 0.0f64;
    let mut dual = 0.0f64;
    let mut comp = 0.0f64;
    for (i, v) in program.vars.iter().enumerate() {
        primal = primal.max(v.lb - x[i]).max(x[i] - v.ub);
        dual = dual.max(-bound_lower[i]).max(-bound_upper[i]);
        if v.lb.is_finite() && v.lb < v.ub {
            comp = comp.max((bound_lower[i] * (x[i] - v.lb)).abs());
        }
        if v.ub.is_finite() && v.lb < v.ub {
            comp = comp.max((bound_upper[i] * (v.ub - x[i])).abs());
        }
    }
    for (r, c) in program.constraints.iter().enumerate() {
        primal = primal.max(c.lo - cons[r]).max(cons[r] - c.up);
        if c.is_equality() {
            continue;
        }
        // one-sided sign conditions on the net multiplier
        if c.lo.is_finite() && c.up == f64::INFINITY {
            dual = dual.max(row_duals[r]); // y <= 0 at a lower-active row
            comp = comp.max((row_duals[r] * (cons[r] - c.lo)).abs());
        } else if c.up.is_finite() && c.lo == f64::NEG_INFINITY {
            dual = dual.max(-row_duals[r]);
            comp = comp.max((row_duals[r] * (c.up - cons[r])).abs());
        } else if c.lo.is_finite() && c.up.is_finite() {
            // range row: complementarity against the nearer side
            let d = (cons[r] - c.lo).min(c.up - cons[r]);
            comp = comp.max((row_duals[r] * d).abs());
        }
        // rows with both bounds infinite are vacuous
    }

    KktResidual {
        stationarity,
        primal_feasibility: primal.max(0.0),
        dual_feasibility: dual.max(0.0),
        complementarity: comp,
    }
}

/// Public checker: compiles the program fresh and reports the residuals of
/// the given point (duals optional, defaulting to zero).
pub fn check_kkt(
    program: &TranscribedProgram,
    x: &[f64],
    row_duals: Option<&[f64]>,
    bound_lower: Option<&[f64]>,
    bound_upper: Option<&[f64]>,
) -> KktResidual {
    let compiled = CompiledProgram::compile(program);
    let zero_rows = vec![0.0; program.n_constraints()];
    let zero_bounds = vec![0.0; program.n_vars()];
    check_kkt_full(
        program,
        &compiled,
        x,
        row_duals.unwrap_or(&zero_rows),
        bound_lower.unwrap_or(&zero_bounds),
        bound_upper.unwrap_or(&zero_bounds),
    )
}
