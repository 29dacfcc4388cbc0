//! Single-level embedding of an interval's cell problem through its KKT
//! conditions: dual variables, stationarity rows, and complementarity pairs
//! registered for the relaxation schedule.

use std::collections::HashSet;

use super::builder::IntervalHandles;
use super::program::{CompPair, CompSide, ConLabel, TranscribedProgram, VarKey};
use crate::expr::{NodeId, VarId};

/// Everything the embedding added for one interval.
#[derive(Debug, Clone)]
pub struct KktHandles {
    pub interval: usize,
    pub lambda: Vec<VarId>,
    pub mu: Vec<VarId>,
    pub stationarity_rows: Vec<usize>,
    pub comp_pair_indices: Vec<usize>,
}

/// Embed the KKT system of one interval's inner problem
/// (min f s.t. c_E = 0, g >= 0, bounds) into the program:
///
/// - a free multiplier per equality row, a nonnegative multiplier per
///   inequality row and per finite bound of an inner decision variable,
/// - stationarity rows d f/dv + sum lambda dc/dv - sum mu dg/dv = 0 for every
///   inner decision variable,
/// - complementarity products g * mu as rows whose upper bound is the
///   relaxation parameter, registered in `comp_pairs`.
pub fn embed_interval_kkt(
    program: &mut TranscribedProgram,
    handles: &IntervalHandles,
) -> KktHandles {
    let k = handles.interval as u32;
    let decision: HashSet<VarId> = handles.decision_vars.iter().copied().collect();

    // multipliers
    let mut lambda = Vec::with_capacity(handles.eq_rows.len());
    for (i, _) in handles.eq_rows.iter().enumerate() {
        let id = program.add_var(
            VarKey::DualEq { interval: k, row: i as u32 },
            f64::NEG_INFINITY,
            f64::INFINITY,
            0.0,
        );
        lambda.push(id);
    }

    // inequality inventory: rows (expr - lo >= 0), then bounds
    enum Ineq {
        Row(usize),
        Lower(VarId),
        Upper(VarId),
    }
    let mut ineqs: Vec<Ineq> = vec![];
    for &row in &handles.ineq_rows {
        debug_assert!(program.constraints[row].up == f64::INFINITY);
        ineqs.push(Ineq::Row(row));
    }
    for &v in &handles.decision_vars {
        let info = &program.vars[v as usize];
        if info.lb.is_finite() {
            ineqs.push(Ineq::Lower(v));
        }
        if info.ub.is_finite() {
            ineqs.push(Ineq::Upper(v));
        }
    }
    let mut mu = Vec::with_capacity(ineqs.len());
    for (i, _) in ineqs.iter().enumerate() {
        let id = program.add_var(
            VarKey::DualIneq { interval: k, row: i as u32 },
            0.0,
            f64::INFINITY,
            1e-3,
        );
        mu.push(id);
    }

    // gradient terms per decision variable
    let mut terms: Vec<Vec<NodeId>> = vec![vec![]; program.n_vars()];
    let obj_support = program.arena.support(handles.inner_objective);
    for v in obj_support {
        if decision.contains(&v) {
            let d = program.arena.diff(handles.inner_objective, v);
            terms[v as usize].push(d);
        }
    }
    for (i, &row) in handles.eq_rows.iter().enumerate() {
        let expr = program.constraints[row].expr;
        let lam = program.arena.var(lambda[i]);
        for v in program.arena.support(expr) {
            if decision.contains(&v) {
                let d = program.arena.diff(expr, v);
                let t = program.arena.mul(lam, d);
                terms[v as usize].push(t);
            }
        }
    }
    for (i, ineq) in ineqs.iter().enumerate() {
        let m = program.arena.var(mu[i]);
        match ineq {
            Ineq::Row(row) => {
                let expr = program.constraints[*row].expr;
                for v in program.arena.support(expr) {
                    if decision.contains(&v) {
                        let d = program.arena.diff(expr, v);
                        let prod = program.arena.mul(m, d);
                        let t = program.arena.neg(prod);
                        terms[v as usize].push(t);
                    }
                }
            }
            Ineq::Lower(v) => {
                // g = x - lb, dg/dx = 1
                let t = program.arena.neg(m);
                terms[*v as usize].push(t);
            }
            Ineq::Upper(v) => {
                // g = ub - x, dg/dx = -1
                terms[*v as usize].push(m);
            }
        }
    }

    let mut stationarity_rows = Vec::with_capacity(handles.decision_vars.len());
    for &v in &handles.decision_vars {
        let expr = program.arena.sum(&terms[v as usize]);
        let row = program.add_equality(ConLabel::Stationarity { interval: k, wrt: v }, expr);
        stationarity_rows.push(row);
    }

    // complementarity products
    let mut comp_pair_indices = Vec::with_capacity(ineqs.len());
    for (i, ineq) in ineqs.iter().enumerate() {
        let m = program.arena.var(mu[i]);
        let (g_expr, g_side) = match ineq {
            Ineq::Row(row) => {
                let c = &program.constraints[*row];
                let lo = program.arena.constant(c.lo);
                let expr = program.arena.sub(c.expr, lo);
                (expr, CompSide::Row(*row))
            }
            Ineq::Lower(v) => {
                let x = program.arena.var(*v);
                let lb = program.arena.constant(program.vars[*v as usize].lb);
                (program.arena.sub(x, lb), CompSide::VarLower(*v))
            }
            Ineq::Upper(v) => {
                let x = program.arena.var(*v);
                let ub = program.arena.constant(program.vars[*v as usize].ub);
                (program.arena.sub(ub, x), CompSide::VarUpper(*v))
            }
        };
        let prod = program.arena.mul(g_expr, m);
        let prod_row = program.add_constraint(
            ConLabel::Complementarity { interval: k, pair: i as u32 },
            prod,
            f64::NEG_INFINITY,
            0.0,
        );
        program.comp_pairs.push(CompPair { g: g_side, mu: mu[i], prod_row });
        comp_pair_indices.push(program.comp_pairs.len() - 1);
    }

    KktHandles {
        interval: handles.interval,
        lambda,
        mu,
        stationarity_rows,
        comp_pair_indices,
    }
}
