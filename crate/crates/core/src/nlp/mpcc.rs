//! Complementarity programs via a Scholtes-type global relaxation: solve a
//! sequence of NLPs with g * mu <= eps, eps shrinking geometrically, each
//! warm-started from the last, then fix the active set and re-solve once to
//! drive the products to solver precision.

use crate::collocate::{CompSide, TranscribedProgram};

use super::ipm::Ipm;
use super::{
    comp_violation, IterationSink, MpccMode, SolveOptions, SolveRequest, SolveResult,
    SolveStatus, WarmStart,
};

pub fn solve_mpcc(
    program: &TranscribedProgram,
    req: &SolveRequest,
    sink: &mut dyn IterationSink,
) -> SolveResult {
    match req.mpcc.mode {
        MpccMode::Relaxation => solve_relaxation(program, req, sink),
        MpccMode::Penalty => solve_penalty(program, req, sink),
    }
}

fn stage_options(req: &SolveRequest, stage: usize, warm: Option<WarmStart>) -> SolveOptions {
    let mut opts = req.options.clone();
    opts.warm_start = warm;
    if stage > 0 {
        opts.mu_init = 1e-4;
    }
    opts
}

/// Deterministically project an initial point into the relaxed region: any
/// pair with g * mu > eps gets its multiplier side shrunk. Warm starts from
/// inner-feasible trajectories keep their active multipliers; symmetric cold
/// starts get their tie broken toward the primal-feasible branch.
fn seed_pairs(program: &TranscribedProgram, x0: &mut [f64], eps: f64) {
    for pair in &program.comp_pairs {
        let g = match pair.g {
            CompSide::Row(row) => {
                let c = &program.constraints[row];
                program.arena.eval(c.expr, x0) - c.lo
            }
            CompSide::VarLower(v) => x0[v as usize] - program.vars[v as usize].lb,
            CompSide::VarUpper(v) => program.vars[v as usize].ub - x0[v as usize],
        };
        let mu = x0[pair.mu as usize];
        if g * mu > eps {
            x0[pair.mu as usize] = eps / g.max(eps);
        }
    }
}

fn solve_relaxation(
    program: &TranscribedProgram,
    req: &SolveRequest,
    sink: &mut dyn IterationSink,
) -> SolveResult {
    let mut work = program.clone();
    let mut eps = req.mpcc.eps_init;
    let mut warm = req.options.warm_start.clone();
    let mut last: Option<SolveResult> = None;

    // seed the first stage
    {
        let mut x0: Vec<f64> = match &warm {
            Some(ws) => ws.primal.clone(),
            None => work.vars.iter().map(|v| v.init).collect(),
        };
        seed_pairs(program, &mut x0, eps);
        match warm.as_mut() {
            Some(ws) => ws.primal = x0,
            None => work.set_initial_point(&x0),
        }
    }

    for stage in 0..req.mpcc.stages {
        for pair in &work.comp_pairs.clone() {
            work.constraints[pair.prod_row].up = eps;
        }
        let opts = stage_options(req, stage, warm.take());
        let res = Ipm::new(&work).solve(&opts, sink);
        log::debug!(target: "cybermet::nlp", "relaxation stage {stage} eps {eps:.1e}: {:?} obj {:.8e} iters {}", res.status, res.objective, res.iterations);
        if !matches!(res.status, SolveStatus::Optimal | SolveStatus::IterationLimit) {
            // give the caller the failed stage honestly
            return res;
        }
        warm = Some(WarmStart { primal: res.primal.clone(), row_duals: res.row_duals.clone() });
        last = Some(res);
        eps *= req.mpcc.eps_factor;
    }
    let stage_result = last.expect("at least one stage");

    let final_result = if req.mpcc.polish {
        match polish(program, req, &stage_result, sink) {
            Some(polished) if polished.status == SolveStatus::Optimal => polished,
            other => {
                log::debug!(target: "cybermet::nlp", "active-set polish rejected: {:?}", other.map(|r| r.status));
                stage_result
            }
        }
    } else {
        stage_result
    };

    finish_mpcc(program, req, final_result)
}

/// Fix each pair to its active branch as seen at the relaxed solution and
/// re-solve the resulting smooth NLP.
fn polish(
    program: &TranscribedProgram,
    req: &SolveRequest,
    at: &SolveResult,
    sink: &mut dyn IterationSink,
) -> Option<SolveResult> {
    let mut work = program.clone();
    for pair in &program.comp_pairs {
        // deactivate the product row
        work.constraints[pair.prod_row].lo = f64::NEG_INFINITY;
        work.constraints[pair.prod_row].up = f64::INFINITY;
        let g_val = match pair.g {
            CompSide::Row(row) => {
                let c = &program.constraints[row];
                program.arena.eval(c.expr, &at.primal) - c.lo
            }
            CompSide::VarLower(v) => at.primal[v as usize] - program.vars[v as usize].lb,
            CompSide::VarUpper(v) => program.vars[v as usize].ub - at.primal[v as usize],
        };
        let mu_val = at.primal[pair.mu as usize];
        if mu_val >= g_val {
            // active branch: pin g = 0
            match pair.g {
                CompSide::Row(row) => {
                    let lo = work.constraints[row].lo;
                    work.constraints[row].up = lo;
                }
                CompSide::VarLower(v) => {
                    let lb = work.vars[v as usize].lb;
                    work.vars[v as usize].ub = lb;
                }
                CompSide::VarUpper(v) => {
                    let ub = work.vars[v as usize].ub;
                    work.vars[v as usize].lb = ub;
                }
            }
        } else {
            // inactive branch: multiplier vanishes
            work.vars[pair.mu as usize].ub = 0.0;
        }
    }
    let mut opts = req.options.clone();
    opts.warm_start = Some(WarmStart { primal: at.primal.clone(), row_duals: at.row_duals.clone() });
    opts.mu_init = 1e-6;
    Some(Ipm::new(&work).solve(&opts, sink))
}

fn solve_penalty(
    program: &TranscribedProgram,
    req: &SolveRequest,
    sink: &mut dyn IterationSink,
) -> SolveResult {
    let mut work = program.clone();
    // vacate the product rows; penalize their sum instead
    let mut products = vec![];
    for pair in &work.comp_pairs.clone() {
        products.push(work.constraints[pair.prod_row].expr);
        work.constraints[pair.prod_row].lo = f64::NEG_INFINITY;
        work.constraints[pair.prod_row].up = f64::INFINITY;
    }
    let base_objective = work.objective;
    let total = work.arena.sum(&products);

    let mut pi = 1.0 / req.mpcc.eps_init;
    let mut warm = req.options.warm_start.clone();
    let mut last: Option<SolveResult> = None;
    for stage in 0..req.mpcc.stages {
        let penalty = work.arena.scale(pi, total);
        work.objective = work.arena.add(base_objective, penalty);
        let opts = stage_options(req, stage, warm.take());
        let res = Ipm::new(&work).solve(&opts, sink);
        if !matches!(res.status, SolveStatus::Optimal | SolveStatus::IterationLimit) {
            return res;
        }
        warm = Some(WarmStart { primal: res.primal.clone(), row_duals: res.row_duals.clone() });
        last = Some(res);
        pi /= req.mpcc.eps_factor;
    }
    let stage_result = last.expect("at least one stage");
    let final_result = if req.mpcc.polish {
        match polish(program, req, &stage_result, sink) {
            Some(p) if p.status == SolveStatus::Optimal => p,
            _ => stage_result,
        }
    } else {
        stage_result
    };
    finish_mpcc(program, req, final_result)
}

fn finish_mpcc(
    program: &TranscribedProgram,
    req: &SolveRequest,
    mut res: SolveResult,
) -> SolveResult {
    // recompute the objective of the ORIGINAL program at the final point
    res.objective = program.arena.eval(program.objective, &res.primal);
    let comp = comp_violation(program, &res.primal);
    res.kkt_residual.complementarity = res.kkt_residual.complementarity.max(comp);
    if res.status == SolveStatus::Optimal && comp > req.options.tolerances.complementarity {
        res.status = SolveStatus::NumericalFailure;
    }
    res
}
