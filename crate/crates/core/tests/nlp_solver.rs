//! Solver-layer tests: LP/NLP/MPCC reference problems with known solutions,
//! KKT checker behavior, and determinism.

use cybermet::collocate::{CompPair, CompSide, ConLabel, TranscribedProgram, VarKey};
use cybermet::nlp::{
    check_kkt, comp_violation, simplex_solve, solve, NullSink, SolveRequest, SolveStatus,
    SolverBackend, ReferenceBackend,
};

fn aux(p: &mut TranscribedProgram, tag: u32, lb: f64, ub: f64, init: f64) -> u32 {
    p.add_var(VarKey::Aux { tag }, lb, ub, init)
}

#[test]
fn one_dimensional_lp_hits_the_upper_bound() {
    // min -x s.t. 0 <= x <= 3
    let mut p = TranscribedProgram::new();
    let x = aux(&mut p, 0, 0.0, 3.0, 1.0);
    let vx = p.arena.var(x);
    p.objective = p.arena.neg(vx);
    let res = solve(&p, &SolveRequest::default());
    assert_eq!(res.status, SolveStatus::Optimal);
    assert!((res.primal[0] - 3.0).abs() < 1e-7, "x = {}", res.primal[0]);
    assert!((res.objective + 3.0).abs() < 1e-7);

    // KKT residuals at the solution with the solver's duals
    let r = check_kkt(
        &p,
        &res.primal,
        Some(&res.row_duals),
        Some(&res.bound_duals_lower),
        Some(&res.bound_duals_upper),
    );
    assert!(r.max_all() <= 1e-7, "kkt residual {:?}", r);
}

#[test]
fn quadratic_with_active_bound_and_dual() {
    // min (x-1)^2 s.t. x >= 2: optimum x = 2, lower-bound multiplier 2
    let mut p = TranscribedProgram::new();
    let x = aux(&mut p, 0, 2.0, f64::INFINITY, 3.0);
    let vx = p.arena.var(x);
    let one = p.arena.constant(1.0);
    let d = p.arena.sub(vx, one);
    p.objective = p.arena.mul(d, d);
    let res = solve(&p, &SolveRequest::default());
    assert_eq!(res.status, SolveStatus::Optimal);
    assert!((res.primal[0] - 2.0).abs() < 1e-7, "x = {}", res.primal[0]);
    assert!(
        (res.bound_duals_lower[0] - 2.0).abs() < 1e-5,
        "dual = {}",
        res.bound_duals_lower[0]
    );
    // hand KKT check: stationarity 2(x-1) = z_L, z_L >= 0
    let stat = 2.0 * (res.primal[0] - 1.0) - res.bound_duals_lower[0];
    assert!(stat.abs() < 1e-5);
}

#[test]
fn kkt_checker_flags_interior_point_of_lp() {
    let mut p = TranscribedProgram::new();
    let x = aux(&mut p, 0, 0.0, 3.0, 1.0);
    let vx = p.arena.var(x);
    p.objective = p.arena.neg(vx);
    // x = 2.9 is feasible but not stationary without duals
    let r = check_kkt(&p, &[2.9], None, None, None);
    assert_eq!(r.primal_feasibility, 0.0);
    assert!(r.stationarity > 0.9);
}

#[test]
fn equality_constrained_nlp() {
    // min x^2 + y^2 s.t. x + y = 2 -> (1, 1)
    let mut p = TranscribedProgram::new();
    let x = aux(&mut p, 0, f64::NEG_INFINITY, f64::INFINITY, 3.0);
    let y = aux(&mut p, 1, f64::NEG_INFINITY, f64::INFINITY, -1.0);
    let (vx, vy) = (p.arena.var(x), p.arena.var(y));
    let x2 = p.arena.mul(vx, vx);
    let y2 = p.arena.mul(vy, vy);
    p.objective = p.arena.add(x2, y2);
    let s = p.arena.add(vx, vy);
    p.add_constraint(ConLabel::Custom("sum".into()), s, 2.0, 2.0);
    let res = solve(&p, &SolveRequest::default());
    assert_eq!(res.status, SolveStatus::Optimal);
    assert!((res.primal[0] - 1.0).abs() < 1e-7);
    assert!((res.primal[1] - 1.0).abs() < 1e-7);
    // row dual: grad f + J^T y = 0 -> 2x + y_row = 0 -> y_row = -2
    assert!((res.row_duals[0] + 2.0).abs() < 1e-6, "row dual {}", res.row_duals[0]);
}

#[test]
fn hock_schittkowski_71() {
    // min x1 x4 (x1+x2+x3) + x3
    // s.t. x1 x2 x3 x4 >= 25, sum xi^2 = 40, 1 <= x <= 5
    let mut p = TranscribedProgram::new();
    let ids: Vec<u32> = (0..4).map(|i| aux(&mut p, i, 1.0, 5.0, [1.0, 5.0, 5.0, 1.0][i as usize])).collect();
    let v: Vec<_> = ids.iter().map(|&i| p.arena.var(i)).collect();
    let s123 = {
        let t = p.arena.add(v[0], v[1]);
        p.arena.add(t, v[2])
    };
    let x1x4 = p.arena.mul(v[0], v[3]);
    let prod = p.arena.mul(x1x4, s123);
    p.objective = p.arena.add(prod, v[2]);
    let p12 = p.arena.mul(v[0], v[1]);
    let p34 = p.arena.mul(v[2], v[3]);
    let p_all = p.arena.mul(p12, p34);
    p.add_constraint(ConLabel::Custom("prod".into()), p_all, 25.0, f64::INFINITY);
    let sq: Vec<_> = v.iter().map(|&vi| p.arena.mul(vi, vi)).collect();
    let ssq = p.arena.sum(&sq);
    p.add_constraint(ConLabel::Custom("norm".into()), ssq, 40.0, 40.0);

    let res = solve(&p, &SolveRequest::default());
    assert_eq!(res.status, SolveStatus::Optimal);
    assert!(
        (res.objective - 17.0140173).abs() < 1e-4,
        "objective {}",
        res.objective
    );
    let want = [1.0, 4.7429994, 3.8211503, 1.3794082];
    for (xi, wi) in res.primal.iter().zip(&want) {
        assert!((xi - wi).abs() < 1e-4, "{xi} vs {wi}");
    }
}

#[test]
fn infeasible_program_is_reported() {
    let mut p = TranscribedProgram::new();
    let x = aux(&mut p, 0, 0.0, 1.0, 0.5);
    let vx = p.arena.var(x);
    p.objective = vx;
    p.add_constraint(ConLabel::Custom("out_of_reach".into()), vx, 2.0, 3.0);
    let res = solve(&p, &SolveRequest::default());
    assert_eq!(res.status, SolveStatus::Infeasible);
    let (label, viol) = res.max_violated.expect("violated row");
    assert!(label.contains("out_of_reach"));
    assert!(viol > 0.9);
}

#[test]
fn ipm_matches_simplex_on_a_small_lp() {
    // min -2x - 3y s.t. x + y <= 4, x + 3y <= 6, x, y >= 0
    let mut p = TranscribedProgram::new();
    let x = aux(&mut p, 0, 0.0, f64::INFINITY, 0.1);
    let y = aux(&mut p, 1, 0.0, f64::INFINITY, 0.1);
    let (vx, vy) = (p.arena.var(x), p.arena.var(y));
    let t = p.arena.scale(-2.0, vx);
    let u = p.arena.scale(-3.0, vy);
    p.objective = p.arena.add(t, u);
    let s1 = p.arena.add(vx, vy);
    p.add_constraint(ConLabel::Custom("c1".into()), s1, f64::NEG_INFINITY, 4.0);
    let y3 = p.arena.scale(3.0, vy);
    let s2 = p.arena.add(vx, y3);
    p.add_constraint(ConLabel::Custom("c2".into()), s2, f64::NEG_INFINITY, 6.0);

    let res = solve(&p, &SolveRequest::default());
    assert_eq!(res.status, SolveStatus::Optimal);
    let oracle = simplex_solve(&p).unwrap();
    assert!(
        (res.objective - oracle.objective).abs() <= 1e-8 * oracle.objective.abs().max(1.0),
        "ipm {} vs simplex {}",
        res.objective,
        oracle.objective
    );
}

#[test]
fn complementarity_instance_converges_through_the_schedule() {
    // min x + y s.t. x + y >= 1, x, y >= 0, complementarity x * y = 0
    let mut p = TranscribedProgram::new();
    let x = aux(&mut p, 0, 0.0, f64::INFINITY, 0.6);
    let y = aux(&mut p, 1, 0.0, f64::INFINITY, 0.6);
    let (vx, vy) = (p.arena.var(x), p.arena.var(y));
    p.objective = p.arena.add(vx, vy);
    let s = p.arena.add(vx, vy);
    p.add_constraint(ConLabel::Custom("cover".into()), s, 1.0, f64::INFINITY);
    let prod = p.arena.mul(vx, vy);
    let prod_row = p.add_constraint(
        ConLabel::Complementarity { interval: 0, pair: 0 },
        prod,
        f64::NEG_INFINITY,
        0.0,
    );
    p.comp_pairs.push(CompPair { g: CompSide::VarLower(x), mu: y, prod_row });

    let res = solve(&p, &SolveRequest::default());
    assert_eq!(res.status, SolveStatus::Optimal, "status {:?}", res.status);
    assert!((res.objective - 1.0).abs() < 1e-6, "objective {}", res.objective);
    // one of the two branches, complementarity to solver precision
    let (xs, ys) = (res.primal[0], res.primal[1]);
    assert!(xs.min(ys) <= 1e-8, "min coordinate {}", xs.min(ys));
    assert!((xs + ys - 1.0).abs() < 1e-6);
    assert!(comp_violation(&p, &res.primal) <= 1e-8);
}

#[test]
fn identical_requests_give_identical_results() {
    let build = || {
        let mut p = TranscribedProgram::new();
        let x = aux(&mut p, 0, 1.0, 5.0, 2.0);
        let y = aux(&mut p, 1, 1.0, 5.0, 4.0);
        let (vx, vy) = (p.arena.var(x), p.arena.var(y));
        let xy = p.arena.mul(vx, vy);
        let t = p.arena.sub(xy, vx);
        p.objective = p.arena.mul(t, t);
        let s = p.arena.add(vx, vy);
        p.add_constraint(ConLabel::Custom("s".into()), s, 3.0, 8.0);
        p
    };
    let p1 = build();
    let p2 = build();
    let r1 = solve(&p1, &SolveRequest::default());
    let r2 = solve(&p2, &SolveRequest::default());
    assert_eq!(r1.status, r2.status);
    assert_eq!(r1.iterations, r2.iterations);
    assert_eq!(r1.primal, r2.primal);
    assert_eq!(r1.row_duals, r2.row_duals);
    assert_eq!(r1.objective.to_bits(), r2.objective.to_bits());
}

#[test]
fn backend_trait_load_then_solve() {
    let mut p = TranscribedProgram::new();
    let x = aux(&mut p, 0, 0.0, 2.0, 1.0);
    let vx = p.arena.var(x);
    p.objective = p.arena.neg(vx);
    let mut backend = ReferenceBackend::default();
    backend.load(p);
    let res = backend.solve(&SolveRequest::default());
    assert_eq!(res.status, SolveStatus::Optimal);
    assert!((res.primal[0] - 2.0).abs() < 1e-7);
}

#[test]
fn fixed_variables_are_respected() {
    // y fixed at 2 via equal bounds; min (x - y)^2
    let mut p = TranscribedProgram::new();
    let x = aux(&mut p, 0, -10.0, 10.0, 0.0);
    let y = aux(&mut p, 1, 2.0, 2.0, 2.0);
    let (vx, vy) = (p.arena.var(x), p.arena.var(y));
    let d = p.arena.sub(vx, vy);
    p.objective = p.arena.mul(d, d);
    let res = solve(&p, &SolveRequest::default());
    assert_eq!(res.status, SolveStatus::Optimal);
    assert_eq!(res.primal[1], 2.0);
    assert!((res.primal[0] - 2.0).abs() < 1e-6);
}

#[test]
fn solve_uses_null_sink_quietly() {
    let mut p = TranscribedProgram::new();
    let x = aux(&mut p, 0, 0.0, 1.0, 0.5);
    let vx = p.arena.var(x);
    p.objective = vx;
    let res = cybermet::nlp::solve_with_sink(&p, &SolveRequest::default(), &mut NullSink);
    assert_eq!(res.status, SolveStatus::Optimal);
    assert!(res.primal[0] < 1e-7);
}
