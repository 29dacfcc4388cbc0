//! Textbook bounded-variable simplex with Bland's rule, used as the
//! independent LP oracle. Dense, two-phase, deterministic; correctness over
//! speed — it only ever sees programs of oracle size.

use thiserror::Error;

use crate::collocate::TranscribedProgram;

use super::compiled::CompiledProgram;

const TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum SimplexError {
    #[error("program is not affine")]
    NotAffine,
    #[error("infeasible (phase-1 objective {0})")]
    Infeasible(f64),
    #[error("unbounded along column {0}")]
    Unbounded(usize),
    #[error("iteration limit")]
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub objective: f64,
    /// structural variables only (program variable order)
    pub primal: Vec<f64>,
}

struct Lp {
    /// m x ncol, dense row-major
    a: Vec<f64>,
    b: Vec<f64>,
    cost: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    m: usize,
    ncol: usize,
}

/// Extract the standard-form data of an affine program: rows become
/// a^T x - s = -const with slack bounds [lo, up], equalities stay slackless.
fn extract(program: &TranscribedProgram) -> Result<Lp, SimplexError> {
    if !program.is_affine() {
        return Err(SimplexError::NotAffine);
    }
    let compiled = CompiledProgram::compile(program);
    let n = program.n_vars();
    let m = program.n_constraints();
    let zero = vec![0.0; n];
    let mut buf = vec![];
    let (obj0, cons0) = compiled.eval_full(&zero, &mut buf);

    let n_slack = program.constraints.iter().filter(|c| !c.is_equality()).count();
    let ncol = n + n_slack;
    let mut a = vec![0.0; m * ncol];
    let mut b = vec![0.0; m];
    let mut lb = vec![0.0; ncol];
    let mut ub = vec![0.0; ncol];
    for (i, v) in program.vars.iter().enumerate() {
        lb[i] = v.lb;
        ub[i] = v.ub;
    }
    let mut cost = vec![0.0; ncol];
    for &(v, slot) in &compiled.obj_grad {
        cost[v as usize] = buf[slot as usize];
    }
    let mut si = n;
    for (r, c) in program.constraints.iter().enumerate() {
        for &(v, slot) in &compiled.jac[r] {
            a[r * ncol + v as usize] = buf[slot as usize];
        }
        if c.is_equality() {
            b[r] = c.lo - cons0[r];
        } else {
            a[r * ncol + si] = -1.0;
            lb[si] = c.lo;
            ub[si] = c.up;
            b[r] = -cons0[r];
            si += 1;
        }
    }
    let _ = obj0;
    Ok(Lp { a, b, cost, lb, ub, m, ncol })
}

fn lu_solve(mat: &[f64], rhs: &[f64], n: usize) -> Option<Vec<f64>> {
    let mut a = mat.to_vec();
    let mut x = rhs.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if a[r * n + col].abs() > a[piv * n + col].abs() {
                piv = r;
            }
        }
        if a[piv * n + col].abs() < 1e-13 {
            return None;
        }
        if piv != col {
            for c in 0..n {
                a.swap(col * n + c, piv * n + c);
            }
            x.swap(col, piv);
        }
        let d = a[col * n + col];
        for r in (col + 1)..n {
            let f = a[r * n + col] / d;
            if f != 0.0 {
                for c in col..n {
                    a[r * n + c] -= f * a[col * n + c];
                }
                x[r] -= f * x[col];
            }
        }
    }
    for col in (0..n).rev() {
        x[col] /= a[col * n + col];
        for r in 0..col {
            x[r] -= a[r * n + col] * x[col];
        }
    }
    Some(x)
}

/// Solve min c^T x over the affine rows and bounds of `program`.
pub fn simplex_solve(program: &TranscribedProgram) -> Result<SimplexResult, SimplexError> {
    let lp = extract(program)?;
    let (m, ncol) = (lp.m, lp.ncol);

    // nonbasic start: every column at its finite bound nearest zero
    let at_value = |j: usize| -> f64 {
        if lp.lb[j].is_finite() && lp.ub[j].is_finite() {
            if lp.lb[j].abs() <= lp.ub[j].abs() {
                lp.lb[j]
            } else {
                lp.ub[j]
            }
        } else if lp.lb[j].is_finite() {
            lp.lb[j]
        } else if lp.ub[j].is_finite() {
            lp.ub[j]
        } else {
            0.0
        }
    };
    let mut x: Vec<f64> = (0..ncol).map(at_value).collect();

    // artificials: one per row, covering the residual
    let total = ncol + m;
    let mut xa = x.clone();
    xa.extend(vec![0.0; m]);
    let mut lba = lp.lb.clone();
    lba.extend(vec![0.0; m]);
    let mut uba = lp.ub.clone();
    uba.extend(vec![f64::INFINITY; m]);
    let mut art_sign = vec![1.0; m];
    for r in 0..m {
        let mut resid = lp.b[r];
        for j in 0..ncol {
            resid -= lp.a[r * ncol + j] * x[j];
        }
        art_sign[r] = if resid >= 0.0 { 1.0 } else { -1.0 };
        xa[ncol + r] = resid.abs();
    }
    let col_of = |r: usize, j: usize, a: &Lp, art_sign: &[f64]| -> f64 {
        if j < ncol {
            a.a[r * ncol + j]
        } else if j - ncol == r {
            art_sign[r]
        } else {
            0.0
        }
    };

    let mut basis: Vec<usize> = (ncol..total).collect();
    let mut in_basis = vec![false; total];
    for &j in &basis {
        in_basis[j] = true;
    }

    #[allow(clippy::too_many_arguments)]
    let run_phase = |xa: &mut Vec<f64>,
                     basis: &mut Vec<usize>,
                     in_basis: &mut Vec<bool>,
                     cost: &[f64],
                     lba: &[f64],
                     uba: &[f64],
                     forbid_artificials: bool|
     -> Result<(), SimplexError> {
        let max_iter = 200 * (total + m);
        for _ in 0..max_iter {
            // basis matrix and duals
            let mut bmat = vec![0.0; m * m];
            for (bi, &j) in basis.iter().enumerate() {
                for r in 0..m {
                    bmat[r * m + bi] = col_of(r, j, &lp, &art_sign);
                }
            }
            let cb: Vec<f64> = basis.iter().map(|&j| cost[j]).collect();
            // y solves B^T y = c_B
            let mut bt = vec![0.0; m * m];
            for r in 0..m {
                for c in 0..m {
                    bt[r * m + c] = bmat[c * m + r];
                }
            }
            let y = lu_solve(&bt, &cb, m).ok_or(SimplexError::IterationLimit)?;

            // Bland: smallest eligible index
            let mut entering: Option<(usize, f64)> = None;
            for j in 0..total {
                if in_basis[j] {
                    continue;
                }
                if forbid_artificials && j >= ncol {
                    continue;
                }
                let mut d = cost[j];
                for r in 0..m {
                    d -= y[r] * col_of(r, j, &lp, &art_sign);
                }
                let at_lb = (xa[j] - lba[j]).abs() < 1e-9 * (1.0 + lba[j].abs());
                let at_ub = uba[j].is_finite() && (uba[j] - xa[j]).abs() < 1e-9 * (1.0 + uba[j].abs());
                let dir = if at_lb && d < -TOL {
                    1.0
                } else if at_ub && d > TOL {
                    -1.0
                } else if !at_lb && !at_ub && d.abs() > TOL {
                    // free nonbasic
                    -d.signum()
                } else {
                    continue;
                };
                entering = Some((j, dir));
                break;
            }
            let Some((ent, dir)) = entering else {
                return Ok(());
            };

            // direction w = B^-1 A_ent
            let aent: Vec<f64> = (0..m).map(|r| col_of(r, ent, &lp, &art_sign)).collect();
            let w = lu_solve(&bmat, &aent, m).ok_or(SimplexError::IterationLimit)?;

            // ratio test; basic j moves by -dir*w, entering by dir
            let mut limit = f64::INFINITY;
            let mut leaving: Option<(usize, f64)> = None; // (basis position, bound value)
            for (bi, &j) in basis.iter().enumerate() {
                let delta = -dir * w[bi];
                if delta < -1e-12 {
                    let room = xa[j] - lba[j];
                    let t = room / -delta;
                    if lba[j].is_finite() && t < limit - 1e-15 {
                        limit = t;
                        leaving = Some((bi, lba[j]));
                    }
                } else if delta > 1e-12 && uba[j].is_finite() {
                    let room = uba[j] - xa[j];
                    let t = room / delta;
                    if t < limit - 1e-15 {
                        limit = t;
                        leaving = Some((bi, uba[j]));
                    }
                }
            }
            // entering hits its own opposite bound
            let own_room = if dir > 0.0 {
                uba[ent] - xa[ent]
            } else {
                xa[ent] - lba[ent]
            };
            let own_limit = if own_room.is_finite() { own_room } else { f64::INFINITY };
            if own_limit < limit {
                // bound flip, basis unchanged
                let t = own_limit;
                xa[ent] += dir * t;
                for (bi, &j) in basis.iter().enumerate() {
                    xa[j] += -dir * w[bi] * t;
                }
                continue;
            }
            if !limit.is_finite() {
                return Err(SimplexError::Unbounded(ent));
            }
            let (lv_pos, lv_bound) = leaving.expect("finite limit implies a leaving variable");
            let lv = basis[lv_pos];
            xa[ent] += dir * limit;
            for (bi, &j) in basis.iter().enumerate() {
                xa[j] += -dir * w[bi] * limit;
            }
            xa[lv] = lv_bound;
            basis[lv_pos] = ent;
            in_basis[lv] = false;
            in_basis[ent] = true;
        }
        Err(SimplexError::IterationLimit)
    };

    // phase 1
    let mut phase1_cost = vec![0.0; total];
    for c in phase1_cost.iter_mut().skip(ncol) {
        *c = 1.0;
    }
    run_phase(&mut xa, &mut basis, &mut in_basis, &phase1_cost, &lba, &uba, false)?;
    let art_sum: f64 = xa[ncol..].iter().sum();
    if art_sum > 1e-7 {
        return Err(SimplexError::Infeasible(art_sum));
    }

    // phase 2: keep artificials pinned at zero
    for j in ncol..total {
        uba[j] = 0.0;
    }
    let mut phase2_cost = vec![0.0; total];
    phase2_cost[..ncol].copy_from_slice(&lp.cost);
    run_phase(&mut xa, &mut basis, &mut in_basis, &phase2_cost, &lba, &uba, true)?;

    x.copy_from_slice(&xa[..ncol]);
    let objective: f64 = {
        // include the program's constant objective term
        let compiled = CompiledProgram::compile(program);
        let mut buf = vec![];
        let (obj, _) = compiled.eval_values(&x[..program.n_vars()], &mut buf);
        obj
    };
    Ok(SimplexResult { objective, primal: x[..program.n_vars()].to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collocate::{ConLabel, VarKey};

    fn aux(p: &mut TranscribedProgram, tag: u32, lb: f64, ub: f64) -> u32 {
        p.add_var(VarKey::Aux { tag }, lb, ub, 0.0)
    }

    #[test]
    fn one_dimensional_lp() {
        // min -x s.t. x <= 3, x >= 0
        let mut p = TranscribedProgram::new();
        let x = aux(&mut p, 0, 0.0, 3.0);
        let vx = p.arena.var(x);
        p.objective = p.arena.neg(vx);
        let r = simplex_solve(&p).unwrap();
        assert!((r.objective + 3.0).abs() < 1e-10);
        assert!((r.primal[0] - 3.0).abs() < 1e-10);
    }

    #[test]
    fn equality_and_inequality_rows() {
        // min x + 2y s.t. x + y = 1, x - y <= 0.5, x,y >= 0
        let mut p = TranscribedProgram::new();
        let x = aux(&mut p, 0, 0.0, f64::INFINITY);
        let y = aux(&mut p, 1, 0.0, f64::INFINITY);
        let (vx, vy) = (p.arena.var(x), p.arena.var(y));
        let two_y = p.arena.scale(2.0, vy);
        p.objective = p.arena.add(vx, two_y);
        let sum = p.arena.add(vx, vy);
        p.add_constraint(ConLabel::Custom("eq".into()), sum, 1.0, 1.0);
        let diff = p.arena.sub(vx, vy);
        p.add_constraint(ConLabel::Custom("ineq".into()), diff, f64::NEG_INFINITY, 0.5);
        let r = simplex_solve(&p).unwrap();
        // optimum x = 0.75, y = 0.25: objective 1.25
        assert!((r.objective - 1.25).abs() < 1e-9, "obj {}", r.objective);
        assert!((r.primal[0] - 0.75).abs() < 1e-9);
        assert!((r.primal[1] - 0.25).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible() {
        let mut p = TranscribedProgram::new();
        let x = aux(&mut p, 0, 0.0, 1.0);
        let vx = p.arena.var(x);
        p.objective = vx;
        p.add_constraint(ConLabel::Custom("impossible".into()), vx, 2.0, 3.0);
        assert!(matches!(simplex_solve(&p), Err(SimplexError::Infeasible(_))));
    }

    #[test]
    fn detects_unbounded() {
        let mut p = TranscribedProgram::new();
        let x = aux(&mut p, 0, 0.0, f64::INFINITY);
        let vx = p.arena.var(x);
        p.objective = p.arena.neg(vx);
        assert!(matches!(simplex_solve(&p), Err(SimplexError::Unbounded(_))));
    }

    #[test]
    fn degenerate_lp_terminates() {
        // multiple optima; Bland's rule must still terminate
        let mut p = TranscribedProgram::new();
        let x = aux(&mut p, 0, 0.0, 1.0);
        let y = aux(&mut p, 1, 0.0, 1.0);
        let (vx, vy) = (p.arena.var(x), p.arena.var(y));
        let s = p.arena.add(vx, vy);
        p.objective = s;
        p.add_constraint(ConLabel::Custom("tie".into()), s, 0.5, f64::INFINITY);
        let r = simplex_solve(&p).unwrap();
        assert!((r.objective - 0.5).abs() < 1e-9);
    }
}
