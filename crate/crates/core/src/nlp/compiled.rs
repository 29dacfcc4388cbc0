//! Tape-compiled view of a transcribed program: one flat evaluation pass
//! yields objective, constraints, gradients, Jacobian and Lagrangian-Hessian
//! entries. Derivatives are symbolic (built once at compile time).

use crate::collocate::TranscribedProgram;
use crate::expr::{Node, NodeId, Tape, VarId};

#[derive(Debug, Clone, Copy)]
pub enum HessSrc {
    Obj,
    Con(u32),
}

#[derive(Debug, Clone)]
pub struct HessEntry {
    /// row >= col in variable indices
    pub row: VarId,
    pub col: VarId,
    pub src: HessSrc,
    pub slot: u32,
}

/// Compiled program: cheap value-only pass for line searches, full pass for
/// derivative assembly.
pub struct CompiledProgram {
    pub n_vars: usize,
    pub n_cons: usize,
    value_tape: Tape,
    value_obj: u32,
    value_cons: Vec<u32>,
    full_tape: Tape,
    full_obj: u32,
    full_cons: Vec<u32>,
    pub obj_grad: Vec<(VarId, u32)>,
    /// per constraint: (variable, slot in full tape)
    pub jac: Vec<Vec<(VarId, u32)>>,
    pub hess: Vec<HessEntry>,
}

impl CompiledProgram {
    pub fn compile(program: &TranscribedProgram) -> CompiledProgram {
        let mut arena = program.arena.clone();
        let n_cons = program.constraints.len();

        // value tape
        let mut value_roots = vec![program.objective];
        value_roots.extend(program.constraints.iter().map(|c| c.expr));
        let (value_tape, value_slots) = arena.compile(&value_roots);

        // symbolic first derivatives
        let mut obj_grad_ids: Vec<(VarId, NodeId)> = vec![];
        for v in arena.support(program.objective) {
            let d = arena.diff(program.objective, v);
            if !matches!(arena.node(d), Node::Const(c) if c == 0.0) {
                obj_grad_ids.push((v, d));
            }
        }
        let mut jac_ids: Vec<Vec<(VarId, NodeId)>> = Vec::with_capacity(n_cons);
        for c in &program.constraints {
            let mut row = vec![];
            for v in arena.support(c.expr) {
                let d = arena.diff(c.expr, v);
                if !matches!(arena.node(d), Node::Const(x) if x == 0.0) {
                    row.push((v, d));
                }
            }
            jac_ids.push(row);
        }

        // second derivatives, lower triangle
        let mut hess_ids: Vec<(VarId, VarId, HessSrc, NodeId)> = vec![];
        let emit_hessian = |arena: &mut crate::expr::ExprArena,
                                grads: &[(VarId, NodeId)],
                                src: HessSrc,
                                out: &mut Vec<(VarId, VarId, HessSrc, NodeId)>| {
            for &(vi, gi) in grads {
                if matches!(arena.node(gi), Node::Const(_)) {
                    continue;
                }
                for vj in arena.support(gi) {
                    if vj > vi {
                        continue;
                    }
                    let h = arena.diff(gi, vj);
                    if !matches!(arena.node(h), Node::Const(x) if x == 0.0) {
                        out.push((vi, vj, src, h));
                    }
                }
            }
        };
        emit_hessian(&mut arena, &obj_grad_ids, HessSrc::Obj, &mut hess_ids);
        for (ci, row) in jac_ids.iter().enumerate() {
            emit_hessian(&mut arena, row, HessSrc::Con(ci as u32), &mut hess_ids);
        }

        // full tape over everything
        let mut full_roots = vec![program.objective];
        full_roots.extend(program.constraints.iter().map(|c| c.expr));
        full_roots.extend(obj_grad_ids.iter().map(|&(_, d)| d));
        for row in &jac_ids {
            full_roots.extend(row.iter().map(|&(_, d)| d));
        }
        full_roots.extend(hess_ids.iter().map(|&(_, _, _, h)| h));
        let (full_tape, full_slots) = arena.compile(&full_roots);

        let mut cursor = 0usize;
        let full_obj = full_slots[cursor];
        cursor += 1;
        let full_cons: Vec<u32> = (0..n_cons)
            .map(|i| full_slots[cursor + i])
            .collect();
        cursor += n_cons;
        let obj_grad: Vec<(VarId, u32)> = obj_grad_ids
            .iter()
            .enumerate()
            .map(|(i, &(v, _))| (v, full_slots[cursor + i]))
            .collect();
        cursor += obj_grad_ids.len();
        let mut jac = Vec::with_capacity(n_cons);
        for row in &jac_ids {
            let r: Vec<(VarId, u32)> = row
                .iter()
                .enumerate()
                .map(|(i, &(v, _))| (v, full_slots[cursor + i]))
                .collect();
            cursor += row.len();
            jac.push(r);
        }
        let hess: Vec<HessEntry> = hess_ids
            .iter()
            .enumerate()
            .map(|(i, &(row, col, src, _))| HessEntry { row, col, src, slot: full_slots[cursor + i] })
            .collect();

        CompiledProgram {
            n_vars: program.n_vars(),
            n_cons,
            value_tape,
            value_obj: value_slots[0],
            value_cons: value_slots[1..].to_vec(),
            full_tape,
            full_obj,
            full_cons,
            obj_grad,
            jac,
            hess,
        }
    }

    /// Objective and constraint values only.
    pub fn eval_values(&self, x: &[f64], buf: &mut Vec<f64>) -> (f64, Vec<f64>) {
        self.value_tape.eval(x, buf);
        let obj = buf[self.value_obj as usize];
        let cons = self.value_cons.iter().map(|&s| buf[s as usize]).collect();
        (obj, cons)
    }

    /// Full pass: the caller reads slots out of `buf` via the entry tables.
    pub fn eval_full(&self, x: &[f64], buf: &mut Vec<f64>) -> (f64, Vec<f64>) {
        self.full_tape.eval(x, buf);
        let obj = buf[self.full_obj as usize];
        let cons = self.full_cons.iter().map(|&s| buf[s as usize]).collect();
        (obj, cons)
    }

    pub fn full_tape_len(&self) -> usize {
        self.full_tape.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::collocate::{ConLabel, VarKey};

    #[test]
    fn derivatives_match_finite_differences() {
        let mut p = TranscribedProgram::new();
        let x = p.add_var(VarKey::Aux { tag: 0 }, -10.0, 10.0, 1.2);
        let y = p.add_var(VarKey::Aux { tag: 1 }, -10.0, 10.0, 0.7);
        let (vx, vy) = (p.arena.var(x), p.arena.var(y));
        // f = x^2 y + exp(x y)
        let x2 = p.arena.mul(vx, vx);
        let t1 = p.arena.mul(x2, vy);
        let xy = p.arena.mul(vx, vy);
        let e = p.arena.exp(xy);
        p.objective = p.arena.add(t1, e);
        // c = x / (1 + y^2)
        let y2 = p.arena.mul(vy, vy);
        let one = p.arena.constant(1.0);
        let den = p.arena.add(one, y2);
        let c = p.arena.div(vx, den);
        p.add_constraint(ConLabel::Custom("c".into()), c, 0.0, 1.0);

        let cp = CompiledProgram::compile(&p);
        let point = [1.2f64, 0.7];
        let mut buf = vec![];
        let (obj, cons) = cp.eval_full(&point, &mut buf);
        let f = |x: f64, y: f64| x * x * y + (x * y).exp();
        let g = |x: f64, y: f64| x / (1.0 + y * y);
        assert!((obj - f(1.2, 0.7)).abs() < 1e-14);
        assert!((cons[0] - g(1.2, 0.7)).abs() < 1e-14);

        let h = 1e-6;
        // objective gradient
        let mut grad = [0.0f64; 2];
        for &(v, slot) in &cp.obj_grad {
            grad[v as usize] = buf[slot as usize];
        }
        let fdx = (f(1.2 + h, 0.7) - f(1.2 - h, 0.7)) / (2.0 * h);
        let fdy = (f(1.2, 0.7 + h) - f(1.2, 0.7 - h)) / (2.0 * h);
        assert!((grad[0] - fdx).abs() < 1e-7 * fdx.abs().max(1.0));
        assert!((grad[1] - fdy).abs() < 1e-7 * fdy.abs().max(1.0));

        // constraint jacobian
        let mut jac = [0.0f64; 2];
        for &(v, slot) in &cp.jac[0] {
            jac[v as usize] = buf[slot as usize];
        }
        let gdx = (g(1.2 + h, 0.7) - g(1.2 - h, 0.7)) / (2.0 * h);
        let gdy = (g(1.2, 0.7 + h) - g(1.2, 0.7 - h)) / (2.0 * h);
        assert!((jac[0] - gdx).abs() < 1e-7);
        assert!((jac[1] - gdy).abs() < 1e-7);

        // lagrangian hessian with sigma = 1, lambda = 0.5
        let lambda = 0.5;
        let mut hfull = [[0.0f64; 2]; 2];
        for e in &cp.hess {
            let w = match e.src {
                HessSrc::Obj => 1.0,
                HessSrc::Con(0) => lambda,
                HessSrc::Con(_) => 0.0,
            };
            hfull[e.row as usize][e.col as usize] += w * buf[e.slot as usize];
        }
        let lag = |x: f64, y: f64| f(x, y) + lambda * g(x, y);
        let fd2 = |i: usize, j: usize| {
            let mut pt = [1.2, 0.7];
            let hh = 1e-4;
            let mut vals = [[0.0; 2]; 2];
            for (a, da) in [(0usize, hh), (1usize, -hh)] {
                for (b, db) in [(0usize, hh), (1usize, -hh)] {
                    pt = [1.2, 0.7];
                    pt[i] += da;
                    pt[j] += db;
                    vals[a][b] = lag(pt[0], pt[1]);
                }
            }
            (vals[0][0] - vals[0][1] - vals[1][0] + vals[1][1]) / (4.0 * hh * hh)
        };
        for i in 0..2usize {
            for j in 0..=i {
                let want = fd2(i, j);
                assert!(
                    (hfull[i][j] - want).abs() < 1e-5 * want.abs().max(1.0),
                    "H[{i}][{j}] = {} vs fd {want}",
                    hfull[i][j]
                );
            }
        }
    }
}
