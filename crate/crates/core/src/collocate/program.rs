//! Sparse variable/constraint/objective description of a discretized dynamic
//! optimization, shared by the LP, NLP and MPCC paths.

use std::collections::BTreeMap;
use std::fmt;

use crate::expr::{ExprArena, Node, NodeId, VarId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum InputKind {
    Light,
    Feed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum FluxDir {
    /// irreversible reaction, single variable
    Single,
    Forward,
    Backward,
}

/// Identity of a program variable: every model symbol at every node has
/// exactly one variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VarKey {
    /// state idx (flattened [p_reg, z, p_unr, vL]) at collocation node
    /// `node` in 1..=d of interval `interval`
    State { interval: u32, node: u32, idx: u32 },
    Flux { interval: u32, node: u32, rxn: u32, dir: FluxDir },
    Input { interval: u32, kind: InputKind },
    /// free initial state (estimation)
    InitState { idx: u32 },
    /// state noise between intervals (estimation, full mode)
    Noise { interval: u32, idx: u32 },
    /// multiplier of an inner equality row
    DualEq { interval: u32, row: u32 },
    /// multiplier of an inner inequality (row or bound)
    DualIneq { interval: u32, row: u32 },
    /// general-purpose extras (soft-constraint elastics, test programs)
    Aux { tag: u32 },
}

impl fmt::Display for VarKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarKey::State { interval, node, idx } => write!(f, "x[{interval},{node},{idx}]"),
            VarKey::Flux { interval, node, rxn, dir } => {
                let d = match dir {
                    FluxDir::Single => "",
                    FluxDir::Forward => "+",
                    FluxDir::Backward => "-",
                };
                write!(f, "V{d}[{interval},{node},{rxn}]")
            }
            VarKey::Input { interval, kind } => {
                let k = match kind {
                    InputKind::Light => "Is",
                    InputKind::Feed => "Fin",
                };
                write!(f, "{k}[{interval}]")
            }
            VarKey::InitState { idx } => write!(f, "x0[{idx}]"),
            VarKey::Noise { interval, idx } => write!(f, "w[{interval},{idx}]"),
            VarKey::DualEq { interval, row } => write!(f, "lam[{interval},{row}]"),
            VarKey::DualIneq { interval, row } => write!(f, "mu[{interval},{row}]"),
            VarKey::Aux { tag } => write!(f, "aux[{tag}]"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct VarInfo {
    pub key: VarKey,
    pub lb: f64,
    pub ub: f64,
    /// initial value handed to the solver
    pub init: f64,
    /// magnitude hint for solver scaling (floor on |init|)
    pub scale: f64,
}

/// Human-readable constraint identity for diagnostics and family-wise tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConLabel {
    Collocation { interval: u32, node: u32, state: u32 },
    Qss { interval: u32, node: u32, met: u32 },
    CapacityUnr { interval: u32, node: u32, enzyme: u32 },
    CapacityReg { interval: u32, node: u32, reg: u32 },
    RegSynthesis { interval: u32, node: u32, reg: u32 },
    Quota { interval: u32, node: u32 },
    InitPin { state: u32 },
    Stationarity { interval: u32, wrt: VarId },
    Complementarity { interval: u32, pair: u32 },
    Custom(String),
}

impl fmt::Display for ConLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConLabel::Collocation { interval, node, state } => {
                write!(f, "collocation[{interval},{node},{state}]")
            }
            ConLabel::Qss { interval, node, met } => write!(f, "qss[{interval},{node},{met}]"),
            ConLabel::CapacityUnr { interval, node, enzyme } => {
                write!(f, "capacity[{interval},{node},{enzyme}]")
            }
            ConLabel::CapacityReg { interval, node, reg } => {
                write!(f, "capacity_reg[{interval},{node},{reg}]")
            }
            ConLabel::RegSynthesis { interval, node, reg } => {
                write!(f, "reg_synthesis[{interval},{node},{reg}]")
            }
            ConLabel::Quota { interval, node } => write!(f, "quota[{interval},{node}]"),
            ConLabel::InitPin { state } => write!(f, "init_pin[{state}]"),
            ConLabel::Stationarity { interval, wrt } => write!(f, "stationarity[{interval},d{wrt}]"),
            ConLabel::Complementarity { interval, pair } => write!(f, "comp[{interval},{pair}]"),
            ConLabel::Custom(s) => write!(f, "{s}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConstraintInfo {
    pub expr: NodeId,
    pub lo: f64,
    pub up: f64,
    pub label: ConLabel,
}

impl ConstraintInfo {
    pub fn is_equality(&self) -> bool {
        self.lo == self.up
    }
}

/// The nonnegative quantity of a complementarity pair: either an inequality
/// row's slack (expr - lo) or a variable's distance to its lower bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompSide {
    Row(usize),
    VarLower(VarId),
    VarUpper(VarId),
}

/// g >= 0 paired with its multiplier; the relaxed product row `prod_row`
/// carries g * mu <= eps during the relaxation schedule.
#[derive(Debug, Clone)]
pub struct CompPair {
    pub g: CompSide,
    pub mu: VarId,
    pub prod_row: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProgramKind {
    Lp,
    Nlp,
    Mpcc,
}

/// A transcribed program: minimize `objective` subject to constraint rows and
/// variable bounds, with optional complementarity structure.
#[derive(Debug, Clone)]
pub struct TranscribedProgram {
    pub arena: ExprArena,
    pub vars: Vec<VarInfo>,
    pub constraints: Vec<ConstraintInfo>,
    /// minimized objective
    pub objective: NodeId,
    pub comp_pairs: Vec<CompPair>,
    index: BTreeMap<VarKey, VarId>,
}

impl TranscribedProgram {
    pub fn new() -> Self {
        TranscribedProgram {
            arena: ExprArena::new(),
            vars: vec![],
            constraints: vec![],
            objective: 0,
            comp_pairs: vec![],
            index: BTreeMap::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn n_constraints(&self) -> usize {
        self.constraints.len()
    }

    /// Add a variable; keys must be unique.
    pub fn add_var(&mut self, key: VarKey, lb: f64, ub: f64, init: f64) -> VarId {
        self.add_var_scaled(key, lb, ub, init, 1.0)
    }

    pub fn add_var_scaled(&mut self, key: VarKey, lb: f64, ub: f64, init: f64, scale: f64) -> VarId {
        assert!(
            !self.index.contains_key(&key),
            "duplicate variable key {key}"
        );
        let id = self.vars.len() as VarId;
        self.vars.push(VarInfo { key, lb, ub, init, scale });
        self.index.insert(key, id);
        id
    }

    pub fn var_id(&self, key: &VarKey) -> Option<VarId> {
        self.index.get(key).copied()
    }

    pub fn var_key(&self, id: VarId) -> VarKey {
        self.vars[id as usize].key
    }

    /// The (key -> id) map; iteration order is the key order.
    pub fn index(&self) -> &BTreeMap<VarKey, VarId> {
        &self.index
    }

    pub fn add_constraint(&mut self, label: ConLabel, expr: NodeId, lo: f64, up: f64) -> usize {
        self.constraints.push(ConstraintInfo { expr, lo, up, label });
        self.constraints.len() - 1
    }

    pub fn add_equality(&mut self, label: ConLabel, expr: NodeId) -> usize {
        self.add_constraint(label, expr, 0.0, 0.0)
    }

    /// Effective kind: MPCC if complementarity pairs exist, else LP iff
    /// the objective and all rows are affine.
    pub fn kind(&self) -> ProgramKind {
        if !self.comp_pairs.is_empty() {
            return ProgramKind::Mpcc;
        }
        if self.is_affine() {
            ProgramKind::Lp
        } else {
            ProgramKind::Nlp
        }
    }

    /// True when every row and the objective are degree <= 1 polynomials.
    pub fn is_affine(&self) -> bool {
        let mut cache: Vec<Option<Option<u32>>> = vec![None; self.arena.len()];
        let mut affine = poly_degree(&self.arena, self.objective, &mut cache)
            .map(|d| d <= 1)
            .unwrap_or(false);
        for c in &self.constraints {
            if !affine {
                break;
            }
            affine &= poly_degree(&self.arena, c.expr, &mut cache)
                .map(|d| d <= 1)
                .unwrap_or(false);
        }
        affine
    }

    /// Initial point as stored on the variables.
    pub fn initial_point(&self) -> Vec<f64> {
        self.vars.iter().map(|v| v.init).collect()
    }

    /// Set initial values from a full-length vector.
    pub fn set_initial_point(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.vars.len());
        for (v, &xi) in self.vars.iter_mut().zip(x) {
            v.init = xi;
        }
    }

    /// Evaluate one constraint row at a point (reference path, not the tape).
    pub fn eval_constraint(&self, row: usize, x: &[f64]) -> f64 {
        self.arena.eval(self.constraints[row].expr, x)
    }

    /// Maximum violation of rows and bounds at a point.
    pub fn infeasibility(&self, x: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for c in &self.constraints {
            let v = self.arena.eval(c.expr, x);
            worst = worst.max(c.lo - v).max(v - c.up);
        }
        for (v, xi) in self.vars.iter().zip(x) {
            worst = worst.max(v.lb - xi).max(xi - v.ub);
        }
        worst
    }

    /// Debug dump: variables, bounds and a description of every row.
    pub fn dump_json(&self) -> String {
        let fmt_bound = |b: f64| {
            if b == f64::INFINITY {
                "\"inf\"".to_string()
            } else if b == f64::NEG_INFINITY {
                "\"-inf\"".to_string()
            } else {
                format!("{b}")
            }
        };
        let mut out = String::from("{\n  \"variables\": [\n");
        for (i, v) in self.vars.iter().enumerate() {
            out.push_str(&format!(
                "    {{\"id\": {i}, \"key\": \"{}\", \"lb\": {}, \"ub\": {}, \"init\": {}}}{}\n",
                v.key,
                fmt_bound(v.lb),
                fmt_bound(v.ub),
                v.init,
                if i + 1 < self.vars.len() { "," } else { "" }
            ));
        }
        out.push_str("  ],\n  \"constraints\": [\n");
        for (i, c) in self.constraints.iter().enumerate() {
            out.push_str(&format!(
                "    {{\"row\": {i}, \"label\": \"{}\", \"lo\": {}, \"up\": {}, \"support\": {}}}{}\n",
                c.label,
                fmt_bound(c.lo),
                fmt_bound(c.up),
                self.arena.support(c.expr).len(),
                if i + 1 < self.constraints.len() { "," } else { "" }
            ));
        }
        out.push_str(&format!(
            "  ],\n  \"comp_pairs\": {},\n  \"kind\": \"{:?}\"\n}}\n",
            self.comp_pairs.len(),
            self.kind()
        ));
        out
    }
}

impl Default for TranscribedProgram {
    fn default() -> Self {
        Self::new()
    }
}

/// Polynomial degree of an expression, `None` when non-polynomial
/// (division by non-constants, exp, fractional powers, phi).
fn poly_degree(arena: &ExprArena, id: NodeId, cache: &mut Vec<Option<Option<u32>>>) -> Option<u32> {
    if let Some(hit) = cache[id as usize] {
        return hit;
    }
    let deg = match arena.node(id) {
        Node::Const(_) => Some(0),
        Node::Var(_) => Some(1),
        Node::Add(a, b) | Node::Sub(a, b) => {
            match (poly_degree(arena, a, cache), poly_degree(arena, b, cache)) {
                (Some(x), Some(y)) => Some(x.max(y)),
                _ => None,
            }
        }
        Node::Mul(a, b) => match (poly_degree(arena, a, cache), poly_degree(arena, b, cache)) {
            (Some(x), Some(y)) => Some(x + y),
            _ => None,
        },
        Node::Div(a, b) => match (poly_degree(arena, a, cache), poly_degree(arena, b, cache)) {
            (Some(x), Some(0)) => Some(x),
            _ => None,
        },
        Node::Neg(a) => poly_degree(arena, a, cache),
        Node::Exp(a) | Node::Phi(_, a) => match poly_degree(arena, a, cache) {
            Some(0) => Some(0),
            _ => None,
        },
        Node::Powf(a, p) => match poly_degree(arena, a, cache) {
            Some(0) => Some(0),
            Some(x) if p >= 0.0 && p.fract() == 0.0 => Some(x * p as u32),
            _ => None,
        },
    };
    cache[id as usize] = Some(deg);
    deg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_map_is_bijective() {
        let mut p = TranscribedProgram::new();
        for interval in 0..3u32 {
            for node in 1..=2u32 {
                for idx in 0..4u32 {
                    p.add_var(VarKey::State { interval, node, idx }, 0.0, 1.0, 0.5);
                }
            }
            p.add_var(VarKey::Input { interval, kind: InputKind::Feed }, 0.0, 1.0, 0.0);
        }
        assert_eq!(p.index().len(), p.n_vars());
        for (key, &id) in p.index() {
            assert_eq!(p.var_key(id), *key);
        }
        // ids are dense and unique
        let mut ids: Vec<VarId> = p.index().values().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), p.n_vars());
    }

    #[test]
    fn affine_detection() {
        let mut p = TranscribedProgram::new();
        let a = p.add_var(VarKey::Aux { tag: 0 }, 0.0, 10.0, 1.0);
        let b = p.add_var(VarKey::Aux { tag: 1 }, 0.0, 10.0, 1.0);
        let (va, vb) = (p.arena.var(a), p.arena.var(b));
        let lin = p.arena.add(va, vb);
        p.objective = lin;
        p.add_constraint(ConLabel::Custom("lin".into()), lin, 0.0, 5.0);
        assert!(p.is_affine());
        assert_eq!(p.kind(), ProgramKind::Lp);

        let bilinear = p.arena.mul(va, vb);
        p.add_constraint(ConLabel::Custom("bilin".into()), bilinear, 0.0, 5.0);
        assert!(!p.is_affine());
        assert_eq!(p.kind(), ProgramKind::Nlp);
    }

    #[test]
    #[should_panic(expected = "duplicate variable key")]
    fn duplicate_keys_panic() {
        let mut p = TranscribedProgram::new();
        p.add_var(VarKey::Aux { tag: 0 }, 0.0, 1.0, 0.0);
        p.add_var(VarKey::Aux { tag: 0 }, 0.0, 1.0, 0.0);
    }
}
