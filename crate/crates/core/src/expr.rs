//! Scalar expression graphs with hash-consing, symbolic differentiation and
//! a flat evaluation tape.
//!
//! Transcribed programs store their objective and constraints as nodes of one
//! arena. Jacobians and Lagrangian Hessians are obtained by symbolic
//! differentiation (new nodes in the same arena), so the stationarity rows of
//! an embedded KKT system are ordinary expressions that can be differentiated
//! again for the outer solver.

use std::collections::HashMap;

/// Index of a node in an [`ExprArena`].
pub type NodeId = u32;

/// Variable index inside a program (dense, 0-based).
pub type VarId = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Node {
    Const(f64),
    Var(VarId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    /// `Powf(x, p)`: x^p with constant exponent.
    Powf(NodeId, f64),
    /// `Phi(n, k)`: the n-th derivative of phi(k) = (1 - e^-k)/k.
    ///
    /// phi shows up in the depth-averaged light intensity; keeping it (and its
    /// derivatives) as a primitive avoids the 0/0 cancellation of the closed
    /// form near k = 0.
    Phi(u8, NodeId),
}

/// Hashable key for interning; f64 payloads are compared by bit pattern.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum NodeKey {
    Const(u64),
    Var(VarId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Div(NodeId, NodeId),
    Neg(NodeId),
    Exp(NodeId),
    Powf(NodeId, u64),
    Phi(u8, NodeId),
}

fn key_of(node: &Node) -> NodeKey {
    match *node {
        Node::Const(c) => NodeKey::Const(c.to_bits()),
        Node::Var(v) => NodeKey::Var(v),
        Node::Add(a, b) => NodeKey::Add(a, b),
        Node::Sub(a, b) => NodeKey::Sub(a, b),
        Node::Mul(a, b) => NodeKey::Mul(a, b),
        Node::Div(a, b) => NodeKey::Div(a, b),
        Node::Neg(a) => NodeKey::Neg(a),
        Node::Exp(a) => NodeKey::Exp(a),
        Node::Powf(a, p) => NodeKey::Powf(a, p.to_bits()),
        Node::Phi(n, a) => NodeKey::Phi(n, a),
    }
}

/// Evaluate phi_n(k), the n-th derivative of phi_0(k) = (1 - e^-k)/k.
///
/// For k >= 0.5 the closed form
///   phi_n(k) = (-1)^n (n! - e^-k * sum_{j=0..n} (n!/j!) k^j) / k^(n+1)
/// is stable; below that a truncated power series is used
/// (phi_0 = sum_m (-k)^m / (m+1)!, differentiated termwise).
pub fn phi_eval(n: u8, k: f64) -> f64 {
    let n = n as i32;
    if k.abs() < 0.5 {
        // series: phi_n(k) = sum_{m>=n} a_m * m!/(m-n)! * k^(m-n),
        // a_m = (-1)^m/(m+1)!
        let mut sum = 0.0;
        // first term: a_n * n! = (-1)^n n!/(n+1)! = (-1)^n/(n+1)
        let mut coef = if n % 2 == 0 { 1.0 } else { -1.0 } / (n as f64 + 1.0);
        let mut kpow = 1.0;
        for m in n..(n + 30) {
            if m > n {
                // term ratio: a_m/a_{m-1} = -1/(m+1), falling-factorial ratio m/(m-n)
                coef *= -(m as f64) / ((m as f64 + 1.0) * (m as f64 - n as f64));
                kpow *= k;
            }
            let term = coef * kpow;
            sum += term;
            if term.abs() < 1e-19 * sum.abs().max(1e-30) {
                break;
            }
        }
        sum
    } else {
        let mut nfact = 1.0f64;
        for j in 1..=n {
            nfact *= j as f64;
        }
        // sum_{j=0..n} (n!/j!) k^j
        let mut s = 0.0;
        let mut c = nfact; // n!/0!
        let mut kp = 1.0;
        for j in 0..=n {
            if j > 0 {
                c /= j as f64;
                kp *= k;
            }
            s += c * kp;
        }
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        sign * (nfact - (-k).exp() * s) / k.powi(n + 1)
    }
}

/// Arena of interned expression nodes.
#[derive(Debug, Default, Clone)]
pub struct ExprArena {
    nodes: Vec<Node>,
    intern: HashMap<NodeKey, NodeId>,
    /// memoized d(node)/d(var)
    diff_cache: HashMap<(NodeId, VarId), NodeId>,
}

impl ExprArena {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Node {
        self.nodes[id as usize]
    }

    fn push(&mut self, node: Node) -> NodeId {
        let key = key_of(&node);
        if let Some(&id) = self.intern.get(&key) {
            return id;
        }
        let id = self.nodes.len() as NodeId;
        self.nodes.push(node);
        self.intern.insert(key, id);
        id
    }

    pub fn constant(&mut self, c: f64) -> NodeId {
        self.push(Node::Const(c))
    }

    pub fn var(&mut self, v: VarId) -> NodeId {
        self.push(Node::Var(v))
    }

    fn const_val(&self, id: NodeId) -> Option<f64> {
        match self.nodes[id as usize] {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_val(a), self.const_val(b)) {
            (Some(x), Some(y)) => self.constant(x + y),
            (Some(0.0), None) => b,
            (None, Some(0.0)) => a,
            _ => self.push(Node::Add(a, b)),
        }
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        if a == b {
            return self.constant(0.0);
        }
        match (self.const_val(a), self.const_val(b)) {
            (Some(x), Some(y)) => self.constant(x - y),
            (None, Some(0.0)) => a,
            (Some(0.0), None) => self.neg(b),
            _ => self.push(Node::Sub(a, b)),
        }
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_val(a), self.const_val(b)) {
            (Some(x), Some(y)) => self.constant(x * y),
            (Some(0.0), None) | (None, Some(0.0)) => self.constant(0.0),
            (Some(1.0), None) => b,
            (None, Some(1.0)) => a,
            _ => self.push(Node::Mul(a, b)),
        }
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> NodeId {
        match (self.const_val(a), self.const_val(b)) {
            (Some(x), Some(y)) => self.constant(x / y),
            (Some(0.0), None) => self.constant(0.0),
            (None, Some(1.0)) => a,
            _ => self.push(Node::Div(a, b)),
        }
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        match self.nodes[a as usize] {
            Node::Const(c) => self.constant(-c),
            Node::Neg(inner) => inner,
            _ => self.push(Node::Neg(a)),
        }
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        match self.const_val(a) {
            Some(x) => self.constant(x.exp()),
            None => self.push(Node::Exp(a)),
        }
    }

    pub fn powf(&mut self, a: NodeId, p: f64) -> NodeId {
        if p == 0.0 {
            return self.constant(1.0);
        }
        if p == 1.0 {
            return a;
        }
        match self.const_val(a) {
            Some(x) => self.constant(x.powf(p)),
            None => self.push(Node::Powf(a, p)),
        }
    }

    pub fn phi(&mut self, n: u8, a: NodeId) -> NodeId {
        match self.const_val(a) {
            Some(x) => self.constant(phi_eval(n, x)),
            None => self.push(Node::Phi(n, a)),
        }
    }

    /// Sum of terms; returns the 0 constant for an empty list.
    pub fn sum(&mut self, terms: &[NodeId]) -> NodeId {
        let mut acc = self.constant(0.0);
        for &t in terms {
            acc = self.add(acc, t);
        }
        acc
    }

    /// coef * node, folding trivial coefficients.
    pub fn scale(&mut self, coef: f64, a: NodeId) -> NodeId {
        let c = self.constant(coef);
        self.mul(c, a)
    }

    /// Symbolic derivative d(id)/d(var); memoized.
    pub fn diff(&mut self, id: NodeId, var: VarId) -> NodeId {
        if let Some(&d) = self.diff_cache.get(&(id, var)) {
            return d;
        }
        let d = match self.nodes[id as usize] {
            Node::Const(_) => self.constant(0.0),
            Node::Var(v) => self.constant(if v == var { 1.0 } else { 0.0 }),
            Node::Add(a, b) => {
                let (da, db) = (self.diff(a, var), self.diff(b, var));
                self.add(da, db)
            }
            Node::Sub(a, b) => {
                let (da, db) = (self.diff(a, var), self.diff(b, var));
                self.sub(da, db)
            }
            Node::Mul(a, b) => {
                let (da, db) = (self.diff(a, var), self.diff(b, var));
                let t1 = self.mul(da, b);
                let t2 = self.mul(a, db);
                self.add(t1, t2)
            }
            Node::Div(a, b) => {
                let (da, db) = (self.diff(a, var), self.diff(b, var));
                let num1 = self.mul(da, b);
                let num2 = self.mul(a, db);
                let num = self.sub(num1, num2);
                let den = self.mul(b, b);
                self.div(num, den)
            }
            Node::Neg(a) => {
                let da = self.diff(a, var);
                self.neg(da)
            }
            Node::Exp(a) => {
                let da = self.diff(a, var);
                let e = self.exp(a);
                self.mul(e, da)
            }
            Node::Powf(a, p) => {
                let da = self.diff(a, var);
                let inner = self.powf(a, p - 1.0);
                let scaled = self.scale(p, inner);
                self.mul(scaled, da)
            }
            Node::Phi(n, a) => {
                let da = self.diff(a, var);
                let ph = self.phi(n + 1, a);
                self.mul(ph, da)
            }
        };
        self.diff_cache.insert((id, var), d);
        d
    }

    /// Sorted list of variables the expression depends on.
    pub fn support(&self, root: NodeId) -> Vec<VarId> {
        let mut seen = vec![];
        let mut visited = std::collections::HashSet::new();
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if !visited.insert(id) {
                continue;
            }
            match self.nodes[id as usize] {
                Node::Const(_) => {}
                Node::Var(v) => seen.push(v),
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                    stack.push(a);
                    stack.push(b);
                }
                Node::Neg(a) | Node::Exp(a) | Node::Powf(a, _) | Node::Phi(_, a) => stack.push(a),
            }
        }
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    /// Evaluate a single expression against a full variable vector.
    ///
    /// Convenience path for small expressions; programs compile a tape instead.
    pub fn eval(&self, root: NodeId, x: &[f64]) -> f64 {
        let order = self.topo_order(&[root]);
        let mut vals: HashMap<NodeId, f64> = HashMap::with_capacity(order.len());
        for id in order {
            let v = match self.nodes[id as usize] {
                Node::Const(c) => c,
                Node::Var(v) => x[v as usize],
                Node::Add(a, b) => vals[&a] + vals[&b],
                Node::Sub(a, b) => vals[&a] - vals[&b],
                Node::Mul(a, b) => vals[&a] * vals[&b],
                Node::Div(a, b) => vals[&a] / vals[&b],
                Node::Neg(a) => -vals[&a],
                Node::Exp(a) => vals[&a].exp(),
                Node::Powf(a, p) => vals[&a].powf(p),
                Node::Phi(n, a) => phi_eval(n, vals[&a]),
            };
            vals.insert(id, v);
        }
        vals[&root]
    }

    /// Children-before-parents order of the subgraph reachable from `roots`.
    fn topo_order(&self, roots: &[NodeId]) -> Vec<NodeId> {
        let mut visited = std::collections::HashSet::new();
        let mut order = vec![];
        // iterative post-order
        let mut stack: Vec<(NodeId, bool)> = roots.iter().map(|&r| (r, false)).collect();
        while let Some((id, expanded)) = stack.pop() {
            if expanded {
                order.push(id);
                continue;
            }
            if !visited.insert(id) {
                continue;
            }
            stack.push((id, true));
            match self.nodes[id as usize] {
                Node::Const(_) | Node::Var(_) => {}
                Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) => {
                    stack.push((a, false));
                    stack.push((b, false));
                }
                Node::Neg(a) | Node::Exp(a) | Node::Powf(a, _) | Node::Phi(_, a) => {
                    stack.push((a, false));
                }
            }
        }
        order
    }

    /// Compile the subgraph reachable from `roots` into a flat tape.
    ///
    /// Returns the tape together with the slot of each root, in input order.
    pub fn compile(&self, roots: &[NodeId]) -> (Tape, Vec<u32>) {
        let order = self.topo_order(roots);
        let mut slot_of: HashMap<NodeId, u32> = HashMap::with_capacity(order.len());
        let mut ops = Vec::with_capacity(order.len());
        for (slot, &id) in order.iter().enumerate() {
            let slot = slot as u32;
            let op = match self.nodes[id as usize] {
                Node::Const(c) => TapeOp::Const(c),
                Node::Var(v) => TapeOp::Var(v),
                Node::Add(a, b) => TapeOp::Add(slot_of[&a], slot_of[&b]),
                Node::Sub(a, b) => TapeOp::Sub(slot_of[&a], slot_of[&b]),
                Node::Mul(a, b) => TapeOp::Mul(slot_of[&a], slot_of[&b]),
                Node::Div(a, b) => TapeOp::Div(slot_of[&a], slot_of[&b]),
                Node::Neg(a) => TapeOp::Neg(slot_of[&a]),
                Node::Exp(a) => TapeOp::Exp(slot_of[&a]),
                Node::Powf(a, p) => TapeOp::Powf(slot_of[&a], p),
                Node::Phi(n, a) => TapeOp::Phi(n, slot_of[&a]),
            };
            ops.push(op);
            slot_of.insert(id, slot);
        }
        let root_slots = roots.iter().map(|r| slot_of[r]).collect();
        (Tape { ops }, root_slots)
    }
}

#[derive(Debug, Clone, Copy)]
enum TapeOp {
    Const(f64),
    Var(VarId),
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    Div(u32, u32),
    Neg(u32),
    Exp(u32),
    Powf(u32, f64),
    Phi(u8, u32),
}

/// Flat, topologically ordered evaluation program.
#[derive(Debug, Clone)]
pub struct Tape {
    ops: Vec<TapeOp>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Evaluate all slots into `buf` (resized as needed).
    pub fn eval(&self, x: &[f64], buf: &mut Vec<f64>) {
        buf.resize(self.ops.len(), 0.0);
        for (i, op) in self.ops.iter().enumerate() {
            let v = match *op {
                TapeOp::Const(c) => c,
                TapeOp::Var(v) => x[v as usize],
                TapeOp::Add(a, b) => buf[a as usize] + buf[b as usize],
                TapeOp::Sub(a, b) => buf[a as usize] - buf[b as usize],
                TapeOp::Mul(a, b) => buf[a as usize] * buf[b as usize],
                TapeOp::Div(a, b) => buf[a as usize] / buf[b as usize],
                TapeOp::Neg(a) => -buf[a as usize],
                TapeOp::Exp(a) => buf[a as usize].exp(),
                TapeOp::Powf(a, p) => buf[a as usize].powf(p),
                TapeOp::Phi(n, a) => phi_eval(n, buf[a as usize]),
            };
            buf[i] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn phi_series_matches_closed_form_below_crossover() {
        // phi_eval uses the series below k = 0.5; compare against the closed
        // form evaluated directly (cancellation is still mild at k = 0.49).
        for n in 0..5u8 {
            let k: f64 = 0.49;
            let ni = n as i32;
            let mut nfact = 1.0f64;
            for j in 1..=ni {
                nfact *= j as f64;
            }
            let mut s = 0.0;
            let mut c = nfact;
            let mut kp = 1.0;
            for j in 0..=ni {
                if j > 0 {
                    c /= j as f64;
                    kp *= k;
                }
                s += c * kp;
            }
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let closed = sign * (nfact - (-k).exp() * s) / k.powi(ni + 1);
            let series = phi_eval(n, k);
            assert!(
                (series - closed).abs() <= 1e-11 * closed.abs().max(1e-6),
                "phi_{n}(0.49): series {series} vs closed {closed}"
            );
        }
    }

    #[test]
    fn phi_limits_and_values() {
        assert!((phi_eval(0, 1e-14) - 1.0).abs() < 1e-12);
        assert!((phi_eval(0, 1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        // phi_1(k) -> -1/2 as k -> 0
        assert!((phi_eval(1, 1e-12) + 0.5).abs() < 1e-10);
        // derivative consistency by finite differences
        for n in 0..4u8 {
            for &k in &[0.01, 0.2, 0.7, 2.5, 9.0] {
                let d = fd(|x| phi_eval(n, x), k);
                let a = phi_eval(n + 1, k);
                assert!(
                    (d - a).abs() <= 1e-6 * a.abs().max(1e-3),
                    "phi_{} derivative mismatch at {}: fd {} analytic {}",
                    n,
                    k,
                    d,
                    a
                );
            }
        }
    }

    #[test]
    fn symbolic_diff_matches_finite_differences() {
        let mut ar = ExprArena::new();
        let x = ar.var(0);
        let y = ar.var(1);
        // f = x*y + exp(-x) / (1 + y^2.49) + phi0(x*y)
        let xy = ar.mul(x, y);
        let nx = ar.neg(x);
        let enx = ar.exp(nx);
        let y_pow = ar.powf(y, 2.49);
        let one = ar.constant(1.0);
        let den = ar.add(one, y_pow);
        let frac = ar.div(enx, den);
        let ph = ar.phi(0, xy);
        let t = ar.add(xy, frac);
        let f = ar.add(t, ph);

        let dxs = ar.diff(f, 0);
        let dys = ar.diff(f, 1);
        let point = [0.7, 1.3];
        let dx = ar.eval(dxs, &point);
        let dy = ar.eval(dys, &point);

        let eval_at = |p: &[f64]| {
            let x = p[0];
            let y = p[1];
            x * y + (-x).exp() / (1.0 + y.powf(2.49)) + phi_eval(0, x * y)
        };
        let h = 1e-6;
        let fdx = (eval_at(&[point[0] + h, point[1]]) - eval_at(&[point[0] - h, point[1]])) / (2.0 * h);
        let fdy = (eval_at(&[point[0], point[1] + h]) - eval_at(&[point[0], point[1] - h])) / (2.0 * h);
        assert!((dx - fdx).abs() < 1e-8, "{dx} vs {fdx}");
        assert!((dy - fdy).abs() < 1e-8, "{dy} vs {fdy}");
    }

    #[test]
    fn tape_matches_direct_eval() {
        let mut ar = ExprArena::new();
        let x = ar.var(0);
        let y = ar.var(1);
        let p = ar.powf(x, 3.0);
        let q = ar.mul(p, y);
        let r = ar.div(q, x);
        let roots = [q, r];
        let (tape, slots) = ar.compile(&roots);
        let mut buf = vec![];
        let point = [1.7, -2.0];
        tape.eval(&point, &mut buf);
        assert_eq!(buf[slots[0] as usize], ar.eval(q, &point));
        assert_eq!(buf[slots[1] as usize], ar.eval(r, &point));
    }

    #[test]
    fn interning_dedups() {
        let mut ar = ExprArena::new();
        let x = ar.var(0);
        let a = ar.mul(x, x);
        let b = ar.mul(x, x);
        assert_eq!(a, b);
        let n = ar.len();
        let _ = ar.mul(x, x);
        assert_eq!(ar.len(), n);
    }

    #[test]
    fn support_collects_vars() {
        let mut ar = ExprArena::new();
        let x = ar.var(3);
        let y = ar.var(1);
        let z = ar.var(7);
        let s1 = ar.add(x, y);
        let s = ar.mul(s1, z);
        assert_eq!(ar.support(s), vec![1, 3, 7]);
    }
}
