//! Direct transcription of the constraint-based model on a control grid:
//! piecewise-constant inputs, Radau collocation of the balance equations,
//! algebraic resource-allocation constraints at every node.

use thiserror::Error;

use super::program::{
    ConLabel, FluxDir, InputKind, TranscribedProgram, VarKey,
};
use super::radau::CollocationScheme;
use crate::dynamics::{InputPoint, SynthesisCoupling, SystemState};
use crate::expr::{NodeId, VarId};
use crate::netdef::MetabolicNetwork;

/// Equidistant control grid with piecewise-constant inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlGrid {
    pub t0: f64,
    pub tf: f64,
    pub n: usize,
}

impl ControlGrid {
    pub fn new(t0: f64, tf: f64, n: usize) -> Self {
        assert!(n >= 1 && tf > t0, "grid needs n >= 1 and tf > t0");
        ControlGrid { t0, tf, n }
    }

    /// Interval length h_s.
    pub fn h(&self) -> f64 {
        (self.tf - self.t0) / self.n as f64
    }

    /// Sampling times t_k, k = 0..=n.
    pub fn times(&self) -> Vec<f64> {
        (0..=self.n).map(|k| self.t0 + k as f64 * self.h()).collect()
    }
}

/// What the cell maximizes over each control interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CellObjectiveKind {
    /// biomass at the interval end
    #[default]
    EndBiomass,
    /// integral of biomass over the interval
    IntegralBiomass,
}

#[derive(Debug, Clone)]
pub enum InputsSpec {
    /// inputs are decision variables inside the reactor's input boxes
    Free,
    /// inputs fixed per interval (variables with equal bounds)
    Fixed(Vec<InputPoint>),
}

#[derive(Debug, Clone)]
pub enum X0Spec {
    /// initial state pinned by equality rows
    Pinned(SystemState),
    /// initial state free within the state boxes (estimation); the value is
    /// the solver's starting guess
    Free(SystemState),
}

/// Frozen nonlinear coefficients for the LP path, one entry per
/// (interval, node) in interval-major order.
#[derive(Debug, Clone)]
pub struct FrozenNode {
    /// dose-response value per regulated protein, mmol/g/h
    pub eta: Vec<f64>,
    /// F_in / v_L at the node, 1/h
    pub dilution: f64,
    /// v_L at the node, L
    pub v_l: f64,
}

#[derive(Debug, Clone)]
pub enum RhsMode {
    /// exact nonlinear light/Hill coupling and dilution
    Exact,
    /// all nonlinearities replaced by frozen coefficients; requires fixed
    /// inputs and makes the whole program affine
    Frozen(Vec<FrozenNode>),
}

#[derive(Debug, Clone)]
pub struct TranscribeOptions {
    pub coupling: SynthesisCoupling,
    pub cell_objective: CellObjectiveKind,
    pub inputs: InputsSpec,
    pub x0: X0Spec,
    pub rhs_mode: RhsMode,
}

#[derive(Debug, Error)]
pub enum TranscribeError {
    #[error("initial state violates bounds: {0}")]
    InfeasibleInitialState(String),
    #[error("frozen mode requires fixed inputs")]
    FrozenNeedsFixedInputs,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Handles into one interval's variables and rows, for objective assembly,
/// KKT embedding and trajectory extraction.
#[derive(Debug, Clone)]
pub struct IntervalHandles {
    pub interval: usize,
    /// state variables per collocation node (node-major): [node][state idx]
    pub state_vars: Vec<Vec<VarId>>,
    /// per node, per reaction: the net-flux expression
    pub net_flux: Vec<Vec<NodeId>>,
    /// per node, per reaction: the capacity load |V| expression (V+ + V-)
    pub abs_flux: Vec<Vec<NodeId>>,
    /// all interval-owned decision variables (states + fluxes)
    pub decision_vars: Vec<VarId>,
    /// equality rows owned by the interval
    pub eq_rows: Vec<usize>,
    /// one-sided inequality rows (expr >= 0) owned by the interval
    pub ineq_rows: Vec<usize>,
    /// the minimized inner objective of the interval's cell problem
    pub inner_objective: NodeId,
    /// depth-averaged light expression per node
    pub i_avg: Vec<NodeId>,
    /// biomass concentration expression per node
    pub b_conc: Vec<NodeId>,
}

/// A transcribed grid: program plus structure.
#[derive(Debug, Clone)]
pub struct Transcription {
    pub program: TranscribedProgram,
    pub intervals: Vec<IntervalHandles>,
    /// initial-state variables (order: flat state order)
    pub x0_vars: Vec<VarId>,
    /// (light, feed) variable per interval
    pub input_vars: Vec<(VarId, VarId)>,
    pub grid: ControlGrid,
    pub scheme: CollocationScheme,
    pub n_x: usize,
}

/// Flat state index of the p-vector position `pi`.
pub fn flat_of_p(net: &MetabolicNetwork, pi: usize) -> usize {
    let nr = net.n_reg();
    if pi < nr {
        pi
    } else {
        nr + net.n_z() + (pi - nr)
    }
}

/// Magnitude hint for flat state `idx`: biomass components live at
/// 1e-5..1e-2 mM, extracellular pools and the volume at 1..1e3.
pub fn state_scale_hint(net: &MetabolicNetwork, idx: usize) -> f64 {
    let (nr, nz, nu) = (net.n_reg(), net.n_z(), net.n_unr());
    if idx < nr || (nr + nz..nr + nz + nu).contains(&idx) {
        1e-4
    } else {
        1.0
    }
}

/// Bounds of flat state `idx`.
pub fn state_bounds(net: &MetabolicNetwork, idx: usize) -> [f64; 2] {
    let (nr, nz, nu) = (net.n_reg(), net.n_z(), net.n_unr());
    let sb = &net.reactor.state_bounds;
    if idx < nr {
        sb.species[net.p_species[idx]]
    } else if idx < nr + nz {
        sb.species[net.z_species[idx - nr]]
    } else if idx < nr + nz + nu {
        sb.species[net.p_species[nr + idx - nr - nz]]
    } else {
        sb.v_l
    }
}

pub fn state_dim(net: &MetabolicNetwork) -> usize {
    net.n_reg() + net.n_z() + net.n_unr() + 1
}

/// Transcribe the model over the whole grid.
///
/// Variables: per interval and collocation node the full state and the
/// (split) fluxes; per interval the two inputs; plus the initial state.
/// Constraints: collocation equations against the balance right-hand side,
/// quasi-steady-state rows, capacity rows, the regulated-protein flux
/// pinning, quota, and the initial condition when pinned.
pub fn transcribe(
    net: &MetabolicNetwork,
    grid: ControlGrid,
    scheme: &CollocationScheme,
    opts: &TranscribeOptions,
) -> Result<Transcription, TranscribeError> {
    let n_x = state_dim(net);
    let mut program = TranscribedProgram::new();

    if let RhsMode::Frozen(_) = opts.rhs_mode {
        if !matches!(opts.inputs, InputsSpec::Fixed(_)) {
            return Err(TranscribeError::FrozenNeedsFixedInputs);
        }
    }

    // initial state variables
    let x0_state = match &opts.x0 {
        X0Spec::Pinned(s) | X0Spec::Free(s) => s.clone(),
    };
    let x0_flat = x0_state.to_flat();
    if x0_flat.len() != n_x {
        return Err(TranscribeError::Dimension(format!(
            "x0 has {} states, network needs {n_x}",
            x0_flat.len()
        )));
    }
    for (idx, &v) in x0_flat.iter().enumerate() {
        let b = state_bounds(net, idx);
        if v < b[0] - 1e-9 || v > b[1] + 1e-9 {
            return Err(TranscribeError::InfeasibleInitialState(format!(
                "state {idx} = {v} outside [{}, {}]",
                b[0], b[1]
            )));
        }
    }
    let mut x0_vars = Vec::with_capacity(n_x);
    for idx in 0..n_x {
        let b = state_bounds(net, idx);
        let id = program.add_var_scaled(
            VarKey::InitState { idx: idx as u32 },
            b[0],
            b[1],
            x0_flat[idx],
            state_scale_hint(net, idx),
        );
        x0_vars.push(id);
    }
    if let X0Spec::Pinned(_) = opts.x0 {
        for (idx, &id) in x0_vars.iter().enumerate() {
            let v = program.arena.var(id);
            let c = program.arena.constant(x0_flat[idx]);
            let expr = program.arena.sub(v, c);
            program.add_equality(ConLabel::InitPin { state: idx as u32 }, expr);
        }
    }

    // input variables per interval
    let ib = net.reactor.input_bounds;
    let mut input_vars = Vec::with_capacity(grid.n);
    for k in 0..grid.n {
        let (lb, ub, li) = match &opts.inputs {
            InputsSpec::Free => (ib.light[0], ib.light[1], 0.5 * (ib.light[0] + ib.light[1])),
            InputsSpec::Fixed(points) => {
                let p = points.get(k).ok_or_else(|| {
                    TranscribeError::Dimension(format!("need {} input points, got {}", grid.n, points.len()))
                })?;
                (p.i_s, p.i_s, p.i_s)
            }
        };
        let light = program.add_var(VarKey::Input { interval: k as u32, kind: InputKind::Light }, lb, ub, li);
        let (lb, ub, fi) = match &opts.inputs {
            InputsSpec::Free => (ib.feed[0], ib.feed[1], 0.5 * (ib.feed[0] + ib.feed[1])),
            InputsSpec::Fixed(points) => {
                let p = &points[k];
                (p.f_in, p.f_in, p.f_in)
            }
        };
        let feed = program.add_var(VarKey::Input { interval: k as u32, kind: InputKind::Feed }, lb, ub, fi);
        input_vars.push((light, feed));
    }

    // intervals, chained through the Radau end node
    let mut intervals = Vec::with_capacity(grid.n);
    let mut start_refs: Vec<NodeId> = x0_vars.iter().map(|&v| program.arena.var(v)).collect();
    for k in 0..grid.n {
        let (lv, fv) = input_vars[k];
        let light_ref = program.arena.var(lv);
        let feed_ref = program.arena.var(fv);
        let handles = emit_interval(
            &mut program,
            net,
            k,
            grid.h(),
            scheme,
            &start_refs,
            (light_ref, feed_ref),
            opts,
            &x0_flat,
        );
        start_refs = handles.state_vars[scheme.degree - 1]
            .iter()
            .map(|&v| program.arena.var(v))
            .collect();
        intervals.push(handles);
    }

    Ok(Transcription {
        program,
        intervals,
        x0_vars,
        input_vars,
        grid,
        scheme: scheme.clone(),
        n_x,
    })
}

/// Emit one interval's variables and constraints.
#[allow(clippy::too_many_arguments)]
fn emit_interval(
    program: &mut TranscribedProgram,
    net: &MetabolicNetwork,
    k: usize,
    h: f64,
    scheme: &CollocationScheme,
    start_refs: &[NodeId],
    inputs: (NodeId, NodeId),
    opts: &TranscribeOptions,
    init_guess: &[f64],
) -> IntervalHandles {
    let d = scheme.degree;
    let n_x = state_dim(net);
    let (nr, nz) = (net.n_reg(), net.n_z());
    let n_v = net.n_reactions();
    let (light_ref, feed_ref) = inputs;
    let ki = k as u32;

    let mut decision_vars = vec![];
    let mut eq_rows = vec![];
    let mut ineq_rows = vec![];

    // node state variables
    let mut state_vars: Vec<Vec<VarId>> = Vec::with_capacity(d);
    for j in 1..=d {
        let mut row = Vec::with_capacity(n_x);
        for idx in 0..n_x {
            let b = state_bounds(net, idx);
            let id = program.add_var_scaled(
                VarKey::State { interval: ki, node: j as u32, idx: idx as u32 },
                b[0],
                b[1],
                init_guess[idx].max(b[0]).min(b[1]),
                state_scale_hint(net, idx),
            );
            decision_vars.push(id);
            row.push(id);
        }
        state_vars.push(row);
    }

    // flux variables, split for reversible reactions
    let mut net_flux: Vec<Vec<NodeId>> = Vec::with_capacity(d);
    let mut abs_flux: Vec<Vec<NodeId>> = Vec::with_capacity(d);
    for j in 1..=d {
        let mut nrow = Vec::with_capacity(n_v);
        let mut arow = Vec::with_capacity(n_v);
        for (r, rxn) in net.reactions.iter().enumerate() {
            if rxn.reversible() {
                let fwd = program.add_var(
                    VarKey::Flux { interval: ki, node: j as u32, rxn: r as u32, dir: FluxDir::Forward },
                    0.0,
                    rxn.vmax.max(0.0),
                    0.0,
                );
                let bwd = program.add_var(
                    VarKey::Flux { interval: ki, node: j as u32, rxn: r as u32, dir: FluxDir::Backward },
                    0.0,
                    (-rxn.vmin).max(0.0),
                    0.0,
                );
                decision_vars.push(fwd);
                decision_vars.push(bwd);
                let (vf, vb) = (program.arena.var(fwd), program.arena.var(bwd));
                nrow.push(program.arena.sub(vf, vb));
                arow.push(program.arena.add(vf, vb));
            } else {
                let v = program.add_var(
                    VarKey::Flux { interval: ki, node: j as u32, rxn: r as u32, dir: FluxDir::Single },
                    rxn.vmin,
                    rxn.vmax,
                    0.0,
                );
                decision_vars.push(v);
                let vn = program.arena.var(v);
                nrow.push(vn);
                arow.push(vn);
            }
        }
        net_flux.push(nrow);
        abs_flux.push(arow);
    }

    // per-node common expressions
    let frozen = match &opts.rhs_mode {
        RhsMode::Exact => None,
        RhsMode::Frozen(nodes) => Some(nodes),
    };
    let c_kappa = net.reactor.attenuation * net.reactor.path_length * 1000.0;

    let mut b_conc_nodes = Vec::with_capacity(d);
    let mut i_avg_nodes = Vec::with_capacity(d);
    let mut eta_nodes: Vec<Vec<NodeId>> = Vec::with_capacity(d);
    let mut dilution_nodes = Vec::with_capacity(d);
    for j in 0..d {
        let sv = &state_vars[j];
        // b^T p over regulated + unregulated
        let mut terms = vec![];
        for pi in 0..net.n_p() {
            let v = program.arena.var(sv[flat_of_p(net, pi)]);
            terms.push(program.arena.scale(net.b[pi], v));
        }
        let b_conc = program.arena.sum(&terms);
        b_conc_nodes.push(b_conc);

        let (i_avg, etas, dilution) = if let Some(fr) = frozen {
            let node = &fr[k * d + j];
            let i_avg = program.arena.constant(f64::NAN); // unused in frozen mode
            let etas = node.eta.iter().map(|&e| program.arena.constant(e)).collect();
            let dil = program.arena.constant(node.dilution);
            (i_avg, etas, dil)
        } else {
            let kappa = program.arena.scale(c_kappa, b_conc);
            let phi = program.arena.phi(0, kappa);
            let i_avg = program.arena.mul(light_ref, phi);
            let etas = net
                .regulated
                .iter()
                .map(|reg| {
                    let hl = &reg.hill;
                    if hl.beta == 0.0 {
                        program.arena.constant(hl.alpha)
                    } else {
                        let num = program.arena.powf(i_avg, hl.delta);
                        let kd = program.arena.constant(hl.k_half.powf(hl.delta));
                        let den = program.arena.add(kd, num);
                        let frac = program.arena.div(num, den);
                        let scaled = program.arena.scale(hl.beta, frac);
                        let alpha = program.arena.constant(hl.alpha);
                        program.arena.add(alpha, scaled)
                    }
                })
                .collect();
            let v_l = program.arena.var(sv[n_x - 1]);
            let dilution = program.arena.div(feed_ref, v_l);
            (i_avg, etas, dilution)
        };
        i_avg_nodes.push(i_avg);
        eta_nodes.push(etas);
        dilution_nodes.push(dilution);
    }

    // collocation equations: sum_r D[j][r] x_r - h * rhs_j = 0
    for j in 0..d {
        let sv = &state_vars[j];
        for idx in 0..n_x {
            // interpolant derivative
            let mut terms = vec![program.arena.scale(scheme.dmat[j][0], start_refs[idx])];
            for (r, row) in state_vars.iter().enumerate() {
                let v = program.arena.var(row[idx]);
                terms.push(program.arena.scale(scheme.dmat[j][r + 1], v));
            }
            let deriv = program.arena.sum(&terms);

            // balance right-hand side at node j
            let rhs = if idx < nr {
                // regulated protein: gross expression - turnover - dilution
                let reg = &net.regulated[idx];
                let prod = program.arena.mul(b_conc_nodes[j], eta_nodes[j][idx]);
                let p = program.arena.var(sv[idx]);
                let turn = program.arena.scale(reg.degradation, p);
                let dil = program.arena.mul(p, dilution_nodes[j]);
                let t = program.arena.sub(prod, turn);
                program.arena.sub(t, dil)
            } else if idx < nr + nz {
                let zi = idx - nr;
                let sp = net.z_species[zi];
                let feed_conc = net
                    .reactor
                    .feed
                    .iter()
                    .find(|(fsp, _)| *fsp == sp)
                    .map(|(_, c)| *c)
                    .unwrap_or(0.0);
                let z = program.arena.var(sv[idx]);
                let fc = program.arena.constant(feed_conc);
                let diff = program.arena.sub(fc, z);
                let exchange = program.arena.mul(dilution_nodes[j], diff);
                let mut terms = vec![exchange];
                for (r, &nf) in net_flux[j].iter().enumerate() {
                    let c = net.stoich_coef(sp, r);
                    if c != 0.0 {
                        terms.push(program.arena.scale(c, nf));
                    }
                }
                program.arena.sum(&terms)
            } else if idx < n_x - 1 {
                let ui = idx - nr - nz;
                let sp = net.p_species[nr + ui];
                let p = program.arena.var(sv[idx]);
                let dil = program.arena.mul(p, dilution_nodes[j]);
                let mut terms = vec![program.arena.neg(dil)];
                for (r, &nf) in net_flux[j].iter().enumerate() {
                    let c = net.stoich_coef(sp, r);
                    if c != 0.0 {
                        terms.push(program.arena.scale(c, nf));
                    }
                }
                program.arena.sum(&terms)
            } else {
                feed_ref
            };

            let scaled = program.arena.scale(h, rhs);
            let expr = program.arena.sub(deriv, scaled);
            let row = program.add_equality(
                ConLabel::Collocation { interval: ki, node: (j + 1) as u32, state: idx as u32 },
                expr,
            );
            eq_rows.push(row);
        }
    }

    // algebraic constraints at every node
    for j in 0..d {
        // quasi-steady state: S_m V = 0
        for (mi, &sp) in net.m_species.iter().enumerate() {
            let mut terms = vec![];
            for (r, &nf) in net_flux[j].iter().enumerate() {
                let c = net.stoich_coef(sp, r);
                if c != 0.0 {
                    terms.push(program.arena.scale(c, nf));
                }
            }
            let expr = program.arena.sum(&terms);
            let row = program.add_equality(
                ConLabel::Qss { interval: ki, node: (j + 1) as u32, met: mi as u32 },
                expr,
            );
            eq_rows.push(row);
        }

        // unregulated enzyme capacity: p_e - sum |V|/kcat >= 0
        for (ci, (pi, rxns)) in net.catalysis_unr.iter().enumerate() {
            let p = program.arena.var(state_vars[j][flat_of_p(net, *pi)]);
            let mut terms = vec![p];
            for &r in rxns {
                let k_cat = net.reactions[r].kcat.expect("catalyzed reaction has kcat");
                let load = program.arena.scale(-1.0 / k_cat, abs_flux[j][r]);
                terms.push(load);
            }
            let expr = program.arena.sum(&terms);
            let row = program.add_constraint(
                ConLabel::CapacityUnr { interval: ki, node: (j + 1) as u32, enzyme: ci as u32 },
                expr,
                0.0,
                f64::INFINITY,
            );
            ineq_rows.push(row);
        }

        // regulated capacity is an equality: the controller owns this freedom
        for (ri, rxns) in net.catalysis_reg.iter().enumerate() {
            let p = program.arena.var(state_vars[j][ri]);
            let mut terms = vec![p];
            for &r in rxns {
                let k_cat = net.reactions[r].kcat.expect("catalyzed reaction has kcat");
                terms.push(program.arena.scale(-1.0 / k_cat, abs_flux[j][r]));
            }
            let expr = program.arena.sum(&terms);
            let row = program.add_equality(
                ConLabel::CapacityReg { interval: ki, node: (j + 1) as u32, reg: ri as u32 },
                expr,
            );
            eq_rows.push(row);
        }

        // regulated synthesis flux pinning
        for (ri, reg) in net.regulated.iter().enumerate() {
            let syn = net_flux[j][reg.synthesis_reaction];
            let target = match opts.coupling {
                SynthesisCoupling::Gross => program.arena.mul(b_conc_nodes[j], eta_nodes[j][ri]),
                SynthesisCoupling::NetLiteral => {
                    // literal reading: flux equals the concentration derivative
                    let mut terms = vec![program.arena.scale(scheme.dmat[j][0] / h, start_refs[ri])];
                    for (r, row) in state_vars.iter().enumerate() {
                        let v = program.arena.var(row[ri]);
                        terms.push(program.arena.scale(scheme.dmat[j][r + 1] / h, v));
                    }
                    program.arena.sum(&terms)
                }
            };
            let expr = program.arena.sub(syn, target);
            let row = program.add_equality(
                ConLabel::RegSynthesis { interval: ki, node: (j + 1) as u32, reg: ri as u32 },
                expr,
            );
            eq_rows.push(row);
        }

        // quota: b_Q p_Q - phi_Q (b^T p) >= 0
        let qp = net.quota_p_position();
        let b_q = net.b[qp];
        let pq = program.arena.var(state_vars[j][flat_of_p(net, qp)]);
        let lhs = program.arena.scale(b_q, pq);
        let rhs = program.arena.scale(net.quota.fraction, b_conc_nodes[j]);
        let expr = program.arena.sub(lhs, rhs);
        let row = program.add_constraint(
            ConLabel::Quota { interval: ki, node: (j + 1) as u32 },
            expr,
            0.0,
            f64::INFINITY,
        );
        ineq_rows.push(row);
    }

    // inner objective (minimized)
    let inner_objective = match opts.cell_objective {
        CellObjectiveKind::EndBiomass => {
            let end = &state_vars[d - 1];
            let b_end = if let Some(fr) = frozen {
                let v_l = program.arena.constant(fr[k * d + d - 1].v_l);
                program.arena.mul(v_l, b_conc_nodes[d - 1])
            } else {
                let v_l = program.arena.var(end[n_x - 1]);
                program.arena.mul(v_l, b_conc_nodes[d - 1])
            };
            program.arena.neg(b_end)
        }
        CellObjectiveKind::IntegralBiomass => {
            // integrate the interpolant of B = vL * b^T p over the interval;
            // the start-node value is a parameter expression
            let mut terms = vec![];
            let start_bconc = {
                let mut t = vec![];
                for pi in 0..net.n_p() {
                    t.push(program.arena.scale(net.b[pi], start_refs[flat_of_p(net, pi)]));
                }
                program.arena.sum(&t)
            };
            let start_b = if let Some(fr) = frozen {
                // reconstruct the start volume from the first node's known
                // value: vL advances linearly at rate F = dilution * vL
                let node = &fr[k * d];
                let v0 = node.v_l - node.dilution * node.v_l * (scheme.points[0] * h);
                let c = program.arena.constant(v0);
                program.arena.mul(c, start_bconc)
            } else {
                program.arena.mul(start_refs[n_x - 1], start_bconc)
            };
            terms.push(program.arena.scale(scheme.quad[0] * h, start_b));
            for j in 0..d {
                let b = if let Some(fr) = frozen {
                    let c = program.arena.constant(fr[k * d + j].v_l);
                    program.arena.mul(c, b_conc_nodes[j])
                } else {
                    let v_l = program.arena.var(state_vars[j][n_x - 1]);
                    program.arena.mul(v_l, b_conc_nodes[j])
                };
                terms.push(program.arena.scale(scheme.quad[j + 1] * h, b));
            }
            let integral = program.arena.sum(&terms);
            program.arena.neg(integral)
        }
    };

    IntervalHandles {
        interval: k,
        state_vars,
        net_flux,
        abs_flux,
        decision_vars,
        eq_rows,
        ineq_rows,
        inner_objective,
        i_avg: i_avg_nodes,
        b_conc: b_conc_nodes,
    }
}

/// Generic transcription of a plain ODE `dx/dt = rhs(t, x)` for tests and
/// cross-checks: same collocation equations, no optimization structure.
pub fn transcribe_ode<F>(
    grid: ControlGrid,
    scheme: &CollocationScheme,
    x0: &[f64],
    mut rhs: F,
) -> TranscribedProgram
where
    F: FnMut(&mut crate::expr::ExprArena, f64, &[NodeId]) -> Vec<NodeId>,
{
    let n = x0.len();
    let d = scheme.degree;
    let h = grid.h();
    let mut program = TranscribedProgram::new();
    let mut start_refs: Vec<NodeId> = x0.iter().map(|&v| program.arena.constant(v)).collect();
    for k in 0..grid.n {
        let mut node_vars: Vec<Vec<VarId>> = vec![];
        for j in 1..=d {
            let row: Vec<VarId> = (0..n)
                .map(|idx| {
                    program.add_var(
                        VarKey::State { interval: k as u32, node: j as u32, idx: idx as u32 },
                        f64::NEG_INFINITY,
                        f64::INFINITY,
                        x0[idx],
                    )
                })
                .collect();
            node_vars.push(row);
        }
        for j in 0..d {
            let t_j = grid.t0 + (k as f64 + scheme.points[j]) * h;
            let node_refs: Vec<NodeId> =
                node_vars[j].iter().map(|&v| program.arena.var(v)).collect();
            let f = rhs(&mut program.arena, t_j, &node_refs);
            assert_eq!(f.len(), n);
            for idx in 0..n {
                let mut terms = vec![program.arena.scale(scheme.dmat[j][0], start_refs[idx])];
                for (r, row) in node_vars.iter().enumerate() {
                    let v = program.arena.var(row[idx]);
                    terms.push(program.arena.scale(scheme.dmat[j][r + 1], v));
                }
                let deriv = program.arena.sum(&terms);
                let scaled = program.arena.scale(h, f[idx]);
                let expr = program.arena.sub(deriv, scaled);
                program.add_equality(
                    ConLabel::Collocation { interval: k as u32, node: (j + 1) as u32, state: idx as u32 },
                    expr,
                );
            }
        }
        start_refs = node_vars[d - 1].iter().map(|&v| program.arena.var(v)).collect();
    }
    program
}
