//! The inner dynamic constraint-based simulator: with fixed inputs, the
//! cell's optimization is solved interval by interval (each control interval
//! chains into the next), predicting the trajectory the controller assumes.

use thiserror::Error;

use crate::collocate::{
    transcribe, CellObjectiveKind, CollocationScheme, ControlGrid, InputsSpec, RhsMode,
    TranscribeError, TranscribeOptions, Transcription, X0Spec,
};
use crate::dynamics::{self, FluxVector, InputPoint, SynthesisCoupling, SystemState};
use crate::netdef::MetabolicNetwork;
use crate::nlp::{self, SolveRequest, SolveResult, SolveStatus, Tolerances};

/// What the cell maximizes.
#[derive(Debug, Clone, Copy, Default)]
pub struct CellObjective {
    pub kind: CellObjectiveKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimulateMode {
    /// exact nonlinear inner problems (reference path)
    Nlp,
    /// frozen light/Hill coefficients refreshed in a fixed-point loop
    LpFixedPoint { max_sweeps: usize, tol: f64 },
}

impl Default for SimulateMode {
    fn default() -> Self {
        SimulateMode::Nlp
    }
}

#[derive(Debug, Clone)]
pub struct SimulateOptions {
    pub mode: SimulateMode,
    pub coupling: SynthesisCoupling,
    pub objective: CellObjective,
    /// collocation degree per sub-interval
    pub degree: usize,
    /// collocation sub-intervals per control interval (plant fidelity)
    pub sub_intervals: usize,
    pub tolerances: Tolerances,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            mode: SimulateMode::default(),
            coupling: SynthesisCoupling::default(),
            objective: CellObjective::default(),
            degree: 3,
            sub_intervals: 1,
            tolerances: Tolerances::default(),
        }
    }
}

/// Time-indexed states, fluxes, inputs and derived quantities. The first
/// node is the initial condition (its flux row copies the first collocation
/// node).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SystemState>,
    pub fluxes: Vec<FluxVector>,
    /// applied inputs, one per control interval
    pub inputs: Vec<InputPoint>,
    /// which control interval each node belongs to (t0 maps to interval 0)
    pub node_interval: Vec<usize>,
    /// biomass amount B, g
    pub biomass: Vec<f64>,
    /// biomass concentration, g/L
    pub b_conc: Vec<f64>,
    /// depth-averaged light, W/m^2
    pub i_avg: Vec<f64>,
    /// realized cell objective over the horizon (end or integral form)
    pub objective: f64,
    /// optimum of each interval's inner problem as solved
    pub interval_objectives: Vec<f64>,
}

impl Trajectory {
    pub fn end_state(&self) -> &SystemState {
        self.states.last().expect("nonempty trajectory")
    }
}

/// Per-interval solve detail for warm starts and KKT cross-checks.
pub struct IntervalSolve {
    pub transcription: Transcription,
    pub result: SolveResult,
}

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error("transcription failed at interval {interval}: {source}")]
    Transcribe {
        interval: usize,
        #[source]
        source: TranscribeError,
    },
    #[error("interval {interval}: solver returned {status:?}{detail}")]
    Solver {
        interval: usize,
        status: SolveStatus,
        detail: String,
    },
    #[error("inputs: expected {expected} points, got {got}")]
    Inputs { expected: usize, got: usize },
}

/// Simulate the cell's response to a fixed input profile.
pub fn simulate(
    net: &MetabolicNetwork,
    grid: ControlGrid,
    x0: &SystemState,
    inputs: &[InputPoint],
    opts: &SimulateOptions,
) -> Result<Trajectory, SimulateError> {
    simulate_detailed(net, grid, x0, inputs, opts).map(|(t, _)| t)
}

/// Like [`simulate`], also returning the per-interval programs and solver
/// results.
pub fn simulate_detailed(
    net: &MetabolicNetwork,
    grid: ControlGrid,
    x0: &SystemState,
    inputs: &[InputPoint],
    opts: &SimulateOptions,
) -> Result<(Trajectory, Vec<IntervalSolve>), SimulateError> {
    if inputs.len() != grid.n {
        return Err(SimulateError::Inputs { expected: grid.n, got: inputs.len() });
    }
    let scheme = CollocationScheme::radau(opts.degree).expect("supported degree");
    let h = grid.h();

    let mut times = vec![grid.t0];
    let mut states = vec![x0.clone()];
    let mut node_interval = vec![0usize];
    let mut fluxes: Vec<FluxVector> = vec![];
    let mut interval_objectives = vec![];
    let mut details = vec![];
    let mut integral_total = 0.0;

    let mut current = x0.clone();
    let mut prev_flux_guess: Option<Vec<f64>> = None;
    for k in 0..grid.n {
        let t_k = grid.t0 + k as f64 * h;
        let sub_grid = ControlGrid::new(t_k, t_k + h, opts.sub_intervals);
        let u = inputs[k];
        let (transcription, result) = solve_interval(
            net,
            sub_grid,
            &scheme,
            &current,
            u,
            opts,
            prev_flux_guess.as_deref(),
        )
        .map_err(|e| match e {
            IntervalError::Transcribe(source) => SimulateError::Transcribe { interval: k, source },
            IntervalError::Solver(status, detail) => {
                SimulateError::Solver { interval: k, status, detail }
            }
        })?;

        // harvest nodes
        let x = &result.primal;
        let d = scheme.degree;
        for (si, handles) in transcription.intervals.iter().enumerate() {
            for j in 0..d {
                let t = t_k + (si as f64 + scheme.points[j]) * sub_grid.h();
                let flat: Vec<f64> = handles.state_vars[j]
                    .iter()
                    .map(|&v| x[v as usize])
                    .collect();
                let state = SystemState::from_flat(net, &flat).expect("dimensions match");
                let node_flux: Vec<f64> = handles.net_flux[j]
                    .iter()
                    .map(|&e| transcription.program.arena.eval(e, x))
                    .collect();
                times.push(t);
                states.push(state);
                fluxes.push(FluxVector(node_flux));
                node_interval.push(k);
            }
        }
        // flux row for the initial node of the whole trajectory
        if k == 0 {
            fluxes.insert(0, fluxes[0].clone());
        }

        let end_flat: Vec<f64> = transcription.intervals[opts.sub_intervals - 1].state_vars[d - 1]
            .iter()
            .map(|&v| x[v as usize])
            .collect();
        current = SystemState::from_flat(net, &end_flat).expect("dimensions match");
        prev_flux_guess = Some(
            transcription.intervals[opts.sub_intervals - 1].net_flux[d - 1]
                .iter()
                .map(|&e| transcription.program.arena.eval(e, x))
                .collect(),
        );

        // the solver minimizes; the cell objective is the negation
        interval_objectives.push(-result.objective);
        if matches!(opts.objective.kind, CellObjectiveKind::IntegralBiomass) {
            integral_total += -result.objective;
        }
        details.push(IntervalSolve { transcription, result });
    }

    let biomass: Vec<f64> = states
        .iter()
        .map(|s| dynamics::biomass(s, net).expect("consistent state"))
        .collect();
    let b_conc: Vec<f64> = states
        .iter()
        .map(|s| dynamics::biomass_concentration(s, net).expect("consistent state"))
        .collect();
    let i_avg: Vec<f64> = states
        .iter()
        .zip(&node_interval)
        .map(|(s, &k)| {
            dynamics::average_light(
                inputs[k.min(inputs.len() - 1)].i_s,
                dynamics::biomass_concentration(s, net).unwrap(),
                &net.reactor,
            )
        })
        .collect();
    let objective = match opts.objective.kind {
        CellObjectiveKind::EndBiomass => *biomass.last().unwrap(),
        CellObjectiveKind::IntegralBiomass => integral_total,
    };

    Ok((
        Trajectory {
            times,
            states,
            fluxes,
            inputs: inputs.to_vec(),
            node_interval,
            biomass,
            b_conc,
            i_avg,
            objective,
            interval_objectives,
        },
        details,
    ))
}

enum IntervalError {
    Transcribe(TranscribeError),
    Solver(SolveStatus, String),
}

fn solve_interval(
    net: &MetabolicNetwork,
    sub_grid: ControlGrid,
    scheme: &CollocationScheme,
    start: &SystemState,
    u: InputPoint,
    opts: &SimulateOptions,
    flux_guess: Option<&[f64]>,
) -> Result<(Transcription, SolveResult), IntervalError> {
    let fixed_inputs = InputsSpec::Fixed(vec![u; sub_grid.n]);
    let build = |rhs_mode: RhsMode| -> Result<Transcription, IntervalError> {
        let t_opts = TranscribeOptions {
            coupling: opts.coupling,
            cell_objective: opts.objective.kind,
            inputs: fixed_inputs.clone(),
            x0: X0Spec::Pinned(start.clone()),
            rhs_mode,
        };
        let mut tr = transcribe(net, sub_grid, scheme, &t_opts).map_err(IntervalError::Transcribe)?;
        set_program_objective(&mut tr, opts.objective.kind);
        if let Some(fg) = flux_guess {
            seed_flux_inits(&mut tr, fg);
        }
        Ok(tr)
    };

    let mut req = SolveRequest::default();
    req.options.tolerances = opts.tolerances;

    match opts.mode {
        SimulateMode::Nlp => {
            let tr = build(RhsMode::Exact)?;
            let result = nlp::solve(&tr.program, &req);
            if result.status != SolveStatus::Optimal {
                let detail = result
                    .max_violated
                    .as_ref()
                    .map(|(l, v)| format!(" (worst: {l} by {v:.3e})"))
                    .unwrap_or_default();
                return Err(IntervalError::Solver(result.status, detail));
            }
            Ok((tr, result))
        }
        SimulateMode::LpFixedPoint { max_sweeps, tol } => {
            // the volume profile is exact (vL integrates the fixed feed), so
            // only the dose-response values iterate
            let mut guess_states: Vec<SystemState> =
                vec![start.clone(); sub_grid.n * scheme.degree];
            let mut last: Option<(Transcription, SolveResult)> = None;
            for _sweep in 0..max_sweeps.max(1) {
                let frozen = freeze_nodes(net, &sub_grid, scheme, start, u, &guess_states);
                let tr = build(RhsMode::Frozen(frozen))?;
                let result = nlp::solve(&tr.program, &req);
                if result.status != SolveStatus::Optimal {
                    let detail = result
                        .max_violated
                        .as_ref()
                        .map(|(l, v)| format!(" (worst: {l} by {v:.3e})"))
                        .unwrap_or_default();
                    return Err(IntervalError::Solver(result.status, detail));
                }
                // extract node states, measure the sweep change
                let mut change = 0.0f64;
                let mut idx = 0;
                for handles in &tr.intervals {
                    for j in 0..scheme.degree {
                        let flat: Vec<f64> = handles.state_vars[j]
                            .iter()
                            .map(|&v| result.primal[v as usize])
                            .collect();
                        let new_state = SystemState::from_flat(net, &flat).unwrap();
                        let old = guess_states[idx].to_flat();
                        for (a, b) in old.iter().zip(&flat) {
                            change = change.max((a - b).abs() / b.abs().max(1.0));
                        }
                        guess_states[idx] = new_state;
                        idx += 1;
                    }
                }
                last = Some((tr, result));
                if change < tol {
                    break;
                }
            }
            Ok(last.expect("at least one sweep"))
        }
    }
}

/// Point the program's objective at the cell objective over the whole
/// (sub-)grid: end-of-grid biomass, or the summed integral.
pub fn set_program_objective(tr: &mut Transcription, kind: CellObjectiveKind) {
    match kind {
        CellObjectiveKind::EndBiomass => {
            tr.program.objective = tr.intervals.last().unwrap().inner_objective;
        }
        CellObjectiveKind::IntegralBiomass => {
            let terms: Vec<_> = tr.intervals.iter().map(|h| h.inner_objective).collect();
            tr.program.objective = tr.program.arena.sum(&terms);
        }
    }
}

fn seed_flux_inits(tr: &mut Transcription, flux_guess: &[f64]) {
    use crate::collocate::{FluxDir, VarKey};
    let keys: Vec<(u32, f64)> = tr
        .program
        .index()
        .iter()
        .filter_map(|(key, &id)| match key {
            VarKey::Flux { rxn, dir, .. } => {
                let g = flux_guess.get(*rxn as usize).copied().unwrap_or(0.0);
                let init = match dir {
                    FluxDir::Single => g,
                    FluxDir::Forward => g.max(0.0),
                    FluxDir::Backward => (-g).max(0.0),
                };
                Some((id, init))
            }
            _ => None,
        })
        .collect();
    for (id, init) in keys {
        let v = &mut tr.program.vars[id as usize];
        v.init = init.max(v.lb).min(v.ub);
    }
}

/// Frozen dose-response and dilution coefficients along a guess trajectory.
fn freeze_nodes(
    net: &MetabolicNetwork,
    sub_grid: &ControlGrid,
    scheme: &CollocationScheme,
    start: &SystemState,
    u: InputPoint,
    guess_states: &[SystemState],
) -> Vec<crate::collocate::FrozenNode> {
    let mut out = Vec::with_capacity(sub_grid.n * scheme.degree);
    let h = sub_grid.h();
    for si in 0..sub_grid.n {
        for (j, tau) in scheme.points.iter().enumerate() {
            let state = &guess_states[si * scheme.degree + j];
            let b_conc = dynamics::biomass_concentration(state, net).unwrap();
            let i_avg = dynamics::average_light(u.i_s, b_conc, &net.reactor);
            let eta: Vec<f64> = net
                .regulated
                .iter()
                .map(|reg| dynamics::dose_response(i_avg, reg))
                .collect();
            // exact volume along the fixed feed
            let v_l = start.v_l + u.f_in * ((si as f64 + tau) * h);
            out.push(crate::collocate::FrozenNode { eta, dilution: u.f_in / v_l, v_l });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// independent residual evaluation

/// One violated condition found by [`verify_trajectory`].
#[derive(Debug, Clone)]
pub struct ResidualViolation {
    pub node: usize,
    pub what: String,
    pub residual: f64,
}

/// Re-evaluate the algebraic model constraints (quasi-steady state, capacity,
/// regulated equality, quota, flux and state boxes) along a trajectory using
/// only the network description — no program machinery.
pub fn verify_trajectory(
    net: &MetabolicNetwork,
    traj: &Trajectory,
    tol: f64,
) -> Vec<ResidualViolation> {
    let mut out = vec![];
    let mut push = |node: usize, what: &str, residual: f64| {
        if residual > tol {
            out.push(ResidualViolation { node, what: what.to_string(), residual });
        }
    };
    for (node, (state, flux)) in traj.states.iter().zip(&traj.fluxes).enumerate() {
        if node == 0 {
            continue; // initial condition row duplicates node 1's fluxes
        }
        // quasi-steady state
        for &sp in &net.m_species {
            let mut sv = 0.0;
            for (r, v) in flux.0.iter().enumerate() {
                sv += net.stoich_coef(sp, r) * v;
            }
            push(node, &format!("qss {}", net.species[sp].id), sv.abs());
        }
        // capacity
        let p = state.p_full();
        for (pi, rxns) in &net.catalysis_unr {
            let load: f64 = rxns
                .iter()
                .map(|&r| flux.0[r].abs() / net.reactions[r].kcat.unwrap())
                .sum();
            push(
                node,
                &format!("capacity {}", net.species[net.p_species[*pi]].id),
                load - p[*pi],
            );
        }
        for (ri, rxns) in net.catalysis_reg.iter().enumerate() {
            let load: f64 = rxns
                .iter()
                .map(|&r| flux.0[r].abs() / net.reactions[r].kcat.unwrap())
                .sum();
            push(
                node,
                &format!("regulated capacity {}", net.species[net.regulated[ri].species].id),
                (load - state.p_reg[ri]).abs(),
            );
        }
        // quota
        let b_conc = dynamics::biomass_concentration(state, net).unwrap();
        let qp = net.quota_p_position();
        push(
            node,
            "quota",
            net.quota.fraction * b_conc - net.b[qp] * p[qp],
        );
        // boxes
        for (r, v) in flux.0.iter().enumerate() {
            let rxn = &net.reactions[r];
            push(node, &format!("flux lb {}", rxn.id), rxn.vmin - v);
            push(node, &format!("flux ub {}", rxn.id), v - rxn.vmax);
        }
        let flat = state.to_flat();
        for (idx, &x) in flat.iter().enumerate() {
            let b = crate::collocate::state_bounds(net, idx);
            push(node, &format!("state lb {idx}"), b[0] - x);
            push(node, &format!("state ub {idx}"), x - b[1]);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// trajectory CSV

fn fmt(x: f64) -> String {
    format!("{x}")
}

/// Trajectory CSV per the output contract:
/// `t_h,vL_L,B_g,Bconc_g_per_L,Iavg_W_per_m2,Is_W_per_m2,Fin_L_per_h,`
/// then one `z_<id>_mM` per extracellular species, one `p_<id>_mM` per
/// biomass species (regulated first) and one `V_<id>_mM_per_h` per reaction.
pub fn trajectory_csv(net: &MetabolicNetwork, traj: &Trajectory) -> String {
    let mut header = String::from("t_h,vL_L,B_g,Bconc_g_per_L,Iavg_W_per_m2,Is_W_per_m2,Fin_L_per_h");
    for &sp in &net.z_species {
        header.push_str(&format!(",z_{}_mM", net.species[sp].id));
    }
    for &sp in &net.p_species {
        header.push_str(&format!(",p_{}_mM", net.species[sp].id));
    }
    for rxn in &net.reactions {
        header.push_str(&format!(",V_{}_mM_per_h", rxn.id));
    }
    let mut out = header;
    out.push('\n');
    for (node, state) in traj.states.iter().enumerate() {
        let k = traj.node_interval[node].min(traj.inputs.len() - 1);
        let u = traj.inputs[k];
        let mut row = vec![
            fmt(traj.times[node]),
            fmt(state.v_l),
            fmt(traj.biomass[node]),
            fmt(traj.b_conc[node]),
            fmt(traj.i_avg[node]),
            fmt(u.i_s),
            fmt(u.f_in),
        ];
        for z in &state.z {
            row.push(fmt(*z));
        }
        for p in &state.p_reg {
            row.push(fmt(*p));
        }
        for p in &state.p_unr {
            row.push(fmt(*p));
        }
        for v in &traj.fluxes[node].0 {
            row.push(fmt(*v));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}
