//! Solver layer: reference interior-point backend for LPs and NLPs, a
//! Scholtes-type relaxation driver for complementarity programs, a textbook
//! simplex used as an independent LP oracle, and the KKT residual checker.

pub mod compiled;
pub mod kkt;
pub mod linalg;
mod ipm;
mod mpcc;
pub mod simplex;

use crate::collocate::{ProgramKind, TranscribedProgram};

pub use kkt::{check_kkt, check_kkt_full};
pub use simplex::{simplex_solve, SimplexError, SimplexResult};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub feasibility: f64,
    pub optimality: f64,
    pub complementarity: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { feasibility: 1e-8, optimality: 1e-8, complementarity: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct WarmStart {
    /// full-length primal point (unscaled)
    pub primal: Vec<f64>,
    /// row duals matching the stationarity convention
    /// grad f + J^T y - z_L + z_U = 0
    pub row_duals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tolerances: Tolerances,
    pub max_iterations: usize,
    pub mu_init: f64,
    pub warm_start: Option<WarmStart>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerances: Tolerances::default(),
            max_iterations: 600,
            mu_init: 0.1,
            warm_start: None,
        }
    }
}

/// How complementarity constraints are driven to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpccMode {
    /// global relaxation g * mu <= eps with a geometric eps schedule
    Relaxation,
    /// penalize sum of products in the objective instead
    Penalty,
}

#[derive(Debug, Clone)]
pub struct MpccOptions {
    pub eps_init: f64,
    pub eps_factor: f64,
    pub stages: usize,
    pub mode: MpccMode,
    /// fix the active set after the last stage and re-solve once
    pub polish: bool,
}

impl Default for MpccOptions {
    fn default() -> Self {
        MpccOptions {
            eps_init: 1e-2,
            eps_factor: 0.1,
            stages: 5,
            mode: MpccMode::Relaxation,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveRequest {
    pub options: SolveOptions,
    pub mpcc: MpccOptions,
    /// force a kind instead of auto-detecting from the program
    pub kind: Option<ProgramKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationLimit,
    NumericalFailure,
}

/// Infinity-norm KKT residuals, true (unscaled) problem space.
#[derive(Debug, Clone, Copy, Default)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal_feasibility: f64,
    pub dual_feasibility: f64,
    pub complementarity: f64,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub primal: Vec<f64>,
    /// row duals: grad f + J^T y - z_L + z_U = 0
    pub row_duals: Vec<f64>,
    pub bound_duals_lower: Vec<f64>,
    pub bound_duals_upper: Vec<f64>,
    /// range-row multipliers split by side (inequality rows only)
    pub row_duals_lower: Vec<f64>,
    pub row_duals_upper: Vec<f64>,
    pub objective: f64,
    pub kkt_residual: KktResidual,
    pub iterations: usize,
    /// most violated constraint (label, violation) when infeasible
    pub max_violated: Option<(String, f64)>,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Iteration log receiver: `iter, objective, inf_pr, inf_du, comp`.
pub trait IterationSink {
    fn log(&mut self, iter: usize, objective: f64, inf_pr: f64, inf_du: f64, comp: f64);
}

pub struct NullSink;

impl IterationSink for NullSink {
    fn log(&mut self, _: usize, _: f64, _: f64, _: f64, _: f64) {}
}

/// Routes iteration lines to the `log` crate at debug level.
pub struct LogSink;

impl IterationSink for LogSink {
    fn log(&mut self, iter: usize, objective: f64, inf_pr: f64, inf_du: f64, comp: f64) {
        log::debug!(target: "cybermet::nlp", "{iter}, {objective:.8e}, {inf_pr:.3e}, {inf_du:.3e}, {comp:.3e}");
    }
}

/// Solve a program, dispatching on its kind.
pub fn solve(program: &TranscribedProgram, req: &SolveRequest) -> SolveResult {
    solve_with_sink(program, req, &mut LogSink)
}

pub fn solve_with_sink(
    program: &TranscribedProgram,
    req: &SolveRequest,
    sink: &mut dyn IterationSink,
) -> SolveResult {
    let kind = req.kind.unwrap_or_else(|| program.kind());
    match kind {
        ProgramKind::Mpcc => mpcc::solve_mpcc(program, req, sink),
        _ => ipm::Ipm::new(program).solve(&req.options, sink),
    }
}

/// Largest complementarity-pair violation min(g, mu) at a point.
pub fn comp_violation(program: &TranscribedProgram, x: &[f64]) -> f64 {
    use crate::collocate::CompSide;
    let mut worst = 0.0f64;
    for pair in &program.comp_pairs {
        let g = match pair.g {
            CompSide::Row(row) => {
                let c = &program.constraints[row];
                program.arena.eval(c.expr, x) - c.lo
            }
            CompSide::VarLower(v) => x[v as usize] - program.vars[v as usize].lb,
            CompSide::VarUpper(v) => program.vars[v as usize].ub - x[v as usize],
        };
        let mu = x[pair.mu as usize];
        worst = worst.max(g.min(mu).abs().min(g.abs() * mu.abs()));
    }
    worst
}

/// Backend interface: load a program, then solve it.
pub trait SolverBackend {
    fn load(&mut self, program: TranscribedProgram);
    fn solve(&mut self, request: &SolveRequest) -> SolveResult;
}

/// The built-in backend (interior point + relaxation schedule).
#[derive(Default)]
pub struct ReferenceBackend {
    program: Option<TranscribedProgram>,
}

impl SolverBackend for ReferenceBackend {
    fn load(&mut self, program: TranscribedProgram) {
        self.program = Some(program);
    }

    fn solve(&mut self, request: &SolveRequest) -> SolveResult {
        let program = self.program.as_ref().expect("load() before solve()");
        solve(program, request)
    }
}
