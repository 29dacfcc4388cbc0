//! Direct transcription: control grid, Radau collocation schemes, the
//! transcribed-program representation, and KKT embedding of inner problems.

mod builder;
mod kkt;
pub mod program;
mod radau;
pub mod stepper;

pub use builder::{
    flat_of_p, state_bounds, state_dim, transcribe, transcribe_ode, CellObjectiveKind,
    ControlGrid, FrozenNode, InputsSpec, IntervalHandles, RhsMode, TranscribeError,
    TranscribeOptions, Transcription, X0Spec,
};
pub use kkt::{embed_interval_kkt, KktHandles};
pub use program::{
    CompPair, CompSide, ConLabel, ConstraintInfo, FluxDir, InputKind, ProgramKind,
    TranscribedProgram, VarInfo, VarKey,
};
pub use radau::{radau_points, CollocationScheme, SchemeError};


#[cfg(test)]
mod transcription_solve_tests {
    use super::*;
    use crate::nlp::{solve, SolveRequest, SolveStatus};

    /// The transcription path solves the scalar decay problem to the stated
    /// accuracy, and the observed order under h-halving is at least the
    /// collocation degree.
    #[test]
    fn exponential_decay_through_the_program_path() {
        let exact = (-1.0f64).exp();
        for d in 1..=3usize {
            let scheme = CollocationScheme::radau(d).unwrap();
            let mut prev_err = f64::NAN;
            for n in [5usize, 10, 20, 40] {
                let grid = ControlGrid::new(0.0, 1.0, n);
                let program = transcribe_ode(grid, &scheme, &[1.0], |arena, _t, x| {
                    vec![arena.neg(x[0])]
                });
                let mut req = SolveRequest::default();
                req.options.tolerances.optimality = 1e-12;
                req.options.tolerances.feasibility = 1e-12;
                let res = solve(&program, &req);
                assert_eq!(res.status, SolveStatus::Optimal, "d={d} n={n}");
                // end state: last node of last interval
                let end = program
                    .var_id(&VarKey::State { interval: (n - 1) as u32, node: d as u32, idx: 0 })
                    .unwrap();
                let err = (res.primal[end as usize] - exact).abs();
                if d == 3 && n == 20 {
                    assert!(err <= 1e-6, "degree 3, 20 intervals: error {err}");
                }
                // only judge the order while discretization error dominates
                // the solver tolerance
                if !prev_err.is_nan() && prev_err > 1e-12 && err > 1e-11 {
                    let ratio = prev_err / err;
                    assert!(
                        ratio >= (1 << d) as f64 * 0.85,
                        "degree {d}, n {n}: observed order ratio {ratio}"
                    );
                }
                prev_err = err;
            }
        }
    }

    /// Smallest instance: one interval, degree 1 is a single implicit-Euler
    /// step whose program has exactly one dynamic constraint.
    #[test]
    fn single_interval_degree_one_is_implicit_euler() {
        let scheme = CollocationScheme::radau(1).unwrap();
        let grid = ControlGrid::new(0.0, 0.5, 1);
        let program = transcribe_ode(grid, &scheme, &[2.0], |arena, _t, x| {
            vec![arena.neg(x[0])]
        });
        assert_eq!(program.n_constraints(), 1);
        assert_eq!(program.n_vars(), 1);
        let res = solve(&program, &SolveRequest::default());
        assert_eq!(res.status, SolveStatus::Optimal);
        // implicit Euler: x1 = x0 / (1 + h)
        assert!((res.primal[0] - 2.0 / 1.5).abs() < 1e-9);
    }
}
