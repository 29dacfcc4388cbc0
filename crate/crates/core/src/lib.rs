//! Modeling, simulation, optimization and closed-loop control of fed-batch
//! cybergenetic bioprocesses.
//!
//! The model couples a dynamic enzyme-cost flux-balance description of the
//! cell with externally induced protein expression (light-driven here). The
//! cell's own optimization is embedded through its KKT conditions, turning
//! open-loop input design, shrinking-horizon predictive control and
//! full-information state estimation into single-level complementarity
//! programs solved by the built-in interior-point backend.

pub mod expr;
pub mod rng;

pub use expr::ExprArena;

pub mod collocate;
pub mod defba;
pub mod dynamics;
pub mod netdef;
pub mod nlp;
