//! Re-identification risk for k-anonymised datasets.
//!
//! An adversary obtains a uniformly random leak of `L` whole patient
//! histories out of `D` and tries to link each leaked patient back to a
//! known individual. Within an equivalence class the adversary can do no
//! better than guess among the leaked members, so a leaked patient whose
//! class has `m` leaked members is identified with probability `1/m`.
//!
//! The crate provides three routes to the resulting risk that check one
//! another:
//!
//! * [`analytic`]: a closed hypergeometric sum for one patient and a
//!   homogeneous class size `k`;
//! * [`recursive`]: a memoized recursion over class-size histograms for `n`
//!   patients and arbitrary class structures;
//! * [`simulation`]: seeded, parallel Monte Carlo attacks.
//!
//! [`anonymizer`] is a small rule-driven k-anonymiser producing the
//! class-size histograms the solvers consume, and [`calibrate`] / [`report`]
//! pick the smallest `k` meeting a risk threshold and regenerate sweep data.

pub mod analytic;
pub mod anonymizer;
pub mod calibrate;
pub mod combinatorics;
mod error;
pub mod execution;
pub mod recursive;
pub mod report;
pub mod scenario;
pub mod simulation;

pub use combinatorics::{Backend, Probability};
pub use error::{Error, Result};
pub use execution::Execution;
pub use scenario::{AttackScenario, ClassSizeDistribution, ClassStructure};
