//! Linear temporal-difference learning with arbitrary feature matrices.
//!
//! No rank assumption is placed on the feature matrix `X`. The crate computes
//! the objects that remain well defined in that setting:
//!
//! - the policy-induced chain, its stationary law and the Bellman operator ([`markov`]);
//! - the least-norm weighted projection `Π = X (D^{1/2} X)^† D^{1/2}` ([`linalg`]);
//! - the TD fixed-point set `W_* = { w : Aw + b = 0 }` as an affine set ([`fixed_points`]);
//! - the mean ODE `dw/dt = Aw + b`, its limit projector `A_∞` and limits `w_∞(w_0)` ([`ode`]);
//! - the stochastic TD(0) learner and its diagnostics ([`td`]);
//! - runtime checks of the stochastic-approximation ingredients ([`sa_checks`]).

pub mod error;
pub mod fixed_points;
pub mod generators;
pub mod instance;
pub mod linalg;
pub mod markov;
pub mod ode;
pub mod sa_checks;
pub mod td;

pub use error::{Error, Result};
pub use fixed_points::{FixedPointSet, TdLinearSystem};
pub use instance::Instance;
pub use linalg::{FeatureMap, Projector};
pub use markov::{Mdp, Policy, PolicyChain};
pub use ode::{OdeLimit, OdeTrajectory};
pub use td::{LearningRateSchedule, TdConfig, TdTrace};
