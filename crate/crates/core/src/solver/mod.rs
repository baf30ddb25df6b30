//! Alignment solver: damped least squares over transform parameters plus the
//! coarse-to-fine driver that walks a kernel-width ladder.

mod lm;
mod problem;
mod register;
mod schedule;

pub use lm::{fd_jacobian, lm_minimize, JacobianMode, LmConfig, LmOutcome, LmStats, Termination};
pub use lm::LeastSquares;
pub use problem::{alignment_problem, TransformMode};
pub(crate) use register::mix_seed;
pub use register::{register, register_rays, LevelRecord, RegistrationResult};
pub use schedule::{make_sigma_ladder, Schedule};
