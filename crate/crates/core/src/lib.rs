//! Learning Whittle indices for restless multi-armed bandits under the
//! discounted criterion.
//!
//! The crate is generic over the real scalar type ([`Scalar`], implemented
//! for `f32` and `f64`); the `*F64` / `*F32` aliases below name the concrete
//! instantiations.

pub mod arm;
pub mod bandit;
pub mod baselines;
pub mod envs;
pub mod error;
pub mod learner;
pub mod nn;
pub mod oracle;
pub mod qwi;
pub mod qwinn;
pub mod replay;
pub mod schedule;
pub mod stability;
mod scalar;

pub use arm::{Action, ArmModel, JointState, StateId, TransitionSample};
pub use bandit::{epsilon_greedy_top_m, select_top_m, BanditInstance};
pub use error::{Error, Result};
pub use scalar::Scalar;

pub type ArmModelF64 = ArmModel<f64>;
pub type ArmModelF32 = ArmModel<f32>;
pub type BanditInstanceF64 = BanditInstance<f64>;
pub type BanditInstanceF32 = BanditInstance<f32>;
