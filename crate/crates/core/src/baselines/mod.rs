//! Comparison learners: coupled tabular Q-learning, coupled DQN and
//! NeurWIN.

pub mod coupled_q;
pub mod dqn;
pub mod neurwin;

use rand::Rng;

use crate::arm::JointState;
use crate::bandit::BanditInstance;
use crate::error::Result;
use crate::Scalar;

pub use coupled_q::{coupled_q_learning_step, run_coupled_q, CoupledQTable};
pub use dqn::{coupled_dqn_step, run_coupled_dqn, DqnAgent, DqnConfig, JointTransition};
pub use neurwin::{
    neurwin_index, neurwin_policy_prob, neurwin_train, neurwin_train_instance, NeurwinAgent, NeurwinConfig,
};

/// Steps the bandit with the arm set `chosen` and returns the successor and
/// the summed reward of all arms.
pub(crate) fn joint_step<F: Scalar, R: Rng + ?Sized>(
    instance: &BanditInstance<F>,
    joint: &JointState,
    chosen: &[usize],
    rng: &mut R,
) -> Result<(JointState, F)> {
    let (next, samples) = instance.step(joint, chosen, rng)?;
    Ok((next, samples.iter().map(|s| s.reward()).sum()))
}

/// Index of a maximal entry; ties are broken uniformly at random.
pub(crate) fn argmax_random_tie<F: Scalar, R: Rng + ?Sized>(values: &[F], rng: &mut R) -> usize {
    let best = values.iter().copied().fold(F::neg_infinity(), F::max);
    let ties: Vec<usize> = (0..values.len()).filter(|&i| values[i] == best).collect();
    if ties.len() == 1 {
        ties[0]
    } else {
        ties[rng.random_range(0..ties.len())]
    }
}

/// Index of the first maximal entry.
pub(crate) fn argmax_first<F: Scalar>(values: &[F]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, F::neg_infinity()), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0
}
