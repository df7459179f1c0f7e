//! Concrete arm families and instance generators.

mod circular;
mod deadline;
mod restart;

use std::collections::VecDeque;
use std::sync::Arc;

use rand::Rng;

pub use circular::{circular_arm, CircularParams};
pub use deadline::{deadline_arm, deadline_closed_form_index, DeadlineParams, DeadlineState};
pub use restart::{restart_arm, RestartParams};

use crate::arm::{Action, ArmModel, StateId};
use crate::bandit::BanditInstance;
use crate::error::Result;
use crate::Scalar;

/// Parameter values drawn for heterogeneous restart arms.
pub const HETEROGENEOUS_RESTART_VALUES: [f64; 6] = [0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Activation costs of the four heterogeneous deadline groups.
pub const HETEROGENEOUS_DEADLINE_COSTS: [f64; 4] = [0.1, 0.3, 0.6, 0.8];

/// Three restart arms with `x = y` drawn i.i.d. from
/// [`HETEROGENEOUS_RESTART_VALUES`].
pub fn heterogeneous_restart_params<R: Rng + ?Sized>(rng: &mut R) -> Vec<RestartParams> {
    (0..3)
        .map(|_| {
            let v = HETEROGENEOUS_RESTART_VALUES[rng.random_range(0..HETEROGENEOUS_RESTART_VALUES.len())];
            RestartParams::symmetric(v)
        })
        .collect()
}

/// N = 3, M = 1 restart instance with randomly drawn arm parameters.
pub fn heterogeneous_restart_instance<F: Scalar, R: Rng + ?Sized>(
    gamma: F,
    rng: &mut R,
) -> Result<BanditInstance<F>> {
    let arms = heterogeneous_restart_params(rng)
        .iter()
        .map(|p| restart_arm(p).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    BanditInstance::new(arms, 1, gamma)
}

/// Cost of each arm in the heterogeneous deadline instance.
pub fn heterogeneous_deadline_costs() -> Vec<f64> {
    HETEROGENEOUS_DEADLINE_COSTS
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, 25))
        .collect()
}

/// N = 100, M = 25 deadline instance in four cost groups of 25 arms.
pub fn heterogeneous_deadline_instance<F: Scalar>(gamma: F) -> Result<BanditInstance<F>> {
    let groups = HETEROGENEOUS_DEADLINE_COSTS
        .iter()
        .map(|&c| deadline_arm(&DeadlineParams::standard(c)).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    let arms = groups
        .iter()
        .flat_map(|arm| std::iter::repeat_n(Arc::clone(arm), 25))
        .collect();
    BanditInstance::new(arms, 25, gamma)
}

/// States reachable from `starts` under any action sequence.
pub fn reachable_states<F: Scalar>(arm: &ArmModel<F>, starts: &[StateId]) -> Vec<StateId> {
    let mut seen = vec![false; arm.state_count()];
    let mut queue: VecDeque<StateId> = starts.iter().copied().collect();
    for s in starts {
        seen[s.0] = true;
    }
    while let Some(s) = queue.pop_front() {
        for a in Action::BOTH {
            for &(j, _) in arm.support(s, a) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(StateId(j));
                }
            }
        }
    }
    (0..arm.state_count()).filter(|&j| seen[j]).map(StateId).collect()
}
