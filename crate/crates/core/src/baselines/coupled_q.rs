//! Tabular Q-learning on the joint state space with M-subset actions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{argmax_first, argmax_random_tie, joint_step};
use crate::bandit::BanditInstance;
use crate::error::{invalid, Result};
use crate::learner::RunConfig;
use crate::oracle::{JointSpace, PolicySpec};
use crate::Scalar;

/// `Q(joint state, action id)` with per-pair visit counts. Action ids follow
/// [`JointSpace::actions`].
#[derive(Clone, Debug)]
pub struct CoupledQTable<F = f64> {
    space: JointSpace,
    q: Vec<F>,
    visits: Vec<u64>,
}

impl<F: Scalar> CoupledQTable<F> {
    pub fn new(space: JointSpace) -> Self {
        let len = space.size() * space.actions().len();
        CoupledQTable {
            space,
            q: vec![F::zero(); len],
            visits: vec![0; len],
        }
    }

    pub fn space(&self) -> &JointSpace {
        &self.space
    }

    pub fn action_count(&self) -> usize {
        self.space.actions().len()
    }

    pub fn row(&self, state: usize) -> &[F] {
        let k = self.action_count();
        &self.q[state * k..(state + 1) * k]
    }

    pub fn get(&self, state: usize, action: usize) -> F {
        self.q[state * self.action_count() + action]
    }

    pub fn visits(&self, state: usize, action: usize) -> u64 {
        self.visits[state * self.action_count() + action]
    }

    pub fn total_visits(&self) -> u64 {
        self.visits.iter().sum()
    }

    /// Lowest-id maximizer in every joint state.
    pub fn greedy_policy(&self) -> PolicySpec<F> {
        PolicySpec::Deterministic((0..self.space.size()).map(|s| argmax_first(self.row(s))).collect())
    }
}

/// `Q(s, a) += (r + gamma max Q(s', .) - Q(s, a)) / #N(s, a)` after counting
/// the visit.
pub fn coupled_q_learning_step<F: Scalar>(
    table: &mut CoupledQTable<F>,
    state: usize,
    action: usize,
    reward: F,
    next: usize,
    gamma: F,
) -> Result<()> {
    let k = table.action_count();
    if state >= table.space.size() || next >= table.space.size() || action >= k {
        return Err(invalid("joint transition out of range"));
    }
    let slot = state * k + action;
    table.visits[slot] += 1;
    let alpha = F::one() / F::lit(table.visits[slot] as f64);
    let best_next = table.row(next).iter().copied().fold(F::neg_infinity(), F::max);
    let old = table.q[slot];
    table.q[slot] = old + alpha * (reward + gamma * best_next - old);
    Ok(())
}

/// Online epsilon-greedy Q-learning; greedy ties are broken uniformly.
/// `on_checkpoint` sees the table at step 0, every `checkpoint_every`
/// steps and at the end.
pub fn run_coupled_q<F, C>(instance: &BanditInstance<F>, run: &RunConfig, mut on_checkpoint: C) -> Result<CoupledQTable<F>>
where
    F: Scalar,
    C: FnMut(u64, &CoupledQTable<F>) -> Result<()>,
{
    if !(0.0..=1.0).contains(&run.epsilon) {
        return Err(invalid(format!("epsilon must lie in [0, 1], got {}", run.epsilon)));
    }
    let mut table = CoupledQTable::new(JointSpace::new(instance)?);
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut joint = instance.random_joint_state(&mut rng);
    let gamma = instance.discount();
    on_checkpoint(0, &table)?;
    for step in 1..=run.horizon {
        let s = table.space.encode(&joint);
        let a = if rng.random::<f64>() < run.epsilon {
            rng.random_range(0..table.action_count())
        } else {
            argmax_random_tie(table.row(s), &mut rng)
        };
        let chosen = table.space.actions()[a].clone();
        let (next, reward) = joint_step(instance, &joint, &chosen, &mut rng)?;
        let s_next = table.space.encode(&next);
        coupled_q_learning_step(&mut table, s, a, reward, s_next, gamma)?;
        joint = next;
        if (run.checkpoint_every > 0 && step % run.checkpoint_every == 0) || step == run.horizon {
            on_checkpoint(step, &table)?;
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ArmModel;

    fn space() -> JointSpace {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let arm = ArmModel::new(eye.clone(), eye, vec![0.0; 2], vec![1.0; 2]).unwrap();
        JointSpace::new(&BanditInstance::homogeneous(arm, 2, 1, 0.9).unwrap()).unwrap()
    }

    #[test]
    fn first_visit_takes_full_step() {
        let mut t = CoupledQTable::<f64>::new(space());
        coupled_q_learning_step(&mut t, 1, 0, 2.0, 3, 0.0).unwrap();
        assert_eq!(t.get(1, 0), 2.0);
        assert_eq!(t.visits(1, 0), 1);
        coupled_q_learning_step(&mut t, 1, 0, 4.0, 3, 0.0).unwrap();
        assert_eq!(t.get(1, 0), 3.0);
        assert_eq!(t.total_visits(), 2);
        assert!(coupled_q_learning_step(&mut t, 4, 0, 0.0, 0, 0.0).is_err());
    }
}
