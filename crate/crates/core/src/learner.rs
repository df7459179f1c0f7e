//! Online driver shared by the index learners: epsilon-greedy top-M
//! selection on the current index estimates, one joint step, one update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arm::{JointState, StateId, TransitionSample};
use crate::bandit::{epsilon_greedy_top_m, BanditInstance};
use crate::error::{invalid, Result};
use crate::Scalar;

/// A learner that maintains one index estimate per (arm, state).
pub trait IndexLearner<F: Scalar> {
    /// Consumes the transitions of global step `step` (starting at 1).
    fn observe(&mut self, step: u64, samples: &[TransitionSample<F>]) -> Result<()>;

    /// Current index estimate of `state` on `arm`.
    fn index(&self, arm: usize, state: StateId) -> F;

    /// `indices()[arm][state]`.
    fn indices(&self) -> Vec<Vec<F>>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunConfig {
    pub horizon: u64,
    pub epsilon: f64,
    pub seed: u64,
    /// Checkpoint every this many steps; 0 disables intermediate
    /// checkpoints (step 0 and the final step are always recorded).
    pub checkpoint_every: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            horizon: 10_000,
            epsilon: 1.0,
            seed: 0,
            checkpoint_every: 500,
        }
    }
}

/// Per-arm index estimates at one step.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<F = f64> {
    pub step: u64,
    pub indices: Vec<Vec<F>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearningTrace<F = f64> {
    pub checkpoints: Vec<Checkpoint<F>>,
}

impl<F: Scalar> LearningTrace<F> {
    pub fn last(&self) -> &Checkpoint<F> {
        self.checkpoints.last().expect("trace always holds the initial checkpoint")
    }
}

/// Index estimates averaged across arms (homogeneous instances).
pub fn averaged_indices<F: Scalar>(indices: &[Vec<F>]) -> Vec<F> {
    let n = F::from_usize_lossy(indices.len());
    let width = indices.first().map_or(0, Vec::len);
    (0..width)
        .map(|s| indices.iter().map(|t| t[s]).sum::<F>() / n)
        .collect()
}

/// Runs `learner` online on `instance` for `config.horizon` steps.
/// `on_checkpoint` sees the learner at step 0, every `checkpoint_every`
/// steps, and at the end.
pub fn run_index_learner<F, L, C>(
    instance: &BanditInstance<F>,
    learner: &mut L,
    config: &RunConfig,
    mut on_checkpoint: C,
) -> Result<()>
where
    F: Scalar,
    L: IndexLearner<F>,
    C: FnMut(u64, &L) -> Result<()>,
{
    if !(0.0..=1.0).contains(&config.epsilon) {
        return Err(invalid(format!("epsilon must lie in [0, 1], got {}", config.epsilon)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut joint = instance.random_joint_state(&mut rng);
    on_checkpoint(0, learner)?;
    let mut values = vec![F::zero(); instance.arm_count()];
    for step in 1..=config.horizon {
        joint = advance(instance, learner, &joint, config.epsilon, step, &mut values, &mut rng)?;
        let due = config.checkpoint_every > 0 && step % config.checkpoint_every == 0;
        if due || step == config.horizon {
            on_checkpoint(step, learner)?;
        }
    }
    Ok(())
}

fn advance<F: Scalar, L: IndexLearner<F>, R: Rng>(
    instance: &BanditInstance<F>,
    learner: &mut L,
    joint: &JointState,
    epsilon: f64,
    step: u64,
    values: &mut [F],
    rng: &mut R,
) -> Result<JointState> {
    // Random selection ignores the values, so skip computing them.
    if epsilon < 1.0 {
        for (i, (v, s)) in values.iter_mut().zip(joint.states()).enumerate() {
            *v = learner.index(i, *s);
        }
    }
    let chosen = epsilon_greedy_top_m(values, instance.m_active(), epsilon, rng)?;
    let (next, samples) = instance.step(joint, &chosen, rng)?;
    learner.observe(step, &samples)?;
    Ok(next)
}

/// Runs the learner and records every checkpoint's index estimates.
pub fn run_with_trace<F: Scalar, L: IndexLearner<F>>(
    instance: &BanditInstance<F>,
    learner: &mut L,
    config: &RunConfig,
) -> Result<LearningTrace<F>> {
    let mut checkpoints = Vec::new();
    run_index_learner(instance, learner, config, |step, l| {
        checkpoints.push(Checkpoint {
            step,
            indices: l.indices(),
        });
        Ok(())
    })?;
    Ok(LearningTrace { checkpoints })
}
