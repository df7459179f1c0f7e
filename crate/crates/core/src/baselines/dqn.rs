//! DQN on the joint problem: the normalized joint state goes in, one Q-value
//! per M-subset action comes out.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{argmax_first, argmax_random_tie, joint_step};
use crate::arm::JointState;
use crate::bandit::BanditInstance;
use crate::error::{invalid, Result};
use crate::learner::RunConfig;
use crate::nn::{copy_params, Adam, Batch, DenseNet};
use crate::oracle::coupled::subsets;
use crate::oracle::{JointSpace, PolicySpec};
use crate::qwinn::normalize_state;
use crate::replay::ReplayMemory;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct DqnConfig {
    pub hidden: Vec<usize>,
    pub replay_threshold: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub sync_every: u64,
    pub learning_rate: f64,
}

impl Default for DqnConfig {
    fn default() -> Self {
        DqnConfig {
            hidden: vec![64, 64],
            replay_threshold: 128,
            batch_size: 32,
            replay_capacity: 10_000,
            sync_every: 50,
            learning_rate: 1e-3,
        }
    }
}

impl DqnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return Err(invalid("batch size must lie in 1..=replay capacity"));
        }
        if self.replay_threshold < self.batch_size.saturating_sub(1) || self.replay_threshold >= self.replay_capacity {
            return Err(invalid("replay threshold must lie in [batch size - 1, capacity)"));
        }
        if self.sync_every == 0 || self.hidden.contains(&0) {
            return Err(invalid("sync period and hidden widths must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// One joint transition; `action` is a subset id.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTransition<F = f64> {
    pub state: JointState,
    pub action: usize,
    pub reward: F,
    pub next_state: JointState,
}

#[derive(Clone, Debug)]
pub struct DqnAgent<F = f64> {
    pub main: DenseNet<F>,
    pub target: DenseNet<F>,
    pub optimizer: Adam<F>,
    pub memory: ReplayMemory<JointTransition<F>>,
    pub config: DqnConfig,
    radices: Vec<usize>,
    actions: Vec<Vec<usize>>,
}

impl<F: Scalar> DqnAgent<F> {
    pub fn new<R: Rng + ?Sized>(instance: &BanditInstance<F>, config: DqnConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let actions = subsets(instance.arm_count(), instance.m_active());
        let mut dims = vec![instance.arm_count()];
        dims.extend(&config.hidden);
        dims.push(actions.len());
        let main = DenseNet::new(&dims, rng)?;
        Ok(DqnAgent {
            target: main.clone(),
            optimizer: Adam::with_rate(&main, F::lit(config.learning_rate)),
            memory: ReplayMemory::new(config.replay_capacity)?,
            main,
            radices: instance.arms().iter().map(|a| a.state_count()).collect(),
            actions,
            config,
        })
    }

    /// Action subsets in output order.
    pub fn actions(&self) -> &[Vec<usize>] {
        &self.actions
    }

    pub fn encode(&self, joint: &JointState) -> Vec<F> {
        joint
            .states()
            .iter()
            .zip(&self.radices)
            .map(|(&s, &n)| normalize_state(s, n))
            .collect()
    }

    fn encode_rows<'a>(&self, joints: impl ExactSizeIterator<Item = &'a JointState>) -> Array2<F> {
        let mut rows = Array2::zeros((joints.len(), self.radices.len()));
        for (mut row, joint) in rows.rows_mut().into_iter().zip(joints) {
            row.assign(&Array1::from(self.encode(joint)));
        }
        rows
    }

    pub fn q_values(&self, joint: &JointState) -> Result<Vec<F>> {
        self.main.forward(&self.encode(joint))
    }

    /// Lowest-id maximizer of the main network in every joint state.
    pub fn greedy_policy(&self, space: &JointSpace) -> Result<PolicySpec<F>> {
        if space.actions() != self.actions.as_slice() {
            return Err(invalid("joint space does not match the agent's action set"));
        }
        let joints: Vec<JointState> = (0..space.size()).map(|i| space.decode(i)).collect();
        let q = self.main.forward_batch(self.encode_rows(joints.iter()).view())?;
        Ok(PolicySpec::Deterministic(
            q.rows().into_iter().map(|r| argmax_first(r.as_slice().expect("row-major"))).collect(),
        ))
    }
}

/// One masked regression step of the main network onto
/// `r + gamma max_a' Q_target(s', a')`. Returns the batch loss.
pub fn coupled_dqn_step<F: Scalar>(agent: &mut DqnAgent<F>, batch: &[JointTransition<F>], gamma: F) -> Result<F> {
    if batch.is_empty() {
        return Ok(F::zero());
    }
    let next_q = agent
        .target
        .forward_batch(agent.encode_rows(batch.iter().map(|t| &t.next_state)).view())?;
    let targets: Array1<F> = batch
        .iter()
        .zip(next_q.rows())
        .map(|(t, q)| t.reward + gamma * q.iter().copied().fold(F::neg_infinity(), F::max))
        .collect();
    let inputs = agent.encode_rows(batch.iter().map(|t| &t.state));
    let mask = batch.iter().map(|t| t.action).collect();
    let (loss, grads) = agent.main.backward_mse(&Batch::new(inputs, targets, mask)?)?;
    agent.optimizer.step(&mut agent.main, &grads)?;
    Ok(loss)
}

/// Online epsilon-greedy DQN with replay and a periodically synced target
/// network.
pub fn run_coupled_dqn<F, C>(
    instance: &BanditInstance<F>,
    config: &DqnConfig,
    run: &RunConfig,
    mut on_checkpoint: C,
) -> Result<DqnAgent<F>>
where
    F: Scalar,
    C: FnMut(u64, &DqnAgent<F>) -> Result<()>,
{
    if !(0.0..=1.0).contains(&run.epsilon) {
        return Err(invalid(format!("epsilon must lie in [0, 1], got {}", run.epsilon)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut learner_rng = ChaCha8Rng::seed_from_u64(run.seed);
    learner_rng.set_stream(1);
    let mut agent = DqnAgent::new(instance, config.clone(), &mut learner_rng)?;
    let gamma = instance.discount();
    let mut joint = instance.random_joint_state(&mut rng);
    on_checkpoint(0, &agent)?;
    for step in 1..=run.horizon {
        let a = if rng.random::<f64>() < run.epsilon {
            rng.random_range(0..agent.actions.len())
        } else {
            argmax_random_tie(&agent.q_values(&joint)?, &mut rng)
        };
        let chosen = agent.actions[a].clone();
        let (next, reward) = joint_step(instance, &joint, &chosen, &mut rng)?;
        agent.memory.push(JointTransition {
            state: joint,
            action: a,
            reward,
            next_state: next.clone(),
        });
        joint = next;
        if agent.memory.len() > agent.config.replay_threshold {
            let batch = agent.memory.sample(agent.config.batch_size, &mut learner_rng)?;
            coupled_dqn_step(&mut agent, &batch, gamma)?;
        }
        if step % agent.config.sync_every == 0 {
            copy_params(&agent.main, &mut agent.target)?;
        }
        if (run.checkpoint_every > 0 && step % run.checkpoint_every == 0) || step == run.horizon {
            on_checkpoint(step, &agent)?;
        }
    }
    Ok(agent)
}
