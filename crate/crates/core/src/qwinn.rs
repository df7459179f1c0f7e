//! Neural Whittle-index learner: per-arm replay memories, a main and a
//! target network taking (state, reference state) as input, and tabular
//! slow-timescale index updates read off the main network.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arm::{Action, StateId, TransitionSample};
use crate::bandit::BanditInstance;
use crate::error::{invalid, Result};
use crate::learner::{run_with_trace, IndexLearner, LearningTrace, RunConfig};
use crate::nn::{copy_params, Adam, DenseNet};
use crate::qwi::WhittleEstimates;
use crate::replay::ReplayMemory;
use crate::schedule::StepSchedule;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct QwinnConfig {
    pub hidden: Vec<usize>,
    /// Training starts once a memory holds more than this many samples.
    pub replay_threshold: usize,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Target networks copy the main networks every this many steps.
    pub sync_every: u64,
    pub learning_rate: f64,
    pub schedule: StepSchedule,
}

impl Default for QwinnConfig {
    fn default() -> Self {
        QwinnConfig {
            hidden: vec![100, 200, 100],
            replay_threshold: 128,
            batch_size: 32,
            replay_capacity: 10_000,
            sync_every: 50,
            learning_rate: 1e-3,
            schedule: StepSchedule::default(),
        }
    }
}

impl QwinnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size > self.replay_capacity {
            return Err(invalid("batch size must lie in 1..=replay capacity"));
        }
        if self.replay_threshold < self.batch_size.saturating_sub(1) || self.replay_threshold >= self.replay_capacity {
            return Err(invalid("replay threshold must lie in [batch size - 1, capacity)"));
        }
        if self.sync_every == 0 {
            return Err(invalid("sync period must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden layers must be nonempty"));
        }
        Ok(())
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![2];
        dims.extend(&self.hidden);
        dims.push(2);
        dims
    }
}

/// State id scaled to [0, 1].
pub fn normalize_state<F: Scalar>(s: StateId, state_count: usize) -> F {
    if state_count <= 1 {
        F::zero()
    } else {
        F::from_usize_lossy(s.0) / F::from_usize_lossy(state_count - 1)
    }
}

/// Network input for visited state `s` and reference state `x`.
pub fn network_input<F: Scalar>(s: StateId, x: StateId, state_count: usize) -> [F; 2] {
    [normalize_state(s, state_count), normalize_state(x, state_count)]
}

/// `(1 - a)(r0 + lambda(x)) + a r1 + gamma max_v Q_target^x(s', v)`.
pub fn qwinn_target<F: Scalar>(
    sample: &TransitionSample<F>,
    lambda_x: F,
    x: StateId,
    state_count: usize,
    target: &DenseNet<F>,
    gamma: F,
) -> Result<F> {
    let out = target.forward(&network_input(sample.next_state, x, state_count))?;
    Ok(immediate(sample, lambda_x) + gamma * out[0].max(out[1]))
}

fn immediate<F: Scalar>(sample: &TransitionSample<F>, lambda_x: F) -> F {
    match sample.action {
        Action::Passive => sample.passive_reward + lambda_x,
        Action::Active => sample.active_reward,
    }
}

/// Networks, optimizer, memory and index estimates of one arm.
#[derive(Clone, Debug)]
pub struct QwinnArm<F = f64> {
    pub main: DenseNet<F>,
    pub target: DenseNet<F>,
    pub optimizer: Adam<F>,
    pub lambda: WhittleEstimates<F>,
    pub memory: ReplayMemory<TransitionSample<F>>,
    pub state_count: usize,
}

impl<F: Scalar> QwinnArm<F> {
    pub fn new<R: Rng + ?Sized>(state_count: usize, config: &QwinnConfig, rng: &mut R) -> Result<Self> {
        let main = DenseNet::new(&config.layer_dims(), rng)?;
        let target = main.clone();
        let optimizer = Adam::with_rate(&main, F::lit(config.learning_rate));
        Ok(QwinnArm {
            main,
            target,
            optimizer,
            lambda: WhittleEstimates::zeros(state_count),
            memory: ReplayMemory::new(config.replay_capacity)?,
            state_count,
        })
    }

    /// `Q_main^x(x, 1) - Q_main^x(x, 0)`.
    pub fn reference_gap(&self, x: StateId) -> Result<F> {
        let q = self.main.forward(&network_input(x, x, self.state_count))?;
        Ok(q[1] - q[0])
    }

    /// One optimizer step on the main network for reference state `x`,
    /// regressing `batch` onto targets bootstrapped from the target network.
    /// Returns the batch loss.
    ///
    /// Samples sharing a state are folded into one input row carrying, per
    /// action, the mean target weighted by its multiplicity; the gradient is
    /// that of the plain batch mean.
    pub fn fit_reference(&mut self, x: StateId, batch: &[TransitionSample<F>], gamma: F) -> Result<F> {
        let n = self.state_count;
        let lambda_x = self.lambda.get(x);

        let mut next_rows: BTreeMap<usize, usize> = BTreeMap::new();
        for t in batch {
            let len = next_rows.len();
            next_rows.entry(t.next_state.0).or_insert(len);
        }
        let mut next_inputs = Array2::zeros((next_rows.len(), 2));
        for (&s, &row) in &next_rows {
            let input = network_input(StateId(s), x, n);
            next_inputs[[row, 0]] = input[0];
            next_inputs[[row, 1]] = input[1];
        }
        let next_q = self.target.forward_batch(next_inputs.view())?;

        // state -> per-action (target sum, count)
        let mut folded: BTreeMap<usize, [(F, usize); 2]> = BTreeMap::new();
        for t in batch {
            let row = next_rows[&t.next_state.0];
            let y = immediate(t, lambda_x) + gamma * next_q[[row, 0]].max(next_q[[row, 1]]);
            let e = &mut folded.entry(t.state.0).or_insert([(F::zero(), 0); 2])[t.action.index()];
            e.0 += y;
            e.1 += 1;
        }
        let rows = folded.len();
        let mut inputs = Array2::zeros((rows, 2));
        let mut targets = Array2::zeros((rows, 2));
        let mut weights = Array2::zeros((rows, 2));
        for (i, (&s, per_action)) in folded.iter().enumerate() {
            let input = network_input(StateId(s), x, n);
            inputs[[i, 0]] = input[0];
            inputs[[i, 1]] = input[1];
            for (a, &(sum, count)) in per_action.iter().enumerate() {
                if count > 0 {
                    let c = F::from_usize_lossy(count);
                    targets[[i, a]] = sum / c;
                    weights[[i, a]] = c;
                }
            }
        }
        let (loss, grads) = self.main.backward_weighted_mse(inputs.view(), &targets, &weights)?;
        self.optimizer.step(&mut self.main, &grads)?;
        Ok(loss)
    }

    /// `lambda(x) += beta (Q_main^x(x, 1) - Q_main^x(x, 0))` for every `x`.
    pub fn update_lambda(&mut self, beta: F) -> Result<()> {
        if beta == F::zero() {
            return Ok(());
        }
        for x in 0..self.state_count {
            let gap = self.reference_gap(StateId(x))?;
            self.lambda.0[x] += beta * gap;
        }
        Ok(())
    }

    pub fn sync_target(&mut self) -> Result<()> {
        copy_params(&self.main, &mut self.target)
    }
}

#[derive(Clone, Debug)]
pub struct QwinnAgent<F = f64> {
    pub arms: Vec<QwinnArm<F>>,
    pub config: QwinnConfig,
    pub gamma: F,
    rng: ChaCha8Rng,
}

impl<F: Scalar> QwinnAgent<F> {
    /// Networks are initialized and replay batches drawn from a generator
    /// seeded with `seed`.
    pub fn new(instance: &BanditInstance<F>, config: QwinnConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Keep this stream apart from the environment's, which uses the same seed.
        rng.set_stream(1);
        let arms = instance
            .arms()
            .iter()
            .map(|a| QwinnArm::new(a.state_count(), &config, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(QwinnAgent {
            arms,
            config,
            gamma: instance.discount(),
            rng,
        })
    }

    /// Trains every arm whose memory exceeds the threshold: one optimizer
    /// step per reference state on a fresh batch, then the index update at
    /// step `n`, then the periodic target sync.
    pub fn train_step(&mut self, n: u64) -> Result<()> {
        let beta: F = self.config.schedule.beta(n);
        for arm in &mut self.arms {
            if arm.memory.len() <= self.config.replay_threshold {
                continue;
            }
            let batch = arm.memory.sample(self.config.batch_size, &mut self.rng)?;
            for x in 0..arm.state_count {
                arm.fit_reference(StateId(x), &batch, self.gamma)?;
            }
            arm.update_lambda(beta)?;
        }
        if n.is_multiple_of(self.config.sync_every) {
            for arm in &mut self.arms {
                arm.sync_target()?;
            }
        }
        Ok(())
    }
}

impl<F: Scalar> IndexLearner<F> for QwinnAgent<F> {
    fn observe(&mut self, step: u64, samples: &[TransitionSample<F>]) -> Result<()> {
        for s in samples {
            self.arms[s.arm].memory.push(*s);
        }
        self.train_step(step)
    }

    fn index(&self, arm: usize, state: StateId) -> F {
        self.arms[arm].lambda.get(state)
    }

    fn indices(&self) -> Vec<Vec<F>> {
        self.arms.iter().map(|a| a.lambda.0.clone()).collect()
    }
}

pub fn run_qwinn<F: Scalar>(
    instance: &BanditInstance<F>,
    config: &QwinnConfig,
    run: &RunConfig,
) -> Result<(LearningTrace<F>, QwinnAgent<F>)> {
    let mut agent = QwinnAgent::new(instance, config.clone(), run.seed)?;
    let trace = run_with_trace(instance, &mut agent, run)?;
    Ok((trace, agent))
}
