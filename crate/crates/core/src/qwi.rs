//! Tabular two-timescale Whittle-index learner.
//!
//! For every reference state `x` the arm keeps a Q-table `Q^x(s, a)` of the
//! arm subsidized by the current estimate `lambda(x)`. Every transition
//! updates `Q^x(s_n, a_n)` for all `x` with step `alpha(n)`; on the slow
//! timescale `lambda(x)` moves along `Q^x(x, 1) - Q^x(x, 0)` with step
//! `beta(n)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arm::{Action, ArmModel, StateId, TransitionSample};
use crate::bandit::BanditInstance;
use crate::error::{invalid, Result};
use crate::learner::{run_with_trace, IndexLearner, LearningTrace, RunConfig};
use crate::schedule::StepSchedule;
use crate::Scalar;

/// `Q^x(s, a)` for one arm, indexed (reference state, state, action).
#[derive(Clone, Debug, PartialEq)]
pub struct QTable3<F = f64> {
    states: usize,
    values: Vec<F>,
}

impl<F: Scalar> QTable3<F> {
    pub fn zeros(states: usize) -> Self {
        QTable3 {
            states,
            values: vec![F::zero(); states * states * 2],
        }
    }

    pub fn state_count(&self) -> usize {
        self.states
    }

    #[inline]
    fn offset(&self, x: StateId, s: StateId, a: Action) -> usize {
        (x.0 * self.states + s.0) * 2 + a.index()
    }

    #[inline]
    pub fn get(&self, x: StateId, s: StateId, a: Action) -> F {
        self.values[self.offset(x, s, a)]
    }

    #[inline]
    pub fn set(&mut self, x: StateId, s: StateId, a: Action, value: F) {
        let o = self.offset(x, s, a);
        self.values[o] = value;
    }

    #[inline]
    pub fn max_action(&self, x: StateId, s: StateId) -> F {
        self.get(x, s, Action::Passive).max(self.get(x, s, Action::Active))
    }

    /// `Q^x(x, 1) - Q^x(x, 0)`.
    #[inline]
    pub fn reference_gap(&self, x: StateId) -> F {
        self.get(x, x, Action::Active) - self.get(x, x, Action::Passive)
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn max_abs(&self) -> F {
        self.values.iter().fold(F::zero(), |m, v| m.max(v.abs()))
    }
}

/// Per-state Whittle index estimates of one arm.
#[derive(Clone, Debug, PartialEq)]
pub struct WhittleEstimates<F = f64>(pub Vec<F>);

impl<F: Scalar> WhittleEstimates<F> {
    pub fn zeros(states: usize) -> Self {
        WhittleEstimates(vec![F::zero(); states])
    }

    pub fn get(&self, x: StateId) -> F {
        self.0[x.0]
    }
}

/// Fast-timescale update: for every reference state `x`,
/// `Q^x(s, a) <- (1 - alpha) Q^x(s, a) + alpha [(1 - a)(r0 + lambda(x)) + a r1 + gamma max_v Q^x(s', v)]`.
pub fn qwi_q_update<F: Scalar>(
    table: &mut QTable3<F>,
    lambdas: &WhittleEstimates<F>,
    sample: &TransitionSample<F>,
    alpha: F,
    gamma: F,
) {
    let (s, a, next) = (sample.state, sample.action, sample.next_state);
    let a_flag: F = a.flag();
    let active_part = a_flag * sample.active_reward;
    for x in (0..table.states).map(StateId) {
        let target = (F::one() - a_flag) * (sample.passive_reward + lambdas.get(x))
            + active_part
            + gamma * table.max_action(x, next);
        let old = table.get(x, s, a);
        table.set(x, s, a, (F::one() - alpha) * old + alpha * target);
    }
}

/// Slow-timescale update `lambda(x) <- lambda(x) + beta (Q^x(x,1) - Q^x(x,0))`.
pub fn qwi_whittle_update<F: Scalar>(table: &QTable3<F>, lambdas: &mut WhittleEstimates<F>, beta: F) {
    if beta == F::zero() {
        return;
    }
    for (x, l) in lambdas.0.iter_mut().enumerate() {
        *l += beta * table.reference_gap(StateId(x));
    }
}

/// Learner state of one arm.
#[derive(Clone, Debug, PartialEq)]
pub struct QwiArm<F = f64> {
    pub q: QTable3<F>,
    pub lambda: WhittleEstimates<F>,
    /// Number of transitions consumed.
    pub steps: u64,
}

impl<F: Scalar> QwiArm<F> {
    pub fn new(states: usize) -> Self {
        QwiArm {
            q: QTable3::zeros(states),
            lambda: WhittleEstimates::zeros(states),
            steps: 0,
        }
    }

    /// One fast update followed by one slow update.
    pub fn update(&mut self, sample: &TransitionSample<F>, schedule: &StepSchedule, gamma: F) -> Result<()> {
        self.steps += 1;
        let alpha = schedule.alpha(self.steps)?;
        qwi_q_update(&mut self.q, &self.lambda, sample, alpha, gamma);
        qwi_whittle_update(&self.q, &mut self.lambda, schedule.beta(self.steps));
        Ok(())
    }
}

/// One [`QwiArm`] per arm of an instance.
#[derive(Clone, Debug)]
pub struct QwiAgent<F = f64> {
    pub arms: Vec<QwiArm<F>>,
    pub schedule: StepSchedule,
    pub gamma: F,
    /// When set, the index estimates are held fixed (Q-only learning).
    pub freeze_lambda: bool,
}

impl<F: Scalar> QwiAgent<F> {
    pub fn new(instance: &BanditInstance<F>) -> Self {
        QwiAgent {
            arms: instance.arms().iter().map(|a| QwiArm::new(a.state_count())).collect(),
            schedule: StepSchedule::default(),
            gamma: instance.discount(),
            freeze_lambda: false,
        }
    }

    /// Overrides the index estimates of every arm.
    pub fn set_lambdas(&mut self, lambdas: &[Vec<F>]) -> Result<()> {
        if lambdas.len() != self.arms.len() {
            return Err(invalid("one index table per arm required"));
        }
        for (arm, l) in self.arms.iter_mut().zip(lambdas) {
            if l.len() != arm.lambda.0.len() {
                return Err(invalid("index table size mismatch"));
            }
            arm.lambda.0.clone_from(l);
        }
        Ok(())
    }
}

impl<F: Scalar> IndexLearner<F> for QwiAgent<F> {
    fn observe(&mut self, _step: u64, samples: &[TransitionSample<F>]) -> Result<()> {
        for sample in samples {
            let arm = &mut self.arms[sample.arm];
            if self.freeze_lambda {
                arm.steps += 1;
                let alpha = self.schedule.alpha(arm.steps)?;
                qwi_q_update(&mut arm.q, &arm.lambda, sample, alpha, self.gamma);
            } else {
                arm.update(sample, &self.schedule, self.gamma)?;
            }
        }
        Ok(())
    }

    fn index(&self, arm: usize, state: StateId) -> F {
        self.arms[arm].lambda.get(state)
    }

    fn indices(&self) -> Vec<Vec<F>> {
        self.arms.iter().map(|a| a.lambda.0.clone()).collect()
    }
}

/// Runs the tabular learner from zero initialization and returns the index
/// trace together with the final agent.
pub fn run_qwi<F: Scalar>(instance: &BanditInstance<F>, config: &RunConfig) -> Result<(LearningTrace<F>, QwiAgent<F>)> {
    let mut agent = QwiAgent::new(instance);
    let trace = run_with_trace(instance, &mut agent, config)?;
    Ok((trace, agent))
}

/// Result of [`qwi_frozen_lambda`].
#[derive(Clone, Debug)]
pub struct FrozenLambdaRun<F = f64> {
    /// Final iterate.
    pub last: QTable3<F>,
    /// Average of the iterates over the second half of the run.
    pub averaged: Vec<F>,
}

/// Runs the fast update alone on one arm with the indices held at `lambdas`
/// and actions drawn uniformly at random. The iterates should approach the
/// Q-functions of the arm subsidized by each `lambdas[x]`.
pub fn qwi_frozen_lambda<F: Scalar>(
    arm: &ArmModel<F>,
    lambdas: &[F],
    gamma: F,
    samples: u64,
    seed: u64,
    schedule: &StepSchedule,
) -> Result<FrozenLambdaRun<F>> {
    let n = arm.state_count();
    if lambdas.len() != n {
        return Err(invalid("one index per state required"));
    }
    let lambda = WhittleEstimates(lambdas.to_vec());
    let mut q = QTable3::zeros(n);
    let mut sum = vec![F::zero(); q.values.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = StateId(rng.random_range(0..n));
    let burn_in = samples / 2;
    for step in 1..=samples {
        let a = Action::from_active(rng.random::<bool>());
        let sample = arm.sample_transition(0, s, a, &mut rng)?;
        qwi_q_update(&mut q, &lambda, &sample, schedule.alpha(step)?, gamma);
        if step > burn_in {
            for (acc, v) in sum.iter_mut().zip(&q.values) {
                *acc += *v;
            }
        }
        s = sample.next_state;
    }
    let count = F::lit((samples - burn_in).max(1) as f64);
    let averaged = sum.into_iter().map(|v| v / count).collect();
    Ok(FrozenLambdaRun { last: q, averaged })
}

impl<F: Scalar> FrozenLambdaRun<F> {
    /// Averaged `Q^x(s, a)`.
    pub fn averaged_at(&self, x: StateId, s: StateId, a: Action) -> F {
        self.averaged[self.last.offset(x, s, a)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(a: Action) -> TransitionSample {
        TransitionSample {
            arm: 0,
            state: StateId(1),
            action: a,
            passive_reward: 0.5,
            active_reward: 2.0,
            next_state: StateId(0),
        }
    }

    #[test]
    fn passive_substitution() {
        let mut q = QTable3::zeros(3);
        let l = WhittleEstimates(vec![0.1; 3]);
        qwi_q_update(&mut q, &l, &sample(Action::Passive), 1.0, 0.9);
        for x in 0..3 {
            assert!((q.get(StateId(x), StateId(1), Action::Passive) - 0.6).abs() < 1e-15);
            assert_eq!(q.get(StateId(x), StateId(1), Action::Active), 0.0);
            assert_eq!(q.get(StateId(x), StateId(0), Action::Passive), 0.0);
        }
    }

    #[test]
    fn zero_step_leaves_table() {
        let mut q = QTable3::zeros(2);
        q.set(StateId(0), StateId(1), Action::Active, 3.0);
        let before = q.clone();
        qwi_q_update(&mut q, &WhittleEstimates(vec![1.0; 2]), &sample(Action::Active), 0.0, 0.9);
        assert_eq!(q, before);
    }

    #[test]
    fn per_reference_subsidy() {
        let mut q = QTable3::zeros(2);
        let l = WhittleEstimates(vec![0.1, -0.4]);
        qwi_q_update(&mut q, &l, &sample(Action::Passive), 1.0, 0.9);
        assert!((q.get(StateId(0), StateId(1), Action::Passive) - 0.6).abs() < 1e-15);
        assert!((q.get(StateId(1), StateId(1), Action::Passive) - 0.1).abs() < 1e-15);
        let mut q = QTable3::zeros(2);
        qwi_q_update(&mut q, &l, &sample(Action::Active), 1.0, 0.9);
        assert_eq!(q.get(StateId(1), StateId(1), Action::Active), 2.0);
    }

    #[test]
    fn whittle_update_examples() {
        let mut q = QTable3::zeros(1);
        q.set(StateId(0), StateId(0), Action::Active, 1.2);
        q.set(StateId(0), StateId(0), Action::Passive, 1.0);
        let mut l = WhittleEstimates(vec![0.5f64]);
        qwi_whittle_update(&q, &mut l, 0.1);
        assert!((l.0[0] - 0.52).abs() < 1e-12);
        qwi_whittle_update(&q, &mut l, 0.0);
        assert!((l.0[0] - 0.52).abs() < 1e-12);

        let mut eq = QTable3::zeros(2);
        for x in 0..2 {
            eq.set(StateId(x), StateId(x), Action::Active, 0.7);
            eq.set(StateId(x), StateId(x), Action::Passive, 0.7);
        }
        let mut l = WhittleEstimates(vec![0.3, -0.2]);
        qwi_whittle_update(&eq, &mut l, 0.5);
        assert_eq!(l.0, vec![0.3, -0.2]);
    }
}
