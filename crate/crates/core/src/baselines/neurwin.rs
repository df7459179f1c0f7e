//! NeurWIN: a network `f(s)` trained by REINFORCE so that the sigmoid policy
//! `sigma_m(f(s) - lambda)` maximizes the subsidized return.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arm::{Action, ArmModel, StateId};
use crate::bandit::BanditInstance;
use crate::error::{invalid, Result};
use crate::nn::{DenseNet, Gradients};
use crate::qwinn::normalize_state;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct NeurwinConfig {
    pub hidden: Vec<usize>,
    /// Sigmoid sensitivity `m`.
    pub sensitivity: f64,
    pub learning_rate: f64,
    pub episodes_per_batch: usize,
    pub episode_length: usize,
}

impl Default for NeurwinConfig {
    fn default() -> Self {
        NeurwinConfig {
            hidden: vec![16, 32],
            sensitivity: 1.0,
            learning_rate: 1e-3,
            episodes_per_batch: 5,
            episode_length: 50,
        }
    }
}

impl NeurwinConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sensitivity > 0.0 && self.sensitivity.is_finite()) {
            return Err(invalid("sensitivity must be positive"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning rate must be nonnegative"));
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden widths must be positive"));
        }
        Ok(())
    }
}

/// `1 / (1 + exp(-m (f - lambda)))`, evaluated without overflow.
pub fn neurwin_policy_prob<F: Scalar>(f_s: F, lambda: F, m: F) -> F {
    let z = m * (f_s - lambda);
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Index network of one arm type.
#[derive(Clone, Debug)]
pub struct NeurwinAgent<F = f64> {
    pub net: DenseNet<F>,
    pub state_count: usize,
    pub config: NeurwinConfig,
    /// Mini-batch updates applied so far.
    pub updates: u64,
}

impl<F: Scalar> NeurwinAgent<F> {
    pub fn new<R: Rng + ?Sized>(state_count: usize, config: NeurwinConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut dims = vec![1];
        dims.extend(&config.hidden);
        dims.push(1);
        Ok(NeurwinAgent {
            net: DenseNet::new(&dims, rng)?,
            state_count,
            config,
            updates: 0,
        })
    }

    /// Index estimate of every state.
    pub fn indices(&self) -> Vec<F> {
        (0..self.state_count).map(|s| neurwin_index(self, StateId(s))).collect()
    }

    fn gradient(&self, s: StateId) -> Result<Gradients<F>> {
        let input = Array2::from_elem((1, 1), normalize_state(s, self.state_count));
        let cache = self.net.forward_cached(input.view())?;
        Ok(self.net.backward(&cache, Array2::ones((1, 1))))
    }

    /// One mini-batch: draw `s0` and `s1`, fix `lambda = f(s0)`, roll the
    /// episodes from `s1` under the sigmoid policy and take one
    /// baseline-corrected REINFORCE ascent step.
    pub fn train_batch<R: Rng + ?Sized>(&mut self, arm: &ArmModel<F>, gamma: F, rng: &mut R) -> Result<()> {
        if arm.state_count() != self.state_count {
            return Err(invalid("arm does not match the agent's state space"));
        }
        let n = self.state_count;
        let s0 = StateId(rng.random_range(0..n));
        let s1 = StateId(rng.random_range(0..n));
        let f: Vec<F> = self.indices();
        let lambda = f[s0.0];
        let m = F::lit(self.config.sensitivity);
        let episodes = self.config.episodes_per_batch;

        // h_e = sum over visited s of coef[e][s] * grad f(s).
        let mut coef = vec![vec![F::zero(); n]; episodes];
        let mut returns = vec![F::zero(); episodes];
        for (e, coef_e) in coef.iter_mut().enumerate() {
            let mut s = s1;
            let mut discount = F::one();
            for _ in 0..self.config.episode_length {
                let p = neurwin_policy_prob(f[s.0], lambda, m);
                let active = F::lit(rng.random::<f64>()) < p;
                let a = Action::from_active(active);
                // d/df ln sigma = m (1 - sigma); d/df ln (1 - sigma) = -m sigma.
                coef_e[s.0] += if active { m * (F::one() - p) } else { -m * p };
                let reward = arm.reward(s, a) + if active { F::zero() } else { lambda };
                returns[e] += discount * reward;
                discount *= gamma;
                s = arm.draw_next(s, a, rng);
            }
        }
        if episodes == 0 || self.config.episode_length == 0 {
            return Ok(());
        }
        let mean = returns.iter().copied().sum::<F>() / F::from_usize_lossy(episodes);
        let rate = F::lit(self.config.learning_rate);
        let mut step = vec![F::zero(); self.net.param_count()];
        for s in 0..n {
            let w: F = coef.iter().zip(&returns).map(|(c, g)| (*g - mean) * c[s]).sum();
            if w == F::zero() {
                continue;
            }
            for (acc, g) in step.iter_mut().zip(self.gradient(StateId(s))?.flat()) {
                *acc += rate * w * g;
            }
        }
        let mut params = self.net.params_flat();
        for (p, d) in params.iter_mut().zip(step) {
            *p += d;
        }
        self.net.set_params_flat(&params)?;
        self.updates += 1;
        Ok(())
    }
}

/// Forward pass of the index network at the normalized state.
pub fn neurwin_index<F: Scalar>(agent: &NeurwinAgent<F>, s: StateId) -> F {
    let x = normalize_state(s, agent.state_count);
    agent.net.forward(&[x]).expect("network takes one input")[0]
}

/// Trains one agent on `arm` for `batches` mini-batches. `on_checkpoint`
/// sees the agent at 0, every `checkpoint_every` batches and at the end.
pub fn neurwin_train<F, C>(
    arm: &ArmModel<F>,
    config: &NeurwinConfig,
    batches: u64,
    gamma: F,
    seed: u64,
    checkpoint_every: u64,
    mut on_checkpoint: C,
) -> Result<NeurwinAgent<F>>
where
    F: Scalar,
    C: FnMut(u64, &NeurwinAgent<F>) -> Result<()>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = NeurwinAgent::new(arm.state_count(), config.clone(), &mut rng)?;
    on_checkpoint(0, &agent)?;
    for b in 1..=batches {
        agent.train_batch(arm, gamma, &mut rng)?;
        if (checkpoint_every > 0 && b % checkpoint_every == 0) || b == batches {
            on_checkpoint(b, &agent)?;
        }
    }
    Ok(agent)
}

/// Trains one agent per distinct arm model of `instance`, one mini-batch
/// per agent per step, and reports per-arm index tables.
pub fn neurwin_train_instance<F, C>(
    instance: &BanditInstance<F>,
    config: &NeurwinConfig,
    batches: u64,
    seed: u64,
    checkpoint_every: u64,
    mut on_checkpoint: C,
) -> Result<Vec<NeurwinAgent<F>>>
where
    F: Scalar,
    C: FnMut(u64, &[Vec<F>]) -> Result<()>,
{
    // Identical arms share one agent.
    let mut models: Vec<Arc<ArmModel<F>>> = Vec::new();
    let mut owner = Vec::with_capacity(instance.arm_count());
    for arm in instance.arms() {
        let k = models
            .iter()
            .position(|m| Arc::ptr_eq(m, arm) || **m == **arm)
            .unwrap_or_else(|| {
                models.push(Arc::clone(arm));
                models.len() - 1
            });
        owner.push(k);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agents = models
        .iter()
        .map(|m| NeurwinAgent::new(m.state_count(), config.clone(), &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let gamma = instance.discount();
    let report = |agents: &[NeurwinAgent<F>]| -> Vec<Vec<F>> {
        let tables: Vec<Vec<F>> = agents.iter().map(NeurwinAgent::indices).collect();
        owner.iter().map(|&k| tables[k].clone()).collect()
    };
    on_checkpoint(0, &report(&agents))?;
    for b in 1..=batches {
        for (agent, model) in agents.iter_mut().zip(&models) {
            agent.train_batch(model, gamma, &mut rng)?;
        }
        if (checkpoint_every > 0 && b % checkpoint_every == 0) || b == batches {
            on_checkpoint(b, &report(&agents))?;
        }
    }
    Ok(agents)
}
