//! Single-arm Markov model and the samples drawn from it.

use std::fmt;

use rand::Rng;

use crate::error::{invalid, Result};
use crate::Scalar;

/// Index into an arm's state space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct StateId(pub usize);

impl StateId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Binary arm action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Passive = 0,
    Active = 1,
}

impl Action {
    pub const BOTH: [Action; 2] = [Action::Passive, Action::Active];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn from_active(active: bool) -> Self {
        if active {
            Action::Active
        } else {
            Action::Passive
        }
    }

    /// 0 for passive, 1 for active, as a scalar multiplier.
    #[inline]
    pub fn flag<F: Scalar>(self) -> F {
        match self {
            Action::Passive => F::zero(),
            Action::Active => F::one(),
        }
    }
}

impl TryFrom<usize> for Action {
    type Error = crate::Error;

    fn try_from(value: usize) -> Result<Self> {
        match value {
            0 => Ok(Action::Passive),
            1 => Ok(Action::Active),
            other => Err(invalid(format!("action flag must be 0 or 1, got {other}"))),
        }
    }
}

/// One observed arm transition. Both action rewards at `state` are recorded
/// because the Whittle-index updates consume them separately.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionSample<F = f64> {
    pub arm: usize,
    pub state: StateId,
    pub action: Action,
    pub passive_reward: F,
    pub active_reward: F,
    pub next_state: StateId,
}

impl<F: Scalar> TransitionSample<F> {
    /// Reward actually collected for the taken action.
    pub fn reward(&self) -> F {
        match self.action {
            Action::Passive => self.passive_reward,
            Action::Active => self.active_reward,
        }
    }
}

/// Finite-state arm: one transition kernel and one deterministic reward
/// vector per action.
#[derive(Clone, Debug, PartialEq)]
pub struct ArmModel<F = f64> {
    state_count: usize,
    // kernels[a][s * n + j] = p(j | s, a)
    kernels: [Vec<F>; 2],
    rewards: [Vec<F>; 2],
    // Sparse cumulative support per (a, s), used for sampling.
    support: [Vec<Vec<(usize, F)>>; 2],
}

impl<F: Scalar> ArmModel<F> {
    /// Builds an arm from dense row-stochastic kernels (`passive[s][j]`,
    /// `active[s][j]`) and per-state rewards.
    pub fn new(
        passive: Vec<Vec<F>>,
        active: Vec<Vec<F>>,
        passive_reward: Vec<F>,
        active_reward: Vec<F>,
    ) -> Result<Self> {
        let n = passive.len();
        if n == 0 {
            return Err(invalid("arm must have at least one state"));
        }
        if active.len() != n || passive_reward.len() != n || active_reward.len() != n {
            return Err(invalid(format!(
                "inconsistent arm dimensions: passive {} active {} rewards {}/{}",
                n,
                active.len(),
                passive_reward.len(),
                active_reward.len()
            )));
        }
        let tol = F::lit(1e-12).max(F::epsilon() * F::lit(64.0));
        let mut kernels = [Vec::with_capacity(n * n), Vec::with_capacity(n * n)];
        for (a, rows) in [passive, active].into_iter().enumerate() {
            for (s, row) in rows.into_iter().enumerate() {
                if row.len() != n {
                    return Err(invalid(format!("kernel row ({s}, {a}) has length {}", row.len())));
                }
                if row.iter().any(|p| !p.is_finite() || *p < F::zero()) {
                    return Err(invalid(format!("kernel row ({s}, {a}) has a negative or non-finite entry")));
                }
                let total: F = row.iter().copied().sum();
                if (total - F::one()).abs() > tol {
                    return Err(invalid(format!("kernel row ({s}, {a}) sums to {total}")));
                }
                kernels[a].extend(row);
            }
        }
        for r in passive_reward.iter().chain(active_reward.iter()) {
            if !r.is_finite() {
                return Err(invalid("rewards must be finite"));
            }
        }
        let support = [Self::build_support(&kernels[0], n), Self::build_support(&kernels[1], n)];
        Ok(ArmModel {
            state_count: n,
            kernels,
            rewards: [passive_reward, active_reward],
            support,
        })
    }

    fn build_support(kernel: &[F], n: usize) -> Vec<Vec<(usize, F)>> {
        kernel
            .chunks(n)
            .map(|row| {
                let mut acc = F::zero();
                row.iter()
                    .enumerate()
                    .filter(|(_, p)| **p > F::zero())
                    .map(|(j, p)| {
                        acc += *p;
                        (j, acc)
                    })
                    .collect()
            })
            .collect()
    }

    #[inline]
    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn check_state(&self, s: StateId) -> Result<()> {
        if s.0 < self.state_count {
            Ok(())
        } else {
            Err(invalid(format!("state {} out of range for arm with {} states", s.0, self.state_count)))
        }
    }

    /// Transition row `p(. | s, a)`.
    #[inline]
    pub fn transition(&self, s: StateId, a: Action) -> &[F] {
        let n = self.state_count;
        &self.kernels[a.index()][s.0 * n..(s.0 + 1) * n]
    }

    /// Next states with nonzero probability, with cumulative probabilities.
    #[inline]
    pub fn support(&self, s: StateId, a: Action) -> &[(usize, F)] {
        &self.support[a.index()][s.0]
    }

    #[inline]
    pub fn reward(&self, s: StateId, a: Action) -> F {
        self.rewards[a.index()][s.0]
    }

    pub fn rewards(&self, a: Action) -> &[F] {
        &self.rewards[a.index()]
    }

    /// Largest absolute reward over all states and actions.
    pub fn max_abs_reward(&self) -> F {
        self.rewards
            .iter()
            .flatten()
            .fold(F::zero(), |m, r| m.max(r.abs()))
    }

    /// Draws one transition from `(s, a)`.
    pub fn sample_transition<R: Rng + ?Sized>(
        &self,
        arm: usize,
        s: StateId,
        a: Action,
        rng: &mut R,
    ) -> Result<TransitionSample<F>> {
        self.check_state(s)?;
        Ok(TransitionSample {
            arm,
            state: s,
            action: a,
            passive_reward: self.reward(s, Action::Passive),
            active_reward: self.reward(s, Action::Active),
            next_state: self.draw_next(s, a, rng),
        })
    }

    /// Draws a successor of a state already known to be valid.
    pub(crate) fn draw_next<R: Rng + ?Sized>(&self, s: StateId, a: Action, rng: &mut R) -> StateId {
        let support = self.support(s, a);
        let u = F::lit(rng.random::<f64>());
        // Scan; rows are short except for reset-style kernels.
        for &(j, cum) in support {
            if u < cum {
                return StateId(j);
            }
        }
        // Rounding can leave the cumulative sum slightly below one.
        StateId(support.last().expect("row has mass").0)
    }
}

/// State of every arm in the bandit.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct JointState(pub Vec<StateId>);

impl JointState {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn states(&self) -> &[StateId] {
        &self.0
    }
}
