use crate::arm::{ArmModel, StateId};
use crate::error::{invalid, Result};
use crate::Scalar;

/// Deadline scheduling arm. A state is (remaining deadline `t`, remaining
/// workload `b`); `(0, 0)` is the empty slot. While `t > 1` the deadline
/// counts down and an active step removes one unit of work. Once `t <= 1`
/// the slot is refilled with a state drawn uniformly over the whole
/// `[0, t_max] x [0, b_max]` grid. Missing the deadline with work left costs
/// `penalty_coeff * (remaining)^2`; every activation of a busy slot earns
/// `1 - cost`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DeadlineParams {
    pub t_max: usize,
    pub b_max: usize,
    pub cost: f64,
    pub penalty_coeff: f64,
}

impl DeadlineParams {
    /// `T in [0, 12]`, `B in [0, 9]`: 130 states.
    pub fn standard(cost: f64) -> Self {
        DeadlineParams {
            t_max: 12,
            b_max: 9,
            cost,
            penalty_coeff: 0.2,
        }
    }

    /// `T in [0, 17]`, `B in [0, 15]`.
    pub fn large(cost: f64) -> Self {
        DeadlineParams {
            t_max: 17,
            b_max: 15,
            cost,
            penalty_coeff: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_max < 1 {
            return Err(invalid("deadline bound must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.cost) {
            return Err(invalid(format!("activation cost must lie in [0, 1], got {}", self.cost)));
        }
        if !self.penalty_coeff.is_finite() || self.penalty_coeff < 0.0 {
            return Err(invalid("penalty coefficient must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn state_count(&self) -> usize {
        (self.t_max + 1) * (self.b_max + 1)
    }

    pub fn encode(&self, state: DeadlineState) -> StateId {
        StateId(state.t * (self.b_max + 1) + state.b)
    }

    pub fn decode(&self, id: StateId) -> DeadlineState {
        DeadlineState {
            t: id.0 / (self.b_max + 1),
            b: id.0 % (self.b_max + 1),
        }
    }

    /// Missed-deadline penalty for `remaining` units of unfinished work.
    pub fn penalty(&self, remaining: usize) -> f64 {
        self.penalty_coeff * (remaining * remaining) as f64
    }

    pub fn reward(&self, state: DeadlineState, active: bool) -> f64 {
        let a = usize::from(active);
        let gain = (1.0 - self.cost) * a as f64;
        match (state.t, state.b) {
            (_, 0) | (0, _) => 0.0,
            (1, b) => gain - self.penalty(b - a),
            _ => gain,
        }
    }

    /// Known closed-form Whittle index of state `(t, b)`.
    pub fn closed_form_index(&self, state: DeadlineState, gamma: f64) -> f64 {
        let DeadlineState { t, b } = state;
        if b == 0 {
            0.0
        } else if b < t {
            1.0 - self.cost
        } else {
            let scale = gamma.powi(t as i32 - 1);
            scale * (self.penalty(b + 1 - t) - self.penalty(b - t)) + 1.0 - self.cost
        }
    }
}

/// Structured deadline state; learners only see the flat id.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DeadlineState {
    pub t: usize,
    pub b: usize,
}

pub fn deadline_arm<F: Scalar>(params: &DeadlineParams) -> Result<ArmModel<F>> {
    params.validate()?;
    let n = params.state_count();
    let uniform = F::one() / F::from_usize_lossy(n);
    let mut kernels = [vec![vec![F::zero(); n]; n], vec![vec![F::zero(); n]; n]];
    let mut rewards = [vec![F::zero(); n], vec![F::zero(); n]];
    for id in 0..n {
        let st = params.decode(StateId(id));
        for a in 0..2 {
            if st.t > 1 {
                let next = DeadlineState {
                    t: st.t - 1,
                    b: st.b.saturating_sub(a),
                };
                kernels[a][id][params.encode(next).0] = F::one();
            } else {
                kernels[a][id].iter_mut().for_each(|p| *p = uniform);
            }
            rewards[a][id] = F::lit(params.reward(st, a == 1));
        }
    }
    let [passive, active] = kernels;
    let [passive_reward, active_reward] = rewards;
    ArmModel::new(passive, active, passive_reward, active_reward)
}

/// Closed-form Whittle index for the standard penalty `0.2 (.)^2`.
pub fn deadline_closed_form_index(t: usize, b: usize, cost: f64, gamma: f64) -> f64 {
    let params = DeadlineParams {
        t_max: t.max(1),
        b_max: b,
        cost,
        penalty_coeff: 0.2,
    };
    params.closed_form_index(DeadlineState { t, b }, gamma)
}
