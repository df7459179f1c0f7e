use crate::arm::ArmModel;
use crate::error::{invalid, Result};
use crate::Scalar;

/// Circular problem: both actions keep the arm in place with probability
/// `stay_prob`; otherwise the active action moves one state up and the
/// passive action one state down, modulo the state count. Rewards depend on
/// the state only.
#[derive(Clone, Debug, PartialEq)]
pub struct CircularParams {
    pub state_count: usize,
    pub stay_prob: f64,
    pub reward_vector: Vec<f64>,
}

impl CircularParams {
    /// Four states with rewards (-1, 0, 0, 1).
    pub fn small() -> Self {
        CircularParams {
            state_count: 4,
            stay_prob: 0.6,
            reward_vector: vec![-1.0, 0.0, 0.0, 1.0],
        }
    }

    /// `state_count` states; only the first (-1) and last (+1) are rewarded.
    pub fn sparse(state_count: usize) -> Self {
        let mut reward_vector = vec![0.0; state_count];
        if state_count > 0 {
            reward_vector[0] = -1.0;
            reward_vector[state_count - 1] = 1.0;
        }
        CircularParams {
            state_count,
            stay_prob: 0.6,
            reward_vector,
        }
    }

    /// The 50-state variant.
    pub fn large() -> Self {
        Self::sparse(50)
    }

    pub fn validate(&self) -> Result<()> {
        if self.state_count < 2 {
            return Err(invalid("circular arm needs at least two states"));
        }
        if !(self.stay_prob > 0.0 && self.stay_prob < 1.0) {
            return Err(invalid(format!("stay probability must lie in (0, 1), got {}", self.stay_prob)));
        }
        if self.reward_vector.len() != self.state_count {
            return Err(invalid(format!(
                "reward vector has {} entries for {} states",
                self.reward_vector.len(),
                self.state_count
            )));
        }
        Ok(())
    }
}

pub fn circular_arm<F: Scalar>(params: &CircularParams) -> Result<ArmModel<F>> {
    params.validate()?;
    let n = params.state_count;
    let stay = F::lit(params.stay_prob);
    let mut passive = vec![vec![F::zero(); n]; n];
    let mut active = vec![vec![F::zero(); n]; n];
    for s in 0..n {
        active[s][s] += stay;
        active[s][(s + 1) % n] += F::one() - stay;
        passive[s][s] += stay;
        passive[s][(s + n - 1) % n] += F::one() - stay;
    }
    let rewards: Vec<F> = params.reward_vector.iter().map(|r| F::lit(*r)).collect();
    ArmModel::new(passive, active, rewards.clone(), rewards)
}
