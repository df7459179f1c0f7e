use crate::arm::ArmModel;
use crate::error::{invalid, Result};
use crate::Scalar;

/// Restart problem: the active action resets the arm to state 0; when
/// passive the arm advances with probability `x` (saturating at the top
/// state) and falls back to 0 otherwise. Passive reward in state `s` is
/// `y^(s+1)`, active reward is 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RestartParams {
    pub x: f64,
    pub y: f64,
    pub state_count: usize,
}

impl RestartParams {
    pub fn new(x: f64, y: f64, state_count: usize) -> Result<Self> {
        let p = RestartParams { x, y, state_count };
        p.validate()?;
        Ok(p)
    }

    /// Five states with `x = y = value`.
    pub fn symmetric(value: f64) -> Self {
        RestartParams {
            x: value,
            y: value,
            state_count: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x > 0.0 && self.x < 1.0) || !(self.y > 0.0 && self.y < 1.0) {
            return Err(invalid(format!(
                "restart parameters must lie in (0, 1): x = {}, y = {}",
                self.x, self.y
            )));
        }
        if self.state_count < 2 {
            return Err(invalid("restart arm needs at least two states"));
        }
        Ok(())
    }
}

impl Default for RestartParams {
    fn default() -> Self {
        Self::symmetric(0.9)
    }
}

pub fn restart_arm<F: Scalar>(params: &RestartParams) -> Result<ArmModel<F>> {
    params.validate()?;
    let n = params.state_count;
    let x = F::lit(params.x);
    let mut passive = vec![vec![F::zero(); n]; n];
    let mut active = vec![vec![F::zero(); n]; n];
    for s in 0..n {
        passive[s][0] += F::one() - x;
        passive[s][(s + 1).min(n - 1)] += x;
        active[s][0] = F::one();
    }
    let passive_reward = (0..n).map(|s| F::lit(params.y.powi(s as i32 + 1))).collect();
    ArmModel::new(passive, active, passive_reward, vec![F::zero(); n])
}
