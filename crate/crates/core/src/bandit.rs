//! Joint bandit: N arms, M activations per step, and the action-selection
//! helpers shared by every learner.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::arm::{Action, ArmModel, JointState, StateId, TransitionSample};
use crate::error::{invalid, Error, Result};
use crate::Scalar;

/// N arms of which exactly `m_active` are activated at each step.
#[derive(Clone, Debug)]
pub struct BanditInstance<F = f64> {
    arms: Vec<Arc<ArmModel<F>>>,
    m_active: usize,
    discount: F,
}

impl<F: Scalar> BanditInstance<F> {
    pub fn new(arms: Vec<Arc<ArmModel<F>>>, m_active: usize, discount: F) -> Result<Self> {
        if m_active == 0 {
            return Err(invalid("M must be positive"));
        }
        if m_active >= arms.len() {
            return Err(invalid(format!(
                "M must be smaller than N (M = {m_active}, N = {})",
                arms.len()
            )));
        }
        if !(discount > F::zero() && discount < F::one()) {
            return Err(invalid(format!("discount must lie in (0, 1), got {discount}")));
        }
        Ok(BanditInstance {
            arms,
            m_active,
            discount,
        })
    }

    /// N copies of the same arm.
    pub fn homogeneous(arm: ArmModel<F>, n: usize, m_active: usize, discount: F) -> Result<Self> {
        let arm = Arc::new(arm);
        Self::new(vec![arm; n], m_active, discount)
    }

    pub fn arms(&self) -> &[Arc<ArmModel<F>>] {
        &self.arms
    }

    pub fn arm(&self, i: usize) -> &ArmModel<F> {
        &self.arms[i]
    }

    pub fn arm_count(&self) -> usize {
        self.arms.len()
    }

    pub fn m_active(&self) -> usize {
        self.m_active
    }

    pub fn discount(&self) -> F {
        self.discount
    }

    /// True when every arm has the same model.
    pub fn is_homogeneous(&self) -> bool {
        let first = &self.arms[0];
        self.arms
            .iter()
            .all(|a| Arc::ptr_eq(a, first) || **a == **first)
    }

    /// Draws every arm's state uniformly at random.
    pub fn random_joint_state<R: Rng + ?Sized>(&self, rng: &mut R) -> JointState {
        JointState(
            self.arms
                .iter()
                .map(|a| StateId(rng.random_range(0..a.state_count())))
                .collect(),
        )
    }

    pub fn check_joint(&self, joint: &JointState) -> Result<()> {
        if joint.len() != self.arms.len() {
            return Err(invalid(format!(
                "joint state has {} entries for {} arms",
                joint.len(),
                self.arms.len()
            )));
        }
        for (arm, s) in self.arms.iter().zip(joint.states()) {
            arm.check_state(*s)?;
        }
        Ok(())
    }

    /// Steps every arm once: arms listed in `chosen` are active, the rest
    /// passive. Exactly `M` arms must be chosen.
    pub fn step<R: Rng + ?Sized>(
        &self,
        joint: &JointState,
        chosen: &[usize],
        rng: &mut R,
    ) -> Result<(JointState, Vec<TransitionSample<F>>)> {
        self.check_joint(joint)?;
        let active = self.activation_mask(chosen)?;
        let mut next = Vec::with_capacity(self.arms.len());
        let mut samples = Vec::with_capacity(self.arms.len());
        for (i, (arm, &s)) in self.arms.iter().zip(joint.states()).enumerate() {
            let a = Action::from_active(active[i]);
            let sample = TransitionSample {
                arm: i,
                state: s,
                action: a,
                passive_reward: arm.reward(s, Action::Passive),
                active_reward: arm.reward(s, Action::Active),
                next_state: arm.draw_next(s, a, rng),
            };
            next.push(sample.next_state);
            samples.push(sample);
        }
        Ok((JointState(next), samples))
    }

    /// Validates a chosen set and returns the per-arm activation mask.
    pub fn activation_mask(&self, chosen: &[usize]) -> Result<Vec<bool>> {
        if chosen.len() != self.m_active {
            return Err(Error::Constraint(format!(
                "exactly {} arms must be active, {} chosen",
                self.m_active,
                chosen.len()
            )));
        }
        let mut mask = vec![false; self.arms.len()];
        for &i in chosen {
            if i >= mask.len() {
                return Err(invalid(format!("arm index {i} out of range")));
            }
            if mask[i] {
                return Err(Error::Constraint(format!("arm {i} chosen twice")));
            }
            mask[i] = true;
        }
        Ok(mask)
    }
}

/// Indices of the `m` largest values, sorted ascending. Ties are broken
/// uniformly at random.
pub fn select_top_m<F: Scalar, R: Rng + ?Sized>(values: &[F], m: usize, rng: &mut R) -> Result<Vec<usize>> {
    if m > values.len() {
        return Err(invalid(format!("cannot select {m} of {} arms", values.len())));
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.shuffle(rng);
    // Stable sort keeps the random order within tied groups.
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
    order.truncate(m);
    order.sort_unstable();
    Ok(order)
}

/// Indices of the `m` largest values with ties broken towards the lower arm
/// index. Used wherever a reproducible, noise-free choice is required.
pub fn select_top_m_lexicographic<F: Scalar>(values: &[F], m: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal));
    order.truncate(m.min(values.len()));
    order.sort_unstable();
    order
}

/// With probability `1 - epsilon` the greedy top-`m` set, otherwise a
/// uniformly random `m`-subset.
pub fn epsilon_greedy_top_m<F: Scalar, R: Rng + ?Sized>(
    values: &[F],
    m: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(invalid(format!("epsilon must lie in [0, 1], got {epsilon}")));
    }
    if m > values.len() {
        return Err(invalid(format!("cannot select {m} of {} arms", values.len())));
    }
    if rng.random::<f64>() < epsilon {
        let mut chosen = rand::seq::index::sample(rng, values.len(), m).into_vec();
        chosen.sort_unstable();
        Ok(chosen)
    } else {
        select_top_m(values, m, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn top_m_unique_max_and_full_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_top_m(&[0.1, 0.9, 0.5], 1, &mut rng).unwrap(), vec![1]);
        assert_eq!(select_top_m(&[3.0, 2.0, 1.0], 3, &mut rng).unwrap(), vec![0, 1, 2]);
        assert!(select_top_m(&[3.0, 2.0], 3, &mut rng).is_err());
    }

    #[test]
    fn top_m_ties_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 10_000;
        let zeros = (0..draws)
            .filter(|_| select_top_m(&[0.7, 0.7, 0.1], 1, &mut rng).unwrap() == vec![0])
            .count();
        let freq = zeros as f64 / draws as f64;
        assert!((freq - 0.5).abs() < 0.02, "tie frequency {freq}");
    }

    #[test]
    fn epsilon_zero_is_greedy() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let values = [0.3, 0.1, 0.9, 0.5];
        for _ in 0..100 {
            assert_eq!(epsilon_greedy_top_m(&values, 2, 0.0, &mut rng).unwrap(), vec![2, 3]);
        }
        assert!(epsilon_greedy_top_m(&values, 2, 1.5, &mut rng).is_err());
        assert!(epsilon_greedy_top_m(&values, 2, -0.1, &mut rng).is_err());
    }

    #[test]
    fn epsilon_one_is_uniform_over_subsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            let set = epsilon_greedy_top_m(&[4.0, 3.0, 2.0, 1.0], 2, 1.0, &mut rng).unwrap();
            *counts.entry(set).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        for (set, c) in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 1.0 / 6.0).abs() < 0.01, "{set:?}: {f}");
        }
    }

    #[test]
    fn epsilon_one_ignores_values() {
        // Same seed, two different value vectors: identical draws.
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let x = epsilon_greedy_top_m(&[1.0, 2.0, 3.0, 4.0], 2, 1.0, &mut a).unwrap();
            let y = epsilon_greedy_top_m(&[9.0, -2.0, 0.0, 4.0], 2, 1.0, &mut b).unwrap();
            assert_eq!(x, y);
        }
    }

    fn absorbing_instance() -> BanditInstance {
        let eye = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let arm = ArmModel::new(eye.clone(), eye, vec![0.0; 2], vec![1.0; 2]).unwrap();
        BanditInstance::homogeneous(arm, 2, 1, 0.9).unwrap()
    }

    #[test]
    fn step_enforces_exact_activation_count() {
        let inst = absorbing_instance();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let joint = JointState(vec![StateId(0), StateId(1)]);
        let (next, samples) = inst.step(&joint, &[0], &mut rng).unwrap();
        assert_eq!(next, joint);
        assert_eq!(samples[0].action, Action::Active);
        assert_eq!(samples[1].action, Action::Passive);
        assert!(matches!(inst.step(&joint, &[0, 1], &mut rng), Err(Error::Constraint(_))));
        assert!(matches!(inst.step(&joint, &[], &mut rng), Err(Error::Constraint(_))));
    }

    #[test]
    fn instance_validation() {
        let eye = vec![vec![1.0]];
        let arm = ArmModel::new(eye.clone(), eye, vec![0.0], vec![1.0]).unwrap();
        assert!(BanditInstance::homogeneous(arm.clone(), 1, 1, 0.9).is_err());
        assert!(BanditInstance::homogeneous(arm.clone(), 2, 1, 1.0).is_err());
        assert!(BanditInstance::homogeneous(arm, 2, 0, 0.9).is_err());
    }
}
