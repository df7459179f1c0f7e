//! Exact dynamic programming on the joint (coupled) state space with the
//! hard constraint that exactly M arms are active.

use crate::arm::{Action, JointState, StateId};
use crate::bandit::BanditInstance;
use crate::error::{invalid, Error, Result};
use crate::Scalar;

/// Default cap on `joint states x action subsets`.
pub const DEFAULT_BUDGET: u128 = 20_000_000;

/// Sweep cap for joint value iteration.
pub const MAX_JOINT_SWEEPS: usize = 100_000;

/// Binomial coefficient, saturating.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// All `m`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, m: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if m > n {
        return out;
    }
    let mut current: Vec<usize> = (0..m).collect();
    loop {
        out.push(current.clone());
        // Rightmost position that can still advance.
        let Some(i) = (0..m).rev().find(|&i| current[i] < n - m + i) else {
            break;
        };
        current[i] += 1;
        for j in i + 1..m {
            current[j] = current[j - 1] + 1;
        }
    }
    out
}

/// Mixed-radix enumeration of joint states (arm 0 most significant) and the
/// lexicographic list of M-subset actions.
#[derive(Clone, Debug, PartialEq)]
pub struct JointSpace {
    radices: Vec<usize>,
    strides: Vec<usize>,
    size: usize,
    actions: Vec<Vec<usize>>,
}

impl JointSpace {
    pub fn new<F: Scalar>(instance: &BanditInstance<F>) -> Result<Self> {
        Self::with_budget(instance, DEFAULT_BUDGET)
    }

    /// Fails with [`Error::TooLarge`] when `|S| * C(N, M)` exceeds `budget`.
    pub fn with_budget<F: Scalar>(instance: &BanditInstance<F>, budget: u128) -> Result<Self> {
        let radices: Vec<usize> = instance.arms().iter().map(|a| a.state_count()).collect();
        let size = radices
            .iter()
            .try_fold(1u128, |acc, &r| acc.checked_mul(r as u128))
            .unwrap_or(u128::MAX);
        let action_count = binomial(radices.len(), instance.m_active());
        let required = size.saturating_mul(action_count);
        if required > budget {
            return Err(Error::TooLarge {
                what: "coupled state-action space; use a smaller instance".into(),
                required,
                budget,
            });
        }
        let size = size as usize;
        let mut strides = vec![1; radices.len()];
        for i in (0..radices.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * radices[i + 1];
        }
        Ok(JointSpace {
            actions: subsets(radices.len(), instance.m_active()),
            radices,
            strides,
            size,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn arm_count(&self) -> usize {
        self.radices.len()
    }

    pub fn actions(&self) -> &[Vec<usize>] {
        &self.actions
    }

    pub fn action_id(&self, chosen: &[usize]) -> Option<usize> {
        let mut sorted = chosen.to_vec();
        sorted.sort_unstable();
        self.actions.binary_search(&sorted).ok()
    }

    pub fn encode(&self, joint: &JointState) -> usize {
        joint
            .states()
            .iter()
            .zip(&self.strides)
            .map(|(s, st)| s.0 * st)
            .sum()
    }

    pub fn decode(&self, index: usize) -> JointState {
        JointState(
            self.radices
                .iter()
                .zip(&self.strides)
                .map(|(&r, &st)| StateId((index / st) % r))
                .collect(),
        )
    }

    /// Writes the states of joint index `index` into `out`.
    pub fn decode_into(&self, index: usize, out: &mut [usize]) {
        for ((o, &r), &st) in out.iter_mut().zip(&self.radices).zip(&self.strides) {
            *o = (index / st) % r;
        }
    }
}

/// Value function on the joint state space, indexed by [`JointSpace`].
#[derive(Clone, Debug, PartialEq)]
pub struct ValueFunctionCoupled<F = f64> {
    pub v: Vec<F>,
    pub sweeps: usize,
}

/// Stationary policy on the joint state space. Action ids index
/// [`JointSpace::actions`].
#[derive(Clone, Debug, PartialEq)]
pub enum PolicySpec<F = f64> {
    Deterministic(Vec<usize>),
    /// Per joint state, `(action id, probability)` pairs.
    Stochastic(Vec<Vec<(usize, F)>>),
}

impl<F: Scalar> PolicySpec<F> {
    fn check(&self, space: &JointSpace) -> Result<()> {
        let len = match self {
            PolicySpec::Deterministic(a) => a.len(),
            PolicySpec::Stochastic(a) => a.len(),
        };
        if len != space.size() {
            return Err(invalid(format!("policy covers {len} of {} joint states", space.size())));
        }
        let n_actions = space.actions().len();
        let bad = match self {
            PolicySpec::Deterministic(a) => a.iter().any(|&id| id >= n_actions),
            PolicySpec::Stochastic(d) => d.iter().any(|row| {
                let total: F = row.iter().map(|(_, p)| *p).sum();
                row.iter().any(|&(id, p)| id >= n_actions || p < F::zero())
                    || (total - F::one()).abs() > F::lit(1e-9).max(F::epsilon() * F::lit(64.0))
            }),
        };
        if bad {
            return Err(invalid("policy prescribes an unknown action or an invalid distribution"));
        }
        Ok(())
    }

    /// Chosen arm set for a joint state (the most likely one for stochastic
    /// policies).
    pub fn action_at(&self, joint_index: usize) -> usize {
        match self {
            PolicySpec::Deterministic(a) => a[joint_index],
            PolicySpec::Stochastic(d) => {
                d[joint_index]
                    .iter()
                    .fold((0, F::neg_infinity()), |best, &(id, p)| if p > best.1 { (id, p) } else { best })
                    .0
            }
        }
    }
}

/// Tie handling when turning per-arm indices into a joint policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TieBreak {
    /// Lowest arm indices win ties.
    Lexicographic,
    /// Uniform over all tied top-M sets, as the simulator does.
    Uniform,
}

/// The policy that activates the M arms with the largest per-arm index
/// values `indices[arm][state]`.
pub fn index_policy<F: Scalar>(space: &JointSpace, indices: &[Vec<F>], m: usize, ties: TieBreak) -> Result<PolicySpec<F>> {
    if indices.len() != space.arm_count() {
        return Err(invalid(format!("{} index tables for {} arms", indices.len(), space.arm_count())));
    }
    for (table, &r) in indices.iter().zip(&space.radices) {
        if table.len() != r {
            return Err(invalid(format!("index table has {} entries for {r} states", table.len())));
        }
    }
    let n = space.arm_count();
    let mut states = vec![0; n];
    let mut values = vec![F::zero(); n];
    match ties {
        TieBreak::Lexicographic => {
            let mut out = Vec::with_capacity(space.size());
            for idx in 0..space.size() {
                space.decode_into(idx, &mut states);
                for i in 0..n {
                    values[i] = indices[i][states[i]];
                }
                let chosen = crate::bandit::select_top_m_lexicographic(&values, m);
                out.push(space.action_id(&chosen).expect("valid subset"));
            }
            Ok(PolicySpec::Deterministic(out))
        }
        TieBreak::Uniform => {
            let mut out = Vec::with_capacity(space.size());
            for idx in 0..space.size() {
                space.decode_into(idx, &mut states);
                for i in 0..n {
                    values[i] = indices[i][states[i]];
                }
                let mut sorted = values.clone();
                sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
                let threshold = sorted[m - 1];
                let valid: Vec<usize> = space
                    .actions()
                    .iter()
                    .enumerate()
                    .filter(|(_, set)| {
                        set.iter().all(|&i| values[i] >= threshold)
                            && (0..n).all(|i| values[i] <= threshold || set.contains(&i))
                    })
                    .map(|(id, _)| id)
                    .collect();
                let p = F::one() / F::from_usize_lossy(valid.len());
                out.push(valid.into_iter().map(|id| (id, p)).collect());
            }
            Ok(PolicySpec::Stochastic(out))
        }
    }
}

/// Per-arm kernels and rewards gathered once for the sweeps.
struct CoupledModel<'a, F> {
    instance: &'a BanditInstance<F>,
    space: &'a JointSpace,
    /// rewards[idx][action id]
    rewards: Vec<Vec<F>>,
}

impl<'a, F: Scalar> CoupledModel<'a, F> {
    fn new(instance: &'a BanditInstance<F>, space: &'a JointSpace) -> Self {
        let n = space.arm_count();
        let mut states = vec![0; n];
        let mut rewards = Vec::with_capacity(space.size());
        for idx in 0..space.size() {
            space.decode_into(idx, &mut states);
            let base: F = (0..n)
                .map(|i| instance.arm(i).reward(StateId(states[i]), Action::Passive))
                .sum();
            let row = space
                .actions()
                .iter()
                .map(|set| {
                    set.iter().fold(base, |acc, &i| {
                        let s = StateId(states[i]);
                        let arm = instance.arm(i);
                        acc + arm.reward(s, Action::Active) - arm.reward(s, Action::Passive)
                    })
                })
                .collect();
            rewards.push(row);
        }
        CoupledModel {
            instance,
            space,
            rewards,
        }
    }

    /// Expected next value under the action set `set`, for every joint state.
    fn expected_next(&self, v: &[F], set: &[usize], scratch: &mut Vec<F>) -> Vec<F> {
        let space = self.space;
        let mut cur = v.to_vec();
        scratch.resize(space.size(), F::zero());
        for k in 0..space.arm_count() {
            let a = Action::from_active(set.contains(&k));
            let arm = self.instance.arm(k);
            let radix = space.radices[k];
            let stride = space.strides[k];
            let block = radix * stride;
            for outer in (0..space.size()).step_by(block) {
                for inner in 0..stride {
                    let base = outer + inner;
                    for s in 0..radix {
                        let row = arm.transition(StateId(s), a);
                        let mut acc = F::zero();
                        for &(j, _) in arm.support(StateId(s), a) {
                            acc += row[j] * cur[base + j * stride];
                        }
                        scratch[base + s * stride] = acc;
                    }
                }
            }
            std::mem::swap(&mut cur, scratch);
        }
        cur
    }

    /// `q[idx][action id]` for the value vector `v`.
    fn q_values(&self, v: &[F], scratch: &mut Vec<F>) -> Vec<Vec<F>> {
        let gamma = self.instance.discount();
        let evs: Vec<Vec<F>> = self
            .space
            .actions()
            .iter()
            .map(|set| self.expected_next(v, set, scratch))
            .collect();
        (0..self.space.size())
            .map(|idx| {
                self.rewards[idx]
                    .iter()
                    .zip(&evs)
                    .map(|(r, ev)| *r + gamma * ev[idx])
                    .collect()
            })
            .collect()
    }
}

fn sup_diff<F: Scalar>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |m, (x, y)| m.max((*x - *y).abs()))
}

fn check_tol<F: Scalar>(tol: F) -> Result<()> {
    if tol > F::zero() {
        Ok(())
    } else {
        Err(invalid(format!("tolerance must be positive, got {tol}")))
    }
}

/// Optimal value function of the hard-constrained joint problem and a
/// maximizing action rule (lowest action id among exact maximizers).
pub fn coupled_value_iteration<F: Scalar>(
    instance: &BanditInstance<F>,
    space: &JointSpace,
    tol: F,
) -> Result<(ValueFunctionCoupled<F>, PolicySpec<F>)> {
    check_tol(tol)?;
    let model = CoupledModel::new(instance, space);
    let gamma = instance.discount();
    let threshold = tol * (F::one() - gamma) / gamma;
    let mut v = vec![F::zero(); space.size()];
    let mut scratch = Vec::new();
    let mut residual = F::infinity();
    for sweep in 1..=MAX_JOINT_SWEEPS {
        let q = model.q_values(&v, &mut scratch);
        let next: Vec<F> = q
            .iter()
            .map(|row| row.iter().copied().fold(F::neg_infinity(), F::max))
            .collect();
        residual = sup_diff(&next, &v);
        v = next;
        if residual < threshold {
            let q = model.q_values(&v, &mut scratch);
            let mut greedy = Vec::with_capacity(q.len());
            let mut values = Vec::with_capacity(q.len());
            for row in &q {
                let (best, val) = row
                    .iter()
                    .enumerate()
                    .fold((0, F::neg_infinity()), |b, (id, &x)| if x > b.1 { (id, x) } else { b });
                greedy.push(best);
                values.push(val);
            }
            return Ok((
                ValueFunctionCoupled {
                    v: values,
                    sweeps: sweep + 1,
                },
                PolicySpec::Deterministic(greedy),
            ));
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_JOINT_SWEEPS,
        residual: residual.as_f64(),
    })
}

/// Value of a fixed policy, by iterating its Bellman operator.
pub fn evaluate_policy<F: Scalar>(
    instance: &BanditInstance<F>,
    space: &JointSpace,
    policy: &PolicySpec<F>,
    tol: F,
) -> Result<ValueFunctionCoupled<F>> {
    check_tol(tol)?;
    policy.check(space)?;
    let model = CoupledModel::new(instance, space);
    let gamma = instance.discount();
    let threshold = tol * (F::one() - gamma) / gamma;
    let mut v = vec![F::zero(); space.size()];
    let mut scratch = Vec::new();
    // Only the actions the policy uses need expectations.
    let mut used = vec![false; space.actions().len()];
    match policy {
        PolicySpec::Deterministic(a) => a.iter().for_each(|&id| used[id] = true),
        PolicySpec::Stochastic(d) => d.iter().flatten().for_each(|&(id, _)| used[id] = true),
    }
    let mut residual = F::infinity();
    for sweep in 1..=MAX_JOINT_SWEEPS {
        let evs: Vec<Option<Vec<F>>> = space
            .actions()
            .iter()
            .zip(&used)
            .map(|(set, &u)| u.then(|| model.expected_next(&v, set, &mut scratch)))
            .collect();
        let backup = |idx: usize, id: usize| -> F {
            model.rewards[idx][id] + gamma * evs[id].as_ref().expect("used action")[idx]
        };
        let next: Vec<F> = (0..space.size())
            .map(|idx| match policy {
                PolicySpec::Deterministic(a) => backup(idx, a[idx]),
                PolicySpec::Stochastic(d) => d[idx].iter().map(|&(id, p)| p * backup(idx, id)).sum(),
            })
            .collect();
        residual = sup_diff(&next, &v);
        v = next;
        if residual < threshold {
            return Ok(ValueFunctionCoupled { v, sweeps: sweep });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_JOINT_SWEEPS,
        residual: residual.as_f64(),
    })
}

/// For every joint state, the action ids whose one-step backup under
/// `v_star` is within `tol` of the best.
pub fn optimal_action_sets<F: Scalar>(
    instance: &BanditInstance<F>,
    space: &JointSpace,
    v_star: &ValueFunctionCoupled<F>,
    tol: F,
) -> Vec<Vec<usize>> {
    let model = CoupledModel::new(instance, space);
    let q = model.q_values(&v_star.v, &mut Vec::new());
    q.iter()
        .map(|row| {
            let best = row.iter().copied().fold(F::neg_infinity(), F::max);
            row.iter()
                .enumerate()
                .filter(|(_, &x)| x >= best - tol)
                .map(|(id, _)| id)
                .collect()
        })
        .collect()
}

/// Fraction of joint states where `policy` picks an action outside the
/// optimal set.
pub fn suboptimal_action_fraction<F: Scalar>(policy: &PolicySpec<F>, optimal: &[Vec<usize>]) -> f64 {
    if optimal.is_empty() {
        return 0.0;
    }
    let wrong = optimal
        .iter()
        .enumerate()
        .filter(|(idx, set)| !set.contains(&policy.action_at(*idx)))
        .count();
    wrong as f64 / optimal.len() as f64
}
