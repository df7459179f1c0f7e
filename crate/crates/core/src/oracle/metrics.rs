//! Policy-quality metrics against the exact oracles.

use rand::Rng;

use crate::bandit::select_top_m_lexicographic;
use crate::error::{invalid, Result};
use crate::oracle::coupled::JointSpace;
use crate::Scalar;

/// States whose optimal value is smaller than this in magnitude are left
/// out of the relative error.
pub const BRE_ZERO_GUARD: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BreReport {
    pub value: f64,
    /// States dropped by the zero guard.
    pub excluded: usize,
}

/// Mean over joint states of `|V_pi - V*| / |V*|`.
pub fn bellman_relative_error<F: Scalar>(v_pi: &[F], v_star: &[F]) -> Result<BreReport> {
    if v_pi.len() != v_star.len() {
        return Err(invalid(format!(
            "value functions cover {} and {} states",
            v_pi.len(),
            v_star.len()
        )));
    }
    let mut total = 0.0;
    let mut used = 0usize;
    for (p, s) in v_pi.iter().zip(v_star) {
        let (p, s) = (p.as_f64(), s.as_f64());
        if s.abs() < BRE_ZERO_GUARD {
            continue;
        }
        total += (p - s).abs() / s.abs();
        used += 1;
    }
    let excluded = v_star.len() - used;
    Ok(BreReport {
        value: if used == 0 { 0.0 } else { total / used as f64 },
        excluded,
    })
}

/// Mean of per-instance relative errors.
pub fn averaged_bre(per_instance: &[f64]) -> f64 {
    if per_instance.is_empty() {
        return 0.0;
    }
    per_instance.iter().sum::<f64>() / per_instance.len() as f64
}

fn check_tables<F: Scalar>(space: &JointSpace, learned: &[Vec<F>], oracle: &[Vec<F>]) -> Result<()> {
    if learned.len() != space.arm_count() || oracle.len() != space.arm_count() {
        return Err(invalid("one index table per arm required"));
    }
    for (a, b) in learned.iter().zip(oracle) {
        if a.len() != b.len() {
            return Err(invalid("learned and oracle index tables differ in size"));
        }
    }
    Ok(())
}

fn disagree<F: Scalar>(states: &[usize], learned: &[Vec<F>], oracle: &[Vec<F>], m: usize, a: &mut [F], b: &mut [F]) -> bool {
    for (i, &s) in states.iter().enumerate() {
        a[i] = learned[i][s];
        b[i] = oracle[i][s];
    }
    select_top_m_lexicographic(a, m) != select_top_m_lexicographic(b, m)
}

/// Fraction of joint states where the top-M arms under `learned` differ
/// from those under `oracle`. Both sides break ties towards lower arm
/// indices.
pub fn misordering_fraction<F: Scalar>(space: &JointSpace, learned: &[Vec<F>], oracle: &[Vec<F>], m: usize) -> Result<f64> {
    check_tables(space, learned, oracle)?;
    let n = space.arm_count();
    let (mut states, mut a, mut b) = (vec![0; n], vec![F::zero(); n], vec![F::zero(); n]);
    let mut wrong = 0usize;
    for idx in 0..space.size() {
        space.decode_into(idx, &mut states);
        if disagree(&states, learned, oracle, m, &mut a, &mut b) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / space.size() as f64)
}

/// Monte-Carlo estimate of [`misordering_fraction`] over uniformly drawn
/// joint states, for spaces too large to enumerate.
pub fn misordering_fraction_sampled<F: Scalar, R: Rng + ?Sized>(
    learned: &[Vec<F>],
    oracle: &[Vec<F>],
    m: usize,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if learned.len() != oracle.len() || learned.iter().zip(oracle).any(|(a, b)| a.len() != b.len()) {
        return Err(invalid("learned and oracle index tables differ in shape"));
    }
    if samples == 0 {
        return Err(invalid("at least one sample required"));
    }
    let n = learned.len();
    let (mut states, mut a, mut b) = (vec![0; n], vec![F::zero(); n], vec![F::zero(); n]);
    let mut wrong = 0usize;
    for _ in 0..samples {
        for (s, table) in states.iter_mut().zip(learned) {
            *s = rng.random_range(0..table.len());
        }
        if disagree(&states, learned, oracle, m, &mut a, &mut b) {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / samples as f64)
}
