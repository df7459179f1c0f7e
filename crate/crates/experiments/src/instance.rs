//! Bandit instances described by a config, and their oracle indices.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use whittle_core::envs::{
    circular_arm, deadline_arm, restart_arm, CircularParams, DeadlineParams, RestartParams,
    HETEROGENEOUS_DEADLINE_COSTS, HETEROGENEOUS_RESTART_VALUES,
};
use whittle_core::oracle::whittle_indices;
use whittle_core::{ArmModel, BanditInstance};

use crate::config::{DeadlineGrid, Environment, ExperimentConfig};
use crate::error::Result;

/// Bisection tolerance for oracle indices.
pub const ORACLE_TOL: f64 = 1e-9;

fn deadline_params(config: &ExperimentConfig, cost: f64) -> DeadlineParams {
    match config.deadline_grid {
        DeadlineGrid::Standard => DeadlineParams::standard(cost),
        DeadlineGrid::Large => DeadlineParams::large(cost),
    }
}

/// Deadline parameters of every arm, when the family is deadline.
pub fn deadline_arm_params(config: &ExperimentConfig) -> Option<Vec<DeadlineParams>> {
    match config.environment {
        Environment::Deadline => Some(vec![deadline_params(config, config.deadline_cost); config.arms]),
        Environment::DeadlineHeterogeneous => {
            let group = config.arms / HETEROGENEOUS_DEADLINE_COSTS.len();
            Some(
                HETEROGENEOUS_DEADLINE_COSTS
                    .iter()
                    .flat_map(|&c| std::iter::repeat_n(deadline_params(config, c), group))
                    .collect(),
            )
        }
        _ => None,
    }
}

/// The instance of replication `r`. Only heterogeneous restart instances
/// depend on `r`: their arm parameters are drawn from the replication seed.
pub fn build_instance(config: &ExperimentConfig, r: usize) -> Result<BanditInstance> {
    let arms: Vec<Arc<ArmModel>> = match config.environment {
        Environment::Restart => {
            let p = RestartParams::new(config.restart_x, config.restart_y, config.states.unwrap_or(5))?;
            std::iter::repeat_n(Arc::new(restart_arm(&p)?), config.arms).collect()
        }
        Environment::RestartHeterogeneous => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.replication_seed(r));
            rng.set_stream(2);
            let states = config.states.unwrap_or(5);
            (0..config.arms)
                .map(|_| {
                    let v = HETEROGENEOUS_RESTART_VALUES[rng.random_range(0..HETEROGENEOUS_RESTART_VALUES.len())];
                    Ok(Arc::new(restart_arm(&RestartParams::new(v, v, states)?)?))
                })
                .collect::<Result<_>>()?
        }
        Environment::Circular => {
            let params = match config.states {
                None | Some(4) => CircularParams::small(),
                Some(n) => CircularParams::sparse(n),
            };
            std::iter::repeat_n(Arc::new(circular_arm(&params)?), config.arms).collect()
        }
        Environment::Deadline | Environment::DeadlineHeterogeneous => {
            let params = deadline_arm_params(config).expect("deadline family");
            // Share one model per distinct parameter set.
            let mut models: Vec<(DeadlineParams, Arc<ArmModel>)> = Vec::new();
            let mut arms = Vec::with_capacity(params.len());
            for p in params {
                if let Some((_, m)) = models.iter().find(|(q, _)| *q == p) {
                    arms.push(Arc::clone(m));
                } else {
                    let m = Arc::new(deadline_arm(&p)?);
                    models.push((p, Arc::clone(&m)));
                    arms.push(m);
                }
            }
            arms
        }
    };
    Ok(BanditInstance::new(arms, config.active, config.gamma)?)
}

/// Bisection index tables `[arm][state]`, solved once per distinct model.
pub fn oracle_indices(instance: &BanditInstance) -> Result<Vec<Vec<f64>>> {
    let mut solved: Vec<(&Arc<ArmModel>, Vec<f64>)> = Vec::new();
    let mut out = Vec::with_capacity(instance.arm_count());
    for arm in instance.arms() {
        if let Some((_, table)) = solved.iter().find(|(m, _)| Arc::ptr_eq(m, arm) || ***m == **arm) {
            out.push(table.clone());
            continue;
        }
        let table = whittle_indices(arm, instance.discount(), ORACLE_TOL)?;
        out.push(table.clone());
        solved.push((arm, table));
    }
    Ok(out)
}
