use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use whittle_core::baselines::{
    coupled_q_learning_step, neurwin_index, neurwin_policy_prob, neurwin_train, run_coupled_dqn, run_coupled_q,
    CoupledQTable, DqnConfig, NeurwinAgent, NeurwinConfig,
};
use whittle_core::envs::{restart_arm, RestartParams};
use whittle_core::learner::RunConfig;
use whittle_core::oracle::{bellman_relative_error, coupled_value_iteration, evaluate_policy, whittle_indices, JointSpace};
use whittle_core::{ArmModel, BanditInstance, StateId};

fn restart_instance(n: usize) -> BanditInstance {
    let arm = restart_arm(&RestartParams::default()).unwrap();
    BanditInstance::homogeneous(arm, n, 1, 0.9).unwrap()
}

fn policy_bre(inst: &BanditInstance, space: &JointSpace, policy: &whittle_core::oracle::PolicySpec) -> f64 {
    let (v_star, _) = coupled_value_iteration(inst, space, 1e-10).unwrap();
    let v_pi = evaluate_policy(inst, space, policy, 1e-10).unwrap();
    bellman_relative_error(&v_pi.v, &v_star.v).unwrap().value
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    order
}

#[test]
fn q_step_size_is_inverse_visit_count() {
    let inst = restart_instance(2);
    let mut table = CoupledQTable::<f64>::new(JointSpace::new(&inst).unwrap());
    coupled_q_learning_step(&mut table, 3, 1, 2.0, 4, 0.0).unwrap();
    assert_eq!(table.get(3, 1), 2.0);
    // With gamma = 0 the estimate is the running mean of the rewards.
    let rewards = [2.0, 5.0, -1.0, 0.5];
    for &r in &rewards[1..] {
        coupled_q_learning_step(&mut table, 3, 1, r, 0, 0.0).unwrap();
    }
    let mean = rewards.iter().sum::<f64>() / 4.0;
    assert!((table.get(3, 1) - mean).abs() < 1e-12);
    assert_eq!(table.visits(3, 1), 4);
    assert!(coupled_q_learning_step(&mut table, 99, 0, 0.0, 0, 0.9).is_err());
}

#[test]
fn q_visit_counts_sum_to_steps() {
    let inst = restart_instance(3);
    let run = RunConfig {
        horizon: 5_000,
        epsilon: 0.3,
        seed: 4,
        checkpoint_every: 1_000,
    };
    let mut seen = Vec::new();
    let table = run_coupled_q(&inst, &run, |step, t| {
        seen.push((step, t.total_visits()));
        Ok(())
    })
    .unwrap();
    assert!(seen.iter().all(|&(step, total)| step == total));
    assert_eq!(table.total_visits(), 5_000);
}

#[test]
fn q_learning_converges_on_two_restart_arms() {
    let inst = restart_instance(2);
    let run = RunConfig {
        horizon: 10_000_000,
        epsilon: 1.0,
        seed: 0,
        checkpoint_every: 0,
    };
    let table = run_coupled_q(&inst, &run, |_, _| Ok(())).unwrap();
    let bre = policy_bre(&inst, table.space(), &table.greedy_policy());
    assert!(bre < 0.05, "BRE {bre}");
}

#[test]
fn dqn_target_syncs_every_period() {
    let inst = restart_instance(3);
    let run = RunConfig {
        horizon: 300,
        epsilon: 1.0,
        seed: 2,
        checkpoint_every: 1,
    };
    let config = DqnConfig {
        hidden: vec![8, 8],
        ..DqnConfig::default()
    };
    run_coupled_dqn(&inst, &config, &run, |step, agent| {
        let synced = agent.main.params_flat() == agent.target.params_flat();
        if step % 50 == 0 {
            assert!(synced, "step {step}");
        } else if step > 129 {
            assert!(!synced, "step {step}");
        }
        Ok(())
    })
    .unwrap();
}

#[test]
fn dqn_reruns_are_identical() {
    let inst = restart_instance(3);
    let run = RunConfig {
        horizon: 400,
        epsilon: 0.5,
        seed: 8,
        checkpoint_every: 0,
    };
    let config = DqnConfig {
        hidden: vec![8],
        ..DqnConfig::default()
    };
    let a = run_coupled_dqn(&inst, &config, &run, |_, _| Ok(())).unwrap();
    let b = run_coupled_dqn(&inst, &config, &run, |_, _| Ok(())).unwrap();
    assert_eq!(a.main.params_flat(), b.main.params_flat());
}

// Matched budget of one million steps on the five-arm restart instance.
#[test]
fn dqn_beats_q_learning_at_matched_budget() {
    let inst = restart_instance(5);
    let space = JointSpace::new(&inst).unwrap();
    let run = RunConfig {
        horizon: 1_000_000,
        epsilon: 1.0,
        seed: 0,
        checkpoint_every: 0,
    };
    let table = run_coupled_q(&inst, &run, |_, _| Ok(())).unwrap();
    let agent = run_coupled_dqn(&inst, &DqnConfig::default(), &run, |_, _| Ok(())).unwrap();
    let q_bre = policy_bre(&inst, &space, &table.greedy_policy());
    let dqn_bre = policy_bre(&inst, &space, &agent.greedy_policy(&space).unwrap());
    assert!(dqn_bre < q_bre, "DQN {dqn_bre}, Q-learning {q_bre}");
}

#[test]
fn sigmoid_examples() {
    assert_eq!(neurwin_policy_prob(0.3, 0.3, 1.0), 0.5);
    let p: f64 = neurwin_policy_prob(1.5, 0.5, 1.0);
    assert!((p - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
    assert!((p - 0.7311).abs() < 1e-4);
    assert!(neurwin_policy_prob(0.1, 0.0, 1e4) > 1.0 - 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]
    #[test]
    fn sigmoid_stays_inside_unit_interval(f in -15.0f64..15.0, l in -15.0f64..15.0, m in 0.01f64..1.0) {
        let p = neurwin_policy_prob(f, l, m);
        prop_assert!(p > 0.0 && p < 1.0);
        // Complement symmetry.
        let q = neurwin_policy_prob(l, f, m);
        prop_assert!((p + q - 1.0).abs() < 1e-12);
    }
}

#[test]
fn zero_network_indexes_everything_at_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut agent = NeurwinAgent::<f64>::new(5, NeurwinConfig::default(), &mut rng).unwrap();
    agent.net.set_params_flat(&vec![0.0; agent.net.param_count()]).unwrap();
    assert!(agent.indices().iter().all(|&f| f == 0.0));
    let copy = agent.clone();
    for s in 0..5 {
        assert_eq!(neurwin_index(&agent, StateId(s)), neurwin_index(&copy, StateId(s)));
    }
}

// Zero rewards and a zero network give lambda = 0 and equal returns, so the
// baseline cancels every term.
#[test]
fn equal_returns_leave_parameters_unchanged() {
    let eye = vec![vec![0.5, 0.5], vec![0.5, 0.5]];
    let arm = ArmModel::new(eye.clone(), eye, vec![0.0; 2], vec![0.0; 2]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut agent = NeurwinAgent::<f64>::new(2, NeurwinConfig::default(), &mut rng).unwrap();
    agent.net.set_params_flat(&vec![0.0; agent.net.param_count()]).unwrap();
    for _ in 0..20 {
        agent.train_batch(&arm, 0.9, &mut rng).unwrap();
    }
    assert!(agent.net.params_flat().iter().all(|&p| p == 0.0));
    assert_eq!(agent.updates, 20);
}

#[test]
fn neurwin_orders_restart_states() {
    let arm = restart_arm::<f64>(&RestartParams::default()).unwrap();
    let oracle = whittle_indices(&arm, 0.9, 1e-9).unwrap();
    for seed in 0..3 {
        let agent = neurwin_train(&arm, &NeurwinConfig::default(), 20_000, 0.9, seed, 0, |_, _| Ok(())).unwrap();
        let learned = agent.indices();
        assert_eq!(argsort(&learned), argsort(&oracle), "seed {seed}: {learned:?}");
    }
}

#[test]
fn neurwin_training_is_deterministic() {
    let arm = restart_arm::<f64>(&RestartParams::default()).unwrap();
    let a = neurwin_train(&arm, &NeurwinConfig::default(), 300, 0.9, 5, 0, |_, _| Ok(())).unwrap();
    let b = neurwin_train(&arm, &NeurwinConfig::default(), 300, 0.9, 5, 0, |_, _| Ok(())).unwrap();
    assert_eq!(a.indices(), b.indices());
}
