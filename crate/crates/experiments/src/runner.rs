//! The `run` verb: trains the configured learner on every replication and
//! logs metrics at each checkpoint.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use whittle_core::bandit::select_top_m_lexicographic;
use whittle_core::baselines::{
    neurwin_train_instance, run_coupled_dqn, run_coupled_q, DqnAgent, DqnConfig, NeurwinConfig,
};
use whittle_core::learner::{averaged_indices, run_index_learner, IndexLearner, RunConfig};
use whittle_core::oracle::{
    bellman_relative_error, coupled_value_iteration, evaluate_policy, index_policy, misordering_fraction,
    misordering_fraction_sampled, JointSpace, PolicySpec, TieBreak,
};
use whittle_core::qwi::QwiAgent;
use whittle_core::qwinn::{QwinnAgent, QwinnConfig};
use whittle_core::{BanditInstance, Error as CoreError, JointState};

use crate::config::{Algorithm, ExperimentConfig, ValueEval};
use crate::error::{config_error, io_error, ExperimentError, Result};
use crate::instance::{build_instance, oracle_indices};
use crate::metrics::{encode_rows, write_atomic, MetricLog, MetricName, MetricRow};

/// Tolerance of the coupled value computations behind BRE.
pub const VALUE_TOL: f64 = 1e-8;

/// Name of the merged log in the output directory.
pub const METRICS_FILE: &str = "metrics.csv";

/// State-action pair count for messages; saturated counts are shown as a
/// lower bound.
pub(crate) fn pair_count(n: u128) -> String {
    if n == u128::MAX {
        format!("more than {:.1e}", n as f64)
    } else {
        n.to_string()
    }
}

/// Name of the per-replication log.
pub fn replication_file(r: usize) -> String {
    format!("metrics_rep{r:03}.csv")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Serial,
    /// One worker thread per replication, up to the available parallelism.
    Parallel,
}

#[derive(Clone, Debug)]
pub struct ReplicationOutput {
    pub rows: Vec<MetricRow>,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub rows: Vec<MetricRow>,
    pub notes: Vec<String>,
    pub metrics_path: PathBuf,
}

pub fn qwinn_config(config: &ExperimentConfig) -> QwinnConfig {
    let d = QwinnConfig::default();
    QwinnConfig {
        hidden: config.hidden.clone().unwrap_or(d.hidden),
        learning_rate: config.learning_rate,
        ..d
    }
}

pub fn dqn_config(config: &ExperimentConfig) -> DqnConfig {
    let d = DqnConfig::default();
    DqnConfig {
        hidden: config.hidden.clone().unwrap_or(d.hidden),
        learning_rate: config.learning_rate,
        ..d
    }
}

pub fn neurwin_config(config: &ExperimentConfig) -> NeurwinConfig {
    let d = NeurwinConfig::default();
    NeurwinConfig {
        hidden: config.hidden.clone().unwrap_or(d.hidden),
        learning_rate: config.learning_rate,
        sensitivity: config.neurwin_sensitivity,
        episodes_per_batch: config.neurwin_episodes,
        episode_length: config.neurwin_episode_length,
    }
}

pub fn run_config(config: &ExperimentConfig, r: usize) -> RunConfig {
    RunConfig {
        horizon: config.horizon,
        epsilon: config.epsilon,
        seed: config.replication_seed(r),
        checkpoint_every: config.checkpoint_every,
    }
}

/// Maps a joint state to the arms activated there.
pub type Chooser<'f> = &'f dyn Fn(&JointState) -> Vec<usize>;

/// Exact coupled quantities, present when the joint space fits the budget.
struct Exact {
    space: JointSpace,
    v_star: Vec<f64>,
    oracle_actions: Vec<usize>,
}

/// Checkpoint metrics of one replication.
pub struct Evaluator<'a> {
    instance: &'a BanditInstance,
    config: &'a ExperimentConfig,
    replication: usize,
    oracle: Vec<Vec<f64>>,
    exact: Option<Exact>,
    homogeneous: bool,
    value_eval: bool,
    last_value_se: f64,
    pub notes: Vec<String>,
}

impl<'a> Evaluator<'a> {
    pub fn new(instance: &'a BanditInstance, config: &'a ExperimentConfig, replication: usize) -> Result<Self> {
        let oracle = oracle_indices(instance)?;
        let mut notes = Vec::new();
        let exact = match JointSpace::with_budget(instance, config.bre_budget as u128) {
            Ok(space) => {
                let (v_star, _) = coupled_value_iteration(instance, &space, VALUE_TOL)?;
                let PolicySpec::Deterministic(oracle_actions) =
                    index_policy(&space, &oracle, instance.m_active(), TieBreak::Lexicographic)?
                else {
                    unreachable!("lexicographic index policies are deterministic")
                };
                Some(Exact {
                    space,
                    v_star: v_star.v,
                    oracle_actions,
                })
            }
            Err(CoreError::TooLarge { required, budget, .. }) => {
                notes.push(format!(
                    "SKIPPED bre: coupled space needs {} state-action pairs, budget {budget}; \
                     misordering is sampled over {} joint states",
                    pair_count(required),
                    config.misordering_samples
                ));
                None
            }
            Err(e) => return Err(e.into()),
        };
        let value_eval = match config.value_eval {
            ValueEval::Always => true,
            ValueEval::Never => false,
            ValueEval::Auto => exact.is_none(),
        };
        Ok(Evaluator {
            instance,
            config,
            replication,
            oracle,
            exact,
            homogeneous: instance.is_homogeneous(),
            value_eval,
            last_value_se: 0.0,
            notes,
        })
    }

    pub fn has_exact(&self) -> bool {
        self.exact.is_some()
    }

    pub fn oracle(&self) -> &[Vec<f64>] {
        &self.oracle
    }

    fn row(&self, step: u64, metric: MetricName, value: f64) -> MetricRow {
        MetricRow::scalar(step, self.replication, metric, value)
    }

    /// Index tables used for the policy: arm-averaged on homogeneous
    /// instances, where per-arm noise would otherwise only break ties.
    fn policy_indices(&self, indices: &[Vec<f64>]) -> Vec<Vec<f64>> {
        if self.homogeneous {
            vec![averaged_indices(indices); indices.len()]
        } else {
            indices.to_vec()
        }
    }

    fn bre_of(&self, exact: &Exact, policy: &PolicySpec) -> Result<f64> {
        let v = evaluate_policy(self.instance, &exact.space, policy, VALUE_TOL)?;
        Ok(bellman_relative_error(&v.v, &exact.v_star)?.value)
    }

    /// Rows for an index learner: index estimates, misordering, BRE and
    /// the Monte-Carlo value when enabled.
    pub fn index_rows(&mut self, step: u64, indices: &[Vec<f64>]) -> Result<Vec<MetricRow>> {
        let mut rows = Vec::new();
        if self.homogeneous {
            for (s, &v) in averaged_indices(indices).iter().enumerate() {
                rows.push(MetricRow {
                    state: Some(s),
                    ..self.row(step, MetricName::LambdaEstimate, v)
                });
            }
        } else {
            for (arm, table) in indices.iter().enumerate() {
                for (s, &v) in table.iter().enumerate() {
                    rows.push(MetricRow {
                        arm: Some(arm),
                        state: Some(s),
                        ..self.row(step, MetricName::LambdaEstimate, v)
                    });
                }
            }
        }
        let policy_indices = self.policy_indices(indices);
        let m = self.instance.m_active();
        let misordering = match &self.exact {
            Some(exact) => misordering_fraction(&exact.space, &policy_indices, &self.oracle, m)?,
            None => {
                // Same sampled states at every checkpoint.
                let mut rng = self.eval_rng(4);
                misordering_fraction_sampled(&policy_indices, &self.oracle, m, self.config.misordering_samples, &mut rng)?
            }
        };
        rows.push(self.row(step, MetricName::Misordering, misordering));
        if let Some(exact) = &self.exact {
            let policy = index_policy(&exact.space, &policy_indices, m, TieBreak::Lexicographic)?;
            rows.push(self.row(step, MetricName::Bre, self.bre_of(exact, &policy)?));
        }
        if self.value_eval {
            let (v, se) = self.rollout_value(|joint| top_m_by_index(&policy_indices, joint, m))?;
            self.last_value_se = se;
            rows.push(self.row(step, MetricName::ValueEval, v));
        }
        Ok(rows)
    }

    /// Rows for a learner with a greedy joint policy; `fallback` picks
    /// actions when the joint space is not enumerated.
    pub fn joint_rows(
        &mut self,
        step: u64,
        policy: Option<&PolicySpec>,
        fallback: Option<Chooser<'_>>,
    ) -> Result<Vec<MetricRow>> {
        let mut rows = Vec::new();
        if let (Some(exact), Some(policy)) = (&self.exact, policy) {
            let wrong = (0..exact.space.size())
                .filter(|&i| policy.action_at(i) != exact.oracle_actions[i])
                .count();
            rows.push(self.row(step, MetricName::Misordering, wrong as f64 / exact.space.size() as f64));
            rows.push(self.row(step, MetricName::Bre, self.bre_of(exact, policy)?));
        }
        if self.value_eval {
            let (v, se) = match (&self.exact, policy, fallback) {
                (Some(exact), Some(policy), _) => {
                    self.rollout_value(|joint| exact.space.actions()[policy.action_at(exact.space.encode(joint))].clone())?
                }
                (_, _, Some(f)) => self.rollout_value(f)?,
                _ => return Err(config_error("value evaluation needs a policy")),
            };
            self.last_value_se = se;
            rows.push(self.row(step, MetricName::ValueEval, v));
        }
        Ok(rows)
    }

    fn eval_rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.replication_seed(self.replication));
        rng.set_stream(stream);
        rng
    }

    /// Mean discounted return of `rollouts` seeded rollouts of
    /// `rollout_length` steps from uniformly drawn joint states. The same
    /// random stream is used at every checkpoint. Returns the mean and its
    /// standard error.
    fn rollout_value<P: Fn(&JointState) -> Vec<usize>>(&self, choose: P) -> Result<(f64, f64)> {
        let mut rng = self.eval_rng(3);
        let gamma = self.instance.discount();
        let mut returns = Vec::with_capacity(self.config.rollouts);
        for _ in 0..self.config.rollouts {
            let mut joint = self.instance.random_joint_state(&mut rng);
            let (mut total, mut discount) = (0.0, 1.0);
            for _ in 0..self.config.rollout_length {
                let chosen = choose(&joint);
                let (next, samples) = self.instance.step(&joint, &chosen, &mut rng)?;
                total += discount * samples.iter().map(|s| s.reward()).sum::<f64>();
                discount *= gamma;
                joint = next;
            }
            returns.push(total);
        }
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0).max(1.0);
        Ok((mean, (var / n).sqrt()))
    }
}

fn top_m_by_index(indices: &[Vec<f64>], joint: &JointState, m: usize) -> Vec<usize> {
    let values: Vec<f64> = joint.states().iter().enumerate().map(|(i, s)| indices[i][s.0]).collect();
    select_top_m_lexicographic(&values, m)
}

/// Routes checkpoint rows to the log; errors are parked so the learner
/// callback can abort with a core error and the original is reported.
struct Sink {
    log: MetricLog,
    rows: Vec<MetricRow>,
    failure: Option<ExperimentError>,
}

impl Sink {
    fn record(&mut self, rows: Result<Vec<MetricRow>>) -> whittle_core::Result<()> {
        let outcome = rows.and_then(|rows| {
            self.log.append(&rows)?;
            self.rows.extend(rows);
            Ok(())
        });
        outcome.map_err(|e| {
            let msg = e.to_string();
            self.failure = Some(e);
            CoreError::InvalidInput(format!("metric logging failed: {msg}"))
        })
    }

    fn finish<T>(self, outcome: whittle_core::Result<T>) -> Result<Vec<MetricRow>> {
        if let Some(e) = self.failure {
            return Err(e);
        }
        outcome?;
        Ok(self.rows)
    }
}

/// Runs replication `r` and writes its log into `dir`.
pub fn run_replication(config: &ExperimentConfig, r: usize, dir: &Path) -> Result<ReplicationOutput> {
    let instance = build_instance(config, r)?;
    let mut eval = Evaluator::new(&instance, config, r)?;
    let mut sink = Sink {
        log: MetricLog::create(&dir.join(replication_file(r)))?,
        rows: Vec::new(),
        failure: None,
    };
    let run = run_config(config, r);
    let rows = match config.algorithm {
        Algorithm::Qwi => {
            let mut agent = QwiAgent::new(&instance);
            let outcome = run_index_learner(&instance, &mut agent, &run, |step, l: &QwiAgent| {
                sink.record(eval.index_rows(step, &l.indices()))
            });
            sink.finish(outcome)?
        }
        Algorithm::Qwinn => {
            let mut agent = QwinnAgent::new(&instance, qwinn_config(config), run.seed)?;
            let outcome = run_index_learner(&instance, &mut agent, &run, |step, l: &QwinnAgent| {
                sink.record(eval.index_rows(step, &l.indices()))
            });
            sink.finish(outcome)?
        }
        Algorithm::Neurwin => {
            let outcome = neurwin_train_instance(
                &instance,
                &neurwin_config(config),
                config.horizon,
                run.seed,
                config.checkpoint_every,
                |step, tables| sink.record(eval.index_rows(step, tables)),
            );
            sink.finish(outcome)?
        }
        Algorithm::Q => {
            if !eval.has_exact() {
                return Err(config_error("tabular Q-learning needs the coupled space within bre_budget"));
            }
            let outcome = run_coupled_q(&instance, &run, |step, table| {
                sink.record(eval.joint_rows(step, Some(&table.greedy_policy()), None))
            });
            sink.finish(outcome)?
        }
        Algorithm::Dqn => {
            let space = JointSpace::with_budget(&instance, config.bre_budget as u128).ok();
            let outcome = run_coupled_dqn(&instance, &dqn_config(config), &run, |step, agent: &DqnAgent| {
                let rows = match &space {
                    Some(space) => agent
                        .greedy_policy(space)
                        .map_err(ExperimentError::from)
                        .and_then(|p| eval.joint_rows(step, Some(&p), None)),
                    None => {
                        let pick = |joint: &JointState| {
                            let q = agent.q_values(joint).expect("network input matches the instance");
                            let best = (0..q.len()).fold(0, |b, i| if q[i] > q[b] { i } else { b });
                            agent.actions()[best].clone()
                        };
                        eval.joint_rows(step, None, Some(&pick))
                    }
                };
                sink.record(rows)
            });
            sink.finish(outcome)?
        }
        Algorithm::Oracle => {
            let oracle = eval.oracle().to_vec();
            let outcome = sink.record(eval.index_rows(0, &oracle));
            sink.finish(outcome)?
        }
    };
    let mut notes = eval.notes;
    if eval.value_eval {
        notes.push(format!(
            "value_eval: {} rollouts x {} steps, standard error at the last checkpoint {:.3e}",
            config.rollouts, config.rollout_length, eval.last_value_se
        ));
    }
    Ok(ReplicationOutput { rows, notes })
}

/// Mean BRE across replications per step.
pub fn averaged_bre_rows(per_replication: &[Vec<MetricRow>]) -> Vec<MetricRow> {
    use std::collections::BTreeMap;
    let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for rows in per_replication {
        for r in rows.iter().filter(|r| r.metric == MetricName::Bre) {
            by_step.entry(r.step).or_default().push(r.value);
        }
    }
    by_step
        .into_iter()
        .filter(|(_, v)| v.len() == per_replication.len())
        .map(|(step, v)| MetricRow {
            step,
            replication: None,
            metric: MetricName::AvgBre,
            arm: None,
            state: None,
            value: whittle_core::oracle::averaged_bre(&v),
        })
        .collect()
}

/// Runs every replication, then writes the merged `metrics.csv` and
/// `run.log` into the output directory.
pub fn run(config: &ExperimentConfig, mode: Mode) -> Result<RunOutput> {
    config.validate()?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    write_atomic(&dir.join("config.toml"), config.to_toml_string().as_bytes())?;

    let outputs: Vec<ReplicationOutput> = match mode {
        Mode::Serial => (0..config.replications)
            .map(|r| run_replication(config, r, dir))
            .collect::<Result<_>>()?,
        Mode::Parallel => run_parallel(config, dir)?,
    };

    let per_rep: Vec<Vec<MetricRow>> = outputs.iter().map(|o| o.rows.clone()).collect();
    let mut rows: Vec<MetricRow> = per_rep.iter().flatten().cloned().collect();
    if config.replications > 1 {
        rows.extend(averaged_bre_rows(&per_rep));
    }
    let metrics_path = dir.join(METRICS_FILE);
    write_atomic(&metrics_path, &encode_rows(&rows, true)?)?;

    let mut notes = Vec::new();
    for (r, o) in outputs.iter().enumerate() {
        notes.extend(o.notes.iter().map(|n| format!("replication {r}: {n}")));
    }
    let mut log = String::new();
    for n in &notes {
        log.push_str(n);
        log.push('\n');
    }
    write_atomic(&dir.join("run.log"), log.as_bytes())?;
    Ok(RunOutput {
        rows,
        notes,
        metrics_path,
    })
}

fn run_parallel(config: &ExperimentConfig, dir: &Path) -> Result<Vec<ReplicationOutput>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(config.replications);
    let mut slots: Vec<Option<Result<ReplicationOutput>>> = (0..config.replications).map(|_| None).collect();
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let r = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if r >= config.replications {
                    break;
                }
                let out = run_replication(config, r, dir);
                results.lock().expect("worker panicked")[r] = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every replication ran"))
        .collect()
}
