//! The `oracle` verb: exact indices and, when the coupled space is small
//! enough, the optimal joint value function.

use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use whittle_core::envs::DeadlineState;
use whittle_core::oracle::{coupled_value_iteration, JointSpace};
use whittle_core::Error as CoreError;

use crate::config::ExperimentConfig;
use crate::error::{io_error, Result};
use crate::instance::{build_instance, deadline_arm_params, oracle_indices};
use crate::metrics::write_atomic;
use crate::runner::{pair_count, VALUE_TOL};

/// One state's index. `arm` is empty on homogeneous instances, whose arms
/// share one table; `t`, `b` and `closed_form` are filled for deadline arms
/// with `t >= 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub arm: Option<usize>,
    pub state: usize,
    pub t: Option<usize>,
    pub b: Option<usize>,
    pub bisection: f64,
    pub closed_form: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointValueRow {
    pub joint_index: usize,
    /// Arm states separated by spaces.
    pub states: String,
    pub value: f64,
}

#[derive(Clone, Debug)]
pub struct OracleExport {
    pub indices: Vec<OracleRow>,
    pub values: Option<Vec<JointValueRow>>,
    pub notes: Vec<String>,
}

pub fn oracle_rows(config: &ExperimentConfig) -> Result<OracleExport> {
    config.validate()?;
    let instance = build_instance(config, 0)?;
    let tables = oracle_indices(&instance)?;
    let deadline = deadline_arm_params(config);
    let homogeneous = instance.is_homogeneous();
    let arms = if homogeneous { 1 } else { instance.arm_count() };
    let mut indices = Vec::new();
    for (arm, table) in tables.iter().take(arms).enumerate() {
        for (s, &bisection) in table.iter().enumerate() {
            let mut row = OracleRow {
                arm: (!homogeneous).then_some(arm),
                state: s,
                t: None,
                b: None,
                bisection,
                closed_form: None,
            };
            if let Some(params) = &deadline {
                let p = &params[arm];
                let DeadlineState { t, b } = p.decode(whittle_core::StateId(s));
                row.t = Some(t);
                row.b = Some(b);
                if t >= 1 {
                    row.closed_form = Some(p.closed_form_index(DeadlineState { t, b }, config.gamma));
                }
            }
            indices.push(row);
        }
    }

    let mut notes = Vec::new();
    let values = match JointSpace::with_budget(&instance, config.bre_budget as u128) {
        Ok(space) => {
            let (v, _) = coupled_value_iteration(&instance, &space, VALUE_TOL)?;
            Some(
                v.v.iter()
                    .enumerate()
                    .map(|(i, &value)| JointValueRow {
                        joint_index: i,
                        states: space
                            .decode(i)
                            .states()
                            .iter()
                            .map(|s| s.0.to_string())
                            .collect::<Vec<_>>()
                            .join(" "),
                        value,
                    })
                    .collect(),
            )
        }
        Err(CoreError::TooLarge { required, budget, .. }) => {
            notes.push(format!(
                "SKIPPED joint values: {} state-action pairs exceed budget {budget}",
                pair_count(required)
            ));
            None
        }
        Err(e) => return Err(e.into()),
    };
    Ok(OracleExport { indices, values, notes })
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| e.into_error()).map_err(io_error("<buffer>"))
}

/// Writes `oracle_indices.csv` and, when available, `oracle_values.csv`.
pub fn export_oracle(config: &ExperimentConfig) -> Result<(OracleExport, Vec<PathBuf>)> {
    let export = oracle_rows(config)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let mut written = vec![dir.join("oracle_indices.csv")];
    write_atomic(&written[0], &csv_bytes(&export.indices)?)?;
    if let Some(values) = &export.values {
        let path = dir.join("oracle_values.csv");
        write_atomic(&path, &csv_bytes(values)?)?;
        written.push(path);
    }
    Ok((export, written))
}
