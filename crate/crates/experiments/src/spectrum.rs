//! The `spectrum` verb: trains a small QWINN network and reports the
//! spectrum of its linearized target-network iteration.

use std::fs;

use serde::Serialize;
use whittle_core::learner::{averaged_indices, run_index_learner, IndexLearner};
use whittle_core::qwinn::QwinnAgent;
use whittle_core::stability::{contraction_spectrum, BellmanErrorPoint, SpectrumReport, DEFAULT_STEP};

use crate::config::{Algorithm, ExperimentConfig};
use crate::error::{config_error, io_error, Result};
use crate::instance::build_instance;
use crate::metrics::write_atomic;
use crate::runner::{qwinn_config, run_config};

#[derive(Clone, Debug)]
pub struct SpectrumOutput {
    pub report: SpectrumReport,
    /// Arm-averaged index estimates at the end of training.
    pub indices: Vec<f64>,
}

/// Trains replication 0 and evaluates the spectrum at arm
/// `spectrum_arm`'s main network on `spectrum_rows` replay rows.
pub fn compute_spectrum(config: &ExperimentConfig) -> Result<SpectrumOutput> {
    config.validate()?;
    if config.algorithm != Algorithm::Qwinn {
        return Err(config_error("the spectrum verb needs algorithm = \"qwinn\""));
    }
    let instance = build_instance(config, 0)?;
    let run = run_config(config, 0);
    let mut agent = QwinnAgent::new(&instance, qwinn_config(config), run.seed)?;
    run_index_learner(&instance, &mut agent, &run, |_, _| Ok(()))?;
    let point = BellmanErrorPoint::from_qwinn_arm(
        &agent.arms[config.spectrum_arm],
        config.gamma,
        config.spectrum_rows,
        run.seed,
    )?;
    let report = contraction_spectrum(&point, DEFAULT_STEP)?;
    Ok(SpectrumOutput {
        report,
        indices: averaged_indices(&agent.indices()),
    })
}

#[derive(Serialize)]
struct ModulusRow {
    index: usize,
    modulus: f64,
}

#[derive(Serialize)]
struct EigenRow {
    index: usize,
    eigenvalue: f64,
}

/// Writes `spectrum.csv` (empty when the Hessian is not positive definite)
/// and `hessian_eigenvalues.csv`.
pub fn export_spectrum(config: &ExperimentConfig) -> Result<SpectrumOutput> {
    let out = compute_spectrum(config)?;
    let dir = &config.output_dir;
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (index, &modulus) in out.report.moduli.iter().enumerate() {
        w.serialize(ModulusRow { index, modulus })?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error()).map_err(io_error("<buffer>"))?;
    write_atomic(&dir.join("spectrum.csv"), &bytes)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for (index, &eigenvalue) in out.report.hessian_eigenvalues.iter().enumerate() {
        w.serialize(EigenRow { index, eigenvalue })?;
    }
    let bytes = w.into_inner().map_err(|e| e.into_error()).map_err(io_error("<buffer>"))?;
    write_atomic(&dir.join("hessian_eigenvalues.csv"), &bytes)?;
    Ok(out)
}
