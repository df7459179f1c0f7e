//! Local stability of the target-network iteration: finite-difference
//! derivatives of the Bellman error `E(theta, tau)` and the spectrum of
//! `-(d2E/dtheta2)^-1 d2E/(dtheta dtau)` at a parameter point.
//!
//! Double precision only; second differences in single precision are
//! dominated by round-off.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arm::{Action, StateId, TransitionSample};
use crate::error::{invalid, Error, Result};
use crate::nn::DenseNet;
use crate::qwinn::{network_input, QwinnArm};

/// Largest parameter count accepted by the Hessian routines.
pub const MAX_HESSIAN_PARAMS: usize = 200;

/// Default finite-difference step.
pub const DEFAULT_STEP: f64 = 1e-4;

/// A scalar function of two parameter vectors of equal length.
pub trait TwoPointObjective {
    fn param_count(&self) -> usize;
    fn eval(&self, theta: &[f64], tau: &[f64]) -> Result<f64>;
}

/// One row of the evaluation batch: a transition, a reference state and
/// that state's index estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BellmanRow {
    pub sample: TransitionSample<f64>,
    pub reference: StateId,
    pub lambda: f64,
}

/// Bellman error of a (state, reference state) Q-network on a fixed batch.
#[derive(Clone, Debug)]
pub struct BellmanErrorPoint {
    pub dims: Vec<usize>,
    pub theta: Vec<f64>,
    pub tau: Vec<f64>,
    pub rows: Vec<BellmanRow>,
    pub state_count: usize,
    pub gamma: f64,
}

impl BellmanErrorPoint {
    pub fn new(
        dims: Vec<usize>,
        theta: Vec<f64>,
        tau: Vec<f64>,
        rows: Vec<BellmanRow>,
        state_count: usize,
        gamma: f64,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(invalid("evaluation batch is empty"));
        }
        if dims.first() != Some(&2) || dims.last() != Some(&2) {
            return Err(invalid("network must map (state, reference) to two action values"));
        }
        let net = DenseNet::<f64>::zeros(&dims)?;
        if theta.len() != net.param_count() || tau.len() != net.param_count() {
            return Err(invalid("parameter vectors do not match the network"));
        }
        Ok(BellmanErrorPoint {
            dims,
            theta,
            tau,
            rows,
            state_count,
            gamma,
        })
    }

    /// Point `(theta*, theta*)` at a trained arm's main network, with
    /// `size` rows drawn from its replay memory and reference states drawn
    /// uniformly, all from a generator seeded with `seed`.
    pub fn from_qwinn_arm(arm: &QwinnArm<f64>, gamma: f64, size: usize, seed: u64) -> Result<Self> {
        let stored = arm.memory.items();
        if stored.is_empty() {
            return Err(invalid("replay memory is empty"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..size)
            .map(|_| {
                let sample = stored[rng.random_range(0..stored.len())];
                let reference = StateId(rng.random_range(0..arm.state_count));
                BellmanRow {
                    sample,
                    reference,
                    lambda: arm.lambda.get(reference),
                }
            })
            .collect();
        let theta = arm.main.params_flat();
        Self::new(arm.main.dims().to_vec(), theta.clone(), theta, rows, arm.state_count, gamma)
    }

    fn inputs(&self, state: impl Fn(&BellmanRow) -> StateId) -> Array2<f64> {
        let mut m = Array2::zeros((self.rows.len(), 2));
        for (i, r) in self.rows.iter().enumerate() {
            let [a, b] = network_input(state(r), r.reference, self.state_count);
            m[[i, 0]] = a;
            m[[i, 1]] = b;
        }
        m
    }
}

impl TwoPointObjective for BellmanErrorPoint {
    fn param_count(&self) -> usize {
        self.theta.len()
    }

    /// Mean over the batch of
    /// `(Q_theta^x(s, a) - (1 - a)(r0 + lambda) - a r1 - gamma max_v Q_tau^x(s', v))^2`.
    fn eval(&self, theta: &[f64], tau: &[f64]) -> Result<f64> {
        let mut main = DenseNet::zeros(&self.dims)?;
        main.set_params_flat(theta)?;
        let mut target = DenseNet::zeros(&self.dims)?;
        target.set_params_flat(tau)?;
        let q = main.forward_batch(self.inputs(|r| r.sample.state).view())?;
        let q_next = target.forward_batch(self.inputs(|r| r.sample.next_state).view())?;
        let total: f64 = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let t = &r.sample;
                let immediate = match t.action {
                    Action::Passive => t.passive_reward + r.lambda,
                    Action::Active => t.active_reward,
                };
                let y = immediate + self.gamma * q_next[[i, 0]].max(q_next[[i, 1]]);
                let d = q[[i, t.action.index()]] - y;
                d * d
            })
            .sum();
        Ok(total / self.rows.len() as f64)
    }
}

/// Bellman error at explicit parameter vectors.
pub fn bellman_error(point: &BellmanErrorPoint, theta: &[f64], tau: &[f64]) -> Result<f64> {
    point.eval(theta, tau)
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("finite-difference step must be positive, got {h}")))
    }
}

fn check_budget(p: usize) -> Result<()> {
    if p > MAX_HESSIAN_PARAMS {
        return Err(Error::TooLarge {
            what: "finite-difference Hessian".into(),
            required: p as u128,
            budget: MAX_HESSIAN_PARAMS as u128,
        });
    }
    Ok(())
}

fn shifted(base: &[f64], moves: &[(usize, f64)]) -> Vec<f64> {
    let mut v = base.to_vec();
    for &(i, d) in moves {
        v[i] += d;
    }
    v
}

/// Central-difference gradient in the first argument.
pub fn fd_grad1<O: TwoPointObjective>(obj: &O, theta: &[f64], tau: &[f64], h: f64) -> Result<Vec<f64>> {
    check_step(h)?;
    (0..obj.param_count())
        .map(|i| {
            let up = obj.eval(&shifted(theta, &[(i, h)]), tau)?;
            let down = obj.eval(&shifted(theta, &[(i, -h)]), tau)?;
            Ok((up - down) / (2.0 * h))
        })
        .collect()
}

/// Central-difference Hessian in the first argument, symmetrized.
pub fn fd_hess11<O: TwoPointObjective>(obj: &O, theta: &[f64], tau: &[f64], h: f64) -> Result<DMatrix<f64>> {
    check_step(h)?;
    let p = obj.param_count();
    check_budget(p)?;
    let f0 = obj.eval(theta, tau)?;
    let mut single = vec![(0.0, 0.0); p];
    for (i, s) in single.iter_mut().enumerate() {
        *s = (
            obj.eval(&shifted(theta, &[(i, h)]), tau)?,
            obj.eval(&shifted(theta, &[(i, -h)]), tau)?,
        );
    }
    let mut hess = DMatrix::zeros(p, p);
    for i in 0..p {
        hess[(i, i)] = (single[i].0 - 2.0 * f0 + single[i].1) / (h * h);
        for j in 0..i {
            let pp = obj.eval(&shifted(theta, &[(i, h), (j, h)]), tau)?;
            let pm = obj.eval(&shifted(theta, &[(i, h), (j, -h)]), tau)?;
            let mp = obj.eval(&shifted(theta, &[(i, -h), (j, h)]), tau)?;
            let mm = obj.eval(&shifted(theta, &[(i, -h), (j, -h)]), tau)?;
            let v = (pp - pm - mp + mm) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    Ok(hess)
}

/// Central-difference mixed derivative: entry `(i, j)` is
/// `d2E / (dtheta_i dtau_j)`.
pub fn fd_mixed21<O: TwoPointObjective>(obj: &O, theta: &[f64], tau: &[f64], h: f64) -> Result<DMatrix<f64>> {
    check_step(h)?;
    let p = obj.param_count();
    check_budget(p)?;
    let mut mixed = DMatrix::zeros(p, p);
    for j in 0..p {
        let tau_up = shifted(tau, &[(j, h)]);
        let tau_down = shifted(tau, &[(j, -h)]);
        for i in 0..p {
            let theta_up = shifted(theta, &[(i, h)]);
            let theta_down = shifted(theta, &[(i, -h)]);
            let pp = obj.eval(&theta_up, &tau_up)?;
            let pm = obj.eval(&theta_up, &tau_down)?;
            let mp = obj.eval(&theta_down, &tau_up)?;
            let mm = obj.eval(&theta_down, &tau_down)?;
            mixed[(i, j)] = (pp - pm - mp + mm) / (4.0 * h * h);
        }
    }
    Ok(mixed)
}

/// Outcome of [`contraction_spectrum`].
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    /// Eigenvalue moduli of `-(H)^-1 M`, sorted descending. Empty when the
    /// Hessian is not positive definite.
    pub moduli: Vec<f64>,
    pub max_modulus: Option<f64>,
    /// Eigenvalues of the Hessian `H`, ascending.
    pub hessian_eigenvalues: Vec<f64>,
    pub positive_definite: bool,
    pub step: f64,
    pub param_count: usize,
}

impl SpectrumReport {
    pub fn min_hessian_eigenvalue(&self) -> f64 {
        self.hessian_eigenvalues.first().copied().unwrap_or(f64::NAN)
    }

    /// True when the Hessian is positive definite and every modulus is
    /// below one.
    pub fn inside_unit_disc(&self) -> bool {
        self.positive_definite && self.max_modulus.is_some_and(|m| m < 1.0)
    }
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let mut ev: Vec<f64> = SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Moduli of the eigenvalues of a general square matrix, descending.
pub fn eigenvalue_moduli(m: &DMatrix<f64>) -> Vec<f64> {
    let mut moduli: Vec<f64> = m.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    moduli
}

/// Spectrum of the linearized target iteration `-(H)^-1 M` with
/// `H = d2E/dtheta2` and `M = d2E/(dtheta dtau)` at `(theta, tau)`.
/// The Hessian counts as positive definite when its smallest eigenvalue
/// exceeds `pd_tol` times its largest; otherwise the spectrum is left empty.
pub fn contraction_spectrum_at<O: TwoPointObjective>(
    obj: &O,
    theta: &[f64],
    tau: &[f64],
    h: f64,
    pd_tol: f64,
) -> Result<SpectrumReport> {
    let hess = fd_hess11(obj, theta, tau, h)?;
    let hessian_eigenvalues = symmetric_eigenvalues(&hess);
    let largest = hessian_eigenvalues.last().copied().unwrap_or(0.0);
    let smallest = hessian_eigenvalues.first().copied().unwrap_or(0.0);
    let positive_definite = largest > 0.0 && smallest > pd_tol * largest;
    let mut report = SpectrumReport {
        moduli: Vec::new(),
        max_modulus: None,
        hessian_eigenvalues,
        positive_definite,
        step: h,
        param_count: obj.param_count(),
    };
    if !positive_definite {
        return Ok(report);
    }
    let mixed = fd_mixed21(obj, theta, tau, h)?;
    let chol = hess
        .cholesky()
        .ok_or_else(|| Error::InvalidInput("Hessian failed Cholesky factorization".into()))?;
    let jac = -chol.solve(&mixed);
    report.moduli = eigenvalue_moduli(&jac);
    report.max_modulus = report.moduli.first().copied();
    Ok(report)
}

/// [`contraction_spectrum_at`] at the point's own `(theta, tau)` with a
/// relative definiteness threshold of `1e-10`.
pub fn contraction_spectrum(point: &BellmanErrorPoint, h: f64) -> Result<SpectrumReport> {
    contraction_spectrum_at(point, &point.theta, &point.tau, h, 1e-10)
}

/// Quadratic objective `0.5 x^T A x + x^T B y + c` used as an analytic
/// reference. Its Hessian is `A` and its mixed derivative is `B`.
#[derive(Clone, Debug)]
pub struct QuadraticObjective {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl TwoPointObjective for QuadraticObjective {
    fn param_count(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, theta: &[f64], tau: &[f64]) -> Result<f64> {
        let x = DVector::from_column_slice(theta);
        let y = DVector::from_column_slice(tau);
        Ok(0.5 * x.dot(&(&self.a * &x)) + x.dot(&(&self.b * &y)))
    }
}
