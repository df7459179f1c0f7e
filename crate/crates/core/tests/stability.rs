use nalgebra::{Complex, DMatrix};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use whittle_core::stability::{
    bellman_error, contraction_spectrum, contraction_spectrum_at, fd_grad1, fd_hess11, fd_mixed21, BellmanErrorPoint,
    BellmanRow, QuadraticObjective, TwoPointObjective, DEFAULT_STEP,
};
use whittle_core::{Action, Error, Result, StateId, TransitionSample};

fn row(s: usize, a: Action, r0: f64, r1: f64, next: usize, x: usize, lambda: f64) -> BellmanRow {
    BellmanRow {
        sample: TransitionSample {
            arm: 0,
            state: StateId(s),
            action: a,
            passive_reward: r0,
            active_reward: r1,
            next_state: StateId(next),
        },
        reference: StateId(x),
        lambda,
    }
}

fn random_rows(rng: &mut ChaCha8Rng, states: usize, size: usize) -> Vec<BellmanRow> {
    (0..size)
        .map(|_| {
            row(
                rng.random_range(0..states),
                Action::from_active(rng.random::<bool>()),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(0..states),
                rng.random_range(0..states),
                rng.random_range(-0.5..0.5),
            )
        })
        .collect()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Linear 2-2 network point; parameters are the 4 weights (row-major by
/// output) followed by the 2 biases.
fn linear_point(rng: &mut ChaCha8Rng, rows: Vec<BellmanRow>) -> BellmanErrorPoint {
    let theta = random_vec(rng, 6, 0.5);
    let tau = random_vec(rng, 6, 0.5);
    BellmanErrorPoint::new(vec![2, 2], theta, tau, rows, 5, 0.9).unwrap()
}

#[test]
fn bellman_error_trivial_points() {
    let rows = vec![row(1, Action::Passive, 0.0, 0.0, 2, 0, 0.0), row(3, Action::Active, 0.0, 0.0, 0, 4, 0.0)];
    let zero = vec![0.0; 6];
    let p = BellmanErrorPoint::new(vec![2, 2], zero.clone(), zero.clone(), rows, 5, 0.0).unwrap();
    assert_eq!(bellman_error(&p, &zero, &zero).unwrap(), 0.0);

    // A constant network c = r / (1 - gamma) is its own bootstrapped target
    // when every immediate reward equals r.
    let (r, gamma) = (0.4, 0.75);
    let c = r / (1.0 - gamma);
    let rows = vec![row(0, Action::Passive, 0.1, 9.0, 2, 1, 0.3), row(2, Action::Active, 5.0, r, 4, 3, 2.0)];
    let theta = vec![0.0, 0.0, 0.0, 0.0, c, c];
    let p = BellmanErrorPoint::new(vec![2, 2], theta.clone(), theta.clone(), rows, 5, gamma).unwrap();
    assert!(bellman_error(&p, &theta, &theta).unwrap().abs() < 1e-24);
}

#[test]
fn bellman_error_matches_hand_computation() {
    // Q(u, v) = W (u, v) + b, inputs scaled by 1 / (n - 1) = 1 / 4.
    let theta = [0.2, -0.1, 0.5, 0.3, 0.05, -0.2];
    let tau = [-0.3, 0.4, 0.1, 0.2, 0.0, 0.1];
    let q = |p: &[f64], s: usize, x: usize| {
        let (u, v) = (s as f64 / 4.0, x as f64 / 4.0);
        [p[0] * u + p[1] * v + p[4], p[2] * u + p[3] * v + p[5]]
    };
    let rows = vec![row(1, Action::Passive, 0.3, -1.0, 4, 2, 0.25), row(3, Action::Active, 2.0, -0.6, 0, 1, 1.0)];
    let p = BellmanErrorPoint::new(vec![2, 2], theta.to_vec(), tau.to_vec(), rows, 5, 0.9).unwrap();

    let next0 = q(&tau, 4, 2);
    let r0 = q(&theta, 1, 2)[0] - (0.3 + 0.25 + 0.9 * next0[0].max(next0[1]));
    let next1 = q(&tau, 0, 1);
    let r1 = q(&theta, 3, 1)[1] - (-0.6 + 0.9 * next1[0].max(next1[1]));
    let expected = (r0 * r0 + r1 * r1) / 2.0;
    assert!((bellman_error(&p, &theta, &tau).unwrap() - expected).abs() < 1e-14);
}

#[test]
fn derivatives_of_quadratic_match_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 5;
    let a = {
        let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(n, n)
    };
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let obj = QuadraticObjective { a: a.clone(), b: b.clone() };
    let theta = random_vec(&mut rng, n, 1.0);
    let tau = random_vec(&mut rng, n, 1.0);
    let h = fd_hess11(&obj, &theta, &tau, DEFAULT_STEP).unwrap();
    let m = fd_mixed21(&obj, &theta, &tau, DEFAULT_STEP).unwrap();
    assert!((h - &a).abs().max() < 1e-6);
    assert!((m - &b).abs().max() < 1e-6);
    let g = fd_grad1(&obj, &theta, &tau, DEFAULT_STEP).unwrap();
    let exact = &a * nalgebra::DVector::from_column_slice(&theta) + &b * nalgebra::DVector::from_column_slice(&tau);
    for (x, y) in g.iter().zip(exact.iter()) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn hessian_is_symmetric_on_small_networks() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..3 {
        let dims = vec![2, 4, 2];
        let theta = random_vec(&mut rng, 22, 0.8);
        let tau = random_vec(&mut rng, 22, 0.8);
        let rows = random_rows(&mut rng, 5, 64);
        let p = BellmanErrorPoint::new(dims, theta.clone(), tau.clone(), rows, 5, 0.9).unwrap();
        let h = fd_hess11(&p, &theta, &tau, DEFAULT_STEP).unwrap();
        assert!((&h - h.transpose()).abs().max() < 1e-5);
    }
}

/// Smooth two-point objective with nonzero third and fourth derivatives.
struct Smooth;

impl TwoPointObjective for Smooth {
    fn param_count(&self) -> usize {
        3
    }
    fn eval(&self, t: &[f64], u: &[f64]) -> Result<f64> {
        Ok((t[0] * t[1]).sin() + (t[2] - 0.5 * u[0]).exp() + t[0].powi(4) * u[1] + (t[1] * u[2]).cos())
    }
}

#[test]
fn halving_the_step_shrinks_error_fourfold() {
    let theta = [0.4, -0.7, 0.2];
    let tau = [0.3, 0.9, -0.5];
    let d = |h: f64| fd_hess11(&Smooth, &theta, &tau, h).unwrap() + fd_mixed21(&Smooth, &theta, &tau, h).unwrap();
    let (a, b, c) = (d(0.04), d(0.02), d(0.01));
    let coarse = (&a - &b).abs().max();
    let fine = (&b - &c).abs().max();
    let ratio = coarse / fine;
    assert!((ratio - 4.0).abs() < 0.3, "Richardson ratio {ratio}");
}

#[test]
fn toy_quadratic_contracts_by_half() {
    struct Toy;
    impl TwoPointObjective for Toy {
        fn param_count(&self) -> usize {
            1
        }
        fn eval(&self, t: &[f64], u: &[f64]) -> Result<f64> {
            Ok((t[0] - u[0] / 2.0).powi(2))
        }
    }
    let r = contraction_spectrum_at(&Toy, &[1.0], &[-2.0], DEFAULT_STEP, 1e-10).unwrap();
    assert!((r.max_modulus.unwrap() - 0.5).abs() < 1e-6);
    assert!(r.inside_unit_disc());
}

#[test]
fn decoupled_objective_has_zero_spectrum() {
    let q = QuadraticObjective {
        a: DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 3.0]),
        b: DMatrix::zeros(3, 3),
    };
    let r = contraction_spectrum_at(&q, &[0.1, 0.2, 0.3], &[1.0, -1.0, 0.0], DEFAULT_STEP, 1e-10).unwrap();
    assert!(r.positive_definite);
    assert_eq!(r.moduli.len(), 3);
    assert!(r.moduli.iter().all(|&m| m < 1e-6), "{:?}", r.moduli);
}

// Characteristic polynomial by Faddeev-LeVerrier, roots by Durand-Kerner.
fn char_poly_root_moduli(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut coeffs = vec![1.0];
    let mut mk = DMatrix::<f64>::zeros(n, n);
    for k in 1..=n {
        mk = m * (mk + DMatrix::identity(n, n) * coeffs[k - 1]);
        let c = -mk.trace() / k as f64;
        coeffs.push(c);
    }
    let eval = |z: Complex<f64>| coeffs.iter().fold(Complex::new(0.0, 0.0), |acc, &c| acc * z + c);
    let seed = Complex::new(0.4, 0.9);
    let mut roots: Vec<Complex<f64>> = (0..n).map(|i| seed.powu(i as u32)).collect();
    for _ in 0..500 {
        for i in 0..n {
            let denom = (0..n)
                .filter(|&j| j != i)
                .fold(Complex::new(1.0, 0.0), |acc, j| acc * (roots[i] - roots[j]));
            let z = roots[i];
            roots[i] = z - eval(z) / denom;
        }
    }
    let mut moduli: Vec<f64> = roots.iter().map(|z| z.norm()).collect();
    moduli.sort_by(|a, b| b.total_cmp(a));
    moduli
}

#[test]
fn spectrum_agrees_with_characteristic_polynomial() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=4 {
        for _ in 0..5 {
            let a = {
                let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
                &m * m.transpose() + DMatrix::identity(n, n) * 0.5
            };
            let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let jac = -a.clone().try_inverse().unwrap() * &b;
            let expected = char_poly_root_moduli(&jac);
            let q = QuadraticObjective { a, b };
            let zeros = vec![0.0; n];
            let r = contraction_spectrum_at(&q, &zeros, &zeros, DEFAULT_STEP, 1e-10).unwrap();
            assert_eq!(r.moduli.len(), n);
            for (x, y) in r.moduli.iter().zip(&expected) {
                assert!((x - y).abs() < 1e-5, "n = {n}: {:?} vs {expected:?}", r.moduli);
            }
            assert!(r.moduli.windows(2).all(|w| w[0] >= w[1]));
        }
    }
}

#[test]
fn spectrum_ignores_row_order() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let rows = random_rows(&mut rng, 5, 256);
    let point = linear_point(&mut rng, rows.clone());
    let mut shuffled = rows;
    shuffled.shuffle(&mut rng);
    let other = BellmanErrorPoint::new(
        point.dims.clone(),
        point.theta.clone(),
        point.tau.clone(),
        shuffled,
        point.state_count,
        point.gamma,
    )
    .unwrap();
    let a = contraction_spectrum(&point, DEFAULT_STEP).unwrap();
    let b = contraction_spectrum(&other, DEFAULT_STEP).unwrap();
    // A linear network with both actions in the batch has a definite Hessian.
    assert!(a.positive_definite && b.positive_definite);
    for (x, y) in a.moduli.iter().zip(&b.moduli) {
        assert!((x - y).abs() < 1e-6, "{:?} vs {:?}", a.moduli, b.moduli);
    }
    for (x, y) in a.hessian_eigenvalues.iter().zip(&b.hessian_eigenvalues) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn invalid_points_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(BellmanErrorPoint::new(vec![2, 2], vec![0.0; 6], vec![0.0; 6], vec![], 5, 0.9).is_err());
    let rows = random_rows(&mut rng, 5, 4);
    assert!(BellmanErrorPoint::new(vec![2, 2], vec![0.0; 5], vec![0.0; 6], rows.clone(), 5, 0.9).is_err());
    assert!(BellmanErrorPoint::new(vec![3, 2], vec![0.0; 8], vec![0.0; 8], rows.clone(), 5, 0.9).is_err());
    // 2-16-16-2 has 354 parameters, beyond the Hessian budget.
    let big = BellmanErrorPoint::new(vec![2, 16, 16, 2], vec![0.0; 354], vec![0.0; 354], rows, 5, 0.9).unwrap();
    assert!(matches!(contraction_spectrum(&big, DEFAULT_STEP), Err(Error::TooLarge { .. })));
}
