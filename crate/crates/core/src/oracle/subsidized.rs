//! Single-arm subsidized MDP: value iteration, Whittle indices by
//! bisection, and the indexability check.

use crate::arm::{Action, ArmModel, StateId};
use crate::error::{invalid, Error, Result};
use crate::Scalar;

/// Sweep cap for single-arm value iteration.
pub const MAX_SWEEPS: usize = 1_000_000;

/// Bracket doublings attempted before bisection gives up.
pub const MAX_BRACKET_EXPANSIONS: usize = 10;

/// Fixed point of the subsidized Bellman equation for one subsidy value.
#[derive(Clone, Debug, PartialEq)]
pub struct SubsidizedSolution<F = f64> {
    pub lambda: F,
    pub v: Vec<F>,
    /// `q[s][a]`
    pub q: Vec<[F; 2]>,
    pub sweeps: usize,
}

impl<F: Scalar> SubsidizedSolution<F> {
    /// `q(s, 1) - q(s, 0)`.
    pub fn gap(&self, s: StateId) -> F {
        self.q[s.0][1] - self.q[s.0][0]
    }
}

/// One Bellman sweep: returns the updated value vector and the q-values it
/// was computed from.
pub fn bellman_sweep<F: Scalar>(arm: &ArmModel<F>, lambda: F, gamma: F, v: &[F]) -> (Vec<F>, Vec<[F; 2]>) {
    let n = arm.state_count();
    let mut q = Vec::with_capacity(n);
    let mut next = Vec::with_capacity(n);
    for s in (0..n).map(StateId) {
        let mut qs = [F::zero(); 2];
        for a in Action::BOTH {
            let row = arm.transition(s, a);
            let mut ev = F::zero();
            for &(j, _) in arm.support(s, a) {
                ev += row[j] * v[j];
            }
            let subsidy = if a == Action::Passive { lambda } else { F::zero() };
            qs[a.index()] = arm.reward(s, a) + subsidy + gamma * ev;
        }
        next.push(qs[0].max(qs[1]));
        q.push(qs);
    }
    (next, q)
}

#[allow(clippy::neg_cmp_op_on_partial_ord)] // rejects NaN
fn check_gamma_tol<F: Scalar>(gamma: F, tol: F) -> Result<()> {
    if !(gamma > F::zero() && gamma < F::one()) {
        return Err(invalid(format!("discount must lie in (0, 1), got {gamma}")));
    }
    if !(tol > F::zero()) {
        return Err(invalid(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// Value iteration on the arm with passive reward `r(s, 0) + lambda`.
/// Stops once successive iterates differ by less than `tol (1 - gamma) / gamma`
/// in sup norm, so `v` is within `tol` of the fixed point.
pub fn solve_subsidized_arm<F: Scalar>(arm: &ArmModel<F>, lambda: F, gamma: F, tol: F) -> Result<SubsidizedSolution<F>> {
    solve_subsidized_arm_from(arm, lambda, gamma, tol, None)
}

/// As [`solve_subsidized_arm`], warm-started from `init` when given.
pub fn solve_subsidized_arm_from<F: Scalar>(
    arm: &ArmModel<F>,
    lambda: F,
    gamma: F,
    tol: F,
    init: Option<&[F]>,
) -> Result<SubsidizedSolution<F>> {
    check_gamma_tol(gamma, tol)?;
    let n = arm.state_count();
    let mut v = match init {
        Some(v0) if v0.len() == n => v0.to_vec(),
        Some(v0) => return Err(invalid(format!("warm start has {} entries for {n} states", v0.len()))),
        None => vec![F::zero(); n],
    };
    let threshold = tol * (F::one() - gamma) / gamma;
    let mut residual = F::infinity();
    for sweep in 1..=MAX_SWEEPS {
        let (next, _) = bellman_sweep(arm, lambda, gamma, &v);
        residual = next
            .iter()
            .zip(&v)
            .fold(F::zero(), |m, (a, b)| m.max((*a - *b).abs()));
        v = next;
        if residual < threshold {
            // q consistent with the returned v
            let (v_final, q) = bellman_sweep(arm, lambda, gamma, &v);
            return Ok(SubsidizedSolution {
                lambda,
                v: v_final,
                q,
                sweeps: sweep + 1,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_SWEEPS,
        residual: residual.as_f64(),
    })
}

/// One solved subsidy: the action gap of every state and a bound on its
/// error.
struct Probe<F> {
    lambda: F,
    gaps: Vec<F>,
    err: F,
}

/// Subsidy and the gap observed there.
type Bound<F> = Option<(F, F)>;

/// Root finding on the action gap `q(x, 1) - q(x, 0)`, which is
/// non-increasing in the subsidy on indexable arms. Every solve yields the
/// gap of all states, so solves are kept and reused as brackets for later
/// states.
struct IndexSearch<'a, F: Scalar> {
    arm: &'a ArmModel<F>,
    gamma: F,
    tol: F,
    inner_tol: F,
    radius: F,
    probes: Vec<Probe<F>>,
    warm: Option<Vec<F>>,
}

impl<'a, F: Scalar> IndexSearch<'a, F> {
    fn new(arm: &'a ArmModel<F>, gamma: F, tol: F) -> Result<Self> {
        check_gamma_tol(gamma, tol)?;
        Ok(IndexSearch {
            arm,
            gamma,
            tol,
            // Solve the inner problem much more tightly than the gap tolerance.
            inner_tol: (tol * F::lit(1e-3)).max(F::epsilon() * F::lit(1e3)),
            radius: arm.max_abs_reward().max(F::lit(0.5)) * F::lit(2.0) / (F::one() - gamma),
            probes: Vec::new(),
            warm: None,
        })
    }

    /// Gap of `x` at `lambda`. `v` is within `inner` of the fixed point, so
    /// each q-value is within `gamma * inner` and the gap within twice that.
    fn gap(&mut self, x: StateId, lambda: F, inner: F) -> Result<F> {
        let sol = solve_subsidized_arm_from(self.arm, lambda, self.gamma, inner, self.warm.as_deref())?;
        let gaps: Vec<F> = (0..self.arm.state_count()).map(|s| sol.gap(StateId(s))).collect();
        let g = gaps[x.0];
        self.warm = Some(sol.v);
        self.probes.push(Probe {
            lambda,
            gaps,
            err: F::lit(2.0) * self.gamma * inner,
        });
        Ok(g)
    }

    /// Tightest known `(lo, g_lo)` with a certainly positive gap and
    /// `(hi, g_hi)` with a certainly negative one.
    fn known_bracket(&self, x: StateId) -> (Bound<F>, Bound<F>) {
        let mut lo: Bound<F> = None;
        let mut hi: Bound<F> = None;
        for p in &self.probes {
            let g = p.gaps[x.0];
            if g > p.err && lo.is_none_or(|(l, _)| p.lambda > l) {
                lo = Some((p.lambda, g));
            }
            if g < -p.err && hi.is_none_or(|(h, _)| p.lambda < h) {
                hi = Some((p.lambda, g));
            }
        }
        (lo, hi)
    }

    fn index(&mut self, x: StateId) -> Result<F> {
        self.arm.check_state(x)?;
        let two = F::lit(2.0);
        let (tol, inner_tol) = (self.tol, self.inner_tol);
        let (known_lo, known_hi) = self.known_bracket(x);
        let (mut lo, mut g_lo, mut hi, mut g_hi) = match (known_lo, known_hi) {
            (Some((lo, g_lo)), Some((hi, g_hi))) => (lo, g_lo, hi, g_hi),
            _ => {
                let mut expansions = 0;
                loop {
                    let r = self.radius;
                    let g_lo = self.gap(x, -r, inner_tol)?;
                    let g_hi = self.gap(x, r, inner_tol)?;
                    if g_lo.abs() < tol {
                        return Ok(-r);
                    }
                    if g_hi.abs() < tol {
                        return Ok(r);
                    }
                    if g_lo > F::zero() && g_hi < F::zero() {
                        break (-r, g_lo, r, g_hi);
                    }
                    if expansions == MAX_BRACKET_EXPANSIONS {
                        return Err(Error::NotBracketed {
                            state: x.0,
                            lo: (-r).as_f64(),
                            hi: r.as_f64(),
                        });
                    }
                    expansions += 1;
                    self.radius = r * two;
                }
            }
        };

        // The gap is piecewise linear in the subsidy, so false position
        // (Illinois variant) converges in a few steps once the bracket sits
        // on one linear piece. A midpoint step is forced whenever the
        // bracket fails to halve over three steps.
        let width_floor = self.radius * F::epsilon() * F::lit(8.0);
        let mut last_side = 0i8;
        let mut width_before = hi - lo;
        for iter in 0..200 {
            let width = hi - lo;
            if width < tol || width < width_floor {
                break;
            }
            let mut c = hi - g_hi * width / (g_hi - g_lo);
            if iter % 3 == 2 {
                if width > width_before / two {
                    c = (lo + hi) / two;
                }
                width_before = width;
            }
            let margin = width * F::lit(1e-3);
            if !(c > lo + margin && c < hi - margin) {
                c = (lo + hi) / two;
            }
            // A loose solve settles the sign while the gap is far from zero.
            let loose = (width * F::lit(1e-6)).max(inner_tol);
            let mut g = self.gap(x, c, loose)?;
            if loose > inner_tol && g.abs() <= loose * F::lit(4.0) {
                g = self.gap(x, c, inner_tol)?;
            }
            if g.abs() < tol {
                // Close the bracket around a near-root in one step.
                let quarter = tol / F::lit(4.0);
                let (a, b) = ((c - quarter).max(lo), (c + quarter).min(hi));
                let ga = self.gap(x, a, inner_tol)?;
                let gb = self.gap(x, b, inner_tol)?;
                if ga >= F::zero() && gb <= F::zero() {
                    return Ok((a + b) / two);
                }
            }
            if g > F::zero() {
                lo = c;
                g_lo = g;
                if last_side == 1 {
                    g_hi /= two;
                }
                last_side = 1;
            } else {
                hi = c;
                g_hi = g;
                if last_side == -1 {
                    g_lo /= two;
                }
                last_side = -1;
            }
        }
        Ok((lo + hi) / two)
    }
}

/// Whittle index of state `x`: the subsidy at which both actions are
/// equally valuable in `x`, located by bracketed root finding on the action
/// gap to within `tol`.
pub fn whittle_bisection<F: Scalar>(arm: &ArmModel<F>, x: StateId, gamma: F, tol: F) -> Result<F> {
    IndexSearch::new(arm, gamma, tol)?.index(x)
}

/// Whittle index of every state of the arm. Solves are shared across
/// states.
pub fn whittle_indices<F: Scalar>(arm: &ArmModel<F>, gamma: F, tol: F) -> Result<Vec<F>> {
    let mut search = IndexSearch::new(arm, gamma, tol)?;
    (0..arm.state_count()).map(|s| search.index(StateId(s))).collect()
}

/// A state that leaves the passive set as the subsidy grows.
#[derive(Clone, Debug, PartialEq)]
pub struct IndexabilityViolation<F = f64> {
    pub state: StateId,
    /// Subsidy at which the state was passive.
    pub lambda_passive: F,
    /// Next grid subsidy, at which it is active again.
    pub lambda_active: F,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexabilityReport<F = f64> {
    pub indexable: bool,
    pub grid: Vec<F>,
    /// `passive_sets[k][s]`: state `s` is passive-optimal at `grid[k]`.
    pub passive_sets: Vec<Vec<bool>>,
    pub violations: Vec<IndexabilityViolation<F>>,
}

/// Checks that the passive-optimal set `{s : q(s,0) >= q(s,1)}` only grows
/// along an increasing subsidy grid.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn indexability_check<F: Scalar>(
    arm: &ArmModel<F>,
    lambda_grid: &[F],
    gamma: F,
    tol: F,
) -> Result<IndexabilityReport<F>> {
    check_gamma_tol(gamma, tol)?;
    if lambda_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("subsidy grid must be strictly increasing"));
    }
    let mut passive_sets = Vec::with_capacity(lambda_grid.len());
    let mut warm: Option<Vec<F>> = None;
    for &lambda in lambda_grid {
        let sol = solve_subsidized_arm_from(arm, lambda, gamma, tol, warm.as_deref())?;
        passive_sets.push(sol.q.iter().map(|q| q[0] - q[1] >= -tol).collect::<Vec<bool>>());
        warm = Some(sol.v);
    }
    let mut violations = Vec::new();
    for (k, pair) in passive_sets.windows(2).enumerate() {
        for (s, (&before, &after)) in pair[0].iter().zip(&pair[1]).enumerate() {
            if before && !after {
                violations.push(IndexabilityViolation {
                    state: StateId(s),
                    lambda_passive: lambda_grid[k],
                    lambda_active: lambda_grid[k + 1],
                });
            }
        }
    }
    Ok(IndexabilityReport {
        indexable: violations.is_empty(),
        grid: lambda_grid.to_vec(),
        passive_sets,
        violations,
    })
}

/// `count` evenly spaced points on `[lo, hi]`.
pub fn linear_grid<F: Scalar>(lo: F, hi: F, count: usize) -> Vec<F> {
    if count < 2 {
        return vec![lo];
    }
    let step = (hi - lo) / F::from_usize_lossy(count - 1);
    (0..count).map(|k| lo + step * F::from_usize_lossy(k)).collect()
}
