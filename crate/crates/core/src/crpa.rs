//! Joint precoder / reflection-phase optimization for weighted sum-rate.
//!
//! The objective is the weighted sum of user rates under per-user
//! interference, maximized over the BS precoder (total power budget) and
//! the unit-modulus reflection coefficients of every panel each user is
//! assumed to reach. The solver is the classic MMSE-reweighting reduction:
//! the weighted sum-rate maximum coincides with the minimum of
//!
//! `J = sum_k w_k (W_k E_k - ln W_k)`
//!
//! over receivers, MSE weights, precoder and phases, where `E_k` is user
//! k's MSE. Each outer iteration sweeps three blocks in Gauss-Seidel
//! order:
//!
//! * (A) per-user MMSE receivers and weights `W_k = 1/E_k`, both closed
//!   form;
//! * (B) the precoder from the regularized normal equations
//!   `F = (A + lambda I)^{-1} B`, with `lambda >= 0` picked by bisection
//!   on the power curve so the budget is met exactly when the
//!   unconstrained solution is infeasible;
//! * (C) one pass over the panels: ascend the negated objective along its
//!   phase gradient through a closed-form projection onto the unit-modulus
//!   set, with a backtracking curvature estimate per panel that guarantees
//!   the objective never regresses.
//!
//! Every block is an exact minimizer of `J` over its own variables, so the
//! recorded sum-rate sequence is nondecreasing and the `J` sequence
//! nonincreasing up to floating-point slack.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::Rng;

use crate::channel::{effective_channel, ChannelSet, PanelSet, PhaseVector};
use crate::error::{invalid, numeric};
use crate::Result;

#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Initial phase configuration for the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum PhaseInit {
    /// Uniform random phases per element.
    #[default]
    Random,
    /// Zero-phase (all-ones) reflection.
    AllOnes,
}

/// Optimizer knobs.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CrpaConfig {
    /// Outer iteration cap.
    pub max_iter: usize,
    /// Stop once the relative sum-rate improvement of an outer iteration
    /// falls below this.
    pub eps: f64,
    /// Initial per-panel curvature estimate for the phase step.
    pub l_init: f64,
    /// Curvature growth factor on a rejected phase step; must exceed 1.
    pub eta: f64,
    /// Relative tolerance on meeting the power budget in the precoder step.
    pub bisect_tol: f64,
    /// Iteration cap for the power bisection (bracketing plus halving).
    pub bisect_max: u32,
    /// Retry cap for one panel's backtracking phase step.
    pub backtrack_cap: u32,
    /// Per-user rate weights; `None` means equal weights of one.
    pub rate_weights: Option<Vec<f64>>,
    /// Initial phase configuration.
    pub phase_init: PhaseInit,
    /// When false, block (C) is skipped and phases stay at their initial
    /// values (fixed-phase baseline).
    pub optimize_phases: bool,
}

impl Default for CrpaConfig {
    fn default() -> Self {
        CrpaConfig {
            max_iter: 200,
            eps: 1e-6,
            l_init: 1.0,
            eta: 2.0,
            bisect_tol: 1e-6,
            bisect_max: 200,
            backtrack_cap: 60,
            rate_weights: None,
            phase_init: PhaseInit::Random,
            optimize_phases: true,
        }
    }
}

impl CrpaConfig {
    pub fn validate(&self, users: usize) -> Result<()> {
        if self.max_iter == 0 {
            return Err(invalid("crpa.max_iter: must be at least 1"));
        }
        if !(self.eps > 0.0) {
            return Err(invalid("crpa.eps: must be positive"));
        }
        if !(self.l_init > 0.0) || !self.l_init.is_finite() {
            return Err(invalid("crpa.l_init: must be positive and finite"));
        }
        if !(self.eta > 1.0) || !self.eta.is_finite() {
            return Err(invalid("crpa.eta: must exceed 1"));
        }
        if !(self.bisect_tol > 0.0 && self.bisect_tol < 1.0) {
            return Err(invalid("crpa.bisect_tol: must lie in (0, 1)"));
        }
        if self.bisect_max == 0 {
            return Err(invalid("crpa.bisect_max: must be at least 1"));
        }
        if self.backtrack_cap == 0 {
            return Err(invalid("crpa.backtrack_cap: must be at least 1"));
        }
        if let Some(w) = &self.rate_weights {
            if w.len() != users {
                return Err(invalid("crpa.rate_weights: one weight per user required"));
            }
            if w.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
                return Err(invalid("crpa.rate_weights: weights must be positive and finite"));
            }
        }
        Ok(())
    }

    /// Expands the rate weights to one per user.
    pub fn resolved_weights(&self, users: usize) -> Result<Vec<f64>> {
        self.validate(users)?;
        Ok(match &self.rate_weights {
            None => vec![1.0; users],
            Some(w) => w.clone(),
        })
    }
}

/// All optimizer variables at some point of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    /// BS precoder, `bs_antennas x users`, column `k` serving user `k`.
    pub precoder: DMatrix<Complex64>,
    /// Per-user receive vectors.
    pub receivers: Vec<DVector<Complex64>>,
    /// Per-user MSE weights `W_k = 1/E_k`.
    pub mse_weights: Vec<f64>,
    /// Per-panel reflection phases.
    pub phases: Vec<PhaseVector>,
    /// Power multiplier `lambda` from the last precoder update.
    pub multiplier: f64,
    /// Per-panel curvature estimates carried across iterations.
    pub lipschitz: Vec<f64>,
}

/// Per-iteration measurements recorded by the outer loop.
///
/// `converged_at` is the 0-based index of the iteration whose relative
/// sum-rate improvement fell below `eps`, if any; the trace vectors then
/// end at that iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationTrace {
    /// Weighted sum-rate (natural log) at the end of each iteration.
    pub wsr: Vec<f64>,
    /// Surrogate objective `J` at the end of each iteration.
    pub wmmse_obj: Vec<f64>,
    /// Backtracking retries per panel per iteration.
    pub backtrack_counts: Vec<Vec<u32>>,
    pub converged_at: Option<usize>,
}

/// Extra per-iteration diagnostics handed to an observer callback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStats {
    /// 0-based outer iteration index.
    pub iter: usize,
    /// Sum-rate of the variables entering the iteration.
    pub entry_wsr: f64,
    /// `sum_k w_k ln(W_k)` right after the receiver/weight update; equals
    /// `entry_wsr` in exact arithmetic.
    pub weighted_log_w_sum: f64,
    /// `||F||_F^2` right after the precoder update.
    pub precoder_power: f64,
    /// Power multiplier chosen by the precoder update.
    pub multiplier: f64,
    /// Largest unit-modulus violation over all phase updates this iteration.
    pub max_phase_modulus_err: f64,
    /// Sum-rate at the end of the iteration.
    pub wsr: f64,
    /// Surrogate objective at the end of the iteration.
    pub wmmse_obj: f64,
    /// Total backtracking retries this iteration.
    pub backtracks: u32,
}

// ---------------------------------------------------------------------------
// objective evaluation

fn check_noise_var(noise_var: f64) -> Result<()> {
    if !(noise_var > 0.0) || !noise_var.is_finite() {
        return Err(invalid("noise_var: must be positive and finite"));
    }
    Ok(())
}

/// Effective channels for every user under the given sets and phases.
pub fn effective_channels(
    channels: &ChannelSet,
    phases: &[PhaseVector],
    active_sets: &[PanelSet],
) -> Result<Vec<DMatrix<Complex64>>> {
    if active_sets.len() != channels.dims.users {
        return Err(invalid("active_sets: one panel set per user required"));
    }
    (0..channels.dims.users)
        .map(|k| effective_channel(channels, phases, &active_sets[k], k))
        .collect()
}

/// Weighted sum-rate (natural log) under per-user interference, computed
/// directly from the rate expression with each user's interference
/// covariance.
pub fn wsr(
    channels: &ChannelSet,
    phases: &[PhaseVector],
    active_sets: &[PanelSet],
    precoder: &DMatrix<Complex64>,
    noise_var: f64,
    rate_weights: &[f64],
) -> Result<f64> {
    let heffs = effective_channels(channels, phases, active_sets)?;
    wsr_from_effective(&heffs, precoder, noise_var, rate_weights)
}

/// `wsr` on precomputed effective channels.
pub fn wsr_from_effective(
    heffs: &[DMatrix<Complex64>],
    precoder: &DMatrix<Complex64>,
    noise_var: f64,
    rate_weights: &[f64],
) -> Result<f64> {
    check_noise_var(noise_var)?;
    let users = heffs.len();
    if precoder.ncols() != users || rate_weights.len() != users {
        return Err(invalid("wsr: precoder columns and weights must match user count"));
    }
    let mut total = 0.0;
    for k in 0..users {
        let h = &heffs[k];
        if h.ncols() != precoder.nrows() {
            return Err(invalid("wsr: precoder rows must match bs_antennas"));
        }
        let nr = h.nrows();
        let t = h * precoder;
        let m = t.column(k).clone_owned();
        // Interference-plus-noise covariance: sigma^2 I + sum_{j != k} t_j t_j^H.
        let mut r = &t * t.adjoint() - &m * m.adjoint();
        for d in 0..nr {
            r[(d, d)] += Complex64::from(noise_var);
        }
        let chol = r
            .cholesky()
            .ok_or_else(|| numeric("wsr: interference covariance lost positive definiteness"))?;
        let x = chol.solve(&m);
        let sinr = m.dotc(&x).re.max(0.0);
        total += rate_weights[k] * sinr.ln_1p();
    }
    Ok(total)
}

/// MSE of user `k` for arbitrary (not necessarily optimal) receive vector:
/// `E = 1 - 2 Re(u^H h f_k) + u^H (h F F^H h^H + sigma^2 I) u`.
fn mse_value(
    heff: &DMatrix<Complex64>,
    precoder: &DMatrix<Complex64>,
    receiver: &DVector<Complex64>,
    noise_var: f64,
    user: usize,
) -> f64 {
    let t = heff * precoder;
    let m = t.column(user);
    let tu = t.adjoint() * receiver;
    1.0 - 2.0 * receiver.dotc(&m).re + tu.norm_squared() + noise_var * receiver.norm_squared()
}

/// Surrogate objective `J = sum_k w_k (W_k E_k - ln W_k)` for the current
/// variables, on precomputed effective channels.
pub fn wmmse_objective_from_effective(
    heffs: &[DMatrix<Complex64>],
    precoder: &DMatrix<Complex64>,
    receivers: &[DVector<Complex64>],
    mse_weights: &[f64],
    noise_var: f64,
    rate_weights: &[f64],
) -> f64 {
    let mut total = 0.0;
    for k in 0..heffs.len() {
        let e = mse_value(&heffs[k], precoder, &receivers[k], noise_var, k);
        total += rate_weights[k] * (mse_weights[k] * e - mse_weights[k].ln());
    }
    total
}

// ---------------------------------------------------------------------------
// block (A): receivers and MSE weights

/// Output of the receiver/weight update.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverUpdate {
    pub receivers: Vec<DVector<Complex64>>,
    /// `W_k = 1 / E_k`.
    pub mse_weights: Vec<f64>,
    /// The per-user MMSE values `E_k`, each in `(0, 1]`.
    pub mse: Vec<f64>,
}

/// Closed-form MMSE receivers and MSE weights for a fixed precoder and
/// phases (spec block A).
pub fn update_receivers_weights(
    channels: &ChannelSet,
    phases: &[PhaseVector],
    active_sets: &[PanelSet],
    precoder: &DMatrix<Complex64>,
    noise_var: f64,
) -> Result<ReceiverUpdate> {
    let heffs = effective_channels(channels, phases, active_sets)?;
    update_receivers_weights_from_effective(&heffs, precoder, noise_var)
}

/// `update_receivers_weights` on precomputed effective channels.
pub fn update_receivers_weights_from_effective(
    heffs: &[DMatrix<Complex64>],
    precoder: &DMatrix<Complex64>,
    noise_var: f64,
) -> Result<ReceiverUpdate> {
    check_noise_var(noise_var)?;
    let users = heffs.len();
    if precoder.ncols() != users {
        return Err(invalid("receiver update: precoder columns must match user count"));
    }
    let mut receivers = Vec::with_capacity(users);
    let mut mse_weights = Vec::with_capacity(users);
    let mut mse = Vec::with_capacity(users);
    for k in 0..users {
        let h = &heffs[k];
        let nr = h.nrows();
        let t = h * precoder;
        let mut s = &t * t.adjoint();
        for d in 0..nr {
            s[(d, d)] += Complex64::from(noise_var);
        }
        let m = t.column(k).clone_owned();
        let chol = s
            .cholesky()
            .ok_or_else(|| numeric("receiver update: covariance lost positive definiteness"))?;
        let u = chol.solve(&m);
        // MMSE via the general expression; reduces to 1 - m^H S^{-1} m here.
        let e = {
            let su = {
                let mut s2 = &t * t.adjoint();
                for d in 0..nr {
                    s2[(d, d)] += Complex64::from(noise_var);
                }
                s2 * &u
            };
            1.0 - 2.0 * u.dotc(&m).re + u.dotc(&su).re
        };
        if !(e > 0.0) || !e.is_finite() {
            return Err(numeric("receiver update: MSE left (0, 1]"));
        }
        receivers.push(u);
        mse_weights.push(1.0 / e);
        mse.push(e);
    }
    Ok(ReceiverUpdate {
        receivers,
        mse_weights,
        mse,
    })
}

// ---------------------------------------------------------------------------
// block (B): precoder

/// Normal-equation system of the precoder block:
/// `A = sum_k w_k W_k a_k a_k^H`, `B[:,k] = w_k W_k a_k`, with
/// `a_k = H_k^H u_k`. `A` is Hermitian PSD by construction.
pub fn precoder_normal_system(
    heffs: &[DMatrix<Complex64>],
    receivers: &[DVector<Complex64>],
    mse_weights: &[f64],
    rate_weights: &[f64],
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    let users = heffs.len();
    if receivers.len() != users || mse_weights.len() != users || rate_weights.len() != users {
        return Err(invalid("precoder system: per-user inputs must match user count"));
    }
    let nt = heffs[0].ncols();
    let mut a = DMatrix::<Complex64>::zeros(nt, nt);
    let mut b = DMatrix::<Complex64>::zeros(nt, users);
    for k in 0..users {
        let ak = heffs[k].adjoint() * &receivers[k];
        let scale = rate_weights[k] * mse_weights[k];
        a += &ak * ak.adjoint() * Complex64::from(scale);
        b.set_column(k, &(&ak * Complex64::from(scale)));
    }
    // Symmetrize away accumulation roundoff.
    let a = (&a + a.adjoint()) * Complex64::from(0.5);
    Ok((a, b))
}

/// Result of the power-constrained least-squares solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderUpdate {
    pub precoder: DMatrix<Complex64>,
    /// KKT multiplier of the power constraint (0 when inactive).
    pub multiplier: f64,
    /// Bracketing plus bisection iterations spent.
    pub bisect_iters: u32,
}

/// Solves `min_F sum_k ||...||` whose stationarity condition is
/// `(A + lambda I) F = B` subject to `||F||_F^2 <= power`.
///
/// The unconstrained solution (`lambda = 0`) is returned when feasible;
/// otherwise `lambda` is found on the monotone power curve
/// `phi(lambda) = ||(A + lambda I)^{-1} B||_F^2` by doubling from 1 until
/// bracketed, then bisection. The returned iterate is always taken from
/// the feasible side of the bracket, so `||F||_F^2 <= power` holds
/// exactly; the bisection is run to well below `bisect_tol` so the budget
/// shortfall stays far inside every downstream slack.
pub fn power_constrained_solve(
    a: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
    power: f64,
    bisect_tol: f64,
    bisect_max: u32,
) -> Result<PrecoderUpdate> {
    if !(power > 0.0) || !power.is_finite() {
        return Err(invalid("power: must be positive and finite"));
    }
    if a.nrows() != a.ncols() || a.nrows() != b.nrows() {
        return Err(invalid("power solve: A must be square and conform with B"));
    }
    let nt = a.nrows();
    if b.norm() == 0.0 {
        return Ok(PrecoderUpdate {
            precoder: DMatrix::zeros(nt, b.ncols()),
            multiplier: 0.0,
            bisect_iters: 0,
        });
    }

    let eig = SymmetricEigen::try_new(a.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| numeric("power solve: eigendecomposition did not converge"))?;
    let evs: Vec<f64> = eig.eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    let btil = eig.eigenvectors.adjoint() * b;
    let row_energy: Vec<f64> = (0..nt)
        .map(|i| btil.row(i).iter().map(|z| z.norm_sqr()).sum())
        .collect();

    let phi = |lambda: f64| -> f64 {
        let mut p = 0.0;
        for i in 0..nt {
            if row_energy[i] > 0.0 {
                let d = evs[i] + lambda;
                p += row_energy[i] / (d * d);
            }
        }
        p
    };

    let assemble = |lambda: f64| -> DMatrix<Complex64> {
        let mut scaled = btil.clone();
        for i in 0..nt {
            let s = if row_energy[i] > 0.0 {
                Complex64::from(1.0 / (evs[i] + lambda))
            } else {
                Complex64::from(0.0)
            };
            for j in 0..scaled.ncols() {
                scaled[(i, j)] *= s;
            }
        }
        &eig.eigenvectors * scaled
    };

    let mut iters = 0u32;
    if phi(0.0) <= power {
        return Ok(PrecoderUpdate {
            precoder: assemble(0.0),
            multiplier: 0.0,
            bisect_iters: 0,
        });
    }

    // Bracket the active constraint: phi is strictly decreasing.
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while phi(hi) >= power {
        lo = hi;
        hi *= 2.0;
        iters += 1;
        if iters > bisect_max {
            return Err(numeric("power solve: failed to bracket the multiplier"));
        }
    }

    // Bisect until the feasible side sits within a sliver of the budget.
    // Tighter than bisect_tol on purpose: the phase of the returned
    // precoder must not perturb the monotone objective sequence.
    let inner_tol = bisect_tol.min(1e-12);
    let mut lambda = hi;
    while iters < bisect_max {
        if power - phi(lambda) <= inner_tol * power {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // bracket collapsed to machine precision
        }
        if phi(mid) > power {
            lo = mid;
        } else {
            hi = mid;
        }
        lambda = hi;
        iters += 1;
    }

    let achieved = phi(lambda);
    if (achieved - power).abs() > bisect_tol * power {
        return Err(numeric("power solve: bisection did not reach tolerance"));
    }
    Ok(PrecoderUpdate {
        precoder: assemble(lambda),
        multiplier: lambda,
        bisect_iters: iters,
    })
}

/// Precoder block (spec block B): rebuilds the normal system from the
/// current receivers/weights and solves under the power budget.
pub fn update_precoder(
    heffs: &[DMatrix<Complex64>],
    receivers: &[DVector<Complex64>],
    mse_weights: &[f64],
    rate_weights: &[f64],
    power: f64,
    bisect_tol: f64,
    bisect_max: u32,
) -> Result<PrecoderUpdate> {
    let (a, b) = precoder_normal_system(heffs, receivers, mse_weights, rate_weights)?;
    power_constrained_solve(&a, &b, power, bisect_tol, bisect_max)
}

// ---------------------------------------------------------------------------
// block (C): reflection phases

/// Ascent gradient of the negated surrogate objective with respect to one
/// panel's reflection coefficients, holding receivers, weights and
/// precoder fixed.
///
/// Convention: `g` is scaled so a perturbation `du` changes the objective
/// by `Re(g^H du)` to first order (twice the bare Wirtinger derivative
/// with respect to `conj(u)`). This makes the backtracking minorizer
/// `Re(g^H du) - L/2 ||du||^2` tangent to the objective, so the accepted
/// curvature estimate is the honest one. For element phases the
/// directional derivative is `d f / d theta_m = Im(g_m conj(u_m))`.
pub fn ris_gradient(
    channels: &ChannelSet,
    phases: &[PhaseVector],
    active_sets: &[PanelSet],
    precoder: &DMatrix<Complex64>,
    receivers: &[DVector<Complex64>],
    mse_weights: &[f64],
    rate_weights: &[f64],
    panel: usize,
) -> Result<DVector<Complex64>> {
    if panel >= channels.dims.panels {
        return Err(invalid("ris_gradient: panel index out of range"));
    }
    let heffs = effective_channels(channels, phases, active_sets)?;
    let served: Vec<usize> = (0..channels.dims.users)
        .filter(|k| active_sets[*k].contains(&panel))
        .collect();
    panel_gradient(
        channels,
        &heffs,
        precoder,
        receivers,
        mse_weights,
        rate_weights,
        panel,
        &served,
    )
}

/// Gradient assembly on precomputed effective channels, restricted to the
/// users whose active set contains `panel`. Uses the rank-one structure of
/// the per-user terms: the full matrix expression collapses to
/// `g = sum_k w_k W_k (H_ru^H u_k) .* conj(G (f_k - F F^H H_k^H u_k))`.
#[allow(clippy::too_many_arguments)]
fn panel_gradient(
    channels: &ChannelSet,
    heffs: &[DMatrix<Complex64>],
    precoder: &DMatrix<Complex64>,
    receivers: &[DVector<Complex64>],
    mse_weights: &[f64],
    rate_weights: &[f64],
    panel: usize,
    served: &[usize],
) -> Result<DVector<Complex64>> {
    let ni = channels.dims.elements_per_panel;
    let mut g = DVector::<Complex64>::zeros(ni);
    for &k in served {
        if k >= heffs.len() || k >= receivers.len() {
            return Err(invalid("ris_gradient: user index out of range"));
        }
        let u = &receivers[k];
        let t = heffs[k].adjoint() * u;
        let r = precoder.column(k).clone_owned() - precoder * (precoder.adjoint() * &t);
        let x = channels.panel_to_ue[panel][k].adjoint() * u;
        let y = &channels.bs_to_panel[panel] * r;
        // Factor 2: see the scaling convention on `ris_gradient`.
        let scale = 2.0 * rate_weights[k] * mse_weights[k];
        for m in 0..ni {
            g[m] += Complex64::from(scale) * x[m] * y[m].conj();
        }
    }
    Ok(g)
}

/// Closed-form maximizer of the phase minorizer: each element aligns with
/// `c = g + L u`; zero entries of `c` keep their previous phase.
pub fn phase_align_update(
    phase: &PhaseVector,
    gradient: &DVector<Complex64>,
    lipschitz: f64,
) -> PhaseVector {
    let n = phase.len();
    let mut out = DVector::<Complex64>::zeros(n);
    for m in 0..n {
        let c = gradient[m] + Complex64::from(lipschitz) * phase[m];
        let cn = c.norm();
        out[m] = if cn == 0.0 { phase[m] } else { c / cn };
    }
    PhaseVector::new(out).expect("normalized elements are unit modulus")
}

/// Numerical slack for the minorizer acceptance test, relative to the
/// magnitude of the objective. Only rescues roundoff-scale failures near
/// stationarity; genuine curvature violations exceed it by orders.
fn accept_slack(f_ref: f64) -> f64 {
    1e-12 * (1.0 + f_ref.abs())
}

/// One panel's phase step with backtracking curvature search.
///
/// Proposes `phase_align_update(u, g, L)` and accepts once the ascent
/// value function satisfies the minorizer inequality
/// `f(u+) >= f(u) + Re(g^H (u+ - u)) - L/2 ||u+ - u||^2`; otherwise the
/// curvature estimate grows by `eta` and the step is retried. The accepted
/// step can never decrease `f` beyond roundoff because the minorizer is
/// nonnegative at its own maximizer. Returns the new phases, the final
/// curvature estimate (kept for warm-starting the next sweep) and the
/// number of retries.
pub fn backtrack_phase_update<F>(
    value_fn: F,
    phase: &PhaseVector,
    gradient: &DVector<Complex64>,
    lipschitz: f64,
    eta: f64,
    cap: u32,
) -> Result<(PhaseVector, f64, u32)>
where
    F: Fn(&PhaseVector) -> f64,
{
    if !(lipschitz > 0.0) || !(eta > 1.0) {
        return Err(invalid("backtracking: lipschitz must be positive and eta exceed 1"));
    }
    let f_base = value_fn(phase);
    let mut l = lipschitz;
    for retry in 0..=cap {
        let candidate = phase_align_update(phase, gradient, l);
        let delta = candidate.as_vector() - phase.as_vector();
        let q = gradient.dotc(&delta).re - 0.5 * l * delta.norm_squared();
        let f_new = value_fn(&candidate);
        if f_new >= f_base + q - accept_slack(f_base) {
            return Ok((candidate, l, retry));
        }
        l *= eta;
    }
    Err(numeric("backtracking: retry cap exhausted"))
}

// ---------------------------------------------------------------------------
// outer loop

/// Builds a feasible starting point: phases per `config.phase_init`, the
/// precoder matched to each user's effective channel (column `k` matched
/// to receive antenna `k mod ue_antennas`) and scaled to the full power
/// budget, unit MSE weights and zero receivers.
pub fn initial_state<R: Rng + ?Sized>(
    channels: &ChannelSet,
    active_sets: &[PanelSet],
    power: f64,
    config: &CrpaConfig,
    rng: &mut R,
) -> Result<OptimizerState> {
    let dims = &channels.dims;
    config.validate(dims.users)?;
    if !(power > 0.0) || !power.is_finite() {
        return Err(invalid("power: must be positive and finite"));
    }
    if active_sets.len() != dims.users {
        return Err(invalid("active_sets: one panel set per user required"));
    }
    for set in active_sets {
        if set.iter().any(|&i| i >= dims.panels) {
            return Err(invalid("active_sets: panel index out of range"));
        }
    }
    let ni = dims.elements_per_panel;
    let phases: Vec<PhaseVector> = (0..dims.panels)
        .map(|_| match config.phase_init {
            PhaseInit::Random => PhaseVector::random(ni, rng),
            PhaseInit::AllOnes => PhaseVector::all_ones(ni),
        })
        .collect();

    let heffs = effective_channels(channels, &phases, active_sets)?;
    let mut precoder = DMatrix::<Complex64>::zeros(dims.bs_antennas, dims.users);
    for k in 0..dims.users {
        let col = heffs[k].adjoint().column(k % dims.ue_antennas).clone_owned();
        precoder.set_column(k, &col);
    }
    let norm = precoder.norm();
    if norm > 0.0 {
        precoder *= Complex64::from(power.sqrt() / norm);
    }

    Ok(OptimizerState {
        precoder,
        receivers: vec![DVector::zeros(dims.ue_antennas); dims.users],
        mse_weights: vec![1.0; dims.users],
        phases,
        multiplier: 0.0,
        lipschitz: vec![config.l_init; dims.panels],
    })
}

/// Full optimizer sweep; see the module docs for the block structure.
///
/// Runs up to `config.max_iter` outer iterations, each sweeping blocks
/// (A), (B) and then every panel of block (C) in index order, and stops
/// early once the relative sum-rate improvement of an iteration falls
/// below `config.eps`.
pub fn crpa_run(
    channels: &ChannelSet,
    active_sets: &[PanelSet],
    power: f64,
    noise_var: f64,
    config: &CrpaConfig,
    state: OptimizerState,
) -> Result<(OptimizerState, IterationTrace)> {
    crpa_run_observed(channels, active_sets, power, noise_var, config, state, |_| {})
}

/// `crpa_run` with a per-iteration observer for diagnostics.
pub fn crpa_run_observed<Obs>(
    channels: &ChannelSet,
    active_sets: &[PanelSet],
    power: f64,
    noise_var: f64,
    config: &CrpaConfig,
    mut state: OptimizerState,
    mut observer: Obs,
) -> Result<(OptimizerState, IterationTrace)>
where
    Obs: FnMut(&IterationStats),
{
    let dims = &channels.dims;
    config.validate(dims.users)?;
    check_noise_var(noise_var)?;
    if !(power > 0.0) || !power.is_finite() {
        return Err(invalid("power: must be positive and finite"));
    }
    let weights = config.resolved_weights(dims.users)?;
    if state.phases.len() != dims.panels || state.precoder.ncols() != dims.users {
        return Err(invalid("optimizer state: shape does not match the scenario"));
    }

    // Users served by each panel under the assumed sets.
    let served_by: Vec<Vec<usize>> = (0..dims.panels)
        .map(|i| {
            (0..dims.users)
                .filter(|k| active_sets[*k].contains(&i))
                .collect()
        })
        .collect();

    let mut trace = IterationTrace {
        wsr: Vec::new(),
        wmmse_obj: Vec::new(),
        backtrack_counts: Vec::new(),
        converged_at: None,
    };

    let mut heffs = effective_channels(channels, &state.phases, active_sets)?;
    let mut entry_wsr = wsr_from_effective(&heffs, &state.precoder, noise_var, &weights)?;

    for iter in 0..config.max_iter {
        // (A) receivers and weights.
        let ru = update_receivers_weights_from_effective(&heffs, &state.precoder, noise_var)?;
        state.receivers = ru.receivers;
        state.mse_weights = ru.mse_weights;
        let weighted_log_w_sum = state
            .mse_weights
            .iter()
            .zip(weights.iter())
            .map(|(w, om)| om * w.ln())
            .sum::<f64>();

        // (B) precoder under the power budget.
        let pu = update_precoder(
            &heffs,
            &state.receivers,
            &state.mse_weights,
            &weights,
            power,
            config.bisect_tol,
            config.bisect_max,
        )?;
        state.precoder = pu.precoder;
        state.multiplier = pu.multiplier;
        let precoder_power = state.precoder.norm_squared();

        // (C) panel-by-panel phase alignment.
        let mut counts = vec![0u32; dims.panels];
        let mut max_phase_err = 0.0f64;
        if config.optimize_phases {
            for panel in 0..dims.panels {
                let served = &served_by[panel];
                if served.is_empty() {
                    continue;
                }
                let g = panel_gradient(
                    channels,
                    &heffs,
                    &state.precoder,
                    &state.receivers,
                    &state.mse_weights,
                    &weights,
                    panel,
                    served,
                )?;

                // Ascent value function: negated surrogate restricted to the
                // users this panel serves (other terms are constant in u_i).
                let base: Vec<(usize, DMatrix<Complex64>)> =
                    served.iter().map(|&k| (k, heffs[k].clone())).collect();
                let u_old = state.phases[panel].clone();
                let value_fn = |u_new: &PhaseVector| -> f64 {
                    let mut j = 0.0;
                    for (k, h_base) in &base {
                        let h_trial =
                            apply_phase_delta(channels, panel, *k, h_base, &u_old, u_new);
                        let e = mse_value(&h_trial, &state.precoder, &state.receivers[*k], noise_var, *k);
                        j += weights[*k] * (state.mse_weights[*k] * e - state.mse_weights[*k].ln());
                    }
                    -j
                };

                // Warm-start one notch below the carried estimate so the
                // step size can recover after a high-curvature transient;
                // a rejected try immediately restores it.
                let l_start = (state.lipschitz[panel] / config.eta).max(1e-12);
                let (u_next, l_next, retries) = backtrack_phase_update(
                    value_fn,
                    &state.phases[panel],
                    &g,
                    l_start,
                    config.eta,
                    config.backtrack_cap,
                )?;
                // Commit: shift the affected effective channels by the
                // accepted phase delta.
                for &k in served {
                    heffs[k] = apply_phase_delta(
                        channels,
                        panel,
                        k,
                        &heffs[k],
                        &state.phases[panel],
                        &u_next,
                    );
                }
                max_phase_err = max_phase_err.max(u_next.max_modulus_error());
                state.phases[panel] = u_next;
                state.lipschitz[panel] = l_next;
                counts[panel] = retries;
            }
            // Re-sync from scratch so incremental roundoff cannot accumulate
            // across iterations.
            heffs = effective_channels(channels, &state.phases, active_sets)?;
        }

        let wsr_now = wsr_from_effective(&heffs, &state.precoder, noise_var, &weights)?;
        let j_now = wmmse_objective_from_effective(
            &heffs,
            &state.precoder,
            &state.receivers,
            &state.mse_weights,
            noise_var,
            &weights,
        );
        let total_backtracks: u32 = counts.iter().sum();
        trace.wsr.push(wsr_now);
        trace.wmmse_obj.push(j_now);
        trace.backtrack_counts.push(counts);

        observer(&IterationStats {
            iter,
            entry_wsr,
            weighted_log_w_sum,
            precoder_power,
            multiplier: state.multiplier,
            max_phase_modulus_err: max_phase_err,
            wsr: wsr_now,
            wmmse_obj: j_now,
            backtracks: total_backtracks,
        });

        let rel = (wsr_now - entry_wsr) / entry_wsr.abs().max(1e-12);
        if rel < config.eps {
            trace.converged_at = Some(iter);
            break;
        }
        entry_wsr = wsr_now;
    }

    Ok((state, trace))
}

/// Replays one panel's phase change onto an effective channel:
/// `H(u_new) = H(u_old) + H_ru diag(u_new - u_old) G`.
fn apply_phase_delta(
    channels: &ChannelSet,
    panel: usize,
    user: usize,
    h_base: &DMatrix<Complex64>,
    u_old: &PhaseVector,
    u_new: &PhaseVector,
) -> DMatrix<Complex64> {
    let hr = &channels.panel_to_ue[panel][user];
    let mut scaled = hr.clone();
    for j in 0..scaled.ncols() {
        let d = u_new[j] - u_old[j];
        scaled.column_mut(j).apply(|z| *z *= d);
    }
    h_base + scaled * &channels.bs_to_panel[panel]
}
