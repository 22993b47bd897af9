//! Worst-case robust beamforming under norm-bounded CSI errors: S-procedure
//! LMIs in the vectorised channel, SDR-based block coordinate descent over
//! `(W, V)`, Gaussian randomisation, and sampling/exact worst-case oracles.
//!
//! Every LMI is written in a reduced basis. With `V = Q Λ Q^H` the
//! uncertainty `ΔR Q` ranges over the same Frobenius ball as `ΔR`, so the
//! transmit block only needs an LMI of order `N_t·rank(V) + 1`; the phase
//! block likewise uses `W = P Σ P^H` and order `rank(W)·(M+1) + 1`. Both are
//! exact for the given rank, and discarding negligible eigenvalues only
//! tightens the constraint.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{cscg, sample_sphere, CsiEstimate};
use crate::conic::{linear_combination, sum, Affine, ComplexAffine, ConicProblem};
use crate::linalg::{hermitian_eigen, hermitian_part, kron, outer, spectral_norm, vectorize, CMat, CVec, C64, ONE};
use crate::optim_perfect::{
    closed_form_slacks, penalty_linearization, solver_gave_up, project_unit_modulus, rank_one_gap,
    PenaltyForm, SlackState, WhitenedChannels,
};
use crate::protocol::{extend_phases, BeamformingSolution};
use crate::{Error, Result};

/// Per-actuator uncertainty radii in whitened units.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintySpec {
    /// `δ_k = √(δ_G,k² + δ_hd,k²)`.
    pub radius: Vec<f64>,
    pub direct_radius: Vec<f64>,
    pub cascaded_radius: Vec<f64>,
    pub ratio: f64,
}

impl UncertaintySpec {
    pub fn new(direct_radius: Vec<f64>, cascaded_radius: Vec<f64>, ratio: f64) -> Result<Self> {
        if direct_radius.len() != cascaded_radius.len() {
            return Err(Error::dim("radius lists differ in length"));
        }
        if direct_radius.iter().chain(&cascaded_radius).any(|r| !(*r >= 0.0)) {
            return Err(Error::domain("uncertainty radii must be nonnegative"));
        }
        let radius = direct_radius
            .iter()
            .zip(&cascaded_radius)
            .map(|(d, g)| d.hypot(*g))
            .collect();
        Ok(Self {
            radius,
            direct_radius,
            cascaded_radius,
            ratio,
        })
    }

    /// Radii of `estimate` rescaled to the whitening of `chan`.
    pub fn from_estimate(estimate: &CsiEstimate, chan: &WhitenedChannels) -> Result<Self> {
        if estimate.radius.len() != chan.actuators() {
            return Err(Error::dim("estimate and channels disagree on K"));
        }
        let g = chan.gain;
        Self::new(
            estimate.direct_radius.iter().map(|r| r * g).collect(),
            estimate.cascaded_radius.iter().map(|r| r * g).collect(),
            estimate.uncertainty_ratio,
        )
    }

    /// Single aggregate radius `κ‖R̂_k‖_F` per actuator.
    pub fn from_ratio(chan: &WhitenedChannels, ratio: f64) -> Result<Self> {
        let k = chan.actuators();
        Self::new(
            vec![0.0; k],
            chan.stacked.iter().map(|r| ratio * r.norm()).collect(),
            ratio,
        )
    }

    pub fn is_exact(&self) -> bool {
        self.radius.iter().all(|&r| r == 0.0)
    }
}

/// Column-major `vec(R̂)`.
pub fn vectorize_effective(r: &CMat) -> CVec {
    vectorize(r)
}

/// `[[μI + A, A r̂], [r̂^H A, r̂^H A r̂ − μδ² − rhs]] ⪰ 0` for a Hermitian
/// matrix expression `A` of order `n`. With `δ = 0` the block collapses to
/// the scalar condition `r̂^H A r̂ ≥ rhs`.
pub fn build_lmi<F>(
    prob: &mut ConicProblem,
    n: usize,
    a: F,
    r_hat: &CVec,
    delta: f64,
    rhs: &Affine,
    mu: &Affine,
) -> Result<()>
where
    F: Fn(usize, usize) -> ComplexAffine,
{
    if r_hat.len() != n {
        return Err(Error::dim(format!("r̂ has length {}, LMI block needs {n}", r_hat.len())));
    }
    if !(delta >= 0.0) {
        return Err(Error::domain("uncertainty radius must be nonnegative"));
    }
    let coefs: Vec<C64> = r_hat.iter().copied().collect();
    let ar: Vec<ComplexAffine> = (0..n)
        .map(|i| {
            let row: Vec<ComplexAffine> = (0..n).map(|j| a(i, j)).collect();
            linear_combination(&coefs, &row)
        })
        .collect();
    let conj: Vec<C64> = coefs.iter().map(|c| c.conj()).collect();
    let quad = linear_combination(&conj, &ar).re;
    if delta == 0.0 {
        prob.nonneg(quad - rhs.clone());
        return Ok(());
    }
    let mut corner = quad - rhs.clone();
    corner.add_scaled(mu, -delta * delta);
    prob.psd(n + 1, |i, j| {
        if j < n {
            let mut e = a(i, j);
            if i == j {
                e.re.add_scaled(mu, 1.0);
            }
            e
        } else if i < n {
            ar[i].clone()
        } else {
            ComplexAffine::real(corner.clone())
        }
    });
    Ok(())
}

/// Columns of an eigenbasis whose eigenvalues exceed `cutoff · λ_max`.
fn dominant_subspace(m: &CMat, cutoff: f64) -> (Vec<f64>, CMat) {
    let (values, vectors) = hermitian_eigen(m);
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let keep: Vec<usize> = (0..values.len())
        .filter(|&i| top > 0.0 && values[i] > cutoff * top)
        .collect();
    let mut basis = CMat::zeros(m.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        basis.set_column(c, &vectors.column(i));
    }
    (keep.iter().map(|&i| values[i]).collect(), basis)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BcdConfig {
    pub smoothing: f64,
    pub tolerance: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub decode_margin: f64,
    pub decoded_tol: f64,
    /// Gaussian randomisation draws.
    pub candidates: usize,
    /// Eigenvalues below `rank_cutoff · λ_max` are dropped from LMI bases.
    pub rank_cutoff: f64,
    /// Rank penalty factor `ρ` for the penalised variant.
    pub initial_penalty: f64,
    pub penalty_shrink: f64,
    pub penalty_floor: f64,
    /// Start from `V = I`; otherwise from a random rank-one phase lift.
    pub identity_start: bool,
}

impl Default for BcdConfig {
    fn default() -> Self {
        Self {
            smoothing: 1e-3,
            tolerance: 1e-4,
            max_outer: 30,
            max_inner: 10,
            decode_margin: 1e-5,
            decoded_tol: 1e-6,
            candidates: 200,
            rank_cutoff: 1e-9,
            initial_penalty: 1.0,
            penalty_shrink: 0.5,
            penalty_floor: 1e-6,
            identity_start: true,
        }
    }
}

/// Block-coordinate-descent iterate in whitened units (`Tr W ≤ 1`).
#[derive(Clone, Debug)]
pub struct BcdState {
    pub transmit: CMat,
    pub phases: CMat,
    pub slack_state: SlackState,
    pub multipliers: Vec<f64>,
    pub outer_iter: usize,
    /// Log-sum merit (times `ρ`, plus rank gaps, when penalised) after every
    /// block update.
    pub objective_trace: Vec<f64>,
    pub penalty: Option<f64>,
}

impl BcdState {
    pub fn merit(&self) -> f64 {
        match self.penalty {
            None => self.slack_state.merit(),
            Some(rho) => rho * self.slack_state.merit() + rank_one_gap(&self.transmit) + rank_one_gap(&self.phases),
        }
    }
}

/// Exact minimum of `x^H A x + 2 Re(b^H x) + c` over `‖x‖ ≤ radius` for
/// `A ⪰ 0`, via the secular equation. Returns the value and a minimiser.
pub fn ball_minimum(a: &CMat, b: &CVec, c: f64, radius: f64) -> (f64, CVec) {
    let n = b.len();
    let (values, vectors) = hermitian_eigen(a);
    let lam: Vec<f64> = values.iter().map(|v| v.max(0.0)).collect();
    let beta = vectors.adjoint() * b;
    let top = lam.first().copied().unwrap_or(0.0);
    let tiny = 1e-13 * top.max(1e-300);
    let x_of = |shift: f64| -> CVec {
        let y = CVec::from_fn(n, |i, _| {
            let d = lam[i] + shift;
            if d > tiny {
                -beta[i] / d
            } else {
                C64::from(0.0)
            }
        });
        &vectors * y
    };
    let eval = |x: &CVec| (x.adjoint() * a * x)[(0, 0)].re + 2.0 * b.dotc(x).re + c;
    // Interior candidate: pseudo-inverse solution, valid when b has no
    // component in the null space of A.
    let null_mass: f64 = (0..n).filter(|&i| lam[i] <= tiny).map(|i| beta[i].norm_sqr()).sum();
    if null_mass <= 1e-24 * b.norm_squared().max(1e-300) {
        let x = x_of(0.0);
        if x.norm() <= radius {
            return (eval(&x), x);
        }
    }
    if radius == 0.0 {
        return (c, CVec::zeros(n));
    }
    let norm_at = |shift: f64| -> f64 {
        (0..n)
            .map(|i| beta[i].norm_sqr() / (lam[i] + shift).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let mut lo = 0.0_f64;
    let mut hi = b.norm() / radius;
    if hi == 0.0 {
        return (c, CVec::zeros(n));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm_at(mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x = x_of(hi);
    // Land exactly on the sphere; the bracket end satisfies ‖x‖ ≤ δ.
    let nx = x.norm();
    let x = if nx > 0.0 { &x * C64::from(radius / nx) } else { x };
    (eval(&x), x)
}

/// `min_{‖Δ‖_F ≤ δ} Tr(W (R̂+Δ) V (R̂+Δ)^H)`.
pub fn worst_case_snr_exact(w: &CMat, v: &CMat, r_hat: &CMat, delta: f64) -> f64 {
    let a = kron(&v.transpose(), w);
    let r = vectorize(r_hat);
    let b = &a * &r;
    let c = r.dotc(&b).re;
    ball_minimum(&hermitian_part(&a), &b, c, delta).0
}

/// `(|w^H R̂ v| − δ‖w‖‖v‖)₊²`, the exact worst case for a rank-one pair.
pub fn robust_snr(w: &CVec, v_ext: &CVec, r_hat: &CMat, delta: f64) -> f64 {
    let nominal = w.dotc(&(r_hat * v_ext)).norm();
    (nominal - delta * w.norm() * v_ext.norm()).max(0.0).powi(2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorstCase {
    pub passed: bool,
    pub worst_snr: f64,
    pub worst_error: CMat,
}

/// Sampling oracle for `Tr(W (R̂+Δ) V (R̂+Δ)^H) ≥ required` over
/// `‖Δ‖_F ≤ δ`: uniform points on the boundary sphere, then projected
/// gradient descent from the best sample and from the steepest-descent
/// direction at `Δ = 0`.
pub fn worst_case_check_lifted<R: Rng + ?Sized>(
    w: &CMat,
    v: &CMat,
    r_hat: &CMat,
    delta: f64,
    required: f64,
    num_samples: usize,
    rng: &mut R,
) -> WorstCase {
    let (rows, cols) = r_hat.shape();
    let f = |d: &CMat| {
        let r = r_hat + d;
        crate::linalg::re_trace_product(w, &(&r * v * r.adjoint()))
    };
    let mut worst_error = CMat::zeros(rows, cols);
    let mut worst = f(&worst_error);
    if delta > 0.0 {
        for _ in 0..num_samples {
            let d = sample_sphere(rows, cols, delta, rng);
            let val = f(&d);
            if val < worst {
                worst = val;
                worst_error = d;
            }
        }
        let lipschitz = (spectral_norm(w) * spectral_norm(v)).max(1e-300);
        let grad = |d: &CMat| w * (r_hat + d) * v;
        let g0 = grad(&CMat::zeros(rows, cols));
        let mut starts = vec![worst_error.clone()];
        if g0.norm() > 0.0 {
            starts.push(&g0 * C64::from(-delta / g0.norm()));
        }
        for mut d in starts {
            for _ in 0..500 {
                let step = &d - grad(&d) * C64::from(1.0 / lipschitz);
                let n = step.norm();
                d = if n > delta { step * C64::from(delta / n) } else { step };
            }
            let val = f(&d);
            if val < worst {
                worst = val;
                worst_error = d;
            }
        }
    }
    WorstCase {
        passed: worst >= required - 1e-6,
        worst_snr: worst,
        worst_error,
    }
}

/// [`worst_case_check_lifted`] for a transmit vector and IRS phases.
pub fn worst_case_check<R: Rng + ?Sized>(
    w: &CVec,
    phases: &CVec,
    r_hat: &CMat,
    delta: f64,
    required: f64,
    num_samples: usize,
    rng: &mut R,
) -> WorstCase {
    worst_case_check_lifted(&outer(w), &outer(&extend_phases(phases)), r_hat, delta, required, num_samples, rng)
}

/// Robust slack `max(γ − min_Δ SNR_k, 0)` for a lifted pair.
pub fn robust_slacks(chan: &WhitenedChannels, spec: &UncertaintySpec, w: &CMat, v: &CMat, target: f64) -> Vec<f64> {
    let snrs: Vec<f64> = chan
        .stacked
        .iter()
        .zip(&spec.radius)
        .map(|(r, &d)| {
            if d == 0.0 {
                crate::linalg::re_trace_product(w, &(r * v * r.adjoint()))
            } else {
                worst_case_snr_exact(w, v, r, d)
            }
        })
        .collect();
    closed_form_slacks(target, &snrs)
}

/// Output of one SDP block.
#[derive(Clone, Debug)]
pub struct BlockSdp {
    pub matrix: CMat,
    pub slack: Vec<f64>,
    pub multipliers: Vec<f64>,
}

fn slack_objective(prob: &mut ConicProblem, slack: &SlackState) -> (Vec<Affine>, Affine, f64) {
    let k = slack.slack.len();
    let q = prob.reals(k);
    prob.nonneg_many(q.clone());
    let top = slack.weights.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let weighted: Vec<Affine> = q.iter().zip(&slack.weights).map(|(qk, w)| qk * *w).collect();
    let weighted = sum(&weighted);
    if slack.within_budget() {
        prob.le(&weighted, &Affine::constant((k as f64 - 1.0).max(0.0)));
    }
    (q, weighted * (1.0 / top), top)
}

/// Transmit block for fixed `V`: `min Σ ω_k q_k` over `W ⪰ 0`, `Tr W ≤ 1`,
/// `q ⪰ 0`, `μ ⪰ 0` and one LMI per actuator.
pub fn solve_bcd_transmit(
    chan: &WhitenedChannels,
    spec: &UncertaintySpec,
    v: &CMat,
    slack: &SlackState,
    target: f64,
    rank_cutoff: f64,
    penalty: Option<&PenaltyForm>,
) -> Result<BlockSdp> {
    let nt = chan.antennas;
    if v.shape() != (chan.elements + 1, chan.elements + 1) {
        return Err(Error::dim("V does not match the channel"));
    }
    let (lam, q_basis) = dominant_subspace(v, rank_cutoff);
    let r = lam.len();
    let mut prob = ConicProblem::new();
    let (q, mut objective, top) = slack_objective(&mut prob, slack);
    let w = prob.hermitian(nt);
    let mu = prob.reals(chan.actuators());
    prob.psd_var(&w);
    prob.le(&w.trace(), &Affine::constant(1.0));
    prob.nonneg_many(mu.clone());
    for (k, rk) in chan.stacked.iter().enumerate() {
        let r_hat = vectorize(&(rk * &q_basis));
        let rhs = Affine::constant(target) - q[k].clone();
        // (Λ ⊗ W) in vec(N_t × r) coordinates.
        let entry = |i: usize, j: usize| {
            let (a, ii) = (i / nt, i % nt);
            let (b, jj) = (j / nt, j % nt);
            if a == b {
                let mut e = w.entry(ii, jj);
                e.re = e.re.scale(lam[a]);
                e.im = e.im.scale(lam[a]);
                e
            } else {
                ComplexAffine::default()
            }
        };
        build_lmi(&mut prob, nt * r, entry, &r_hat, spec.radius[k], &rhs, &mu[k])?;
    }
    if let Some(p) = penalty {
        objective.add_scaled(&p.expression(&w), 1.0 / top);
    }
    prob.minimize(objective);
    let sol = prob.solve()?;
    sol.require_optimal("robust transmit block")?;
    Ok(BlockSdp {
        matrix: hermitian_part(&sol.hermitian(&w)),
        slack: q.iter().map(|a| sol.value(a).max(0.0)).collect(),
        multipliers: mu.iter().map(|a| sol.value(a).max(0.0)).collect(),
    })
}

/// Phase block for fixed `W`: as the transmit block with `diag V = 1`.
pub fn solve_bcd_phases(
    chan: &WhitenedChannels,
    spec: &UncertaintySpec,
    w: &CMat,
    slack: &SlackState,
    target: f64,
    rank_cutoff: f64,
    penalty: Option<&PenaltyForm>,
) -> Result<BlockSdp> {
    let n = chan.elements + 1;
    if w.shape() != (chan.antennas, chan.antennas) {
        return Err(Error::dim("W does not match the channel"));
    }
    let (sig, p_basis) = dominant_subspace(w, rank_cutoff);
    let s = sig.len();
    let mut prob = ConicProblem::new();
    let (q, mut objective, top) = slack_objective(&mut prob, slack);
    let v = prob.hermitian(n);
    let mu = prob.reals(chan.actuators());
    prob.psd_var(&v);
    prob.eq_many((0..n).map(|m| v.entry(m, m).re - 1.0).collect());
    prob.nonneg_many(mu.clone());
    for (k, rk) in chan.stacked.iter().enumerate() {
        let r_hat = vectorize(&(p_basis.adjoint() * rk));
        let rhs = Affine::constant(target) - q[k].clone();
        // (V^T ⊗ Σ) in vec(s × (M+1)) coordinates.
        let entry = |i: usize, j: usize| {
            let (a, ii) = (i / s.max(1), i % s.max(1));
            let (b, jj) = (j / s.max(1), j % s.max(1));
            if ii == jj {
                let mut e = v.entry(b, a);
                e.re = e.re.scale(sig[ii]);
                e.im = e.im.scale(sig[ii]);
                e
            } else {
                ComplexAffine::default()
            }
        };
        build_lmi(&mut prob, s * n, entry, &r_hat, spec.radius[k], &rhs, &mu[k])?;
    }
    if let Some(p) = penalty {
        objective.add_scaled(&p.expression(&v), 1.0 / top);
    }
    prob.minimize(objective);
    let sol = prob.solve()?;
    sol.require_optimal("robust phase block")?;
    let mut vm = hermitian_part(&sol.hermitian(&v));
    for m in 0..n {
        vm[(m, m)] = ONE;
    }
    Ok(BlockSdp {
        matrix: vm,
        slack: q.iter().map(|a| sol.value(a).max(0.0)).collect(),
        multipliers: mu.iter().map(|a| sol.value(a).max(0.0)).collect(),
    })
}

#[derive(Clone, Debug)]
pub struct BcdOutcome {
    pub state: BcdState,
    pub converged: bool,
    pub diagnostics: Vec<String>,
    /// Every `(W, V, q)` accepted by an LMI solve, for auditing.
    pub certified: Vec<(CMat, CMat, Vec<f64>)>,
}

fn initial_lifts<R: Rng + ?Sized>(chan: &WhitenedChannels, cfg: &BcdConfig, rng: &mut R) -> (CMat, CMat) {
    let nt = chan.antennas;
    let w = CMat::identity(nt, nt) * C64::from(1.0 / nt as f64);
    let v = if cfg.identity_start {
        CMat::identity(chan.elements + 1, chan.elements + 1)
    } else {
        outer(&extend_phases(&crate::optim_perfect::random_phases(chan.elements, rng)))
    };
    (w, v)
}

/// Alternates the two SDP blocks until the total slack settles. With
/// `penalized`, each block also carries the linearised rank penalty.
pub fn bcd<R: Rng + ?Sized>(
    chan: &WhitenedChannels,
    spec: &UncertaintySpec,
    threshold: f64,
    cfg: &BcdConfig,
    penalized: bool,
    rng: &mut R,
) -> Result<BcdOutcome> {
    if spec.radius.len() != chan.actuators() {
        return Err(Error::dim("one radius per actuator is required"));
    }
    let target = threshold * (1.0 + cfg.decode_margin);
    let (w0, v0) = initial_lifts(chan, cfg, rng);
    let q0 = robust_slacks(chan, spec, &w0, &v0, target);
    let mut state = BcdState {
        transmit: w0,
        phases: v0,
        slack_state: SlackState::new(q0, cfg.smoothing),
        multipliers: vec![0.0; chan.actuators()],
        outer_iter: 0,
        objective_trace: Vec::new(),
        penalty: penalized.then_some(cfg.initial_penalty),
    };
    state.objective_trace.push(state.merit());
    let mut certified = Vec::new();
    let mut diagnostics = Vec::new();
    let mut converged = false;
    while state.outer_iter < cfg.max_outer {
        state.outer_iter += 1;
        let total_before = state.slack_state.total();
        let merit_before = state.merit();
        for block in 0..2 {
            for _ in 0..cfg.max_inner {
                let before = state.merit();
                let penalty = match state.penalty {
                    Some(rho) => Some(penalty_linearization(
                        if block == 0 { &state.transmit } else { &state.phases },
                        rho,
                    )?),
                    None => None,
                };
                let out = if block == 0 {
                    solve_bcd_transmit(chan, spec, &state.phases, &state.slack_state, target, cfg.rank_cutoff, penalty.as_ref())
                } else {
                    solve_bcd_phases(chan, spec, &state.transmit, &state.slack_state, target, cfg.rank_cutoff, penalty.as_ref())
                };
                let out = match out {
                    Err(e) if solver_gave_up(&e) => {
                        diagnostics.push(format!("outer iteration {}: {e}", state.outer_iter));
                        break;
                    }
                    other => other?,
                };
                let (w, v) = if block == 0 {
                    (out.matrix.clone(), state.phases.clone())
                } else {
                    (state.transmit.clone(), out.matrix.clone())
                };
                certified.push((w.clone(), v.clone(), out.slack.clone()));
                let q = robust_slacks(chan, spec, &w, &v, target);
                let mut trial = state.clone();
                trial.transmit = w;
                trial.phases = v;
                trial.slack_state.update(q);
                trial.multipliers = out.multipliers;
                let after = trial.merit();
                if after > before {
                    break;
                }
                state = trial;
                if before - after <= cfg.tolerance {
                    break;
                }
            }
            state.objective_trace.push(state.merit());
        }
        let settled = (state.slack_state.total() - total_before).abs() <= cfg.tolerance;
        if let Some(rho) = state.penalty {
            let rank_one = rank_one_gap(&state.transmit) <= 1e-5 * spectral_norm(&state.transmit)
                && rank_one_gap(&state.phases) <= 1e-5 * spectral_norm(&state.phases);
            if merit_before - state.merit() <= cfg.tolerance {
                if rank_one || rho <= cfg.penalty_floor {
                    converged = rank_one;
                    break;
                }
                state.penalty = Some((rho * cfg.penalty_shrink).max(cfg.penalty_floor));
                state.objective_trace.push(state.merit());
            }
        } else if settled {
            converged = true;
            break;
        }
    }
    if !converged {
        diagnostics.push(format!("BCD stopped after {} outer iterations without settling", state.outer_iter));
    }
    Ok(BcdOutcome {
        state,
        converged,
        diagnostics,
        certified,
    })
}

/// Recovered rank-one design and its robust slacks.
#[derive(Clone, Debug)]
pub struct Randomized {
    pub transmit: CVec,
    pub phases: CVec,
    pub slack: Vec<f64>,
    pub robust_decoded: usize,
    pub from_leading_eigenpair: bool,
}

fn unit_phases_from(v: &CVec) -> CVec {
    let m = v.len() - 1;
    let u = project_unit_modulus(v);
    let anchor = u[m];
    u.rows(0, m).map(|z| z / anchor)
}

fn gaussian_draw<R: Rng + ?Sized>(factor: &CMat, rng: &mut R) -> CVec {
    let e = CVec::from_fn(factor.ncols(), |_, _| cscg(1.0, rng));
    factor * e
}

/// Gaussian randomisation: candidates `U Σ^{1/2} e` for both `V` (phases
/// projected to unit modulus) and `W` (scaled to full power), plus the
/// leading eigenpairs. Candidates are ranked by robustly decoded actuators,
/// then by the weighted slack.
pub fn gaussian_randomization<R: Rng + ?Sized>(
    chan: &WhitenedChannels,
    spec: &UncertaintySpec,
    w: &CMat,
    v: &CMat,
    threshold: f64,
    weights: &[f64],
    cfg: &BcdConfig,
    rng: &mut R,
) -> Randomized {
    let target = threshold * (1.0 + cfg.decode_margin);
    let score = |wv: &CVec, ph: &CVec| {
        let ve = extend_phases(ph);
        let snrs: Vec<f64> = chan
            .stacked
            .iter()
            .zip(&spec.radius)
            .map(|(r, &d)| robust_snr(wv, &ve, r, d))
            .collect();
        let q = closed_form_slacks(target, &snrs);
        let decoded = q.iter().filter(|&&x| x <= cfg.decoded_tol).count();
        let weighted: f64 = q.iter().zip(weights).map(|(a, b)| a * b).sum();
        (decoded, weighted, q)
    };
    let full_power = |x: CVec| {
        let n = x.norm();
        if n > 0.0 {
            x / C64::from(n)
        } else {
            chan.strongest_direct_beam()
        }
    };
    let (_, uw) = crate::linalg::leading_eigenpair(w);
    let (_, uv) = crate::linalg::leading_eigenpair(v);
    let lead_w = full_power(uw);
    let lead_v = unit_phases_from(&uv);
    let (d, s, q) = score(&lead_w, &lead_v);
    let mut best = (d, s, q, lead_w, lead_v, true);
    let w_rank_one = rank_one_gap(w) <= 1e-5 * spectral_norm(w);
    let v_rank_one = rank_one_gap(v) <= 1e-5 * spectral_norm(v);
    if !(w_rank_one && v_rank_one) {
        let fw = crate::linalg::psd_factor(w, 1e-12);
        let fv = crate::linalg::psd_factor(v, 1e-12);
        for _ in 0..cfg.candidates {
            let cv = if v_rank_one { best.4.clone() } else { unit_phases_from(&gaussian_draw(&fv, rng)) };
            let cw = if w_rank_one { best.3.clone() } else { full_power(gaussian_draw(&fw, rng)) };
            let (d, s, q) = score(&cw, &cv);
            if d > best.0 || (d == best.0 && s < best.1) {
                best = (d, s, q, cw, cv, false);
            }
        }
    }
    Randomized {
        robust_decoded: best.0,
        slack: best.2,
        transmit: best.3,
        phases: best.4,
        from_leading_eigenpair: best.5,
    }
}

#[derive(Clone, Debug)]
pub struct RobustOutcome {
    pub solution: BeamformingSolution,
    pub bcd: BcdOutcome,
    pub randomized: Randomized,
    pub iterations: usize,
    pub diagnostics: Vec<String>,
}

/// BCD followed by Gaussian randomisation.
pub fn robust_design(
    chan: &WhitenedChannels,
    spec: &UncertaintySpec,
    threshold: f64,
    cfg: &BcdConfig,
    penalized: bool,
    rng: &mut ChaCha8Rng,
) -> Result<RobustOutcome> {
    let out = bcd(chan, spec, threshold, cfg, penalized, rng)?;
    let rnd = gaussian_randomization(
        chan,
        spec,
        &out.state.transmit,
        &out.state.phases,
        threshold,
        &out.state.slack_state.weights,
        cfg,
        rng,
    );
    let mut diagnostics = out.diagnostics.clone();
    let lifted_decoded = out.state.slack_state.decoded(cfg.decoded_tol);
    if rnd.robust_decoded < lifted_decoded {
        diagnostics.push(format!(
            "randomisation kept {} of {} robustly decoded actuators",
            rnd.robust_decoded, lifted_decoded
        ));
    }
    Ok(RobustOutcome {
        solution: chan.to_solution(&rnd.transmit, &rnd.phases),
        iterations: out.state.outer_iter,
        bcd: out,
        randomized: rnd,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cvec, re_trace_product};
    use rand::SeedableRng;

    fn random_cmat(r: usize, c: usize, rng: &mut ChaCha8Rng) -> CMat {
        CMat::from_fn(r, c, |_, _| cscg(1.0, rng))
    }

    fn random_psd(n: usize, rng: &mut ChaCha8Rng) -> CMat {
        let a = random_cmat(n, n, rng);
        &a * a.adjoint()
    }

    #[test]
    fn vectorize_known_matrix() {
        let m = CMat::from_row_slice(2, 2, &[C64::from(1.0), C64::from(2.0), C64::from(3.0), C64::from(4.0)]);
        let v = vectorize_effective(&m);
        let expect = cvec(&[C64::from(1.0), C64::from(3.0), C64::from(2.0), C64::from(4.0)]);
        assert_eq!(v, expect);
    }

    #[test]
    fn kronecker_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let r = random_cmat(3, 4, &mut rng);
            let w = random_psd(3, &mut rng);
            let v = random_psd(4, &mut rng);
            let rv = vectorize(&r);
            let lhs = rv.dotc(&(kron(&v.transpose(), &w) * &rv)).re;
            let rhs = re_trace_product(&w, &(&r * &v * r.adjoint()));
            assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs());
        }
    }

    #[test]
    fn ball_minimum_matches_sampling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = random_psd(3, &mut rng);
            let b = CVec::from_fn(3, |_, _| cscg(4.0, &mut rng));
            let (val, x) = ball_minimum(&a, &b, 1.0, 0.7);
            assert!(x.norm() <= 0.7 + 1e-9);
            for _ in 0..200 {
                let y = CVec::from_fn(3, |_, _| cscg(1.0, &mut rng));
                let y = &y * C64::from(0.7 * rng.random::<f64>() / y.norm());
                let f = (y.adjoint() * &a * &y)[(0, 0)].re + 2.0 * b.dotc(&y).re + 1.0;
                assert!(f >= val - 1e-9);
            }
        }
    }

    #[test]
    fn rank_one_robust_snr_matches_exact_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let r = random_cmat(2, 4, &mut rng);
            let w = CVec::from_fn(2, |_, _| cscg(1.0, &mut rng));
            let v = extend_phases(&crate::optim_perfect::random_phases(3, &mut rng));
            let exact = worst_case_snr_exact(&outer(&w), &outer(&v), &r, 0.3);
            let closed = robust_snr(&w, &v, &r, 0.3);
            assert!((exact - closed).abs() <= 1e-8 * closed.max(1.0), "{exact} vs {closed}");
        }
    }

    #[test]
    fn zero_radius_check_is_nominal() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = random_cmat(2, 3, &mut rng);
        let w = CVec::from_fn(2, |_, _| cscg(1.0, &mut rng));
        let ph = crate::optim_perfect::random_phases(2, &mut rng);
        let nominal = w.dotc(&(&r * extend_phases(&ph))).norm_sqr();
        let out = worst_case_check(&w, &ph, &r, 0.0, nominal, 10, &mut rng);
        assert!(out.passed);
        assert!((out.worst_snr - nominal).abs() < 1e-12);
        assert!(!worst_case_check(&w, &ph, &r, 0.0, nominal * 1.01, 10, &mut rng).passed);
    }

    #[test]
    fn lmi_certifies_exact_worst_case() {
        // N_t = 1, M = 1: feasibility in μ of the S-procedure LMI matches the
        // exact ball minimum.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let r = random_cmat(1, 2, &mut rng);
            let w = random_psd(1, &mut rng);
            let v = outer(&extend_phases(&crate::optim_perfect::random_phases(1, &mut rng)));
            let delta = 0.2 * r.norm();
            let exact = worst_case_snr_exact(&w, &v, &r, delta);
            for (req, feasible) in [(0.98 * exact, true), (1.02 * exact + 1e-6, false)] {
                let mut prob = ConicProblem::new();
                let mu = prob.real();
                prob.nonneg(mu.clone());
                let a = kron(&v.transpose(), &w);
                build_lmi(
                    &mut prob,
                    2,
                    |i, j| ComplexAffine::constant(a[(i, j)]),
                    &vectorize(&r),
                    delta,
                    &Affine::constant(req),
                    &mu,
                )
                .unwrap();
                prob.minimize(Affine::zero());
                let sol = prob.solve().unwrap();
                assert_eq!(sol.is_optimal(), feasible, "req {req} exact {exact}: {}", sol.detail);
            }
        }
    }

    #[test]
    fn bcd_small_instance_is_monotone_and_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let stacked: Vec<CMat> = (0..3).map(|_| random_cmat(2, 3, &mut rng)).collect();
        let chan = WhitenedChannels::new(&stacked, 1.0, 1.0).unwrap();
        let spec = UncertaintySpec::from_ratio(&chan, 0.05).unwrap();
        let out = bcd(&chan, &spec, 1.0, &BcdConfig::default(), false, &mut rng).unwrap();
        for pair in out.state.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-6, "{:?}", out.state.objective_trace);
        }
        let target = 1.0 * (1.0 + 1e-5);
        for (w, v, q) in &out.certified {
            for (k, r) in chan.stacked.iter().enumerate() {
                let check = worst_case_check_lifted(w, v, r, spec.radius[k], target - q[k], 200, &mut rng);
                assert!(check.passed, "{} < {}", check.worst_snr, target - q[k]);
            }
        }
    }
}
