//! Perfect-CSI beamforming: the reweighted-ℓ1 slack surrogate, alternating
//! minimisation over transmit and phase blocks (AltMin), and the penalty-based
//! SCA over lifted matrices with its rank-relaxed upper bound.
//!
//! All solvers work on whitened channels `R_k √P_max / σ`, so the transmit
//! vector has unit power budget and SNRs are plain `|w^H R_k v|²`.

use rand::Rng;

use crate::conic::{sum, Affine, ComplexAffine, ConicProblem};
use crate::linalg::{outer, CMat, CVec, C64, ONE};
use crate::protocol::{extend_phases, BeamformingSolution};
use crate::{Error, Result};

#[cfg(feature = "sdp")]
use crate::conic::HermitianVar;
#[cfg(feature = "sdp")]
use crate::linalg::{leading_eigenpair, nuclear_norm, re_trace_product, spectral_norm};

/// Whitened per-actuator channels `R_k = [G_k^H  h_d,k]`.
#[derive(Clone, Debug)]
pub struct WhitenedChannels {
    pub stacked: Vec<CMat>,
    pub antennas: usize,
    pub elements: usize,
    pub max_power_w: f64,
    /// `√P_max / σ`.
    pub gain: f64,
}

impl WhitenedChannels {
    /// Scales `stacked` by `√P_max / σ`.
    pub fn new(stacked: &[CMat], noise_w: f64, max_power_w: f64) -> Result<Self> {
        if !(noise_w > 0.0) || !(max_power_w > 0.0) {
            return Err(Error::domain("noise and transmit power must be positive"));
        }
        let first = stacked
            .first()
            .ok_or_else(|| Error::dim("at least one actuator is required"))?;
        let (nt, cols) = first.shape();
        if cols == 0 || stacked.iter().any(|r| r.shape() != (nt, cols)) {
            return Err(Error::dim("stacked channels must share one N_t × (M+1) shape"));
        }
        let gain = (max_power_w / noise_w).sqrt();
        Ok(Self {
            stacked: stacked.iter().map(|r| r * C64::from(gain)).collect(),
            antennas: nt,
            elements: cols - 1,
            max_power_w,
            gain,
        })
    }

    pub fn actuators(&self) -> usize {
        self.stacked.len()
    }

    /// `R_k^H w`: the IRS terms `G_k w` followed by `h_d,k^H w`.
    pub fn reflected(&self, k: usize, w: &CVec) -> CVec {
        self.stacked[k].adjoint() * w
    }

    /// `b_k = h_d,k + G_k^H ṽ`.
    pub fn effective_vector(&self, k: usize, phases: &CVec) -> CVec {
        &self.stacked[k] * extend_phases(phases)
    }

    pub fn snr(&self, k: usize, w: &CVec, phases: &CVec) -> f64 {
        let b = self.effective_vector(k, phases);
        b.dotc(w).norm_sqr()
    }

    pub fn snrs(&self, w: &CVec, phases: &CVec) -> Vec<f64> {
        (0..self.actuators()).map(|k| self.snr(k, w, phases)).collect()
    }

    /// `Tr(W R_k V R_k^H)` per actuator.
    pub fn lifted_snrs(&self, w: &CMat, v: &CMat) -> Vec<f64> {
        self.stacked
            .iter()
            .map(|r| {
                let rvr = r * v * r.adjoint();
                crate::linalg::re_trace_product(w, &rvr)
            })
            .collect()
    }

    /// Undoes the power normalisation of `w`.
    pub fn to_solution(&self, w: &CVec, phases: &CVec) -> BeamformingSolution {
        BeamformingSolution::new(w * C64::from(self.max_power_w.sqrt()), phases.clone())
    }

    /// Unit-power maximum-ratio beam toward the actuator with the strongest
    /// direct link.
    pub fn strongest_direct_beam(&self) -> CVec {
        let m = self.elements;
        let best = self
            .stacked
            .iter()
            .map(|r| r.column(m).into_owned())
            .max_by(|a, b| a.norm().total_cmp(&b.norm()))
            .filter(|h| h.norm() > 0.0);
        match best {
            Some(h) => h.normalize(),
            None => {
                let mut e = CVec::zeros(self.antennas);
                e[0] = ONE;
                e
            }
        }
    }
}

/// Uniform random unit-modulus phases.
pub fn random_phases<R: Rng + ?Sized>(elements: usize, rng: &mut R) -> CVec {
    CVec::from_fn(elements, |_, _| {
        C64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU))
    })
}

/// `ω_k = 1/(q_k + ν)`.
pub fn reweight(slack: &[f64], smoothing: f64) -> Vec<f64> {
    slack.iter().map(|&q| 1.0 / (q + smoothing)).collect()
}

/// `Σ ln(1 + q_k/ν)`, the concave count surrogate whose majorisation the
/// reweighting performs.
pub fn log_sum_merit(slack: &[f64], smoothing: f64) -> f64 {
    slack.iter().map(|&q| (q.max(0.0) / smoothing).ln_1p()).sum()
}

/// `max(γ_th − γ_k, 0)`.
pub fn closed_form_slack(threshold: f64, snr: f64) -> f64 {
    (threshold - snr).max(0.0)
}

pub fn closed_form_slacks(threshold: f64, snrs: &[f64]) -> Vec<f64> {
    snrs.iter().map(|&g| closed_form_slack(threshold, g)).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlackState {
    pub slack: Vec<f64>,
    pub weights: Vec<f64>,
    pub smoothing: f64,
}

impl SlackState {
    pub fn new(slack: Vec<f64>, smoothing: f64) -> Self {
        let weights = reweight(&slack, smoothing);
        Self {
            slack,
            weights,
            smoothing,
        }
    }

    pub fn update(&mut self, slack: Vec<f64>) {
        self.weights = reweight(&slack, self.smoothing);
        self.slack = slack;
    }

    pub fn weighted_sum(&self) -> f64 {
        self.weights.iter().zip(&self.slack).map(|(w, q)| w * q).sum()
    }

    pub fn merit(&self) -> f64 {
        log_sum_merit(&self.slack, self.smoothing)
    }

    pub fn total(&self) -> f64 {
        self.slack.iter().sum()
    }

    /// Whether `Σ ω_k q_k ≤ K − 1` holds at the current point.
    pub fn within_budget(&self) -> bool {
        self.weighted_sum() <= (self.slack.len() as f64 - 1.0).max(0.0)
    }

    pub fn decoded(&self, tol: f64) -> usize {
        self.slack.iter().filter(|&&q| q <= tol).count()
    }
}

/// Real-affine functional `2 Re(g^H x) + c` of a complex vector.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearBound {
    pub gradient: CVec,
    pub constant: f64,
}

impl LinearBound {
    pub fn eval(&self, x: &CVec) -> f64 {
        2.0 * self.gradient.dotc(x).re + self.constant
    }

    pub fn expression(&self, x: &[ComplexAffine]) -> Affine {
        let mut out = Affine::constant(self.constant);
        for (g, z) in self.gradient.iter().zip(x) {
            out.add_scaled(&z.re, 2.0 * g.re);
            out.add_scaled(&z.im, 2.0 * g.im);
        }
        out.compacted()
    }
}

/// `F_k(w) = 2 Re(w_ref^H b b^H w) − |b^H w_ref|²`, a global minorant of
/// `|b^H w|²` that is tight at `w_ref`.
pub fn taylor_bound_transmit(b: &CVec, w_ref: &CVec) -> LinearBound {
    let s = b.dotc(w_ref);
    LinearBound {
        gradient: b * s,
        constant: -s.norm_sqr(),
    }
}

/// `𝒢_k(ṽ) = 2 Re(s d^H (ṽ − ṽ_ref)) + |s|²` with `s = c + ṽ_ref^H d`, a
/// global minorant of `|c + ṽ^H d|²` that is tight at `ṽ_ref`.
pub fn taylor_bound_phases(c: C64, d: &CVec, v_ref: &CVec) -> LinearBound {
    let s = c + v_ref.dotc(d);
    let gradient = d * s.conj();
    let constant = s.norm_sqr() - 2.0 * gradient.dotc(v_ref).re;
    LinearBound { gradient, constant }
}

/// `v_m / |v_m|`, with zero entries sent to 1.
pub fn project_unit_modulus(v: &CVec) -> CVec {
    v.map(|z| {
        let r = z.norm();
        if r > 0.0 && r.is_finite() {
            z / r
        } else {
            ONE
        }
    })
}

fn clamp_norm(x: CVec, radius: f64) -> CVec {
    let n = x.norm();
    if n > radius {
        x * C64::from(radius / n)
    } else {
        x
    }
}

/// Solution of one convex block: the solver's slack and the new point.
#[derive(Clone, Debug)]
pub struct BlockSolve {
    pub slack: Vec<f64>,
    pub point: CVec,
    pub objective: f64,
}

fn slack_problem(
    prob: &mut ConicProblem,
    bounds: Vec<Affine>,
    weights: &[f64],
    target: f64,
    budget: bool,
) -> Vec<Affine> {
    let k = weights.len();
    let q = prob.reals(k);
    // Only the ratio of weights matters for the minimiser.
    let top = weights.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let scaled: Vec<f64> = weights.iter().map(|w| w / top).collect();
    for (bound, qk) in bounds.into_iter().zip(&q) {
        prob.nonneg(bound + qk.clone() - target);
    }
    prob.nonneg_many(q.clone());
    let weighted: Vec<Affine> = q.iter().zip(&scaled).map(|(qk, w)| qk * *w).collect();
    let objective = sum(&weighted);
    if budget {
        prob.le(&objective, &Affine::constant((k as f64 - 1.0).max(0.0) / top));
    }
    prob.minimize(objective);
    q
}

/// Transmit block: `min Σ ω_k q_k` s.t. `F_k(w) ≥ γ − q_k`, `q ⪰ 0`,
/// optionally `Σ ω_k q_k ≤ K − 1`, and `‖w‖ ≤ 1`.
pub fn solve_altmin_transmit(
    chan: &WhitenedChannels,
    phases: &CVec,
    w_ref: &CVec,
    weights: &[f64],
    target: f64,
    budget: bool,
) -> Result<BlockSolve> {
    if phases.len() != chan.elements || w_ref.len() != chan.antennas || weights.len() != chan.actuators() {
        return Err(Error::dim("transmit block inputs do not match the channel"));
    }
    let mut prob = ConicProblem::new();
    let w = prob.complex_vec(chan.antennas);
    let bounds = (0..chan.actuators())
        .map(|k| taylor_bound_transmit(&chan.effective_vector(k, phases), w_ref).expression(&w))
        .collect();
    let q = slack_problem(&mut prob, bounds, weights, target, budget);
    prob.soc_complex(Affine::constant(1.0), &w);
    let sol = prob.solve()?;
    sol.require_optimal("transmit block")?;
    let point = CVec::from_iterator(chan.antennas, w.iter().map(|z| sol.cvalue(z)));
    Ok(BlockSolve {
        slack: q.iter().map(|a| sol.value(a).max(0.0)).collect(),
        point: clamp_norm(point, 1.0),
        objective: sol.objective,
    })
}

/// Phase block with the relaxed modulus constraint `|ṽ_m| ≤ 1`.
pub fn solve_altmin_phases(
    chan: &WhitenedChannels,
    w: &CVec,
    v_ref: &CVec,
    weights: &[f64],
    target: f64,
    budget: bool,
) -> Result<BlockSolve> {
    let m = chan.elements;
    if v_ref.len() != m || w.len() != chan.antennas || weights.len() != chan.actuators() {
        return Err(Error::dim("phase block inputs do not match the channel"));
    }
    let mut prob = ConicProblem::new();
    let v = prob.complex_vec(m);
    let bounds = (0..chan.actuators())
        .map(|k| {
            let u = chan.reflected(k, w);
            let d = u.rows(0, m).into_owned();
            taylor_bound_phases(u[m], &d, v_ref).expression(&v)
        })
        .collect();
    let q = slack_problem(&mut prob, bounds, weights, target, budget);
    for z in &v {
        prob.soc_complex(Affine::constant(1.0), std::slice::from_ref(z));
    }
    let sol = prob.solve()?;
    sol.require_optimal("phase block")?;
    let point = CVec::from_iterator(m, v.iter().map(|z| clamp_norm(CVec::from_element(1, sol.cvalue(z)), 1.0)[0]));
    Ok(BlockSolve {
        slack: q.iter().map(|a| sol.value(a).max(0.0)).collect(),
        point,
        objective: sol.objective,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AltMinConfig {
    /// `ν` in the reweighting.
    pub smoothing: f64,
    pub tolerance: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    /// Designs aim at `γ_th (1 + margin)` so that solver round-off cannot
    /// drop an actuator below the threshold.
    pub decode_margin: f64,
    /// Slacks at or below this count as decoded.
    pub decoded_tol: f64,
}

impl Default for AltMinConfig {
    fn default() -> Self {
        Self {
            smoothing: 1e-3,
            tolerance: 1e-4,
            max_outer: 100,
            max_inner: 20,
            decode_margin: 1e-5,
            decoded_tol: 1e-6,
        }
    }
}

/// Alternating-minimisation iterate in whitened units.
#[derive(Clone, Debug)]
pub struct AltMinState {
    pub transmit: CVec,
    pub phases: CVec,
    pub slack_state: SlackState,
    pub outer_iter: usize,
    /// Log-sum merit after every block update.
    pub objective_trace: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct AltMinOutcome {
    pub solution: BeamformingSolution,
    pub state: AltMinState,
    pub converged: bool,
    pub diagnostics: Vec<String>,
}

impl AltMinOutcome {
    pub fn decoded(&self, tol: f64) -> usize {
        self.state.slack_state.decoded(tol)
    }
}

/// Repeats the transmit block with a moving expansion point until the merit
/// settles. Returns the number of convex solves.
/// Numerical trouble in a convex block; callers keep their last accepted
/// iterate instead of aborting.
pub(crate) fn solver_gave_up(e: &Error) -> bool {
    matches!(e, Error::Solver { .. } | Error::Infeasible(_))
}

fn transmit_loop(
    chan: &WhitenedChannels,
    cfg: &AltMinConfig,
    target: f64,
    phases: &CVec,
    w: &mut CVec,
    slack: &mut SlackState,
) -> Result<usize> {
    let mut solves = 0;
    for _ in 0..cfg.max_inner {
        let before = slack.merit();
        let block = match solve_altmin_transmit(chan, phases, w, &slack.weights, target, slack.within_budget()) {
            Err(e) if solver_gave_up(&e) => break,
            other => other?,
        };
        solves += 1;
        let q = closed_form_slacks(target, &chan.snrs(&block.point, phases));
        let after = log_sum_merit(&q, slack.smoothing);
        if after > before {
            break;
        }
        *w = block.point;
        slack.update(q);
        if before - after <= cfg.tolerance {
            break;
        }
    }
    Ok(solves)
}

/// Relaxed phase loop followed by projection; the projected phases are kept
/// only if they do not raise the merit.
fn phase_loop(
    chan: &WhitenedChannels,
    cfg: &AltMinConfig,
    target: f64,
    w: &CVec,
    phases: &mut CVec,
    slack: &mut SlackState,
) -> Result<bool> {
    let mut relaxed = phases.clone();
    let mut inner = slack.clone();
    for _ in 0..cfg.max_inner {
        let before = inner.merit();
        let block = match solve_altmin_phases(chan, w, &relaxed, &inner.weights, target, inner.within_budget()) {
            Err(e) if solver_gave_up(&e) => break,
            other => other?,
        };
        let q = closed_form_slacks(target, &chan.snrs(w, &block.point));
        let after = log_sum_merit(&q, inner.smoothing);
        if after > before {
            break;
        }
        relaxed = block.point;
        inner.update(q);
        if before - after <= cfg.tolerance {
            break;
        }
    }
    let projected = project_unit_modulus(&relaxed);
    let q = closed_form_slacks(target, &chan.snrs(w, &projected));
    if log_sum_merit(&q, slack.smoothing) <= slack.merit() {
        *phases = projected;
        slack.update(q);
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Default starting point: full-power maximum-ratio beam toward the strongest
/// direct link and uniformly random phases.
pub fn initial_point<R: Rng + ?Sized>(chan: &WhitenedChannels, rng: &mut R) -> (CVec, CVec) {
    (chan.strongest_direct_beam(), random_phases(chan.elements, rng))
}

/// Alternating minimisation from `(w0, ṽ0)` for the SNR target
/// `γ_th (1 + decode_margin)`.
pub fn altmin(
    chan: &WhitenedChannels,
    threshold: f64,
    cfg: &AltMinConfig,
    w0: CVec,
    v0: CVec,
) -> Result<AltMinOutcome> {
    if w0.len() != chan.antennas || v0.len() != chan.elements {
        return Err(Error::dim("initial point does not match the channel"));
    }
    let target = threshold * (1.0 + cfg.decode_margin);
    let mut w = clamp_norm(w0, 1.0);
    let mut v = project_unit_modulus(&v0);
    let mut slack = SlackState::new(closed_form_slacks(target, &chan.snrs(&w, &v)), cfg.smoothing);
    let mut trace = vec![slack.merit()];
    let mut diagnostics = Vec::new();
    let mut converged = false;
    let mut outer = 0;
    let mut rejected = 0;
    while outer < cfg.max_outer {
        outer += 1;
        let total_before = slack.total();
        transmit_loop(chan, cfg, target, &v, &mut w, &mut slack)?;
        trace.push(slack.merit());
        if chan.elements > 0 {
            if !phase_loop(chan, cfg, target, &w, &mut v, &mut slack)? {
                rejected += 1;
            }
            trace.push(slack.merit());
        }
        if (slack.total() - total_before).abs() <= cfg.tolerance {
            converged = true;
            break;
        }
    }
    if rejected > 0 {
        diagnostics.push(format!("{rejected} projected phase updates rejected"));
    }
    if !converged {
        diagnostics.push(format!("no convergence after {} outer iterations", cfg.max_outer));
    }
    Ok(AltMinOutcome {
        solution: chan.to_solution(&w, &v),
        state: AltMinState {
            transmit: w,
            phases: v,
            slack_state: slack,
            outer_iter: outer,
            objective_trace: trace,
        },
        converged,
        diagnostics,
    })
}

/// Transmit-only design for fixed phases (random-phase and no-IRS schemes).
pub fn optimize_transmit(
    chan: &WhitenedChannels,
    threshold: f64,
    cfg: &AltMinConfig,
    phases: &CVec,
    w0: CVec,
) -> Result<AltMinOutcome> {
    if w0.len() != chan.antennas || phases.len() != chan.elements {
        return Err(Error::dim("initial point does not match the channel"));
    }
    let target = threshold * (1.0 + cfg.decode_margin);
    let mut w = clamp_norm(w0, 1.0);
    let mut slack = SlackState::new(closed_form_slacks(target, &chan.snrs(&w, phases)), cfg.smoothing);
    let mut trace = vec![slack.merit()];
    let mut outer = 0;
    let mut converged = false;
    while outer < cfg.max_outer {
        outer += 1;
        let before = slack.merit();
        let solves = transmit_loop(chan, cfg, target, phases, &mut w, &mut slack)?;
        trace.push(slack.merit());
        if solves < cfg.max_inner || before - slack.merit() <= cfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(AltMinOutcome {
        solution: chan.to_solution(&w, phases),
        state: AltMinState {
            transmit: w,
            phases: phases.clone(),
            slack_state: slack,
            outer_iter: outer,
            objective_trace: trace,
        },
        converged,
        diagnostics: Vec::new(),
    })
}

/// `x x^H`.
pub fn lift(x: &CVec) -> CMat {
    outer(x)
}

/// `‖X‖_* − ‖X‖₂`, zero exactly when `X` has rank at most one.
#[cfg(feature = "sdp")]
pub fn rank_one_gap(x: &CMat) -> f64 {
    (nuclear_norm(x) - spectral_norm(x)).max(0.0)
}

/// Frobenius-inner-product lower bound on `Tr(W R V R^H)`:
///
/// `ℋ(W, V) = ½(‖A₀‖² + 2 Tr(A₀(W − W₀)) + 2 Tr(R^H A₀ R (V − V₀)) − ‖W‖² − ‖R V R^H‖²)`
///
/// with `A₀ = W₀ + R V₀ R^H`.
#[cfg(feature = "sdp")]
#[derive(Clone, Debug)]
pub struct ScaBound {
    pub stacked: CMat,
    pub w_coef: CMat,
    pub v_coef: CMat,
    pub constant: f64,
    /// Balance `s` of the split `Tr(WB) = ½(‖sW + B/s‖² − s²‖W‖² − ‖B‖²/s²)`.
    pub scale: f64,
}

#[cfg(feature = "sdp")]
pub fn sca_lower_bound(w_ref: &CMat, v_ref: &CMat, stacked: &CMat) -> Result<ScaBound> {
    sca_lower_bound_scaled(w_ref, v_ref, stacked, 1.0)
}

/// [`sca_lower_bound`] for the split weighted by `s`; every `s > 0` gives a
/// minorant that is tight, with matching gradient, at the reference.
#[cfg(feature = "sdp")]
pub fn sca_lower_bound_scaled(w_ref: &CMat, v_ref: &CMat, stacked: &CMat, scale: f64) -> Result<ScaBound> {
    let (nt, cols) = stacked.shape();
    if w_ref.shape() != (nt, nt) || v_ref.shape() != (cols, cols) {
        return Err(Error::dim("reference pair does not match R_k"));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::domain("split scale must be positive"));
    }
    let b0 = stacked * v_ref * stacked.adjoint();
    let a0 = w_ref * C64::from(scale) + &b0 * C64::from(1.0 / scale);
    let w_coef = &a0 * C64::from(scale);
    let v_coef = stacked.adjoint() * &a0 * stacked * C64::from(1.0 / scale);
    let constant = 0.5 * a0.norm_squared()
        - scale * re_trace_product(&a0, w_ref)
        - re_trace_product(&a0, &b0) / scale;
    Ok(ScaBound {
        stacked: stacked.clone(),
        w_coef,
        v_coef,
        constant,
        scale,
    })
}

/// `s = √(‖R V R^H‖_F / ‖W‖_F)`, which equalises the two squared terms.
#[cfg(feature = "sdp")]
fn balanced_scale(w_ref: &CMat, v_ref: &CMat, stacked: &CMat) -> f64 {
    let b = (stacked * v_ref * stacked.adjoint()).norm();
    let w = w_ref.norm();
    if b > 0.0 && w > 0.0 {
        (b / w).sqrt()
    } else {
        1.0
    }
}

#[cfg(feature = "sdp")]
impl ScaBound {
    /// The affine part `Tr(A₀ W) + Tr(R^H A₀ R V) + const`.
    pub fn linear_part(&self, w: &CMat, v: &CMat) -> f64 {
        re_trace_product(&self.w_coef, w) + re_trace_product(&self.v_coef, v) + self.constant
    }

    pub fn eval(&self, w: &CMat, v: &CMat) -> f64 {
        let rvr = &self.stacked * v * self.stacked.adjoint();
        let s2 = self.scale * self.scale;
        self.linear_part(w, v) - 0.5 * (s2 * w.norm_squared() + rvr.norm_squared() / s2)
    }

    /// Adds `ℋ(W, V) ≥ rhs` as a second-order cone.
    fn constrain(&self, prob: &mut ConicProblem, w: &HermitianVar, v: &HermitianVar, rhs: &Affine) {
        let mut lin = w.inner(&self.w_coef);
        lin.add_scaled(&v.inner(&self.v_coef), 1.0);
        lin.constant += self.constant;
        // ‖x‖² ≤ y  ⇔  ‖(2x, y − 1)‖ ≤ y + 1, with y = 2(lin − rhs).
        let y = (&lin - rhs) * 2.0;
        let s = self.scale;
        let mut xs: Vec<Affine> = frobenius_coords(w.n, |i, j| w.entry(i, j))
            .into_iter()
            .map(|x| x * s)
            .collect();
        let r = &self.stacked;
        let nt = r.nrows();
        let cols = r.ncols();
        let rvr = |i: usize, j: usize| {
            let mut coefs = Vec::with_capacity(cols * cols);
            let mut items = Vec::with_capacity(cols * cols);
            for a in 0..cols {
                for b in 0..cols {
                    coefs.push(r[(i, a)] * r[(j, b)].conj());
                    items.push(v.entry(a, b));
                }
            }
            crate::conic::linear_combination(&coefs, &items)
        };
        xs.extend(frobenius_coords(nt, rvr).into_iter().map(|x| x * (1.0 / s)));
        let mut items: Vec<Affine> = xs.into_iter().map(|x| x * 2.0).collect();
        items.push(y.clone() - 1.0);
        prob.soc(y + 1.0, items);
    }
}

/// Real coordinates whose Euclidean norm is the Frobenius norm of a Hermitian
/// matrix.
#[cfg(feature = "sdp")]
fn frobenius_coords<F: FnMut(usize, usize) -> ComplexAffine>(n: usize, mut entry: F) -> Vec<Affine> {
    let sqrt2 = std::f64::consts::SQRT_2;
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in i..n {
            let e = entry(i, j);
            if i == j {
                out.push(e.re);
            } else {
                out.push(e.re * sqrt2);
                out.push(e.im * sqrt2);
            }
        }
    }
    out
}

/// Linearised rank penalty
/// `(1/ρ)(‖X‖_* − ‖X_ref‖₂ − Re Tr(λλ^H (X − X_ref)))`, where `λ` is the
/// leading eigenvector of `X_ref`.
#[cfg(feature = "sdp")]
#[derive(Clone, Debug)]
pub struct PenaltyForm {
    pub leading: CVec,
    pub reference_norm: f64,
    pub reference_projection: f64,
    pub penalty: f64,
}

#[cfg(feature = "sdp")]
pub fn penalty_linearization(x_ref: &CMat, penalty: f64) -> Result<PenaltyForm> {
    if !(penalty > 0.0) {
        return Err(Error::domain("penalty factor must be positive"));
    }
    let (_, leading) = leading_eigenpair(x_ref);
    let reference_projection = (leading.adjoint() * x_ref * &leading)[(0, 0)].re;
    Ok(PenaltyForm {
        leading,
        reference_norm: spectral_norm(x_ref),
        reference_projection,
        penalty,
    })
}

#[cfg(feature = "sdp")]
impl PenaltyForm {
    fn projection(&self, x: &CMat) -> f64 {
        (self.leading.adjoint() * x * &self.leading)[(0, 0)].re
    }

    pub fn eval(&self, x: &CMat) -> f64 {
        (nuclear_norm(x) - self.reference_norm - self.projection(x) + self.reference_projection)
            / self.penalty
    }

    /// Affine form valid on the PSD cone, where `‖X‖_* = Tr X`.
    pub fn expression(&self, x: &HermitianVar) -> Affine {
        let mut out = x.trace();
        out.add_scaled(&x.inner(&outer(&self.leading)), -1.0);
        out.constant += self.reference_projection - self.reference_norm;
        (out * (1.0 / self.penalty)).compacted()
    }
}

#[cfg(feature = "sdp")]
#[derive(Clone, Debug, PartialEq)]
pub struct ScaConfig {
    pub smoothing: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub initial_penalty: f64,
    pub penalty_shrink: f64,
    pub penalty_floor: f64,
    /// Rank gaps at or below `rank_tol · ‖X‖₂` count as rank one.
    pub rank_tol: f64,
    pub decode_margin: f64,
    pub decoded_tol: f64,
}

#[cfg(feature = "sdp")]
impl Default for ScaConfig {
    fn default() -> Self {
        Self {
            smoothing: 1e-3,
            tolerance: 1e-4,
            max_iter: 300,
            initial_penalty: 1.0,
            penalty_shrink: 0.5,
            penalty_floor: 1e-6,
            rank_tol: 1e-5,
            decode_margin: 1e-5,
            decoded_tol: 1e-6,
        }
    }
}

#[cfg(feature = "sdp")]
#[derive(Clone, Debug)]
pub struct ScaState {
    pub transmit: CMat,
    pub phases: CMat,
    pub slack_state: SlackState,
    pub penalty: f64,
    pub leading_eigvecs: (CVec, CVec),
    pub iterations: usize,
    /// `ρ·Σ ln(1 + q_k/ν) + gap(W) + gap(V)` after every solve.
    pub objective_trace: Vec<f64>,
    pub penalty_trace: Vec<f64>,
}

#[cfg(feature = "sdp")]
impl ScaState {
    pub fn merit(&self) -> f64 {
        self.penalty * self.slack_state.merit() + rank_one_gap(&self.transmit) + rank_one_gap(&self.phases)
    }

    pub fn rank_gaps(&self) -> (f64, f64) {
        (rank_one_gap(&self.transmit), rank_one_gap(&self.phases))
    }

    pub fn is_rank_one(&self, tol: f64) -> bool {
        let (gw, gv) = self.rank_gaps();
        gw <= tol * spectral_norm(&self.transmit) && gv <= tol * spectral_norm(&self.phases)
    }
}

#[cfg(feature = "sdp")]
#[derive(Clone, Debug)]
pub struct ScaOutcome {
    pub solution: BeamformingSolution,
    pub state: ScaState,
    pub converged: bool,
    pub diagnostics: Vec<String>,
}

/// Lifted subproblem: `min Σ ω_k q_k + 𝒫_W + 𝒫_V` over `ℋ_k ≥ γ − q_k`,
/// `Tr W ≤ 1`, `diag V = 1`, `W, V ⪰ 0`. Without penalties the rank terms
/// are dropped.
#[cfg(feature = "sdp")]
fn solve_lifted(
    chan: &WhitenedChannels,
    w_ref: &CMat,
    v_ref: &CMat,
    slack: &SlackState,
    target: f64,
    penalties: Option<(&PenaltyForm, &PenaltyForm)>,
) -> Result<(CMat, CMat, Vec<f64>)> {
    let mut prob = ConicProblem::new();
    let k = chan.actuators();
    let q = prob.reals(k);
    let w = prob.hermitian(chan.antennas);
    let v = prob.hermitian(chan.elements + 1);
    prob.psd_var(&w);
    prob.psd_var(&v);
    prob.le(&w.trace(), &Affine::constant(1.0));
    prob.eq_many((0..=chan.elements).map(|m| v.entry(m, m).re - 1.0).collect());
    prob.nonneg_many(q.clone());
    let top = slack.weights.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    for (r, qk) in chan.stacked.iter().zip(&q) {
        let bound = sca_lower_bound_scaled(w_ref, v_ref, r, balanced_scale(w_ref, v_ref, r))?;
        bound.constrain(&mut prob, &w, &v, &(Affine::constant(target) - qk.clone()));
    }
    let weighted: Vec<Affine> = q.iter().zip(&slack.weights).map(|(qk, om)| qk * *om).collect();
    let weighted = sum(&weighted);
    if slack.within_budget() {
        prob.le(&weighted, &Affine::constant((k as f64 - 1.0).max(0.0)));
    }
    let mut objective = weighted * (1.0 / top);
    if let Some((pw, pv)) = penalties {
        objective.add_scaled(&pw.expression(&w), 1.0 / top);
        objective.add_scaled(&pv.expression(&v), 1.0 / top);
    }
    prob.minimize(objective);
    let sol = prob.solve()?;
    sol.require_optimal("lifted SCA step")?;
    let wm = crate::linalg::hermitian_part(&sol.hermitian(&w));
    let mut vm = crate::linalg::hermitian_part(&sol.hermitian(&v));
    for m in 0..vm.nrows() {
        vm[(m, m)] = ONE;
    }
    let qv = q.iter().map(|a| sol.value(a).max(0.0)).collect();
    Ok((wm, vm, qv))
}

/// Rank-one vectors from the leading eigenpairs: `w = √λ₁ u₁`, phases from
/// the leading eigenvector of `V` normalised by its last entry, then
/// projected to unit modulus.
#[cfg(feature = "sdp")]
pub fn recover_rank_one(w: &CMat, v: &CMat) -> (CVec, CVec) {
    let (lw, uw) = leading_eigenpair(w);
    let wv = clamp_norm(&uw * C64::from(lw.max(0.0).sqrt()), 1.0);
    let (_, uv) = leading_eigenpair(v);
    let m = v.nrows() - 1;
    let anchor = uv[m];
    let phases = if anchor.norm() > 0.0 {
        uv.rows(0, m).map(|z| z / anchor)
    } else {
        uv.rows(0, m).into_owned()
    };
    (wv, project_unit_modulus(&phases))
}

/// Penalty-based SCA from the rank-one lift of `(w0, ṽ0)`.
#[cfg(feature = "sdp")]
pub fn sca(
    chan: &WhitenedChannels,
    threshold: f64,
    cfg: &ScaConfig,
    w0: CVec,
    v0: CVec,
) -> Result<ScaOutcome> {
    if w0.len() != chan.antennas || v0.len() != chan.elements {
        return Err(Error::dim("initial point does not match the channel"));
    }
    let target = threshold * (1.0 + cfg.decode_margin);
    let w0 = lift(&clamp_norm(w0, 1.0));
    let v0 = lift(&extend_phases(&project_unit_modulus(&v0)));
    let slack = SlackState::new(closed_form_slacks(target, &chan.lifted_snrs(&w0, &v0)), cfg.smoothing);
    let mut state = ScaState {
        leading_eigvecs: (leading_eigenpair(&w0).1, leading_eigenpair(&v0).1),
        transmit: w0,
        phases: v0,
        slack_state: slack,
        penalty: cfg.initial_penalty,
        iterations: 0,
        objective_trace: Vec::new(),
        penalty_trace: Vec::new(),
    };
    state.objective_trace.push(state.merit());
    state.penalty_trace.push(state.penalty);
    let mut converged = false;
    let mut diagnostics = Vec::new();
    while state.iterations < cfg.max_iter {
        state.iterations += 1;
        let before = state.merit();
        let pw = penalty_linearization(&state.transmit, state.penalty)?;
        let pv = penalty_linearization(&state.phases, state.penalty)?;
        let step = solve_lifted(
            chan,
            &state.transmit,
            &state.phases,
            &state.slack_state,
            target,
            Some((&pw, &pv)),
        );
        let (w, v, _) = match step {
            Err(e) if solver_gave_up(&e) => {
                diagnostics.push(format!("iteration {}: {e}", state.iterations));
                break;
            }
            other => other?,
        };
        let q = closed_form_slacks(target, &chan.lifted_snrs(&w, &v));
        let candidate = state.penalty * log_sum_merit(&q, cfg.smoothing) + rank_one_gap(&w) + rank_one_gap(&v);
        if candidate <= before {
            state.transmit = w;
            state.phases = v;
            state.slack_state.update(q);
            state.leading_eigvecs = (pw.leading, pv.leading);
        }
        let after = state.merit();
        let stalled = before - after <= cfg.tolerance;
        if stalled {
            if state.is_rank_one(cfg.rank_tol) {
                converged = true;
                state.objective_trace.push(after);
                state.penalty_trace.push(state.penalty);
                break;
            }
            if state.penalty <= cfg.penalty_floor {
                diagnostics.push("penalty at its floor with rank gaps remaining".to_string());
                state.objective_trace.push(after);
                state.penalty_trace.push(state.penalty);
                break;
            }
            state.penalty = (state.penalty * cfg.penalty_shrink).max(cfg.penalty_floor);
        }
        state.objective_trace.push(state.merit());
        state.penalty_trace.push(state.penalty);
    }
    if !converged {
        let (gw, gv) = state.rank_gaps();
        diagnostics.push(format!(
            "stopped after {} iterations with rank gaps {gw:.3e} (W) and {gv:.3e} (V)",
            state.iterations
        ));
    }
    let (w, v) = recover_rank_one(&state.transmit, &state.phases);
    Ok(ScaOutcome {
        solution: chan.to_solution(&w, &v),
        state,
        converged,
        diagnostics,
    })
}

#[cfg(feature = "sdp")]
#[derive(Clone, Debug)]
pub struct UpperBound {
    /// Actuators whose relaxed slack is at most the decoded tolerance.
    pub decoded: usize,
    pub slack: Vec<f64>,
    pub solution: BeamformingSolution,
    pub iterations: usize,
}

/// Rank-relaxed bound: the SCA loop without rank penalties, started from a
/// rank-one point (normally the AltMin result). The iterate with the most
/// relaxed decodes is kept.
#[cfg(feature = "sdp")]
pub fn upper_bound_solver(
    chan: &WhitenedChannels,
    threshold: f64,
    cfg: &ScaConfig,
    w0: &CVec,
    v0: &CVec,
) -> Result<UpperBound> {
    let target = threshold * (1.0 + cfg.decode_margin);
    let mut w = lift(&clamp_norm(w0.clone(), 1.0));
    let mut v = lift(&extend_phases(&project_unit_modulus(v0)));
    let mut slack = SlackState::new(closed_form_slacks(target, &chan.lifted_snrs(&w, &v)), cfg.smoothing);
    let mut best = (slack.decoded(cfg.decoded_tol), w.clone(), v.clone(), slack.slack.clone());
    let mut iterations = 0;
    while iterations < cfg.max_iter && best.0 < chan.actuators() {
        iterations += 1;
        let before = slack.merit();
        let (wn, vn, _) = match solve_lifted(chan, &w, &v, &slack, target, None) {
            Err(e) if solver_gave_up(&e) => break,
            other => other?,
        };
        let q = closed_form_slacks(target, &chan.lifted_snrs(&wn, &vn));
        if log_sum_merit(&q, cfg.smoothing) > before {
            break;
        }
        w = wn;
        v = vn;
        slack.update(q);
        let decoded = slack.decoded(cfg.decoded_tol);
        if decoded > best.0 {
            best = (decoded, w.clone(), v.clone(), slack.slack.clone());
        }
        if before - slack.merit() <= cfg.tolerance {
            break;
        }
    }
    let (decoded, w, v, q) = best;
    let (wr, vr) = recover_rank_one(&w, &v);
    let mut solution = chan.to_solution(&wr, &vr);
    solution.lifted_transmit = Some(w * C64::from(chan.max_power_w));
    solution.lifted_phases = Some(v);
    solution.relaxed = true;
    Ok(UpperBound {
        decoded,
        slack: q,
        solution,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::cscg;
    use crate::linalg::cvec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cvec(n: usize, rng: &mut ChaCha8Rng) -> CVec {
        CVec::from_fn(n, |_, _| cscg(1.0, rng))
    }

    fn random_channels(k: usize, nt: usize, m: usize, scale: f64, rng: &mut ChaCha8Rng) -> WhitenedChannels {
        let stacked: Vec<CMat> = (0..k)
            .map(|_| CMat::from_fn(nt, m + 1, |_, _| cscg(scale, rng)))
            .collect();
        WhitenedChannels::new(&stacked, 1.0, 1.0).unwrap()
    }

    #[test]
    fn reweight_examples() {
        assert_eq!(reweight(&[0.0, 0.0], 1e-3), vec![1000.0, 1000.0]);
        assert_eq!(reweight(&[0.0, 1.0], 1.0), vec![1.0, 0.5]);
        let w = reweight(&[0.1, 0.5, 2.0], 1e-3);
        assert!(w[0] > w[1] && w[1] > w[2]);
    }

    #[test]
    fn slack_examples() {
        assert_eq!(closed_form_slack(5.0, 5.0), 0.0);
        assert_eq!(closed_form_slack(5.0, 7.0), 0.0);
        assert_eq!(closed_form_slack(5.0, 0.0), 5.0);
    }

    #[test]
    fn projection_examples() {
        let v = cvec(&[
            C64::from_polar(0.5, std::f64::consts::FRAC_PI_3),
            C64::from_polar(1.0, -1.0),
            C64::from(0.0),
        ]);
        let p = project_unit_modulus(&v);
        assert!((p[0] - C64::from_polar(1.0, std::f64::consts::FRAC_PI_3)).norm() < 1e-15);
        assert!((p[1] - v[1]).norm() < 1e-15);
        assert_eq!(p[2], ONE);
    }

    #[test]
    fn transmit_bound_is_tight_minorant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let b = random_cvec(3, &mut rng);
            let w_ref = random_cvec(3, &mut rng);
            let w = random_cvec(3, &mut rng);
            let f = taylor_bound_transmit(&b, &w_ref);
            assert!((f.eval(&w_ref) - b.dotc(&w_ref).norm_sqr()).abs() < 1e-9);
            assert!(f.eval(&w) <= b.dotc(&w).norm_sqr() + 1e-10);
        }
        let f = taylor_bound_transmit(&cvec(&[ONE, ONE]), &CVec::zeros(2));
        assert_eq!(f.eval(&cvec(&[ONE, C64::new(0.0, 2.0)])), 0.0);
    }

    #[test]
    fn phase_bound_is_tight_minorant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let c = cscg(1.0, &mut rng);
            let d = random_cvec(4, &mut rng);
            let v_ref = random_cvec(4, &mut rng);
            let v = random_cvec(4, &mut rng);
            let g = taylor_bound_phases(c, &d, &v_ref);
            let truth = |x: &CVec| (c + x.dotc(&d)).norm_sqr();
            assert!((g.eval(&v_ref) - truth(&v_ref)).abs() < 1e-9 * truth(&v_ref).max(1.0));
            assert!(g.eval(&v) <= truth(&v) + 1e-10);
        }
        let c = C64::new(0.3, -2.0);
        let g = taylor_bound_phases(c, &CVec::zeros(3), &random_cvec(3, &mut rng));
        assert!((g.eval(&random_cvec(3, &mut rng)) - c.norm_sqr()).abs() < 1e-12);
    }

    #[test]
    fn transmit_block_single_strong_actuator_needs_no_slack() {
        let stacked = vec![CMat::from_element(2, 1, C64::new(3.0, 1.0))];
        let chan = WhitenedChannels::new(&stacked, 1.0, 1.0).unwrap();
        let w_ref = cvec(&[ONE, C64::from(0.0)]);
        let out = solve_altmin_transmit(&chan, &CVec::zeros(0), &w_ref, &[1000.0], 1.0, false).unwrap();
        assert!(out.slack[0] < 1e-7);
        assert!(out.point.norm() <= 1.0 + 1e-12);
    }

    #[test]
    fn transmit_block_with_zero_channels_pays_full_slack() {
        let stacked = vec![CMat::zeros(2, 1); 2];
        let chan = WhitenedChannels::new(&stacked, 1.0, 1.0).unwrap();
        let out =
            solve_altmin_transmit(&chan, &CVec::zeros(0), &cvec(&[ONE, ONE]), &[2.0, 3.0], 4.0, false).unwrap();
        for q in &out.slack {
            assert!((q - 4.0).abs() < 1e-6);
        }
    }

    #[test]
    fn phase_block_respects_relaxed_modulus() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let chan = random_channels(3, 2, 5, 1.0, &mut rng);
        let w = random_cvec(2, &mut rng).normalize();
        let v = random_phases(5, &mut rng);
        let out = solve_altmin_phases(&chan, &w, &v, &[1.0; 3], 20.0, false).unwrap();
        assert!(out.point.iter().all(|z| z.norm() <= 1.0 + 1e-7));
    }

    #[test]
    fn altmin_trace_is_nonincreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..5 {
            let chan = random_channels(4, 2, 4, 1.0, &mut rng);
            let (w0, v0) = initial_point(&chan, &mut rng);
            let out = altmin(&chan, 3.0, &AltMinConfig::default(), w0, v0).unwrap();
            for pair in out.state.objective_trace.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-6, "{:?}", out.state.objective_trace);
            }
            assert!(out.state.phases.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
            assert!(out.state.transmit.norm() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn altmin_single_actuator_generous_budget_decodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let chan = random_channels(1, 4, 8, 1.0, &mut rng);
        let (w0, v0) = initial_point(&chan, &mut rng);
        let out = altmin(&chan, 2.0, &AltMinConfig::default(), w0, v0).unwrap();
        assert_eq!(out.decoded(1e-6), 1);
        assert!(chan.snr(0, &out.state.transmit, &out.state.phases) >= 2.0);
    }

    #[cfg(feature = "sdp")]
    #[test]
    fn rank_gap_examples() {
        let v = cvec(&[C64::new(1.0, 2.0), C64::new(0.0, -1.0)]);
        assert!(rank_one_gap(&lift(&v)) < 1e-10);
        assert!((rank_one_gap(&CMat::identity(2, 2)) - 1.0).abs() < 1e-12);
    }

    #[cfg(feature = "sdp")]
    #[test]
    fn sca_bound_is_tight_at_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let r = CMat::from_fn(3, 5, |_, _| cscg(1.0, &mut rng));
        let w = lift(&random_cvec(3, &mut rng));
        let v = lift(&random_cvec(5, &mut rng));
        let h = sca_lower_bound(&w, &v, &r).unwrap();
        let truth = re_trace_product(&w, &(&r * &v * r.adjoint()));
        assert!((h.eval(&w, &v) - truth).abs() < 1e-9 * truth.max(1.0));
    }

    #[cfg(feature = "sdp")]
    #[test]
    fn scaled_sca_bound_is_tight_minorant() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let r = CMat::from_fn(2, 4, |_, _| cscg(30.0, &mut rng));
        let w0 = lift(&random_cvec(2, &mut rng));
        let v0 = lift(&random_cvec(4, &mut rng));
        for s in [0.1, 1.0, 7.5] {
            let h = sca_lower_bound_scaled(&w0, &v0, &r, s).unwrap();
            let at_ref = re_trace_product(&w0, &(&r * &v0 * r.adjoint()));
            assert!((h.eval(&w0, &v0) - at_ref).abs() < 1e-9 * at_ref.max(1.0));
            for _ in 0..50 {
                let w = lift(&random_cvec(2, &mut rng));
                let v = lift(&random_cvec(4, &mut rng));
                let truth = re_trace_product(&w, &(&r * &v * r.adjoint()));
                assert!(h.eval(&w, &v) <= truth + 1e-9 * truth.max(1.0));
            }
        }
    }

    #[cfg(feature = "sdp")]
    #[test]
    fn penalty_examples() {
        let v = cvec(&[ONE, C64::new(0.0, 1.0)]);
        let p = penalty_linearization(&lift(&v), 0.5).unwrap();
        assert!(p.eval(&lift(&v)).abs() < 1e-12);
        let x = CMat::from_diagonal(&cvec(&[C64::from(2.0), C64::from(1.0)]));
        let p = penalty_linearization(&x, 0.5).unwrap();
        assert!((p.eval(&x) - 2.0 * rank_one_gap(&x)).abs() < 1e-12);
    }

    #[cfg(feature = "sdp")]
    #[test]
    fn sca_small_instance_decodes_and_is_rank_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let chan = random_channels(1, 2, 3, 1.0, &mut rng);
        let (w0, v0) = initial_point(&chan, &mut rng);
        let out = sca(&chan, 2.0, &ScaConfig::default(), w0, v0).unwrap();
        assert!(out.state.is_rank_one(1e-5), "{:?}", out.diagnostics);
        assert!(out.solution.power() <= 1.0 + 1e-9);
        for pair in out.state.objective_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-6);
        }
    }
}
