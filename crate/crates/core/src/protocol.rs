//! Two-stage broadcast protocol: stage-one SNRs and decode flags, stage-two
//! relaying with maximum-ratio combining, and the Monte Carlo reliability
//! estimate.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{
    perturb_csi, ChannelRealization, CsiEstimate, EffectiveChannel, LargeScaleParams, Point,
    ScenarioGeometry,
};
use crate::fbl::SnrThresholds;
use crate::linalg::{outer, re_trace_product, CMat, CVec, C64, ONE};
use crate::{Error, Result};

/// Transmit beamformer and IRS phases, optionally with their lifted forms.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamformingSolution {
    pub transmit: CVec,
    pub phases: CVec,
    pub lifted_transmit: Option<CMat>,
    pub lifted_phases: Option<CMat>,
    /// Link quality is read from the lifted pair instead of the vectors.
    /// Only the rank-relaxed bound sets this.
    pub relaxed: bool,
}

impl BeamformingSolution {
    pub fn new(transmit: CVec, phases: CVec) -> Self {
        Self {
            transmit,
            phases,
            lifted_transmit: None,
            lifted_phases: None,
            relaxed: false,
        }
    }

    pub fn zero(antennas: usize, elements: usize) -> Self {
        Self::new(CVec::zeros(antennas), CVec::from_element(elements, ONE))
    }

    /// `[ṽ; 1]`.
    pub fn extended_phases(&self) -> CVec {
        extend_phases(&self.phases)
    }

    pub fn power(&self) -> f64 {
        self.transmit.norm_squared()
    }
}

pub fn extend_phases(phases: &CVec) -> CVec {
    let m = phases.len();
    let mut v = CVec::zeros(m + 1);
    v.rows_mut(0, m).copy_from(phases);
    v[m] = ONE;
    v
}

/// `|(h_d,k^H + ṽ^H G_k) w|² / σ²`.
pub fn stage1_snr(solution: &BeamformingSolution, channels: &ChannelRealization, k: usize) -> Result<f64> {
    let (nt, m, kk) = (
        channels.num_antennas(),
        channels.num_elements(),
        channels.num_actuators(),
    );
    if k >= kk {
        return Err(Error::dim(format!("actuator {k} out of range for K={kk}")));
    }
    if solution.transmit.len() != nt || solution.phases.len() != m {
        return Err(Error::dim(format!(
            "solution has N_t={} and M={}, channels have N_t={nt} and M={m}",
            solution.transmit.len(),
            solution.phases.len()
        )));
    }
    let hw = &channels.ap_irs * &solution.transmit;
    let mut acc: C64 = (channels.direct.column(k).adjoint() * &solution.transmit)[(0, 0)];
    for i in 0..m {
        acc += solution.phases[i].conj() * channels.irs_actuator[(i, k)].conj() * hw[i];
    }
    Ok(acc.norm_sqr() / channels.noise_power_w)
}

/// `Tr(W R_k V R_k^H) / σ²`.
pub fn lifted_snr(w: &CMat, v: &CMat, stacked: &CMat, noise_w: f64) -> f64 {
    let rvr = stacked * v * stacked.adjoint();
    re_trace_product(w, &rvr) / noise_w
}

/// Stage-one SNRs for every actuator, honoring [`BeamformingSolution::relaxed`].
pub fn stage1_snrs(solution: &BeamformingSolution, channels: &ChannelRealization) -> Result<Vec<f64>> {
    let k = channels.num_actuators();
    if solution.relaxed {
        let (w, v) = match (&solution.lifted_transmit, &solution.lifted_phases) {
            (Some(w), Some(v)) => (w.clone(), v.clone()),
            _ => (outer(&solution.transmit), outer(&solution.extended_phases())),
        };
        let eff = channels.effective();
        return Ok(eff
            .stacked
            .iter()
            .map(|r| lifted_snr(&w, &v, r, channels.noise_power_w).max(0.0))
            .collect());
    }
    (0..k).map(|idx| stage1_snr(solution, channels, idx)).collect()
}

/// `a_k = 1` iff `γ_k ≥ γ_th`.
pub fn stage1_indicators(snrs: &[f64], threshold: f64) -> Vec<bool> {
    snrs.iter().map(|&g| g >= threshold).collect()
}

/// `γ_k^(I) + P |Σ_{j≠k} a_j g_jk|² / σ²`, with the relay signals adding
/// coherently.
pub fn stage2_snr(
    stage1_snr_k: f64,
    stage1_flags: &[bool],
    d2d_col: &[C64],
    k: usize,
    relay_power_w: f64,
    noise_w: f64,
) -> f64 {
    let mut sum = C64::from(0.0);
    for (j, (&flag, &g)) in stage1_flags.iter().zip(d2d_col).enumerate() {
        if j != k && flag {
            sum += g;
        }
    }
    stage1_snr_k + relay_power_w * sum.norm_sqr() / noise_w
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodingOutcome {
    pub stage1_snr: Vec<f64>,
    pub stage2_snr: Vec<f64>,
    pub stage1_flag: Vec<bool>,
    pub stage2_flag: Vec<bool>,
    pub all_decoded: bool,
}

impl DecodingOutcome {
    pub fn decoded_stage1(&self) -> usize {
        self.stage1_flag.iter().filter(|&&f| f).count()
    }

    pub fn decoded_total(&self) -> usize {
        self.decoded_stage1() + self.stage2_flag.iter().filter(|&&f| f).count()
    }
}

/// Runs both protocol stages from precomputed stage-one SNRs.
pub fn evaluate_from_snrs(
    stage1: Vec<f64>,
    channels: &ChannelRealization,
    thresholds: &SnrThresholds,
    relay_power_w: f64,
) -> DecodingOutcome {
    let k = stage1.len();
    let flags1 = stage1_indicators(&stage1, thresholds.gamma_th_stage1);
    let mut stage2 = stage1.clone();
    let mut flags2 = vec![false; k];
    for idx in 0..k {
        if flags1[idx] {
            continue;
        }
        let col: Vec<C64> = channels.d2d.column(idx).iter().copied().collect();
        stage2[idx] = stage2_snr(stage1[idx], &flags1, &col, idx, relay_power_w, channels.noise_power_w);
        flags2[idx] = stage2[idx] >= thresholds.gamma_th_stage2;
    }
    let all_decoded = flags1.iter().zip(&flags2).all(|(a, b)| *a || *b);
    DecodingOutcome {
        stage1_snr: stage1,
        stage2_snr: stage2,
        stage1_flag: flags1,
        stage2_flag: flags2,
        all_decoded,
    }
}

pub fn evaluate_protocol(
    solution: &BeamformingSolution,
    channels: &ChannelRealization,
    thresholds: &SnrThresholds,
    relay_power_w: f64,
) -> Result<DecodingOutcome> {
    let snrs = stage1_snrs(solution, channels)?;
    Ok(evaluate_from_snrs(snrs, channels, thresholds, relay_power_w))
}

/// Everything needed to draw and score one Monte Carlo trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub actuators: usize,
    pub antennas: usize,
    pub elements: usize,
    pub ap_position: Point,
    pub irs_position: Point,
    pub circle_center: Point,
    pub circle_radius: f64,
    /// Added to the x and y coordinates of every actuator.
    pub actuator_offset_m: f64,
    pub large_scale: LargeScaleParams,
    pub noise_power_w: f64,
    pub max_power_w: f64,
    pub relay_power_w: f64,
    pub thresholds: SnrThresholds,
    pub uncertainty_ratio: f64,
    /// Fixed actuator positions; drawn afresh every trial when `None`.
    pub layout: Option<Vec<Point>>,
}

/// Inputs handed to a scheme for one trial. `effective` is the true channel;
/// robust schemes should only look at `estimate`.
#[derive(Clone, Debug)]
pub struct TrialContext {
    pub realization: ChannelRealization,
    pub effective: EffectiveChannel,
    pub estimate: CsiEstimate,
    pub thresholds: SnrThresholds,
    pub max_power_w: f64,
    pub relay_power_w: f64,
}

impl Scenario {
    /// Draws positions, channels and the CSI estimate from `rng`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<TrialContext> {
        let mut geometry = ScenarioGeometry::sample(
            self.ap_position,
            self.irs_position,
            self.circle_center,
            self.circle_radius,
            self.actuators,
            rng,
        );
        if let Some(layout) = &self.layout {
            if layout.len() != self.actuators {
                return Err(Error::dim(format!(
                    "layout has {} positions for {} actuators",
                    layout.len(),
                    self.actuators
                )));
            }
            geometry.actuator_positions = layout.clone();
        }
        for p in &mut geometry.actuator_positions {
            p[0] += self.actuator_offset_m;
            p[1] += self.actuator_offset_m;
        }
        let realization = ChannelRealization::generate(
            &geometry,
            &self.large_scale,
            self.antennas,
            self.elements,
            self.noise_power_w,
            rng,
        )?;
        let effective = realization.effective();
        let estimate = perturb_csi(&effective, self.uncertainty_ratio, rng)?;
        Ok(TrialContext {
            realization,
            effective,
            estimate,
            thresholds: self.thresholds,
            max_power_w: self.max_power_w,
            relay_power_w: self.relay_power_w,
        })
    }
}

#[derive(Clone, Debug, Default)]
pub struct SchemeOutput {
    pub solution: Option<BeamformingSolution>,
    pub iterations: usize,
    pub diagnostics: Vec<String>,
}

impl SchemeOutput {
    pub fn from_solution(solution: BeamformingSolution, iterations: usize) -> Self {
        Self {
            solution: Some(solution),
            iterations,
            diagnostics: Vec::new(),
        }
    }
}

/// A beamforming design procedure that can be scored by [`monte_carlo_prc`].
pub trait Scheme: Sync {
    fn name(&self) -> &str;

    /// `false` when the scheme is evaluated with the IRS removed.
    fn uses_irs(&self) -> bool {
        true
    }

    fn optimize(&self, ctx: &TrialContext, rng: &mut ChaCha8Rng) -> Result<SchemeOutput>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub decoded_stage1: usize,
    pub decoded_total: usize,
    pub success: bool,
    pub iterations: usize,
    pub wall_ms: f64,
    pub diagnostics: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrcResult {
    pub trials: usize,
    pub successes: usize,
    pub prc: f64,
    pub per_trial_decoded_counts: Vec<usize>,
    pub records: Vec<TrialRecord>,
}

impl PrcResult {
    pub fn from_records(records: Vec<TrialRecord>) -> Self {
        let trials = records.len();
        let successes = records.iter().filter(|r| r.success).count();
        Self {
            trials,
            successes,
            prc: if trials == 0 { 0.0 } else { successes as f64 / trials as f64 },
            per_trial_decoded_counts: records.iter().map(|r| r.decoded_total).collect(),
            records,
        }
    }

    pub fn mean_decoded(&self) -> f64 {
        if self.trials == 0 {
            return 0.0;
        }
        self.per_trial_decoded_counts.iter().sum::<usize>() as f64 / self.trials as f64
    }
}

/// Random streams of one trial: channel draws and optimizer randomness.
pub fn trial_rngs(seed: u64, trial: usize) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut ch = ChaCha8Rng::seed_from_u64(seed);
    ch.set_stream(2 * trial as u64);
    let mut opt = ChaCha8Rng::seed_from_u64(seed);
    opt.set_stream(2 * trial as u64 + 1);
    (ch, opt)
}

/// Scores one trial. Scheme errors and missing solutions count as failures
/// and are reported in the record's diagnostics.
pub fn run_trial(scheme: &dyn Scheme, scenario: &Scenario, seed: u64, trial: usize) -> TrialRecord {
    let (mut rng_ch, mut rng_opt) = trial_rngs(seed, trial);
    let start = Instant::now();
    let failed = |msg: String, iterations: usize, diagnostics: Vec<String>| {
        let mut diagnostics = diagnostics;
        diagnostics.push(msg);
        TrialRecord {
            trial,
            decoded_stage1: 0,
            decoded_total: 0,
            success: false,
            iterations,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            diagnostics,
        }
    };
    let mut ctx = match scenario.draw(&mut rng_ch) {
        Ok(ctx) => ctx,
        Err(e) => return failed(format!("channel draw failed: {e}"), 0, Vec::new()),
    };
    if !scheme.uses_irs() {
        ctx.realization = ctx.realization.without_irs();
        ctx.effective = ctx.realization.effective();
        // Keep the direct-link estimation error, drop the reflected part.
        let m = ctx.realization.num_elements();
        for r in &mut ctx.estimate.estimated_stacked {
            r.columns_mut(0, m).fill(C64::from(0.0));
        }
    }
    let out = match scheme.optimize(&ctx, &mut rng_opt) {
        Ok(out) => out,
        Err(e) => return failed(format!("{} failed: {e}", scheme.name()), 0, Vec::new()),
    };
    let Some(solution) = out.solution else {
        return failed(format!("{} returned no solution", scheme.name()), out.iterations, out.diagnostics);
    };
    match evaluate_protocol(&solution, &ctx.realization, &ctx.thresholds, ctx.relay_power_w) {
        Ok(outcome) => TrialRecord {
            trial,
            decoded_stage1: outcome.decoded_stage1(),
            decoded_total: outcome.decoded_total(),
            success: outcome.all_decoded,
            iterations: out.iterations,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            diagnostics: out.diagnostics,
        },
        Err(e) => failed(format!("evaluation failed: {e}"), out.iterations, out.diagnostics),
    }
}

/// Monte Carlo reliability of `scheme`; trial `t` uses random streams derived
/// from `(seed, t)` only, so the result does not depend on scheduling.
pub fn monte_carlo_prc(scheme: &dyn Scheme, scenario: &Scenario, trials: usize, seed: u64) -> Result<PrcResult> {
    if trials == 0 {
        return Err(Error::domain("at least one trial is required"));
    }
    #[cfg(feature = "parallel")]
    let records: Vec<TrialRecord> = {
        use rayon::prelude::*;
        (0..trials)
            .into_par_iter()
            .map(|t| run_trial(scheme, scenario, seed, t))
            .collect()
    };
    #[cfg(not(feature = "parallel"))]
    let records: Vec<TrialRecord> = (0..trials).map(|t| run_trial(scheme, scenario, seed, t)).collect();
    Ok(PrcResult::from_records(records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::sample_rayleigh;
    use crate::linalg::cvec;
    use proptest::prelude::*;

    fn thresholds(g1: f64, g2: f64) -> SnrThresholds {
        SnrThresholds {
            eps_max: 1e-6,
            gamma_th_stage1: g1,
            gamma_th_stage2: g2,
        }
    }

    fn random_channels(seed: u64, k: usize, nt: usize, m: usize) -> ChannelRealization {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d2d = sample_rayleigh(k, k, 1.0, &mut rng);
        for i in 0..k {
            d2d[(i, i)] = C64::from(0.0);
        }
        ChannelRealization {
            direct: sample_rayleigh(nt, k, 1.0, &mut rng),
            ap_irs: sample_rayleigh(m, nt, 1.0, &mut rng),
            irs_actuator: sample_rayleigh(m, k, 1.0, &mut rng),
            d2d,
            noise_power_w: 0.5,
        }
    }

    fn random_solution(seed: u64, nt: usize, m: usize) -> BeamformingSolution {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = sample_rayleigh(nt, 1, 1.0, &mut rng).column(0).into_owned();
        let v = sample_rayleigh(m, 1, 1.0, &mut rng).map(|z| z / z.norm()).column(0).into_owned();
        BeamformingSolution::new(w, v)
    }

    #[test]
    fn stage1_examples() {
        let ch = random_channels(1, 3, 2, 4);
        let zero = BeamformingSolution::zero(2, 4);
        assert_eq!(stage1_snr(&zero, &ch, 0).unwrap(), 0.0);
        let sol = random_solution(2, 2, 4);
        let no_irs = ch.without_irs();
        let direct = (ch.direct.column(1).adjoint() * &sol.transmit)[(0, 0)].norm_sqr() / 0.5;
        assert!((stage1_snr(&sol, &no_irs, 1).unwrap() - direct).abs() < 1e-12 * direct);
        assert!(stage1_snr(&sol, &ch, 3).is_err());
    }

    #[test]
    fn indicator_boundary() {
        assert_eq!(stage1_indicators(&[2.0, 2.0], 2.0), vec![true, true]);
        assert_eq!(stage1_indicators(&[0.0, 0.0], 2.0), vec![false, false]);
        assert_eq!(stage1_indicators(&[1.0, 3.0, 2.0], 2.0), vec![false, true, true]);
    }

    #[test]
    fn stage2_examples() {
        let g = C64::new(0.6, -0.8);
        assert_eq!(stage2_snr(1.5, &[false, false, false], &[g, g, g], 0, 1.0, 1.0), 1.5);
        // One relay with P|g|²/σ² = 2.
        assert!((stage2_snr(1.0, &[false, true], &[C64::from(0.0), g], 0, 2.0, 1.0) - 3.0).abs() < 1e-12);
        assert!((stage2_snr(1.0, &[false, true, true], &[C64::from(0.0), g, -g], 0, 2.0, 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_worked_three_actuators() {
        // Single antenna, single IRS element, unit noise.
        let ch = ChannelRealization {
            direct: CMat::from_row_slice(1, 3, &[C64::from(2.0), C64::from(0.5), C64::from(0.1)]),
            ap_irs: CMat::from_element(1, 1, C64::from(1.0)),
            irs_actuator: CMat::from_row_slice(1, 3, &[C64::from(0.0), C64::from(1.0), C64::from(0.0)]),
            d2d: CMat::from_row_slice(
                3,
                3,
                &[
                    C64::from(0.0), C64::from(0.0), C64::from(1.0),
                    C64::from(0.0), C64::from(0.0), C64::from(1.0),
                    C64::from(1.0), C64::from(1.0), C64::from(0.0),
                ],
            ),
            noise_power_w: 1.0,
        };
        let sol = BeamformingSolution::new(cvec(&[C64::from(1.0)]), cvec(&[C64::from(-1.0)]));
        let out = evaluate_protocol(&sol, &ch, &thresholds(1.0, 5.0), 2.0).unwrap();
        // γ1 = 4, |0.5 + (−1)·1·1|² = 0.25, 0.01.
        assert_eq!(out.stage1_snr, vec![4.0, 0.25, 0.010000000000000002]);
        assert_eq!(out.stage1_flag, vec![true, false, false]);
        // Actuator 2 receives the relay of actuator 0 only: 0.01 + 2·1 = 2.01.
        assert!((out.stage2_snr[2] - 2.01).abs() < 1e-12);
        assert_eq!(out.stage2_snr[1], 0.25);
        assert_eq!(out.stage2_flag, vec![false, false, false]);
        assert!(!out.all_decoded);
        let out = evaluate_protocol(&sol, &ch, &thresholds(1.0, 2.0), 2.0).unwrap();
        assert_eq!(out.stage2_flag, vec![false, false, true]);
        assert_eq!(out.decoded_total(), 2);
    }

    #[test]
    fn all_stage1_success_skips_stage2() {
        let ch = random_channels(3, 4, 2, 3);
        let sol = random_solution(4, 2, 3);
        let out = evaluate_protocol(&sol, &ch, &thresholds(1e-12, 1e-12), 1.0).unwrap();
        if out.stage1_flag.iter().all(|&f| f) {
            assert!(out.all_decoded);
            assert!(out.stage2_flag.iter().all(|&f| !f));
        }
        let mut dead = ch.clone();
        dead.d2d.fill(C64::from(0.0));
        let out = evaluate_protocol(&sol, &dead, &thresholds(1e12, 1e12), 1.0).unwrap();
        assert!(!out.all_decoded);
    }

    proptest! {
        #[test]
        fn lifted_and_vector_forms_agree(seed in any::<u64>(), k in 1usize..5, nt in 1usize..5, m in 0usize..8) {
            let ch = random_channels(seed, k, nt, m);
            let sol = random_solution(seed ^ 0x55, nt, m);
            let eff = ch.effective();
            let w = outer(&sol.transmit);
            let v = outer(&sol.extended_phases());
            for idx in 0..k {
                let a = stage1_snr(&sol, &ch, idx).unwrap();
                let b = lifted_snr(&w, &v, &eff.stacked[idx], ch.noise_power_w);
                prop_assert!((a - b).abs() <= 1e-10 * a.max(1e-300));
            }
            let mut relaxed = sol.clone();
            relaxed.relaxed = true;
            let a = stage1_snrs(&sol, &ch).unwrap();
            let b = stage1_snrs(&relaxed, &ch).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-10 * x.max(1e-300));
            }
        }

        #[test]
        fn mrc_never_hurts_and_power_is_monotone(seed in any::<u64>(), scale in 1.0f64..4.0) {
            let ch = random_channels(seed, 4, 2, 3);
            let sol = random_solution(seed.wrapping_add(1), 2, 3);
            let th = thresholds(1.0, 1.5);
            let out = evaluate_protocol(&sol, &ch, &th, 0.3).unwrap();
            for (a, b) in out.stage1_snr.iter().zip(&out.stage2_snr) {
                prop_assert!(b >= a);
            }
            for (f1, f2) in out.stage1_flag.iter().zip(&out.stage2_flag) {
                prop_assert!(!(*f1 && *f2));
            }
            let mut louder = sol.clone();
            louder.transmit *= C64::from(scale);
            let out2 = evaluate_protocol(&louder, &ch, &th, 0.3).unwrap();
            for (a, b) in out.stage1_flag.iter().zip(&out2.stage1_flag) {
                prop_assert!(!a || *b);
            }
        }
    }
}
