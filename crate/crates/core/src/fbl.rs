//! Finite-blocklength error model: Gaussian tail function, channel dispersion,
//! the normal-approximation decoding error and its SNR-threshold inverse.

use std::f64::consts::{LOG2_E, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Gaussian tail probability `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / SQRT_2)
}

/// Inverse of [`q_function`] on `(0, 1)`.
pub fn inv_q(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!("inv_q requires p in (0,1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return Ok(-inv_q_upper(1.0 - p));
    }
    Ok(inv_q_upper(p))
}

/// Solves `Q(x) = p` for `p < 0.5`, so `x > 0`.
fn inv_q_upper(p: f64) -> f64 {
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while q_function(hi) > p {
        lo = hi;
        hi *= 2.0;
    }
    // Tail asymptotics give a good starting point.
    let t = (-2.0 * p.ln()).sqrt();
    let mut x = (t - (2.515517 + 0.802853 * t + 0.010328 * t * t)
        / (1.0 + 1.432788 * t + 0.189269 * t * t + 0.001308 * t * t * t))
        .clamp(lo, hi);
    for _ in 0..200 {
        let f = q_function(x) - p;
        if f == 0.0 {
            return x;
        }
        if f > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let density = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let newton = x + f / density;
        x = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (hi - lo) <= 4.0 * f64::EPSILON * hi.abs() || ((q_function(x) - p) / p).abs() < 1e-15 {
            break;
        }
    }
    x
}

/// `V(γ) = (log2 e)² (1 − (1+γ)^−2)` in bits².
pub fn channel_dispersion(gamma: f64) -> Result<f64> {
    if !(gamma >= 0.0) {
        return Err(Error::domain(format!("dispersion requires gamma >= 0, got {gamma}")));
    }
    let inv = 1.0 / (1.0 + gamma);
    Ok(LOG2_E * LOG2_E * (1.0 - inv * inv))
}

/// Normal-approximation block error probability for `bits` information bits
/// sent over `uses` channel uses at SNR `gamma`.
///
/// `gamma == 0` has zero dispersion; the limit value 1 is returned.
pub fn decode_error_prob(gamma: f64, uses: u64, bits: u64) -> Result<f64> {
    if uses == 0 || bits == 0 {
        return Err(Error::domain("blocklength and packet size must be positive"));
    }
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::domain(format!("SNR must be finite and >= 0, got {gamma}")));
    }
    if gamma == 0.0 {
        return Ok(1.0);
    }
    let l = uses as f64;
    let d = bits as f64;
    let v = channel_dispersion(gamma)?;
    let arg = (l.sqrt() * gamma.ln_1p() * LOG2_E - d / l.sqrt()) / v.sqrt();
    Ok(q_function(arg))
}

/// Smallest SNR whose decoding error does not exceed `eps_max`.
pub fn snr_threshold(eps_max: f64, uses: u64, bits: u64) -> Result<f64> {
    if !(eps_max > 0.0 && eps_max <= 0.5) {
        return Err(Error::domain(format!(
            "error target must lie in (0, 0.5], got {eps_max}"
        )));
    }
    if uses == 0 || bits == 0 {
        return Err(Error::domain("blocklength and packet size must be positive"));
    }
    let gamma0 = (bits as f64 / uses as f64).exp2() - 1.0;
    if !gamma0.is_finite() {
        return Err(Error::domain("packet too large for the blocklength"));
    }
    if eps_max == 0.5 {
        return Ok(gamma0);
    }
    const CAP: f64 = 1e300;
    let mut lo = gamma0;
    let mut hi = gamma0.max(1e-12);
    loop {
        hi *= 2.0;
        if hi > CAP {
            return Err(Error::domain(format!(
                "no SNR below {CAP:e} reaches error {eps_max} with L={uses}, D={bits}"
            )));
        }
        if decode_error_prob(hi, uses, bits)? < eps_max {
            break;
        }
        lo = hi;
    }
    // Bisect to the floating-point resolution of the bracket.
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if decode_error_prob(mid, uses, bits)? <= eps_max {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Delay, bandwidth and packet size of one two-stage transmission.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlocklengthBudget {
    pub total_delay_s: f64,
    pub stage1_delay_s: f64,
    pub stage2_delay_s: f64,
    pub bandwidth_hz: f64,
    pub packet_bits: u64,
    pub stage1_uses: u64,
    pub stage2_uses: u64,
}

impl BlocklengthBudget {
    /// Equal split of `total_delay_s` between the stages.
    pub fn new(total_delay_s: f64, bandwidth_hz: f64, packet_bits: u64) -> Result<Self> {
        Self::with_split(total_delay_s, 0.5 * total_delay_s, bandwidth_hz, packet_bits)
    }

    pub fn with_split(
        total_delay_s: f64,
        stage1_delay_s: f64,
        bandwidth_hz: f64,
        packet_bits: u64,
    ) -> Result<Self> {
        if !(total_delay_s > 0.0 && bandwidth_hz > 0.0) {
            return Err(Error::domain("delay and bandwidth must be positive"));
        }
        if !(stage1_delay_s > 0.0 && stage1_delay_s < total_delay_s) {
            return Err(Error::domain("stage-1 delay must lie strictly inside the total delay"));
        }
        if packet_bits == 0 {
            return Err(Error::domain("packet must carry at least one bit"));
        }
        let stage2_delay_s = total_delay_s - stage1_delay_s;
        let stage1_uses = channel_uses(stage1_delay_s, bandwidth_hz);
        let stage2_uses = channel_uses(stage2_delay_s, bandwidth_hz);
        if stage1_uses == 0 || stage2_uses == 0 {
            return Err(Error::domain("each stage needs at least one channel use"));
        }
        Ok(Self {
            total_delay_s,
            stage1_delay_s,
            stage2_delay_s,
            bandwidth_hz,
            packet_bits,
            stage1_uses,
            stage2_uses,
        })
    }

    pub fn thresholds(&self, eps_max: f64) -> Result<SnrThresholds> {
        Ok(SnrThresholds {
            eps_max,
            gamma_th_stage1: snr_threshold(eps_max, self.stage1_uses, self.packet_bits)?,
            gamma_th_stage2: snr_threshold(eps_max, self.stage2_uses, self.packet_bits)?,
        })
    }
}

/// `floor(τ·B)`, tolerant to products like `0.25e-3 * 0.5e6` landing just
/// below an integer.
pub fn channel_uses(delay_s: f64, bandwidth_hz: f64) -> u64 {
    (delay_s * bandwidth_hz + 1e-9).floor().max(0.0) as u64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrThresholds {
    pub eps_max: f64,
    pub gamma_th_stage1: f64,
    pub gamma_th_stage2: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Simpson quadrature of the Gaussian density on `[x, x + 40]`.
    fn tail_quadrature(x: f64) -> f64 {
        let n = 200_000;
        let h = 40.0 / n as f64;
        let phi = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let mut acc = phi(x) + phi(x + 40.0);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * phi(x + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn q_function_reference_points() {
        assert_eq!(q_function(0.0), 0.5);
        assert!(q_function(40.0) < 1e-300);
        assert!((q_function(1.2815515655) - 0.1).abs() < 1e-10);
        for x in [-1.5, 0.3, 1.2815515655, 2.5, 4.0] {
            let oracle = tail_quadrature(x);
            assert!((q_function(x) - oracle).abs() <= 1e-10 * oracle.max(1e-3));
        }
    }

    #[test]
    fn inv_q_against_bisection() {
        assert_eq!(inv_q(0.5).unwrap(), 0.0);
        let target = 1e-6;
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if q_function(mid) > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        assert!((inv_q(target).unwrap() - 0.5 * (lo + hi)).abs() < 1e-9);
        assert!(inv_q(0.0).is_err());
        assert!(inv_q(1.0).is_err());
        assert!(inv_q(f64::NAN).is_err());
    }

    #[test]
    fn dispersion_limits() {
        assert_eq!(channel_dispersion(0.0).unwrap(), 0.0);
        assert!((channel_dispersion(1e9).unwrap() - LOG2_E * LOG2_E).abs() < 1e-6);
        assert!((channel_dispersion(1.0).unwrap() - LOG2_E * LOG2_E * 0.75).abs() < 1e-15);
        assert!(channel_dispersion(-0.1).is_err());
    }

    #[test]
    fn error_prob_at_capacity_point_is_half() {
        let (l, d) = (250u64, 500u64);
        let gamma = (d as f64 / l as f64).exp2() - 1.0;
        assert!((decode_error_prob(gamma, l, d).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(decode_error_prob(0.0, l, d).unwrap(), 1.0);
    }

    #[test]
    fn error_prob_matches_transcription() {
        let (l, d, g) = (250.0_f64, 500.0_f64, 5.0_f64);
        let cap = (1.0 + g).log2();
        let v = (1.0 / 2f64.ln()).powi(2) * (1.0 - (1.0 + g).powi(-2));
        let arg = (l.sqrt() * cap - d / l.sqrt()) / v.sqrt();
        let oracle = tail_quadrature(arg);
        let got = decode_error_prob(g, 250, 500).unwrap();
        assert!((got - oracle).abs() <= 1e-9 * oracle);
    }

    #[test]
    fn threshold_boundary_and_determinism() {
        let g = snr_threshold(0.5, 250, 500).unwrap();
        assert_eq!(g, 3.0);
        let a = snr_threshold(1e-6, 250, 500).unwrap();
        assert_eq!(a, snr_threshold(1e-6, 250, 500).unwrap());
        assert!(a > 3.0);
        assert!(snr_threshold(0.6, 250, 500).is_err());
    }

    #[test]
    fn blocklength_flooring() {
        let b = BlocklengthBudget::new(0.5e-3, 0.5e6, 300).unwrap();
        assert_eq!((b.stage1_uses, b.stage2_uses), (125, 125));
        let b = BlocklengthBudget::with_split(1e-3, 0.3e-3, 0.5e6, 300).unwrap();
        assert_eq!(b.stage1_uses + b.stage2_uses, 500);
        assert_eq!(b.stage1_delay_s + b.stage2_delay_s, b.total_delay_s);
        assert!(BlocklengthBudget::new(1e-6, 0.5e6, 300).is_err());
    }

    proptest! {
        #[test]
        fn inv_q_round_trip(p in 1e-9f64..(1.0 - 1e-9)) {
            let back = q_function(inv_q(p).unwrap());
            prop_assert!(((back - p) / p).abs() <= 1e-12);
        }

        #[test]
        fn error_prob_decreasing(g in 0.01f64..200.0, step in 1e-3f64..5.0, l in 50u64..600, d in 50u64..900) {
            let a = decode_error_prob(g, l, d).unwrap();
            let b = decode_error_prob(g + step, l, d).unwrap();
            prop_assert!(b <= a);
        }

        #[test]
        fn threshold_solves_definition(l in 50u64..600, d in 50u64..900, e in -9.0f64..-1.0) {
            let eps = 10f64.powf(e);
            let g = snr_threshold(eps, l, d).unwrap();
            let at = decode_error_prob(g, l, d).unwrap();
            prop_assert!(at <= eps);
            prop_assert!((at - eps).abs() <= 1e-12);
            prop_assert!(g > (d as f64 / l as f64).exp2() - 1.0);
        }
    }
}
