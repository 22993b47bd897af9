//! Browser bindings: threshold explorer, one-trial link view and a small PRC
//! sweep. Results cross the boundary as JSON strings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use irs_urllc::fbl::{decode_error_prob, snr_threshold};
use irs_urllc::harness::{run_experiment, scheme_by_name, ExperimentConfig, SweepSection};
use irs_urllc::protocol::{evaluate_protocol, trial_rngs, Scheme};

fn js_err(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn to_json<T: Serialize>(v: &T) -> Result<String, JsValue> {
    serde_json::to_string(v).map_err(js_err)
}

fn db(x: f64) -> f64 {
    10.0 * x.max(1e-30).log10()
}

#[derive(Serialize)]
struct ThresholdView {
    threshold_db: f64,
    snr_db: Vec<f64>,
    log10_error: Vec<f64>,
}

/// SNR threshold for `(uses, bits, eps)` and the error-probability curve
/// around it.
#[wasm_bindgen]
pub fn threshold_curve(uses: u32, bits: u32, eps: f64) -> Result<String, JsValue> {
    let th = snr_threshold(eps, uses as u64, bits as u64).map_err(js_err)?;
    let centre = db(th);
    let mut snr_db = Vec::new();
    let mut log10_error = Vec::new();
    for i in 0..=120 {
        let x = centre - 6.0 + 0.1 * i as f64;
        let p = decode_error_prob(10f64.powf(x / 10.0), uses as u64, bits as u64).map_err(js_err)?;
        snr_db.push(x);
        log10_error.push(p.max(1e-300).log10());
    }
    to_json(&ThresholdView {
        threshold_db: centre,
        snr_db,
        log10_error,
    })
}

fn demo_config(actuators: u32, elements: u32, packet_bits: u32, delay_ms: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.system.actuators = actuators as usize;
    cfg.system.irs_elements = elements as usize;
    cfg.system.packet_bits = packet_bits as u64;
    cfg.system.delay_ms = delay_ms;
    cfg
}

#[derive(Serialize)]
struct LinkView {
    positions: Vec<[f64; 2]>,
    ap: [f64; 2],
    irs: [f64; 2],
    stage1_db: Vec<f64>,
    stage2_db: Vec<f64>,
    stage1_decoded: Vec<bool>,
    stage2_decoded: Vec<bool>,
    threshold1_db: f64,
    threshold2_db: f64,
    all_decoded: bool,
    iterations: usize,
}

/// Draws one trial and scores `scheme` (`altmin`, `random_phase` or
/// `no_irs`) on it.
#[wasm_bindgen]
pub fn single_trial(
    scheme: &str,
    seed: u32,
    actuators: u32,
    elements: u32,
    packet_bits: u32,
    delay_ms: f64,
) -> Result<String, JsValue> {
    let cfg = demo_config(actuators, elements, packet_bits, delay_ms);
    cfg.validate().map_err(js_err)?;
    let scheme: Box<dyn Scheme> = scheme_by_name(scheme, &cfg.solver).map_err(js_err)?;
    let mut scenario = cfg.scenario().map_err(js_err)?;
    let (mut channel_rng, mut solver_rng) = trial_rngs(seed as u64, 0);
    let mut layout_rng = ChaCha8Rng::seed_from_u64(seed as u64);
    let geometry = irs_urllc::channel::ScenarioGeometry::sample(
        scenario.ap_position,
        scenario.irs_position,
        scenario.circle_center,
        scenario.circle_radius,
        scenario.actuators,
        &mut layout_rng,
    );
    scenario.layout = Some(geometry.actuator_positions.clone());
    let ctx = scenario.draw(&mut channel_rng).map_err(js_err)?;
    let out = scheme.optimize(&ctx, &mut solver_rng).map_err(js_err)?;
    let solution = out.solution.ok_or_else(|| js_err("scheme returned no design"))?;
    let channels = if scheme.uses_irs() {
        ctx.realization.clone()
    } else {
        ctx.realization.without_irs()
    };
    let res = evaluate_protocol(&solution, &channels, &ctx.thresholds, ctx.relay_power_w).map_err(js_err)?;
    to_json(&LinkView {
        positions: geometry.actuator_positions.iter().map(|p| [p[0], p[1]]).collect(),
        ap: [scenario.ap_position[0], scenario.ap_position[1]],
        irs: [scenario.irs_position[0], scenario.irs_position[1]],
        stage1_db: res.stage1_snr.iter().map(|&x| db(x)).collect(),
        stage2_db: res.stage2_snr.iter().map(|&x| db(x)).collect(),
        stage1_decoded: res.stage1_flag.clone(),
        stage2_decoded: res.stage2_flag.clone(),
        threshold1_db: db(ctx.thresholds.gamma_th_stage1),
        threshold2_db: db(ctx.thresholds.gamma_th_stage2),
        all_decoded: res.all_decoded,
        iterations: out.iterations,
    })
}

#[derive(Serialize)]
struct SweepView {
    packet_bits: Vec<f64>,
    series: Vec<(String, Vec<f64>)>,
}

/// PRC versus packet size for the three IRS schemes that run without
/// semidefinite cones.
#[wasm_bindgen]
pub fn prc_sweep(
    seed: u32,
    trials: u32,
    actuators: u32,
    elements: u32,
    delay_ms: f64,
    packet_bits: Vec<f64>,
) -> Result<String, JsValue> {
    let mut cfg = demo_config(actuators, elements, 500, delay_ms);
    cfg.experiment.seed = seed as u64;
    cfg.experiment.trials = trials as usize;
    cfg.experiment.schemes = vec!["altmin".into(), "random_phase".into(), "no_irs".into()];
    cfg.sweep = Some(SweepSection {
        parameter: "packet_bits".into(),
        values: packet_bits.clone(),
    });
    let result = run_experiment(&cfg).map_err(js_err)?;
    to_json(&SweepView {
        packet_bits,
        series: result
            .series
            .iter()
            .map(|s| (s.scheme.clone(), s.points.iter().map(|p| p.prc.prc).collect()))
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_curve_brackets_target() {
        let json = threshold_curve(250, 500, 1e-6).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        let errs = v["log10_error"].as_array().unwrap();
        assert!(errs.first().unwrap().as_f64().unwrap() > -6.0);
        assert!(errs.last().unwrap().as_f64().unwrap() < -6.0);
    }

    #[test]
    fn single_trial_reports_every_actuator() {
        let json = single_trial("altmin", 3, 5, 6, 500, 1.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["stage1_db"].as_array().unwrap().len(), 5);
        assert_eq!(v["positions"].as_array().unwrap().len(), 5);
    }

    #[test]
    fn sweep_has_one_series_per_scheme() {
        let json = prc_sweep(1, 3, 4, 4, 1.0, vec![300.0, 900.0]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["series"].as_array().unwrap().len(), 3);
    }
}
