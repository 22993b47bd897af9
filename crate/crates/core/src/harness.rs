//! Experiment orchestration: TOML configuration, the scheme registry,
//! Monte Carlo sweeps, and CSV/SVG output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{dbm_to_watts, LargeScaleParams, Point, ScenarioGeometry};
use crate::fbl::BlocklengthBudget;
use crate::optim_perfect::{self, AltMinConfig, WhitenedChannels};
use crate::protocol::{monte_carlo_prc, PrcResult, Scenario, Scheme, SchemeOutput, TrialContext};
use crate::{Error, Result};

pub const SCHEMES: [&str; 7] = [
    "altmin",
    "sca",
    "upper_bound",
    "random_phase",
    "no_irs",
    "robust_bcd",
    "penalty_bcd",
];

pub const SWEEP_PARAMETERS: [&str; 7] = [
    "packet_bits",
    "delay_ms",
    "irs_elements",
    "antennas",
    "actuators",
    "uncertainty_ratio",
    "actuator_offset_m",
];

pub const CSV_HEADER: &str =
    "sweep_name,sweep_value,trial,decoded_stage1,decoded_total,success,iterations,wall_ms";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub schemes: Vec<String>,
    pub trials: usize,
    pub seed: u64,
    /// Wall-clock columns are zero unless set, which keeps CSVs reproducible.
    pub record_wall_time: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            schemes: vec!["altmin".into()],
            trials: 100,
            seed: 1,
            record_wall_time: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub actuators: usize,
    pub antennas: usize,
    pub irs_elements: usize,
    pub pmax_dbm: f64,
    pub relay_power_dbm: f64,
    pub noise_dbm: f64,
    pub bandwidth_hz: f64,
    pub delay_ms: f64,
    pub packet_bits: u64,
    pub eps_max: f64,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            actuators: 20,
            antennas: 2,
            irs_elements: 10,
            pmax_dbm: 43.0,
            relay_power_dbm: 23.0,
            noise_dbm: -70.0,
            bandwidth_hz: 0.5e6,
            delay_ms: 1.0,
            packet_bits: 500,
            eps_max: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometrySection {
    pub ap_position_m: Point,
    pub irs_position_m: Point,
    pub circle_center_m: Point,
    pub circle_radius_m: f64,
    pub actuator_offset_m: f64,
    /// Draw new actuator positions every trial; otherwise one layout per
    /// sweep point.
    pub redraw_positions: bool,
}

impl Default for GeometrySection {
    fn default() -> Self {
        Self {
            ap_position_m: ScenarioGeometry::DEFAULT_AP,
            irs_position_m: ScenarioGeometry::DEFAULT_IRS,
            circle_center_m: ScenarioGeometry::DEFAULT_CENTER,
            circle_radius_m: ScenarioGeometry::DEFAULT_RADIUS,
            actuator_offset_m: 0.0,
            redraw_positions: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub c0_db: f64,
    pub alpha_ricean: f64,
    pub alpha_rayleigh: f64,
    pub ricean_factor: f64,
    pub carrier_hz: f64,
    pub uncertainty_ratio: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let ls = LargeScaleParams::default();
        Self {
            c0_db: ls.c0_db,
            alpha_ricean: ls.alpha_ricean,
            alpha_rayleigh: ls.alpha_rayleigh,
            ricean_factor: ls.ricean_factor,
            carrier_hz: ls.carrier_hz,
            uncertainty_ratio: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub tolerance: f64,
    pub smoothing: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub decode_margin: f64,
    pub sca_max_iter: usize,
    pub initial_penalty: f64,
    pub penalty_shrink: f64,
    pub penalty_floor: f64,
    pub randomization_candidates: usize,
    pub bcd_max_outer: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let a = AltMinConfig::default();
        Self {
            tolerance: a.tolerance,
            smoothing: a.smoothing,
            max_outer: a.max_outer,
            max_inner: a.max_inner,
            decode_margin: a.decode_margin,
            sca_max_iter: 300,
            initial_penalty: 1.0,
            penalty_shrink: 0.5,
            penalty_floor: 1e-6,
            randomization_candidates: 200,
            bcd_max_outer: 30,
        }
    }
}

impl SolverSection {
    pub fn altmin(&self) -> AltMinConfig {
        AltMinConfig {
            smoothing: self.smoothing,
            tolerance: self.tolerance,
            max_outer: self.max_outer,
            max_inner: self.max_inner,
            decode_margin: self.decode_margin,
            ..AltMinConfig::default()
        }
    }

    #[cfg(feature = "sdp")]
    pub fn sca(&self) -> optim_perfect::ScaConfig {
        optim_perfect::ScaConfig {
            smoothing: self.smoothing,
            tolerance: self.tolerance,
            max_iter: self.sca_max_iter,
            initial_penalty: self.initial_penalty,
            penalty_shrink: self.penalty_shrink,
            penalty_floor: self.penalty_floor,
            decode_margin: self.decode_margin,
            ..optim_perfect::ScaConfig::default()
        }
    }

    #[cfg(feature = "sdp")]
    pub fn bcd(&self) -> crate::optim_robust::BcdConfig {
        crate::optim_robust::BcdConfig {
            smoothing: self.smoothing,
            tolerance: self.tolerance,
            max_outer: self.bcd_max_outer,
            decode_margin: self.decode_margin,
            candidates: self.randomization_candidates,
            initial_penalty: self.initial_penalty,
            ..crate::optim_robust::BcdConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub system: SystemSection,
    pub geometry: GeometrySection,
    pub channel: ChannelSection,
    pub solver: SolverSection,
    pub sweep: Option<SweepSection>,
}

fn is_integer_parameter(name: &str) -> bool {
    matches!(name, "packet_bits" | "irs_elements" | "antennas" | "actuators")
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(vec![e.to_string()]))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    /// Every problem with the configuration, not just the first.
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let e = &self.experiment;
        if e.schemes.is_empty() {
            errs.push("experiment.schemes must name at least one scheme".into());
        }
        for s in &e.schemes {
            if !SCHEMES.contains(&s.as_str()) {
                errs.push(format!("unknown scheme `{s}` (expected one of {})", SCHEMES.join(", ")));
            }
        }
        if e.trials == 0 {
            errs.push("experiment.trials must be positive".into());
        }
        let s = &self.system;
        if s.actuators == 0 {
            errs.push("system.actuators must be positive".into());
        }
        if s.antennas == 0 {
            errs.push("system.antennas must be positive".into());
        }
        for (key, v) in [
            ("system.pmax_dbm", s.pmax_dbm),
            ("system.relay_power_dbm", s.relay_power_dbm),
            ("system.noise_dbm", s.noise_dbm),
        ] {
            if !v.is_finite() {
                errs.push(format!("{key} must be finite"));
            }
        }
        if !(s.bandwidth_hz > 0.0) {
            errs.push("system.bandwidth_hz must be positive".into());
        }
        if !(s.delay_ms > 0.0) {
            errs.push("system.delay_ms must be positive".into());
        }
        if s.packet_bits == 0 {
            errs.push("system.packet_bits must be positive".into());
        }
        if !(s.eps_max > 0.0 && s.eps_max < 0.5) {
            errs.push("system.eps_max must lie in (0, 0.5)".into());
        }
        if !(self.geometry.circle_radius_m >= 0.0) {
            errs.push("geometry.circle_radius_m must be nonnegative".into());
        }
        let c = &self.channel;
        if !(0.0..=1.0).contains(&c.uncertainty_ratio) {
            errs.push("channel.uncertainty_ratio must lie in [0, 1]".into());
        }
        if !(c.ricean_factor >= 0.0) {
            errs.push("channel.ricean_factor must be nonnegative".into());
        }
        if !(c.carrier_hz > 0.0) {
            errs.push("channel.carrier_hz must be positive".into());
        }
        let so = &self.solver;
        if !(so.tolerance > 0.0) {
            errs.push("solver.tolerance must be positive".into());
        }
        if !(so.smoothing > 0.0) {
            errs.push("solver.smoothing must be positive".into());
        }
        if so.max_outer == 0 || so.max_inner == 0 || so.sca_max_iter == 0 || so.bcd_max_outer == 0 {
            errs.push("solver iteration limits must be positive".into());
        }
        if !(so.decode_margin >= 0.0) {
            errs.push("solver.decode_margin must be nonnegative".into());
        }
        if !(so.initial_penalty > 0.0 && so.penalty_floor > 0.0) {
            errs.push("solver penalties must be positive".into());
        }
        if !(so.penalty_shrink > 0.0 && so.penalty_shrink < 1.0) {
            errs.push("solver.penalty_shrink must lie in (0, 1)".into());
        }
        if so.randomization_candidates == 0 {
            errs.push("solver.randomization_candidates must be positive".into());
        }
        if let Some(sw) = &self.sweep {
            if !SWEEP_PARAMETERS.contains(&sw.parameter.as_str()) {
                errs.push(format!(
                    "unknown sweep parameter `{}` (expected one of {})",
                    sw.parameter,
                    SWEEP_PARAMETERS.join(", ")
                ));
            }
            if sw.values.is_empty() {
                errs.push("sweep.values must not be empty".into());
            }
            for &v in &sw.values {
                if !v.is_finite() {
                    errs.push(format!("sweep value {v} is not finite"));
                } else if is_integer_parameter(&sw.parameter) && (v.fract() != 0.0 || v < 0.0) {
                    errs.push(format!("sweep value {v} for `{}` must be a nonnegative integer", sw.parameter));
                }
            }
            let base = self.clone();
            for &v in &sw.values {
                if v.is_finite() {
                    let mut point = base.clone();
                    point.sweep = None;
                    if point.apply(&sw.parameter, v).is_ok() {
                        errs.extend(
                            point
                                .validation_errors()
                                .into_iter()
                                .map(|e| format!("at {} = {v}: {e}", sw.parameter)),
                        );
                    }
                }
            }
        }
        if errs.is_empty() && self.sweep.is_none() {
            if let Err(e) = self.thresholds_budget() {
                errs.push(format!("blocklength budget: {e}"));
            }
        }
        errs
    }

    pub fn validate(&self) -> Result<()> {
        let errs = self.validation_errors();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// Overrides one sweepable parameter.
    pub fn apply(&mut self, parameter: &str, value: f64) -> Result<()> {
        let as_count = || -> Result<usize> {
            if value.is_finite() && value >= 0.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Config(vec![format!("`{parameter}` needs a nonnegative integer, got {value}")]))
            }
        };
        match parameter {
            "packet_bits" => self.system.packet_bits = as_count()? as u64,
            "delay_ms" => self.system.delay_ms = value,
            "irs_elements" => self.system.irs_elements = as_count()?,
            "antennas" => self.system.antennas = as_count()?,
            "actuators" => self.system.actuators = as_count()?,
            "uncertainty_ratio" => self.channel.uncertainty_ratio = value,
            "actuator_offset_m" => self.geometry.actuator_offset_m = value,
            other => return Err(Error::Config(vec![format!("unknown sweep parameter `{other}`")])),
        }
        Ok(())
    }

    fn thresholds_budget(&self) -> Result<BlocklengthBudget> {
        BlocklengthBudget::new(self.system.delay_ms * 1e-3, self.system.bandwidth_hz, self.system.packet_bits)
    }

    /// Scenario for the current (non-swept) parameters.
    pub fn scenario(&self) -> Result<Scenario> {
        let s = &self.system;
        let g = &self.geometry;
        let c = &self.channel;
        let thresholds = self.thresholds_budget()?.thresholds(s.eps_max)?;
        Ok(Scenario {
            actuators: s.actuators,
            antennas: s.antennas,
            elements: s.irs_elements,
            ap_position: g.ap_position_m,
            irs_position: g.irs_position_m,
            circle_center: g.circle_center_m,
            circle_radius: g.circle_radius_m,
            actuator_offset_m: g.actuator_offset_m,
            large_scale: LargeScaleParams {
                c0_db: c.c0_db,
                alpha_ricean: c.alpha_ricean,
                alpha_rayleigh: c.alpha_rayleigh,
                ricean_factor: c.ricean_factor,
                carrier_hz: c.carrier_hz,
            },
            noise_power_w: dbm_to_watts(s.noise_dbm),
            max_power_w: dbm_to_watts(s.pmax_dbm),
            relay_power_w: dbm_to_watts(s.relay_power_dbm),
            thresholds,
            uncertainty_ratio: c.uncertainty_ratio,
            layout: None,
        })
    }

    /// `(name, value, config)` for every sweep point; a run without a sweep
    /// is a single point named `none` with value 0.
    pub fn sweep_points(&self) -> Result<Vec<(String, f64, ExperimentConfig)>> {
        match &self.sweep {
            None => {
                let mut c = self.clone();
                c.sweep = None;
                Ok(vec![("none".into(), 0.0, c)])
            }
            Some(sw) => sw
                .values
                .iter()
                .map(|&v| {
                    let mut c = self.clone();
                    c.sweep = None;
                    c.apply(&sw.parameter, v)?;
                    Ok((sw.parameter.clone(), v, c))
                })
                .collect(),
        }
    }
}

fn design_channels(ctx: &TrialContext) -> Result<WhitenedChannels> {
    WhitenedChannels::new(
        &ctx.estimate.estimated_stacked,
        ctx.realization.noise_power_w,
        ctx.max_power_w,
    )
}

/// Proposed alternating minimisation.
pub struct AltMinScheme(pub AltMinConfig);

impl Scheme for AltMinScheme {
    fn name(&self) -> &str {
        "altmin"
    }

    fn optimize(&self, ctx: &TrialContext, rng: &mut ChaCha8Rng) -> Result<SchemeOutput> {
        let chan = design_channels(ctx)?;
        let (w0, v0) = optim_perfect::initial_point(&chan, rng);
        let out = optim_perfect::altmin(&chan, ctx.thresholds.gamma_th_stage1, &self.0, w0, v0)?;
        Ok(SchemeOutput {
            solution: Some(out.solution),
            iterations: out.state.outer_iter,
            diagnostics: out.diagnostics,
        })
    }
}

/// Uniformly random phases with an optimised transmit beam.
pub struct RandomPhaseScheme(pub AltMinConfig);

impl Scheme for RandomPhaseScheme {
    fn name(&self) -> &str {
        "random_phase"
    }

    fn optimize(&self, ctx: &TrialContext, rng: &mut ChaCha8Rng) -> Result<SchemeOutput> {
        let chan = design_channels(ctx)?;
        let (w0, v0) = optim_perfect::initial_point(&chan, rng);
        let out = optim_perfect::optimize_transmit(&chan, ctx.thresholds.gamma_th_stage1, &self.0, &v0, w0)?;
        Ok(SchemeOutput {
            solution: Some(out.solution),
            iterations: out.state.outer_iter,
            diagnostics: out.diagnostics,
        })
    }
}

/// Transmit beam only, with the IRS removed from the channel.
pub struct NoIrsScheme(pub AltMinConfig);

impl Scheme for NoIrsScheme {
    fn name(&self) -> &str {
        "no_irs"
    }

    fn uses_irs(&self) -> bool {
        false
    }

    fn optimize(&self, ctx: &TrialContext, _rng: &mut ChaCha8Rng) -> Result<SchemeOutput> {
        let chan = design_channels(ctx)?;
        let phases = crate::linalg::CVec::from_element(chan.elements, crate::linalg::ONE);
        let w0 = chan.strongest_direct_beam();
        let out = optim_perfect::optimize_transmit(&chan, ctx.thresholds.gamma_th_stage1, &self.0, &phases, w0)?;
        Ok(SchemeOutput {
            solution: Some(out.solution),
            iterations: out.state.outer_iter,
            diagnostics: out.diagnostics,
        })
    }
}

#[cfg(feature = "sdp")]
pub struct ScaScheme(pub optim_perfect::ScaConfig);

#[cfg(feature = "sdp")]
impl Scheme for ScaScheme {
    fn name(&self) -> &str {
        "sca"
    }

    fn optimize(&self, ctx: &TrialContext, rng: &mut ChaCha8Rng) -> Result<SchemeOutput> {
        let chan = design_channels(ctx)?;
        let (w0, v0) = optim_perfect::initial_point(&chan, rng);
        let out = optim_perfect::sca(&chan, ctx.thresholds.gamma_th_stage1, &self.0, w0, v0)?;
        Ok(SchemeOutput {
            solution: Some(out.solution),
            iterations: out.state.iterations,
            diagnostics: out.diagnostics,
        })
    }
}

/// Rank-relaxed bound warm-started from AltMin.
#[cfg(feature = "sdp")]
pub struct UpperBoundScheme(pub AltMinConfig, pub optim_perfect::ScaConfig);

#[cfg(feature = "sdp")]
impl Scheme for UpperBoundScheme {
    fn name(&self) -> &str {
        "upper_bound"
    }

    fn optimize(&self, ctx: &TrialContext, rng: &mut ChaCha8Rng) -> Result<SchemeOutput> {
        let chan = design_channels(ctx)?;
        let gamma = ctx.thresholds.gamma_th_stage1;
        let (w0, v0) = optim_perfect::initial_point(&chan, rng);
        let warm = optim_perfect::altmin(&chan, gamma, &self.0, w0, v0)?;
        let out = optim_perfect::upper_bound_solver(
            &chan,
            gamma,
            &self.1,
            &warm.state.transmit,
            &warm.state.phases,
        )?;
        Ok(SchemeOutput {
            solution: Some(out.solution),
            iterations: warm.state.outer_iter + out.iterations,
            diagnostics: warm.diagnostics,
        })
    }
}

/// Worst-case robust BCD with Gaussian randomisation; `penalized` adds the
/// rank penalties to every block.
#[cfg(feature = "sdp")]
pub struct RobustBcdScheme {
    pub config: crate::optim_robust::BcdConfig,
    pub penalized: bool,
}

#[cfg(feature = "sdp")]
impl Scheme for RobustBcdScheme {
    fn name(&self) -> &str {
        if self.penalized {
            "penalty_bcd"
        } else {
            "robust_bcd"
        }
    }

    fn optimize(&self, ctx: &TrialContext, rng: &mut ChaCha8Rng) -> Result<SchemeOutput> {
        use crate::optim_robust::{robust_design, UncertaintySpec};
        let chan = design_channels(ctx)?;
        let spec = UncertaintySpec::from_estimate(&ctx.estimate, &chan)?;
        let out = robust_design(
            &chan,
            &spec,
            ctx.thresholds.gamma_th_stage1,
            &self.config,
            self.penalized,
            rng,
        )?;
        Ok(SchemeOutput {
            solution: Some(out.solution),
            iterations: out.iterations,
            diagnostics: out.diagnostics,
        })
    }
}

/// Looks a scheme up by its configuration name.
pub fn scheme_by_name(name: &str, solver: &SolverSection) -> Result<Box<dyn Scheme>> {
    let alt = solver.altmin();
    match name {
        "altmin" => Ok(Box::new(AltMinScheme(alt))),
        "random_phase" => Ok(Box::new(RandomPhaseScheme(alt))),
        "no_irs" => Ok(Box::new(NoIrsScheme(alt))),
        #[cfg(feature = "sdp")]
        "sca" => Ok(Box::new(ScaScheme(solver.sca()))),
        #[cfg(feature = "sdp")]
        "upper_bound" => Ok(Box::new(UpperBoundScheme(alt, solver.sca()))),
        #[cfg(feature = "sdp")]
        "robust_bcd" | "penalty_bcd" => Ok(Box::new(RobustBcdScheme {
            config: solver.bcd(),
            penalized: name == "penalty_bcd",
        })),
        #[cfg(not(feature = "sdp"))]
        "sca" | "upper_bound" | "robust_bcd" | "penalty_bcd" => Err(Error::Unsupported(format!(
            "scheme `{name}` needs the `sdp` feature"
        ))),
        other => Err(Error::Config(vec![format!("unknown scheme `{other}`")])),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_name: String,
    pub sweep_value: f64,
    pub trial: usize,
    pub decoded_stage1: usize,
    pub decoded_total: usize,
    pub success: bool,
    pub iterations: usize,
    pub wall_ms: f64,
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub prc: PrcResult,
}

#[derive(Clone, Debug)]
pub struct SchemeSeries {
    pub scheme: String,
    pub sweep_name: String,
    pub points: Vec<SweepPoint>,
}

impl SchemeSeries {
    pub fn rows(&self, record_wall_time: bool) -> Vec<ResultRow> {
        let mut rows = Vec::new();
        for p in &self.points {
            for r in &p.prc.records {
                rows.push(ResultRow {
                    sweep_name: self.sweep_name.clone(),
                    sweep_value: p.value,
                    trial: r.trial,
                    decoded_stage1: r.decoded_stage1,
                    decoded_total: r.decoded_total,
                    success: r.success,
                    iterations: r.iterations,
                    wall_ms: if record_wall_time { r.wall_ms } else { 0.0 },
                });
            }
        }
        rows
    }

    pub fn prc_values(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.value, p.prc.prc)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub series: Vec<SchemeSeries>,
    pub elapsed_ms: f64,
}

/// Runs every scheme at every sweep point. Trial `t` of every scheme sees
/// the same channel draw.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let start = Instant::now();
    let points = config.sweep_points()?;
    let mut scenarios = Vec::with_capacity(points.len());
    for (name, value, point) in &points {
        let mut scenario = point.scenario()?;
        if !point.geometry.redraw_positions {
            let mut rng = ChaCha8Rng::seed_from_u64(config.experiment.seed);
            rng.set_stream(u64::MAX);
            let g = ScenarioGeometry::sample(
                scenario.ap_position,
                scenario.irs_position,
                scenario.circle_center,
                scenario.circle_radius,
                scenario.actuators,
                &mut rng,
            );
            scenario.layout = Some(g.actuator_positions);
        }
        scenarios.push((name.clone(), *value, scenario));
    }
    let mut series = Vec::new();
    for scheme_name in &config.experiment.schemes {
        let scheme = scheme_by_name(scheme_name, &config.solver)?;
        let mut out = Vec::new();
        for (_, value, scenario) in &scenarios {
            let prc = monte_carlo_prc(scheme.as_ref(), scenario, config.experiment.trials, config.experiment.seed)?;
            out.push(SweepPoint { value: *value, prc });
        }
        series.push(SchemeSeries {
            scheme: scheme_name.clone(),
            sweep_name: points[0].0.clone(),
            points: out,
        });
    }
    Ok(ExperimentResult {
        series,
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

pub fn csv_string(rows: &[ResultRow]) -> String {
    let mut s = String::with_capacity(64 * (rows.len() + 1));
    s.push_str(CSV_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.sweep_name,
            r.sweep_value,
            r.trial,
            r.decoded_stage1,
            r.decoded_total,
            r.success,
            r.iterations,
            r.wall_ms
        );
    }
    s
}

pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    fs::write(path, csv_string(rows))?;
    Ok(())
}

/// Parses a CSV written by [`emit_csv`].
pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    if lines.next() != Some(CSV_HEADER) {
        return Err(Error::domain("missing or unexpected CSV header"));
    }
    let bad = |line: &str| Error::domain(format!("malformed CSV row `{line}`"));
    lines
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad(line));
            }
            Ok(ResultRow {
                sweep_name: f[0].to_string(),
                sweep_value: f[1].parse().map_err(|_| bad(line))?,
                trial: f[2].parse().map_err(|_| bad(line))?,
                decoded_stage1: f[3].parse().map_err(|_| bad(line))?,
                decoded_total: f[4].parse().map_err(|_| bad(line))?,
                success: f[5].parse().map_err(|_| bad(line))?,
                iterations: f[6].parse().map_err(|_| bad(line))?,
                wall_ms: f[7].parse().map_err(|_| bad(line))?,
            })
        })
        .collect()
}

/// `scheme,sweep_name,sweep_value,trials,successes,prc,mean_decoded`.
pub fn prc_csv_string(series: &[SchemeSeries]) -> String {
    let mut s = String::from("scheme,sweep_name,sweep_value,trials,successes,prc,mean_decoded\n");
    for sr in series {
        for p in &sr.points {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                sr.scheme,
                sr.sweep_name,
                p.value,
                p.prc.trials,
                p.prc.successes,
                p.prc.prc,
                p.prc.mean_decoded()
            );
        }
    }
    s
}

/// One curve of a PRC plot.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 7] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"];

/// PRC-versus-sweep-value chart as a standalone SVG document. The y axis is
/// fixed to `[0, 1]`; legend order follows `series`.
pub fn plot_svg(series: &[PlotSeries], x_label: &str) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (64.0, 170.0, 24.0, 56.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let (mut xmin, mut xmax) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !xmin.is_finite() {
        xmin = 0.0;
        xmax = 1.0;
    }
    if xmax - xmin < 1e-12 {
        xmin -= 0.5;
        xmax += 0.5;
    }
    let sx = |x: f64| left + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: f64| top + (1.0 - y.clamp(0.0, 1.0)) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let y = i as f64 / 5.0;
        let py = sy(y);
        let _ = writeln!(
            s,
            r##"<line x1="{left}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{y:.1}</text>"##,
            left + pw,
            left - 6.0,
            py + 4.0
        );
    }
    for i in 0..=4 {
        let x = xmin + (xmax - xmin) * i as f64 / 4.0;
        let px = sx(x);
        let _ = writeln!(
            s,
            r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            top + ph + 18.0,
            format_tick(x)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">PRC</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, sr) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = sr
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if pts.len() > 1 {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                pts.join(" ")
            );
        }
        for &(x, y) in &sr.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let lx = left + pw + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&sr.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn format_tick(x: f64) -> String {
    if x.fract().abs() < 1e-9 {
        format!("{}", x.round() as i64)
    } else {
        format!("{x:.3}").trim_end_matches('0').to_string()
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn emit_plot(series: &[PlotSeries], x_label: &str, path: &Path) -> Result<()> {
    fs::write(path, plot_svg(series, x_label))?;
    Ok(())
}

/// Writes `<scheme>.csv` for every scheme plus `prc.csv` and `prc.svg`.
pub fn write_outputs(config: &ExperimentConfig, result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for sr in &result.series {
        let path = dir.join(format!("{}.csv", sr.scheme));
        emit_csv(&sr.rows(config.experiment.record_wall_time), &path)?;
        written.push(path);
    }
    let prc_path = dir.join("prc.csv");
    fs::write(&prc_path, prc_csv_string(&result.series))?;
    written.push(prc_path);
    let plot: Vec<PlotSeries> = result
        .series
        .iter()
        .map(|s| PlotSeries {
            label: s.scheme.clone(),
            points: s.prc_values(),
        })
        .collect();
    let x_label = result.series.first().map(|s| s.sweep_name.as_str()).unwrap_or("none");
    let svg_path = dir.join("prc.svg");
    emit_plot(&plot, x_label, &svg_path)?;
    written.push(svg_path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(trial: usize) -> ResultRow {
        ResultRow {
            sweep_name: "packet_bits".into(),
            sweep_value: 300.0,
            trial,
            decoded_stage1: 3,
            decoded_total: 4,
            success: trial % 2 == 0,
            iterations: 7,
            wall_ms: 0.0,
        }
    }

    #[test]
    fn empty_csv_is_header_only() {
        assert_eq!(csv_string(&[]), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn csv_round_trip() {
        let rows: Vec<ResultRow> = (0..4).map(row).collect();
        assert_eq!(parse_csv(&csv_string(&rows)).unwrap(), rows);
    }

    #[test]
    fn csv_golden_schema() {
        let text = csv_string(&[row(0)]);
        assert_eq!(
            text,
            "sweep_name,sweep_value,trial,decoded_stage1,decoded_total,success,iterations,wall_ms\n\
             packet_bits,300,0,3,4,true,7,0\n"
        );
    }

    #[test]
    fn validation_lists_every_error() {
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.schemes = vec!["nope".into()];
        cfg.experiment.trials = 0;
        cfg.system.delay_ms = -1.0;
        let errs = cfg.validation_errors();
        assert!(errs.len() >= 3, "{errs:?}");
    }

    #[test]
    fn toml_round_trip_and_unknown_keys() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(back, cfg);
        assert!(ExperimentConfig::from_toml_str("[system]\npmax_watts = 3\n").is_err());
    }

    #[test]
    fn plot_is_deterministic_and_clamped() {
        let series = vec![
            PlotSeries {
                label: "altmin".into(),
                points: vec![(300.0, 1.0), (500.0, 1.2)],
            },
            PlotSeries {
                label: "no_irs".into(),
                points: vec![(300.0, -0.1)],
            },
        ];
        let a = plot_svg(&series, "packet_bits");
        assert_eq!(a, plot_svg(&series, "packet_bits"));
        let first = a.find(">altmin<").unwrap();
        let second = a.find(">no_irs<").unwrap();
        assert!(first < second);
        let single = plot_svg(&series[1..], "x");
        assert!(single.contains("<circle"));
    }
}
