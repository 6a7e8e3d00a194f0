//! Monte Carlo experiment harness.
//!
//! Ties the pieces together into repeatable trials: each trial draws a
//! fresh scene (geometry, channels, blockage) from a seed derived from the
//! trial index, optionally runs the pilot/detection front end, runs the
//! sum-rate optimizer under a chosen panel-set policy, and scores the
//! result under the true blockage. Seeds are split into independent
//! substreams per purpose so the same channels are seen by every policy
//! and every noise realization stays tied to its trial.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::{
    generate_channels, ChannelSet, Geometry, PanelSet, PhaseVector, RicianParams, SystemDims,
};
use crate::crpa::{crpa_run, initial_state, wsr, CrpaConfig, IterationTrace, PhaseInit};
use crate::error::invalid;
use crate::sync::{
    detection_report, jaccard, matched_filter_bank, np_thresholds, pilot_precoders,
    scalar_observation, simulate_pilot_rx, DetectionReport, FalseAlarmLevels, PilotConfig,
    ZcConfig,
};
use crate::Result;

#[cfg(not(feature = "std"))]
use num_traits::Float;

/// Everything a trial needs: system shape, propagation constants, powers,
/// pilot design, optimizer knobs and the Monte Carlo layout.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ScenarioConfig {
    pub dims: SystemDims,
    /// Side length of the square deployment area in meters.
    pub area_side: f64,
    pub rician: RicianParams,
    /// Per panel-user blockage probability.
    pub p_block: f64,
    /// BS transmit power budget for data, relative to unit-power links.
    pub data_power: f64,
    /// Total transmit power spread over the panel-directed pilot beams.
    pub pilot_power: f64,
    /// Noise variance shared by the pilot and data stages.
    pub noise_var: f64,
    pub zc: ZcConfig,
    /// False-alarm level(s) for panel detection.
    pub alpha: FalseAlarmLevels,
    pub crpa: CrpaConfig,
    /// Trials per experiment point.
    pub trials: usize,
    pub base_seed: u64,
    /// When set, every trial reuses this geometry instead of redrawing it.
    pub fixed_geometry: Option<Geometry>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            dims: SystemDims::default(),
            area_side: 100.0,
            rician: RicianParams::default(),
            p_block: 0.1,
            data_power: 1.0,
            pilot_power: 1.0,
            noise_var: 1.0,
            zc: ZcConfig::default(),
            alpha: FalseAlarmLevels::default(),
            crpa: CrpaConfig::default(),
            trials: 100,
            base_seed: 1,
            fixed_geometry: None,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if !(self.area_side > 0.0) || !self.area_side.is_finite() {
            return Err(invalid("area_side: must be positive and finite"));
        }
        self.rician.validate()?;
        if !(0.0..=1.0).contains(&self.p_block) {
            return Err(invalid("p_block: must lie in [0, 1]"));
        }
        if !(self.data_power > 0.0) || !self.data_power.is_finite() {
            return Err(invalid("data_power: must be positive and finite"));
        }
        if !(self.pilot_power > 0.0) || !self.pilot_power.is_finite() {
            return Err(invalid("pilot_power: must be positive and finite"));
        }
        if !(self.noise_var > 0.0) || !self.noise_var.is_finite() {
            return Err(invalid("noise_var: must be positive and finite"));
        }
        self.zc.validate(self.dims.panels)?;
        self.alpha.validate(self.dims.panels)?;
        self.crpa.validate(self.dims.users)?;
        if self.trials == 0 {
            return Err(invalid("trials: must be at least 1"));
        }
        if let Some(geo) = &self.fixed_geometry {
            geo.validate(&self.dims)?;
        }
        Ok(())
    }

    /// Data SNR in dB implied by the current powers (`10 log10(P/sigma^2)`).
    pub fn data_snr_db(&self) -> f64 {
        10.0 * (self.data_power / self.noise_var).log10()
    }

    pub fn pilot_snr_db(&self) -> f64 {
        10.0 * (self.pilot_power / self.noise_var).log10()
    }

    /// Sets the data power so `P/sigma^2` equals the given dB value.
    pub fn set_data_snr_db(&mut self, snr_db: f64) {
        self.data_power = self.noise_var * 10f64.powf(snr_db / 10.0);
    }

    pub fn set_pilot_snr_db(&mut self, snr_db: f64) {
        self.pilot_power = self.noise_var * 10f64.powf(snr_db / 10.0);
    }
}

/// How the optimizer decides which panels each user is assumed to reach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SetPolicy {
    /// Sets from the pilot/matched-filter detection front end.
    Estimated,
    /// True blockage sets.
    Genie,
    /// Every panel assumed reachable by every user.
    Oblivious,
    /// No panels at all; the optimizer sees only direct links.
    #[cfg_attr(feature = "serde", serde(rename = "none"))]
    DirectOnly,
    /// True sets, but reflection phases frozen at random draws; isolates
    /// the value of optimizing the phases.
    RandomPhase,
}

impl SetPolicy {
    pub const ALL: [SetPolicy; 5] = [
        SetPolicy::Estimated,
        SetPolicy::Genie,
        SetPolicy::Oblivious,
        SetPolicy::DirectOnly,
        SetPolicy::RandomPhase,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SetPolicy::Estimated => "estimated",
            SetPolicy::Genie => "genie",
            SetPolicy::Oblivious => "oblivious",
            SetPolicy::DirectOnly => "none",
            SetPolicy::RandomPhase => "random-phase",
        }
    }
}

impl core::fmt::Display for SetPolicy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for SetPolicy {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "estimated" => Ok(SetPolicy::Estimated),
            "genie" => Ok(SetPolicy::Genie),
            "oblivious" => Ok(SetPolicy::Oblivious),
            "none" => Ok(SetPolicy::DirectOnly),
            "random-phase" => Ok(SetPolicy::RandomPhase),
            other => Err(invalid(format!(
                "policy: unknown name {other:?} (expected estimated, genie, oblivious, none or random-phase)"
            ))),
        }
    }
}

/// Everything measured in one optimizer trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    /// Per-user overlap of the assumed sets with the true ones.
    pub jaccard: Vec<f64>,
    /// Sum-rate of the final precoder/phases under the true blockage, in
    /// natural-log units.
    pub wsr_realized: f64,
    /// Sum-rate the optimizer believes it achieved under its assumed sets.
    pub wsr_assumed: f64,
    pub trace: IterationTrace,
    /// 1-based count of outer iterations until the trace first reaches 95%
    /// of its own final sum-rate.
    pub iterations_to_95pct: usize,
}

/// RNG substream drawing the scene: geometry, channels and blockage.
pub const STREAM_CHANNELS: u64 = 0;
/// RNG substream drawing pilot-stage receiver noise.
pub const STREAM_PILOT: u64 = 1;
/// RNG substream drawing optimizer initialization (phases).
pub const STREAM_INIT: u64 = 2;

/// Deterministic per-trial generator: the seed encodes the trial index and
/// the stream selects the purpose, so adding a purpose or reordering
/// policies never perturbs the other draws.
pub fn trial_rng(base_seed: u64, trial: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed.wrapping_add(trial));
    rng.set_stream(stream);
    rng
}

fn draw_scene(cfg: &ScenarioConfig, trial: u64) -> Result<(Geometry, ChannelSet)> {
    let mut rng = trial_rng(cfg.base_seed, trial, STREAM_CHANNELS);
    let geometry = match &cfg.fixed_geometry {
        Some(g) => g.clone(),
        None => Geometry::random(&cfg.dims, cfg.area_side, &mut rng)?,
    };
    let channels = generate_channels(&cfg.dims, &geometry, &cfg.rician, cfg.p_block, &mut rng)?;
    Ok((geometry, channels))
}

/// Pilot transmission, matched filtering and thresholding on an existing
/// scene; the panels sit in their neutral all-ones sensing state.
fn detect_on_scene(
    cfg: &ScenarioConfig,
    geometry: &Geometry,
    channels: &ChannelSet,
    trial: u64,
) -> Result<DetectionReport> {
    let precoders = pilot_precoders(geometry, &cfg.dims, cfg.pilot_power)?;
    let sensing: Vec<PhaseVector> = (0..cfg.dims.panels)
        .map(|_| PhaseVector::all_ones(cfg.dims.elements_per_panel))
        .collect();
    let pilot = PilotConfig {
        total_power: cfg.pilot_power,
        alpha: cfg.alpha.clone(),
        noise_var: cfg.noise_var,
    };
    let mut rng = trial_rng(cfg.base_seed, trial, STREAM_PILOT);
    let captures = simulate_pilot_rx(channels, &cfg.zc, &pilot, &precoders, &sensing, &mut rng)?;
    let observations: Vec<Vec<_>> = captures.iter().map(scalar_observation).collect();
    let stats = matched_filter_bank(&observations, &cfg.zc, cfg.dims.panels)?;
    let levels = cfg.alpha.resolve(cfg.dims.panels)?;
    let thresholds = np_thresholds(&levels, cfg.noise_var, cfg.zc.length)?;
    detection_report(stats, thresholds, &channels.blockage.serving_sets())
}

/// One detection trial: fresh scene, pilot capture, per-panel tests,
/// scored against the true serving sets.
pub fn run_detection_trial(cfg: &ScenarioConfig, trial: u64) -> Result<DetectionReport> {
    cfg.validate()?;
    let (geometry, channels) = draw_scene(cfg, trial)?;
    detect_on_scene(cfg, &geometry, &channels, trial)
}

/// One optimizer trial under a panel-set policy.
///
/// The policy shapes only the sets the optimizer assumes (and, for
/// [`SetPolicy::RandomPhase`], freezes the phases); the channels come from
/// the same substream for every policy, so results across policies at the
/// same trial index are paired. The realized sum-rate always re-evaluates
/// the final precoder and phases under the true blockage.
pub fn run_wsr_trial(cfg: &ScenarioConfig, policy: SetPolicy, trial: u64) -> Result<TrialResult> {
    cfg.validate()?;
    let dims = &cfg.dims;
    let (geometry, channels) = draw_scene(cfg, trial)?;
    let truth = channels.blockage.serving_sets();

    let assumed: Vec<PanelSet> = match policy {
        SetPolicy::Estimated => {
            detect_on_scene(cfg, &geometry, &channels, trial)?.estimated_sets
        }
        SetPolicy::Genie | SetPolicy::RandomPhase => truth.clone(),
        SetPolicy::Oblivious => vec![(0..dims.panels).collect(); dims.users],
        SetPolicy::DirectOnly => vec![PanelSet::new(); dims.users],
    };

    let mut crpa_cfg = cfg.crpa.clone();
    if policy == SetPolicy::RandomPhase {
        crpa_cfg.phase_init = PhaseInit::Random;
        crpa_cfg.optimize_phases = false;
    }

    let mut rng_init = trial_rng(cfg.base_seed, trial, STREAM_INIT);
    let state0 = initial_state(&channels, &assumed, cfg.data_power, &crpa_cfg, &mut rng_init)?;
    let (state, trace) = crpa_run(
        &channels,
        &assumed,
        cfg.data_power,
        cfg.noise_var,
        &crpa_cfg,
        state0,
    )?;

    let weights = crpa_cfg.resolved_weights(dims.users)?;
    let wsr_assumed = *trace
        .wsr
        .last()
        .expect("max_iter >= 1 guarantees a nonempty trace");
    let wsr_realized = wsr(
        &channels,
        &state.phases,
        &truth,
        &state.precoder,
        cfg.noise_var,
        &weights,
    )?;
    let overlap: Vec<f64> = assumed
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| jaccard(a, b))
        .collect();
    let iterations_to_95pct = trace
        .wsr
        .iter()
        .position(|&w| w >= 0.95 * wsr_assumed)
        .map(|t| t + 1)
        .unwrap_or(trace.wsr.len());

    Ok(TrialResult {
        jaccard: overlap,
        wsr_realized,
        wsr_assumed,
        trace,
        iterations_to_95pct,
    })
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample standard deviation over `sqrt(count)`; zero for one sample.
    pub stderr: f64,
    pub count: usize,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(invalid("aggregate: at least one value required"));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let stderr = if n == 1 {
        0.0
    } else {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    };
    Ok(Aggregate {
        mean,
        stderr,
        count: n,
    })
}
