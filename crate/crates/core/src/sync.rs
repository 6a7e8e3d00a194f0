//! Panel acquisition: superimposed Zadoff-Chu pilots and energy detection.
//!
//! The base station transmits one pilot beam per reflecting panel, all at
//! once; panel `i` carries the common ZC root sequence cyclically shifted
//! by `i` samples. Because ZC sequences with a root coprime to their length
//! have an ideal periodic autocorrelation, the shifts stay orthogonal after
//! any flat channel, and a bank of matched filters at the user separates
//! the per-panel contributions from a single scalarized capture.
//!
//! A panel whose reflected path is blocked contributes nothing, so its
//! matched-filter output is pure noise with energy `~ Exp(sigma^2 * len)`.
//! Comparing the energy against the Neyman-Pearson threshold
//! `tau = -sigma^2 * len * ln(alpha)` pins the false-alarm rate at `alpha`
//! per panel and yields the estimated serving set of each user.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::channel::{
    bearing, standard_complex, steering_vector, ChannelSet, Geometry, PanelSet, PhaseVector,
    SystemDims,
};
use crate::error::invalid;
use crate::Result;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use core::f64::consts::PI;

/// Zadoff-Chu pilot parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct ZcConfig {
    /// Sequence length; one matched-filter window per capture.
    pub length: usize,
    /// ZC root, coprime to `length`.
    pub root: usize,
    /// Cyclic prefix length. Carried for config fidelity; with the flat
    /// single-tap channel model the prefix is stripped as a no-op and no
    /// extra samples are simulated.
    pub cp_len: usize,
}

impl Default for ZcConfig {
    fn default() -> Self {
        ZcConfig {
            length: 63,
            root: 25,
            cp_len: 8,
        }
    }
}

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl ZcConfig {
    /// `panels` distinct cyclic shifts must fit in one period.
    pub fn validate(&self, panels: usize) -> Result<()> {
        if self.length == 0 {
            return Err(invalid("zc.length: must be at least 1"));
        }
        if self.root == 0 || self.root >= self.length {
            return Err(invalid("zc.root: must satisfy 1 <= root < length"));
        }
        if gcd(self.root, self.length) != 1 {
            return Err(invalid("zc.root: must be coprime to zc.length"));
        }
        if panels > self.length {
            return Err(invalid("dims.panels: must not exceed zc.length"));
        }
        Ok(())
    }

    /// The root sequence shifted by `panel` samples (shift assignment is
    /// simply the panel index).
    pub fn panel_sequence(&self, panel: usize) -> Result<Vec<Complex64>> {
        let root = zc_root(self.length, self.root)?;
        Ok(zc_shift(&root, panel))
    }
}

/// Root Zadoff-Chu sequence `s[n] = exp(-j*pi*root*n*(n+1)/length)`.
pub fn zc_root(length: usize, root: usize) -> Result<Vec<Complex64>> {
    let cfg = ZcConfig {
        length,
        root,
        cp_len: 0,
    };
    cfg.validate(0)?;
    let l = length as f64;
    let q = root as f64;
    Ok((0..length)
        .map(|n| {
            let nf = n as f64;
            Complex64::from_polar(1.0, -PI * q * nf * (nf + 1.0) / l)
        })
        .collect())
}

/// Cyclic shift: output `n` is input `(n + shift) mod len`. Shifts of a
/// full period (or any multiple) reproduce the input.
pub fn zc_shift(seq: &[Complex64], shift: usize) -> Vec<Complex64> {
    let len = seq.len();
    if len == 0 {
        return Vec::new();
    }
    (0..len).map(|n| seq[(n + shift) % len]).collect()
}

/// Per-panel false-alarm levels; a single scalar applies to every panel.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(untagged))]
pub enum FalseAlarmLevels {
    Uniform(f64),
    PerPanel(Vec<f64>),
}

impl Default for FalseAlarmLevels {
    fn default() -> Self {
        FalseAlarmLevels::Uniform(1e-3)
    }
}

impl FalseAlarmLevels {
    /// Expands to one level per panel.
    pub fn resolve(&self, panels: usize) -> Result<Vec<f64>> {
        match self {
            FalseAlarmLevels::Uniform(a) => Ok(vec![*a; panels]),
            FalseAlarmLevels::PerPanel(v) => {
                if v.len() != panels {
                    return Err(invalid("pilot.alpha: per-panel levels must match dims.panels"));
                }
                Ok(v.clone())
            }
        }
    }

    pub fn validate(&self, panels: usize) -> Result<()> {
        for a in self.resolve(panels)? {
            if !(a > 0.0 && a < 1.0) {
                return Err(invalid("pilot.alpha: levels must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

/// Sensing-stage configuration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct PilotConfig {
    /// Total pilot power split evenly across the per-panel beams.
    pub total_power: f64,
    /// Per-panel false-alarm levels for the energy detector.
    pub alpha: FalseAlarmLevels,
    /// Receiver noise variance during sensing.
    pub noise_var: f64,
}

impl Default for PilotConfig {
    fn default() -> Self {
        PilotConfig {
            total_power: 1.0,
            alpha: FalseAlarmLevels::default(),
            noise_var: 1.0,
        }
    }
}

impl PilotConfig {
    pub fn validate(&self, panels: usize) -> Result<()> {
        if !(self.total_power > 0.0) || !self.total_power.is_finite() {
            return Err(invalid("pilot.total_power: must be positive and finite"));
        }
        if self.noise_var < 0.0 || !self.noise_var.is_finite() {
            return Err(invalid("pilot.noise_var: must be nonnegative and finite"));
        }
        self.alpha.validate(panels)
    }
}

/// One steering beam per panel, aimed from the BS at the panel, with
/// `||v_i||^2 = total_power / panels` so the beams sum to the pilot budget.
pub fn pilot_precoders(
    geometry: &Geometry,
    dims: &SystemDims,
    total_power: f64,
) -> Result<Vec<DVector<Complex64>>> {
    geometry.validate(dims)?;
    if !(total_power > 0.0) || !total_power.is_finite() {
        return Err(invalid("pilot.total_power: must be positive and finite"));
    }
    let m = dims.panels;
    let nt = dims.bs_antennas;
    let scale = Complex64::from((total_power / (m as f64 * nt as f64)).sqrt());
    Ok(geometry
        .panels
        .iter()
        .map(|&p| steering_vector(bearing(geometry.bs, p), nt) * scale)
        .collect())
}

/// Simulates the pilot capture at every user: each unblocked panel's
/// reflected path carries its shifted ZC sequence through the panel's
/// sensing phase configuration, blocked panels contribute zero, and AWGN
/// with variance `noise_var` is added per antenna per sample. The direct
/// BS-user path does not carry the pilot. Returns one
/// `ue_antennas x length` capture per user; noise is drawn user by user in
/// column-major order so a seeded RNG reproduces captures exactly.
pub fn simulate_pilot_rx<R: Rng + ?Sized>(
    channels: &ChannelSet,
    zc: &ZcConfig,
    pilot: &PilotConfig,
    precoders: &[DVector<Complex64>],
    sensing_phases: &[PhaseVector],
    rng: &mut R,
) -> Result<Vec<DMatrix<Complex64>>> {
    let dims = &channels.dims;
    zc.validate(dims.panels)?;
    pilot.validate(dims.panels)?;
    if precoders.len() != dims.panels {
        return Err(invalid("pilot precoders: one beam per panel required"));
    }
    for v in precoders {
        if v.len() != dims.bs_antennas {
            return Err(invalid("pilot precoders: beam length must equal bs_antennas"));
        }
    }
    if sensing_phases.len() != dims.panels {
        return Err(invalid("sensing phases: one vector per panel required"));
    }
    for ph in sensing_phases {
        if ph.len() != dims.elements_per_panel {
            return Err(invalid(
                "sensing phases: vector length must equal elements_per_panel",
            ));
        }
    }

    let sequences: Vec<Vec<Complex64>> = (0..dims.panels)
        .map(|i| zc.panel_sequence(i))
        .collect::<Result<_>>()?;
    let noise_amp = pilot.noise_var.sqrt();

    let mut captures = Vec::with_capacity(dims.users);
    for k in 0..dims.users {
        let mut y = DMatrix::<Complex64>::zeros(dims.ue_antennas, zc.length);
        for i in 0..dims.panels {
            if channels.blockage.is_blocked(i, k) {
                continue;
            }
            let b = channels.reflected_link(i, k, &sensing_phases[i]) * &precoders[i];
            for n in 0..zc.length {
                let s = sequences[i][n];
                for a in 0..dims.ue_antennas {
                    y[(a, n)] += b[a] * s;
                }
            }
        }
        if noise_amp > 0.0 {
            for n in 0..zc.length {
                for a in 0..dims.ue_antennas {
                    y[(a, n)] += standard_complex(rng) * noise_amp;
                }
            }
        }
        captures.push(y);
    }
    Ok(captures)
}

/// Collapses an antenna capture to one scalar stream per sample by an
/// equal-gain sum normalized by `1/sqrt(ue_antennas)`, which preserves the
/// per-sample noise variance.
pub fn scalar_observation(capture: &DMatrix<Complex64>) -> Vec<Complex64> {
    let nr = capture.nrows();
    let scale = 1.0 / (nr as f64).sqrt();
    (0..capture.ncols())
        .map(|n| capture.column(n).sum() * Complex64::from(scale))
        .collect()
}

/// Correlates the observation against one pilot sequence:
/// `Z = sum_n conj(seq[n]) * obs[n]`.
pub fn matched_filter(obs: &[Complex64], seq: &[Complex64]) -> Result<Complex64> {
    if obs.len() != seq.len() {
        return Err(invalid("matched_filter: observation and sequence lengths differ"));
    }
    Ok(obs
        .iter()
        .zip(seq.iter())
        .map(|(y, s)| s.conj() * y)
        .fold(Complex64::new(0.0, 0.0), |acc, z| acc + z))
}

/// Matched-filter statistics for every user-panel pair, `users x panels`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedFilterOutput {
    pub stats: DMatrix<Complex64>,
}

impl MatchedFilterOutput {
    pub fn users(&self) -> usize {
        self.stats.nrows()
    }

    pub fn panels(&self) -> usize {
        self.stats.ncols()
    }

    /// Detection statistic `|Z|^2` for one user-panel pair.
    pub fn energy(&self, user: usize, panel: usize) -> f64 {
        self.stats[(user, panel)].norm_sqr()
    }
}

/// Runs the full matched-filter bank over per-user scalar observations.
pub fn matched_filter_bank(
    observations: &[Vec<Complex64>],
    zc: &ZcConfig,
    panels: usize,
) -> Result<MatchedFilterOutput> {
    zc.validate(panels)?;
    let users = observations.len();
    let sequences: Vec<Vec<Complex64>> = (0..panels)
        .map(|i| zc.panel_sequence(i))
        .collect::<Result<_>>()?;
    let mut stats = DMatrix::<Complex64>::zeros(users, panels);
    for (k, obs) in observations.iter().enumerate() {
        for (i, seq) in sequences.iter().enumerate() {
            stats[(k, i)] = matched_filter(obs, seq)?;
        }
    }
    Ok(MatchedFilterOutput { stats })
}

/// Neyman-Pearson threshold on `|Z|^2` for a blocked panel:
/// `tau = -noise_var * length * ln(alpha)`, so that
/// `P(|Z|^2 >= tau) = alpha` under the noise-only hypothesis.
/// `alpha = 1` yields the degenerate always-detect threshold 0.
pub fn np_threshold(alpha: f64, noise_var: f64, length: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid("alpha: must lie in (0, 1]"));
    }
    if !(noise_var > 0.0) || !noise_var.is_finite() {
        return Err(invalid("noise_var: must be positive and finite"));
    }
    if length == 0 {
        return Err(invalid("length: must be at least 1"));
    }
    Ok(-noise_var * length as f64 * alpha.ln())
}

/// Per-panel thresholds from per-panel false-alarm levels.
pub fn np_thresholds(levels: &[f64], noise_var: f64, length: usize) -> Result<Vec<f64>> {
    levels
        .iter()
        .map(|&a| np_threshold(a, noise_var, length))
        .collect()
}

/// Thresholds the energies: panel `i` joins user `k`'s estimated set when
/// `|Z_{k,i}|^2 >= tau_i`.
pub fn detect_sets(stats: &MatchedFilterOutput, thresholds: &[f64]) -> Result<Vec<PanelSet>> {
    if thresholds.len() != stats.panels() {
        return Err(invalid("detect_sets: one threshold per panel required"));
    }
    Ok((0..stats.users())
        .map(|k| {
            (0..stats.panels())
                .filter(|&i| stats.energy(k, i) >= thresholds[i])
                .collect()
        })
        .collect())
}

/// Jaccard index between two panel sets; two empty sets count as a perfect
/// match (1.0).
pub fn jaccard(a: &PanelSet, b: &PanelSet) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    let inter = a.intersection(b).count();
    inter as f64 / union as f64
}

/// Detector output bundled with its accuracy against the true sets.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub stats: MatchedFilterOutput,
    pub thresholds: Vec<f64>,
    pub estimated_sets: Vec<PanelSet>,
    /// Per-user Jaccard index of estimated vs true serving set.
    pub jaccard: Vec<f64>,
}

/// Assembles the report: thresholding plus per-user accuracy.
pub fn detection_report(
    stats: MatchedFilterOutput,
    thresholds: Vec<f64>,
    truth: &[PanelSet],
) -> Result<DetectionReport> {
    if truth.len() != stats.users() {
        return Err(invalid("detection_report: one true set per user required"));
    }
    let estimated_sets = detect_sets(&stats, &thresholds)?;
    let jaccard = estimated_sets
        .iter()
        .zip(truth.iter())
        .map(|(est, tru)| jaccard(est, tru))
        .collect();
    Ok(DetectionReport {
        stats,
        thresholds,
        estimated_sets,
        jaccard,
    })
}
