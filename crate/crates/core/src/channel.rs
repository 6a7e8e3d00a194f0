//! Geometry, fading and blockage model for the multi-panel downlink.
//!
//! The layout is a square service area with the base station at the center
//! and reflecting panels / users dropped uniformly at random. Every link is
//! a Rician mixture of a rank-one line-of-sight term (ULA steering outer
//! product) and an i.i.d. complex Gaussian scatter term, normalized so the
//! mean per-entry power is one; large-scale path loss is folded into the
//! operating SNR rather than modeled per link.
//!
//! A panel-user pair can be blocked, in which case the pair's reflected
//! path carries no energy. Blockage states are drawn i.i.d. Bernoulli at
//! generation time and kept with the channel set so callers can distinguish
//! the true serving sets from whatever a detector estimated.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::invalid;
use crate::Result;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use core::f64::consts::{FRAC_1_SQRT_2, PI, TAU};

/// Set of panel indices (0-based), ordered for deterministic iteration.
pub type PanelSet = BTreeSet<usize>;

/// Antenna and population counts for one scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SystemDims {
    /// Number of served users.
    pub users: usize,
    /// Number of reflecting panels.
    pub panels: usize,
    /// Base-station ULA size.
    pub bs_antennas: usize,
    /// Per-user ULA size.
    pub ue_antennas: usize,
    /// Reflecting elements per panel.
    pub elements_per_panel: usize,
}

impl Default for SystemDims {
    fn default() -> Self {
        SystemDims {
            users: 5,
            panels: 10,
            bs_antennas: 16,
            ue_antennas: 4,
            elements_per_panel: 16,
        }
    }
}

impl SystemDims {
    pub fn validate(&self) -> Result<()> {
        if self.users == 0 {
            return Err(invalid("dims.users: must be at least 1"));
        }
        if self.bs_antennas == 0 {
            return Err(invalid("dims.bs_antennas: must be at least 1"));
        }
        if self.ue_antennas == 0 {
            return Err(invalid("dims.ue_antennas: must be at least 1"));
        }
        if self.elements_per_panel == 0 {
            return Err(invalid("dims.elements_per_panel: must be at least 1"));
        }
        Ok(())
    }
}

/// Planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

/// Node placement for one scenario drop.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Geometry {
    /// Side length of the square service area in meters.
    pub area_side: f64,
    /// Base-station position (center of the area by construction).
    pub bs: Point,
    /// Panel positions, one per reflecting panel.
    pub panels: Vec<Point>,
    /// User positions.
    pub users: Vec<Point>,
}

impl Geometry {
    /// Draws a uniform drop: BS at the center, panels then users uniform in
    /// the square. Draw order is fixed (panels before users, x before y) so
    /// a given RNG stream always yields the same drop.
    pub fn random<R: Rng + ?Sized>(dims: &SystemDims, area_side: f64, rng: &mut R) -> Result<Self> {
        if !(area_side > 0.0) || !area_side.is_finite() {
            return Err(invalid("area_side: must be positive and finite"));
        }
        let draw = |rng: &mut R| Point {
            x: rng.random_range(0.0..area_side),
            y: rng.random_range(0.0..area_side),
        };
        let panels = (0..dims.panels).map(|_| draw(rng)).collect();
        let users = (0..dims.users).map(|_| draw(rng)).collect();
        Ok(Geometry {
            area_side,
            bs: Point {
                x: area_side / 2.0,
                y: area_side / 2.0,
            },
            panels,
            users,
        })
    }

    pub fn validate(&self, dims: &SystemDims) -> Result<()> {
        if !(self.area_side > 0.0) || !self.area_side.is_finite() {
            return Err(invalid("geometry.area_side: must be positive and finite"));
        }
        if self.panels.len() != dims.panels {
            return Err(invalid("geometry.panels: length must equal dims.panels"));
        }
        if self.users.len() != dims.users {
            return Err(invalid("geometry.users: length must equal dims.users"));
        }
        Ok(())
    }
}

/// Azimuth of the direction from `from` to `to`, in radians.
pub fn bearing(from: Point, to: Point) -> f64 {
    (to.y - from.y).atan2(to.x - from.x)
}

/// Rician fading parameters shared by all links.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct RicianParams {
    /// K-factor (LoS-to-scatter power ratio); `+inf` selects pure LoS.
    pub k_factor: f64,
}

impl Default for RicianParams {
    fn default() -> Self {
        RicianParams { k_factor: 5.0 }
    }
}

impl RicianParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_factor.is_nan() || self.k_factor < 0.0 {
            return Err(invalid("rician.k_factor: must be nonnegative"));
        }
        Ok(())
    }
}

/// Per-pair blockage flags for the reflected paths, `panels x users`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockageState {
    panels: usize,
    users: usize,
    blocked: Vec<bool>,
}

impl BlockageState {
    /// Builds the state from an explicit flag table, `flags[panel][user]`.
    pub fn from_flags(flags: &[Vec<bool>], users: usize) -> Result<Self> {
        let panels = flags.len();
        let mut blocked = Vec::with_capacity(panels * users);
        for row in flags {
            if row.len() != users {
                return Err(invalid("blockage flags: every row must have one entry per user"));
            }
            blocked.extend_from_slice(row);
        }
        Ok(BlockageState {
            panels,
            users,
            blocked,
        })
    }

    /// Draws i.i.d. Bernoulli(`p_block`) flags, panel-major order.
    pub fn random<R: Rng + ?Sized>(
        panels: usize,
        users: usize,
        p_block: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_block) {
            return Err(invalid("p_block: must lie in [0, 1]"));
        }
        let blocked = (0..panels * users)
            .map(|_| rng.random_bool(p_block))
            .collect();
        Ok(BlockageState {
            panels,
            users,
            blocked,
        })
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn is_blocked(&self, panel: usize, user: usize) -> bool {
        self.blocked[panel * self.users + user]
    }

    /// Panels with an unblocked reflected path toward `user`.
    pub fn serving_set(&self, user: usize) -> PanelSet {
        (0..self.panels)
            .filter(|&i| !self.is_blocked(i, user))
            .collect()
    }

    /// True serving sets for every user.
    pub fn serving_sets(&self) -> Vec<PanelSet> {
        (0..self.users).map(|k| self.serving_set(k)).collect()
    }
}

/// One realization of every link in the scenario.
///
/// Matrices for blocked pairs are still drawn and stored; consumers that
/// model physics must restrict sums to unblocked panels, while consumers
/// that model a (possibly wrong) belief may index any pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    pub dims: SystemDims,
    /// Direct BS-to-user links, `ue_antennas x bs_antennas`, one per user.
    pub direct: Vec<DMatrix<Complex64>>,
    /// BS-to-panel links, `elements_per_panel x bs_antennas`, one per panel.
    pub bs_to_panel: Vec<DMatrix<Complex64>>,
    /// Panel-to-user links, `ue_antennas x elements_per_panel`, indexed `[panel][user]`.
    pub panel_to_ue: Vec<Vec<DMatrix<Complex64>>>,
    /// True blockage flags drawn with this realization.
    pub blockage: BlockageState,
}

/// Unit-modulus reflection coefficients of one panel.
///
/// The constructor enforces `| |u_m| - 1 | <= 1e-12` for every element so
/// downstream code can treat the vector as a pure phase configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVector(DVector<Complex64>);

/// Constructor tolerance on the unit-modulus constraint.
pub const UNIT_MODULUS_TOL: f64 = 1e-12;

impl PhaseVector {
    pub fn new(v: DVector<Complex64>) -> Result<Self> {
        for z in v.iter() {
            if (z.norm() - 1.0).abs() > UNIT_MODULUS_TOL {
                return Err(invalid("phase vector: every element must have unit modulus"));
            }
        }
        Ok(PhaseVector(v))
    }

    /// All-ones (zero phase shift) configuration.
    pub fn all_ones(n: usize) -> Self {
        PhaseVector(DVector::from_element(n, Complex64::new(1.0, 0.0)))
    }

    pub fn from_angles(angles: &[f64]) -> Self {
        PhaseVector(DVector::from_iterator(
            angles.len(),
            angles.iter().map(|&a| Complex64::from_polar(1.0, a)),
        ))
    }

    /// Uniform random phases.
    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..TAU)).collect();
        PhaseVector::from_angles(&angles)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    pub fn as_vector(&self) -> &DVector<Complex64> {
        &self.0
    }

    /// Largest deviation of any element modulus from one.
    pub fn max_modulus_error(&self) -> f64 {
        self.0
            .iter()
            .map(|z| (z.norm() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

impl core::ops::Index<usize> for PhaseVector {
    type Output = Complex64;
    fn index(&self, i: usize) -> &Complex64 {
        &self.0[i]
    }
}

/// Draws a standard complex Gaussian sample, CN(0, 1).
pub fn standard_complex<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

/// ULA steering vector: element `m` is `exp(j * pi * m * sin(angle))`,
/// i.e. half-wavelength spacing with the phase referenced to element 0.
pub fn steering_vector(angle: f64, n: usize) -> DVector<Complex64> {
    let s = angle.sin();
    DVector::from_iterator(
        n,
        (0..n).map(|m| Complex64::from_polar(1.0, PI * m as f64 * s)),
    )
}

/// Rank-one LoS matrix `a_rx(aoa) * a_tx(aod)^H`.
pub fn los_link(aoa: f64, aod: f64, rx_n: usize, tx_n: usize) -> DMatrix<Complex64> {
    let rx = steering_vector(aoa, rx_n);
    let tx = steering_vector(aod, tx_n);
    &rx * tx.adjoint()
}

/// Mixes a LoS matrix with i.i.d. CN(0,1) scatter at the given K-factor:
/// `sqrt(K/(K+1)) * los + sqrt(1/(K+1)) * scatter`. `K = +inf` returns the
/// LoS matrix unchanged (and consumes no randomness); `K = 0` is pure
/// scatter. Scatter entries are drawn in column-major order.
pub fn rician_link<R: Rng + ?Sized>(
    los: &DMatrix<Complex64>,
    k_factor: f64,
    rng: &mut R,
) -> Result<DMatrix<Complex64>> {
    if k_factor.is_nan() || k_factor < 0.0 {
        return Err(invalid("rician.k_factor: must be nonnegative"));
    }
    if k_factor.is_infinite() {
        return Ok(los.clone());
    }
    let w_los = (k_factor / (k_factor + 1.0)).sqrt();
    let w_sc = (1.0 / (k_factor + 1.0)).sqrt();
    let scatter = DMatrix::from_fn(los.nrows(), los.ncols(), |_, _| standard_complex(rng));
    Ok(los * Complex64::from(w_los) + scatter * Complex64::from(w_sc))
}

/// Draws blockage flags and every link matrix for one scenario drop.
///
/// Draw order is fixed for reproducibility: blockage flags first, then the
/// direct links (per user), the BS-to-panel links (per panel), and the
/// panel-to-user links (panel-major). Identical seeds therefore reproduce
/// identical channel sets bit for bit.
pub fn generate_channels<R: Rng + ?Sized>(
    dims: &SystemDims,
    geometry: &Geometry,
    rician: &RicianParams,
    p_block: f64,
    rng: &mut R,
) -> Result<ChannelSet> {
    dims.validate()?;
    geometry.validate(dims)?;
    rician.validate()?;

    let blockage = BlockageState::random(dims.panels, dims.users, p_block, rng)?;
    let kf = rician.k_factor;

    let direct = geometry
        .users
        .iter()
        .map(|&ue| {
            let los = los_link(
                bearing(ue, geometry.bs),
                bearing(geometry.bs, ue),
                dims.ue_antennas,
                dims.bs_antennas,
            );
            rician_link(&los, kf, rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let bs_to_panel = geometry
        .panels
        .iter()
        .map(|&ris| {
            let los = los_link(
                bearing(ris, geometry.bs),
                bearing(geometry.bs, ris),
                dims.elements_per_panel,
                dims.bs_antennas,
            );
            rician_link(&los, kf, rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let panel_to_ue = geometry
        .panels
        .iter()
        .map(|&ris| {
            geometry
                .users
                .iter()
                .map(|&ue| {
                    let los = los_link(
                        bearing(ue, ris),
                        bearing(ris, ue),
                        dims.ue_antennas,
                        dims.elements_per_panel,
                    );
                    rician_link(&los, kf, rng)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ChannelSet {
        dims: *dims,
        direct,
        bs_to_panel,
        panel_to_ue,
        blockage,
    })
}

impl ChannelSet {
    /// Reflected path `panel -> user` with the panel's phases applied:
    /// `panel_to_ue[i][k] * diag(u_i) * bs_to_panel[i]`.
    pub fn reflected_link(&self, panel: usize, user: usize, phases: &PhaseVector) -> DMatrix<Complex64> {
        let mut scaled = self.panel_to_ue[panel][user].clone();
        for j in 0..scaled.ncols() {
            let ph = phases[j];
            scaled.column_mut(j).apply(|z| *z *= ph);
        }
        &scaled * &self.bs_to_panel[panel]
    }
}

/// Composite downlink channel seen by `user`: the direct link plus the
/// phase-adjusted reflected path of every panel in `active`.
pub fn effective_channel(
    channels: &ChannelSet,
    phases: &[PhaseVector],
    active: &PanelSet,
    user: usize,
) -> Result<DMatrix<Complex64>> {
    let dims = &channels.dims;
    if user >= dims.users {
        return Err(invalid("effective_channel: user index out of range"));
    }
    if phases.len() != dims.panels {
        return Err(invalid("effective_channel: one phase vector per panel required"));
    }
    for ph in phases {
        if ph.len() != dims.elements_per_panel {
            return Err(invalid(
                "effective_channel: phase vector length must equal elements_per_panel",
            ));
        }
    }
    let mut h = channels.direct[user].clone();
    for &i in active {
        if i >= dims.panels {
            return Err(invalid("effective_channel: active set contains an unknown panel"));
        }
        h += channels.reflected_link(i, user, &phases[i]);
    }
    Ok(h)
}
