//! Line-of-sight channel synthesis for uniform linear arrays along the x-axis.

use crate::error::{Error, Result};
use crate::linalg::{cis, CMat, CVec, C64};
use crate::scenario::ScenarioSpec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Reference gain of the free-space model at 1 m, in dB.
pub const DEFAULT_PATHLOSS_REF_DB: f64 = -20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Position3D {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position3D {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Position3D) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }
}

impl From<[f64; 3]> for Position3D {
    fn from(p: [f64; 3]) -> Self {
        Self::new(p[0], p[1], p[2])
    }
}

impl From<Position3D> for [f64; 3] {
    fn from(p: Position3D) -> Self {
        [p.x, p.y, p.z]
    }
}

/// A ULA aligned with the x-axis. `spacing` is in carrier wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayGeometry {
    pub element_count: usize,
    pub spacing: f64,
}

impl ArrayGeometry {
    pub fn new(element_count: usize, spacing: f64) -> Result<Self> {
        let geometry = Self {
            element_count,
            spacing,
        };
        geometry.validate()?;
        Ok(geometry)
    }

    /// Half-wavelength ULA.
    pub fn half_wavelength(element_count: usize) -> Self {
        Self {
            element_count,
            spacing: 0.5,
        }
    }

    pub fn single() -> Self {
        Self::half_wavelength(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.element_count == 0 {
            return Err(Error::Domain("array needs at least one element".into()));
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return Err(Error::Domain(format!(
                "element spacing must be positive, got {}",
                self.spacing
            )));
        }
        Ok(())
    }
}

/// Array response `a[n] = exp(j 2 pi spacing n cos(theta))`, `n = 0..N-1`.
pub fn steering_vector(geometry: &ArrayGeometry, direction_cosine: f64) -> Result<CVec> {
    geometry.validate()?;
    if !(-1.0..=1.0).contains(&direction_cosine) {
        return Err(Error::Domain(format!(
            "direction cosine {direction_cosine} outside [-1, 1]"
        )));
    }
    let step = 2.0 * PI * geometry.spacing * direction_cosine;
    Ok(CVec::from_fn(geometry.element_count, |n, _| cis(step * n as f64)))
}

/// Free-space power gain with a configurable reference gain at 1 m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossModel {
    ref_gain: f64,
}

impl PathLossModel {
    pub fn from_ref_db(ref_db: f64) -> Self {
        Self {
            ref_gain: 10f64.powf(ref_db / 10.0),
        }
    }

    pub fn ref_gain(&self) -> f64 {
        self.ref_gain
    }

    pub fn gain(&self, distance: f64) -> Result<f64> {
        if !(distance > 0.0) || !distance.is_finite() {
            return Err(Error::Domain(format!(
                "path-loss distance must be positive, got {distance}"
            )));
        }
        Ok(self.ref_gain / (distance * distance))
    }
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self::from_ref_db(DEFAULT_PATHLOSS_REF_DB)
    }
}

/// `beta0 * d^-2` with `beta0 = -20 dB`.
pub fn path_loss(distance: f64) -> Result<f64> {
    PathLossModel::default().gain(distance)
}

/// A link's complex gain matrix. Multi-antenna-to-multi-antenna links are
/// stored receive-by-transmit; links ending at a single-antenna user are
/// stored as the column `h` with `y = h^H x`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkChannel {
    pub entries: CMat,
    pub distance: f64,
}

impl LinkChannel {
    pub fn nrows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.entries.ncols()
    }

    /// First column, for links stored in column form.
    pub fn vector(&self) -> CVec {
        self.entries.column(0).into_owned()
    }

    /// Convert a `1 x N` receive-by-transmit row into column form.
    fn into_user_column(self) -> Self {
        debug_assert_eq!(self.entries.nrows(), 1);
        Self {
            entries: self.entries.adjoint(),
            distance: self.distance,
        }
    }
}

/// Rank-one LoS channel `sqrt(PL(d)) a_rx(c) a_tx(c)^H`, where `c` is the
/// x-component of the unit vector from the receiver to the transmitter.
pub fn los_channel(
    tx_pos: &Position3D,
    tx_geom: &ArrayGeometry,
    rx_pos: &Position3D,
    rx_geom: &ArrayGeometry,
) -> Result<LinkChannel> {
    los_channel_with(&PathLossModel::default(), tx_pos, tx_geom, rx_pos, rx_geom)
}

pub fn los_channel_with(
    model: &PathLossModel,
    tx_pos: &Position3D,
    tx_geom: &ArrayGeometry,
    rx_pos: &Position3D,
    rx_geom: &ArrayGeometry,
) -> Result<LinkChannel> {
    if !tx_pos.is_finite() || !rx_pos.is_finite() {
        return Err(Error::Domain("node coordinates must be finite".into()));
    }
    let distance = tx_pos.distance(rx_pos);
    if distance == 0.0 {
        return Err(Error::Domain(format!(
            "transmitter and receiver coincide at {tx_pos:?}"
        )));
    }
    let cosine = ((tx_pos.x - rx_pos.x) / distance).clamp(-1.0, 1.0);
    let amplitude = model.gain(distance)?.sqrt();
    let a_rx = steering_vector(rx_geom, cosine)?;
    let a_tx = steering_vector(tx_geom, cosine)?;
    let entries = (a_rx * a_tx.adjoint()) * C64::new(amplitude, 0.0);
    Ok(LinkChannel { entries, distance })
}

/// All channels of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    /// `H_{0,k}`, `N_k x N_0`.
    pub bs_to_ris: Vec<LinkChannel>,
    /// `h_{0,j0}`, `N_0 x 1`.
    pub bs_to_refl_user: Vec<LinkChannel>,
    /// `h_{k,jk}` per transmission group, `N_k x 1`.
    pub ris_to_trans_user: Vec<Vec<LinkChannel>>,
    /// `h_{k,j0}` indexed `[k][j0]`, `N_k x 1`.
    pub ris_to_refl_user: Vec<Vec<LinkChannel>>,
}

impl ChannelSet {
    pub fn h0k(&self, k: usize) -> &CMat {
        &self.bs_to_ris[k].entries
    }

    pub fn direct(&self, j0: usize) -> CVec {
        self.bs_to_refl_user[j0].vector()
    }

    pub fn trans(&self, group: usize, member: usize) -> CVec {
        self.ris_to_trans_user[group][member].vector()
    }

    pub fn refl(&self, k: usize, j0: usize) -> CVec {
        self.ris_to_refl_user[k][j0].vector()
    }

    fn for_each_link_mut(&mut self, mut f: impl FnMut(&mut LinkChannel)) {
        self.bs_to_ris.iter_mut().for_each(&mut f);
        self.bs_to_refl_user.iter_mut().for_each(&mut f);
        self.ris_to_trans_user.iter_mut().flatten().for_each(&mut f);
        self.ris_to_refl_user.iter_mut().flatten().for_each(&mut f);
    }
}

/// Synthesize every channel family of a scenario. Deterministic in
/// `(scenario, seed)`; the seed only matters when the scenario enables
/// per-link random phases.
pub fn build_channel_set(scenario: &ScenarioSpec, seed: u64) -> Result<ChannelSet> {
    let model = PathLossModel::from_ref_db(scenario.pathloss_ref_db);
    let single = ArrayGeometry::single();
    let bs_pos = scenario.bs.position;
    let bs_geom = scenario.bs.geometry();

    let bs_to_ris = scenario
        .star_ris
        .iter()
        .map(|ris| los_channel_with(&model, &bs_pos, &bs_geom, &ris.position, &ris.geometry()))
        .collect::<Result<Vec<_>>>()?;

    let bs_to_refl_user = scenario
        .reflection_users
        .iter()
        .map(|u| {
            los_channel_with(&model, &bs_pos, &bs_geom, &u.position, &single)
                .map(LinkChannel::into_user_column)
        })
        .collect::<Result<Vec<_>>>()?;

    let ris_to_trans_user = scenario
        .transmission_groups
        .iter()
        .map(|group| {
            let ris = &scenario.star_ris[group.ris_index - 1];
            group
                .users
                .iter()
                .map(|pos| {
                    los_channel_with(&model, &ris.position, &ris.geometry(), pos, &single)
                        .map(LinkChannel::into_user_column)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let ris_to_refl_user = scenario
        .star_ris
        .iter()
        .map(|ris| {
            scenario
                .reflection_users
                .iter()
                .map(|u| {
                    los_channel_with(&model, &ris.position, &ris.geometry(), &u.position, &single)
                        .map(LinkChannel::into_user_column)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut set = ChannelSet {
        bs_to_ris,
        bs_to_refl_user,
        ris_to_trans_user,
        ris_to_refl_user,
    };
    if scenario.random_link_phase {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        set.for_each_link_mut(|link| {
            link.entries *= cis(rng.gen_range(0.0..2.0 * PI));
        });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn broadside_is_all_ones() {
        let a = steering_vector(&ArrayGeometry::half_wavelength(4), 0.0).unwrap();
        for z in a.iter() {
            assert_relative_eq!(z.re, 1.0);
            assert_relative_eq!(z.im, 0.0);
        }
    }

    #[test]
    fn endfire_half_wavelength_alternates() {
        let a = steering_vector(&ArrayGeometry::half_wavelength(2), 1.0).unwrap();
        assert_relative_eq!(a[0].re, 1.0);
        assert_relative_eq!(a[1].re, -1.0, epsilon = 1e-15);
        assert!(a[1].im.abs() < 1e-15);
    }

    #[test]
    fn steering_matches_scalar_formula() {
        let a = steering_vector(&ArrayGeometry::half_wavelength(3), 0.6).unwrap();
        for n in 0..3 {
            let phase = 0.6 * PI * n as f64;
            assert_relative_eq!(a[n].re, phase.cos(), epsilon = 1e-14);
            assert_relative_eq!(a[n].im, phase.sin(), epsilon = 1e-14);
        }
    }

    #[test]
    fn steering_rejects_bad_cosine() {
        assert!(steering_vector(&ArrayGeometry::half_wavelength(2), 1.5).is_err());
        assert!(steering_vector(&ArrayGeometry::half_wavelength(2), -1.0001).is_err());
    }

    #[test]
    fn path_loss_values() {
        assert_relative_eq!(path_loss(1.0).unwrap(), 0.01, max_relative = 1e-15);
        assert_relative_eq!(path_loss(10.0).unwrap(), 1e-4, max_relative = 1e-15);
        let d = Position3D::new(0.0, 0.0, 20.0).distance(&Position3D::new(5.0, 0.0, 0.0));
        assert_relative_eq!(path_loss(d).unwrap(), 0.01 / 425.0, max_relative = 1e-12);
        assert!(path_loss(0.0).is_err());
        assert!(path_loss(-1.0).is_err());
    }

    #[test]
    fn scalar_link_magnitude() {
        let h = los_channel(
            &Position3D::new(0.0, 0.0, 0.0),
            &ArrayGeometry::single(),
            &Position3D::new(0.0, 1.0, 0.0),
            &ArrayGeometry::single(),
        )
        .unwrap();
        assert_eq!(h.entries.shape(), (1, 1));
        assert_relative_eq!(h.entries[(0, 0)].norm(), 0.1, max_relative = 1e-14);
    }

    #[test]
    fn broadside_two_antenna_row() {
        let h = los_channel(
            &Position3D::new(0.0, 0.0, 0.0),
            &ArrayGeometry::half_wavelength(2),
            &Position3D::new(0.0, 0.0, 1.0),
            &ArrayGeometry::single(),
        )
        .unwrap();
        assert_eq!(h.entries.shape(), (1, 2));
        for z in h.entries.iter() {
            assert_relative_eq!(z.re, 0.1, max_relative = 1e-14);
            assert!(z.im.abs() < 1e-15);
        }
    }

    #[test]
    fn coincident_nodes_rejected() {
        let p = Position3D::new(1.0, 2.0, 3.0);
        let g = ArrayGeometry::single();
        assert!(los_channel(&p, &g, &p, &g).is_err());
    }

    #[test]
    fn two_by_two_link_matches_entrywise_formula() {
        let tx = Position3D::new(1.0, -2.0, 3.0);
        let rx = Position3D::new(-4.0, 0.5, 0.0);
        let g = ArrayGeometry::new(2, 0.37).unwrap();
        let h = los_channel(&tx, &g, &rx, &g).unwrap();
        let d = tx.distance(&rx);
        let c = (tx.x - rx.x) / d;
        let amp = (0.01 / (d * d)).sqrt();
        for m in 0..2 {
            for n in 0..2 {
                let expected = C64::from_polar(amp, 2.0 * PI * 0.37 * c * (m as f64 - n as f64));
                assert_relative_eq!(h.entries[(m, n)].re, expected.re, epsilon = 1e-15);
                assert_relative_eq!(h.entries[(m, n)].im, expected.im, epsilon = 1e-15);
            }
        }
        let sv = h.entries.singular_values();
        assert!(sv[1] <= 1e-10 * sv[0]);
        assert_relative_eq!(h.entries.norm_squared(), amp * amp * 4.0, max_relative = 1e-9);
    }
}
