//! Declarative scenario and sweep descriptions, loaded from TOML.
//!
//! Scenario files carry a `format_version` (currently 1). Transmission
//! groups reference surfaces by 1-based `ris_index`. The transmit power
//! may be given as a number of watts or as a string with a unit suffix
//! (`"0.1 W"`, `"20 dBm"`, `"-10 dBW"`).

use crate::conic::SolverSettings;
use crate::error::{Error, Result};
use crate::geometry::{ArrayGeometry, Position3D, DEFAULT_PATHLOSS_REF_DB};
use serde::{Deserialize, Deserializer, Serialize};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

/// The shipped default scenario (repo-chosen node placements around the BS
/// at (0, 0, 20)).
pub const DEFAULT_SCENARIO: &str = include_str!("../../../scenarios/default.scenario");

fn default_spacing() -> f64 {
    0.5
}

fn default_pathloss_ref_db() -> f64 {
    DEFAULT_PATHLOSS_REF_DB
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseStation {
    pub position: Position3D,
    pub antenna_count: usize,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
}

impl BaseStation {
    pub fn geometry(&self) -> ArrayGeometry {
        ArrayGeometry {
            element_count: self.antenna_count,
            spacing: self.spacing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StarRisSpec {
    pub position: Position3D,
    pub element_count: usize,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
}

impl StarRisSpec {
    pub fn geometry(&self) -> ArrayGeometry {
        ArrayGeometry {
            element_count: self.element_count,
            spacing: self.spacing,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReflectionUser {
    pub position: Position3D,
    /// Minimum rate, bits/s/Hz.
    pub r_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransmissionGroup {
    /// 1-based index of the serving STAR-RIS.
    pub ris_index: usize,
    pub r_min: f64,
    pub users: Vec<Position3D>,
}

/// Outer-loop settings as written in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcdSettings {
    pub epsilon: f64,
    pub max_outer_iterations: usize,
    pub randomization_samples: usize,
    pub defect_tol: f64,
}

impl Default for BcdSettings {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            max_outer_iterations: 50,
            randomization_samples: 100,
            defect_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub format_version: u32,
    pub bs: BaseStation,
    #[serde(default)]
    pub star_ris: Vec<StarRisSpec>,
    #[serde(default)]
    pub reflection_users: Vec<ReflectionUser>,
    #[serde(default)]
    pub transmission_groups: Vec<TransmissionGroup>,
    #[serde(deserialize_with = "deserialize_power")]
    pub p_t_watts: f64,
    pub noise_dbw: f64,
    #[serde(default = "default_pathloss_ref_db")]
    pub pathloss_ref_db: f64,
    #[serde(default)]
    pub seed: u64,
    /// Rotate every link by an independent seeded phase.
    #[serde(default)]
    pub random_link_phase: bool,
    #[serde(default)]
    pub bcd: BcdSettings,
    #[serde(default)]
    pub solver: SolverSettings,
}

/// A user, addressed by role. Serialized as `{group, index}` with `group`
/// either `"reflection"` or `"transmission_<g>"` (1-based `g`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "UserKey", try_from = "UserKey")]
pub enum UserId {
    /// Member `member` of transmission group `group` (both 0-based).
    Transmission { group: usize, member: usize },
    /// Reflection-side user `index` (0-based).
    Reflection { index: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UserKey {
    pub group: String,
    pub index: usize,
}

impl From<UserId> for UserKey {
    fn from(u: UserId) -> Self {
        match u {
            UserId::Transmission { group, member } => UserKey {
                group: format!("transmission_{}", group + 1),
                index: member,
            },
            UserId::Reflection { index } => UserKey {
                group: "reflection".into(),
                index,
            },
        }
    }
}

impl TryFrom<UserKey> for UserId {
    type Error = String;

    fn try_from(k: UserKey) -> std::result::Result<Self, String> {
        if k.group == "reflection" {
            return Ok(UserId::Reflection { index: k.index });
        }
        k.group
            .strip_prefix("transmission_")
            .and_then(|g| g.parse::<usize>().ok())
            .filter(|&g| g >= 1)
            .map(|g| UserId::Transmission {
                group: g - 1,
                member: k.index,
            })
            .ok_or_else(|| format!("unknown user group {:?}", k.group))
    }
}

impl ScenarioSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::parse_named(text, "<string>")
    }

    fn parse_named(text: &str, name: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: name.to_string(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    /// The shipped default configuration.
    pub fn shipped_default() -> Self {
        Self::parse_named(DEFAULT_SCENARIO, "default.scenario")
            .expect("shipped scenario is valid")
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    /// Every violated invariant, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.format_version != FORMAT_VERSION {
            v.push(format!(
                "format_version {} unsupported (expected {FORMAT_VERSION})",
                self.format_version
            ));
        }
        if self.bs.antenna_count == 0 {
            v.push("bs.antenna_count must be >= 1".into());
        }
        if !(self.bs.spacing > 0.0) {
            v.push("bs.spacing must be > 0".into());
        }
        if !self.bs.position.is_finite() {
            v.push("bs.position must be finite".into());
        }
        for (k, ris) in self.star_ris.iter().enumerate() {
            if ris.element_count == 0 {
                v.push(format!("star_ris[{k}].element_count must be >= 1"));
            }
            if !(ris.spacing > 0.0) {
                v.push(format!("star_ris[{k}].spacing must be > 0"));
            }
            if !ris.position.is_finite() {
                v.push(format!("star_ris[{k}].position must be finite"));
            }
        }
        for (j, u) in self.reflection_users.iter().enumerate() {
            if !(u.r_min >= 0.0 && u.r_min.is_finite()) {
                v.push(format!("reflection_users[{j}].r_min must be finite and >= 0"));
            }
            if !u.position.is_finite() {
                v.push(format!("reflection_users[{j}].position must be finite"));
            }
        }
        for (g, group) in self.transmission_groups.iter().enumerate() {
            if group.ris_index == 0 || group.ris_index > self.star_ris.len() {
                v.push(format!(
                    "transmission_groups[{g}].ris_index {} does not name one of the {} STAR-RISs (1-based)",
                    group.ris_index,
                    self.star_ris.len()
                ));
            }
            if !(group.r_min >= 0.0 && group.r_min.is_finite()) {
                v.push(format!("transmission_groups[{g}].r_min must be finite and >= 0"));
            }
            if group.users.is_empty() {
                v.push(format!("transmission_groups[{g}] has no users"));
            }
            if group.users.iter().any(|p| !p.is_finite()) {
                v.push(format!("transmission_groups[{g}] has a non-finite user position"));
            }
        }
        if self.user_count() == 0 {
            v.push("scenario has no users".into());
        }
        if !(self.p_t_watts > 0.0 && self.p_t_watts.is_finite()) {
            v.push(format!("p_t_watts must be > 0, got {}", self.p_t_watts));
        }
        if !self.noise_dbw.is_finite() {
            v.push("noise_dbw must be finite".into());
        }
        if !self.pathloss_ref_db.is_finite() {
            v.push("pathloss_ref_db must be finite".into());
        }
        if !(self.bcd.epsilon > 0.0) {
            v.push("bcd.epsilon must be > 0".into());
        }
        if self.bcd.max_outer_iterations == 0 {
            v.push("bcd.max_outer_iterations must be >= 1".into());
        }
        if self.bcd.randomization_samples == 0 {
            v.push("bcd.randomization_samples must be >= 1".into());
        }
        if !(self.solver.tol > 0.0) || self.solver.max_iter == 0 {
            v.push("solver.tol must be > 0 and solver.max_iter >= 1".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn noise_power(&self) -> f64 {
        10f64.powf(self.noise_dbw / 10.0)
    }

    pub fn surface_count(&self) -> usize {
        self.star_ris.len()
    }

    pub fn element_counts(&self) -> Vec<usize> {
        self.star_ris.iter().map(|r| r.element_count).collect()
    }

    pub fn group_count(&self) -> usize {
        self.transmission_groups.len()
    }

    pub fn stream_count(&self) -> usize {
        self.transmission_groups.len() + self.reflection_users.len()
    }

    pub fn user_count(&self) -> usize {
        self.reflection_users.len()
            + self
                .transmission_groups
                .iter()
                .map(|g| g.users.len())
                .sum::<usize>()
    }

    /// Users in canonical order: transmission groups first (group-major),
    /// then reflection users.
    pub fn users(&self) -> Vec<UserId> {
        let mut out = Vec::with_capacity(self.user_count());
        for (group, g) in self.transmission_groups.iter().enumerate() {
            out.extend((0..g.users.len()).map(|member| UserId::Transmission { group, member }));
        }
        out.extend((0..self.reflection_users.len()).map(|index| UserId::Reflection { index }));
        out
    }

    /// Stream carrying a user's data: group `g` uses stream `g`, reflection
    /// user `j` uses stream `G + j`.
    pub fn stream_of(&self, user: UserId) -> usize {
        match user {
            UserId::Transmission { group, .. } => group,
            UserId::Reflection { index } => self.group_count() + index,
        }
    }

    pub fn r_min(&self, user: UserId) -> f64 {
        match user {
            UserId::Transmission { group, .. } => self.transmission_groups[group].r_min,
            UserId::Reflection { index } => self.reflection_users[index].r_min,
        }
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    ScenarioSpec::parse_named(&text, &path.display().to_string())
}

/// Parse `"0.1 W"`, `"20 dBm"`, `"-10 dBW"` or a bare number (watts).
pub fn parse_power(text: &str) -> Result<f64> {
    let t = text.trim();
    let err = || Error::Domain(format!("cannot parse power {text:?}"));
    let (number, unit) = match t.find(|c: char| c.is_ascii_alphabetic()) {
        Some(i) => (t[..i].trim(), t[i..].trim()),
        None => (t, "W"),
    };
    let value: f64 = number.parse().map_err(|_| err())?;
    match unit {
        "W" | "w" => Ok(value),
        "mW" => Ok(value * 1e-3),
        "dBm" => Ok(dbm_to_watts(value)),
        "dBW" => Ok(10f64.powf(value / 10.0)),
        _ => Err(err()),
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

fn deserialize_power<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Number(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Number(x) => Ok(x),
        Raw::Text(s) => parse_power(&s).map_err(serde::de::Error::custom),
    }
}

/// What a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    ElementsPerRis,
    TransmitPowerDbm,
    /// Transmission-user threshold; reflection users follow at twice it.
    R2Threshold,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::ElementsPerRis => "elements_per_ris",
            SweepAxis::TransmitPowerDbm => "transmit_power_dbm",
            SweepAxis::R2Threshold => "r2_threshold",
        }
    }

    /// The scenario with this axis set to `value`.
    pub fn apply(&self, base: &ScenarioSpec, value: f64) -> Result<ScenarioSpec> {
        let mut s = base.clone();
        match self {
            SweepAxis::ElementsPerRis => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Domain(format!("element count {value} is not a positive integer")));
                }
                s.star_ris.iter_mut().for_each(|r| r.element_count = value as usize);
            }
            SweepAxis::TransmitPowerDbm => s.p_t_watts = dbm_to_watts(value),
            SweepAxis::R2Threshold => {
                s.transmission_groups.iter_mut().for_each(|g| g.r_min = value);
                s.reflection_users.iter_mut().for_each(|u| u.r_min = 2.0 * value);
            }
        }
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Trial `t` uses `scenario.seed + t`.
    #[default]
    Increment,
    /// Every trial uses `scenario.seed`.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub schemes: Vec<crate::bcd::Scheme>,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub seed_policy: SeedPolicy,
}

fn one() -> usize {
    1
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.values.is_empty() {
            v.push("sweep needs at least one value".to_string());
        }
        if self.values.windows(2).any(|w| !(w[0] < w[1])) {
            v.push("sweep values must be strictly increasing".into());
        }
        if self.schemes.is_empty() {
            v.push("sweep needs at least one scheme".into());
        }
        if self.trials == 0 {
            v.push("trials must be >= 1".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: Self = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<string>".into(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn seed_for(&self, base_seed: u64, trial: usize) -> u64 {
        match self.seed_policy {
            SeedPolicy::Increment => base_seed.wrapping_add(trial as u64),
            SeedPolicy::Fixed => base_seed,
        }
    }
}

pub fn load_sweep(path: impl AsRef<Path>) -> Result<SweepSpec> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let spec: SweepSpec = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    spec.validate()?;
    Ok(spec)
}
