//! Brute-force and signal-model references for desk-scale instances.
//!
//! The grid search enumerates per-element splits and phases, a beam
//! direction per stream (amplitude split and relative phase across two
//! antennas) and the division of the budget between streams. Two
//! reductions keep the grid small without losing optima:
//! - every beam uses the full budget, since scaling all beams up raises
//!   every SINR;
//! - the first element's transmission phase is pinned to zero, since the
//!   only surface is the sole path to transmission users and a common
//!   rotation of `v_t` leaves their rates unchanged.

use crate::error::{Error, Result};
use crate::geometry::{build_channel_set, ChannelSet};
use crate::linalg::{cis, CMat, CVec, C64};
use crate::profile::{ElementCoefficients, StarRisProfile};
use crate::rate::{effective_channels, evaluate_with, BeamformerSet, RateReport};
use crate::scenario::{ScenarioSpec, UserId};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::{LN_2, TAU};
use std::path::Path;

pub const MAX_GRID_POINTS: f64 = 1e8;
pub const MAX_ANTENNAS: usize = 2;
pub const MAX_SURFACES: usize = 1;
pub const MAX_ELEMENTS: usize = 2;
pub const MAX_USERS: usize = 2;

/// QoS is enforced exactly up to this rounding allowance (bits/s/Hz).
const GRID_QOS_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Points on `[0, 2pi)`.
    pub phase_levels: usize,
    /// Points on `[0, 1]`, endpoints included; used for `beta_t` and for
    /// the antenna amplitude split of a beam.
    pub split_levels: usize,
    /// Points on `[0, 1]` for the first stream's share of the budget.
    pub power_levels: usize,
}

impl GridSpec {
    pub fn new(phase_levels: usize, split_levels: usize, power_levels: usize) -> Result<Self> {
        let g = Self {
            phase_levels,
            split_levels,
            power_levels,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        for (name, n) in [
            ("phase_levels", self.phase_levels),
            ("split_levels", self.split_levels),
            ("power_levels", self.power_levels),
        ] {
            if n < 2 {
                v.push(format!("{name} must be >= 2, got {n}"));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }

    /// Every axis refined so that the old points stay on the grid: phases
    /// double, interval grids go from `L` to `2L - 1` points.
    pub fn refined(&self) -> Self {
        Self {
            phase_levels: 2 * self.phase_levels,
            split_levels: 2 * self.split_levels - 1,
            power_levels: 2 * self.power_levels - 1,
        }
    }

    fn phases(&self) -> Vec<f64> {
        (0..self.phase_levels).map(|k| TAU * k as f64 / self.phase_levels as f64).collect()
    }

    fn splits(&self) -> Vec<f64> {
        unit_interval(self.split_levels)
    }

    fn powers(&self) -> Vec<f64> {
        unit_interval(self.power_levels)
    }
}

fn unit_interval(n: usize) -> Vec<f64> {
    (0..n).map(|k| k as f64 / (n - 1) as f64).collect()
}

/// Reject instances the oracle is not meant for.
pub fn check_tiny(scenario: &ScenarioSpec) -> Result<()> {
    scenario.validate()?;
    let mut v = Vec::new();
    if scenario.bs.antenna_count > MAX_ANTENNAS {
        v.push(format!("oracle needs <= {MAX_ANTENNAS} BS antennas, got {}", scenario.bs.antenna_count));
    }
    if scenario.surface_count() > MAX_SURFACES {
        v.push(format!("oracle needs <= {MAX_SURFACES} surface, got {}", scenario.surface_count()));
    }
    if let Some(n) = scenario.element_counts().into_iter().find(|&n| n > MAX_ELEMENTS) {
        v.push(format!("oracle needs <= {MAX_ELEMENTS} elements per surface, got {n}"));
    }
    if scenario.user_count() > MAX_USERS {
        v.push(format!("oracle needs <= {MAX_USERS} users, got {}", scenario.user_count()));
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(v))
    }
}

/// Number of grid points `brute_force_optimize` would evaluate.
pub fn grid_size(scenario: &ScenarioSpec, grid: &GridSpec) -> f64 {
    let streams = scenario.stream_count();
    let dirs = if scenario.bs.antenna_count == 2 {
        (grid.split_levels * grid.phase_levels) as f64
    } else {
        1.0
    };
    let powers = if streams == 2 { grid.power_levels as f64 } else { 1.0 };
    let elements: f64 = scenario
        .element_counts()
        .iter()
        .flat_map(|&n| 0..n)
        .map(|n| {
            let t = if n == 0 { 1 } else { grid.phase_levels };
            (grid.split_levels * t * grid.phase_levels) as f64
        })
        .product();
    elements * dirs.powi(streams as i32) * powers
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridOptimum {
    pub grid: GridSpec,
    pub sum_rate: f64,
    pub points: f64,
    pub feasible_points: u64,
    pub beams: BeamformerSet,
    pub profiles: Vec<StarRisProfile>,
    pub report: RateReport,
}

/// One surface configuration of the enumeration.
fn element_configs(scenario: &ScenarioSpec, grid: &GridSpec) -> Vec<Vec<StarRisProfile>> {
    let phases = grid.phases();
    let splits = grid.splits();
    let mut configs: Vec<Vec<StarRisProfile>> = vec![Vec::new()];
    for &count in &scenario.element_counts() {
        let mut per_surface: Vec<Vec<ElementCoefficients>> = vec![Vec::new()];
        for n in 0..count {
            let thetas_t: &[f64] = if n == 0 { &phases[..1] } else { &phases };
            let mut next = Vec::new();
            for prefix in &per_surface {
                for &b in &splits {
                    for &tt in thetas_t {
                        for &tr in &phases {
                            let mut e = prefix.clone();
                            e.push(ElementCoefficients::new(b, tt, tr));
                            next.push(e);
                        }
                    }
                }
            }
            per_surface = next;
        }
        configs = configs
            .into_iter()
            .flat_map(|c| {
                per_surface.iter().map(move |elements| {
                    let mut c = c.clone();
                    c.push(StarRisProfile {
                        elements: elements.clone(),
                    });
                    c
                })
            })
            .collect();
    }
    configs
}

/// Unit-norm beam directions.
fn directions(antennas: usize, grid: &GridSpec) -> Vec<CVec> {
    if antennas == 1 {
        return vec![CVec::from_element(1, C64::new(1.0, 0.0))];
    }
    let mut out = Vec::new();
    for rho in grid.splits() {
        for phi in grid.phases() {
            out.push(CVec::from_vec(vec![
                C64::new(rho.sqrt(), 0.0),
                cis(phi) * (1.0 - rho).sqrt(),
            ]));
        }
    }
    out
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    rate: f64,
    config: usize,
    dirs: [usize; 2],
    power: usize,
}

fn better(a: Option<Candidate>, b: Option<Candidate>) -> Option<Candidate> {
    match (a, b) {
        (None, x) | (x, None) => x,
        (Some(x), Some(y)) => {
            // Ties go to the earlier enumeration index so that the result is
            // independent of the thread schedule.
            let key = |c: &Candidate| (c.config, c.dirs, c.power);
            if y.rate > x.rate || (y.rate == x.rate && key(&y) < key(&x)) {
                Some(y)
            } else {
                Some(x)
            }
        }
    }
}

/// Exhaustive search over the discretized problem.
pub fn brute_force_optimize(scenario: &ScenarioSpec, grid: &GridSpec) -> Result<GridOptimum> {
    check_tiny(scenario)?;
    grid.validate()?;
    let points = grid_size(scenario, grid);
    if points > MAX_GRID_POINTS {
        return Err(Error::Domain(format!(
            "grid of {points:.3e} points exceeds the {MAX_GRID_POINTS:.0e} guard"
        )));
    }
    let channels = build_channel_set(scenario, scenario.seed)?;
    let configs = element_configs(scenario, grid);
    let dirs = directions(scenario.bs.antenna_count, grid);
    let streams = scenario.stream_count();
    let shares: Vec<f64> = if streams == 2 { grid.powers() } else { vec![1.0] };
    let users = scenario.users();
    let stream_of: Vec<usize> = users.iter().map(|u| scenario.stream_of(*u)).collect();
    let r_min: Vec<f64> = users.iter().map(|u| scenario.r_min(*u)).collect();
    let noise = scenario.noise_power();
    let p_t = scenario.p_t_watts;
    let dir_combos: Vec<[usize; 2]> = if streams == 2 {
        (0..dirs.len()).flat_map(|a| (0..dirs.len()).map(move |b| [a, b])).collect()
    } else {
        (0..dirs.len()).map(|a| [a, 0]).collect()
    };

    let scan = |ci: usize| -> Result<(Option<Candidate>, u64)> {
        let eff = effective_channels(scenario, &channels, &configs[ci])?;
        // gain[u][d] = |g_u^H d|^2
        let gain: Vec<Vec<f64>> = users
            .iter()
            .map(|&u| {
                let g = eff.get(u);
                dirs.iter().map(|d| g.dotc(d).norm_sqr()).collect()
            })
            .collect();
        let mut best = None;
        let mut feasible = 0u64;
        for combo in &dir_combos {
            for (pi, &share) in shares.iter().enumerate() {
                let p = [share * p_t, (1.0 - share) * p_t];
                let mut sum = 0.0;
                let mut ok = true;
                for u in 0..users.len() {
                    let s = stream_of[u];
                    let mut signal = 0.0;
                    let mut interference = 0.0;
                    for j in 0..streams {
                        let rx = p[j] * gain[u][combo[j]];
                        if j == s {
                            signal = rx;
                        } else {
                            interference += rx;
                        }
                    }
                    let rate = (signal / (interference + noise)).ln_1p() / LN_2;
                    if rate < r_min[u] - GRID_QOS_SLACK {
                        ok = false;
                        break;
                    }
                    sum += rate;
                }
                if ok {
                    feasible += 1;
                    best = better(
                        best,
                        Some(Candidate {
                            rate: sum,
                            config: ci,
                            dirs: *combo,
                            power: pi,
                        }),
                    );
                }
            }
        }
        Ok((best, feasible))
    };

    let scanned = (0..configs.len()).into_par_iter().map(scan).collect::<Result<Vec<_>>>()?;
    let feasible_points = scanned.iter().map(|(_, f)| f).sum();
    let best = scanned.into_iter().fold(None, |acc, (c, _)| better(acc, c));
    let Some(best) = best else {
        return Err(Error::Infeasible(format!(
            "no point of the {points:.0}-point grid meets every QoS threshold"
        )));
    };

    let share = shares[best.power];
    let power = [share * p_t, (1.0 - share) * p_t];
    let beams = BeamformerSet {
        beams: (0..streams)
            .map(|j| &dirs[best.dirs[j]] * C64::new(power[j].sqrt(), 0.0))
            .collect(),
    };
    let profiles = configs[best.config].clone();
    let eff = effective_channels(scenario, &channels, &profiles)?;
    let report = evaluate_with(scenario, &eff, &beams)?;
    Ok(GridOptimum {
        grid: *grid,
        sum_rate: report.sum_rate,
        points,
        feasible_points,
        beams,
        profiles,
        report,
    })
}

/// Optimum on `grid` and on its refinement; the difference is the
/// resolution slack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSlack {
    pub coarse: f64,
    pub refined: f64,
    pub slack: f64,
}

pub fn measure_slack(scenario: &ScenarioSpec, grid: &GridSpec) -> Result<GridSlack> {
    let coarse = brute_force_optimize(scenario, grid)?.sum_rate;
    let refined = brute_force_optimize(scenario, &grid.refined())?.sum_rate;
    Ok(GridSlack {
        coarse,
        refined,
        slack: (refined - coarse).max(0.0),
    })
}

/// Per-user rates straight from the received-signal model: explicit
/// `Theta = diag(v)` matrices and the sums over surfaces and streams.
pub fn received_signal_rate_check(
    scenario: &ScenarioSpec,
    channels: &ChannelSet,
    profiles: &[StarRisProfile],
    beams: &BeamformerSet,
) -> Result<Vec<f64>> {
    scenario.validate()?;
    beams.check_dims(scenario.stream_count(), scenario.bs.antenna_count)?;
    if profiles.len() != scenario.surface_count() {
        return Err(Error::Dimension {
            context: "received_signal_rate_check profiles",
            expected: scenario.surface_count(),
            actual: profiles.len(),
        });
    }
    let theta = |v: CVec| CMat::from_diagonal(&v);
    let theta_t: Vec<CMat> = profiles.iter().map(|p| theta(p.v_t())).collect();
    let theta_r: Vec<CMat> = profiles.iter().map(|p| theta(p.v_r())).collect();
    let noise = scenario.noise_power();

    // Received amplitude of stream i at user u: the bracketed row vector of
    // the signal model applied to w_i.
    let amplitude = |user: UserId, w: &CVec| -> C64 {
        match user {
            UserId::Transmission { group, member } => {
                let k = scenario.transmission_groups[group].ris_index - 1;
                let h = channels.trans(group, member);
                (h.adjoint() * &theta_t[k] * channels.h0k(k) * w)[(0, 0)]
            }
            UserId::Reflection { index } => {
                let mut y = (channels.direct(index).adjoint() * w)[(0, 0)];
                for k in 0..scenario.surface_count() {
                    let h = channels.refl(k, index);
                    y += (h.adjoint() * &theta_r[k] * channels.h0k(k) * w)[(0, 0)];
                }
                y
            }
        }
    };

    Ok(scenario
        .users()
        .into_iter()
        .map(|user| {
            let desired = scenario.stream_of(user);
            let mut signal = 0.0;
            let mut interference = 0.0;
            for (i, w) in beams.beams.iter().enumerate() {
                let p = amplitude(user, w).norm_sqr();
                if i == desired {
                    signal += p;
                } else {
                    interference += p;
                }
            }
            (signal / (interference + noise)).ln_1p() / LN_2
        })
        .collect())
}

/// A stored oracle instance: the scenario, the grid it was searched on and
/// what the search found.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFixture {
    pub name: String,
    pub description: String,
    pub scenario: ScenarioSpec,
    pub grid: GridSpec,
    pub grid_optimum: f64,
    pub refined_optimum: f64,
    /// `refined_optimum - grid_optimum`.
    pub grid_slack: f64,
    /// Closed-form optimum when one exists.
    pub closed_form: Option<f64>,
}

impl OracleFixture {
    pub fn generate(name: &str, description: &str, scenario: ScenarioSpec, grid: GridSpec) -> Result<Self> {
        let slack = measure_slack(&scenario, &grid)?;
        let closed_form = single_user_capacity(&scenario)?;
        Ok(Self {
            name: name.into(),
            description: description.into(),
            scenario,
            grid,
            grid_optimum: slack.coarse,
            refined_optimum: slack.refined,
            grid_slack: slack.slack,
            closed_form,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        let f: Self = serde_json::from_str(&text)?;
        f.scenario.validate()?;
        f.grid.validate()?;
        Ok(f)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }
}

/// `log2(1 + P_T ||g||_max^2 / sigma^2)` for a lone user on a single-antenna
/// BS, where the surface (at most one, fully steered toward the user) adds
/// coherently to the direct path. `None` for any other shape.
pub fn single_user_capacity(scenario: &ScenarioSpec) -> Result<Option<f64>> {
    if scenario.user_count() != 1 || scenario.bs.antenna_count != 1 || scenario.surface_count() > 1 {
        return Ok(None);
    }
    let channels = build_channel_set(scenario, scenario.seed)?;
    let cascade = |h: CVec, k: usize| -> f64 {
        let h0 = channels.h0k(k);
        (0..h.len()).map(|n| h[n].norm() * h0[(n, 0)].norm()).sum()
    };
    let amplitude = match scenario.users()[0] {
        UserId::Transmission { group, member } => {
            cascade(channels.trans(group, member), scenario.transmission_groups[group].ris_index - 1)
        }
        UserId::Reflection { index } => {
            let mut a = channels.direct(index).norm();
            for k in 0..scenario.surface_count() {
                a += cascade(channels.refl(k, index), k);
            }
            a
        }
    };
    let snr = scenario.p_t_watts * amplitude * amplitude / scenario.noise_power();
    Ok(Some(snr.ln_1p() / LN_2))
}

/// Outcome of replaying a fixture: a fresh grid search and a proposed-scheme
/// run on the stored scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub grid_optimum: f64,
    pub stored_grid_optimum: f64,
    pub refined_optimum: f64,
    pub grid_slack: f64,
    /// `None` when the optimizer found no feasible point.
    pub bcd_sum_rate: Option<f64>,
    pub closed_form: Option<f64>,
    pub closed_form_rel_error: Option<f64>,
    /// BCD reaches the grid optimum less the grid slack.
    pub meets_grid: bool,
    /// Closed form, when there is one, matched to [`CLOSED_FORM_REL_TOL`].
    pub meets_closed_form: bool,
}

pub const CLOSED_FORM_REL_TOL: f64 = 1e-6;

/// Stored and recomputed grid optima may differ by rounding only.
pub const GRID_REPLAY_TOL: f64 = 1e-9;

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.meets_grid
            && self.meets_closed_form
            && (self.grid_optimum - self.stored_grid_optimum).abs() <= GRID_REPLAY_TOL * self.stored_grid_optimum.abs().max(1.0)
    }
}

pub fn check_fixture(fixture: &OracleFixture) -> Result<OracleCheck> {
    let grid = brute_force_optimize(&fixture.scenario, &fixture.grid)?;
    let config = crate::bcd::BcdConfig::from_scenario(&fixture.scenario);
    let bcd = crate::bcd::run_scheme(&fixture.scenario, &config, crate::bcd::Scheme::Proposed)?;
    let bcd_sum_rate =
        (bcd.termination != crate::bcd::Termination::Infeasible).then_some(bcd.report.sum_rate);
    let closed_form_rel_error = match (fixture.closed_form, bcd_sum_rate) {
        (Some(c), Some(b)) => Some((b - c).abs() / c.abs().max(f64::MIN_POSITIVE)),
        (Some(_), None) => Some(f64::INFINITY),
        _ => None,
    };
    Ok(OracleCheck {
        name: fixture.name.clone(),
        grid_optimum: grid.sum_rate,
        stored_grid_optimum: fixture.grid_optimum,
        refined_optimum: fixture.refined_optimum,
        grid_slack: fixture.grid_slack,
        bcd_sum_rate,
        closed_form: fixture.closed_form,
        closed_form_rel_error,
        meets_grid: bcd_sum_rate.is_some_and(|b| b >= fixture.grid_optimum - fixture.grid_slack),
        meets_closed_form: closed_form_rel_error.map_or(true, |e| e <= CLOSED_FORM_REL_TOL),
    })
}
