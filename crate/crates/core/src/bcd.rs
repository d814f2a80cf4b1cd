//! Block coordinate descent over BS beams, surface coefficients and the
//! fractional-programming auxiliaries, with a feasible initializer and
//! fixed-amplitude baselines.

use crate::conic::{
    build_bs_margin_program, build_bs_subproblem, build_ris_subproblem, extract_rank_one, gaussian_randomization,
    solve, BsSubproblemData, BsUser, ConicProgram, ConicSolution, RandomizationContext, RisPath, RisSubproblemData,
    RisUser, SolveStatus, SolverSettings, UserTerms,
};
use crate::error::{Error, Result};
use crate::fractional::{power_pair, qt_term, surrogate_from_pairs, AuxiliaryState};
use crate::geometry::{build_channel_set, ChannelSet};
use crate::linalg::{inner, CMat, CVec, C64};
use crate::profile::{validate_es, BaselineKind, ElementCoefficients, StarRisProfile};
use crate::rate::{
    cascaded_transmission_matrix, effective_channels, evaluate_with, stacked_reflection_matrix, BeamformerSet,
    EffectiveChannels, RateReport,
};
use crate::scenario::{ScenarioSpec, UserId};
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// Rate slack (bits/s/Hz) tolerated when checking QoS on recovered points.
pub const QOS_SLACK: f64 = 1e-7;

/// Threshold backoff (bits/s/Hz) used inside the relaxations, so that
/// solver inaccuracy at active QoS rows does not push recovered points below
/// the threshold.
pub const QOS_BACKOFF: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Proposed,
    #[serde(rename = "fixed_55")]
    Fixed55,
    #[serde(rename = "fixed_37")]
    Fixed37,
    ReflTransOnly,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Proposed, Scheme::Fixed55, Scheme::Fixed37, Scheme::ReflTransOnly];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Fixed55 => "fixed_55",
            Scheme::Fixed37 => "fixed_37",
            Scheme::ReflTransOnly => "refl_trans_only",
        }
    }

    pub fn baseline(&self) -> Option<BaselineKind> {
        match self {
            Scheme::Proposed => None,
            Scheme::Fixed55 => Some(BaselineKind::Fixed55),
            Scheme::Fixed37 => Some(BaselineKind::Fixed37),
            Scheme::ReflTransOnly => Some(BaselineKind::ReflTransOnly),
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Domain(format!("unknown scheme {s:?} (expected proposed, fixed_55, fixed_37 or refl_trans_only)")))
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcdConfig {
    pub epsilon: f64,
    pub max_outer_iterations: usize,
    pub randomization_samples: usize,
    pub defect_tol: f64,
    pub solver: SolverSettings,
    pub seed: u64,
}

impl BcdConfig {
    pub fn from_scenario(scenario: &ScenarioSpec) -> Self {
        Self {
            epsilon: scenario.bcd.epsilon,
            max_outer_iterations: scenario.bcd.max_outer_iterations,
            randomization_samples: scenario.bcd.randomization_samples,
            defect_tol: scenario.bcd.defect_tol,
            solver: scenario.solver.clone(),
            seed: scenario.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Domain(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.max_outer_iterations == 0 {
            return Err(Error::Domain("max_outer_iterations must be at least 1".into()));
        }
        if self.randomization_samples == 0 {
            return Err(Error::Domain("randomization_samples must be at least 1".into()));
        }
        self.solver.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockOutcome {
    Accepted,
    /// Best recovered point would lower the sum rate.
    RejectedNoImprovement,
    /// No randomized candidate passed the QoS check.
    NoFeasibleCandidate,
    SolverFailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub outcome: BlockOutcome,
    pub solver_status: Option<SolveStatus>,
    pub solver_iterations: usize,
    pub retried: bool,
    /// Sum rate before the block update (bits/s/Hz).
    pub rate_before: f64,
    /// Surrogate before the block update.
    pub surrogate_before: f64,
    /// Surrogate at the relaxed optimum.
    pub relaxed_surrogate: Option<f64>,
    /// Surrogate at the recovered rank-one point.
    pub recovered_surrogate: Option<f64>,
    /// Sum rate at the recovered rank-one point.
    pub recovered_rate: Option<f64>,
    /// Quadratic-transform part of the objective at the recovered point over
    /// the same quantity at the relaxed optimum.
    pub recovery_ratio: Option<f64>,
    /// `lambda_2 / lambda_1` of every relaxed matrix.
    pub defects: Vec<f64>,
    /// 0 when the principal eigenvector won.
    pub candidate_index: Option<usize>,
}

impl BlockRecord {
    fn new(rate_before: f64, surrogate_before: f64) -> Self {
        Self {
            outcome: BlockOutcome::SolverFailed,
            solver_status: None,
            solver_iterations: 0,
            retried: false,
            rate_before,
            surrogate_before,
            relaxed_surrogate: None,
            recovered_surrogate: None,
            recovered_rate: None,
            recovery_ratio: None,
            defects: Vec::new(),
            candidate_index: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    /// 1-based.
    pub iteration: usize,
    /// Surrogate after the auxiliary update, equal to the sum rate there.
    pub objective: f64,
    pub sum_rate: f64,
    pub relative_change: f64,
    pub margins: Vec<f64>,
    pub bs: BlockRecord,
    pub ris: BlockRecord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    Infeasible,
}

impl Termination {
    pub fn name(&self) -> &'static str {
        match self {
            Termination::Converged => "converged",
            Termination::MaxIters => "max_iters",
            Termination::Infeasible => "infeasible",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityReport {
    /// Users below their threshold at the best point found.
    pub binding_users: Vec<UserId>,
    /// Optimal max-min margin of the relaxed feasibility program, when it
    /// was solved.
    pub relaxed_margin: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub scheme: Scheme,
    pub termination: Termination,
    pub beams: BeamformerSet,
    pub profiles: Vec<StarRisProfile>,
    pub report: RateReport,
    pub initial_sum_rate: f64,
    /// Trace of the winning start.
    pub trace: Vec<IterationTrace>,
    pub infeasibility: Option<InfeasibilityReport>,
    /// Every start that was descended from, winner included.
    pub starts: Vec<StartSummary>,
    /// Wall-clock figures; the only part of a result that varies between
    /// identical runs.
    pub timings: RunTimings,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunTimings {
    /// Whole call, every start included.
    pub total_s: f64,
    /// Outer iterations of the winning start.
    pub iteration_s: Vec<f64>,
}

/// A feasible point to descend from in addition to the initializer.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub label: String,
    pub beams: BeamformerSet,
    pub profiles: Vec<StarRisProfile>,
}

impl WarmStart {
    pub fn from_result(result: &OptimizationResult) -> Self {
        Self {
            label: result.scheme.name().to_string(),
            beams: result.beams.clone(),
            profiles: result.profiles.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    /// `"initializer"` or the warm-start label.
    pub origin: String,
    pub initial_sum_rate: f64,
    pub final_sum_rate: f64,
    pub iterations: usize,
    pub selected: bool,
    /// `recovery_ratio` of every accepted block, in trace order.
    pub accepted_recovery_ratios: Vec<f64>,
}

impl OptimizationResult {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Everything fixed during one optimization run.
struct Problem<'a> {
    scenario: &'a ScenarioSpec,
    channels: ChannelSet,
    users: Vec<UserId>,
    noise: f64,
    baseline: Option<BaselineKind>,
}

impl<'a> Problem<'a> {
    fn new(scenario: &'a ScenarioSpec, seed: u64, baseline: Option<BaselineKind>) -> Result<Self> {
        scenario.validate()?;
        Ok(Self {
            scenario,
            channels: build_channel_set(scenario, seed)?,
            users: scenario.users(),
            noise: scenario.noise_power(),
            baseline,
        })
    }

    fn effective(&self, profiles: &[StarRisProfile]) -> Result<EffectiveChannels> {
        effective_channels(self.scenario, &self.channels, profiles)
    }

    fn pairs(&self, eff: &EffectiveChannels, beams: &BeamformerSet) -> Result<Vec<(f64, f64)>> {
        self.users
            .iter()
            .map(|&u| power_pair(eff.get(u), beams, self.scenario.stream_of(u), self.noise))
            .collect()
    }

    fn report(&self, eff: &EffectiveChannels, beams: &BeamformerSet) -> Result<RateReport> {
        evaluate_with(self.scenario, eff, beams)
    }

    /// Per-user subproblem terms with every positive threshold raised by
    /// `QOS_BACKOFF`.
    fn terms(&self, aux: Option<&AuxiliaryState>) -> Vec<UserTerms> {
        self.users
            .iter()
            .enumerate()
            .map(|(u, &user)| UserTerms {
                stream: self.scenario.stream_of(user),
                r_min: match self.scenario.r_min(user) {
                    r if r > 0.0 => r + QOS_BACKOFF,
                    r => r,
                },
                alpha: aux.map_or(0.0, |a| a.alpha[u]),
                eta: aux.map_or(0.0, |a| a.eta[u]),
            })
            .collect()
    }

    fn bs_data(&self, eff: &EffectiveChannels, aux: Option<&AuxiliaryState>) -> BsSubproblemData {
        BsSubproblemData {
            antennas: self.scenario.bs.antenna_count,
            streams: self.scenario.stream_count(),
            users: self
                .users
                .iter()
                .zip(self.terms(aux))
                .map(|(&u, terms)| BsUser {
                    g: eff.get(u).clone(),
                    terms,
                })
                .collect(),
            noise: self.noise,
            p_t: self.scenario.p_t_watts,
        }
    }

    fn ris_data(&self, beams: &BeamformerSet, aux: &AuxiliaryState) -> Result<RisSubproblemData> {
        let s = self.scenario;
        let h0_k: Vec<CMat> = self.channels.bs_to_ris.iter().map(|l| l.entries.clone()).collect();
        let users = self
            .users
            .iter()
            .zip(self.terms(Some(aux)))
            .map(|(&u, terms)| {
                let path = match u {
                    UserId::Transmission { group, member } => {
                        let k = s.transmission_groups[group].ris_index - 1;
                        RisPath::Transmission {
                            surface: k,
                            cascaded: cascaded_transmission_matrix(&self.channels.trans(group, member), &h0_k[k])?,
                        }
                    }
                    UserId::Reflection { index } => {
                        let h_k: Vec<CVec> = (0..s.surface_count()).map(|k| self.channels.refl(k, index)).collect();
                        RisPath::Reflection {
                            stacked: stacked_reflection_matrix(&self.channels.direct(index), &h_k, &h0_k)?,
                        }
                    }
                };
                Ok(RisUser { path, terms })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(RisSubproblemData {
            element_counts: s.element_counts(),
            antennas: s.bs.antenna_count,
            beams: beams.clone(),
            users,
            noise: self.noise,
            frozen_beta_t: self.baseline.map(|kind| {
                s.element_counts()
                    .iter()
                    .map(|&n| (0..n).map(|i| kind.beta_t(i)).collect())
                    .collect()
            }),
        })
    }

    fn beta_t(&self, n: usize) -> Option<f64> {
        self.baseline.map(|k| k.beta_t(n))
    }

    /// `(sum rate, surrogate)` at the current point, feasible or not.
    fn standing(&self, eff: &EffectiveChannels, beams: &BeamformerSet, aux: &AuxiliaryState) -> Result<(f64, f64)> {
        let rate = self.report(eff, beams)?.sum_rate;
        Ok((rate, surrogate_from_pairs(&self.pairs(eff, beams)?, aux)?))
    }

    /// `(sum rate, surrogate, QT part)` of a QoS-feasible point, `None`
    /// when QoS fails.
    fn score(&self, eff: &EffectiveChannels, beams: &BeamformerSet, aux: &AuxiliaryState) -> Option<Score> {
        let report = self.report(eff, beams).ok()?;
        if !report.qos_satisfied(QOS_SLACK) {
            return None;
        }
        let pairs = self.pairs(eff, beams).ok()?;
        let f = surrogate_from_pairs(&pairs, aux).ok()?;
        let qt: f64 = pairs
            .iter()
            .enumerate()
            .map(|(u, &(p, q))| qt_term(p, q, aux.alpha[u], aux.eta[u]))
            .sum();
        Some(Score {
            rate: report.sum_rate,
            surrogate: f,
            qt,
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Score {
    rate: f64,
    surrogate: f64,
    qt: f64,
}

/// Solve, retrying once with a tighter tolerance and a larger iteration
/// budget when the first attempt is not optimal.
fn solve_with_retry(program: &ConicProgram, settings: &SolverSettings) -> Result<(ConicSolution, bool)> {
    let first = solve(program, settings)?;
    if first.is_optimal() {
        return Ok((first, false));
    }
    let tighter = SolverSettings {
        tol: (settings.tol * 0.1).max(1e-14),
        max_iter: settings.max_iter * 2,
    };
    let second = solve(program, &tighter)?;
    if !second.is_usable() && first.is_usable() {
        return Ok((first, true));
    }
    Ok((second, true))
}

fn block_seed(seed: u64, iteration: usize, block: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((iteration as u64) << 2)
        .wrapping_add(block)
}

/// Joint rescale of per-stream draws to the given total power.
fn project_beams(draws: &[CVec], power: f64) -> Option<BeamformerSet> {
    let beams = BeamformerSet { beams: draws.to_vec() };
    let total = beams.total_power();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    Some(beams.scaled((power / total).sqrt()))
}

/// Surface profiles from draws `[psi_1, ..., psi_K, phi]`.
fn project_profiles(draws: &[CVec], counts: &[usize], beta_t: &dyn Fn(usize) -> Option<f64>) -> Option<Vec<StarRisProfile>> {
    let phi = draws.last()?;
    let last = phi[phi.len() - 1];
    if !(last.norm() > 1e-12) {
        return None;
    }
    let phi = phi / last;
    let mut offset = 0;
    let mut profiles = Vec::with_capacity(counts.len());
    for (k, &nk) in counts.iter().enumerate() {
        let elements = (0..nk)
            .map(|n| {
                let vt = draws[k][n].conj();
                let vr = phi[offset + n].conj();
                let (theta_t, theta_r) = (vt.arg(), vr.arg());
                let bt = match beta_t(n) {
                    Some(b) => b,
                    None => {
                        let norm = vt.norm_sqr() + vr.norm_sqr();
                        if norm > 0.0 {
                            vt.norm_sqr() / norm
                        } else {
                            0.5
                        }
                    }
                };
                ElementCoefficients::new(bt, theta_t, theta_r)
            })
            .collect();
        offset += nk;
        profiles.push(StarRisProfile { elements });
    }
    Some(profiles)
}

/// Initial surface profile: equal split (or the baseline amplitudes) with
/// phases co-phasing each surface toward the first user it serves.
fn initial_profiles(problem: &Problem<'_>) -> Result<Vec<StarRisProfile>> {
    let s = problem.scenario;
    let ch = &problem.channels;
    let counts = s.element_counts();
    // Reflection phases: align every cascaded term of the first reflection
    // user with its direct path under a matched direct-path beam.
    let refl_reference = (!s.reflection_users.is_empty()).then(|| {
        let h0 = ch.direct(0);
        let norm = h0.norm();
        let w = if norm > 0.0 { &h0 / C64::new(norm, 0.0) } else { h0.clone() };
        (w.clone(), inner(&h0, &w))
    });
    let mut profiles = Vec::with_capacity(counts.len());
    for (k, &nk) in counts.iter().enumerate() {
        let h0k = ch.h0k(k);
        // Beam matched to the BS-to-surface link.
        let row: CVec = h0k.row(0).adjoint();
        let w_ris = if row.norm() > 0.0 { &row / C64::new(row.norm(), 0.0) } else { row.clone() };
        let group = s.transmission_groups.iter().position(|g| g.ris_index - 1 == k);
        let theta_t: Vec<f64> = match group {
            Some(g) => {
                let c = cascaded_transmission_matrix(&ch.trans(g, 0), h0k)? * &w_ris;
                c.iter().map(|z| -z.arg()).collect()
            }
            None => vec![0.0; nk],
        };
        let theta_r: Vec<f64> = match &refl_reference {
            Some((w, direct)) => {
                let c = cascaded_transmission_matrix(&ch.refl(k, 0), h0k)? * w;
                c.iter().map(|z| direct.arg() - z.arg()).collect()
            }
            None => vec![0.0; nk],
        };
        let elements = (0..nk)
            .map(|n| ElementCoefficients::new(problem.beta_t(n).unwrap_or(0.5), theta_t[n], theta_r[n]))
            .collect();
        profiles.push(StarRisProfile { elements });
    }
    Ok(profiles)
}

/// Matched-filter beams toward each stream's first user, equal power split.
fn matched_beams(problem: &Problem<'_>, eff: &EffectiveChannels) -> BeamformerSet {
    let s = problem.scenario;
    let streams = s.stream_count();
    let power = s.p_t_watts / streams as f64;
    let beams = (0..streams)
        .map(|i| {
            let user = problem
                .users
                .iter()
                .copied()
                .find(|&u| s.stream_of(u) == i)
                .expect("every stream has a user");
            let g = eff.get(user);
            let norm = g.norm();
            if norm > 0.0 {
                g * C64::new(power.sqrt() / norm, 0.0)
            } else {
                CVec::from_element(g.len(), C64::new((power / g.len() as f64).sqrt(), 0.0))
            }
        })
        .collect();
    BeamformerSet { beams }
}

enum Init {
    Feasible(BeamformerSet, Vec<StarRisProfile>),
    Infeasible(BeamformerSet, Vec<StarRisProfile>, InfeasibilityReport),
}

fn initialize(problem: &Problem<'_>, config: &BcdConfig) -> Result<Init> {
    let profiles = initial_profiles(problem)?;
    let eff = problem.effective(&profiles)?;
    let beams = matched_beams(problem, &eff);
    let report = problem.report(&eff, &beams)?;
    if report.qos_satisfied(QOS_SLACK) {
        return Ok(Init::Feasible(beams, profiles));
    }

    let infeasible = |relaxed_margin: Option<f64>, message: String| {
        Init::Infeasible(
            beams.clone(),
            profiles.clone(),
            InfeasibilityReport {
                binding_users: report.binding_users(QOS_SLACK),
                relaxed_margin,
                message,
            },
        )
    };
    let sub = match build_bs_margin_program(&problem.bs_data(&eff, None)) {
        Ok(sub) => sub,
        // e.g. a user whose only path is switched off by frozen amplitudes
        Err(Error::Infeasible(message)) => return Ok(infeasible(None, message)),
        Err(e) => return Err(e),
    };
    let (sol, _) = solve_with_retry(&sub.program, &config.solver)?;
    match sol.status {
        SolveStatus::Optimal | SolveStatus::AlmostOptimal => {}
        SolveStatus::Infeasible => return Ok(infeasible(None, "feasibility program infeasible".into())),
        SolveStatus::NumericalFailure => {
            return Err(Error::Numerical(format!(
                "feasibility program failed: {}",
                sol.detail.unwrap_or_default()
            )))
        }
    }
    let margin = sol.scalar_value(sub.margin.expect("margin program"));
    if margin < 0.0 {
        return Ok(infeasible(
            Some(margin),
            format!("QoS thresholds unreachable: relaxed max-min margin {margin:.3e} < 0"),
        ));
    }
    let cov = sub.covariances(&sol);
    let power: f64 = cov.iter().map(|w| w.trace().re).sum::<f64>().min(problem.scenario.p_t_watts);
    let project = |d: &[CVec]| project_beams(d, power);
    let evaluate = |b: &BeamformerSet| {
        let r = problem.report(&eff, b).ok()?;
        (r.min_margin() >= -QOS_SLACK).then(|| r.sum_rate)
    };
    let ctx = RandomizationContext {
        project: &project,
        evaluate: &evaluate,
    };
    match gaussian_randomization(&cov, &ctx, config.randomization_samples, block_seed(config.seed, 0, 2))? {
        Some(best) => Ok(Init::Feasible(best.candidate, profiles)),
        None => Ok(infeasible(
            Some(margin),
            "no rank-one point recovered from the feasibility program meets every threshold".into(),
        )),
    }
}

/// Data of both block relaxations at `(beams, profiles)`, with the
/// auxiliaries updated there, as one outer iteration would build them.
pub fn block_subproblems(
    scenario: &ScenarioSpec,
    config: &BcdConfig,
    scheme: Scheme,
    beams: &BeamformerSet,
    profiles: &[StarRisProfile],
) -> Result<(BsSubproblemData, RisSubproblemData)> {
    config.validate()?;
    let problem = Problem::new(scenario, config.seed, scheme.baseline())?;
    let eff = problem.effective(profiles)?;
    let aux = AuxiliaryState::from_powers(&problem.pairs(&eff, beams)?)?;
    Ok((problem.bs_data(&eff, Some(&aux)), problem.ris_data(beams, &aux)?))
}

/// Feasible starting point for the given scheme, or an infeasibility report.
pub fn initialize_feasible(
    scenario: &ScenarioSpec,
    config: &BcdConfig,
    baseline: Option<BaselineKind>,
) -> Result<std::result::Result<(BeamformerSet, Vec<StarRisProfile>), InfeasibilityReport>> {
    config.validate()?;
    let problem = Problem::new(scenario, config.seed, baseline)?;
    Ok(match initialize(&problem, config)? {
        Init::Feasible(b, p) => Ok((b, p)),
        Init::Infeasible(_, _, r) => Err(r),
    })
}

fn principal_defects(mats: &[CMat]) -> Vec<f64> {
    mats.iter()
        .map(|m| extract_rank_one(m, 1.0).map(|r| r.defect).unwrap_or(f64::NAN))
        .collect()
}

fn bs_block(
    problem: &Problem<'_>,
    config: &BcdConfig,
    iteration: usize,
    eff: &EffectiveChannels,
    aux: &AuxiliaryState,
    before: (f64, f64),
) -> Result<(BlockRecord, Option<BeamformerSet>)> {
    let mut rec = BlockRecord::new(before.0, before.1);
    let sub = build_bs_subproblem(&problem.bs_data(eff, Some(aux)))?;
    let (sol, retried) = solve_with_retry(&sub.program, &config.solver)?;
    rec.retried = retried;
    rec.solver_status = Some(sol.status);
    rec.solver_iterations = sol.iterations;
    if !sol.is_usable() {
        return Ok((rec, None));
    }
    let relaxed = sub.surrogate(sol.objective);
    rec.relaxed_surrogate = Some(relaxed);
    let relaxed_qt = relaxed_qt(relaxed, aux);
    let cov = sub.covariances(&sol);
    rec.defects = principal_defects(&cov);
    let power: f64 = cov.iter().map(|w| w.trace().re).sum::<f64>().min(problem.scenario.p_t_watts);
    let project = |d: &[CVec]| project_beams(d, power);
    let evaluate = |b: &BeamformerSet| {
        problem.score(eff, b, aux).map(|s| s.rate)
    };
    let ctx = RandomizationContext {
        project: &project,
        evaluate: &evaluate,
    };
    let best = gaussian_randomization(&cov, &ctx, config.randomization_samples, block_seed(config.seed, iteration, 0))?;
    let Some(best) = best else {
        rec.outcome = BlockOutcome::NoFeasibleCandidate;
        return Ok((rec, None));
    };
    let score = problem.score(eff, &best.candidate, aux).expect("scored candidate");
    rec.recovered_surrogate = Some(score.surrogate);
    rec.recovered_rate = Some(score.rate);
    rec.recovery_ratio = Some(score.qt / relaxed_qt);
    rec.candidate_index = Some(best.index);
    if best.value >= rec.rate_before {
        rec.outcome = BlockOutcome::Accepted;
        Ok((rec, Some(best.candidate)))
    } else {
        rec.outcome = BlockOutcome::RejectedNoImprovement;
        Ok((rec, None))
    }
}

/// Quadratic-transform part of a surrogate value: undo the per-user
/// `log2(1+alpha) - alpha/ln2` constants and the `1/ln2` factor.
fn relaxed_qt(surrogate: f64, aux: &AuxiliaryState) -> f64 {
    let constant: f64 = aux
        .alpha
        .iter()
        .map(|a| a.ln_1p() / std::f64::consts::LN_2 - a / std::f64::consts::LN_2)
        .sum();
    (surrogate - constant) * std::f64::consts::LN_2
}

fn ris_block(
    problem: &Problem<'_>,
    config: &BcdConfig,
    iteration: usize,
    beams: &BeamformerSet,
    aux: &AuxiliaryState,
    before: (f64, f64),
) -> Result<(BlockRecord, Option<Vec<StarRisProfile>>)> {
    let mut rec = BlockRecord::new(before.0, before.1);
    if problem.scenario.surface_count() == 0 {
        rec.outcome = BlockOutcome::RejectedNoImprovement;
        return Ok((rec, None));
    }
    let data = problem.ris_data(beams, aux)?;
    let sub = build_ris_subproblem(&data)?;
    let (sol, retried) = solve_with_retry(&sub.program, &config.solver)?;
    rec.retried = retried;
    rec.solver_status = Some(sol.status);
    rec.solver_iterations = sol.iterations;
    if !sol.is_usable() {
        return Ok((rec, None));
    }
    let relaxed = sub.surrogate(sol.objective);
    rec.relaxed_surrogate = Some(relaxed);
    let relaxed_qt = relaxed_qt(relaxed, aux);
    let mats = sub.matrices(&sol);
    rec.defects = principal_defects(&mats);
    let counts = problem.scenario.element_counts();
    let beta = |n: usize| problem.beta_t(n);
    let project = |d: &[CVec]| project_profiles(d, &counts, &beta);
    let evaluate = |p: &Vec<StarRisProfile>| {
        let eff = problem.effective(p).ok()?;
        problem.score(&eff, beams, aux).map(|s| s.rate)
    };
    let ctx = RandomizationContext {
        project: &project,
        evaluate: &evaluate,
    };
    let best = gaussian_randomization(&mats, &ctx, config.randomization_samples, block_seed(config.seed, iteration, 1))?;
    let Some(best) = best else {
        rec.outcome = BlockOutcome::NoFeasibleCandidate;
        return Ok((rec, None));
    };
    let eff = problem.effective(&best.candidate)?;
    let score = problem.score(&eff, beams, aux).expect("scored candidate");
    rec.recovered_surrogate = Some(score.surrogate);
    rec.recovered_rate = Some(score.rate);
    rec.recovery_ratio = Some(score.qt / relaxed_qt);
    rec.candidate_index = Some(best.index);
    if best.value >= rec.rate_before {
        rec.outcome = BlockOutcome::Accepted;
        Ok((rec, Some(best.candidate)))
    } else {
        rec.outcome = BlockOutcome::RejectedNoImprovement;
        Ok((rec, None))
    }
}

/// Descend from the initializer and from every admissible warm start; the
/// highest final sum rate wins, earliest start on ties.
fn optimize(scenario: &ScenarioSpec, config: &BcdConfig, scheme: Scheme, warm: &[WarmStart]) -> Result<OptimizationResult> {
    let clock = Instant::now();
    config.validate()?;
    let problem = Problem::new(scenario, config.seed, scheme.baseline())?;
    let mut starts = Vec::new();
    let mut failed_init = None;
    match initialize(&problem, config)? {
        Init::Feasible(b, p) => starts.push(("initializer".to_string(), b, p)),
        Init::Infeasible(b, p, report) => failed_init = Some((b, p, report)),
    }
    for w in warm {
        if admissible(&problem, &w.beams, &w.profiles) {
            starts.push((format!("warm:{}", w.label), w.beams.clone(), w.profiles.clone()));
        }
    }
    if starts.is_empty() {
        let (b, p, report) = failed_init.expect("no start without an infeasible initializer");
        let eff = problem.effective(&p)?;
        let rates = problem.report(&eff, &b)?;
        return Ok(OptimizationResult {
            scheme,
            termination: Termination::Infeasible,
            initial_sum_rate: rates.sum_rate,
            report: rates,
            beams: b,
            profiles: p,
            trace: Vec::new(),
            infeasibility: Some(report),
            starts: Vec::new(),
            timings: RunTimings {
                total_s: clock.elapsed().as_secs_f64(),
                iteration_s: Vec::new(),
            },
        });
    }

    let mut best: Option<OptimizationResult> = None;
    let mut summaries = Vec::new();
    for (origin, beams, profiles) in starts {
        let run = descend(&problem, config, scheme, beams, profiles)?;
        summaries.push(StartSummary {
            origin,
            initial_sum_rate: run.initial_sum_rate,
            final_sum_rate: run.report.sum_rate,
            iterations: run.iterations(),
            selected: false,
            accepted_recovery_ratios: accepted_ratios(&run.trace),
        });
        if best.as_ref().map_or(true, |b| run.report.sum_rate > b.report.sum_rate) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one start");
    let winner = summaries
        .iter()
        .position(|s| s.final_sum_rate == best.report.sum_rate)
        .expect("winner is among the starts");
    summaries[winner].selected = true;
    best.starts = summaries;
    best.timings.total_s = clock.elapsed().as_secs_f64();
    Ok(best)
}

fn accepted_ratios(trace: &[IterationTrace]) -> Vec<f64> {
    trace
        .iter()
        .flat_map(|it| [&it.bs, &it.ris])
        .filter(|b| b.outcome == BlockOutcome::Accepted)
        .filter_map(|b| b.recovery_ratio)
        .collect()
}

/// A warm start must match the scenario's shape, respect the budget, the
/// energy-splitting set, any frozen amplitudes, and every QoS threshold.
fn admissible(problem: &Problem<'_>, beams: &BeamformerSet, profiles: &[StarRisProfile]) -> bool {
    let scenario = problem.scenario;
    let m = scenario.bs.antenna_count;
    if beams.beams.len() != scenario.stream_count() || beams.beams.iter().any(|w| w.len() != m) {
        return false;
    }
    if beams.total_power() > scenario.p_t_watts * (1.0 + 1e-9) {
        return false;
    }
    let counts = scenario.element_counts();
    if profiles.len() != counts.len() || profiles.iter().zip(&counts).any(|(p, &n)| p.len() != n) {
        return false;
    }
    if profiles.iter().any(|p| !validate_es(p, 1e-6).is_ok()) {
        return false;
    }
    let frozen = profiles.iter().all(|p| {
        p.beta_t()
            .iter()
            .enumerate()
            .all(|(n, b)| problem.beta_t(n).map_or(true, |f| (b - f).abs() <= 1e-9))
    });
    if !frozen {
        return false;
    }
    let Ok(eff) = problem.effective(profiles) else {
        return false;
    };
    problem
        .report(&eff, beams)
        .map_or(false, |r| r.qos_satisfied(QOS_SLACK))
}

fn descend(
    problem: &Problem<'_>,
    config: &BcdConfig,
    scheme: Scheme,
    mut beams: BeamformerSet,
    mut profiles: Vec<StarRisProfile>,
) -> Result<OptimizationResult> {
    let mut eff = problem.effective(&profiles)?;
    let mut aux = AuxiliaryState::from_powers(&problem.pairs(&eff, &beams)?)?;
    let initial = problem.report(&eff, &beams)?;
    let mut f_prev = initial.sum_rate;
    let mut trace = Vec::new();
    let mut iteration_s = Vec::new();
    let mut termination = Termination::MaxIters;

    for n in 1..=config.max_outer_iterations {
        let start = Instant::now();

        let before_bs = problem.standing(&eff, &beams, &aux)?;
        let (bs, new_beams) = bs_block(problem, config, n, &eff, &aux, before_bs)?;
        if let Some(b) = new_beams {
            beams = b;
        }

        let before_ris = problem.standing(&eff, &beams, &aux)?;
        let (ris, new_profiles) = ris_block(problem, config, n, &beams, &aux, before_ris)?;
        if let Some(p) = new_profiles {
            profiles = p;
            eff = problem.effective(&profiles)?;
        }

        let pairs = problem.pairs(&eff, &beams)?;
        aux = AuxiliaryState::from_powers(&pairs)?;
        let objective = surrogate_from_pairs(&pairs, &aux)?;
        let report = problem.report(&eff, &beams)?;
        let relative_change = if f_prev != 0.0 {
            (objective - f_prev).abs() / f_prev.abs()
        } else {
            (objective - f_prev).abs()
        };
        trace.push(IterationTrace {
            iteration: n,
            objective,
            sum_rate: report.sum_rate,
            relative_change,
            margins: report.users.iter().map(|u| u.margin).collect(),
            bs,
            ris,
        });
        iteration_s.push(start.elapsed().as_secs_f64());
        f_prev = objective;
        if relative_change <= config.epsilon {
            termination = Termination::Converged;
            break;
        }
    }

    for (k, p) in profiles.iter().enumerate() {
        let es = validate_es(p, 1e-6);
        if !es.is_ok() {
            return Err(Error::Numerical(format!("surface {k} left the energy-splitting set: {es:?}")));
        }
    }
    let report = problem.report(&eff, &beams)?;
    Ok(OptimizationResult {
        scheme,
        termination,
        beams,
        profiles,
        report,
        initial_sum_rate: initial.sum_rate,
        trace,
        infeasibility: None,
        starts: Vec::new(),
        timings: RunTimings {
            total_s: iteration_s.iter().sum(),
            iteration_s,
        },
    })
}

/// Joint optimization of beams and energy-splitting coefficients.
/// Runs the three baselines first and also descends from their outputs,
/// which are feasible for the unconstrained amplitudes.
pub fn bcd_optimize(scenario: &ScenarioSpec, config: &BcdConfig) -> Result<OptimizationResult> {
    run_scheme(scenario, config, Scheme::Proposed)
}

/// Same loop with amplitudes frozen to a baseline; phases and beams are
/// still optimized.
pub fn run_baseline(scenario: &ScenarioSpec, config: &BcdConfig, kind: BaselineKind) -> Result<OptimizationResult> {
    let scheme = match kind {
        BaselineKind::Fixed55 => Scheme::Fixed55,
        BaselineKind::Fixed37 => Scheme::Fixed37,
        BaselineKind::ReflTransOnly => Scheme::ReflTransOnly,
    };
    optimize(scenario, config, scheme, &[])
}

/// The proposed scheme is seeded with the baseline outputs; see
/// [`run_all_schemes`] to avoid running the baselines twice.
pub fn run_scheme(scenario: &ScenarioSpec, config: &BcdConfig, scheme: Scheme) -> Result<OptimizationResult> {
    if scheme == Scheme::Proposed {
        let results = run_all_schemes(scenario, config, &[])?;
        return Ok(results.into_iter().find(|r| r.scheme == Scheme::Proposed).expect("proposed result"));
    }
    optimize(scenario, config, scheme, &[])
}

/// Like [`run_scheme`] with extra caller-supplied starts; inadmissible ones
/// are skipped.
pub fn run_scheme_from(
    scenario: &ScenarioSpec,
    config: &BcdConfig,
    scheme: Scheme,
    warm: &[WarmStart],
) -> Result<OptimizationResult> {
    optimize(scenario, config, scheme, warm)
}

/// All four schemes in [`Scheme::ALL`] order. `warm[i]` holds extra starts
/// for `Scheme::ALL[i]`; a short slice means none.
pub fn run_all_schemes(scenario: &ScenarioSpec, config: &BcdConfig, warm: &[Vec<WarmStart>]) -> Result<Vec<OptimizationResult>> {
    let extra = |i: usize| warm.get(i).map(Vec::as_slice).unwrap_or(&[]);
    let mut baselines = Vec::new();
    for (i, scheme) in Scheme::ALL.iter().enumerate() {
        if *scheme != Scheme::Proposed {
            baselines.push((i, optimize(scenario, config, *scheme, extra(i))?));
        }
    }
    let p = Scheme::ALL.iter().position(|s| *s == Scheme::Proposed).expect("proposed in ALL");
    let mut seeds: Vec<WarmStart> = baselines
        .iter()
        .filter(|(_, r)| r.termination != Termination::Infeasible)
        .map(|(_, r)| WarmStart::from_result(r))
        .collect();
    seeds.extend_from_slice(extra(p));
    let proposed = optimize(scenario, config, Scheme::Proposed, &seeds)?;
    let mut out: Vec<Option<OptimizationResult>> = vec![None; Scheme::ALL.len()];
    out[p] = Some(proposed);
    for (i, r) in baselines {
        out[i] = Some(r);
    }
    Ok(out.into_iter().map(|r| r.expect("every scheme ran")).collect())
}

/// `sum_u log2(1 + P_T ||g_u||_max^2 / sigma^2)` where `||g_u||_max` bounds
/// the effective channel norm over every feasible surface configuration.
pub fn rate_upper_bound(scenario: &ScenarioSpec, channels: &ChannelSet) -> Result<f64> {
    let noise = scenario.noise_power();
    let row_norms = |h: &CVec, k: usize| -> Result<f64> {
        let m = cascaded_transmission_matrix(h, channels.h0k(k))?;
        Ok(m.row_iter().map(|r| r.norm()).sum())
    };
    let mut total = 0.0;
    for user in scenario.users() {
        let gmax = match user {
            UserId::Transmission { group, member } => {
                row_norms(&channels.trans(group, member), scenario.transmission_groups[group].ris_index - 1)?
            }
            UserId::Reflection { index } => {
                let mut s = channels.direct(index).norm();
                for k in 0..scenario.surface_count() {
                    s += row_norms(&channels.refl(k, index), k)?;
                }
                s
            }
        };
        total += (scenario.p_t_watts * gmax * gmax / noise).ln_1p() / std::f64::consts::LN_2;
    }
    Ok(total)
}
