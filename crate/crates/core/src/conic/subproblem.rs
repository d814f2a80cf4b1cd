//! Semidefinite relaxations of the BS beamforming and RIS passive
//! beamforming blocks for fixed auxiliaries.
//!
//! Both programs work in noise-normalized units: powers are divided by
//! `sigma^2` and `eta` is multiplied by `sigma`, which leaves every
//! quadratic-transform term unchanged. BS covariances are further divided
//! by `P_T`. The epigraph variable of each user is divided by its value at
//! the point the auxiliaries were computed from, so every cone block starts
//! near `[[1, 1], [1, 1]]`.

use super::program::{Coefficient, ConicProgram, LinearExpr, PsdVar, ScalarVar};
use super::ConicSolution;
use crate::error::{Error, Result};
use crate::linalg::{hermitian_part, CMat, CVec, C64};
use crate::rate::BeamformerSet;
use std::f64::consts::LN_2;

/// Objective and QoS data of one user for either block.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTerms {
    pub stream: usize,
    pub r_min: f64,
    pub alpha: f64,
    pub eta: f64,
}

struct Normalized {
    /// `P_u / sigma^2` as a trace expression.
    p: LinearExpr,
    /// `(Q_u - sigma^2) / sigma^2`.
    q: LinearExpr,
    terms: UserTerms,
}

/// Objective and QoS rows shared by both blocks. Returns the epigraph
/// scalars and the constant that turns the program objective into the
/// surrogate value.
fn encode_users(program: &mut ConicProgram, users: Vec<Normalized>, noise: f64) -> (Vec<Option<ScalarVar>>, f64) {
    let sigma = noise.sqrt();
    let mut objective = LinearExpr::new();
    let mut epigraph = Vec::with_capacity(users.len());
    let mut offset = 0.0;
    for (u, user) in users.into_iter().enumerate() {
        let UserTerms { r_min, alpha, eta, .. } = user.terms;
        let eta_n = eta * sigma;
        offset += alpha.ln_1p() / LN_2 - (alpha + eta_n * eta_n) / LN_2;
        if eta_n > 0.0 {
            // Value of sqrt((1 + alpha) P) at the point alpha, eta came from.
            let kappa = (alpha / eta_n).max(1e-9);
            let t = program.add_scalar(format!("t{u}"));
            objective = objective.add_scalar(t, 2.0 * eta_n * kappa);
            program.rotated_cone(
                format!("epigraph{u}"),
                t,
                user.p.clone().scaled((1.0 + alpha) / (kappa * kappa)),
                LinearExpr::constant(1.0),
            );
            objective = objective.extend(user.q.clone().scaled(-eta_n * eta_n));
            epigraph.push(Some(t));
        } else {
            epigraph.push(None);
        }
        if r_min > 0.0 {
            let gamma = r_min.exp2() - 1.0;
            // gamma (Q - P) - P <= 0, normalized by 2^R and by the size of
            // the interference coefficients so that the slack is O(1).
            let size: f64 = user
                .q
                .traces
                .iter()
                .map(|(v, c)| c.frobenius_sq(program.psd[v.0].dim).sqrt())
                .sum();
            let row = user
                .q
                .clone()
                .scaled(gamma)
                .add_constant(gamma)
                .extend(user.p.clone().scaled(-(gamma + 1.0)))
                .scaled(1.0 / ((gamma + 1.0) * (1.0 + size)));
            program.less_eq(format!("qos{u}"), row);
        }
    }
    program.maximize(objective);
    (epigraph, offset)
}

fn check_terms(users: &[UserTerms], streams: usize) -> Result<()> {
    for (u, t) in users.iter().enumerate() {
        if t.stream >= streams {
            return Err(Error::Dimension {
                context: "user stream index",
                expected: streams,
                actual: t.stream,
            });
        }
        if !(t.alpha >= 0.0 && t.alpha.is_finite() && t.eta >= 0.0 && t.eta.is_finite()) {
            return Err(Error::Domain(format!(
                "user {u}: auxiliaries must be finite and nonnegative (alpha={}, eta={})",
                t.alpha, t.eta
            )));
        }
        if !(t.r_min >= 0.0 && t.r_min.is_finite()) {
            return Err(Error::Domain(format!("user {u}: invalid rate threshold {}", t.r_min)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsUser {
    /// Effective channel, `y = g^H x`.
    pub g: CVec,
    pub terms: UserTerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BsSubproblemData {
    pub antennas: usize,
    pub streams: usize,
    pub users: Vec<BsUser>,
    pub noise: f64,
    pub p_t: f64,
}

impl BsSubproblemData {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise > 0.0) || !(self.p_t > 0.0) {
            return Err(Error::Domain("noise power and power budget must be positive".into()));
        }
        if self.antennas == 0 {
            return Err(Error::Domain("at least one antenna required".into()));
        }
        for u in &self.users {
            if u.g.len() != self.antennas {
                return Err(Error::Dimension {
                    context: "BS user channel length",
                    expected: self.antennas,
                    actual: u.g.len(),
                });
            }
        }
        let terms: Vec<UserTerms> = self.users.iter().map(|u| u.terms.clone()).collect();
        check_terms(&terms, self.streams)
    }

    fn gain(&self) -> f64 {
        self.p_t / self.noise
    }
}

#[derive(Debug, Clone)]
pub struct BsSubproblem {
    pub program: ConicProgram,
    pub w: Vec<PsdVar>,
    pub t: Vec<Option<ScalarVar>>,
    /// Free margin variable of the max-min variant.
    pub margin: Option<ScalarVar>,
    p_t: f64,
    offset: f64,
}

impl BsSubproblem {
    /// Covariances `W_i` in watts.
    pub fn covariances(&self, sol: &ConicSolution) -> Vec<CMat> {
        self.w
            .iter()
            .map(|v| hermitian_part(sol.psd_value(*v)) * C64::new(self.p_t, 0.0))
            .collect()
    }

    /// Surrogate value (bits) corresponding to a program objective.
    pub fn surrogate(&self, objective: f64) -> f64 {
        self.offset + objective / LN_2
    }
}

fn bs_variables(data: &BsSubproblemData, program: &mut ConicProgram) -> Vec<PsdVar> {
    (0..data.streams).map(|i| program.add_psd(format!("W{i}"), data.antennas)).collect()
}

fn bs_user_exprs(data: &BsSubproblemData, w: &[PsdVar], u: &BsUser) -> (LinearExpr, LinearExpr) {
    let coef = Coefficient::rank_one(data.gain(), u.g.clone());
    let p = LinearExpr::trace(w[u.terms.stream], coef.clone());
    let q = w.iter().fold(LinearExpr::new(), |e, &wi| e.add_trace(wi, coef.clone()));
    (p, q)
}

fn add_power_budget(program: &mut ConicProgram, w: &[PsdVar], n: usize) {
    let power = w
        .iter()
        .fold(LinearExpr::constant(-1.0), |e, &wi| e.add_trace(wi, Coefficient::identity(n)));
    program.less_eq("power", power);
}

/// Maximize `sum_u 2 eta_u t_u - eta_u^2 Q_u(W)` with `t_u^2 <= (1+alpha_u) P_u(W)`,
/// QoS rows, the power budget and `W_i ⪰ 0`.
pub fn build_bs_subproblem(data: &BsSubproblemData) -> Result<BsSubproblem> {
    data.validate()?;
    let mut program = ConicProgram::new();
    let w = bs_variables(data, &mut program);
    let users = data
        .users
        .iter()
        .map(|u| {
            let (p, q) = bs_user_exprs(data, &w, u);
            Normalized {
                p,
                q,
                terms: u.terms.clone(),
            }
        })
        .collect();
    let (t, offset) = encode_users(&mut program, users, data.noise);
    add_power_budget(&mut program, &w, data.antennas);
    Ok(BsSubproblem {
        program,
        w,
        t,
        margin: None,
        p_t: data.p_t,
        offset,
    })
}

/// Max-min QoS margin: maximize `m` subject to
/// `(P_u - (2^R_u - 1)(Q_u - P_u)) / (P_T ||g_u||^2) >= m` for every user
/// with a positive threshold, and the power budget.
pub fn build_bs_margin_program(data: &BsSubproblemData) -> Result<BsSubproblem> {
    data.validate()?;
    let mut program = ConicProgram::new();
    let w = bs_variables(data, &mut program);
    let m = program.add_scalar("margin");
    for (u, user) in data.users.iter().enumerate() {
        if user.terms.r_min <= 0.0 {
            continue;
        }
        let scale = data.gain() * user.g.norm_squared();
        if scale == 0.0 {
            return Err(Error::Infeasible(format!("user {u} has an all-zero channel")));
        }
        let gamma = user.terms.r_min.exp2() - 1.0;
        let (p, q) = bs_user_exprs(data, &w, user);
        // m - [P - gamma (Q + 1 - P)] / scale <= 0
        let row = q
            .scaled(gamma)
            .add_constant(gamma)
            .extend(p.scaled(-(gamma + 1.0)))
            .scaled(1.0 / scale)
            .add_scalar(m, 1.0);
        program.less_eq(format!("margin{u}"), row);
    }
    add_power_budget(&mut program, &w, data.antennas);
    program.maximize(LinearExpr::scalar(m, 1.0));
    Ok(BsSubproblem {
        program,
        w,
        t: Vec::new(),
        margin: Some(m),
        p_t: data.p_t,
        offset: 0.0,
    })
}

/// How a user's signal reaches it, with the surface response factored out.
#[derive(Debug, Clone, PartialEq)]
pub enum RisPath {
    /// `g^H = v_t^T H`, `H` is `N_k x N_0`.
    Transmission { surface: usize, cascaded: CMat },
    /// `g^H = phi^H H`, `H` is `(sum N_k + 1) x N_0` with the direct row last.
    Reflection { stacked: CMat },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RisUser {
    pub path: RisPath,
    pub terms: UserTerms,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RisSubproblemData {
    pub element_counts: Vec<usize>,
    pub antennas: usize,
    pub beams: BeamformerSet,
    pub users: Vec<RisUser>,
    pub noise: f64,
    /// Transmission energy fractions frozen per surface and element
    /// (baselines); the program then optimizes phases only.
    pub frozen_beta_t: Option<Vec<Vec<f64>>>,
}

impl RisSubproblemData {
    pub fn total_elements(&self) -> usize {
        self.element_counts.iter().sum()
    }

    /// Global index `p` of element `n` of surface `k` inside `phi`.
    pub fn global_index(&self, k: usize, n: usize) -> Result<usize> {
        let nk = *self
            .element_counts
            .get(k)
            .ok_or_else(|| Error::Domain(format!("surface {k} does not exist")))?;
        if n >= nk {
            return Err(Error::Domain(format!("element {n} outside surface {k} ({nk} elements)")));
        }
        Ok(self.element_counts[..k].iter().sum::<usize>() + n)
    }

    /// Whether the transmission and reflection sides of an element carry
    /// energy. Always both when amplitudes are free.
    pub fn active(&self, k: usize, n: usize) -> (bool, bool) {
        match &self.frozen_beta_t {
            None => (true, true),
            Some(beta) => (beta[k][n] > 0.0, beta[k][n] < 1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise > 0.0) {
            return Err(Error::Domain("noise power must be positive".into()));
        }
        if self.element_counts.iter().any(|&n| n == 0) {
            return Err(Error::Domain("every surface needs at least one element".into()));
        }
        self.beams.check_dims(self.beams.len(), self.antennas)?;
        let total = self.total_elements();
        for u in &self.users {
            let (rows, cols, expected_rows, context) = match &u.path {
                RisPath::Transmission { surface, cascaded } => {
                    let nk = *self
                        .element_counts
                        .get(*surface)
                        .ok_or_else(|| Error::Domain(format!("surface {surface} does not exist")))?;
                    (cascaded.nrows(), cascaded.ncols(), nk, "cascaded transmission rows")
                }
                RisPath::Reflection { stacked } => (stacked.nrows(), stacked.ncols(), total + 1, "stacked reflection rows"),
            };
            if rows != expected_rows {
                return Err(Error::Dimension {
                    context,
                    expected: expected_rows,
                    actual: rows,
                });
            }
            if cols != self.antennas {
                return Err(Error::Dimension {
                    context: "RIS user channel columns",
                    expected: self.antennas,
                    actual: cols,
                });
            }
        }
        if let Some(frozen) = &self.frozen_beta_t {
            if frozen.len() != self.element_counts.len()
                || frozen.iter().zip(&self.element_counts).any(|(b, &n)| b.len() != n)
            {
                return Err(Error::Domain("frozen amplitudes do not match element counts".into()));
            }
            if frozen.iter().flatten().any(|b| !(0.0..=1.0).contains(b)) {
                return Err(Error::Domain("frozen amplitudes must lie in [0, 1]".into()));
            }
        }
        let terms: Vec<UserTerms> = self.users.iter().map(|u| u.terms.clone()).collect();
        check_terms(&terms, self.beams.len())
    }
}

#[derive(Debug, Clone)]
pub struct RisSubproblem {
    pub program: ConicProgram,
    pub psi: Vec<PsdVar>,
    pub phi: PsdVar,
    pub t: Vec<Option<ScalarVar>>,
    offset: f64,
}

impl RisSubproblem {
    /// Relaxed `Psi_1, ..., Psi_K, Phi`, in that order.
    pub fn matrices(&self, sol: &ConicSolution) -> Vec<CMat> {
        self.psi
            .iter()
            .chain(std::iter::once(&self.phi))
            .map(|v| hermitian_part(sol.psd_value(*v)))
            .collect()
    }

    pub fn surrogate(&self, objective: f64) -> f64 {
        self.offset + objective / LN_2
    }
}

/// Same objective and QoS structure over `Psi_k = theta_k theta_k^H`
/// (`theta_k = conj(v_t)`) and `Phi = phi phi^H` (`phi = [conj(v_r); 1]`),
/// with `Psi_k[n][n] + Phi[p][p] = 1` and `Phi[end][end] = 1`.
pub fn build_ris_subproblem(data: &RisSubproblemData) -> Result<RisSubproblem> {
    data.validate()?;
    let mut program = ConicProgram::new();
    let psi: Vec<PsdVar> = data
        .element_counts
        .iter()
        .enumerate()
        .map(|(k, &n)| program.add_psd(format!("Psi{k}"), n))
        .collect();
    let total = data.total_elements();
    let phi = program.add_psd("Phi", total + 1);
    let inv_noise = 1.0 / data.noise;

    let users = data
        .users
        .iter()
        .map(|u| {
            let (var, h) = match &u.path {
                RisPath::Transmission { surface, cascaded } => (psi[*surface], cascaded),
                RisPath::Reflection { stacked } => (phi, stacked),
            };
            let mask: Vec<bool> = match &u.path {
                RisPath::Transmission { surface, .. } => {
                    (0..data.element_counts[*surface]).map(|n| data.active(*surface, n).0).collect()
                }
                RisPath::Reflection { .. } => data
                    .element_counts
                    .iter()
                    .enumerate()
                    .flat_map(|(k, &nk)| (0..nk).map(move |n| (k, n)))
                    .map(|(k, n)| data.active(k, n).1)
                    .chain(std::iter::once(true))
                    .collect(),
            };
            let a: Vec<CVec> = data
                .beams
                .beams
                .iter()
                .map(|w| {
                    let mut v = h * w;
                    v.iter_mut().zip(&mask).filter(|(_, on)| !**on).for_each(|(z, _)| *z = C64::new(0.0, 0.0));
                    v
                })
                .collect();
            let p = LinearExpr::trace(var, Coefficient::rank_one(inv_noise, a[u.terms.stream].clone()));
            let q = LinearExpr::trace(
                var,
                Coefficient::LowRank(a.iter().map(|ai| (inv_noise, ai.clone())).collect()),
            );
            Normalized {
                p,
                q,
                terms: u.terms.clone(),
            }
        })
        .collect();
    let (t, offset) = encode_users(&mut program, users, data.noise);

    for (k, &nk) in data.element_counts.iter().enumerate() {
        for n in 0..nk {
            let p = data.global_index(k, n)?;
            match &data.frozen_beta_t {
                None => program.equal(
                    format!("couple{k}_{n}"),
                    LinearExpr::trace(psi[k], Coefficient::entry(n, n, 1.0))
                        .add_trace(phi, Coefficient::entry(p, p, 1.0))
                        .add_constant(-1.0),
                ),
                Some(beta) => {
                    // A switched-off side is masked out of every coefficient,
                    // so its diagonal is pinned to 1 to keep an interior.
                    let bt = beta[k][n];
                    let (on_t, on_r) = data.active(k, n);
                    let dt = if on_t { bt } else { 1.0 };
                    let dr = if on_r { 1.0 - bt } else { 1.0 };
                    program.fix_entry(format!("beta_t{k}_{n}"), psi[k], n, n, C64::new(dt, 0.0));
                    program.fix_entry(format!("beta_r{k}_{n}"), phi, p, p, C64::new(dr, 0.0));
                }
            }
        }
    }
    program.fix_entry("homogenization", phi, total, total, C64::new(1.0, 0.0));
    Ok(RisSubproblem {
        program,
        psi,
        phi,
        t,
        offset,
    })
}
