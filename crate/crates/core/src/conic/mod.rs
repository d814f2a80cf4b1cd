//! Conic modelling layer: the neutral program abstraction, the solver
//! backends, the two beamforming subproblem builders and rank-one recovery.

pub mod native;
pub mod program;
pub mod recovery;
pub mod subproblem;

#[cfg(feature = "clarabel")]
pub mod clarabel_backend;

pub use program::{Coefficient, ConicProgram, Constraint, LinearExpr, PsdVar, ScalarVar, Sense};
pub use recovery::{extract_rank_one, gaussian_randomization, RandomizationContext, RankOne, Randomized};
pub use subproblem::{
    build_bs_margin_program, build_bs_subproblem, build_ris_subproblem, BsSubproblem, BsSubproblemData, BsUser, RisPath,
    RisSubproblem, RisSubproblemData, RisUser, UserTerms,
};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use serde::{Deserialize, Serialize};

/// Environment variable selecting the backend: `native` (default) or
/// `clarabel`.
pub const SOLVER_ENV: &str = "STARRIS_SOLVER";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 120 }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Domain(format!("solver.tol must lie in (0, 1), got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Domain("solver.max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    /// Stalled before the requested tolerance but within the reduced
    /// tolerance `sqrt(tol)`.
    AlmostOptimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct ConicSolution {
    pub status: SolveStatus,
    /// Objective of the maximization as stated in the program.
    pub objective: f64,
    pub psd: Vec<CMat>,
    pub scalars: Vec<f64>,
    pub iterations: usize,
    /// Largest constraint violation relative to the constraint scale.
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Relative primal-dual objective gap.
    pub gap: f64,
    pub detail: Option<String>,
}

impl ConicSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Optimal or almost optimal.
    pub fn is_usable(&self) -> bool {
        matches!(self.status, SolveStatus::Optimal | SolveStatus::AlmostOptimal)
    }

    pub fn psd_value(&self, v: PsdVar) -> &CMat {
        &self.psd[v.0]
    }

    pub fn scalar_value(&self, v: ScalarVar) -> f64 {
        self.scalars[v.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Native,
    Clarabel,
}

impl Backend {
    pub fn from_env() -> Result<Self> {
        match std::env::var(SOLVER_ENV) {
            Err(_) => Ok(Backend::Native),
            Ok(v) => v.parse(),
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "" | "native" => Ok(Backend::Native),
            "clarabel" => Ok(Backend::Clarabel),
            other => Err(Error::Domain(format!("unknown solver backend '{other}' (expected native or clarabel)"))),
        }
    }
}

/// Solve with the backend named by [`SOLVER_ENV`].
pub fn solve(program: &ConicProgram, settings: &SolverSettings) -> Result<ConicSolution> {
    solve_with(Backend::from_env()?, program, settings)
}

pub fn solve_with(backend: Backend, program: &ConicProgram, settings: &SolverSettings) -> Result<ConicSolution> {
    program.validate()?;
    settings.validate()?;
    match backend {
        Backend::Native => Ok(native::solve(program, settings)),
        #[cfg(feature = "clarabel")]
        Backend::Clarabel => clarabel_backend::solve(program, settings),
        #[cfg(not(feature = "clarabel"))]
        Backend::Clarabel => Err(Error::Domain("built without the clarabel feature".into())),
    }
}
