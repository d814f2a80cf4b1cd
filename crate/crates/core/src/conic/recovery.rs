//! Rank-one recovery from relaxed PSD solutions: principal eigenvector
//! extraction and Gaussian randomization.

use crate::error::{Error, Result};
use crate::linalg::{hermitian_defect, hermitian_eig_desc, CMat, CVec, C64};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Hermitian defect accepted before a matrix is rejected as non-Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct RankOne {
    /// `sqrt(lambda_1) u_1`.
    pub vector: CVec,
    /// `lambda_2 / lambda_1`, 0 when `lambda_1 = 0`.
    pub defect: f64,
    /// `defect <= tol_ratio`.
    pub accepted: bool,
}

pub fn extract_rank_one(m: &CMat, tol_ratio: f64) -> Result<RankOne> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension {
            context: "extract_rank_one square matrix",
            expected: m.nrows(),
            actual: m.ncols(),
        });
    }
    let herm = hermitian_defect(m);
    if herm > HERMITIAN_TOL {
        return Err(Error::Domain(format!("matrix is not Hermitian (relative defect {herm:.3e})")));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(RankOne {
            vector: CVec::zeros(0),
            defect: 0.0,
            accepted: true,
        });
    }
    let (vals, vecs) = hermitian_eig_desc(m);
    let l1 = vals[0].max(0.0);
    let l2 = vals.get(1).copied().unwrap_or(0.0).max(0.0);
    let defect = if l1 > 0.0 { l2 / l1 } else { 0.0 };
    let vector = vecs.column(0).into_owned() * C64::new(l1.sqrt(), 0.0);
    Ok(RankOne {
        vector,
        defect,
        accepted: defect <= tol_ratio,
    })
}

/// Subproblem-specific parts of randomization. `project` maps one draw per
/// relaxed matrix onto the feasible set; `evaluate` returns the objective
/// of a projected candidate, or `None` when it fails the QoS check.
pub struct RandomizationContext<'a, C> {
    pub project: &'a dyn Fn(&[CVec]) -> Option<C>,
    pub evaluate: &'a dyn Fn(&C) -> Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Randomized<C> {
    pub candidate: C,
    pub value: f64,
    /// 0 for the principal-eigenvector candidate.
    pub index: usize,
    pub feasible_count: usize,
}

/// `xi ~ CN(0, M)` via `M = U diag(lambda) U^H`.
struct Sampler {
    factor: CMat,
}

impl Sampler {
    fn new(m: &CMat) -> Self {
        let (vals, vecs) = hermitian_eig_desc(m);
        let mut factor = vecs;
        for (j, l) in vals.iter().enumerate() {
            factor.column_mut(j).scale_mut(l.max(0.0).sqrt());
        }
        Self { factor }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> CVec {
        let n = self.factor.ncols();
        let z = CVec::from_fn(n, |_, _| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
        });
        &self.factor * z
    }
}

/// Relative margin a later candidate needs to displace the incumbent.
const TIE_TOL: f64 = 1e-12;

/// Candidate 0 is the principal eigenvector of every matrix; `samples`
/// further candidates are Gaussian draws. Returns the best candidate that
/// passes `evaluate`, or `None` if none does. Ties, up to rounding, keep
/// the earliest.
pub fn gaussian_randomization<C>(
    matrices: &[CMat],
    ctx: &RandomizationContext<'_, C>,
    samples: usize,
    seed: u64,
) -> Result<Option<Randomized<C>>> {
    if samples == 0 {
        return Err(Error::Domain("randomization needs at least one sample".into()));
    }
    let principal: Vec<CVec> = matrices
        .iter()
        .map(|m| extract_rank_one(m, 1.0).map(|r| r.vector))
        .collect::<Result<_>>()?;
    let samplers: Vec<Sampler> = matrices.iter().map(Sampler::new).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut best: Option<Randomized<C>> = None;
    let mut feasible = 0;
    for index in 0..=samples {
        let draws: Vec<CVec> = if index == 0 {
            principal.clone()
        } else {
            samplers.iter().map(|s| s.draw(&mut rng)).collect()
        };
        let Some(candidate) = (ctx.project)(&draws) else {
            continue;
        };
        let Some(value) = (ctx.evaluate)(&candidate) else {
            continue;
        };
        if !value.is_finite() {
            continue;
        }
        feasible += 1;
        if best.as_ref().map_or(true, |b| value > b.value + TIE_TOL * b.value.abs()) {
            best = Some(Randomized {
                candidate,
                value,
                index,
                feasible_count: 0,
            });
        }
    }
    Ok(best.map(|mut b| {
        b.feasible_count = feasible;
        b
    }))
}
