//! Energy-splitting STAR-RIS coefficients and the fixed-amplitude baselines.

use crate::error::{Error, Result};
use crate::linalg::{cis, CVec, C64};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// Reflection/transmission split and phases of one element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementCoefficients {
    pub beta_r: f64,
    pub beta_t: f64,
    pub theta_r: f64,
    pub theta_t: f64,
}

impl ElementCoefficients {
    pub fn new(beta_t: f64, theta_t: f64, theta_r: f64) -> Self {
        Self {
            beta_r: 1.0 - beta_t,
            beta_t,
            theta_r: wrap_phase(theta_r),
            theta_t: wrap_phase(theta_t),
        }
    }

    pub fn v_t(&self) -> C64 {
        cis(self.theta_t) * self.beta_t.max(0.0).sqrt()
    }

    pub fn v_r(&self) -> C64 {
        cis(self.theta_r) * self.beta_r.max(0.0).sqrt()
    }
}

/// Map a phase into `[0, 2pi)`.
pub fn wrap_phase(theta: f64) -> f64 {
    let w = theta.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Coefficients of one STAR-RIS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StarRisProfile {
    pub elements: Vec<ElementCoefficients>,
}

impl StarRisProfile {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Transmission coefficients `v_t[n] = sqrt(beta_t) exp(j theta_t)`.
    pub fn v_t(&self) -> CVec {
        CVec::from_iterator(self.len(), self.elements.iter().map(|e| e.v_t()))
    }

    pub fn v_r(&self) -> CVec {
        CVec::from_iterator(self.len(), self.elements.iter().map(|e| e.v_r()))
    }

    pub fn beta_t(&self) -> Vec<f64> {
        self.elements.iter().map(|e| e.beta_t).collect()
    }

    pub fn beta_r(&self) -> Vec<f64> {
        self.elements.iter().map(|e| e.beta_r).collect()
    }

    /// Largest `| |v_t|^2 + |v_r|^2 - 1 |` over the surface.
    pub fn coupling_error(&self) -> f64 {
        self.elements
            .iter()
            .map(|e| (e.v_t().norm_sqr() + e.v_r().norm_sqr() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EsViolation {
    AmplitudeBounds { element: usize, beta_r: f64, beta_t: f64 },
    Coupling { element: usize, sum: f64 },
    PhaseRange { element: usize, theta_r: f64, theta_t: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EsReport {
    pub violations: Vec<EsViolation>,
}

impl EsReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check amplitude bounds, unit-sum coupling and phase range for every
/// element.
pub fn validate_es(profile: &StarRisProfile, tol: f64) -> EsReport {
    let in_unit = |b: f64| (-tol..=1.0 + tol).contains(&b);
    let in_phase = |t: f64| t >= 0.0 && t < TAU;
    let mut violations = Vec::new();
    for (element, e) in profile.elements.iter().enumerate() {
        if !in_unit(e.beta_r) || !in_unit(e.beta_t) {
            violations.push(EsViolation::AmplitudeBounds {
                element,
                beta_r: e.beta_r,
                beta_t: e.beta_t,
            });
        }
        let sum = e.beta_r + e.beta_t;
        if (sum - 1.0).abs() > tol || !sum.is_finite() {
            violations.push(EsViolation::Coupling { element, sum });
        }
        if !in_phase(e.theta_r) || !in_phase(e.theta_t) {
            violations.push(EsViolation::PhaseRange {
                element,
                theta_r: e.theta_r,
                theta_t: e.theta_t,
            });
        }
    }
    EsReport { violations }
}

/// Fixed-amplitude comparison configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// `beta_r = beta_t = 0.5`.
    #[serde(rename = "fixed_55")]
    Fixed55,
    /// `beta_t = 0.3`, `beta_r = 0.7`.
    #[serde(rename = "fixed_37")]
    Fixed37,
    /// Odd elements (1-based) reflect only, even elements transmit only.
    ReflTransOnly,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Fixed55 => "fixed_55",
            BaselineKind::Fixed37 => "fixed_37",
            BaselineKind::ReflTransOnly => "refl_trans_only",
        }
    }

    /// Transmission share of element `n` (0-based storage index).
    pub fn beta_t(&self, n: usize) -> f64 {
        match self {
            BaselineKind::Fixed55 => 0.5,
            BaselineKind::Fixed37 => 0.3,
            // storage index 0 is element 1, which is odd: reflection mode
            BaselineKind::ReflTransOnly => {
                if n % 2 == 0 {
                    0.0
                } else {
                    1.0
                }
            }
        }
    }
}

impl std::str::FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed_55" => Ok(Self::Fixed55),
            "fixed_37" => Ok(Self::Fixed37),
            "refl_trans_only" => Ok(Self::ReflTransOnly),
            other => Err(Error::Domain(format!("unknown baseline kind {other:?}"))),
        }
    }
}

/// Per-surface `(theta_t, theta_r)` phase vectors.
pub type PhaseAssignment = [(Vec<f64>, Vec<f64>)];

/// Baseline profiles for surfaces with the given element counts. Phases
/// default to zero.
pub fn baseline_profile(
    kind: BaselineKind,
    element_counts: &[usize],
    phases: Option<&PhaseAssignment>,
) -> Result<Vec<StarRisProfile>> {
    if let Some(p) = phases {
        if p.len() != element_counts.len() {
            return Err(Error::Dimension {
                context: "baseline phases (surfaces)",
                expected: element_counts.len(),
                actual: p.len(),
            });
        }
    }
    element_counts
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let (theta_t, theta_r) = match phases {
                Some(p) => {
                    let (t, r) = &p[k];
                    if t.len() != n || r.len() != n {
                        return Err(Error::Dimension {
                            context: "baseline phases (elements)",
                            expected: n,
                            actual: t.len().min(r.len()),
                        });
                    }
                    (t.clone(), r.clone())
                }
                None => (vec![0.0; n], vec![0.0; n]),
            };
            Ok(StarRisProfile {
                elements: (0..n)
                    .map(|i| ElementCoefficients::new(kind.beta_t(i), theta_t[i], theta_r[i]))
                    .collect(),
            })
        })
        .collect()
}

/// Recover `(beta, theta)` from coefficient vectors. Elements whose squared
/// magnitudes sum to within `tol` of one are renormalized onto the coupling
/// constraint; anything further off is an error naming the worst element.
pub fn profile_from_vectors(v_t: &CVec, v_r: &CVec, tol: f64) -> Result<StarRisProfile> {
    if v_t.len() != v_r.len() {
        return Err(Error::Dimension {
            context: "profile_from_vectors",
            expected: v_t.len(),
            actual: v_r.len(),
        });
    }
    let mut worst: Option<(usize, f64)> = None;
    for (n, (t, r)) in v_t.iter().zip(v_r.iter()).enumerate() {
        let sum = t.norm_sqr() + r.norm_sqr();
        let err = (sum - 1.0).abs();
        if err > tol && worst.map_or(true, |(_, s)| err > (s - 1.0).abs()) {
            worst = Some((n, sum));
        }
    }
    if let Some((element, sum)) = worst {
        return Err(Error::Coupling {
            surface: 0,
            element,
            sum,
        });
    }
    let elements = v_t
        .iter()
        .zip(v_r.iter())
        .map(|(t, r)| {
            let sum = t.norm_sqr() + r.norm_sqr();
            let beta_t = t.norm_sqr() / sum;
            ElementCoefficients {
                beta_t,
                beta_r: r.norm_sqr() / sum,
                theta_t: phase_of(*t),
                theta_r: phase_of(*r),
            }
        })
        .collect();
    Ok(StarRisProfile { elements })
}

fn phase_of(z: C64) -> f64 {
    if z == C64::new(0.0, 0.0) {
        0.0
    } else {
        wrap_phase(z.arg())
    }
}
