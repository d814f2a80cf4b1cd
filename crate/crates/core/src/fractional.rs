//! Lagrangian-dual and quadratic transforms of the sum-rate objective.
//!
//! The surrogate is the natural-log transform divided by `ln 2`, so that
//! it is measured in bits and is tight against the base-2 sum rate when
//! the auxiliaries take their closed-form values.

use crate::error::{Error, Result};
use crate::linalg::{inner, CVec};
use crate::rate::BeamformerSet;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;

/// Per-user auxiliaries, in canonical user order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryState {
    pub alpha: Vec<f64>,
    pub eta: Vec<f64>,
}

impl AuxiliaryState {
    /// Closed-form update from each user's `(P_u, Q_u)`.
    pub fn from_powers(powers: &[(f64, f64)]) -> Result<Self> {
        let mut alpha = Vec::with_capacity(powers.len());
        let mut eta = Vec::with_capacity(powers.len());
        for &(p, q) in powers {
            let a = update_alpha(p, q)?;
            eta.push(update_eta(p, q, a)?);
            alpha.push(a);
        }
        Ok(Self { alpha, eta })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }
}

/// `P_u = |g^H w_u|^2` and `Q_u = sum_i |g^H w_i|^2 + sigma^2`.
pub fn power_pair(g: &CVec, beams: &BeamformerSet, desired: usize, noise: f64) -> Result<(f64, f64)> {
    if !(noise > 0.0) {
        return Err(Error::Domain(format!("noise power must be positive, got {noise}")));
    }
    if desired >= beams.len() {
        return Err(Error::Domain(format!("stream {desired} out of range")));
    }
    let mut p = 0.0;
    let mut q = noise;
    for (i, w) in beams.beams.iter().enumerate() {
        let s = inner(g, w).norm_sqr();
        q += s;
        if i == desired {
            p = s;
        }
    }
    Ok((p, q))
}

/// `alpha = P / (Q - P)`, the user's SINR.
pub fn update_alpha(p: f64, q: f64) -> Result<f64> {
    if !(p >= 0.0) || !(q > p) {
        return Err(Error::Domain(format!("alpha update needs Q > P >= 0, got P={p}, Q={q}")));
    }
    Ok(p / (q - p))
}

/// `eta = sqrt((1 + alpha) P) / Q`.
pub fn update_eta(p: f64, q: f64, alpha: f64) -> Result<f64> {
    if !(q > 0.0) || !(p >= 0.0) || !(alpha >= 0.0) {
        return Err(Error::Domain(format!(
            "eta update needs Q > 0, P >= 0, alpha >= 0; got P={p}, Q={q}, alpha={alpha}"
        )));
    }
    Ok(((1.0 + alpha) * p).sqrt() / q)
}

/// Quadratic-transform term `2 eta sqrt((1+alpha) P) - eta^2 Q`.
pub fn qt_term(p: f64, q: f64, alpha: f64, eta: f64) -> f64 {
    2.0 * eta * ((1.0 + alpha) * p).sqrt() - eta * eta * q
}

/// `sum_u [ log2(1+alpha) + (2 eta sqrt((1+alpha) P) - eta^2 Q - alpha) / ln 2 ]`.
pub fn surrogate_objective(p: &[f64], q: &[f64], alpha: &[f64], eta: &[f64]) -> Result<f64> {
    let n = p.len();
    if q.len() != n || alpha.len() != n || eta.len() != n {
        return Err(Error::Dimension {
            context: "surrogate_objective",
            expected: n,
            actual: q.len().min(alpha.len()).min(eta.len()),
        });
    }
    let mut total = 0.0;
    for u in 0..n {
        if p[u] < 0.0 {
            return Err(Error::Domain(format!("negative signal power {} for user {u}", p[u])));
        }
        if !(q[u] > 0.0) {
            return Err(Error::Domain(format!("non-positive total power {} for user {u}", q[u])));
        }
        total += alpha[u].ln_1p() / LN_2 + (qt_term(p[u], q[u], alpha[u], eta[u]) - alpha[u]) / LN_2;
    }
    Ok(total)
}

/// Surrogate evaluated on `(P, Q)` pairs.
pub fn surrogate_from_pairs(pairs: &[(f64, f64)], aux: &AuxiliaryState) -> Result<f64> {
    let (p, q): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
    surrogate_objective(&p, &q, &aux.alpha, &aux.eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cvec, C64};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn zero_beams_pair() {
        let (p, q) = power_pair(&cvec(&[(1.0, 1.0)]), &BeamformerSet::zeros(2, 1), 0, 0.3).unwrap();
        assert_eq!((p, q), (0.0, 0.3));
    }

    #[test]
    fn single_stream_pair() {
        let beams = BeamformerSet {
            beams: vec![cvec(&[(2.0, 0.0)])],
        };
        let (p, q) = power_pair(&cvec(&[(0.0, 1.5)]), &beams, 0, 0.1).unwrap();
        assert_relative_eq!(p, 9.0, epsilon = 1e-14);
        assert_relative_eq!(q, 9.1, epsilon = 1e-14);
    }

    #[test]
    fn three_stream_interference_termwise() {
        let g = cvec(&[(0.3, -0.2), (1.1, 0.4)]);
        let beams = BeamformerSet {
            beams: vec![
                cvec(&[(1.0, 0.0), (0.0, 1.0)]),
                cvec(&[(-0.5, 0.2), (0.3, 0.3)]),
                cvec(&[(0.0, -0.7), (0.9, 0.1)]),
            ],
        };
        let noise = 0.05;
        let (p, q) = power_pair(&g, &beams, 1, noise).unwrap();
        let term = |w: &CVec| -> f64 {
            let z: C64 = g.iter().zip(w.iter()).map(|(a, b)| a.conj() * b).sum();
            z.norm_sqr()
        };
        let interference = term(&beams.beams[0]) + term(&beams.beams[2]);
        assert_relative_eq!(q - p, interference + noise, epsilon = 1e-14);
    }

    #[test]
    fn alpha_examples() {
        assert_relative_eq!(update_alpha(2.0, 4.0).unwrap(), 1.0);
        assert_eq!(update_alpha(0.0, 4.0).unwrap(), 0.0);
        assert_relative_eq!(update_alpha(3.0, 4.0).unwrap(), 3.0);
        assert!(update_alpha(4.0, 4.0).is_err());
    }

    #[test]
    fn eta_examples() {
        assert_eq!(update_eta(0.0, 2.0, 0.5).unwrap(), 0.0);
        assert_relative_eq!(update_eta(1.0, 2.0, 1.0).unwrap(), 2f64.sqrt() / 2.0, epsilon = 1e-15);
        assert!(update_eta(1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn all_zero_surrogate() {
        assert_eq!(surrogate_objective(&[0.0], &[1.0], &[0.0], &[0.0]).unwrap(), 0.0);
        assert!(surrogate_objective(&[-1.0], &[1.0], &[0.0], &[0.0]).is_err());
    }

    proptest! {
        #[test]
        fn eta_identity(p in 0.0f64..1e3, extra in 1e-6f64..1e3) {
            let q = p + extra;
            let a = update_alpha(p, q).unwrap();
            let e = update_eta(p, q, a).unwrap();
            prop_assert!((e * q - ((1.0 + a) * p).sqrt()).abs() <= 1e-12 * (e * q).max(1e-300));
        }

        #[test]
        fn tight_at_closed_form(p in 0.0f64..1e6, extra in 1e-3f64..1e3) {
            let q = p + extra;
            let a = update_alpha(p, q).unwrap();
            let e = update_eta(p, q, a).unwrap();
            let f = surrogate_objective(&[p], &[q], &[a], &[e]).unwrap();
            let rate = (1.0 + p / (q - p)).log2();
            prop_assert!((f - rate).abs() <= 1e-9 * rate.max(1.0));
        }

        #[test]
        fn closed_forms_are_maximizers(p in 1e-3f64..1e3, extra in 1e-2f64..1e2, delta in 1e-4f64..1.0, sign in prop::bool::ANY) {
            let q = p + extra;
            let a = update_alpha(p, q).unwrap();
            let e = update_eta(p, q, a).unwrap();
            let best = surrogate_objective(&[p], &[q], &[a], &[e]).unwrap();
            let d = if sign { delta } else { -delta };
            let e2 = (e * (1.0 + d)).max(0.0);
            prop_assert!(surrogate_objective(&[p], &[q], &[a], &[e2]).unwrap() < best);
            // for fixed alpha, the eta-maximized expression is maximized by the closed-form alpha
            let a2 = (a * (1.0 + d)).max(0.0);
            let e_for_a2 = update_eta(p, q, a2).unwrap();
            prop_assert!(surrogate_objective(&[p], &[q], &[a2], &[e_for_a2]).unwrap() <= best + 1e-12 * best.abs());
        }
    }
}
