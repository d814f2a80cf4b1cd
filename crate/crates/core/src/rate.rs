//! Effective channels and the rates they give.

use crate::error::{Error, Result};
use crate::geometry::ChannelSet;
use crate::linalg::{inner, CMat, CVec, C64};
use crate::profile::StarRisProfile;
use crate::scenario::{ScenarioSpec, UserId};
use serde::{Deserialize, Serialize};

/// BS precoders: the first `G` vectors carry the multicast streams of the
/// transmission groups, the remaining `J0` the unicast streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamformerSet {
    pub beams: Vec<CVec>,
}

impl BeamformerSet {
    pub fn zeros(streams: usize, antennas: usize) -> Self {
        Self {
            beams: vec![CVec::zeros(antennas); streams],
        }
    }

    pub fn len(&self) -> usize {
        self.beams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beams.is_empty()
    }

    /// `sum_i ||w_i||^2`.
    pub fn total_power(&self) -> f64 {
        self.beams.iter().map(|w| w.norm_squared()).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            beams: self.beams.iter().map(|w| w * C64::new(c, 0.0)).collect(),
        }
    }

    /// Shrink jointly onto the power budget if it is exceeded.
    pub fn clamp_power(&self, p_t: f64) -> Self {
        let p = self.total_power();
        if p > p_t && p > 0.0 {
            self.scaled((p_t / p).sqrt())
        } else {
            self.clone()
        }
    }

    pub fn check_dims(&self, streams: usize, antennas: usize) -> Result<()> {
        if self.beams.len() != streams {
            return Err(Error::Dimension {
                context: "beamformer stream count",
                expected: streams,
                actual: self.beams.len(),
            });
        }
        if let Some(w) = self.beams.iter().find(|w| w.len() != antennas) {
            return Err(Error::Dimension {
                context: "beamformer antenna count",
                expected: antennas,
                actual: w.len(),
            });
        }
        Ok(())
    }
}

/// Composite BS-to-user channels `g` (stored as columns, `y = g^H x`).
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveChannels {
    /// `[group][member]`.
    pub g_trans: Vec<Vec<CVec>>,
    pub g_refl: Vec<CVec>,
}

impl EffectiveChannels {
    pub fn get(&self, user: UserId) -> &CVec {
        match user {
            UserId::Transmission { group, member } => &self.g_trans[group][member],
            UserId::Reflection { index } => &self.g_refl[index],
        }
    }
}

fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            actual,
        })
    }
}

/// `g` with `g^H = h^H diag(v_t) H_{0,k}`.
pub fn effective_transmission_channel(h: &CVec, v_t: &CVec, h0k: &CMat) -> Result<CVec> {
    check_len("transmission channel h vs H0k rows", h0k.nrows(), h.len())?;
    check_len("transmission channel v_t vs H0k rows", h0k.nrows(), v_t.len())?;
    // g = H0k^H diag(conj v_t) h
    let weighted = CVec::from_iterator(h.len(), h.iter().zip(v_t.iter()).map(|(a, v)| a * v.conj()));
    Ok(h0k.adjoint() * weighted)
}

/// `H_{k,jk} = diag(h^H) H_{0,k}`: the cascaded channel with the surface
/// response factored out, so that `g^H = (v_t)^T H_{k,jk}`.
pub fn cascaded_transmission_matrix(h: &CVec, h0k: &CMat) -> Result<CMat> {
    check_len("cascaded matrix h vs H0k rows", h0k.nrows(), h.len())?;
    let mut m = h0k.clone();
    for (n, mut row) in m.row_iter_mut().enumerate() {
        row *= h[n].conj();
    }
    Ok(m)
}

/// `H_{j0} = [diag(h_{j0}^H) H_0; h_{0,j0}^H]`, stacking every surface's
/// cascaded rows over the direct row. `(sum N_k + 1) x N_0`.
pub fn stacked_reflection_matrix(h0: &CVec, h_k: &[CVec], h0_k: &[CMat]) -> Result<CMat> {
    check_len("stacked reflection surfaces", h0_k.len(), h_k.len())?;
    let n0 = h0.len();
    let total: usize = h0_k.iter().map(|m| m.nrows()).sum();
    let mut out = CMat::zeros(total + 1, n0);
    let mut offset = 0;
    for (h, m) in h_k.iter().zip(h0_k) {
        check_len("stacked reflection H0k cols", n0, m.ncols())?;
        let block = cascaded_transmission_matrix(h, m)?;
        out.view_mut((offset, 0), (m.nrows(), n0)).copy_from(&block);
        offset += m.nrows();
    }
    for c in 0..n0 {
        out[(total, c)] = h0[c].conj();
    }
    Ok(out)
}

/// `g^H = (v_t)^T H_{k,jk}`, the rewritten transmission channel.
pub fn effective_transmission_channel_rewritten(h: &CVec, v_t: &CVec, h0k: &CMat) -> Result<CVec> {
    check_len("transmission channel v_t vs H0k rows", h0k.nrows(), v_t.len())?;
    let m = cascaded_transmission_matrix(h, h0k)?;
    // g = (v_t^T M)^H = M^H conj(v_t)
    Ok(m.adjoint() * v_t.map(|z| z.conj()))
}

/// `g^H = h_{0,j0}^H + sum_k h_{k,j0}^H diag(v_r_k) H_{0,k}`.
pub fn effective_reflection_channel(h0: &CVec, h_k: &[CVec], v_r: &[CVec], h0_k: &[CMat]) -> Result<CVec> {
    check_len("reflection channel surfaces (h)", h0_k.len(), h_k.len())?;
    check_len("reflection channel surfaces (v_r)", h0_k.len(), v_r.len())?;
    let mut g = h0.clone();
    for ((h, v), m) in h_k.iter().zip(v_r).zip(h0_k) {
        check_len("reflection channel H0k cols", h0.len(), m.ncols())?;
        g += effective_transmission_channel(h, v, m)?;
    }
    Ok(g)
}

/// Same channel through the stacked form `phi^H H_{j0}`, `phi^H = [v_r^T, 1]`.
pub fn effective_reflection_channel_stacked(
    h0: &CVec,
    h_k: &[CVec],
    v_r: &[CVec],
    h0_k: &[CMat],
) -> Result<CVec> {
    check_len("reflection channel surfaces (v_r)", h0_k.len(), v_r.len())?;
    let stacked = stacked_reflection_matrix(h0, h_k, h0_k)?;
    let mut phi = CVec::zeros(stacked.nrows());
    let mut offset = 0;
    for v in v_r {
        for (n, z) in v.iter().enumerate() {
            phi[offset + n] = z.conj();
        }
        offset += v.len();
    }
    check_len("stacked reflection phi length", stacked.nrows() - 1, offset)?;
    phi[offset] = C64::new(1.0, 0.0);
    Ok(stacked.adjoint() * phi)
}

/// Effective channels of every user for the given surface configuration.
pub fn effective_channels(
    scenario: &ScenarioSpec,
    channels: &ChannelSet,
    profiles: &[StarRisProfile],
) -> Result<EffectiveChannels> {
    check_len("profile surfaces", scenario.surface_count(), profiles.len())?;
    let h0_k: Vec<CMat> = channels.bs_to_ris.iter().map(|l| l.entries.clone()).collect();
    let v_r: Vec<CVec> = profiles.iter().map(|p| p.v_r()).collect();
    let g_trans = scenario
        .transmission_groups
        .iter()
        .enumerate()
        .map(|(gi, group)| {
            let k = group.ris_index - 1;
            let v_t = profiles[k].v_t();
            (0..group.users.len())
                .map(|m| effective_transmission_channel(&channels.trans(gi, m), &v_t, &h0_k[k]))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let g_refl = (0..scenario.reflection_users.len())
        .map(|j| {
            let h_k: Vec<CVec> = (0..scenario.surface_count()).map(|k| channels.refl(k, j)).collect();
            effective_reflection_channel(&channels.direct(j), &h_k, &v_r, &h0_k)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EffectiveChannels { g_trans, g_refl })
}

/// `(SINR, log2(1 + SINR))` of the user seeing channel `g` and decoding
/// stream `desired`.
pub fn user_rate(g: &CVec, beams: &BeamformerSet, desired: usize, noise_power: f64) -> Result<(f64, f64)> {
    if !(noise_power > 0.0) {
        return Err(Error::Domain(format!("noise power must be positive, got {noise_power}")));
    }
    if desired >= beams.len() {
        return Err(Error::Domain(format!(
            "stream {desired} out of range for {} streams",
            beams.len()
        )));
    }
    let mut signal = 0.0;
    let mut interference = 0.0;
    for (i, w) in beams.beams.iter().enumerate() {
        check_len("user_rate beam length", g.len(), w.len())?;
        let p = inner(g, w).norm_sqr();
        if i == desired {
            signal = p;
        } else {
            interference += p;
        }
    }
    let sinr = signal / (interference + noise_power);
    Ok((sinr, sinr.ln_1p() / std::f64::consts::LN_2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRate {
    #[serde(flatten)]
    pub user: UserId,
    pub sinr: f64,
    /// bits/s/Hz
    pub rate: f64,
    /// `rate - r_min`
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub users: Vec<UserRate>,
    pub sum_rate: f64,
}

impl RateReport {
    pub fn min_margin(&self) -> f64 {
        self.users.iter().map(|u| u.margin).fold(f64::INFINITY, f64::min)
    }

    pub fn qos_satisfied(&self, slack: f64) -> bool {
        self.users.iter().all(|u| u.margin >= -slack)
    }

    /// Users whose margin is below `-slack`.
    pub fn binding_users(&self, slack: f64) -> Vec<UserId> {
        self.users.iter().filter(|u| u.margin < -slack).map(|u| u.user).collect()
    }
}

/// Rate report from precomputed effective channels.
pub fn evaluate_with(scenario: &ScenarioSpec, eff: &EffectiveChannels, beams: &BeamformerSet) -> Result<RateReport> {
    let noise = scenario.noise_power();
    let users = scenario
        .users()
        .into_iter()
        .map(|user| {
            let (sinr, rate) = user_rate(eff.get(user), beams, scenario.stream_of(user), noise)?;
            Ok(UserRate {
                user,
                sinr,
                rate,
                margin: rate - scenario.r_min(user),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let sum_rate = users.iter().map(|u| u.rate).sum();
    Ok(RateReport { users, sum_rate })
}

/// Per-user rates, sum rate and QoS margins.
pub fn evaluate(
    scenario: &ScenarioSpec,
    channels: &ChannelSet,
    profiles: &[StarRisProfile],
    beams: &BeamformerSet,
) -> Result<RateReport> {
    beams.check_dims(scenario.stream_count(), scenario.bs.antenna_count)?;
    let eff = effective_channels(scenario, channels, profiles)?;
    evaluate_with(scenario, &eff, beams)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cvec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cvec(rng: &mut impl Rng, n: usize) -> CVec {
        CVec::from_fn(n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn random_cmat(rng: &mut impl Rng, r: usize, c: usize) -> CMat {
        CMat::from_fn(r, c, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn assert_close(a: &CVec, b: &CVec, tol: f64) {
        let scale = a.norm().max(b.norm()).max(1e-300);
        assert!((a - b).norm() <= tol * scale, "{a} vs {b}");
    }

    #[test]
    fn identity_surface_transmission() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_cvec(&mut rng, 4);
        let h0k = random_cmat(&mut rng, 4, 3);
        let ones = CVec::from_element(4, C64::new(1.0, 0.0));
        let g = effective_transmission_channel(&h, &ones, &h0k).unwrap();
        let direct = (h.adjoint() * &h0k).adjoint();
        assert_close(&g, &direct, 1e-14);
    }

    #[test]
    fn opaque_surface_kills_transmission() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = effective_transmission_channel(&random_cvec(&mut rng, 4), &CVec::zeros(4), &random_cmat(&mut rng, 4, 3))
            .unwrap();
        assert_eq!(g.norm(), 0.0);
    }

    #[test]
    fn transmission_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_cvec(&mut rng, 4);
        let v = random_cvec(&mut rng, 4);
        let m = random_cmat(&mut rng, 4, 3);
        let a = effective_transmission_channel(&h, &v, &m).unwrap();
        let b = effective_transmission_channel_rewritten(&h, &v, &m).unwrap();
        assert_close(&a, &b, 1e-12);
    }

    #[test]
    fn no_reflection_leaves_direct_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h0 = random_cvec(&mut rng, 3);
        let g = effective_reflection_channel(&h0, &[random_cvec(&mut rng, 5)], &[CVec::zeros(5)], &[random_cmat(&mut rng, 5, 3)])
            .unwrap();
        assert_close(&g, &h0, 0.0);
    }

    #[test]
    fn pure_reflected_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_cvec(&mut rng, 2);
        let m = random_cmat(&mut rng, 2, 3);
        let ones = CVec::from_element(2, C64::new(1.0, 0.0));
        let g = effective_reflection_channel(&CVec::zeros(3), &[h.clone()], &[ones], &[m.clone()]).unwrap();
        assert_close(&g, &(h.adjoint() * m).adjoint(), 1e-14);
    }

    #[test]
    fn dimension_mismatch_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(effective_transmission_channel(&random_cvec(&mut rng, 3), &random_cvec(&mut rng, 4), &random_cmat(&mut rng, 4, 2))
            .is_err());
    }

    #[test]
    fn zero_beam_gives_zero_rate() {
        let beams = BeamformerSet::zeros(2, 2);
        let (sinr, rate) = user_rate(&cvec(&[(1.0, 0.0), (0.0, 1.0)]), &beams, 0, 1.0).unwrap();
        assert_eq!((sinr, rate), (0.0, 0.0));
    }

    #[test]
    fn unit_snr_is_one_bit() {
        let beams = BeamformerSet {
            beams: vec![cvec(&[(0.5, 0.0)])],
        };
        let g = cvec(&[(2.0, 0.0)]);
        let (sinr, rate) = user_rate(&g, &beams, 0, 1.0).unwrap();
        assert_relative_eq!(sinr, 1.0, epsilon = 1e-15);
        assert_relative_eq!(rate, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn two_stream_hand_arithmetic() {
        let sigma2: f64 = 0.25;
        let g = cvec(&[(1.0, 0.0)]);
        let beams = BeamformerSet {
            beams: vec![cvec(&[((3.0 * sigma2).sqrt(), 0.0)]), cvec(&[(0.0, sigma2.sqrt())])],
        };
        let (sinr, rate) = user_rate(&g, &beams, 0, sigma2).unwrap();
        assert_relative_eq!(sinr, 1.5, epsilon = 1e-14);
        assert_relative_eq!(rate, 2.5f64.log2(), epsilon = 1e-14);
    }

    #[test]
    fn nonpositive_noise_rejected() {
        let beams = BeamformerSet::zeros(1, 1);
        assert!(user_rate(&cvec(&[(1.0, 0.0)]), &beams, 0, 0.0).is_err());
    }

    #[test]
    fn user_rate_json_shape() {
        let r = UserRate {
            user: UserId::Transmission { group: 1, member: 0 },
            sinr: 1.0,
            rate: 1.0,
            margin: 0.3,
        };
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["group"], "transmission_2");
        assert_eq!(v["index"], 0);
        let back: UserRate = serde_json::from_value(v).unwrap();
        assert_eq!(back, r);
    }

    proptest! {
        #[test]
        fn reflection_paths_agree(seed in any::<u64>(), k in 1usize..4, n in 1usize..6, n0 in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h0 = random_cvec(&mut rng, n0);
            let hs: Vec<CVec> = (0..k).map(|_| random_cvec(&mut rng, n)).collect();
            let vs: Vec<CVec> = (0..k).map(|_| random_cvec(&mut rng, n)).collect();
            let ms: Vec<CMat> = (0..k).map(|_| random_cmat(&mut rng, n, n0)).collect();
            let a = effective_reflection_channel(&h0, &hs, &vs, &ms).unwrap();
            let b = effective_reflection_channel_stacked(&h0, &hs, &vs, &ms).unwrap();
            prop_assert!((&a - &b).norm() <= 1e-12 * a.norm().max(1e-300));
        }

        #[test]
        fn noiseless_sinr_invariant_under_common_scaling(seed in any::<u64>(), c in 0.1f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_cvec(&mut rng, 3);
            let beams = BeamformerSet { beams: (0..3).map(|_| random_cvec(&mut rng, 3)).collect() };
            let (a, _) = user_rate(&g, &beams, 1, 1e-300).unwrap();
            let (b, _) = user_rate(&g, &beams.scaled(c), 1, 1e-300).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-12));
            for (w, ws) in beams.beams.iter().zip(&beams.scaled(c).beams) {
                let p = inner(&g, w).norm_sqr();
                let ps = inner(&g, ws).norm_sqr();
                prop_assert!((ps - c * c * p).abs() <= 1e-10 * ps.max(1e-300));
            }
        }

        #[test]
        fn desired_power_is_monotone(seed in any::<u64>(), c in 1.0f64..10.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_cvec(&mut rng, 3);
            let beams = BeamformerSet { beams: (0..3).map(|_| random_cvec(&mut rng, 3)).collect() };
            let mut boosted = beams.clone();
            boosted.beams[0] *= C64::new(c, 0.0);
            let (_, r0) = user_rate(&g, &beams, 0, 0.5).unwrap();
            let (_, r1) = user_rate(&g, &boosted, 0, 0.5).unwrap();
            prop_assert!(r1 >= r0 && r0 >= 0.0);
        }
    }
}
