//! Relaxation builders: program structure and solved-program properties.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use starris::conic::program::Constraint;
use starris::conic::{
    build_bs_subproblem, build_ris_subproblem, gaussian_randomization, solve, BsSubproblemData, BsUser,
    RandomizationContext, RisPath, RisSubproblemData, RisUser, SolveStatus, SolverSettings, UserTerms,
};
use starris::fractional::{surrogate_objective, update_alpha, update_eta};
use starris::linalg::{hermitian_eig_desc, CMat, CVec, C64};
use starris::rate::BeamformerSet;

const NOISE: f64 = 1e-14;

fn cn(rng: &mut ChaCha8Rng, scale: f64) -> C64 {
    C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * scale
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CVec {
    CVec::from_fn(n, |_, _| cn(rng, scale))
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> CMat {
    CMat::from_fn(r, c, |_, _| cn(rng, scale))
}

fn terms(stream: usize, r_min: f64, alpha: f64, eta: f64) -> UserTerms {
    UserTerms { stream, r_min, alpha, eta }
}

fn settings() -> SolverSettings {
    SolverSettings::default()
}

/// `(P, Q)` of a user with effective channel `g` (`y = g^H x`).
fn pq(g: &CVec, beams: &BeamformerSet, stream: usize) -> (f64, f64) {
    let gains: Vec<f64> = beams.beams.iter().map(|w| g.dotc(w).norm_sqr()).collect();
    (gains[stream], gains.iter().sum::<f64>() + NOISE)
}

fn aux_at(pairs: &[(f64, f64)]) -> Vec<(f64, f64)> {
    pairs
        .iter()
        .map(|&(p, q)| {
            let a = update_alpha(p, q).unwrap();
            (a, update_eta(p, q, a).unwrap())
        })
        .collect()
}

fn random_beams(rng: &mut ChaCha8Rng, streams: usize, antennas: usize, p_t: f64) -> BeamformerSet {
    let b = BeamformerSet {
        beams: (0..streams).map(|_| rand_vec(rng, antennas, 1.0)).collect(),
    };
    b.scaled((p_t / b.total_power()).sqrt())
}

#[test]
fn bs_program_for_the_default_shape_has_seven_5x5_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // 2 multicast groups of two users, 5 unicast users
    let streams = [0, 0, 1, 1, 2, 3, 4, 5, 6];
    let data = BsSubproblemData {
        antennas: 5,
        streams: 7,
        users: streams
            .iter()
            .map(|&s| BsUser {
                g: rand_vec(&mut rng, 5, 1e-5),
                terms: terms(s, 0.7, 1.0, 1e6),
            })
            .collect(),
        noise: NOISE,
        p_t: 0.1,
    };
    let sub = build_bs_subproblem(&data).unwrap();
    assert_eq!(sub.w.len(), 7);
    assert!(sub.program.psd.iter().all(|d| d.dim == 5));
}

#[test]
fn degenerate_bs_program_is_scalar_power_allocation() {
    let data = BsSubproblemData {
        antennas: 1,
        streams: 1,
        users: vec![BsUser {
            g: CVec::from_element(1, C64::new(1e-5, 0.0)),
            terms: terms(0, 0.0, 3.0, 1e6),
        }],
        noise: NOISE,
        p_t: 0.1,
    };
    let sub = build_bs_subproblem(&data).unwrap();
    assert_eq!(sub.program.psd.len(), 1);
    assert_eq!(sub.program.psd[0].dim, 1);
    let sol = solve(&sub.program, &settings()).unwrap();
    assert!(sol.is_usable(), "{:?}", sol.detail);
}

#[test]
fn zero_auxiliaries_make_the_objective_vanish() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let data = BsSubproblemData {
        antennas: 3,
        streams: 2,
        users: (0..2)
            .map(|s| BsUser {
                g: rand_vec(&mut rng, 3, 1e-5),
                terms: terms(s, 0.5, 0.0, 0.0),
            })
            .collect(),
        noise: NOISE,
        p_t: 0.1,
    };
    let sub = build_bs_subproblem(&data).unwrap();
    assert!(sub.program.objective.traces.is_empty() && sub.program.objective.scalars.is_empty());
    let sol = solve(&sub.program, &settings()).unwrap();
    assert!(sol.is_usable());
    assert_eq!(sub.surrogate(sol.objective), 0.0);
}

/// Threshold just above / below `log2(1 + P_T ||g||^2 / sigma^2)`.
#[test]
fn qos_above_single_user_capacity_is_infeasible() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = rand_vec(&mut rng, 2, 3e-6);
    let p_t = 0.1;
    let capacity = (1.0 + p_t * g.norm_squared() / NOISE).log2();
    let run = |r_min: f64| {
        let data = BsSubproblemData {
            antennas: 2,
            streams: 1,
            users: vec![BsUser {
                g: g.clone(),
                terms: terms(0, r_min, 0.0, 0.0),
            }],
            noise: NOISE,
            p_t,
        };
        solve(&build_bs_subproblem(&data).unwrap().program, &settings()).unwrap().status
    };
    assert_eq!(run(capacity + 0.05), SolveStatus::Infeasible);
    assert_ne!(run(capacity - 0.05), SolveStatus::Infeasible);
}

fn solved_bs_instance(seed: u64) -> (BsSubproblemData, starris::conic::BsSubproblem, starris::conic::ConicSolution) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, streams, p_t) = (3, 3, 0.1);
    let gs: Vec<CVec> = (0..4).map(|_| rand_vec(&mut rng, m, 2e-6)).collect();
    let stream_of = [0, 0, 1, 2];
    let beams = random_beams(&mut rng, streams, m, p_t);
    let pairs: Vec<(f64, f64)> = gs.iter().zip(stream_of).map(|(g, s)| pq(g, &beams, s)).collect();
    let aux = aux_at(&pairs);
    let data = BsSubproblemData {
        antennas: m,
        streams,
        users: gs
            .into_iter()
            .zip(stream_of)
            .zip(aux)
            .map(|((g, s), (a, e))| BsUser {
                g,
                terms: terms(s, 0.1, a, e),
            })
            .collect(),
        noise: NOISE,
        p_t,
    };
    let sub = build_bs_subproblem(&data).unwrap();
    let sol = solve(&sub.program, &settings()).unwrap();
    assert!(sol.is_usable(), "{:?}", sol.detail);
    (data, sub, sol)
}

#[test]
fn epigraph_is_tight_and_covariances_are_psd() {
    for seed in 10..14 {
        let (_, sub, sol) = solved_bs_instance(seed);
        for (_, c) in &sub.program.constraints {
            if let Constraint::RotatedCone { t, x, y } = c {
                let tv = sol.scalars[t.0];
                let xy = x.eval(&sol.psd, &sol.scalars) * y.eval(&sol.psd, &sol.scalars);
                assert!((tv * tv - xy).abs() <= 1e-6 * xy.max(1.0), "t^2={} xy={xy}", tv * tv);
            }
        }
        for w in sub.covariances(&sol) {
            let (vals, _) = hermitian_eig_desc(&w);
            assert!(vals[vals.len() - 1] >= -1e-7 * vals[0], "{vals:?}");
        }
    }
}

/// The relaxed optimum bounds the surrogate of every feasible rank-one point.
#[test]
fn bs_relaxation_bounds_rank_one_points() {
    for seed in 20..24 {
        let (data, sub, sol) = solved_bs_instance(seed);
        let bound = sub.surrogate(sol.objective);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut checked = 0;
        for _ in 0..300 {
            let budget = data.p_t * rng.gen_range(0.2..1.0);
            let beams = random_beams(&mut rng, data.streams, data.antennas, budget);
            let pairs: Vec<(f64, f64)> = data.users.iter().map(|u| pq(&u.g, &beams, u.terms.stream)).collect();
            let qos = pairs
                .iter()
                .zip(&data.users)
                .all(|(&(p, q), u)| (p / (q - p)).ln_1p() / std::f64::consts::LN_2 >= u.terms.r_min);
            if !qos {
                continue;
            }
            checked += 1;
            let (p, q): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let alpha: Vec<f64> = data.users.iter().map(|u| u.terms.alpha).collect();
            let eta: Vec<f64> = data.users.iter().map(|u| u.terms.eta).collect();
            let value = surrogate_objective(&p, &q, &alpha, &eta).unwrap();
            assert!(value <= bound + 1e-6 * bound.abs().max(1.0), "{value} > {bound}");
        }
        assert!(checked > 10);
    }
}

fn ris_data(rng: &mut ChaCha8Rng, counts: &[usize], antennas: usize) -> RisSubproblemData {
    let total: usize = counts.iter().sum();
    let k = counts.len();
    let beams = random_beams(rng, k + 1, antennas, 0.1);
    let mut users: Vec<RisUser> = (0..k)
        .map(|s| RisUser {
            path: RisPath::Transmission {
                surface: s,
                cascaded: rand_mat(rng, counts[s], antennas, 1e-6),
            },
            terms: terms(s, 0.0, 1.0, 1e6),
        })
        .collect();
    users.push(RisUser {
        path: RisPath::Reflection {
            stacked: rand_mat(rng, total + 1, antennas, 1e-6),
        },
        terms: terms(k, 0.0, 1.0, 1e6),
    });
    RisSubproblemData {
        element_counts: counts.to_vec(),
        antennas,
        beams,
        users,
        noise: NOISE,
        frozen_beta_t: None,
    }
}

fn count_constraints(program: &starris::conic::program::ConicProgram) -> (usize, usize) {
    let mut equal = 0;
    let mut fixed = 0;
    for (_, c) in &program.constraints {
        match c {
            Constraint::Linear { sense: starris::conic::Sense::Equal, .. } => equal += 1,
            Constraint::FixEntry { .. } => fixed += 1,
            _ => {}
        }
    }
    (equal, fixed)
}

#[test]
fn ris_program_for_two_16_element_surfaces() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let data = ris_data(&mut rng, &[16, 16], 5);
    let sub = build_ris_subproblem(&data).unwrap();
    assert_eq!(sub.psi.len(), 2);
    assert!(sub.psi.iter().all(|v| sub.program.psd[v.0].dim == 16));
    assert_eq!(sub.program.psd[sub.phi.0].dim, 33);
    // 32 coupling equalities and the homogenization corner
    assert_eq!(count_constraints(&sub.program), (32, 1));
}

#[test]
fn smallest_ris_program() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let data = ris_data(&mut rng, &[1], 1);
    let sub = build_ris_subproblem(&data).unwrap();
    assert_eq!(sub.program.psd[sub.psi[0].0].dim, 1);
    assert_eq!(sub.program.psd[sub.phi.0].dim, 2);
    assert_eq!(count_constraints(&sub.program), (1, 1));
}

/// A transmission user's terms involve only its own surface's matrix, so
/// zeroing another surface's data leaves them untouched.
#[test]
fn transmission_terms_depend_only_on_their_surface() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut data = ris_data(&mut rng, &[3, 2], 2);
    data.users.iter_mut().for_each(|u| u.terms.r_min = 0.3);
    let a = build_ris_subproblem(&data).unwrap();
    if let RisPath::Transmission { cascaded, .. } = &mut data.users[1].path {
        cascaded.fill(C64::new(0.0, 0.0));
    }
    let b = build_ris_subproblem(&data).unwrap();
    let find = |sub: &starris::conic::RisSubproblem, label: &str| {
        sub.program.constraints.iter().find(|(l, _)| l == label).map(|(_, c)| c.clone()).unwrap()
    };
    for label in ["epigraph0", "qos0"] {
        assert_eq!(find(&a, label), find(&b, label), "{label}");
    }
    if let Constraint::RotatedCone { x, .. } = find(&a, "epigraph0") {
        assert!(x.traces.iter().all(|(v, _)| *v == a.psi[0]));
    } else {
        panic!("epigraph0 is not a cone");
    }
}

/// Independent evaluation of a RIS candidate: surrogate at fixed
/// auxiliaries, from `v_t = conj(theta)`, `v_r = conj(phi[..N]) / conj(phi[N])`.
fn ris_candidate_value(data: &RisSubproblemData, v_t: &[CVec], v_r: &CVec) -> f64 {
    let (mut p, mut q, mut alpha, mut eta) = (vec![], vec![], vec![], vec![]);
    for u in &data.users {
        let g = match &u.path {
            RisPath::Transmission { surface, cascaded } => cascaded.transpose() * &v_t[*surface],
            RisPath::Reflection { stacked } => {
                let mut phi_conj = v_r.as_slice().to_vec();
                phi_conj.push(C64::new(1.0, 0.0));
                stacked.transpose() * CVec::from_vec(phi_conj)
            }
        };
        // `g` above is the row `g^H` stored as a column
        let g = g.map(|z| z.conj());
        let (pu, qu) = pq(&g, &data.beams, u.terms.stream);
        p.push(pu);
        q.push(qu);
        alpha.push(u.terms.alpha);
        eta.push(u.terms.eta);
    }
    surrogate_objective(&p, &q, &alpha, &eta).unwrap()
}

/// Project Gaussian draws onto the coupling set: rescale every element so
/// `|v_t|^2 + |v_r|^2 = 1`.
fn project(counts: &[usize], draws: &[CVec]) -> Option<(Vec<CVec>, CVec)> {
    let total: usize = counts.iter().sum();
    let phi = &draws[counts.len()];
    if phi[total].norm() < 1e-12 {
        return None;
    }
    let v_r_raw: CVec = phi.rows(0, total).map(|z| (z / phi[total]).conj());
    let mut v_t: Vec<CVec> = draws[..counts.len()].iter().map(|th| th.map(|z| z.conj())).collect();
    let mut v_r = v_r_raw.clone();
    let mut p = 0;
    for (k, &n) in counts.iter().enumerate() {
        for i in 0..n {
            let s = (v_t[k][i].norm_sqr() + v_r_raw[p].norm_sqr()).sqrt();
            if s < 1e-12 {
                v_t[k][i] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
                v_r[p] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
            } else {
                v_t[k][i] /= s;
                v_r[p] /= s;
            }
            p += 1;
        }
    }
    Some((v_t, v_r))
}

/// Desk-scale RIS instances at moderate SNR: the best of 200 randomized
/// candidates reaches 95% of the relaxed optimum.
#[test]
fn randomization_recovers_most_of_the_ris_relaxation() {
    for seed in 30..36 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts = [3usize];
        let mut data = ris_data(&mut rng, &counts, 2);
        // auxiliaries from an even split with random phases
        let v_t0: Vec<CVec> = counts
            .iter()
            .map(|&n| CVec::from_fn(n, |_, _| C64::from_polar(0.5f64.sqrt(), rng.gen_range(0.0..6.28))))
            .collect();
        let v_r0 = CVec::from_fn(3, |_, _| C64::from_polar(0.5f64.sqrt(), rng.gen_range(0.0..6.28)));
        let pairs: Vec<(f64, f64)> = data
            .users
            .iter()
            .map(|u| {
                let g = match &u.path {
                    RisPath::Transmission { surface, cascaded } => cascaded.transpose() * &v_t0[*surface],
                    RisPath::Reflection { stacked } => {
                        let mut phi_conj = v_r0.as_slice().to_vec();
                        phi_conj.push(C64::new(1.0, 0.0));
                        stacked.transpose() * CVec::from_vec(phi_conj)
                    }
                };
                pq(&g.map(|z| z.conj()), &data.beams, u.terms.stream)
            })
            .collect();
        for (u, (a, e)) in data.users.iter_mut().zip(aux_at(&pairs)) {
            u.terms.alpha = a;
            u.terms.eta = e;
        }
        let start = ris_candidate_value(&data, &v_t0, &v_r0);
        let sub = build_ris_subproblem(&data).unwrap();
        let sol = solve(&sub.program, &settings()).unwrap();
        assert!(sol.is_usable(), "{:?}", sol.detail);
        let relaxed = sub.surrogate(sol.objective);
        assert!(relaxed >= start - 1e-6 * start.abs(), "relaxed {relaxed} below the start {start}");

        let proj = |d: &[CVec]| project(&counts, d);
        let eval = |c: &(Vec<CVec>, CVec)| Some(ris_candidate_value(&data, &c.0, &c.1));
        let ctx = RandomizationContext {
            project: &proj,
            evaluate: &eval,
        };
        let best = gaussian_randomization(&sub.matrices(&sol), &ctx, 200, seed).unwrap().unwrap();
        assert!(relaxed > 0.0);
        assert!(best.value >= 0.95 * relaxed, "seed {seed}: {} vs relaxed {relaxed}", best.value);
        assert!(best.value <= relaxed + 1e-6 * relaxed);
    }
}
