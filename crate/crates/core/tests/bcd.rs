use starris::bcd::{
    initialize_feasible, rate_upper_bound, run_all_schemes, run_scheme, run_scheme_from, BcdConfig, BlockOutcome,
    Scheme, Termination, WarmStart,
};
use starris::geometry::build_channel_set;
use starris::oracle::OracleFixture;
use starris::profile::validate_es;
use starris::rate::BeamformerSet;
use starris::scenario::{load_scenario, ScenarioSpec};
use std::path::Path;

fn small() -> ScenarioSpec {
    load_scenario(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/small.scenario")).unwrap()
}

fn fixture(name: &str) -> OracleFixture {
    OracleFixture::load(Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("test-data/oracle/{name}.json"))).unwrap()
}

fn config(s: &ScenarioSpec) -> BcdConfig {
    BcdConfig::from_scenario(s)
}

#[test]
fn scheme_names_round_trip() {
    for s in Scheme::ALL {
        assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        assert_eq!(s.to_string(), s.name());
        assert_eq!(serde_json::to_value(s).unwrap(), s.name());
    }
    assert!("fixed_46".parse::<Scheme>().is_err());
}

#[test]
fn infinite_epsilon_stops_after_one_iteration() {
    let s = small();
    let mut c = config(&s);
    c.epsilon = f64::INFINITY;
    let r = run_scheme(&s, &c, Scheme::Fixed55).unwrap();
    assert_eq!(r.iterations(), 1);
    assert_eq!(r.termination, Termination::Converged);
}

/// One antenna, one user, direct path only: the optimum is full power and
/// the closed-form capacity, reached right away.
#[test]
fn single_user_reaches_capacity_immediately() {
    let f = fixture("direct_single_user");
    let capacity = f.closed_form.unwrap();
    let r = run_scheme(&f.scenario, &config(&f.scenario), Scheme::Proposed).unwrap();
    assert_eq!(r.termination, Termination::Converged);
    assert!(r.iterations() <= 2, "{} iterations", r.iterations());
    assert!((r.report.sum_rate - capacity).abs() <= 1e-6 * capacity);
}

#[test]
fn huge_budget_makes_the_initializer_feasible() {
    let mut s = fixture("single_element_transmission").scenario;
    s.p_t_watts = 1e3;
    let start = initialize_feasible(&s, &config(&s), None).unwrap();
    assert!(start.is_ok());
}

#[test]
fn threshold_above_capacity_reports_infeasibility() {
    let f = fixture("direct_single_user");
    let capacity = f.closed_form.unwrap();
    let mut s = f.scenario.clone();
    s.reflection_users[0].r_min = capacity + 0.5;
    let c = config(&s);
    let report = initialize_feasible(&s, &c, None).unwrap().unwrap_err();
    assert!(!report.binding_users.is_empty());
    let r = run_scheme(&s, &c, Scheme::Proposed).unwrap();
    assert_eq!(r.termination, Termination::Infeasible);
    assert!(r.infeasibility.is_some());
}

#[test]
fn trace_is_monotone_bounded_and_tight() {
    let s = small();
    let c = config(&s);
    let bound = rate_upper_bound(&s, &build_channel_set(&s, s.seed).unwrap()).unwrap();
    for r in run_all_schemes(&s, &c, &[]).unwrap() {
        assert_ne!(r.termination, Termination::Infeasible, "{}", r.scheme);
        let mut prev = r.initial_sum_rate;
        for it in &r.trace {
            assert!(it.objective >= prev - 1e-7 * prev.abs(), "{}: {} after {prev}", r.scheme, it.objective);
            assert!(it.objective <= bound);
            assert!((it.objective - it.sum_rate).abs() <= 1e-9 * it.sum_rate.abs());
            for b in [&it.bs, &it.ris] {
                if b.outcome == BlockOutcome::Accepted {
                    assert!(b.recovered_rate.unwrap() >= b.rate_before);
                }
            }
            prev = it.objective;
        }
        assert!(r.trace.last().unwrap().relative_change <= c.epsilon || r.termination == Termination::MaxIters);
    }
}

#[test]
fn outputs_satisfy_the_constraints() {
    let s = small();
    let results = run_all_schemes(&s, &config(&s), &[]).unwrap();
    for r in &results {
        assert!(r.beams.total_power() <= s.p_t_watts * (1.0 + 1e-9));
        for p in &r.profiles {
            assert!(validate_es(p, 1e-6).is_ok());
        }
        assert!(r.report.users.iter().all(|u| u.margin >= -1e-6), "{}", r.scheme);
        if let Some(kind) = r.scheme.baseline() {
            for (n, b) in r.profiles[0].beta_t().iter().enumerate() {
                assert!((b - kind.beta_t(n)).abs() <= 1e-9);
            }
        }
    }
    let proposed = results.iter().find(|r| r.scheme == Scheme::Proposed).unwrap();
    for r in &results {
        assert!(proposed.report.sum_rate >= r.report.sum_rate - 1e-4, "{} beats proposed", r.scheme);
    }
}

#[test]
fn identical_inputs_give_identical_traces() {
    let s = small();
    let c = config(&s);
    let a = run_scheme(&s, &c, Scheme::Fixed37).unwrap();
    let b = run_scheme(&s, &c, Scheme::Fixed37).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.beams, b.beams);
    assert_eq!(a.profiles, b.profiles);
}

#[test]
fn inadmissible_warm_starts_are_skipped() {
    let s = small();
    let c = config(&s);
    let good = run_scheme(&s, &c, Scheme::Fixed55).unwrap();
    let wrong_shape = WarmStart {
        label: "wrong_shape".into(),
        beams: BeamformerSet::zeros(1, 2),
        profiles: good.profiles.clone(),
    };
    let over_budget = WarmStart {
        label: "over_budget".into(),
        beams: good.beams.scaled(2.0),
        profiles: good.profiles.clone(),
    };
    // proposed amplitudes are not the frozen fixed_37 ones
    let r = run_scheme_from(&s, &c, Scheme::Fixed37, &[wrong_shape, over_budget, WarmStart::from_result(&good)]).unwrap();
    assert_eq!(r.starts.len(), 1);
    assert_eq!(r.starts[0].origin, "initializer");

    let r = run_scheme_from(&s, &c, Scheme::Fixed55, &[WarmStart::from_result(&good)]).unwrap();
    assert_eq!(r.starts.len(), 2);
    assert!(r.report.sum_rate >= good.report.sum_rate - 1e-9);
}
