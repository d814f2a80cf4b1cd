//! Pinned values from the first successful runs, and oracle fixture replay.

use starris::bcd::{initialize_feasible, BcdConfig};
use starris::geometry::build_channel_set;
use starris::oracle::{check_fixture, OracleFixture};
use starris::rate::evaluate;
use starris::scenario::ScenarioSpec;
use std::path::Path;

/// Sum rate of the default scenario's starting point, seed 2024.
const DEFAULT_INITIAL_SUM_RATE: f64 = 14.647484069167;

#[test]
fn default_scenario_starts_feasible() {
    let s = ScenarioSpec::shipped_default();
    let (beams, profiles) = initialize_feasible(&s, &BcdConfig::from_scenario(&s), None)
        .unwrap()
        .expect("feasible start");
    let report = evaluate(&s, &build_channel_set(&s, s.seed).unwrap(), &profiles, &beams).unwrap();
    assert!(report.users.iter().all(|u| u.margin >= 0.0));
    assert!((report.sum_rate - DEFAULT_INITIAL_SUM_RATE).abs() <= 1e-9 * DEFAULT_INITIAL_SUM_RATE);
}

#[test]
fn oracle_fixtures_replay() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("test-data/oracle");
    let mut n = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let check = check_fixture(&OracleFixture::load(&path).unwrap()).unwrap();
        assert!(check.passed(), "{}: {check:?}", path.display());
        n += 1;
    }
    assert!(n >= 3);
}
