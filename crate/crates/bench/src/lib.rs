//! Shared inputs for the benchmarks: the shipped scenarios and block
//! programs built at their starting points.

use starris::bcd::{block_subproblems, initialize_feasible, BcdConfig, Scheme};
use starris::conic::{BsSubproblemData, RisSubproblemData};
use starris::scenario::ScenarioSpec;

pub fn default_scenario() -> ScenarioSpec {
    ScenarioSpec::shipped_default()
}

pub fn small_scenario() -> ScenarioSpec {
    ScenarioSpec::from_toml_str(include_str!("../../../scenarios/small.scenario")).expect("shipped scenario parses")
}

/// The default scenario with `n` elements per surface.
pub fn default_with_elements(n: usize) -> ScenarioSpec {
    let mut s = default_scenario();
    s.star_ris.iter_mut().for_each(|r| r.element_count = n);
    s
}

/// BS and RIS block data at the proposed scheme's starting point.
pub fn block_data(scenario: &ScenarioSpec) -> (BsSubproblemData, RisSubproblemData) {
    let config = BcdConfig::from_scenario(scenario);
    let (beams, profiles) = initialize_feasible(scenario, &config, None)
        .expect("valid scenario")
        .expect("feasible start");
    block_subproblems(scenario, &config, Scheme::Proposed, &beams, &profiles).expect("block data")
}
