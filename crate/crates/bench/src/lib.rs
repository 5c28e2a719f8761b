//! Fixtures shared by the benchmarks.

use oppsim_core::trace::{generate_community_trace, CommunityParams};
use oppsim_core::{Scenario, SimParams, SimTime, StrategyKind};

/// A congested two-community hour: 2 × `nodes_per_group` nodes with brief
/// contacts and the default 30 MB buffers.
pub fn community_scenario(nodes_per_group: u32, strategy: StrategyKind, seed: u64) -> Scenario {
    let trace = generate_community_trace(&CommunityParams {
        groups: 2,
        nodes_per_group,
        intra_rate: 12.0,
        inter_rate: 1.0,
        mean_contact_duration: 0.1,
        duration: SimTime::from_secs(3600.0),
        seed,
    })
    .expect("fixture parameters are valid");
    Scenario::new(trace, strategy, SimParams::default(), seed)
}
