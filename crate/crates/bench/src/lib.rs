//! Fixtures shared by the benchmarks.

use spiketrack_core::simulator::{make_mc_bc_scenario, ScenarioSpec};
use spiketrack_core::SyntheticDataset;

/// Default panel, shortened to `mc_bins` + `bc_bins`.
pub fn dataset(mc_bins: usize, bc_bins: usize, seed: u64) -> SyntheticDataset {
    let spec = ScenarioSpec {
        mc_bins,
        bc_bins,
        ..ScenarioSpec::default()
    };
    make_mc_bc_scenario(&spec, seed).expect("default scenario is valid")
}
