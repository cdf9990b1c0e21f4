//! Shared fixtures for the benchmark harness.

use reconstruct_core::dataset::{synthesize_scene, Dataset, SceneTruth, SyntheticRoomSpec};

/// The drifted 4 × 3 × 2.5 m box room used throughout the benches.
pub fn drifted_room() -> (Dataset, SceneTruth) {
    let mut spec = SyntheticRoomSpec::box_room(4.0, 3.0, 2.5);
    spec.noise_sigma = 0.005;
    spec.drift_trans_sigma = 0.02;
    spec.drift_rot_sigma = 0.5f64.to_radians();
    spec.seed = 1;
    synthesize_scene(&spec).expect("valid room")
}

/// A Potts problem on a chain of `n` points with `labels` labels and
/// deterministic pseudo-random unaries.
pub fn chain_potts(n: usize, labels: usize) -> reconstruct_core::planes::PottsProblem {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    };
    reconstruct_core::planes::PottsProblem {
        unary: (0..n).map(|_| (0..labels).map(|_| next()).collect()).collect(),
        edges: (1..n).map(|i| (i - 1, i, 0.3)).collect(),
        label_count: labels,
    }
}
