//! Finite-difference gradient checks of every layer and architecture.

mod common;

use common::*;
use lobforge::models::ArchKind;

#[test]
fn layers_match_finite_differences() {
    for seed in 0..5 {
        for (name, r) in [
            ("conv2d", conv_check(seed)),
            ("maxpool2d", maxpool_check(seed)),
            ("dense", dense_check(seed)),
            ("lstm_step", lstm_step_check(seed)),
            ("mse_loss", mse_check(seed)),
        ] {
            assert!(r.max_rel_error < LAYER_TOL, "{name} seed {seed}: {r:?}");
        }
    }
}

#[test]
fn architectures_match_finite_differences() {
    for kind in [ArchKind::SimpleCnn, ArchKind::SimpleCnn2d, ArchKind::Cnn2Lstm, ArchKind::CnnModel2d] {
        for seed in 0..3 {
            let r = arch_check(kind, seed);
            assert!(r.max_rel_error < NET_TOL, "{kind} seed {seed}: {r:?}");
        }
    }
}
