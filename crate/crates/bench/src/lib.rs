//! Fixed workloads shared by the benchmarks.

use rankpool_core::synth::{generate, SynthKind, SynthSpec};
use rankpool_core::FrameSequence;

/// One order-classes sequence of the given shape.
pub fn sequence(len: usize, dim: usize, seed: u64) -> FrameSequence {
    let spec = SynthSpec {
        kind: SynthKind::OrderClasses,
        classes: 2,
        count: 1,
        min_len: len,
        max_len: len,
        dim,
        noise: 0.1,
        seed,
    };
    generate(&spec).expect("valid spec").sequences.remove(0)
}
