//! Shared fixtures for the kernel benchmarks.

use paresseg_core::data::{synth_dataset, CaseRecord, PhantomSpec};
use paresseg_core::graph::TensorData;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform random tensor in [-1, 1), seeded for stable run-to-run inputs.
pub fn seeded_tensor(shape: &[usize], seed: u64) -> TensorData {
    let n: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TensorData::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .expect("shape matches payload")
}

/// One small synthetic case for whole-volume inference timing.
pub fn micro_case() -> CaseRecord {
    let spec = PhantomSpec {
        cases: 1,
        dims: [16, 40, 40],
        tumor_count: (1, 1),
        tumor_radius: (3.0, 5.0),
        art_only_blob_count: (1, 1),
        ..PhantomSpec::default()
    };
    synth_dataset(&spec, 17)
        .expect("phantom generation succeeds")
        .remove(0)
}
