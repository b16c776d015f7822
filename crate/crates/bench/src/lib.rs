//! Fixtures shared by the criterion benchmarks in `benches/`.

use fastvit_core::init::random_tensor;
use fastvit_core::{build_variant, Mode, Model, Tensor};

/// A preset with randomized statistics in the requested structure.
pub fn model(variant: &str, mode: Mode) -> Model {
    let mut m = build_variant(variant, 0).expect("known preset");
    m.randomize_statistics(1);
    match mode {
        Mode::Train => m,
        Mode::Inference => m.reparameterize().expect("fusable preset"),
    }
}

/// One image of `size` x `size`.
pub fn image(size: usize) -> Tensor {
    random_tensor([1, 3, size, size], 2)
}
