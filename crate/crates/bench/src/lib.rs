//! Shared inputs for the kernel benchmarks.

use fluoroden::io::make_windows;
use fluoroden::nn::Tensor;
use fluoroden::{apply_dose_noise, generate_clean_sequence, DoseLevel, FrameSequence, PhantomSpec, TrainingWindow};
use ndarray::Array4;

/// A noisy 9-frame phantom sequence of the given size.
pub fn noisy_sequence(size: usize) -> FrameSequence {
    let spec = PhantomSpec {
        height: size,
        width: size,
        num_frames: 9,
        lesion_radii: vec![size as f64 / 16.0, size as f64 / 10.0],
        needle_length: size as f64 / 3.0,
        motion_amplitude: size as f64 / 32.0,
        ..Default::default()
    };
    let clean = generate_clean_sequence(&spec, 7).expect("valid spec");
    apply_dose_noise(&clean, DoseLevel::low(), 8).expect("valid dose")
}

pub fn first_window(seq: &FrameSequence) -> TrainingWindow {
    make_windows(seq).expect("long enough").swap_remove(0)
}

/// Deterministic pseudo-random tensor in `[0, 1)`.
pub fn tensor(shape: (usize, usize, usize, usize)) -> Tensor {
    let mut state = 0x2545_f491_4f6c_dd1du64;
    Array4::from_shape_simple_fn(shape, || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64
    })
}
