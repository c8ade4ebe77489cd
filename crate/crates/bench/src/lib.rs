//! Deterministic inputs shared by the benchmarks.

use burstdof_core::burst::{extract_burst, sample_trajectory};
use burstdof_core::models::{channel_stack_tensor, Bpn, BpnConfig};
use burstdof_core::ndgrad::Tensor;
use burstdof_core::scene::{generate_dataset, Scene};

/// One random scene of `size x size` pixels.
pub fn scene(size: usize) -> Scene {
    generate_dataset(1, size, 42).expect("scene").remove(0)
}

/// Green-channel burst stack `[1, 9, size, size]` refocused at alpha 1.
pub fn burst_stack(size: usize) -> Tensor {
    let s = scene(size);
    let traj = sample_trajectory(9, 9, 42, true).expect("trajectory");
    let burst = extract_burst(&s.light_field, &traj, 1.0).expect("burst");
    channel_stack_tensor(&burst, 1).expect("stack")
}

/// Freshly initialized default BPN.
pub fn bpn() -> Bpn {
    Bpn::new(BpnConfig::default(), 42).expect("bpn")
}

/// Deterministic pseudo-random tensor with values in `[-1, 1)`.
pub fn tensor(shape: &[usize], seed: u64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let data = (0..n)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}
