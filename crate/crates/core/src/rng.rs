//! Seeded random streams.
//!
//! Every random draw in the crate comes from a `ChaCha8Rng` keyed by the
//! user seed, with the 64-bit stream id split as
//!
//! ```text
//! bits 56..64  purpose (dataset, process noise, measurement noise, sampling, ...)
//! bits 32..56  tau0 grid index
//! bits  0..32  trial index
//! ```
//!
//! so streams for different `(purpose, tau0, trial)` cells never overlap and
//! a cell can be regenerated without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Dataset = 1,
    ProcessNoise = 2,
    MeasurementNoise = 3,
    SetSampling = 4,
    Probe = 5,
}

pub fn stream(seed: u64, purpose: Purpose, tau_index: u32, trial: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let id = ((purpose as u64) << 56) | (((tau_index as u64) & 0x00ff_ffff) << 32) | trial as u64;
    rng.set_stream(id);
    rng
}
