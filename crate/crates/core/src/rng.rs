//! Counter-style random streams.
//!
//! A stream is a ChaCha8 generator keyed by a 64-bit seed and positioned on a
//! 64-bit stream id, so every pixel or measurement setting draws from its own
//! sequence regardless of which thread evaluates it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{Error, Result};

pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

/// SplitMix64 finalizer; used to derive child seeds.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix(seed ^ mix(tag))
}

/// FNV-1a, for turning measurement labels into stream ids.
pub fn tag(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

pub const MAX_POISSON_MEAN: f64 = 1e12;

pub fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> Result<u64> {
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(Error::InvalidParameter(format!("Poisson mean {mean}")));
    }
    if mean > MAX_POISSON_MEAN {
        return Err(Error::MeanOverflow(mean));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(d.sample(rng) as u64)
}
