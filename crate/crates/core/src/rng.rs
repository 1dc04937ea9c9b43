//! Counter-based random substreams.
//!
//! Every Gaussian draw is keyed by `(seed, iteration, layer, role, index)` so
//! results do not depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Identifies one independent stream of standard normals.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub seed: u64,
    pub iteration: u64,
    pub layer: u64,
    pub role: u64,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self { seed, iteration: 0, layer: 0, role: 0 }
    }

    pub fn iteration(self, iteration: u64) -> Self {
        Self { iteration, ..self }
    }

    pub fn layer(self, layer: u64) -> Self {
        Self { layer, ..self }
    }

    pub fn role(self, role: u64) -> Self {
        Self { role, ..self }
    }

    /// RNG for the `index`-th draw of this stream.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut h = splitmix64(self.seed);
        for part in [self.iteration, self.layer, self.role, index] {
            h = splitmix64(h ^ part.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        }
        ChaCha8Rng::seed_from_u64(h)
    }

    /// Fill `out` with standard normals from draw `index`.
    pub fn fill_normal(&self, index: u64, out: &mut [f64]) {
        let mut rng = self.rng(index);
        for v in out.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    }
}

pub(crate) const ROLE_FORWARD: u64 = 1;
pub(crate) const ROLE_BACKWARD: u64 = 2;
