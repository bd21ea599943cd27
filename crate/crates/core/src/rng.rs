//! Deterministic, splittable random streams.
//!
//! Every stochastic task in the crate draws from a [`StreamId`]: a 64-bit
//! state derived from the user seed by mixing in string labels and integer
//! indices with SplitMix64. Two streams with different derivation paths are
//! statistically independent for Monte Carlo purposes, and a stream's output
//! depends only on its path, never on how much randomness sibling streams
//! consumed. This is what makes datasets reproducible across thread counts
//! and keeps inner-simulation settings from perturbing outer draws.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(GOLDEN_GAMMA);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Identifier of a derived random stream. Cheap to copy; derivation is pure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamId {
    state: u64,
}

impl StreamId {
    /// Root stream for a user-supplied seed.
    pub fn root(seed: u64) -> Self {
        let mut s = seed ^ 0x5851_f42d_4c95_7f2d;
        let mixed = splitmix64(&mut s);
        StreamId { state: mixed }
    }

    /// Child stream for a named logical task ("outer", "inner", ...).
    pub fn label(&self, name: &str) -> Self {
        let mut s = self.state ^ fnv1a(name.as_bytes());
        let mixed = splitmix64(&mut s);
        StreamId { state: mixed }
    }

    /// Child stream for an integer index (path number, tree number, ...).
    pub fn index(&self, i: u64) -> Self {
        let mut s = self.state ^ i.wrapping_mul(GOLDEN_GAMMA) ^ 0x94d0_49bb_1331_11eb;
        let mixed = splitmix64(&mut s);
        StreamId { state: mixed }
    }

    /// The stream state as a plain u64, for APIs that take a bare seed.
    pub fn state_seed(&self) -> u64 {
        self.state
    }

    /// Materialize the stream as a ChaCha12 generator. The 256-bit key is
    /// expanded from the stream state with four SplitMix64 outputs.
    pub fn rng(&self) -> ChaCha12Rng {
        let mut s = self.state;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        }
        ChaCha12Rng::from_seed(key)
    }
}

/// One standard normal draw via the Marsaglia polar method.
///
/// Rejection-based, so the number of uniforms consumed varies per call;
/// callers that need stream stability own a dedicated stream per task.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen_range(-1.0..1.0);
        let v: f64 = rng.gen_range(-1.0..1.0);
        let s = u * u + v * v;
        if s > 0.0 && s < 1.0 {
            return u * (-2.0 * s.ln() / s).sqrt();
        }
    }
}

/// Fill `out` with independent standard normal draws.
pub fn fill_standard_normal<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for slot in out.iter_mut() {
        *slot = standard_normal(rng);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let a = StreamId::root(7).label("outer").index(3);
        let b = StreamId::root(7).label("outer").index(3);
        let mut ra = a.rng();
        let mut rb = b.rng();
        for _ in 0..16 {
            assert_eq!(ra.gen::<u64>(), rb.gen::<u64>());
        }
    }

    #[test]
    fn sibling_streams_differ() {
        let base = StreamId::root(7).label("outer");
        let mut r0 = base.index(0).rng();
        let mut r1 = base.index(1).rng();
        assert_ne!(r0.gen::<u64>(), r1.gen::<u64>());

        let mut la = StreamId::root(7).label("inner").rng();
        let mut lb = StreamId::root(7).label("outer").rng();
        assert_ne!(la.gen::<u64>(), lb.gen::<u64>());
    }

    #[test]
    fn normal_moments() {
        let mut rng = StreamId::root(42).label("normal-test").rng();
        let n = 200_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let z = standard_normal(&mut rng);
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        // 3 standard errors: se(mean) = 1/sqrt(n), se(var) ~ sqrt(2/n)
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 3.0 * (2.0 / n as f64).sqrt(), "var {var}");
    }

    #[test]
    fn normal_tail_mass() {
        let mut rng = StreamId::root(9).label("tail").rng();
        let n = 100_000;
        let above = (0..n)
            .filter(|_| standard_normal(&mut rng) > 1.6448536269514722)
            .count();
        let p = above as f64 / n as f64;
        // true mass 5%, 3 standard errors
        assert!((p - 0.05).abs() < 3.0 * (0.05_f64 * 0.95 / n as f64).sqrt(), "p {p}");
    }
}
