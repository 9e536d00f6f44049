//! Deterministic, splittable random streams.
//!
//! Every Monte-Carlo consumer in this crate derives its own [`Stream`] from a
//! [`StreamKey`] of `(global_seed, sample_index, purpose_tag)`. Streams never
//! share state, so splitting work across threads cannot change a single bit
//! of any result.
//!
//! The generator is SplitMix64. A stream's seed is the first SplitMix64
//! output of `global_seed ^ mix(sample_index, purpose_tag)`, where `mix`
//! runs both words through the SplitMix64 output finalizer.
//!
//! ```
//! use cocal::rng::SplitMix64;
//!
//! let mut g = SplitMix64::new(0);
//! assert_eq!(g.next_u64(), 0xE220_A839_7B1D_CDAF);
//! ```

use thiserror::Error;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// 2^-53, the spacing of the 53-bit uniform grid on [0, 1).
const UNIT_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Purpose tags keep the streams of different subsystems apart even when
/// they share a seed and a sample index.
pub mod tags {
    /// Logit perturbation noise in consistency calibration.
    pub const PERTURBATION: u64 = 0x6E6F_6973_655F_6C67;
    /// Fisher–Yates shuffle used by dataset splitting.
    pub const SHUFFLE: u64 = 0x7368_7566_666C_6531;
    /// Toy world training-set draws.
    pub const TOY_TRAIN: u64 = 0x746F_795F_7472_6E31;
    /// Toy world test-set draws.
    pub const TOY_TEST: u64 = 0x746F_795F_7473_7431;
    /// Data-space perturbations of the toy consistency estimator.
    pub const TOY_PERTURBATION: u64 = 0x746F_795F_7074_6231;
    /// Synthetic overconfident logit sets.
    pub const SYNTHETIC: u64 = 0x7379_6E74_685F_6C67;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RngError {
    #[error("invalid range: {0}")]
    InvalidRange(String),
}

/// The SplitMix64 generator (Steele, Lea & Flood).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        finalize(self.state)
    }
}

/// SplitMix64 output function.
#[inline]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mix(sample_index: u64, purpose_tag: u64) -> u64 {
    finalize(
        sample_index.wrapping_mul(GOLDEN_GAMMA) ^ finalize(purpose_tag.wrapping_add(GOLDEN_GAMMA)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub global_seed: u64,
    pub sample_index: u64,
    pub purpose_tag: u64,
}

impl StreamKey {
    pub fn new(global_seed: u64, sample_index: u64, purpose_tag: u64) -> Self {
        Self {
            global_seed,
            sample_index,
            purpose_tag,
        }
    }

    /// Seed of the SplitMix64 sequence this key opens.
    pub fn stream_seed(&self) -> u64 {
        SplitMix64::new(self.global_seed ^ mix(self.sample_index, self.purpose_tag)).next_u64()
    }

    pub fn stream(&self) -> Stream {
        Stream::from_seed(self.stream_seed())
    }
}

/// A single-consumer random stream with real-valued samplers on top of
/// SplitMix64.
#[derive(Debug, Clone)]
pub struct Stream {
    gen: SplitMix64,
    spare_normal: Option<f64>,
}

impl Stream {
    pub fn from_seed(seed: u64) -> Self {
        Self {
            gen: SplitMix64::new(seed),
            spare_normal: None,
        }
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.gen.next_u64()
    }

    /// Uniform on [0, 1) from the top 53 bits of the next output.
    #[inline]
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * UNIT_53
    }

    /// Uniform on (0, 1): a zero draw becomes 2^-53 so `ln` stays finite.
    #[inline]
    fn next_unit_nonzero(&mut self) -> f64 {
        let bits = self.next_u64() >> 11;
        if bits == 0 {
            UNIT_53
        } else {
            bits as f64 * UNIT_53
        }
    }

    /// Uniform on `[a, b)`.
    pub fn uniform(&mut self, a: f64, b: f64) -> Result<f64, RngError> {
        if !(a < b) || !a.is_finite() || !b.is_finite() {
            return Err(RngError::InvalidRange(format!(
                "uniform needs finite a < b, got [{a}, {b})"
            )));
        }
        Ok(self.uniform_unchecked(a, b))
    }

    #[inline]
    pub(crate) fn uniform_unchecked(&mut self, a: f64, b: f64) -> f64 {
        let x = a + (b - a) * self.next_unit();
        // a + (b - a) * u can round up to b when u is within one ulp of 1
        if x < b {
            x
        } else {
            b.next_down()
        }
    }

    /// Normal draw with mean `mean` and standard deviation `sigma`.
    ///
    /// Box–Muller on two uniform draws; the second variate of each pair is
    /// cached and returned by the next call. `sigma == 0` returns `mean`
    /// without touching the stream.
    pub fn gaussian(&mut self, mean: f64, sigma: f64) -> Result<f64, RngError> {
        if !(sigma >= 0.0) || !sigma.is_finite() || !mean.is_finite() {
            return Err(RngError::InvalidRange(format!(
                "gaussian needs finite sigma >= 0, got {sigma}"
            )));
        }
        if sigma == 0.0 {
            return Ok(mean);
        }
        Ok(mean + sigma * self.standard_normal())
    }

    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.next_unit_nonzero();
        let u2 = self.next_unit();
        let radius = (-2.0 * u1.ln()).sqrt();
        let (sin, cos) = (std::f64::consts::TAU * u2).sin_cos();
        self.spare_normal = Some(radius * sin);
        radius * cos
    }

    /// Uniform integer in `0..bound` by rejection, free of modulo bias.
    pub fn below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "below() needs a positive bound");
        let threshold = bound.wrapping_neg() % bound;
        loop {
            let x = self.next_u64();
            if x >= threshold {
                return x % bound;
            }
        }
    }
}
