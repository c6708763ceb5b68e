//! Float math for `no_std` builds, backed by libm.

/// Extension trait supplying the `f64` math methods that live in `std`.
///
/// In test builds the inherent `std` methods shadow these (both are
/// correctly rounded for the operations used here), which is why the
/// methods count as unused there.
#[cfg_attr(test, allow(dead_code))]
pub(crate) trait FloatExt {
    fn sqrt(self) -> f64;
    fn ln(self) -> f64;
    fn exp(self) -> f64;
    fn sin(self) -> f64;
    fn floor(self) -> f64;
    fn hypot(self, other: f64) -> f64;
    fn max(self, other: f64) -> f64;
    fn min(self, other: f64) -> f64;
}

impl FloatExt for f64 {
    #[inline]
    fn sqrt(self) -> f64 {
        libm::sqrt(self)
    }
    #[inline]
    fn ln(self) -> f64 {
        libm::log(self)
    }
    #[inline]
    fn exp(self) -> f64 {
        libm::exp(self)
    }
    #[inline]
    fn sin(self) -> f64 {
        libm::sin(self)
    }
    #[inline]
    fn floor(self) -> f64 {
        libm::floor(self)
    }
    #[inline]
    fn hypot(self, other: f64) -> f64 {
        libm::hypot(self, other)
    }
    #[inline]
    fn max(self, other: f64) -> f64 {
        if self > other {
            self
        } else {
            other
        }
    }
    #[inline]
    fn min(self, other: f64) -> f64 {
        if self < other {
            self
        } else {
            other
        }
    }
}

/// Deterministic pseudo-random stream (splitmix64) for start vectors.
#[derive(Clone)]
pub(crate) struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in (-0.5, 0.5).
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }
}
