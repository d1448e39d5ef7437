//! Flush-to-zero for subnormal floats during training.
//!
//! Adam's second moment squares tiny gradients into the subnormal range, where
//! x86 arithmetic is several times slower. Inside a [`FlushDenormals`] scope
//! subnormal inputs and results are treated as zero on the current thread.

/// Restores the previous floating point mode when dropped.
pub struct FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    saved: u32,
}

#[cfg(target_arch = "x86_64")]
#[allow(deprecated)]
impl FlushDenormals {
    // MXCSR flush-to-zero (bit 15) and denormals-are-zero (bit 6)
    const FTZ_DAZ: u32 = 0x8040;

    pub fn enable() -> Self {
        use std::arch::x86_64::{_mm_getcsr, _mm_setcsr};
        // SAFETY: only the FTZ/DAZ bits change; exception masks and rounding
        // mode are preserved.
        unsafe {
            let saved = _mm_getcsr();
            _mm_setcsr(saved | Self::FTZ_DAZ);
            FlushDenormals { saved }
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[allow(deprecated)]
impl Drop for FlushDenormals {
    fn drop(&mut self) {
        // SAFETY: restores the value read in `enable`.
        unsafe { std::arch::x86_64::_mm_setcsr(self.saved) }
    }
}

#[cfg(not(target_arch = "x86_64"))]
impl FlushDenormals {
    pub fn enable() -> Self {
        FlushDenormals {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[cfg(target_arch = "x86_64")]
    fn subnormals_flush_inside_the_scope_only() {
        let tiny = std::hint::black_box(f32::MIN_POSITIVE);
        let half = std::hint::black_box(0.5f32);
        assert!(tiny * half > 0.0);
        {
            let _g = FlushDenormals::enable();
            assert_eq!(std::hint::black_box(tiny) * std::hint::black_box(half), 0.0);
        }
        assert!(std::hint::black_box(tiny) * std::hint::black_box(half) > 0.0);
    }
}
