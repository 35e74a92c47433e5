//! Allocator tuning for the dense hot loops.
//!
//! Every forward pass allocates several `d x d` matrices. With glibc's default
//! settings those land above the mmap threshold or get trimmed back to the
//! OS after each sample, so each pass pays for fresh page faults. Raising
//! both thresholds lets freed blocks be reused; it roughly halves step time
//! at the default graph size.

use std::sync::Once;

static TUNE: Once = Once::new();

/// Applies the tuning once per process. A no-op off glibc.
pub fn retain_freed_memory() {
    TUNE.call_once(|| {
        #[cfg(all(target_os = "linux", target_env = "gnu"))]
        {
            use std::os::raw::c_int;
            extern "C" {
                fn mallopt(param: c_int, value: c_int) -> c_int;
            }
            const M_TRIM_THRESHOLD: c_int = -1;
            const M_MMAP_THRESHOLD: c_int = -3;
            // SAFETY: mallopt only adjusts allocator parameters; both values
            // are within the documented ranges.
            unsafe {
                mallopt(M_MMAP_THRESHOLD, 32 << 20);
                mallopt(M_TRIM_THRESHOLD, 256 << 20);
            }
        }
    });
}
