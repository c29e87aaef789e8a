//! Monotonic wall-clock helper.
//!
//! On wasm32 there is no usable `std::time::Instant`; time limits are then
//! effectively disabled and reported durations are zero.

#[cfg(not(target_arch = "wasm32"))]
mod imp {
    use std::sync::OnceLock;
    use std::time::Instant;

    static EPOCH: OnceLock<Instant> = OnceLock::new();

    pub fn now_secs() -> f64 {
        let epoch = EPOCH.get_or_init(Instant::now);
        epoch.elapsed().as_secs_f64()
    }
}

#[cfg(target_arch = "wasm32")]
mod imp {
    pub fn now_secs() -> f64 {
        0.0
    }
}

pub use imp::now_secs;

/// A started stopwatch; `elapsed` is zero on targets without a clock.
pub struct Stopwatch {
    start: f64,
}

impl Stopwatch {
    pub fn start() -> Self {
        Stopwatch { start: now_secs() }
    }

    pub fn elapsed_secs(&self) -> f64 {
        now_secs() - self.start
    }
}
