//! Time sources for the emulator.
//!
//! In virtual mode every thread carries its own notion of "now"; device
//! operations start no earlier than the caller's clock and move it forward to
//! their completion time. Benchmark drivers set the clock explicitly for each
//! simulated client before issuing requests on its behalf.

use std::cell::Cell;
use std::time::{Duration, Instant};

/// Nanoseconds on the simulated (or wall-clock) timeline.
pub type Nanos = u64;

thread_local! {
    static NOW: Cell<Nanos> = const { Cell::new(0) };
}

/// The calling thread's virtual time.
pub fn now() -> Nanos {
    NOW.with(|c| c.get())
}

/// Sets the calling thread's virtual time.
pub fn set_now(t: Nanos) {
    NOW.with(|c| c.set(t));
}

/// Moves the calling thread's virtual time forward to `t` (never backwards).
pub fn advance_to(t: Nanos) {
    NOW.with(|c| {
        if t > c.get() {
            c.set(t)
        }
    });
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeMode {
    /// Deterministic latency accounting, no sleeping.
    #[default]
    Virtual,
    /// Device operations actually take their configured latency.
    Realtime,
}

impl std::str::FromStr for TimeMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "virtual" => Ok(TimeMode::Virtual),
            "realtime" => Ok(TimeMode::Realtime),
            other => Err(format!("unknown time mode `{other}`")),
        }
    }
}

/// A clock bound to a time mode: thread-local virtual time, or wall time
/// elapsed since the clock was created.
#[derive(Debug, Clone, Copy)]
pub struct Clock {
    mode: TimeMode,
    origin: Instant,
}

impl Clock {
    pub fn new(mode: TimeMode) -> Self {
        Clock { mode, origin: Instant::now() }
    }

    pub fn mode(&self) -> TimeMode {
        self.mode
    }

    pub fn now(&self) -> Nanos {
        match self.mode {
            TimeMode::Virtual => now(),
            TimeMode::Realtime => self.origin.elapsed().as_nanos() as Nanos,
        }
    }
}

pub fn nanos(d: Duration) -> Nanos {
    d.as_nanos() as Nanos
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn advance_never_moves_backwards() {
        set_now(100);
        advance_to(50);
        assert_eq!(now(), 100);
        advance_to(150);
        assert_eq!(now(), 150);
    }
}
