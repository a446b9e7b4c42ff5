use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct ConcurrencyGate {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
}

/// Held while a request is in flight.
#[derive(Debug)]
pub struct GatePermit<'a> {
    gate: &'a ConcurrencyGate,
}

impl ConcurrencyGate {
    /// A gate admitting `limit` holders at once; 0 means unbounded.
    pub fn new(limit: usize) -> Self {
        Self { limit, in_flight: Mutex::new(0), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> GatePermit<'_> {
        let mut in_flight = self.in_flight.lock().expect("gate poisoned");
        while self.limit > 0 && *in_flight >= self.limit {
            in_flight = self.freed.wait(in_flight).expect("gate poisoned");
        }
        *in_flight += 1;
        GatePermit { gate: self }
    }

    pub fn in_flight(&self) -> usize {
        *self.in_flight.lock().expect("gate poisoned")
    }
}

impl Drop for GatePermit<'_> {
    fn drop(&mut self) {
        let mut in_flight = self.gate.in_flight.lock().expect("gate poisoned");
        *in_flight -= 1;
        self.gate.freed.notify_one();
    }
}

/// Sliding-window limiter: at most `limit` acquisitions per `window`.
#[derive(Debug)]
pub struct RateLimiter {
    limit: usize,
    window: Duration,
    stamps: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    /// `limit` of 0 disables limiting.
    pub fn new(limit: usize, window: Duration) -> Self {
        Self { limit, window, stamps: Mutex::new(VecDeque::new()) }
    }

    pub fn per_minute(limit: usize) -> Self {
        Self::new(limit, Duration::from_secs(60))
    }

    /// Blocks until a slot is free, then takes it.
    pub fn acquire(&self) {
        if self.limit == 0 {
            return;
        }
        loop {
            let wait = {
                let mut stamps = self.stamps.lock().expect("limiter poisoned");
                let now = Instant::now();
                while stamps.front().is_some_and(|t| now.duration_since(*t) >= self.window) {
                    stamps.pop_front();
                }
                if stamps.len() < self.limit {
                    stamps.push_back(now);
                    return;
                }
                self.window - now.duration_since(*stamps.front().expect("non-empty when full"))
            };
            std::thread::sleep(wait);
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use super::*;

    #[test]
    fn gate_bounds_concurrency() {
        let gate = Arc::new(ConcurrencyGate::new(2));
        let peak = Arc::new(AtomicUsize::new(0));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let gate = gate.clone();
                let peak = peak.clone();
                s.spawn(move || {
                    let _permit = gate.acquire();
                    peak.fetch_max(gate.in_flight(), Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(gate.in_flight(), 0);
    }

    #[test]
    fn limiter_delays_past_budget() {
        let limiter = RateLimiter::new(2, Duration::from_millis(60));
        let start = Instant::now();
        limiter.acquire();
        limiter.acquire();
        assert!(start.elapsed() < Duration::from_millis(50));
        limiter.acquire();
        assert!(start.elapsed() >= Duration::from_millis(60));
    }

    #[test]
    fn zero_limit_is_unbounded() {
        let limiter = RateLimiter::per_minute(0);
        for _ in 0..1000 {
            limiter.acquire();
        }
    }
}
