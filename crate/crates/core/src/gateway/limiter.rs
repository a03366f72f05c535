use parking_lot::{Condvar, Mutex};

/// Counting semaphore bounding concurrently outstanding backend calls.
#[derive(Debug)]
pub struct InFlightLimiter {
    bound: usize,
    state: Mutex<(usize, usize)>, // (current, max observed)
    freed: Condvar,
}

pub struct Permit<'a> {
    limiter: &'a InFlightLimiter,
}

impl InFlightLimiter {
    pub fn new(bound: usize) -> Self {
        assert!(bound >= 1);
        Self {
            bound,
            state: Mutex::new((0, 0)),
            freed: Condvar::new(),
        }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut s = self.state.lock();
        while s.0 >= self.bound {
            self.freed.wait(&mut s);
        }
        s.0 += 1;
        s.1 = s.1.max(s.0);
        Permit { limiter: self }
    }

    pub fn max_observed(&self) -> usize {
        self.state.lock().1
    }

    pub fn bound(&self) -> usize {
        self.bound
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut s = self.limiter.state.lock();
        s.0 -= 1;
        self.limiter.freed.notify_one();
    }
}
