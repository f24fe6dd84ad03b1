use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::Scheme;

/// An `f64` stored as its bit pattern so single elements can be read and
/// written atomically without a lock.
#[derive(Debug, Default)]
#[repr(transparent)]
pub struct AtomicF64(AtomicU64);

impl AtomicF64 {
    pub fn new(v: f64) -> Self {
        AtomicF64(AtomicU64::new(v.to_bits()))
    }

    #[inline]
    pub fn load(&self, order: Ordering) -> f64 {
        f64::from_bits(self.0.load(order))
    }

    #[inline]
    pub fn store(&self, v: f64, order: Ordering) {
        self.0.store(v.to_bits(), order)
    }

    /// Atomic `self += delta` via a compare-exchange loop; returns the old value.
    #[inline]
    pub fn fetch_add(&self, delta: f64, order: Ordering) -> f64 {
        let mut cur = self.0.load(Ordering::Relaxed);
        loop {
            let new = (f64::from_bits(cur) + delta).to_bits();
            match self.0.compare_exchange_weak(cur, new, order, Ordering::Relaxed) {
                Ok(old) => return f64::from_bits(old),
                Err(actual) => cur = actual,
            }
        }
    }
}

#[derive(Debug)]
struct WriterState {
    /// `Σ u_m` over the updates applied so far this epoch (Option 2 under locks).
    running_sum: Option<Vec<f64>>,
}

/// The iterate `u` in shared memory plus the global update counter `m`.
///
/// Elements are individually atomic, so uncoordinated readers never see a torn
/// scalar but may see a vector whose elements have different ages. The writer
/// lock serializes updates under the locked schemes and also guards reads under
/// [`Scheme::ConsistentLock`].
#[derive(Debug)]
pub struct SharedState {
    u: Vec<AtomicF64>,
    updates: AtomicU64,
    writer: Mutex<WriterState>,
}

impl SharedState {
    pub fn new(w: &[f64]) -> Self {
        SharedState {
            u: w.iter().map(|&v| AtomicF64::new(v)).collect(),
            updates: AtomicU64::new(0),
            writer: Mutex::new(WriterState { running_sum: None }),
        }
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    /// Starts a new epoch at `w`: resets the counter and, if asked, the running sum.
    pub fn reset(&mut self, w: &[f64], track_sum: bool) {
        assert_eq!(w.len(), self.u.len());
        for (cell, &v) in self.u.iter().zip(w) {
            cell.store(v, Ordering::Relaxed);
        }
        *self.updates.get_mut() = 0;
        let writer = self.writer.get_mut().expect("shared state lock poisoned");
        writer.running_sum = track_sum.then(|| vec![0.0; w.len()]);
    }

    pub fn updates(&self) -> u64 {
        self.updates.load(Ordering::Acquire)
    }

    /// Copies `u` out without coordination.
    pub fn load(&self) -> Vec<f64> {
        self.u.iter().map(|c| c.load(Ordering::Relaxed)).collect()
    }

    pub fn take_running_sum(&mut self) -> Option<Vec<f64>> {
        self.writer
            .get_mut()
            .expect("shared state lock poisoned")
            .running_sum
            .take()
    }

    /// Copies the iterate into `out` following the scheme's read contract and
    /// returns the read stamp: the update count observed when the read began.
    pub fn read(&self, scheme: Scheme, out: &mut [f64]) -> u64 {
        match scheme {
            Scheme::ConsistentLock => {
                let _guard = self.writer.lock().expect("shared state lock poisoned");
                let stamp = self.updates.load(Ordering::Relaxed);
                self.copy_into(out);
                stamp
            }
            Scheme::InconsistentLock | Scheme::LockFree => {
                let stamp = self.updates.load(Ordering::Acquire);
                self.copy_into(out);
                stamp
            }
        }
    }

    #[inline]
    fn copy_into(&self, out: &mut [f64]) {
        for (o, c) in out.iter_mut().zip(&self.u) {
            *o = c.load(Ordering::Relaxed);
        }
    }

    /// Applies `u ← u + delta` under the scheme's write contract and returns
    /// the index `m` of the applied update.
    pub fn write(&self, scheme: Scheme, delta: &[f64]) -> u64 {
        match scheme {
            Scheme::ConsistentLock | Scheme::InconsistentLock => {
                let mut writer = self.writer.lock().expect("shared state lock poisoned");
                let m = self.updates.load(Ordering::Relaxed);
                if let Some(sum) = writer.running_sum.as_mut() {
                    for (s, c) in sum.iter_mut().zip(&self.u) {
                        *s += c.load(Ordering::Relaxed);
                    }
                }
                for (c, d) in self.u.iter().zip(delta) {
                    c.store(c.load(Ordering::Relaxed) + d, Ordering::Relaxed);
                }
                self.updates.store(m + 1, Ordering::Release);
                m
            }
            Scheme::LockFree => {
                for (c, &d) in self.u.iter().zip(delta) {
                    c.fetch_add(d, Ordering::Relaxed);
                }
                self.updates.fetch_add(1, Ordering::AcqRel)
            }
        }
    }
}
