//! Data-parallel helpers.
//!
//! With the `parallel` feature (on by default) the work is spread over the
//! current rayon pool; without it every helper degrades to a plain loop. The
//! reduction tree is split at fixed midpoints in both modes, so a sum computed
//! here has the same association order, and therefore the same bits, whether it
//! ran on one thread or many.

/// Execution mode for the data-parallel helpers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exec {
    Parallel,
    Sequential,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// Whether `Exec::Parallel` actually runs in parallel in this build.
    pub fn parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

#[cfg(feature = "parallel")]
pub fn join<A, B, RA, RB>(exec: Exec, a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    match exec {
        Exec::Parallel => rayon::join(a, b),
        Exec::Sequential => (a(), b()),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn join<A, B, RA, RB>(_exec: Exec, a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    (a(), b())
}

/// Evaluates `f(0..count)` and returns the results in index order.
#[cfg(feature = "parallel")]
pub fn map_collect<T, F>(exec: Exec, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    match exec {
        Exec::Parallel => (0..count).into_par_iter().map(f).collect(),
        Exec::Sequential => (0..count).map(f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, F>(_exec: Exec, count: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..count).map(f).collect()
}

/// Reduces `leaf(0..blocks)` with `combine` over a balanced binary tree whose
/// split points depend only on `blocks`. Returns `None` when `blocks == 0`.
pub fn tree_reduce<T, L, C>(exec: Exec, blocks: usize, leaf: L, combine: C) -> Option<T>
where
    T: Send,
    L: Fn(usize) -> T + Sync + Send,
    C: Fn(T, T) -> T + Sync + Send,
{
    fn rec<T, L, C>(exec: Exec, lo: usize, hi: usize, leaf: &L, combine: &C) -> T
    where
        T: Send,
        L: Fn(usize) -> T + Sync + Send,
        C: Fn(T, T) -> T + Sync + Send,
    {
        if hi - lo == 1 {
            return leaf(lo);
        }
        let mid = lo + (hi - lo) / 2;
        let (a, b) = join(
            exec,
            || rec(exec, lo, mid, leaf, combine),
            || rec(exec, mid, hi, leaf, combine),
        );
        combine(a, b)
    }

    if blocks == 0 {
        None
    } else {
        Some(rec(exec, 0, blocks, &leaf, &combine))
    }
}
