//! Interleaving schedules for the simulator.
//!
//! Text format, one event per line:
//!
//! ```text
//! # optional comments
//! tau 3
//! 0 snapshot
//! 1 snapshot 0-4,7
//! 0 apply
//! 1 apply
//! ```
//!
//! A snapshot with a coordinate list is a split read: the listed coordinates
//! (g₂) come from the iterate one update newer than the rest (g₁). The next
//! apply after a split snapshot supplies that newer iterate, so it must come
//! from a different worker.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::aux_stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Snapshot,
    Apply,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Event {
    pub worker: usize,
    pub action: Action,
    /// g₂ for a split snapshot; sorted, unique, non-empty.
    pub split: Option<Vec<u32>>,
    /// Source line (text schedules) or 1-based event index (generated ones).
    pub line: usize,
}

impl Event {
    pub fn snapshot(worker: usize) -> Self {
        Event {
            worker,
            action: Action::Snapshot,
            split: None,
            line: 0,
        }
    }

    pub fn split_snapshot(worker: usize, mut g2: Vec<u32>) -> Self {
        g2.sort_unstable();
        g2.dedup();
        Event {
            worker,
            action: Action::Snapshot,
            split: Some(g2),
            line: 0,
        }
    }

    pub fn apply(worker: usize) -> Self {
        Event {
            worker,
            action: Action::Apply,
            split: None,
            line: 0,
        }
    }
}

/// Timing facts about one apply, derived from the event order alone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ApplyTiming {
    /// Index into the schedule's events.
    pub event: usize,
    pub worker: usize,
    /// `m`: this apply produces `u_{m+1}` from `u_m`.
    pub update: usize,
    /// `a(m)`: the update count when the matching snapshot began.
    pub read_stamp: usize,
}

impl ApplyTiming {
    pub fn delay(&self) -> usize {
        self.update - self.read_stamp
    }
}

/// A validated event order with a declared delay bound τ.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schedule {
    tau: usize,
    events: Vec<Event>,
    timings: Vec<ApplyTiming>,
}

fn invalid(line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        line,
        reason: reason.into(),
    }
}

impl Schedule {
    /// Validates `events` against `tau`. Events with `line == 0` get their
    /// 1-based index as line number.
    pub fn new(tau: usize, mut events: Vec<Event>) -> Result<Self> {
        for (k, e) in events.iter_mut().enumerate() {
            if e.line == 0 {
                e.line = k + 1;
            }
        }
        let timings = analyze(&events)?;
        if let Some(t) = timings.iter().find(|t| t.delay() > tau) {
            return Err(invalid(
                events[t.event].line,
                format!("delay {} of worker {} exceeds declared tau {tau}", t.delay(), t.worker),
            ));
        }
        Ok(Schedule { tau, events, timings })
    }

    /// Like [`Schedule::new`] with τ set to the largest realized delay.
    pub fn inferred(events: Vec<Event>) -> Result<Self> {
        let tau = analyze(&events)?.iter().map(ApplyTiming::delay).max().unwrap_or(0);
        Schedule::new(tau, events)
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn timings(&self) -> &[ApplyTiming] {
        &self.timings
    }

    /// M̃: the number of applies.
    pub fn updates(&self) -> usize {
        self.timings.len()
    }

    pub fn workers(&self) -> usize {
        self.events.iter().map(|e| e.worker + 1).max().unwrap_or(0)
    }

    pub fn max_delay(&self) -> usize {
        self.timings.iter().map(ApplyTiming::delay).max().unwrap_or(0)
    }

    pub fn has_split_reads(&self) -> bool {
        self.events.iter().any(|e| e.split.is_some())
    }

    /// One worker alternating snapshot and apply: the sequential algorithm.
    pub fn alternating(updates: usize) -> Self {
        let events = (0..updates)
            .flat_map(|_| [Event::snapshot(0), Event::apply(0)])
            .collect();
        Schedule::new(0, events).expect("alternating schedule is valid")
    }

    /// Rounds in which every worker snapshots and then every worker applies,
    /// in id order. Worker `k` sees delay `k`, so τ = p − 1 is saturated.
    pub fn round_robin(workers: usize, updates: usize) -> Self {
        assert!(workers >= 1);
        let mut events = Vec::with_capacity(2 * updates);
        let mut left = updates;
        while left > 0 {
            let k = left.min(workers);
            events.extend((0..k).map(Event::snapshot));
            events.extend((0..k).map(Event::apply));
            left -= k;
        }
        Schedule::new(workers - 1, events).expect("round-robin schedule is valid")
    }

    /// A random interleaving of `workers` workers producing exactly `updates`
    /// applies, none delayed more than `tau`. With `mixed_reads`, about half of
    /// the snapshots are split reads whose g₂ is a random prefix of `0..dim`.
    pub fn random_bounded(
        workers: usize,
        tau: usize,
        updates: usize,
        dim: usize,
        seed: u64,
        mixed_reads: bool,
    ) -> Self {
        assert!(workers >= 1);
        let mut rng = aux_stream(seed, 0x5c4e_d01e);
        let mut pending: Vec<Option<Pending>> = vec![None; workers];
        let mut events = Vec::with_capacity(2 * updates);
        let (mut m, mut issued) = (0usize, 0usize);
        let mut options = Vec::new();
        while m < updates {
            options.clear();
            for w in 0..workers {
                match pending[w] {
                    None if issued < updates => {
                        let plain = Pending {
                            stamp: m,
                            unresolved: false,
                        };
                        if drainable(&pending, Some((w, plain)), None, m, tau) {
                            options.push((w, Action::Snapshot, false));
                        }
                        let split = Pending {
                            stamp: m,
                            unresolved: true,
                        };
                        if mixed_reads && dim > 0 && drainable(&pending, Some((w, split)), None, m, tau) {
                            options.push((w, Action::Snapshot, true));
                        }
                    }
                    Some(p)
                        if !p.unresolved && m - p.stamp <= tau && drainable(&pending, None, Some(w), m + 1, tau) =>
                    {
                        options.push((w, Action::Apply, false));
                    }
                    _ => {}
                }
            }
            let &(w, action, _) = &options[rng.random_range(0..options.len())];
            match action {
                Action::Snapshot => {
                    // A split snapshot is only offered alongside the plain one;
                    // a coin decides between them.
                    let split_ok = options.iter().any(|o| o.0 == w && o.2);
                    if split_ok && rng.random_bool(0.5) {
                        let k = rng.random_range(1..=dim) as u32;
                        events.push(Event::split_snapshot(w, (0..k).collect()));
                        pending[w] = Some(Pending {
                            stamp: m,
                            unresolved: true,
                        });
                    } else {
                        events.push(Event::snapshot(w));
                        pending[w] = Some(Pending {
                            stamp: m,
                            unresolved: false,
                        });
                    }
                    issued += 1;
                }
                Action::Apply => {
                    events.push(Event::apply(w));
                    pending[w] = None;
                    for p in pending.iter_mut().flatten() {
                        p.unresolved = false;
                    }
                    m += 1;
                }
            }
        }
        Schedule::new(tau, events).expect("generated schedule respects its own bound")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "tau {}", self.tau).unwrap();
        for e in &self.events {
            match (e.action, &e.split) {
                (Action::Apply, _) => writeln!(out, "{} apply", e.worker).unwrap(),
                (Action::Snapshot, None) => writeln!(out, "{} snapshot", e.worker).unwrap(),
                (Action::Snapshot, Some(g2)) => writeln!(out, "{} snapshot {}", e.worker, format_ranges(g2)).unwrap(),
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut tau = None;
        let mut events = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = k + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            if fields[0].eq_ignore_ascii_case("tau") {
                if fields.len() != 2 {
                    return Err(invalid(line, "expected 'tau <bound>'"));
                }
                if tau.is_some() {
                    return Err(invalid(line, "tau declared twice"));
                }
                tau = Some(
                    fields[1]
                        .parse::<usize>()
                        .map_err(|e| invalid(line, format!("bad tau '{}': {e}", fields[1])))?,
                );
                continue;
            }
            if !(2..=3).contains(&fields.len()) {
                return Err(invalid(line, "expected '<worker> snapshot|apply [coords]'"));
            }
            let worker = fields[0]
                .parse::<usize>()
                .map_err(|e| invalid(line, format!("bad worker id '{}': {e}", fields[0])))?;
            let mut event = match fields[1].to_ascii_lowercase().as_str() {
                "snapshot" | "read" => Event::snapshot(worker),
                "apply" | "write" => Event::apply(worker),
                other => return Err(invalid(line, format!("unknown action '{other}'"))),
            };
            if let Some(spec) = fields.get(2) {
                if event.action == Action::Apply {
                    return Err(invalid(line, "only snapshots take a coordinate list"));
                }
                let g2 = parse_ranges(spec).map_err(|r| invalid(line, r))?;
                event = Event::split_snapshot(worker, g2);
            }
            event.line = line;
            events.push(event);
        }
        match tau {
            Some(t) => Schedule::new(t, events),
            None => Schedule::inferred(events),
        }
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Schedule::parse(s)
    }
}

#[derive(Clone, Copy, Debug)]
struct Pending {
    stamp: usize,
    /// Split read still waiting for its newer half.
    unresolved: bool,
}

/// Whether every pending read (after the hypothetical change) can still be
/// applied within its deadline `stamp + tau`, starting at update index `m`.
///
/// The first apply must come from a resolved read; after it everything is
/// resolved and earliest-deadline-first is optimal. Taking the resolved read
/// with the earliest deadline first is optimal too (exchange argument).
fn drainable(
    pending: &[Option<Pending>],
    add: Option<(usize, Pending)>,
    remove: Option<usize>,
    m: usize,
    tau: usize,
) -> bool {
    let mut items: Vec<(usize, bool)> = pending
        .iter()
        .enumerate()
        .filter(|(w, _)| Some(*w) != remove)
        .filter_map(|(_, p)| p.map(|p| (p.stamp + tau, p.unresolved && remove.is_none())))
        .collect();
    if let Some((_, p)) = add {
        items.push((p.stamp + tau, p.unresolved));
    }
    if items.is_empty() {
        return true;
    }
    let Some(first) = items
        .iter()
        .enumerate()
        .filter(|(_, it)| !it.1)
        .min_by_key(|(_, it)| it.0)
        .map(|(k, _)| k)
    else {
        return false;
    };
    let head = items.swap_remove(first);
    if head.0 < m {
        return false;
    }
    let mut rest: Vec<usize> = items.into_iter().map(|it| it.0).collect();
    rest.sort_unstable();
    rest.iter().enumerate().all(|(j, &deadline)| deadline >= m + 1 + j)
}

/// Replays the event order, checking pairing and split rules, and returns
/// the timing of every apply.
fn analyze(events: &[Event]) -> Result<Vec<ApplyTiming>> {
    let workers = events.iter().map(|e| e.worker + 1).max().unwrap_or(0);
    // (stamp, unresolved split, line)
    let mut pending: Vec<Option<(usize, bool, usize)>> = vec![None; workers];
    let mut timings = Vec::new();
    for (k, e) in events.iter().enumerate() {
        let line = if e.line == 0 { k + 1 } else { e.line };
        let m = timings.len();
        match e.action {
            Action::Snapshot => {
                if pending[e.worker].is_some() {
                    return Err(invalid(
                        line,
                        format!("worker {} snapshots twice without applying", e.worker),
                    ));
                }
                if let Some(g2) = &e.split {
                    if g2.is_empty() {
                        return Err(invalid(line, "split read with an empty coordinate list"));
                    }
                }
                pending[e.worker] = Some((m, e.split.is_some(), line));
            }
            Action::Apply => {
                let Some((stamp, unresolved, _)) = pending[e.worker].take() else {
                    return Err(invalid(line, format!("worker {} applies without a snapshot", e.worker)));
                };
                if unresolved {
                    return Err(invalid(
                        line,
                        format!(
                            "worker {} applies before another worker's update completed its split read",
                            e.worker
                        ),
                    ));
                }
                for p in pending.iter_mut().flatten() {
                    p.1 = false;
                }
                timings.push(ApplyTiming {
                    event: k,
                    worker: e.worker,
                    update: m,
                    read_stamp: stamp,
                });
            }
        }
    }
    if let Some((w, (_, _, line))) = pending.iter().enumerate().find_map(|(w, p)| p.map(|p| (w, p))) {
        return Err(invalid(line, format!("worker {w} snapshots but never applies")));
    }
    Ok(timings)
}

fn parse_ranges(spec: &str) -> std::result::Result<Vec<u32>, String> {
    let mut out = Vec::new();
    for part in spec.split(',').filter(|p| !p.is_empty()) {
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a, b),
            None => (part, part),
        };
        let lo: u32 = lo.parse().map_err(|e| format!("bad coordinate '{lo}': {e}"))?;
        let hi: u32 = hi.parse().map_err(|e| format!("bad coordinate '{hi}': {e}"))?;
        if hi < lo {
            return Err(format!("empty range '{part}'"));
        }
        out.extend(lo..=hi);
    }
    if out.is_empty() {
        return Err("empty coordinate list".into());
    }
    Ok(out)
}

fn format_ranges(coords: &[u32]) -> String {
    let mut parts = Vec::new();
    let mut k = 0;
    while k < coords.len() {
        let start = coords[k];
        let mut end = start;
        while k + 1 < coords.len() && coords[k + 1] == end + 1 {
            k += 1;
            end = coords[k];
        }
        parts.push(if start == end {
            start.to_string()
        } else {
            format!("{start}-{end}")
        });
        k += 1;
    }
    parts.join(",")
}
