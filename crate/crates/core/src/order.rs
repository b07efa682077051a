//! Order policies: which pending item acts next.
//!
//! Both engines keep one token per pending item (an active particle for the
//! walk engine, an unprocessed message for the sandpile network). Every
//! policy only ever pops a token and pushes new ones, so the engines never
//! need to look inside the scheduler.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::vec::Vec;
use core::cmp::Reverse;

use rand::Rng;

use crate::rng::{self, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderPolicy {
    /// First in, first out over tokens.
    Fifo,
    /// Uniformly random token; the discrete skeleton of the timed dynamics.
    RandomParticle { seed: u64 },
    /// Smallest token first.
    SiteSweep,
    /// Token with the largest multiplicity first, ties to the smallest.
    MaxOccupancy,
}

impl OrderPolicy {
    pub const ALL_DETERMINISTIC: [OrderPolicy; 3] =
        [OrderPolicy::Fifo, OrderPolicy::SiteSweep, OrderPolicy::MaxOccupancy];
}

#[derive(Debug, Clone)]
pub enum Scheduler<T: Ord + Copy> {
    Fifo(VecDeque<T>),
    Random(Vec<T>, SimRng),
    Sweep(BTreeMap<T, u64>),
    Max { counts: BTreeMap<T, u64>, ranked: BTreeSet<(Reverse<u64>, T)> },
}

impl<T: Ord + Copy> Scheduler<T> {
    pub fn new(policy: OrderPolicy) -> Self {
        match policy {
            OrderPolicy::Fifo => Scheduler::Fifo(VecDeque::new()),
            OrderPolicy::RandomParticle { seed } => {
                Scheduler::Random(Vec::new(), rng::stream(rng::derive_seed(seed, &[rng::tags::ORDER])))
            }
            OrderPolicy::SiteSweep => Scheduler::Sweep(BTreeMap::new()),
            OrderPolicy::MaxOccupancy => Scheduler::Max { counts: BTreeMap::new(), ranked: BTreeSet::new() },
        }
    }

    pub fn push(&mut self, t: T) {
        match self {
            Scheduler::Fifo(q) => q.push_back(t),
            Scheduler::Random(v, _) => v.push(t),
            Scheduler::Sweep(m) => *m.entry(t).or_insert(0) += 1,
            Scheduler::Max { counts, ranked } => {
                let c = counts.entry(t).or_insert(0);
                if *c > 0 {
                    ranked.remove(&(Reverse(*c), t));
                }
                *c += 1;
                ranked.insert((Reverse(*c), t));
            }
        }
    }

    pub fn pop(&mut self) -> Option<T> {
        match self {
            Scheduler::Fifo(q) => q.pop_front(),
            Scheduler::Random(v, rng) => {
                if v.is_empty() {
                    None
                } else {
                    let i = rng.random_range(0..v.len());
                    Some(v.swap_remove(i))
                }
            }
            Scheduler::Sweep(m) => {
                let mut e = m.first_entry()?;
                let t = *e.key();
                *e.get_mut() -= 1;
                if *e.get() == 0 {
                    e.remove();
                }
                Some(t)
            }
            Scheduler::Max { counts, ranked } => {
                let (Reverse(c), t) = ranked.pop_first()?;
                if c > 1 {
                    ranked.insert((Reverse(c - 1), t));
                    counts.insert(t, c - 1);
                } else {
                    counts.remove(&t);
                }
                Some(t)
            }
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Scheduler::Fifo(q) => q.len(),
            Scheduler::Random(v, _) => v.len(),
            Scheduler::Sweep(m) => m.values().sum::<u64>() as usize,
            Scheduler::Max { counts, .. } => counts.values().sum::<u64>() as usize,
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            Scheduler::Fifo(q) => q.is_empty(),
            Scheduler::Random(v, _) => v.is_empty(),
            Scheduler::Sweep(m) => m.is_empty(),
            Scheduler::Max { counts, .. } => counts.is_empty(),
        }
    }
}
