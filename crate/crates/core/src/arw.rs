//! Activated Random Walk states, the two elementary transformations, and an
//! exact event-driven simulator for timed observables.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::lattice::{dist_linf, Site, SiteBox};
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ArwError {
    #[error("{from} and {to} are not nearest neighbours")]
    NotNeighbors { from: Site, to: Site },
    #[error("sleep rate must be positive and finite, got {0}")]
    BadRate(f64),
}

/// Value of `eta(x)`: a number of active particles, or one sleeping particle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SiteValue {
    Active(u32),
    Sleeping,
}

impl SiteValue {
    pub const EMPTY: SiteValue = SiteValue::Active(0);

    pub fn particles(self) -> u32 {
        match self {
            SiteValue::Active(n) => n,
            SiteValue::Sleeping => 1,
        }
    }

    pub fn active(self) -> u32 {
        match self {
            SiteValue::Active(n) => n,
            SiteValue::Sleeping => 0,
        }
    }
}

impl fmt::Display for SiteValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SiteValue::Active(n) => write!(f, "{n}"),
            SiteValue::Sleeping => f.write_str("s"),
        }
    }
}

/// Sparse configuration `eta: Z^d -> {0, 1, 2, ...} ∪ {s}`; absent sites hold 0.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SiteConfig {
    values: BTreeMap<Site, SiteValue>,
}

impl SiteConfig {
    pub fn new() -> Self {
        Self::default()
    }

    /// All-active configuration from a list of particle positions.
    pub fn from_particles<'a>(positions: impl IntoIterator<Item = &'a Site>) -> Self {
        let mut c = Self::new();
        for p in positions {
            c.add_active(*p);
        }
        c
    }

    #[inline]
    pub fn get(&self, x: &Site) -> SiteValue {
        self.values.get(x).copied().unwrap_or(SiteValue::EMPTY)
    }

    /// Overwrites `eta(x)`.
    pub fn set(&mut self, x: Site, v: SiteValue) {
        if v == SiteValue::EMPTY {
            self.values.remove(&x);
        } else {
            self.values.insert(x, v);
        }
    }

    /// Nonzero sites in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = (&Site, &SiteValue)> {
        self.values.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn total_particles(&self) -> u64 {
        self.values.values().map(|v| v.particles() as u64).sum()
    }

    pub fn total_active(&self) -> u64 {
        self.values.values().map(|v| v.active() as u64).sum()
    }

    pub fn is_stable(&self) -> bool {
        self.values.values().all(|v| *v == SiteValue::Sleeping)
    }

    /// Drop one more active particle on `x`, waking a sleeper there.
    pub fn add_active(&mut self, x: Site) {
        let v = match self.get(&x) {
            SiteValue::Active(n) => SiteValue::Active(n + 1),
            SiteValue::Sleeping => SiteValue::Active(2),
        };
        self.values.insert(x, v);
    }

    /// Remove one active particle from `x`; false if there is none.
    pub fn remove_active(&mut self, x: &Site) -> bool {
        match self.get(x) {
            SiteValue::Active(n) if n > 0 => {
                self.set(*x, SiteValue::Active(n - 1));
                true
            }
            _ => false,
        }
    }

    /// `eta^(y)`: a lone active particle at `y` falls asleep. Returns whether
    /// anything changed.
    pub fn sleep_at(&mut self, y: &Site) -> bool {
        if self.get(y) == SiteValue::Active(1) {
            self.values.insert(*y, SiteValue::Sleeping);
            true
        } else {
            false
        }
    }

    /// `eta^(y -> z)`: an active particle jumps from `y` to the neighbour `z`.
    pub fn jump(&mut self, y: &Site, z: &Site) -> Result<bool, ArwError> {
        if dist_linf(y, z).ok() != Some(1) || (0..y.dim()).filter(|&a| y.get(a) != z.get(a)).count() != 1 {
            return Err(ArwError::NotNeighbors { from: *y, to: *z });
        }
        if !self.remove_active(y) {
            return Ok(false);
        }
        self.add_active(*z);
        Ok(true)
    }

    /// Pure form of [`SiteConfig::sleep_at`].
    pub fn with_sleep(&self, y: &Site) -> SiteConfig {
        let mut c = self.clone();
        c.sleep_at(y);
        c
    }

    /// Pure form of [`SiteConfig::jump`].
    pub fn with_jump(&self, y: &Site, z: &Site) -> Result<SiteConfig, ArwError> {
        let mut c = self.clone();
        c.jump(y, z)?;
        Ok(c)
    }
}

/// How the timed simulator normalizes jump rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RateConvention {
    /// Each active particle jumps at total rate 1; a lone active particle
    /// falls asleep at rate `lambda`. Matches the instruction-tape law.
    #[default]
    WalkRateOne,
    /// Literal generator rates: `eta(y)` per directed edge (total `2d` per
    /// particle), sleep at rate `lambda` per site.
    Generator,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActivityCounter {
    pub changes: u64,
    /// Time of the most recent change, if any.
    pub last_change: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub site: Site,
    pub old: SiteValue,
    pub new: SiteValue,
}

#[derive(Debug, Clone)]
pub struct CtOptions {
    pub rates: RateConvention,
    pub event_budget: u64,
    pub trace: bool,
}

impl Default for CtOptions {
    fn default() -> Self {
        Self { rates: RateConvention::WalkRateOne, event_budget: 50_000_000, trace: false }
    }
}

#[derive(Debug, Clone)]
pub struct CtReport {
    /// No active particles remain.
    pub absorbed: bool,
    /// Event budget ran out before the horizon or absorption.
    pub truncated: bool,
    /// Time reached: absorption time, the horizon, or the time of the last
    /// event when truncated.
    pub time: f64,
    pub events: u64,
    pub dissipated: u64,
    pub final_config: SiteConfig,
    pub counters: BTreeMap<Site, ActivityCounter>,
    pub trace: Vec<TraceRow>,
}

/// Uniform sampling from a changing set.
#[derive(Debug, Clone)]
struct IndexedSet<T: Ord + Copy> {
    items: Vec<T>,
    index: BTreeMap<T, usize>,
}

impl<T: Ord + Copy> IndexedSet<T> {
    fn new() -> Self {
        Self { items: Vec::new(), index: BTreeMap::new() }
    }

    fn insert(&mut self, t: T) {
        if !self.index.contains_key(&t) {
            self.index.insert(t, self.items.len());
            self.items.push(t);
        }
    }

    fn remove(&mut self, t: &T) {
        if let Some(i) = self.index.remove(t) {
            let last = self.items.pop().expect("nonempty");
            if i < self.items.len() {
                self.items[i] = last;
                self.index.insert(last, i);
            }
        }
    }

    fn len(&self) -> usize {
        self.items.len()
    }

    fn sample(&self, rng: &mut SimRng) -> T {
        self.items[rng.random_range(0..self.items.len())]
    }
}

struct CtState<'a> {
    config: SiteConfig,
    /// One entry `(x, k)` per active particle, `k` in `1..=eta(x)`.
    particles: IndexedSet<(Site, u32)>,
    lone: IndexedSet<Site>,
    tracked: BTreeMap<Site, ActivityCounter>,
    trace: Option<Vec<TraceRow>>,
    domain: Option<&'a SiteBox>,
    dissipated: u64,
}

impl CtState<'_> {
    fn index_site(&mut self, x: Site, before: SiteValue, after: SiteValue, t: f64) {
        let (a, b) = (before.active(), after.active());
        for k in (b + 1)..=a {
            self.particles.remove(&(x, k));
        }
        for k in (a + 1)..=b {
            self.particles.insert((x, k));
        }
        if after == SiteValue::Active(1) {
            self.lone.insert(x);
        } else {
            self.lone.remove(&x);
        }
        if before != after {
            if let Some(c) = self.tracked.get_mut(&x) {
                c.changes += 1;
                c.last_change = Some(t);
                if let Some(tr) = self.trace.as_mut() {
                    tr.push(TraceRow { t, site: x, old: before, new: after });
                }
            }
        }
    }

    fn set(&mut self, x: Site, after: SiteValue, t: f64) {
        let before = self.config.get(&x);
        self.config.set(x, after);
        self.index_site(x, before, after, t);
    }
}

/// Event-driven run of the timed dynamics from `initial` up to `horizon` or
/// absorption. Particles leaving `domain` are removed. Changes of `eta(x)`
/// are counted at every site in `tracked`.
pub fn simulate_ct(
    initial: &SiteConfig,
    lambda: f64,
    horizon: f64,
    tracked: &[Site],
    domain: Option<&SiteBox>,
    seed: u64,
    opts: &CtOptions,
) -> Result<CtReport, ArwError> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(ArwError::BadRate(lambda));
    }
    let mut rng = rng::stream(seed);
    let mut st = CtState {
        config: SiteConfig::new(),
        particles: IndexedSet::new(),
        lone: IndexedSet::new(),
        tracked: tracked.iter().map(|x| (*x, ActivityCounter::default())).collect(),
        trace: opts.trace.then(Vec::new),
        domain,
        dissipated: 0,
    };
    // the initial placement is not a change
    for (x, v) in initial.iter() {
        st.config.set(*x, *v);
        for k in 1..=v.active() {
            st.particles.insert((*x, k));
        }
        if *v == SiteValue::Active(1) {
            st.lone.insert(*x);
        }
    }
    let d = initial.iter().next().map_or(1, |(x, _)| x.dim());
    let jump_rate = match opts.rates {
        RateConvention::WalkRateOne => 1.0,
        RateConvention::Generator => 2.0 * d as f64,
    };

    let mut t = 0.0;
    let mut events = 0u64;
    let mut truncated = false;
    loop {
        let active = st.particles.len();
        if active == 0 {
            break;
        }
        if events >= opts.event_budget {
            truncated = true;
            break;
        }
        let jump_total = jump_rate * active as f64;
        let sleep_total = lambda * st.lone.len() as f64;
        let total = jump_total + sleep_total;
        let dt = Exp::new(total).expect("positive rate").sample(&mut rng);
        if t + dt > horizon {
            t = horizon;
            break;
        }
        t += dt;
        events += 1;
        if rng.random::<f64>() * total < sleep_total {
            let x = st.lone.sample(&mut rng);
            st.set(x, SiteValue::Sleeping, t);
        } else {
            let (x, _) = st.particles.sample(&mut rng);
            let dir = rng.random_range(0..2 * d);
            let z = x.shifted(dir / 2, if dir % 2 == 0 { 1 } else { -1 });
            let n = st.config.get(&x).active();
            st.set(x, SiteValue::Active(n - 1), t);
            if st.domain.is_some_and(|b| !b.contains(&z)) {
                st.dissipated += 1;
            } else {
                let after = match st.config.get(&z) {
                    SiteValue::Active(m) => SiteValue::Active(m + 1),
                    SiteValue::Sleeping => SiteValue::Active(2),
                };
                st.set(z, after, t);
            }
        }
    }
    Ok(CtReport {
        absorbed: st.particles.len() == 0,
        truncated,
        time: t,
        events,
        dissipated: st.dissipated,
        final_config: st.config,
        counters: st.tracked,
        trace: st.trace.unwrap_or_default(),
    })
}
