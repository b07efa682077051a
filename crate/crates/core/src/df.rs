//! Instruction-tape (Diaconis–Fulton) representation of ARW.
//!
//! Every site carries a tape of instructions. An active particle at `x`
//! reads the next unburned entry of the tape at `x`, the odometer `J_x`
//! counts how many entries were burned, and the instruction is applied to
//! the configuration. For fixed tapes the final configuration and odometer
//! do not depend on the order in which particles act.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::arw::{SiteConfig, SiteValue};
use crate::kernels::{run_until, SrwSource, StopTimeout, Stopped, StoppingRule};
use crate::lattice::{Site, SiteBox};
use crate::order::{OrderPolicy, Scheduler};
use crate::rng::{self, tags, SimRng};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DfError {
    #[error("no active particle at {0}")]
    NoActiveParticle(Site),
    #[error("tape at {site} exhausted after {len} entries")]
    TapeExhausted { site: Site, len: usize },
    #[error("entry {index} of the tape at {site} is not a sleep instruction")]
    NotASleep { site: Site, index: usize },
    #[error("invalid initial state at {0}: at most one particle may sleep on a site, and only alone")]
    InvalidInitial(Site),
    #[error("unbounded run: give a dissipation domain, an escape box or a step budget")]
    Unbounded,
    #[error("sleep rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("instruction {0:?} does not parse")]
    BadInstruction(alloc::string::String),
    #[error("not stabilized after {steps} steps")]
    NonStabilized { steps: u64, snapshot: SiteConfig },
    #[error("particle {particle} did not stop: {source}")]
    Timeout { particle: usize, source: StopTimeout },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Instruction {
    Sleep,
    Step { axis: u8, positive: bool },
}

impl Instruction {
    /// Direction number `k` in `0..2d`: axis `k / 2`, positive when `k` is even.
    pub fn direction(k: usize) -> Self {
        Instruction::Step { axis: (k / 2) as u8, positive: k.is_multiple_of(2) }
    }

    /// Target of this instruction read at `x`, if it is a step.
    pub fn target(self, x: &Site) -> Option<Site> {
        match self {
            Instruction::Sleep => None,
            Instruction::Step { axis, positive } => Some(x.shifted(axis as usize, if positive { 1 } else { -1 })),
        }
    }

    /// Parses `"s"`, `"+1"`, `"-2"`, ... (axes are 1-based).
    pub fn parse(s: &str, d: usize) -> Result<Self, DfError> {
        let bad = || DfError::BadInstruction(s.into());
        if s == "s" {
            return Ok(Instruction::Sleep);
        }
        let (positive, rest) = match s.as_bytes().first() {
            Some(b'+') => (true, &s[1..]),
            Some(b'-') => (false, &s[1..]),
            _ => return Err(bad()),
        };
        let axis: usize = rest.parse().map_err(|_| bad())?;
        if axis == 0 || axis > d {
            return Err(bad());
        }
        Ok(Instruction::Step { axis: (axis - 1) as u8, positive })
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Instruction::Sleep => f.write_str("s"),
            Instruction::Step { axis, positive } => write!(f, "{}{}", if *positive { '+' } else { '-' }, axis + 1),
        }
    }
}

/// Law of a single tape entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TapeLaw {
    /// Sleep with probability `lambda / (1 + lambda)`, otherwise a uniform
    /// direction among the `2d`.
    Arw { lambda: f64, d: usize },
    /// Uniform direction, never sleep.
    Directions { d: usize },
}

impl TapeLaw {
    pub fn dim(&self) -> usize {
        match *self {
            TapeLaw::Arw { d, .. } | TapeLaw::Directions { d } => d,
        }
    }

    fn sample(&self, rng: &mut SimRng) -> Instruction {
        match *self {
            TapeLaw::Arw { lambda, d } => {
                if rng.random::<f64>() < lambda / (1.0 + lambda) {
                    Instruction::Sleep
                } else {
                    Instruction::direction(rng.random_range(0..2 * d))
                }
            }
            TapeLaw::Directions { d } => Instruction::direction(rng.random_range(0..2 * d)),
        }
    }
}

#[derive(Debug, Clone)]
struct LazyTape {
    entries: Vec<Instruction>,
    rng: SimRng,
}

/// Per-site instruction tapes. Each tape is an explicit prefix (possibly
/// empty) followed by entries drawn lazily from a stream keyed by the site,
/// so the same seed always reveals the same tapes. When `finite` is set the
/// tapes end with their prefixes. Sleep entries can be masked out, which
/// gives the tapes "with some sleep envelopes removed".
#[derive(Debug, Clone)]
pub struct InstructionTapes {
    law: TapeLaw,
    seed: u64,
    finite: bool,
    prefixes: BTreeMap<Site, Vec<Instruction>>,
    revealed: BTreeMap<Site, LazyTape>,
    removed: BTreeMap<Site, BTreeSet<usize>>,
}

impl InstructionTapes {
    pub fn random(law: TapeLaw, seed: u64) -> Result<Self, DfError> {
        if let TapeLaw::Arw { lambda, .. } = law {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(DfError::BadRate(lambda));
            }
        }
        Ok(Self {
            law,
            seed,
            finite: false,
            prefixes: BTreeMap::new(),
            revealed: BTreeMap::new(),
            removed: BTreeMap::new(),
        })
    }

    /// Fully explicit tapes; reading past the end is an error.
    pub fn explicit(law: TapeLaw, tapes: BTreeMap<Site, Vec<Instruction>>) -> Self {
        Self { law, seed: 0, finite: true, prefixes: tapes, revealed: BTreeMap::new(), removed: BTreeMap::new() }
    }

    /// Random tapes whose first entries at some sites are fixed.
    pub fn with_prefixes(mut self, prefixes: BTreeMap<Site, Vec<Instruction>>) -> Self {
        self.prefixes = prefixes;
        self.revealed.clear();
        self
    }

    pub fn law(&self) -> TapeLaw {
        self.law
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Entry `index` of the unmasked tape at `x`.
    pub fn raw(&mut self, x: &Site, index: usize) -> Result<Instruction, DfError> {
        let prefix = self.prefixes.get(x).map_or(&[][..], |v| v.as_slice());
        if let Some(i) = prefix.get(index) {
            return Ok(*i);
        }
        if self.finite {
            return Err(DfError::TapeExhausted { site: *x, len: prefix.len() });
        }
        let offset = prefix.len();
        let (law, seed) = (self.law, self.seed);
        let tag = match law {
            TapeLaw::Arw { .. } => tags::INSTRUCTIONS,
            TapeLaw::Directions { .. } => tags::DIRECTIONS,
        };
        let tape = self
            .revealed
            .entry(*x)
            .or_insert_with(|| LazyTape { entries: Vec::new(), rng: rng::stream(rng::site_seed(seed, tag, x)) });
        while tape.entries.len() <= index - offset {
            let next = law.sample(&mut tape.rng);
            tape.entries.push(next);
        }
        Ok(tape.entries[index - offset])
    }

    /// Position on the unmasked tape of the `j`-th (0-based) unmasked entry.
    pub fn raw_index(&self, x: &Site, j: u64) -> usize {
        let mut u = j as usize;
        if let Some(mask) = self.removed.get(x) {
            for &m in mask {
                if m <= u {
                    u += 1;
                } else {
                    break;
                }
            }
        }
        u
    }

    /// The `j`-th (0-based) entry of the tape at `x` after masking.
    pub fn read(&mut self, x: &Site, j: u64) -> Result<Instruction, DfError> {
        let u = self.raw_index(x, j);
        self.raw(x, u)
    }

    /// Mask out the sleep entries at the given unmasked positions.
    pub fn remove_sleeps(&mut self, x: &Site, positions: &[usize]) -> Result<(), DfError> {
        for &p in positions {
            if self.raw(x, p)? != Instruction::Sleep {
                return Err(DfError::NotASleep { site: *x, index: p });
            }
        }
        self.removed.entry(*x).or_default().extend(positions.iter().copied());
        Ok(())
    }

    pub fn removed(&self) -> &BTreeMap<Site, BTreeSet<usize>> {
        &self.removed
    }

    /// Same underlying tapes (law, seed and prefixes), masks aside.
    pub fn same_base(&self, other: &InstructionTapes) -> bool {
        self.law == other.law && self.seed == other.seed && self.finite == other.finite && self.prefixes == other.prefixes
    }

    /// Whether these tapes are `other` with some sleep entries masked out,
    /// i.e. every entry masked in `other` is masked here too.
    pub fn masks_more_than(&self, other: &InstructionTapes) -> bool {
        self.same_base(other)
            && other.removed.iter().all(|(x, m)| self.removed.get(x).is_some_and(|mine| m.is_subset(mine)))
    }
}

/// Burn counts `J_x`; only nonzero entries are stored.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Odometer(BTreeMap<Site, u64>);

impl Odometer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, x: &Site) -> u64 {
        self.0.get(x).copied().unwrap_or(0)
    }

    pub fn increment(&mut self, x: Site) {
        *self.0.entry(x).or_insert(0) += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Site, &u64)> {
        self.0.iter()
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }

    /// Pointwise `self <= other`.
    pub fn dominated_by(&self, other: &Odometer) -> bool {
        self.0.iter().all(|(x, j)| *j <= other.get(x))
    }
}

impl FromIterator<(Site, u64)> for Odometer {
    fn from_iter<I: IntoIterator<Item = (Site, u64)>>(iter: I) -> Self {
        Odometer(iter.into_iter().filter(|(_, j)| *j > 0).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Active,
    Sleeping,
}

/// Builds a configuration from individual particles, rejecting two
/// sleepers on a site or a sleeper next to active particles.
pub fn config_from_particles(particles: &[(Site, Status)]) -> Result<SiteConfig, DfError> {
    let mut c = SiteConfig::new();
    for (x, s) in particles {
        match (c.get(x), s) {
            (SiteValue::Active(n), Status::Active) => c.set(*x, SiteValue::Active(n + 1)),
            (SiteValue::Active(0), Status::Sleeping) => c.set(*x, SiteValue::Sleeping),
            _ => return Err(DfError::InvalidInitial(*x)),
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEffect {
    Slept,
    /// A sleep entry read with two or more particles present.
    SleepIgnored,
    /// `to` is `None` when the particle left the domain.
    Moved { to: Option<Site>, woke: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Stable,
    /// A particle touched the internal boundary of the escape box here.
    Escaped(Site),
    BudgetExhausted,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub budget: Option<u64>,
    pub escape: Option<SiteBox>,
}

/// Configuration, odometer and tapes evolving together.
#[derive(Debug, Clone)]
pub struct World {
    pub config: SiteConfig,
    pub odometer: Odometer,
    pub tapes: InstructionTapes,
    pub domain: Option<SiteBox>,
    pub dissipated: u64,
    pub steps: u64,
}

impl World {
    pub fn new(config: SiteConfig, tapes: InstructionTapes, domain: Option<SiteBox>) -> Self {
        Self { config, odometer: Odometer::new(), tapes, domain, dissipated: 0, steps: 0 }
    }

    /// One active particle at `x` reads and burns its next instruction.
    pub fn step(&mut self, x: &Site) -> Result<StepEffect, DfError> {
        if self.config.get(x).active() == 0 {
            return Err(DfError::NoActiveParticle(*x));
        }
        let ins = self.tapes.read(x, self.odometer.get(x))?;
        self.odometer.increment(*x);
        self.steps += 1;
        let Some(z) = ins.target(x) else {
            return Ok(if self.config.sleep_at(x) { StepEffect::Slept } else { StepEffect::SleepIgnored });
        };
        self.config.remove_active(x);
        if self.domain.is_some_and(|b| !b.contains(&z)) {
            self.dissipated += 1;
            return Ok(StepEffect::Moved { to: None, woke: false });
        }
        let woke = self.config.get(&z) == SiteValue::Sleeping;
        self.config.add_active(z);
        Ok(StepEffect::Moved { to: Some(z), woke })
    }

    /// Acts until no active particle remains, the budget runs out, or a
    /// particle touches the internal boundary of `opts.escape`.
    pub fn run(&mut self, policy: OrderPolicy, opts: &RunOptions) -> Result<RunStatus, DfError> {
        if self.domain.is_none() && opts.escape.is_none() && opts.budget.is_none() {
            return Err(DfError::Unbounded);
        }
        if let Some(b) = &opts.escape {
            if let Some((x, _)) = self.config.iter().find(|(x, _)| !b.contains(x) || b.on_internal_boundary(x)) {
                return Ok(RunStatus::Escaped(*x));
            }
        }
        let mut queue = Scheduler::new(policy);
        for (x, v) in self.config.iter() {
            for _ in 0..v.active() {
                queue.push(*x);
            }
        }
        let mut used = 0u64;
        while let Some(x) = queue.pop() {
            if opts.budget.is_some_and(|b| used >= b) {
                return Ok(RunStatus::BudgetExhausted);
            }
            used += 1;
            match self.step(&x)? {
                StepEffect::Slept => {}
                StepEffect::SleepIgnored => queue.push(x),
                StepEffect::Moved { to: None, .. } => {}
                StepEffect::Moved { to: Some(z), woke } => {
                    if opts.escape.is_some_and(|b| b.on_internal_boundary(&z)) {
                        return Ok(RunStatus::Escaped(z));
                    }
                    queue.push(z);
                    if woke {
                        queue.push(z);
                    }
                }
            }
        }
        Ok(RunStatus::Stable)
    }

    pub fn active_sites(&self) -> Vec<Site> {
        self.config.iter().filter(|(_, v)| v.active() > 0).map(|(x, _)| *x).collect()
    }

    /// Burns of this world counted only over envelopes that are not masked
    /// in `other`.
    pub fn odometer_outside_mask(&self, other: &InstructionTapes) -> Odometer {
        self.odometer
            .iter()
            .map(|(x, &j)| {
                let end = self.tapes.raw_index(x, j);
                let mine = self.tapes.removed().get(x);
                let theirs = other.removed().get(x);
                let skipped = (0..end)
                    .filter(|u| !mine.is_some_and(|m| m.contains(u)) && theirs.is_some_and(|m| m.contains(u)))
                    .count() as u64;
                (*x, j - skipped)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stabilized {
    pub config: SiteConfig,
    pub odometer: Odometer,
    pub dissipated: u64,
    pub steps: u64,
}

/// Stabilizes `initial` with the given tapes. Requires a domain or a budget.
pub fn stabilize(
    initial: &SiteConfig,
    tapes: InstructionTapes,
    policy: OrderPolicy,
    domain: Option<SiteBox>,
    budget: Option<u64>,
) -> Result<Stabilized, DfError> {
    let mut w = World::new(initial.clone(), tapes, domain);
    match w.run(policy, &RunOptions { budget, escape: None })? {
        RunStatus::Stable => {
            Ok(Stabilized { config: w.config, odometer: w.odometer, dissipated: w.dissipated, steps: w.steps })
        }
        _ => Err(DfError::NonStabilized { steps: w.steps, snapshot: w.config }),
    }
}

/// `omega' ≼ omega`, where each world is an initial configuration plus
/// tapes: no more particles anywhere, no more active particles anywhere,
/// and `omega`'s tapes are `omega'`'s tapes with some sleep entries removed.
/// This is the direction in which fewer sleeps means more activity.
pub fn precedes(lesser: (&SiteConfig, &InstructionTapes), greater: (&SiteConfig, &InstructionTapes)) -> bool {
    let (c1, t1) = lesser;
    let (c2, t2) = greater;
    if t1.law().dim() != t2.law().dim() {
        return false;
    }
    let pointwise = c1
        .iter()
        .all(|(x, v)| v.particles() <= c2.get(x).particles() && v.active() <= c2.get(x).active());
    pointwise && t2.masks_more_than(t1)
}

/// Turns sleep off: particle `i` walks as an independent rate-1 simple
/// random walk until `rules[i]` stops it. Returns the stopped walks.
pub fn off_sleep_run(particles: &[Site], rules: &[StoppingRule], seed: u64, max_jumps: u64) -> Result<Vec<Stopped>, DfError> {
    assert_eq!(particles.len(), rules.len(), "one stopping rule per particle");
    particles
        .iter()
        .zip(rules)
        .enumerate()
        .map(|(i, (x, rule))| {
            let mut src = SrwSource::new(rng::indexed_stream(seed, tags::WALK, i as u64), x.dim());
            run_until(rule, *x, &mut src, max_jumps).map_err(|source| DfError::Timeout { particle: i, source })
        })
        .collect()
}

/// Sample `Poisson(mean)` by inversion of the uniform `u`. Monotone in
/// `mean` for fixed `u`.
pub fn poisson_inverse(mean: f64, u: f64) -> u32 {
    if mean <= 0.0 {
        return 0;
    }
    let mut pmf = libm::exp(-mean);
    let mut cdf = pmf;
    let mut k = 0u32;
    while u >= cdf && k < 100_000 {
        k += 1;
        pmf *= mean / k as f64;
        cdf += pmf;
        if pmf == 0.0 && (k as f64) > mean {
            break;
        }
    }
    k
}

/// Active Poisson initial condition with intensity `density(x)` on the
/// sup-norm ball `B(0, m)`. Each site uses its own uniform, so the sample
/// is monotone in the density and consistent across different `m`.
pub fn truncate_initial(density: impl Fn(&Site) -> f64, m: u64, d: usize, seed: u64) -> SiteConfig {
    let ball = SiteBox::cube(Site::splat(d, -(m as i64)), 2 * m + 1).expect("positive side");
    let mut c = SiteConfig::new();
    for x in ball.sites() {
        let u: f64 = rng::stream(rng::site_seed(seed, tags::POISSON, &x)).random();
        let n = poisson_inverse(density(&x), u);
        if n > 0 {
            c.set(x, SiteValue::Active(n));
        }
    }
    c
}
