//! Heat kernels of continuous-time simple random walk, and walkers stopped
//! by the hopping and sieving schedules.
//!
//! Kernel convention: in `Z^d` every coordinate is an independent rate-1
//! walk on `Z`, so `p_t(0, x) = prod_i p1_t(0, x_i)`. The engines instead
//! move one rate-1 walker to a uniform neighbour, which is the product
//! kernel at time `t / d`.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use crate::lattice::{Paving, Site, SiteBox};
use crate::rng::{self, SimRng};

pub const DEFAULT_EPS: f64 = 1e-12;

/// Smallest `n` with `P[Poisson(t) > n] < eps`, from the bound
/// `P[N > n] <= pmf(n+1) (n+2) / (n+2-t)` valid for `n + 2 > t`.
pub fn jump_cutoff(t: f64, eps: f64) -> u64 {
    assert!(t >= 0.0 && t.is_finite(), "time must be finite and nonnegative");
    if t == 0.0 {
        return 0;
    }
    let ln_t = libm::log(t);
    let mut n = libm::floor(t) as u64;
    loop {
        let m = (n + 1) as f64;
        let ln_pmf = -t + m * ln_t - libm::lgamma(m + 1.0);
        let ln_bound = ln_pmf + libm::log(m + 1.0) - libm::log(m + 1.0 - t);
        if ln_bound < libm::log(eps) {
            return n;
        }
        n += 1;
    }
}

/// Largest `|x|` with a nonzero truncated kernel value.
pub fn support_radius(t: f64, eps: f64) -> u64 {
    jump_cutoff(t, eps)
}

fn series_1d(t: f64, a: u64, cutoff: u64) -> f64 {
    if t == 0.0 {
        return if a == 0 { 1.0 } else { 0.0 };
    }
    let ln_half = libm::log(t / 2.0);
    let mut sum = 0.0;
    let mut m = 0u64;
    while a + 2 * m <= cutoff {
        let (mf, af) = (m as f64, a as f64);
        let ln_term = -t + (af + 2.0 * mf) * ln_half - libm::lgamma(mf + 1.0) - libm::lgamma(mf + af + 1.0);
        sum += libm::exp(ln_term);
        m += 1;
    }
    sum
}

/// `p1_t(0, x) = e^{-t} I_x(t)` summed over jump counts up to
/// [`jump_cutoff`]`(t, eps)`, so the neglected mass is below `eps`.
pub fn heat_kernel_1d(t: f64, x: i64, eps: f64) -> f64 {
    series_1d(t, x.unsigned_abs(), jump_cutoff(t, eps))
}

/// Product kernel `prod_i p1_t(0, x_i)`.
pub fn heat_kernel_d(t: f64, x: &Site, eps: f64) -> f64 {
    let cutoff = jump_cutoff(t, eps);
    x.coords().iter().map(|c| series_1d(t, c.unsigned_abs(), cutoff)).product()
}

/// All values `p1_t(0, x)` for `0 <= x <= cutoff`.
#[derive(Debug, Clone)]
pub struct KernelTable1d {
    pub t: f64,
    pub eps: f64,
    values: Vec<f64>,
}

impl KernelTable1d {
    pub fn new(t: f64, eps: f64) -> Self {
        let cutoff = jump_cutoff(t, eps);
        Self { t, eps, values: (0..=cutoff).map(|a| series_1d(t, a, cutoff)).collect() }
    }

    pub fn radius(&self) -> u64 {
        (self.values.len() - 1) as u64
    }

    pub fn get(&self, x: i64) -> f64 {
        self.values.get(x.unsigned_abs() as usize).copied().unwrap_or(0.0)
    }

    /// Product kernel from this table.
    pub fn get_d(&self, x: &Site) -> f64 {
        x.coords().iter().map(|&c| self.get(c)).product()
    }
}

/// Law at time `t` of one walker on `Z^d` jumping at rate `d` to a uniform
/// neighbour, computed directly by convolving the jump law on a grid. By
/// coordinate independence it equals the product kernel at time `t`.
#[derive(Debug, Clone)]
pub struct DirectKernel {
    d: usize,
    radius: u64,
    values: Vec<f64>,
}

impl DirectKernel {
    pub fn new(t: f64, d: usize, eps: f64) -> Self {
        let rate_t = t * d as f64;
        let n_max = jump_cutoff(rate_t, eps);
        let side = (2 * n_max + 1) as usize;
        let len = side.pow(d as u32);
        let centre: usize = (0..d).map(|a| n_max as usize * side.pow(a as u32)).sum();
        let mut walk = vec![0.0; len];
        walk[centre] = 1.0;
        let mut out = vec![0.0; len];
        let mut ln_pmf = -rate_t;
        for n in 0..=n_max {
            if n > 0 {
                ln_pmf += libm::log(rate_t) - libm::log(n as f64);
                let mut next = vec![0.0; len];
                let w = 1.0 / (2 * d) as f64;
                for (i, &p) in walk.iter().enumerate() {
                    if p == 0.0 {
                        continue;
                    }
                    for a in 0..d {
                        let stride = side.pow(a as u32);
                        let coord = (i / stride) % side;
                        if coord + 1 < side {
                            next[i + stride] += p * w;
                        }
                        if coord > 0 {
                            next[i - stride] += p * w;
                        }
                    }
                }
                walk = next;
            }
            let weight = libm::exp(ln_pmf);
            for (o, p) in out.iter_mut().zip(&walk) {
                *o += weight * p;
            }
        }
        Self { d, radius: n_max, values: out }
    }

    pub fn radius(&self) -> u64 {
        self.radius
    }

    pub fn get(&self, x: &Site) -> f64 {
        assert_eq!(x.dim(), self.d);
        let side = 2 * self.radius + 1;
        let mut idx = 0u64;
        for a in 0..self.d {
            let c = x.get(a) + self.radius as i64;
            if c < 0 || c as u64 >= side {
                return 0.0;
            }
            idx += c as u64 * side.pow(a as u32);
        }
        self.values[idx as usize]
    }
}

/// `sum_j p_t(0, x_j - origin)`.
pub fn balanced_kernel_sum(t: f64, points: &[Site], origin: &Site, eps: f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let table = KernelTable1d::new(t, eps);
    points
        .iter()
        .map(|p| {
            let rel = p.checked_sub(origin).expect("matching dimensions");
            table.get_d(&rel)
        })
        .sum()
}

/// `per_tile` copies, in every tile whose index lies in `tiles`, of the
/// tile site closest to `origin` in every coordinate. Since the product
/// kernel decreases in each `|x_i|`, this collection maximizes
/// [`balanced_kernel_sum`] among collections with at most `per_tile`
/// points per tile of the window.
pub fn extremal_collection(paving: &Paving, tiles: &SiteBox, per_tile: u64, origin: &Site) -> Vec<Site> {
    let mut out = Vec::new();
    for k in tiles.sites() {
        let tile = paving.tile(&k);
        let mut best = tile.lower();
        for a in 0..tile.dim() {
            let c = origin.get(a).clamp(tile.lower().get(a), tile.upper().get(a) - 1);
            best = best.shifted(a, c - best.get(a));
        }
        out.extend(core::iter::repeat_n(best, per_tile as usize));
    }
    out
}

/// Clock convention of a sampled walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WalkClock {
    /// Total jump rate 1, as in the engines.
    #[default]
    PerParticle,
    /// Total jump rate `d`: the kernel convention.
    PerCoordinate,
}

/// Continuous-time walk dynamics: holding times and jump targets.
pub trait JumpSource {
    fn holding_time(&mut self) -> f64;
    fn jump(&mut self, from: &Site) -> Site;
}

/// Continuous-time simple random walk.
#[derive(Debug, Clone)]
pub struct SrwSource {
    rng: SimRng,
    d: usize,
    rate: f64,
}

impl SrwSource {
    pub fn new(rng: SimRng, d: usize) -> Self {
        Self::with_clock(rng, d, WalkClock::PerParticle)
    }

    pub fn with_clock(rng: SimRng, d: usize, clock: WalkClock) -> Self {
        let rate = match clock {
            WalkClock::PerParticle => 1.0,
            WalkClock::PerCoordinate => d as f64,
        };
        Self { rng, d, rate }
    }
}

impl JumpSource for SrwSource {
    fn holding_time(&mut self) -> f64 {
        let e: f64 = Exp1.sample(&mut self.rng);
        e / self.rate
    }

    fn jump(&mut self, from: &Site) -> Site {
        let k = self.rng.random_range(0..2 * self.d);
        from.shifted(k / 2, if k % 2 == 0 { 1 } else { -1 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("walk did not stop within {jumps} jumps (time {time})")]
pub struct StopTimeout {
    pub jumps: u64,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("hopping lag {lag} is below side^2 = {min}")]
    LagTooShort { lag: f64, min: f64 },
    #[error("sieving scale must be at least 2, got {0}")]
    ScaleTooSmall(f64),
}

/// Observation times `t_l = l * lag`, `l >= 0`, looking for the walk in a
/// half-kernel of the paving.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HopSchedule {
    paving: Paving,
    lag: f64,
    pub max_hops: u64,
}

impl HopSchedule {
    pub fn new(paving: Paving, lag: f64) -> Result<Self, ScheduleError> {
        let min = (paving.side() * paving.side()) as f64;
        if !(lag >= min) {
            return Err(ScheduleError::LagTooShort { lag, min });
        }
        Ok(Self { paving, lag, max_hops: 1_000_000 })
    }

    pub fn paving(&self) -> &Paving {
        &self.paving
    }

    pub fn lag(&self) -> f64 {
        self.lag
    }
}

/// Sites where the sieving time may stop: the inner kernel boxes `C2` of
/// the paving with side `inner_side` and ring `inner_ring`, inside `outer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SievedSupport {
    pub outer: SiteBox,
    pub inner_side: u64,
    pub inner_ring: u64,
}

impl SievedSupport {
    pub fn contains(&self, x: &Site) -> bool {
        let (l, r) = (self.inner_side as i64, self.inner_ring as i64);
        self.outer.contains(x)
            && (0..x.dim()).all(|a| {
                let m = x.get(a).rem_euclid(l);
                2 * r <= m && m < l - 2 * r
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SieveTarget {
    All,
    Empty,
    Sites(BTreeSet<Site>),
    Sieved(SievedSupport),
}

impl SieveTarget {
    pub fn contains(&self, x: &Site) -> bool {
        match self {
            SieveTarget::All => true,
            SieveTarget::Empty => false,
            SieveTarget::Sites(s) => s.contains(x),
            SieveTarget::Sieved(b) => b.contains(x),
        }
    }
}

/// Observation times `t_s = s L^2.02`, `s >= 1`, capped at `L^2.04`.
#[derive(Debug, Clone, PartialEq)]
pub struct SieveSchedule {
    pub scale: f64,
    pub target: SieveTarget,
}

impl SieveSchedule {
    pub fn new(scale: f64, target: SieveTarget) -> Result<Self, ScheduleError> {
        if !(scale >= 2.0) {
            return Err(ScheduleError::ScaleTooSmall(scale));
        }
        Ok(Self { scale, target })
    }

    pub fn period(&self) -> f64 {
        libm::pow(self.scale, 2.02)
    }

    pub fn cap(&self) -> f64 {
        libm::pow(self.scale, 2.04)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StoppingRule {
    Immediately,
    AfterJumps(u64),
    /// First time outside the box (time 0 if the walk starts outside).
    FirstExit(SiteBox),
    Hopping(HopSchedule),
    Sieving(SieveSchedule),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stopped {
    pub time: f64,
    pub position: Site,
    pub jumps: u64,
    /// Largest sup-distance from the start before the stop.
    pub max_displacement: u64,
    /// The sieving cap was taken.
    pub capped: bool,
}

struct Walk<'a, S: JumpSource> {
    src: &'a mut S,
    start: Site,
    pos: Site,
    next_jump: f64,
    jumps: u64,
    max_disp: u64,
    budget: u64,
}

impl<S: JumpSource> Walk<'_, S> {
    fn jump(&mut self) -> Result<(), StopTimeout> {
        if self.jumps >= self.budget {
            return Err(StopTimeout { jumps: self.jumps, time: self.next_jump });
        }
        self.pos = self.src.jump(&self.pos);
        self.jumps += 1;
        let disp = crate::lattice::dist_linf(&self.pos, &self.start).expect("same dimension");
        self.max_disp = self.max_disp.max(disp);
        self.next_jump += self.src.holding_time();
        Ok(())
    }

    /// Performs every jump up to and including time `t`.
    fn advance_to(&mut self, t: f64) -> Result<(), StopTimeout> {
        while self.next_jump <= t {
            self.jump()?;
        }
        Ok(())
    }

    fn stopped(&self, time: f64, capped: bool) -> Stopped {
        Stopped { time, position: self.pos, jumps: self.jumps, max_displacement: self.max_disp, capped }
    }
}

/// Runs the walk from `start` until `rule` stops it, failing after
/// `max_jumps` jumps.
pub fn run_until<S: JumpSource>(rule: &StoppingRule, start: Site, src: &mut S, max_jumps: u64) -> Result<Stopped, StopTimeout> {
    let first = src.holding_time();
    let mut w = Walk { src, start, pos: start, next_jump: first, jumps: 0, max_disp: 0, budget: max_jumps };
    match rule {
        StoppingRule::Immediately => Ok(w.stopped(0.0, false)),
        StoppingRule::AfterJumps(n) => {
            let mut time = 0.0;
            while w.jumps < *n {
                time = w.next_jump;
                w.jump()?;
            }
            Ok(w.stopped(time, false))
        }
        StoppingRule::FirstExit(b) => {
            let mut time = 0.0;
            while b.contains(&w.pos) {
                time = w.next_jump;
                w.jump()?;
            }
            Ok(w.stopped(time, false))
        }
        StoppingRule::Hopping(h) => {
            for l in 0..=h.max_hops {
                let t = l as f64 * h.lag;
                w.advance_to(t)?;
                if h.paving.in_half_kernel(&w.pos) {
                    return Ok(w.stopped(t, false));
                }
            }
            Err(StopTimeout { jumps: w.jumps, time: h.max_hops as f64 * h.lag })
        }
        StoppingRule::Sieving(s) => {
            let (period, cap) = (s.period(), s.cap());
            let mut k = 1u64;
            loop {
                let t = k as f64 * period;
                if t > cap {
                    w.advance_to(cap)?;
                    return Ok(w.stopped(cap, true));
                }
                w.advance_to(t)?;
                if s.target.contains(&w.pos) {
                    return Ok(w.stopped(t, false));
                }
                k += 1;
            }
        }
    }
}

/// Hopping stop of a rate-1 walk from `start`.
pub fn hopping_stop(start: Site, schedule: &HopSchedule, seed: u64, max_jumps: u64) -> Result<Stopped, StopTimeout> {
    let mut src = SrwSource::new(rng::stream(seed), start.dim());
    run_until(&StoppingRule::Hopping(*schedule), start, &mut src, max_jumps)
}

/// Sieving stop of a rate-1 walk from `start`.
pub fn sieving_stop(start: Site, schedule: &SieveSchedule, seed: u64, max_jumps: u64) -> Result<Stopped, StopTimeout> {
    let mut src = SrwSource::new(rng::stream(seed), start.dim());
    run_until(&StoppingRule::Sieving(schedule.clone()), start, &mut src, max_jumps)
}
