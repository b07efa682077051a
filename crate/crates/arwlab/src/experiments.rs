//! Monte Carlo harnesses on top of the engines.
//!
//! Every trial owns its randomness: trial `i` under master seed `s` draws
//! everything from `derive_seed(s, [TRIAL, i])`, so a report only depends
//! on the spec and never on the number of worker threads. Rayon preserves
//! index order when collecting, which keeps the aggregation deterministic.

use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use arwlab_core::arw::{simulate_ct, CtOptions, RateConvention, SiteConfig, SiteValue};
use arwlab_core::df::{poisson_inverse, truncate_initial, DfError, InstructionTapes, RunOptions, RunStatus, TapeLaw, World};
use arwlab_core::lattice::{GeometryError, Paving, Site, SiteBox};
use arwlab_core::order::OrderPolicy;
use arwlab_core::rng::{derive_seed, site_seed, stream};
use arwlab_core::ssm::{MessageKind, Network, SsmRunOptions};

use crate::stats::{wilson_interval, Z95};

pub mod tags {
    pub const TRIAL: u64 = 0x7472_6961;
    pub const START: u64 = 0x7374_6172;
    pub const TAPES: u64 = 0x7461_7073;
    pub const CLOCK: u64 = 0x636c_6f63;
    pub const INSERT: u64 = 0x696e_7372;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExperimentError {
    #[error("trials must be positive")]
    NoTrials,
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn spec_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Spec(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum Model {
    Arw { lambda: f64 },
    Ssm { kappa: u64 },
}

impl Model {
    fn validate(&self) -> Result<(), ExperimentError> {
        match *self {
            Model::Arw { lambda } if !(lambda > 0.0 && lambda.is_finite()) => Err(spec_err("lambda must be positive")),
            Model::Ssm { kappa: 0 } => Err(spec_err("kappa must be positive")),
            _ => Ok(()),
        }
    }

    fn law(&self, d: usize) -> TapeLaw {
        match *self {
            Model::Arw { lambda } => TapeLaw::Arw { lambda, d },
            Model::Ssm { .. } => TapeLaw::Directions { d },
        }
    }
}

pub fn trial_seed(master: u64, index: u64) -> u64 {
    derive_seed(master, &[tags::TRIAL, index])
}

/// Particle counts drawn site by site from `Poisson(zeta)`. Each site reads
/// its own uniform, so the sample on a sub-box is the restriction of the
/// sample on a larger box and counts only grow with `zeta`.
pub fn poisson_field(region: &SiteBox, zeta: f64, seed: u64) -> Vec<(Site, u32)> {
    region
        .sites()
        .filter_map(|x| {
            let u: f64 = stream(site_seed(seed, tags::START, &x)).random();
            let n = poisson_inverse(zeta, u);
            (n > 0).then_some((x, n))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum Start {
    Poisson { zeta: f64, region: SiteBox },
    /// Explicit positions; repeats put several particles on one site.
    Fixed(Vec<Site>),
}

impl Start {
    fn sample(&self, seed: u64) -> Vec<(Site, u32)> {
        match self {
            Start::Poisson { zeta, region } => poisson_field(region, *zeta, seed),
            Start::Fixed(sites) => {
                let mut out: Vec<(Site, u32)> = Vec::new();
                for x in sites {
                    match out.iter_mut().find(|(y, _)| y == x) {
                        Some((_, n)) => *n += 1,
                        None => out.push((*x, 1)),
                    }
                }
                out
            }
        }
    }

    fn check_inside(&self, interior: &SiteBox) -> Result<(), ExperimentError> {
        let ok = match self {
            Start::Poisson { zeta, region } => {
                if !(*zeta >= 0.0 && zeta.is_finite()) {
                    return Err(spec_err("zeta must be nonnegative"));
                }
                region.dim() == interior.dim() && interior.contains_box(region)
            }
            Start::Fixed(sites) => sites.iter().all(|x| x.dim() == interior.dim() && interior.contains(x)),
        };
        if ok {
            Ok(())
        } else {
            Err(spec_err("start region must lie inside the escape box, off its internal boundary"))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EscapeSpec {
    pub model: Model,
    pub start: Start,
    pub escape_box: SiteBox,
    pub trials: u64,
    pub seed: u64,
    pub policy: OrderPolicy,
    pub budget: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Escaped,
    Contained,
    /// Budget exhausted or engine error; excluded from the estimate.
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub seed: u64,
    pub particles: u64,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialReport {
    pub trials: u64,
    pub successes: u64,
    pub flagged: u64,
    pub estimate: f64,
    pub interval: [f64; 2],
    pub seed: u64,
    pub seeds: Vec<u64>,
    #[serde(skip)]
    pub records: Vec<TrialRecord>,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl TrialReport {
    pub fn from_records(seed: u64, records: Vec<TrialRecord>, wall_time: Duration) -> Self {
        let flagged = records.iter().filter(|r| r.outcome == Outcome::Flagged).count() as u64;
        let successes = records.iter().filter(|r| r.outcome == Outcome::Escaped).count() as u64;
        let used = records.len() as u64 - flagged;
        let estimate = if used == 0 { 0.0 } else { successes as f64 / used as f64 };
        let (lo, hi) = wilson_interval(successes, used, Z95);
        Self {
            trials: records.len() as u64,
            successes,
            flagged,
            estimate,
            interval: [lo, hi],
            seed,
            seeds: records.iter().map(|r| r.seed).collect(),
            records,
            wall_time,
        }
    }
}

/// Runs one start configuration until a particle touches the internal
/// boundary of `escape_box` (success) or everything settles.
pub fn escape_trial(
    model: Model,
    start: &[(Site, u32)],
    escape_box: &SiteBox,
    tape_seed: u64,
    policy: OrderPolicy,
    budget: Option<u64>,
) -> Outcome {
    let d = escape_box.dim();
    let Ok(tapes) = InstructionTapes::random(model.law(d), tape_seed) else {
        return Outcome::Flagged;
    };
    let status = match model {
        Model::Arw { .. } => {
            let mut config = SiteConfig::new();
            for (x, n) in start {
                config.set(*x, SiteValue::Active(*n));
            }
            let mut w = World::new(config, tapes, None);
            w.run(policy, &RunOptions { budget, escape: Some(*escape_box) }).ok()
        }
        Model::Ssm { kappa } => {
            let msgs: Vec<(Site, MessageKind)> =
                start.iter().flat_map(|(x, n)| (0..*n).map(move |_| (*x, MessageKind::Ordinary))).collect();
            Network::new(kappa, tapes, None)
                .ok()
                .and_then(|mut net| net.run(&msgs, policy, &SsmRunOptions { budget, escape: Some(*escape_box) }).ok())
        }
    };
    match status {
        Some(RunStatus::Escaped(_)) => Outcome::Escaped,
        Some(RunStatus::Stable) => Outcome::Contained,
        _ => Outcome::Flagged,
    }
}

fn validate_escape(spec: &EscapeSpec) -> Result<(), ExperimentError> {
    if spec.trials == 0 {
        return Err(ExperimentError::NoTrials);
    }
    spec.model.validate()?;
    let interior = spec.escape_box.shrink(1).ok_or_else(|| spec_err("escape box has no interior"))?;
    spec.start.check_inside(&interior)
}

fn run_escape(spec: &EscapeSpec, start: &Start, i: u64) -> TrialRecord {
    let seed = trial_seed(spec.seed, i);
    let sample = start.sample(seed);
    let outcome = escape_trial(spec.model, &sample, &spec.escape_box, derive_seed(seed, &[tags::TAPES]), spec.policy, spec.budget);
    TrialRecord { trial: i, seed, particles: sample.iter().map(|(_, n)| *n as u64).sum(), outcome }
}

/// Probability that some particle started per `spec.start` reaches the
/// internal boundary of `spec.escape_box`.
pub fn estimate_escape(spec: &EscapeSpec) -> Result<TrialReport, ExperimentError> {
    validate_escape(spec)?;
    let t0 = Instant::now();
    let records: Vec<TrialRecord> = (0..spec.trials).into_par_iter().map(|i| run_escape(spec, &spec.start, i)).collect();
    Ok(TrialReport::from_records(spec.seed, records, t0.elapsed()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedEscape {
    pub larger: TrialReport,
    pub smaller: TrialReport,
    /// Pairs where the smaller start escaped but the larger did not.
    pub violations: u64,
}

/// Runs `spec` and a second start on the same trial seeds and tapes. When
/// `smaller` samples a subset of `spec.start` (a sub-region of a Poisson
/// start, or fewer fixed points) every pair is ordered.
pub fn estimate_escape_paired(spec: &EscapeSpec, smaller: &Start) -> Result<PairedEscape, ExperimentError> {
    validate_escape(spec)?;
    validate_escape(&EscapeSpec { start: smaller.clone(), ..spec.clone() })?;
    let t0 = Instant::now();
    let pairs: Vec<(TrialRecord, TrialRecord)> =
        (0..spec.trials).into_par_iter().map(|i| (run_escape(spec, &spec.start, i), run_escape(spec, smaller, i))).collect();
    let wall = t0.elapsed();
    let violations = pairs
        .iter()
        .filter(|(big, small)| small.outcome == Outcome::Escaped && big.outcome == Outcome::Contained)
        .count() as u64;
    let (big, small): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(PairedEscape {
        larger: TrialReport::from_records(spec.seed, big, wall),
        smaller: TrialReport::from_records(spec.seed, small, wall),
        violations,
    })
}

/// Every tile of `paving` holds at most `zeta * side^d` of the points.
pub fn is_balanced(points: &[Site], paving: &Paving, zeta: f64) -> Result<bool, ExperimentError> {
    Ok(paving.is_balanced(points, zeta)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixationSpec {
    pub d: usize,
    pub zeta: f64,
    pub lambda: f64,
    pub m_ladder: Vec<u64>,
    pub horizon: f64,
    pub l_grid: Vec<u64>,
    pub trials: u64,
    pub seed: u64,
    pub rates: RateConvention,
    /// Step budget of each tape stabilization.
    pub budget: u64,
}

/// One trial at one truncation radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixationSample {
    pub m: u64,
    pub trial: u64,
    /// Changes of `eta_t(0)` over `[0, horizon]` in the timed dynamics.
    pub changes: u64,
    /// Burns at the origin plus arrivals into it when the same initial
    /// field is stabilized on tapes inside `B(0, 2M + 1)`; `None` when the
    /// budget ran out.
    pub activity: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixationCell {
    pub m: u64,
    pub l: u64,
    pub changes_tail: f64,
    pub activity_tail: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixationTable {
    pub cells: Vec<FixationCell>,
    pub samples: Vec<FixationSample>,
    /// Tape runs that hit the budget; they count as exceeding every `l`.
    pub flagged: u64,
    pub wall_time: Duration,
}

impl FixationTable {
    pub fn cell(&self, m: u64, l: u64) -> Option<&FixationCell> {
        self.cells.iter().find(|c| c.m == m && c.l == l)
    }
}

/// Origin activity of the tape stabilization: `J_0` plus the number of
/// particles sent into the origin by its neighbours. Monotone in the
/// initial field for fixed tapes.
fn origin_activity(initial: &SiteConfig, tapes: InstructionTapes, domain: SiteBox, budget: u64) -> Option<u64> {
    let mut w = World::new(initial.clone(), tapes, Some(domain));
    match w.run(OrderPolicy::Fifo, &RunOptions { budget: Some(budget), escape: None }) {
        Ok(RunStatus::Stable) => {}
        _ => return None,
    }
    let origin = Site::origin(domain.dim());
    let mut arrivals = 0;
    for y in origin.neighbors().collect::<Vec<_>>() {
        for j in 0..w.odometer.get(&y) {
            let ins = w.tapes.read(&y, j).ok()?;
            if ins.target(&y) == Some(origin) {
                arrivals += 1;
            }
        }
    }
    Some(w.odometer.get(&origin) + arrivals)
}

fn fixation_sample(spec: &FixationSpec, m: u64, i: u64) -> FixationSample {
    let seed = trial_seed(spec.seed, i);
    let initial = truncate_initial(|_| spec.zeta, m, spec.d, seed);
    let origin = Site::origin(spec.d);
    let opts = CtOptions { rates: spec.rates, ..CtOptions::default() };
    let changes = simulate_ct(&initial, spec.lambda, spec.horizon, &[origin], None, derive_seed(seed, &[tags::CLOCK]), &opts)
        .map(|r| r.counters.get(&origin).map_or(0, |c| c.changes))
        .unwrap_or(0);
    let r = 2 * m + 1;
    let domain = SiteBox::cube(Site::splat(spec.d, -(r as i64)), 2 * r + 1).expect("positive side");
    let activity = InstructionTapes::random(TapeLaw::Arw { lambda: spec.lambda, d: spec.d }, derive_seed(seed, &[tags::TAPES]))
        .ok()
        .and_then(|tapes| origin_activity(&initial, tapes, domain, spec.budget));
    FixationSample { m, trial: i, changes, activity }
}

/// `P[R_s >= l]` per truncation radius `M`, estimated from `trials` runs of
/// the timed dynamics started from the Poisson field restricted to
/// `B(0, M)`, alongside the tail of the tape activity at the origin.
/// Trial `i` uses the same site uniforms and tapes for every `M` and every
/// `zeta`.
pub fn fixation_tail(spec: &FixationSpec) -> Result<FixationTable, ExperimentError> {
    if spec.trials == 0 {
        return Err(ExperimentError::NoTrials);
    }
    Model::Arw { lambda: spec.lambda }.validate()?;
    if spec.m_ladder.is_empty() || spec.m_ladder.windows(2).any(|w| w[0] >= w[1]) {
        return Err(spec_err("M ladder must be nonempty and strictly increasing"));
    }
    if !(spec.zeta >= 0.0 && spec.zeta.is_finite()) || !(spec.horizon >= 0.0) {
        return Err(spec_err("zeta and horizon must be nonnegative"));
    }
    if spec.d == 0 || spec.d > arwlab_core::lattice::MAX_DIM {
        return Err(spec_err("unsupported dimension"));
    }
    let t0 = Instant::now();
    let jobs: Vec<(u64, u64)> = spec.m_ladder.iter().flat_map(|&m| (0..spec.trials).map(move |i| (m, i))).collect();
    let samples: Vec<FixationSample> = jobs.par_iter().map(|&(m, i)| fixation_sample(spec, m, i)).collect();
    let n = spec.trials as f64;
    let mut cells = Vec::new();
    for &m in &spec.m_ladder {
        let row: Vec<&FixationSample> = samples.iter().filter(|s| s.m == m).collect();
        for &l in &spec.l_grid {
            let changes = row.iter().filter(|s| s.changes >= l).count() as f64;
            let activity = row.iter().filter(|s| s.activity.is_none_or(|a| a >= l)).count() as f64;
            cells.push(FixationCell { m, l, changes_tail: changes / n, activity_tail: activity / n });
        }
    }
    let flagged = samples.iter().filter(|s| s.activity.is_none()).count() as u64;
    Ok(FixationTable { cells, samples, flagged, wall_time: t0.elapsed() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdSpec {
    pub n: u64,
    pub d: usize,
    pub model: Model,
    pub insertions: u64,
    pub seed: u64,
    pub policy: OrderPolicy,
    /// Step budget of each stabilization.
    pub budget: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DdPoint {
    pub inserted: u64,
    pub remaining: u64,
    pub dissipated: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DdState {
    pub n: u64,
    pub d: usize,
    pub model: Model,
    pub curve: Vec<DdPoint>,
    /// A stabilization ran out of budget; the curve stops before it.
    pub aborted: bool,
}

enum Driven {
    Walks(World),
    Grains(Network),
}

/// Adds particles one at a time at uniform sites of `[0, n)^d` and
/// stabilizes with dissipation at the boundary after each one.
pub fn driven_dissipation(spec: &DdSpec) -> Result<DdState, ExperimentError> {
    if spec.n == 0 {
        return Err(spec_err("box side must be positive"));
    }
    spec.model.validate()?;
    let d = spec.d;
    let domain = SiteBox::cube(Site::origin(d), spec.n)?;
    let tapes = InstructionTapes::random(spec.model.law(d), derive_seed(spec.seed, &[tags::TAPES]))
        .map_err(|e: DfError| spec_err(e.to_string()))?;
    let mut engine = match spec.model {
        Model::Arw { .. } => Driven::Walks(World::new(SiteConfig::new(), tapes, Some(domain))),
        Model::Ssm { kappa } => Driven::Grains(Network::new(kappa, tapes, Some(domain)).map_err(|e| spec_err(e.to_string()))?),
    };
    let mut place = stream(derive_seed(spec.seed, &[tags::INSERT]));
    let mut state = DdState { n: spec.n, d, model: spec.model, curve: Vec::with_capacity(spec.insertions as usize), aborted: false };
    for m in 1..=spec.insertions {
        let coords: Vec<i64> = (0..d).map(|_| place.random_range(0..spec.n) as i64).collect();
        let x = Site::new(&coords)?;
        let (status, remaining, dissipated) = match &mut engine {
            Driven::Walks(w) => {
                w.config.add_active(x);
                let s = w.run(spec.policy, &RunOptions { budget: spec.budget, escape: None });
                (s.ok(), w.config.total_particles(), w.dissipated)
            }
            Driven::Grains(net) => {
                let opts = SsmRunOptions { budget: spec.budget, escape: None };
                let s = net.run(&[(x, MessageKind::Ordinary)], spec.policy, &opts);
                (s.ok(), net.total_retained(), net.dissipated)
            }
        };
        if status != Some(RunStatus::Stable) {
            state.aborted = true;
            break;
        }
        state.curve.push(DdPoint { inserted: m, remaining, dissipated });
    }
    Ok(state)
}
