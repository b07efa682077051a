//! The Stochastic Sandpile as an abelian message network.
//!
//! Processor `x` counts ordinary messages `q` and activation messages `r`.
//! It has emitted `f(q, r)` particles so far, each one to `x + y_j` where
//! `y_j` is the `j`-th entry of its direction tape, and it retains
//! `q - f(q, r)`.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand_distr::{Distribution, Exp1};

use crate::df::{DfError, Instruction, InstructionTapes, RunStatus, TapeLaw};
use crate::kernels::{run_until, JumpSource, StopTimeout, Stopped, StoppingRule};
use crate::lattice::{Site, SiteBox};
use crate::order::{OrderPolicy, Scheduler};
use crate::rng::{self, tags, SimRng};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SsmError {
    #[error("capacity kappa must be at least 1")]
    ZeroCapacity,
    #[error("sandpile tapes must carry directions only")]
    WrongTapes,
    #[error(transparent)]
    Tape(#[from] DfError),
    #[error("unbounded run: give a dissipation domain, an escape box or a step budget")]
    Unbounded,
    #[error("not stabilized after {processed} messages")]
    NonStabilized { processed: u64 },
    #[error("state at {site} is ({q}, {r}), not on the diagonal")]
    OffDiagonal { site: Site, q: u64, r: u64 },
    #[error("message {message} did not stop: {source}")]
    Timeout { message: usize, source: StopTimeout },
}

/// `f(q, r) = min{q, max{q - (q mod kappa), r}}`.
pub fn toppling_f(q: u64, r: u64, kappa: u64) -> Result<u64, SsmError> {
    if kappa == 0 {
        return Err(SsmError::ZeroCapacity);
    }
    Ok(q.min((q - q % kappa).max(r)))
}

#[inline]
fn f(q: u64, r: u64, kappa: u64) -> u64 {
    q.min((q - q % kappa).max(r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    Ordinary,
    Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ProcessorState {
    pub q: u64,
    pub r: u64,
}

impl ProcessorState {
    pub fn emitted(&self, kappa: u64) -> u64 {
        f(self.q, self.r, kappa)
    }

    pub fn retained(&self, kappa: u64) -> u64 {
        self.q - f(self.q, self.r, kappa)
    }

    /// Messages received so far, the sandpile counterpart of the odometer.
    pub fn messages(&self) -> u64 {
        self.q + self.r
    }
}

#[derive(Debug, Clone, Default)]
pub struct SsmRunOptions {
    pub budget: Option<u64>,
    pub escape: Option<SiteBox>,
}

/// Processors, direction tapes and the dissipation count.
#[derive(Debug, Clone)]
pub struct Network {
    kappa: u64,
    states: BTreeMap<Site, ProcessorState>,
    tapes: InstructionTapes,
    domain: Option<SiteBox>,
    pub dissipated: u64,
    pub processed: u64,
}

impl Network {
    pub fn new(kappa: u64, tapes: InstructionTapes, domain: Option<SiteBox>) -> Result<Self, SsmError> {
        if kappa == 0 {
            return Err(SsmError::ZeroCapacity);
        }
        if !matches!(tapes.law(), TapeLaw::Directions { .. }) {
            return Err(SsmError::WrongTapes);
        }
        Ok(Self { kappa, states: BTreeMap::new(), tapes, domain, dissipated: 0, processed: 0 })
    }

    /// Uniform direction tapes keyed by `seed`.
    pub fn with_random_tapes(kappa: u64, d: usize, seed: u64, domain: Option<SiteBox>) -> Result<Self, SsmError> {
        Self::new(kappa, InstructionTapes::random(TapeLaw::Directions { d }, seed)?, domain)
    }

    pub fn kappa(&self) -> u64 {
        self.kappa
    }

    pub fn domain(&self) -> Option<&SiteBox> {
        self.domain.as_ref()
    }

    pub fn state(&self, x: &Site) -> ProcessorState {
        self.states.get(x).copied().unwrap_or_default()
    }

    pub fn set_state(&mut self, x: Site, s: ProcessorState) {
        self.states.insert(x, s);
    }

    pub fn states(&self) -> &BTreeMap<Site, ProcessorState> {
        &self.states
    }

    pub fn retained(&self, x: &Site) -> u64 {
        self.state(x).retained(self.kappa)
    }

    pub fn total_retained(&self) -> u64 {
        self.states.values().map(|s| s.retained(self.kappa)).sum()
    }

    /// Processor `x` takes one message and returns the targets of the
    /// particles it emits in response, in tape order.
    pub fn receive(&mut self, x: &Site, kind: MessageKind) -> Result<Vec<Site>, SsmError> {
        let old = self.state(x);
        let mut new = old;
        match kind {
            MessageKind::Ordinary => new.q += 1,
            MessageKind::Activation => new.r += 1,
        }
        self.states.insert(*x, new);
        self.processed += 1;
        let (from, to) = (old.emitted(self.kappa), new.emitted(self.kappa));
        let mut out = Vec::with_capacity((to - from) as usize);
        for j in from..to {
            let ins = self.tapes.read(x, j)?;
            out.push(ins.target(x).expect("direction tapes never sleep"));
        }
        Ok(out)
    }

    fn inside(&self, x: &Site) -> bool {
        self.domain.is_none_or(|b| b.contains(x))
    }

    /// Delivers `messages` and everything they trigger. A message sent
    /// outside the domain is dropped and counted as dissipated; a particle
    /// arriving on the internal boundary of `opts.escape` ends the run.
    pub fn run(&mut self, messages: &[(Site, MessageKind)], policy: OrderPolicy, opts: &SsmRunOptions) -> Result<RunStatus, SsmError> {
        if self.domain.is_none() && opts.escape.is_none() && opts.budget.is_none() {
            return Err(SsmError::Unbounded);
        }
        let touches = |x: &Site| opts.escape.is_some_and(|b| !b.contains(x) || b.on_internal_boundary(x));
        let mut queue = Scheduler::new(policy);
        for (x, k) in messages {
            if *k == MessageKind::Ordinary && touches(x) {
                return Ok(RunStatus::Escaped(*x));
            }
            if self.inside(x) {
                queue.push((*x, *k));
            } else if *k == MessageKind::Ordinary {
                self.dissipated += 1;
            }
        }
        let mut used = 0u64;
        while let Some((x, kind)) = queue.pop() {
            if opts.budget.is_some_and(|b| used >= b) {
                return Ok(RunStatus::BudgetExhausted);
            }
            used += 1;
            for z in self.receive(&x, kind)? {
                if !self.inside(&z) {
                    self.dissipated += 1;
                    continue;
                }
                if touches(&z) {
                    return Ok(RunStatus::Escaped(z));
                }
                queue.push((z, MessageKind::Ordinary));
            }
        }
        Ok(RunStatus::Stable)
    }
}

/// Final state of a stabilization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SsmOutcome {
    pub states: BTreeMap<Site, ProcessorState>,
    pub retained: BTreeMap<Site, u64>,
    pub dissipated: u64,
    pub processed: u64,
}

/// Processes every initial message and all consequences.
pub fn stabilize_ssm(
    messages: &[(Site, MessageKind)],
    tapes: InstructionTapes,
    policy: OrderPolicy,
    kappa: u64,
    domain: Option<SiteBox>,
    budget: Option<u64>,
) -> Result<SsmOutcome, SsmError> {
    let mut net = Network::new(kappa, tapes, domain)?;
    match net.run(messages, policy, &SsmRunOptions { budget, escape: None })? {
        RunStatus::Stable => Ok(SsmOutcome {
            retained: net
                .states
                .iter()
                .map(|(x, s)| (*x, s.retained(kappa)))
                .filter(|(_, n)| *n > 0)
                .collect(),
            states: net.states,
            dissipated: net.dissipated,
            processed: net.processed,
        }),
        _ => Err(SsmError::NonStabilized { processed: net.processed }),
    }
}

/// Moves one message by pairing it with an activation at its current site.
struct DiagonalHop<'a> {
    net: &'a mut Network,
    clock: SimRng,
    first_error: Option<SsmError>,
}

impl JumpSource for DiagonalHop<'_> {
    fn holding_time(&mut self) -> f64 {
        Exp1.sample(&mut self.clock)
    }

    fn jump(&mut self, from: &Site) -> Site {
        let mut out = Vec::new();
        for kind in [MessageKind::Ordinary, MessageKind::Activation] {
            match self.net.receive(from, kind) {
                Ok(v) => out.extend(v),
                Err(e) => {
                    self.first_error.get_or_insert(e);
                }
            }
        }
        debug_assert_eq!(out.len(), 1);
        out.pop().unwrap_or(*from)
    }
}

/// Sleep turned off for the sandpile: every processor starts on the
/// diagonal `q = r`, each pending message is followed by an activation at
/// the same site, so `f(q, q) = q` forces exactly one hop in the direction
/// of the next tape entry. Messages move one after the other with rate-1
/// exponential holding times until their rules stop them.
pub fn off_sleep_ssm(
    net: &mut Network,
    messages: &[Site],
    rules: &[StoppingRule],
    seed: u64,
    max_jumps: u64,
) -> Result<Vec<Stopped>, SsmError> {
    assert_eq!(messages.len(), rules.len(), "one stopping rule per message");
    if let Some((x, s)) = net.states.iter().find(|(_, s)| s.q != s.r) {
        return Err(SsmError::OffDiagonal { site: *x, q: s.q, r: s.r });
    }
    let mut out = Vec::with_capacity(messages.len());
    for (i, (x, rule)) in messages.iter().zip(rules).enumerate() {
        let mut hop = DiagonalHop {
            net: &mut *net,
            clock: rng::indexed_stream(seed, tags::WALK, i as u64),
            first_error: None,
        };
        let res = run_until(rule, *x, &mut hop, max_jumps);
        if let Some(e) = hop.first_error {
            return Err(e);
        }
        out.push(res.map_err(|source| SsmError::Timeout { message: i, source })?);
    }
    Ok(out)
}

/// Explicit direction tapes from labels such as `"+1"` or `"-2"`.
pub fn direction_tapes(d: usize, tapes: &[(Site, &[&str])]) -> Result<InstructionTapes, SsmError> {
    let mut map = BTreeMap::new();
    for (x, t) in tapes {
        let mut v = Vec::with_capacity(t.len());
        for label in *t {
            let ins = Instruction::parse(label, d)?;
            if ins == Instruction::Sleep {
                return Err(SsmError::WrongTapes);
            }
            v.push(ins);
        }
        map.insert(*x, v);
    }
    Ok(InstructionTapes::explicit(TapeLaw::Directions { d }, map))
}
