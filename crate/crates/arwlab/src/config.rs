//! Resolved run configurations, one per subcommand. Each is read from the
//! JSON config file with flag overrides merged on top, filled with the
//! defaults below, and echoed verbatim into every output file.

use std::collections::BTreeMap;

use clap::ValueEnum;
use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};

use arwlab_core::arw::{RateConvention, SiteConfig, SiteValue};
use arwlab_core::df::{Instruction, InstructionTapes, TapeLaw};
use arwlab_core::lattice::{Site, SiteBox, MAX_DIM};
use arwlab_core::multiscale::Gamma;
use arwlab_core::order::OrderPolicy;
use arwlab_core::rng::derive_seed;

use crate::experiments::Model;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

pub fn bad(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    Fifo,
    SiteSweep,
    MaxOccupancy,
    /// Uniformly random pending particle, keyed by the run seed.
    Random,
}

impl PolicyName {
    pub fn policy(self, seed: u64) -> OrderPolicy {
        match self {
            PolicyName::Fifo => OrderPolicy::Fifo,
            PolicyName::SiteSweep => OrderPolicy::SiteSweep,
            PolicyName::MaxOccupancy => OrderPolicy::MaxOccupancy,
            PolicyName::Random => OrderPolicy::RandomParticle { seed: derive_seed(seed, &[0x6f72_6472]) },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelName {
    Arw,
    Ssm,
}

pub fn model(name: ModelName, lambda: f64, kappa: Option<u64>) -> Result<Model, ConfigError> {
    match name {
        ModelName::Arw => {
            if !(lambda > 0.0 && lambda.is_finite()) {
                return Err(bad("lambda must be positive"));
            }
            Ok(Model::Arw { lambda })
        }
        ModelName::Ssm => match kappa {
            Some(0) => Err(bad("kappa must be positive")),
            Some(k) => Ok(Model::Ssm { kappa: k }),
            None => Err(bad("kappa is required for the ssm model")),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RatesName {
    /// Each active particle jumps at rate 1.
    Walk,
    /// Each active particle jumps at rate 1 along each of the 2d edges.
    Generator,
}

impl RatesName {
    pub fn convention(self) -> RateConvention {
        match self {
            RatesName::Walk => RateConvention::WalkRateOne,
            RatesName::Generator => RateConvention::Generator,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum StartName {
    Poisson,
    Fixed,
}

fn check_dim(d: usize) -> Result<(), ConfigError> {
    if d == 0 || d > MAX_DIM {
        return Err(bad(format!("dimension must be in 1..={MAX_DIM}")));
    }
    Ok(())
}

pub fn site(coords: &[i64], d: usize) -> Result<Site, ConfigError> {
    if coords.len() != d {
        return Err(bad(format!("site {coords:?} does not have {d} coordinates")));
    }
    Site::new(coords).map_err(|e| bad(e.to_string()))
}

/// `side` may list one length per axis or a single length for a cube.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxConfig {
    pub lower: Vec<i64>,
    pub side: Vec<u64>,
}

impl BoxConfig {
    pub fn to_box(&self, d: usize) -> Result<SiteBox, ConfigError> {
        let lower = site(&self.lower, d)?;
        let sides = match self.side.as_slice() {
            [s] => vec![*s; d],
            s if s.len() == d => s.to_vec(),
            _ => return Err(bad("box side needs one entry or one per axis")),
        };
        SiteBox::new(lower, &sides).map_err(|e| bad(e.to_string()))
    }

    pub fn from_box(b: &SiteBox) -> Self {
        Self { lower: b.lower().coords().to_vec(), side: (0..b.dim()).map(|a| b.side(a)).collect() }
    }
}

/// Parses a rational such as `"1/10"` or `"3"`.
pub fn rational(s: &str) -> Result<BigRational, ConfigError> {
    let err = || bad(format!("not a rational number: {s:?}"));
    let (n, d) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s.trim(), "1"),
    };
    let n: BigInt = n.parse().map_err(|_| err())?;
    let d: BigInt = d.parse().map_err(|_| err())?;
    if d == BigInt::from(0) {
        return Err(err());
    }
    Ok(BigRational::new(n, d))
}

pub fn gamma(s: &str) -> Result<Gamma, ConfigError> {
    let (n, d) = s.split_once('/').ok_or_else(|| bad(format!("gamma must be written num/den, got {s:?}")))?;
    let n: u32 = n.trim().parse().map_err(|_| bad("bad gamma numerator"))?;
    let d: u32 = d.trim().parse().map_err(|_| bad("bad gamma denominator"))?;
    Gamma::new(n, d).map_err(|e| bad(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeometryConfig {
    pub d: usize,
    pub side: u64,
    pub ring: u64,
    /// Tile index of the kernel boxes; the origin tile by default.
    pub index: Option<Vec<i64>>,
    pub i0: u32,
    pub i_max: u32,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        Self { d: 2, side: 10, ring: 2, index: None, i0: 0, i_max: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleEntry {
    pub site: Vec<i64>,
    #[serde(default = "one")]
    pub count: u32,
    #[serde(default)]
    pub sleeping: bool,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoissonInit {
    pub zeta: f64,
    pub region: BoxConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilizeConfig {
    pub model: ModelName,
    pub d: usize,
    pub lambda: f64,
    pub kappa: Option<u64>,
    pub initial: Vec<ParticleEntry>,
    /// Poisson field added on top of `initial`.
    pub poisson: Option<PoissonInit>,
    /// Tape prefixes keyed by comma-separated coordinates, e.g. `"0,1"`;
    /// entries past a prefix are drawn from the seed.
    pub tapes: BTreeMap<String, Vec<String>>,
    pub domain: Option<BoxConfig>,
    pub budget: Option<u64>,
    pub policy: PolicyName,
    pub seed: u64,
}

impl Default for StabilizeConfig {
    fn default() -> Self {
        Self {
            model: ModelName::Arw,
            d: 1,
            lambda: 1.0,
            kappa: None,
            initial: Vec::new(),
            poisson: None,
            tapes: BTreeMap::new(),
            domain: None,
            budget: Some(100_000_000),
            policy: PolicyName::Fifo,
            seed: 0,
        }
    }
}

impl StabilizeConfig {
    pub fn particles(&self) -> Result<SiteConfig, ConfigError> {
        check_dim(self.d)?;
        let mut c = SiteConfig::new();
        for p in &self.initial {
            let x = site(&p.site, self.d)?;
            if c.get(&x) != SiteValue::EMPTY {
                return Err(bad(format!("site {x} listed twice")));
            }
            match (p.sleeping, p.count) {
                (_, 0) => {}
                (true, 1) => c.set(x, SiteValue::Sleeping),
                (true, _) => return Err(bad(format!("only one particle can sleep at {x}"))),
                (false, n) => c.set(x, SiteValue::Active(n)),
            }
        }
        if let Some(p) = &self.poisson {
            let region = p.region.to_box(self.d)?;
            if !(p.zeta >= 0.0 && p.zeta.is_finite()) {
                return Err(bad("zeta must be nonnegative"));
            }
            for (x, n) in crate::experiments::poisson_field(&region, p.zeta, self.seed) {
                let v = match c.get(&x) {
                    SiteValue::Active(m) => m + n,
                    SiteValue::Sleeping => n + 1,
                };
                c.set(x, SiteValue::Active(v));
            }
        }
        Ok(c)
    }

    pub fn tapes(&self, law: TapeLaw) -> Result<InstructionTapes, ConfigError> {
        let mut prefixes = BTreeMap::new();
        for (key, labels) in &self.tapes {
            let coords = key
                .split(',')
                .map(|c| c.trim().parse::<i64>().map_err(|_| bad(format!("bad tape site {key:?}"))))
                .collect::<Result<Vec<_>, _>>()?;
            let x = site(&coords, self.d)?;
            let ins = labels
                .iter()
                .map(|l| Instruction::parse(l, self.d).map_err(|e| bad(e.to_string())))
                .collect::<Result<Vec<_>, _>>()?;
            prefixes.insert(x, ins);
        }
        let tapes = InstructionTapes::random(law, self.seed).map_err(|e| bad(e.to_string()))?;
        Ok(tapes.with_prefixes(prefixes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EscapeConfig {
    pub model: ModelName,
    pub lambda: f64,
    pub kappa: Option<u64>,
    pub d: usize,
    /// Escape box `[box_lower, box_lower + box_side)^d`.
    pub box_side: u64,
    pub box_lower: Option<Vec<i64>>,
    pub start: StartName,
    pub zeta: f64,
    /// Poisson start region; the escape box minus its internal boundary by
    /// default.
    pub region: Option<BoxConfig>,
    pub sites: Vec<Vec<i64>>,
    pub trials: u64,
    pub seed: u64,
    pub policy: PolicyName,
    pub budget: Option<u64>,
}

impl Default for EscapeConfig {
    fn default() -> Self {
        Self {
            model: ModelName::Arw,
            lambda: 1.0,
            kappa: None,
            d: 2,
            box_side: 10,
            box_lower: None,
            start: StartName::Poisson,
            zeta: 0.5,
            region: None,
            sites: Vec::new(),
            trials: 1000,
            seed: 0,
            policy: PolicyName::Fifo,
            budget: Some(100_000_000),
        }
    }
}

impl EscapeConfig {
    pub fn escape_box(&self) -> Result<SiteBox, ConfigError> {
        check_dim(self.d)?;
        let lower = match &self.box_lower {
            Some(l) => site(l, self.d)?,
            None => Site::origin(self.d),
        };
        SiteBox::cube(lower, self.box_side).map_err(|e| bad(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixationConfig {
    pub d: usize,
    pub zeta: f64,
    pub lambda: f64,
    pub m_ladder: Vec<u64>,
    pub horizon: f64,
    pub l_grid: Vec<u64>,
    pub trials: u64,
    pub seed: u64,
    pub rates: RatesName,
    pub budget: u64,
}

impl Default for FixationConfig {
    fn default() -> Self {
        Self {
            d: 1,
            zeta: 0.5,
            lambda: 1.0,
            m_ladder: vec![2, 4, 8],
            horizon: 10.0,
            l_grid: vec![1, 2, 4, 8, 16, 32],
            trials: 200,
            seed: 0,
            rates: RatesName::Walk,
            budget: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdConfig {
    pub model: ModelName,
    pub lambda: f64,
    pub kappa: Option<u64>,
    pub n: u64,
    pub d: usize,
    pub insertions: u64,
    pub seed: u64,
    pub policy: PolicyName,
    pub budget: Option<u64>,
}

impl Default for DdConfig {
    fn default() -> Self {
        Self {
            model: ModelName::Ssm,
            lambda: 1.0,
            kappa: None,
            n: 30,
            d: 2,
            insertions: 500,
            seed: 0,
            policy: PolicyName::Fifo,
            budget: Some(100_000_000),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecursionConfig {
    pub l0: u64,
    pub gamma: String,
    pub d: u32,
    pub c3: f64,
    pub c4: f64,
    pub kbar: usize,
    /// `ln p_kbar`; `-ln^2 L_kbar` by default.
    pub ln_p_kbar: Option<f64>,
    pub k_max: usize,
    pub zeta0: String,
}

impl Default for RecursionConfig {
    fn default() -> Self {
        Self {
            l0: 10_000,
            gamma: "1/10".into(),
            d: 1,
            c3: 1.0,
            c4: 1000.0,
            kbar: 0,
            ln_p_kbar: None,
            k_max: 20,
            zeta0: "1/100".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SltConfig {
    pub d: usize,
    pub starts: Vec<Vec<i64>>,
    pub t: f64,
    pub zeta_prime: f64,
    pub domain: BoxConfig,
    pub window: Option<BoxConfig>,
    pub eps: f64,
    pub scale: f64,
    pub guard: f64,
    pub cloud_height: f64,
    pub seed: u64,
}

impl Default for SltConfig {
    fn default() -> Self {
        Self {
            d: 1,
            starts: vec![vec![0], vec![0], vec![3]],
            t: 100.0,
            zeta_prime: 1.0,
            domain: BoxConfig { lower: vec![-5], side: vec![11] },
            window: None,
            eps: 1e-12,
            scale: 10.0,
            guard: 1.0,
            cloud_height: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelConfig {
    pub t: Vec<f64>,
    pub d: usize,
    pub eps: f64,
    /// Largest `|x_i|` tabulated; the support radius by default.
    pub radius: Option<u64>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self { t: vec![1.0, 2.0, 4.0], d: 1, eps: 1e-12, radius: None }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rationals() {
        assert_eq!(rational("3/400").unwrap(), BigRational::new(3.into(), 400.into()));
        assert_eq!(rational("2").unwrap(), BigRational::from_integer(2.into()));
        assert!(rational("1/0").is_err());
        assert!(rational("x").is_err());
        assert_eq!(gamma("1/10").unwrap(), Gamma::default());
        assert!(gamma("0.1").is_err());
    }

    #[test]
    fn defaults_round_trip() {
        let c = EscapeConfig::default();
        let back: EscapeConfig = serde_json::from_value(serde_json::to_value(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: DdConfig = serde_json::from_str(r#"{"kappa": 3, "n": 1}"#).unwrap();
        assert_eq!((partial.kappa, partial.n, partial.insertions), (Some(3), 1, 500));
        assert!(serde_json::from_str::<DdConfig>(r#"{"kapa": 3}"#).is_err());
    }

    #[test]
    fn stabilize_particles() {
        let c: StabilizeConfig = serde_json::from_str(
            r#"{"d": 1, "initial": [{"site": [0], "count": 2}, {"site": [3], "sleeping": true}]}"#,
        )
        .unwrap();
        let cfg = c.particles().unwrap();
        assert_eq!(cfg.get(&Site::new(&[0]).unwrap()), SiteValue::Active(2));
        assert_eq!(cfg.get(&Site::new(&[3]).unwrap()), SiteValue::Sleeping);
        let twice: StabilizeConfig =
            serde_json::from_str(r#"{"initial": [{"site": [0]}, {"site": [0]}]}"#).unwrap();
        assert!(twice.particles().is_err());
    }
}
