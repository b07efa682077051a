//! Scale and density sequences of the renormalization scheme, the one-step
//! recursion bound and its numerical induction.
//!
//! Lengths are exact big integers. Every exponential is handled through
//! its logarithm in `f64`, so quantities such as `exp(-log^2 L_20)` (about
//! `e^{-94000}`) never have to be represented.

use alloc::vec::Vec;

use num_bigint::BigUint;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MultiscaleError {
    #[error("gamma = {num}/{den} is not in (0, 1)")]
    BadGamma { num: u32, den: u32 },
    #[error("L0 must be at least 2")]
    SmallBase,
    #[error("zeta0 must lie in (0, 1]")]
    BadDensity,
    #[error("index {k} beyond the table (k_max = {k_max})")]
    OutOfTable { k: usize, k_max: usize },
    #[error("k_max = {k_max} is below the starting index {kbar}")]
    EmptyRange { kbar: usize, k_max: usize },
    #[error("constants must be nonnegative and finite")]
    BadConstants,
}

/// Rational exponent `num / den`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gamma {
    pub num: u32,
    pub den: u32,
}

impl Gamma {
    pub fn new(num: u32, den: u32) -> Result<Self, MultiscaleError> {
        if num == 0 || den == 0 || num >= den {
            return Err(MultiscaleError::BadGamma { num, den });
        }
        Ok(Self { num, den })
    }

    pub fn value(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl Default for Gamma {
    fn default() -> Self {
        Self { num: 1, den: 10 }
    }
}

/// Natural logarithm of a big integer, to `f64` precision.
pub fn ln_big(x: &BigUint) -> f64 {
    let bits = x.bits();
    if bits <= 1000 {
        return libm::log(x.to_f64().expect("finite below 2^1000"));
    }
    let shift = bits - 64;
    let top = (x >> shift).to_f64().expect("64 bits");
    libm::log(top) + shift as f64 * core::f64::consts::LN_2
}

/// `L_{k+1} = floor(L_k^g)^2 L_k` and `R_{k+1} = floor(L_k^g) L_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleTable {
    gamma: Gamma,
    lengths: Vec<BigUint>,
    rings: Vec<Option<BigUint>>,
    multipliers: Vec<BigUint>,
}

impl ScaleTable {
    pub fn new(l0: u64, gamma: Gamma, k_max: usize) -> Result<Self, MultiscaleError> {
        if l0 < 2 {
            return Err(MultiscaleError::SmallBase);
        }
        let mut lengths = Vec::with_capacity(k_max + 1);
        let mut rings = Vec::with_capacity(k_max + 1);
        let mut multipliers = Vec::with_capacity(k_max + 1);
        lengths.push(BigUint::from(l0));
        rings.push(None);
        for k in 0..=k_max {
            let l = &lengths[k];
            let m = l.pow(gamma.num).nth_root(gamma.den);
            if k < k_max {
                rings.push(Some(&m * l));
                lengths.push(&m * &m * l);
            }
            multipliers.push(m);
        }
        Ok(Self { gamma, lengths, rings, multipliers })
    }

    pub fn gamma(&self) -> Gamma {
        self.gamma
    }

    pub fn k_max(&self) -> usize {
        self.lengths.len() - 1
    }

    pub fn length(&self, k: usize) -> &BigUint {
        &self.lengths[k]
    }

    /// `R_k`; there is none at `k = 0`.
    pub fn ring(&self, k: usize) -> Option<&BigUint> {
        self.rings[k].as_ref()
    }

    /// `floor(L_k^gamma)`.
    pub fn multiplier(&self, k: usize) -> &BigUint {
        &self.multipliers[k]
    }

    pub fn ln_length(&self, k: usize) -> f64 {
        ln_big(&self.lengths[k])
    }

    /// First `k` with `5 R_k <= L_k`.
    pub fn first_kernel_scale(&self) -> Option<usize> {
        (1..=self.k_max()).find(|&k| {
            let r = self.rings[k].as_ref().expect("k >= 1");
            r * 5u32 <= self.lengths[k]
        })
    }

    /// `c = min_k floor(L_k^g) / L_k^g` over the table.
    pub fn growth_constant(&self) -> f64 {
        let g = self.gamma.value();
        (0..=self.k_max())
            .map(|k| libm::exp(ln_big(&self.multipliers[k]) - g * self.ln_length(k)))
            .fold(1.0, f64::min)
    }

    /// Whether `L_k >= c^k L_0^{(1+2g)^k}` for every `k`, with `c` from
    /// [`ScaleTable::growth_constant`]; compared in logarithms.
    pub fn satisfies_growth_floor(&self) -> bool {
        let c = self.growth_constant();
        let g = self.gamma.value();
        let ln0 = self.ln_length(0);
        (0..=self.k_max()).all(|k| {
            let floor = k as f64 * libm::log(c) + libm::pow(1.0 + 2.0 * g, k as f64) * ln0;
            self.ln_length(k) >= floor - 1e-9 * floor.abs()
        })
    }

    /// The floor with the rounding losses compounded:
    /// `ln L_k >= (1+2g)^k ln L_0 (1 + ln c / (g ln L_0))`. Each step loses
    /// at most `2 ln c` before the exponent `1+2g` is applied, and the
    /// losses sum geometrically.
    pub fn satisfies_compounded_growth_floor(&self) -> bool {
        let c = self.growth_constant();
        let g = self.gamma.value();
        let ln0 = self.ln_length(0);
        let a = 1.0 + libm::log(c) / (g * ln0);
        (0..=self.k_max()).all(|k| self.ln_length(k) >= a * libm::pow(1.0 + 2.0 * g, k as f64) * ln0 * (1.0 - 1e-12))
    }

    fn check(&self, k: usize) -> Result<(), MultiscaleError> {
        if k > self.k_max() {
            return Err(MultiscaleError::OutOfTable { k, k_max: self.k_max() });
        }
        Ok(())
    }
}

/// `zeta_k = zeta0 (1 - 1/4 sum_{j<=k} 1/j^2)` and the intermediate
/// densities `zeta_k^r = zeta_k - r zeta0 / (16 (k+1)^2)`, `r = 0..=4`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityLadder {
    pub zeta0: BigRational,
    pub zeta: Vec<BigRational>,
    pub intermediate: Vec<[BigRational; 5]>,
}

impl DensityLadder {
    pub fn new(zeta0: BigRational, k_max: usize) -> Result<Self, MultiscaleError> {
        if zeta0 <= BigRational::zero() || zeta0 > BigRational::one() {
            return Err(MultiscaleError::BadDensity);
        }
        let quarter = BigRational::new(1.into(), 4.into());
        let mut zeta = Vec::with_capacity(k_max + 2);
        let mut partial = BigRational::zero();
        zeta.push(zeta0.clone());
        for j in 1..=(k_max + 1) {
            partial += BigRational::new(1.into(), (j * j).into());
            zeta.push(&zeta0 * (BigRational::one() - &quarter * &partial));
        }
        let intermediate = (0..=k_max)
            .map(|k| {
                let step = &zeta0 / BigRational::from_integer((16 * (k + 1) * (k + 1)).into());
                core::array::from_fn(|r| &zeta[k] - &step * BigRational::from_integer(r.into()))
            })
            .collect();
        Ok(Self { zeta0, zeta, intermediate })
    }

    /// `zeta_k^0 = zeta_k > zeta_k^1 > ... > zeta_k^4 = zeta_{k+1}` for
    /// every `k`, exactly.
    pub fn interleaving_holds(&self) -> bool {
        self.intermediate.iter().enumerate().all(|(k, row)| {
            row[0] == self.zeta[k] && row[4] == self.zeta[k + 1] && row.windows(2).all(|w| w[0] > w[1])
        })
    }

    /// Every `zeta_k` exceeds `zeta0 / 2`.
    pub fn above_half(&self) -> bool {
        let half = &self.zeta0 / BigRational::from_integer(2.into());
        self.zeta.iter().all(|z| *z > half)
    }
}

/// `ln(e^a + e^b)`.
fn ln_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + libm::log1p(libm::exp(lo - hi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursionParams {
    pub d: u32,
    pub c3: f64,
    pub c4: f64,
}

impl RecursionParams {
    fn validate(&self) -> Result<(), MultiscaleError> {
        if !(self.c3 >= 0.0 && self.c3.is_finite() && self.c4 >= 0.0 && self.c4.is_finite()) {
            return Err(MultiscaleError::BadConstants);
        }
        Ok(())
    }

    /// `ln(c3 exp(-c4 L_k^{g/3}))`.
    fn ln_error(&self, table: &ScaleTable, k: usize) -> f64 {
        if self.c3 == 0.0 {
            return f64::NEG_INFINITY;
        }
        let g = table.gamma().value();
        libm::log(self.c3) - self.c4 * libm::exp(g / 3.0 * table.ln_length(k))
    }
}

/// Logarithm of `min(1, (L_{k+1}/L_k)^{2d} p_k^2 + c3 exp(-c4 L_k^{g/3}))`
/// from `ln p_k`. Needs `k < k_max`.
pub fn recursion_step_ln(ln_p: f64, k: usize, params: &RecursionParams, table: &ScaleTable) -> Result<f64, MultiscaleError> {
    params.validate()?;
    table.check(k + 1)?;
    let ln_ratio = 2.0 * ln_big(table.multiplier(k));
    let main = if ln_p == f64::NEG_INFINITY { f64::NEG_INFINITY } else { 2.0 * params.d as f64 * ln_ratio + 2.0 * ln_p };
    Ok(ln_add(main, params.ln_error(table, k)).min(0.0))
}

/// The recursion bound on `p_{k+1}` given `p_k`, clamped to `[0, 1]`.
pub fn recursion_step(p: f64, k: usize, params: &RecursionParams, table: &ScaleTable) -> Result<f64, MultiscaleError> {
    let ln_p = if p <= 0.0 { f64::NEG_INFINITY } else { libm::log(p.min(1.0)) };
    Ok(libm::exp(recursion_step_ln(ln_p, k, params, table)?))
}

/// Logarithm of `L_k^{4 d g} exp(-(1 - 2g) log^2 L_k) + c3 exp(-c4 L_k^{g/3})`.
pub fn induction_ln_lhs(k: usize, params: &RecursionParams, table: &ScaleTable) -> Result<f64, MultiscaleError> {
    params.validate()?;
    table.check(k)?;
    let g = table.gamma().value();
    let ln_l = table.ln_length(k);
    let first = 4.0 * params.d as f64 * g * ln_l - (1.0 - 2.0 * g) * ln_l * ln_l;
    Ok(ln_add(first, params.ln_error(table, k)))
}

/// Whether the sum in [`induction_ln_lhs`] is at most 1. Compared in
/// logarithms, so `1 + 1e-28` counts as a failure.
pub fn induction_check(k: usize, params: &RecursionParams, table: &ScaleTable) -> Result<bool, MultiscaleError> {
    Ok(induction_ln_lhs(k, params, table)? <= 0.0)
}

/// Smallest admissible `zeta0` at scale `k`: `8 (k+1)^2 L_k^{-g/3}`.
pub fn density_floor(k: usize, table: &ScaleTable) -> Result<f64, MultiscaleError> {
    table.check(k)?;
    let g = table.gamma().value();
    let kk = (k + 1) as f64;
    Ok(8.0 * kk * kk * libm::exp(-g / 3.0 * table.ln_length(k)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateRow {
    pub k: usize,
    pub ln_p: f64,
    /// `-log^2 L_k`.
    pub ln_threshold: f64,
    /// `ln_threshold - ln_p`; nonnegative on granted rows.
    pub margin: f64,
    /// `1 - exp(induction_ln_lhs(k))`.
    pub induction_slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Refusal {
    /// The starting bound exceeds `exp(-log^2 L_kbar)`.
    Base,
    InductionCheck,
    /// The replayed bound exceeds `exp(-log^2 L_k)`.
    Bound,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CertificateError {
    #[error("certificate refused at k = {k} ({reason:?})")]
    Refused { k: usize, reason: Refusal, rows: Vec<CertificateRow> },
    #[error(transparent)]
    Input(#[from] MultiscaleError),
}

/// Replays the induction from `p_kbar = exp(ln_p_kbar)`: at every
/// `k = kbar..=k_max` the induction check must hold and the recursion bound
/// must stay below `exp(-log^2 L_k)`.
pub fn decay_certificate(
    kbar: usize,
    ln_p_kbar: f64,
    params: &RecursionParams,
    table: &ScaleTable,
    k_max: usize,
) -> Result<Vec<CertificateRow>, CertificateError> {
    params.validate()?;
    if k_max < kbar {
        return Err(MultiscaleError::EmptyRange { kbar, k_max }.into());
    }
    table.check(k_max)?;
    let threshold = |k: usize| {
        let l = table.ln_length(k);
        -l * l
    };
    let mut rows = Vec::with_capacity(k_max - kbar + 1);
    let mut ln_p = ln_p_kbar.min(0.0);
    for k in kbar..=k_max {
        if k > kbar {
            ln_p = recursion_step_ln(ln_p, k - 1, params, table)?;
        }
        let ln_lhs = induction_ln_lhs(k, params, table)?;
        let row = CertificateRow {
            k,
            ln_p,
            ln_threshold: threshold(k),
            margin: threshold(k) - ln_p,
            induction_slack: -libm::expm1(ln_lhs),
        };
        let reason = if row.margin < 0.0 {
            Some(if k == kbar { Refusal::Base } else { Refusal::Bound })
        } else if ln_lhs > 0.0 {
            Some(Refusal::InductionCheck)
        } else {
            None
        };
        rows.push(row);
        if let Some(reason) = reason {
            return Err(CertificateError::Refused { k, reason, rows });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults(k_max: usize) -> ScaleTable {
        ScaleTable::new(10_000, Gamma::default(), k_max).unwrap()
    }

    fn rat(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn scale_examples() {
        let t = defaults(20);
        assert_eq!(t.length(1), &BigUint::from(40_000u32));
        assert_eq!(t.length(4), &BigUint::from(23_040_000u32));
        assert_eq!(t.first_kernel_scale(), Some(5));
        assert!(t.ring(0).is_none());
        assert!((0..=20).all(|k| t.length(k) >= t.length(0)));
        // rounding losses compound, so the plain c^k floor fails from k = 1
        assert!(!t.satisfies_growth_floor());
        assert!(t.satisfies_compounded_growth_floor());
        assert!(Gamma::new(1, 1).is_err() && Gamma::new(0, 3).is_err());
        assert_eq!(ScaleTable::new(1, Gamma::default(), 3), Err(MultiscaleError::SmallBase));
    }

    #[test]
    fn ln_big_matches_small_values() {
        for x in [2u64, 10, 12_345, u64::MAX] {
            assert!((ln_big(&BigUint::from(x)) - libm::log(x as f64)).abs() < 1e-12);
        }
        let big = BigUint::from(3u32).pow(2000);
        assert!((ln_big(&big) - 2000.0 * libm::log(3.0)).abs() < 1e-9);
    }

    #[test]
    fn ladder_examples() {
        let z0 = rat(1, 100);
        let ladder = DensityLadder::new(z0.clone(), 30).unwrap();
        assert_eq!(ladder.zeta[1], &z0 * rat(3, 4));
        assert!(ladder.interleaving_holds());
        assert!(ladder.above_half());
        // zeta_k >= zeta0 (1 - pi^2 / 24)
        let floor = 0.01 * (1.0 - core::f64::consts::PI * core::f64::consts::PI / 24.0);
        assert!(ladder.zeta.iter().all(|z| z.to_f64().unwrap() >= floor));
        assert!(DensityLadder::new(rat(0, 1), 3).is_err());
        assert!(DensityLadder::new(rat(3, 2), 3).is_err());
    }

    #[test]
    fn recursion_examples() {
        let t = defaults(5);
        let zero = RecursionParams { d: 1, c3: 0.0, c4: 1.0 };
        assert_eq!(recursion_step(0.0, 0, &zero, &t).unwrap(), 0.0);
        let p = RecursionParams { d: 1, c3: 1.0, c4: 1.0 };
        assert_eq!(recursion_step(1.0, 0, &p, &t).unwrap(), 1.0);
        assert!(recursion_step(0.5, 5, &p, &t).is_err());
    }

    #[test]
    fn induction_examples() {
        let t = defaults(20);
        let p = RecursionParams { d: 1, c3: 1.0, c4: 1.0 };
        assert!(induction_check(0, &p, &t).unwrap());
        assert!(!induction_check(0, &RecursionParams { c3: 1e6, ..p }, &t).unwrap());
        let checks: Vec<bool> = (0..=20).map(|k| induction_check(k, &p, &t).unwrap()).collect();
        let first = checks.iter().position(|c| *c).unwrap();
        assert!(checks[first..].iter().all(|c| *c));
    }

    #[test]
    fn certificate_refusals() {
        let t = defaults(20);
        let p = RecursionParams { d: 1, c3: 1.0, c4: 1000.0 };
        let ln_p0 = -t.ln_length(0) * t.ln_length(0);
        assert!(decay_certificate(0, ln_p0, &p, &t, 20).is_ok());
        assert!(matches!(
            decay_certificate(0, ln_p0 + 1.0, &p, &t, 20),
            Err(CertificateError::Refused { k: 0, reason: Refusal::Base, .. })
        ));
        assert!(matches!(
            decay_certificate(0, ln_p0, &RecursionParams { c4: 0.0, ..p }, &t, 20),
            Err(CertificateError::Refused { k: 0, reason: Refusal::InductionCheck, .. })
        ));
        assert!(matches!(decay_certificate(5, ln_p0, &p, &t, 4), Err(CertificateError::Input(_))));
    }

    #[test]
    fn floor_shrinks_eventually() {
        let t = defaults(30);
        let f: Vec<f64> = (0..=30).map(|k| density_floor(k, &t).unwrap()).collect();
        assert!(f[0] > 1.0);
        assert!(f[30] < f[10]);
    }
}
