//! Soft local times: simulating a sequence of random ground points from a
//! single Poisson cloud on `Σ × R+`, and the walk-versus-cloud domination
//! coupling built on it.
//!
//! `Σ` is a finite set `0..n` with counting measure. A cloud is complete
//! up to its height `H`: every point of the Poisson process with
//! `v < H` is present.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::kernels::{jump_cutoff, KernelTable1d};
use crate::lattice::{Site, SiteBox};
use crate::rng::{self, SimRng};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SltError {
    #[error("no cloud point where the density is positive")]
    NoPoint,
    #[error("two points attain the minimum")]
    Tie,
    #[error("density sums to {0}, not 1")]
    NotNormalized(f64),
    #[error("density has {got} weights for a ground set of {want}")]
    WrongLength { got: usize, want: usize },
    #[error("negative or non-finite weight")]
    BadWeight,
    #[error("window misses kernel mass; needs radius {required_radius} around every start")]
    WindowTooSmall { required_radius: u64 },
    #[error("window does not contain the domain")]
    DomainOutsideWindow,
    #[error("time {t} below the guard {guard} = c L^2")]
    GuardViolated { t: f64, guard: f64 },
    #[error("dimension mismatch")]
    Dimension,
}

/// Finite point measure: `(ground index, height)` pairs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointMeasure {
    pub points: Vec<(usize, f64)>,
}

impl PointMeasure {
    pub fn new(points: Vec<(usize, f64)>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Probability weights on `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Density {
    w: Vec<f64>,
}

impl Density {
    pub fn new(w: Vec<f64>) -> Result<Self, SltError> {
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(SltError::BadWeight);
        }
        let total: f64 = w.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(SltError::NotNormalized(total));
        }
        Ok(Self { w })
    }

    /// Rescales nonnegative weights to total mass 1.
    pub fn normalized(mut w: Vec<f64>) -> Result<Self, SltError> {
        let total: f64 = w.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(SltError::BadWeight);
        }
        w.iter_mut().for_each(|x| *x /= total);
        Self::new(w)
    }

    pub fn uniform(n: usize) -> Self {
        Self { w: vec![1.0 / n as f64; n] }
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn get(&self, z: usize) -> f64 {
        self.w.get(z).copied().unwrap_or(0.0)
    }
}

/// One draw from `m`: `xi = min v / g(z)` over points with `g(z) > 0`, the
/// point attaining it, and the other points lowered by `xi g(z)`.
pub fn simulate_one(m: &PointMeasure, g: &Density) -> Result<(f64, usize, PointMeasure), SltError> {
    let mut best: Option<(f64, usize)> = None;
    let mut tie = false;
    for (i, &(z, v)) in m.points.iter().enumerate() {
        let gz = g.get(z);
        if gz <= 0.0 {
            continue;
        }
        let ratio = v / gz;
        match best {
            Some((b, _)) if ratio > b => {}
            Some((b, _)) if ratio == b => tie = true,
            _ => {
                best = Some((ratio, i));
                tie = false;
            }
        }
    }
    let (xi, pick) = best.ok_or(SltError::NoPoint)?;
    if tie {
        return Err(SltError::Tie);
    }
    let residual = m
        .points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != pick)
        .map(|(_, &(z, v))| (z, v - xi * g.get(z)))
        .collect();
    Ok((xi, pick, PointMeasure::new(residual)))
}

/// Poisson process on `(0..n) × [0, height)` with intensity counting ⊗
/// Lebesgue, extendable upwards.
#[derive(Debug, Clone)]
pub struct PoissonCloud {
    n: usize,
    height: f64,
    pub measure: PointMeasure,
    rng: SimRng,
}

impl PoissonCloud {
    pub fn sample(n: usize, height: f64, rng: SimRng) -> Self {
        let mut c = Self { n, height: 0.0, measure: PointMeasure::default(), rng };
        c.extend_to(height);
        c
    }

    pub fn ground_size(&self) -> usize {
        self.n
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    /// Adds the points with heights in `[height, new_height)`.
    pub fn extend_to(&mut self, new_height: f64) {
        let dh = new_height - self.height;
        if dh <= 0.0 {
            return;
        }
        let law = Poisson::new(dh).expect("positive mean");
        for z in 0..self.n {
            let k: f64 = law.sample(&mut self.rng);
            for _ in 0..k as u64 {
                let v = self.height + dh * self.rng.random::<f64>();
                self.measure.points.push((z, v));
            }
        }
        self.height = new_height;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pick {
    pub point: usize,
    pub z: usize,
    pub v: f64,
    pub xi: f64,
}

/// Accumulated soft local time `G_J` and the picks that built it.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLocalTime {
    pub g: Vec<f64>,
    pub picks: Vec<Pick>,
}

impl SoftLocalTime {
    pub fn max_over(&self, zs: impl IntoIterator<Item = usize>) -> f64 {
        zs.into_iter().map(|z| self.g[z]).fold(0.0, f64::max)
    }
}

/// Draws one ground point per density from the same cloud:
/// `xi_k = min (v - G_{k-1}(z)) / g_k(z)` over unpicked points and
/// `G_k = G_{k-1} + xi_k g_k`. The cloud is extended whenever the answer
/// could involve a point above its current height.
pub fn soft_local_time_run(cloud: &mut PoissonCloud, densities: &[Density]) -> Result<SoftLocalTime, SltError> {
    let n = cloud.ground_size();
    let mut g = vec![0.0; n];
    let mut picked = vec![false; cloud.measure.len()];
    let mut picks = Vec::with_capacity(densities.len());
    for dens in densities {
        if dens.weights().len() != n {
            return Err(SltError::WrongLength { got: dens.weights().len(), want: n });
        }
        loop {
            picked.resize(cloud.measure.len(), false);
            let mut best: Option<(f64, usize)> = None;
            let mut tie = false;
            for (i, &(z, v)) in cloud.measure.points.iter().enumerate() {
                let gz = dens.get(z);
                if picked[i] || gz <= 0.0 {
                    continue;
                }
                let ratio = (v - g[z]) / gz;
                match best {
                    Some((b, _)) if ratio > b => {}
                    Some((b, _)) if ratio == b => tie = true,
                    _ => {
                        best = Some((ratio, i));
                        tie = false;
                    }
                }
            }
            // the cloud must reach above the whole raised curve
            let reach = |xi: f64| (0..n).filter(|&z| dens.get(z) > 0.0).all(|z| g[z] + xi * dens.get(z) <= cloud.height());
            match best {
                Some((xi, i)) if reach(xi) => {
                    if tie {
                        return Err(SltError::Tie);
                    }
                    for (z, gz) in g.iter_mut().enumerate() {
                        *gz += xi * dens.get(z);
                    }
                    let (z, v) = cloud.measure.points[i];
                    g[z] = v;
                    picked[i] = true;
                    picks.push(Pick { point: i, z, v, xi });
                    break;
                }
                _ => {
                    let h = cloud.height();
                    cloud.extend_to(if h > 0.0 { 2.0 * h } else { 1.0 });
                }
            }
        }
    }
    Ok(SoftLocalTime { g, picks })
}

/// Parameters of the walks-versus-cloud coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSpec {
    pub starts: Vec<Site>,
    pub t: f64,
    pub zeta_prime: f64,
    pub domain: SiteBox,
    /// Ground window; by default the domain and every start, padded by the
    /// kernel support radius.
    pub window: Option<SiteBox>,
    pub eps: f64,
    /// Scale `L` in the guard `t >= c L^2`.
    pub scale: f64,
    pub guard: f64,
    /// Initial cloud height; runs sharing it and the seed share the cloud.
    pub cloud_height: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingReport {
    pub g_max: f64,
    pub zeta_prime: f64,
    pub dominated: bool,
    /// Walk endpoints with their cloud heights.
    pub picks: Vec<(Site, f64)>,
    pub cloud_size: usize,
    pub seed: u64,
    /// Cloud points in the domain at height at most `zeta_prime`.
    pub cloud_in_domain: usize,
    pub window: SiteBox,
}

fn window_sites(w: &SiteBox) -> Vec<Site> {
    w.sites().collect()
}

fn window_index(w: &SiteBox, x: &Site) -> Option<usize> {
    if !w.contains(x) {
        return None;
    }
    let mut idx = 0usize;
    for a in 0..w.dim() {
        idx = idx * w.side(a) as usize + (x.get(a) - w.lower().get(a)) as usize;
    }
    Some(idx)
}

/// Walkers started at `spec.starts` run for time `t`; their endpoints are
/// drawn by soft local times with densities `p_t(x_j, ·)` restricted to the
/// window. The endpoints are dominated when every one landing in the domain
/// is a cloud point of height at most `zeta_prime`, i.e. a point of the
/// `Poisson(zeta_prime)` process read off the same cloud. This is
/// guaranteed when `max_D G_J <= zeta_prime`.
pub fn couple_walks_to_cloud(spec: &CouplingSpec) -> Result<CouplingReport, SltError> {
    let d = spec.domain.dim();
    if spec.starts.iter().any(|x| x.dim() != d) {
        return Err(SltError::Dimension);
    }
    let guard = spec.guard * spec.scale * spec.scale;
    if spec.t < guard {
        return Err(SltError::GuardViolated { t: spec.t, guard });
    }
    let radius = jump_cutoff(spec.t, spec.eps);
    let window = match spec.window {
        Some(w) => w,
        None => {
            let mut lo: Vec<i64> = spec.domain.lower().coords().to_vec();
            let mut hi: Vec<i64> = spec.domain.upper().coords().iter().map(|c| c - 1).collect();
            for x in &spec.starts {
                for a in 0..d {
                    lo[a] = lo[a].min(x.get(a) - radius as i64);
                    hi[a] = hi[a].max(x.get(a) + radius as i64);
                }
            }
            let sides: Vec<u64> = (0..d).map(|a| (hi[a] - lo[a] + 1) as u64).collect();
            SiteBox::new(Site::new(&lo).map_err(|_| SltError::Dimension)?, &sides).map_err(|_| SltError::Dimension)?
        }
    };
    if !window.contains_box(&spec.domain) {
        return Err(SltError::DomainOutsideWindow);
    }
    let table = KernelTable1d::new(spec.t, spec.eps);
    let sites = window_sites(&window);
    let mut densities = Vec::with_capacity(spec.starts.len());
    for x in &spec.starts {
        let w: Vec<f64> = sites.iter().map(|z| table.get_d(&z.checked_sub(x).expect("same dimension"))).collect();
        let mass: f64 = w.iter().sum();
        if mass < 1.0 - 10.0 * spec.eps * d as f64 {
            return Err(SltError::WindowTooSmall { required_radius: radius });
        }
        densities.push(Density::normalized(w)?);
    }
    let mut cloud = PoissonCloud::sample(sites.len(), spec.cloud_height, rng::stream(spec.seed));
    let run = soft_local_time_run(&mut cloud, &densities)?;
    let in_domain: Vec<usize> = (0..sites.len()).filter(|&i| spec.domain.contains(&sites[i])).collect();
    let g_max = run.max_over(in_domain.iter().copied());
    let dominated = run.picks.iter().all(|p| !spec.domain.contains(&sites[p.z]) || p.v <= spec.zeta_prime);
    let cloud_in_domain = cloud
        .measure
        .points
        .iter()
        .filter(|(z, v)| spec.domain.contains(&sites[*z]) && *v <= spec.zeta_prime)
        .count();
    Ok(CouplingReport {
        g_max,
        zeta_prime: spec.zeta_prime,
        dominated,
        picks: run.picks.iter().map(|p| (sites[p.z], p.v)).collect(),
        cloud_size: cloud.measure.len(),
        seed: spec.seed,
        cloud_in_domain,
        window,
    })
}

/// Index of `x` in the lexicographic enumeration of `window`.
pub fn ground_index(window: &SiteBox, x: &Site) -> Option<usize> {
    window_index(window, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(c: &[i64]) -> Site {
        Site::new(c).unwrap()
    }

    #[test]
    fn hand_example() {
        let (a, b) = (0, 1);
        let m = PointMeasure::new(vec![(a, 0.3), (b, 0.2), (a, 0.9)]);
        let (xi, pick, rest) = simulate_one(&m, &Density::uniform(2)).unwrap();
        assert!((xi - 0.4).abs() < 1e-15);
        assert_eq!(pick, 1);
        assert_eq!(rest.len(), 2);
        assert!((rest.points[0].1 - 0.1).abs() < 1e-15 && (rest.points[1].1 - 0.7).abs() < 1e-15);
        assert!(rest.points.iter().all(|(z, _)| *z == a));
    }

    #[test]
    fn concentrated_density_and_errors() {
        let g = Density::new(vec![1.0, 0.0]).unwrap();
        let (xi, pick, _) = simulate_one(&PointMeasure::new(vec![(1, 0.1), (0, 0.7)]), &g).unwrap();
        assert_eq!((xi, pick), (0.7, 1));
        assert_eq!(simulate_one(&PointMeasure::new(vec![(1, 0.1)]), &g), Err(SltError::NoPoint));
        let tie = PointMeasure::new(vec![(0, 0.5), (1, 0.5)]);
        assert_eq!(simulate_one(&tie, &Density::uniform(2)), Err(SltError::Tie));
        assert!(Density::new(vec![0.5, 0.4]).is_err());
        assert!(Density::new(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn one_density_run_matches_simulate_one() {
        let g = Density::new(vec![0.2, 0.5, 0.3]).unwrap();
        let mut cloud = PoissonCloud::sample(3, 20.0, rng::stream(4));
        let m = cloud.measure.clone();
        let run = soft_local_time_run(&mut cloud, core::slice::from_ref(&g)).unwrap();
        let (xi, pick, _) = simulate_one(&m, &g).unwrap();
        assert_eq!(run.picks[0].point, pick);
        assert!((run.picks[0].xi - xi).abs() < 1e-12);
    }

    #[test]
    fn run_invariants() {
        let n = 6;
        let dens: Vec<Density> = (0..40)
            .map(|j| Density::normalized((0..n).map(|z| 1.0 + ((z * 7 + j * 3) % 5) as f64).collect()).unwrap())
            .collect();
        let mut cloud = PoissonCloud::sample(n, 0.5, rng::stream(8));
        let run = soft_local_time_run(&mut cloud, &dens).unwrap();
        let mut seen = alloc::collections::BTreeSet::new();
        assert!(run.picks.iter().all(|p| seen.insert(p.point)));
        // unpicked points lie on or above the final curve
        for (i, &(z, v)) in cloud.measure.points.iter().enumerate() {
            if !seen.contains(&i) {
                assert!(v >= run.g[z]);
            }
        }
        assert!(cloud.height() >= run.g.iter().cloned().fold(0.0, f64::max));
    }

    #[test]
    fn g_equals_height_at_each_pick_and_grows() {
        let n = 4;
        let dens: Vec<Density> = (0..12).map(|j| Density::normalized((0..n).map(|z| ((z + j) % 4 + 1) as f64).collect()).unwrap()).collect();
        let mut prev = vec![0.0; n];
        for k in 1..=dens.len() {
            let mut cloud = PoissonCloud::sample(n, 3.0, rng::stream(21));
            let run = soft_local_time_run(&mut cloud, &dens[..k]).unwrap();
            let last = run.picks.last().unwrap();
            assert_eq!(run.g[last.z], last.v);
            assert!(run.g.iter().zip(&prev).all(|(a, b)| a >= b));
            prev = run.g;
        }
    }

    fn spec(starts: Vec<Site>, zeta_prime: f64, seed: u64) -> CouplingSpec {
        CouplingSpec {
            starts,
            t: 4.0,
            zeta_prime,
            domain: SiteBox::cube(s(&[-2]), 5).unwrap(),
            window: None,
            eps: 1e-12,
            scale: 2.0,
            guard: 1.0,
            cloud_height: 2.0,
            seed,
        }
    }

    #[test]
    fn no_walkers_is_dominated() {
        let r = couple_walks_to_cloud(&spec(vec![], 0.5, 1)).unwrap();
        assert!(r.dominated);
        assert_eq!(r.g_max, 0.0);
        assert!(r.picks.is_empty());
    }

    #[test]
    fn coupling_errors() {
        let mut sp = spec(vec![s(&[0])], 0.5, 1);
        sp.t = 3.0;
        assert!(matches!(couple_walks_to_cloud(&sp), Err(SltError::GuardViolated { .. })));
        let mut sp = spec(vec![s(&[0])], 0.5, 1);
        sp.window = Some(SiteBox::cube(s(&[-3]), 7).unwrap());
        assert!(matches!(couple_walks_to_cloud(&sp), Err(SltError::WindowTooSmall { .. })));
        sp.window = Some(SiteBox::cube(s(&[0]), 100).unwrap());
        assert_eq!(couple_walks_to_cloud(&sp), Err(SltError::DomainOutsideWindow));
    }

    #[test]
    fn domination_is_sound_and_monotone_in_zeta() {
        for seed in 0..50 {
            let starts: Vec<Site> = (0..5).map(|i| s(&[i - 2])).collect();
            let mut last = false;
            for zp in [0.2, 0.5, 1.0, 2.0, 4.0] {
                let r = couple_walks_to_cloud(&spec(starts.clone(), zp, seed)).unwrap();
                if r.g_max <= zp {
                    assert!(r.dominated);
                }
                assert!(r.dominated || !last, "domination lost when zeta' grew");
                last = r.dominated;
                let in_d = r.picks.iter().filter(|(z, v)| r.window.contains(z) && *v <= zp && (-2..3).contains(&z.get(0))).count();
                assert!(in_d <= r.cloud_in_domain);
            }
        }
    }
}
