//! Acceptance suite. Runs without the libtest harness so that it prints
//! exactly one PASS/FAIL line per criterion; exits nonzero if any fails.

#![allow(clippy::excessive_precision)]

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::Rng;
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use arwlab::experiments::{
    driven_dissipation, escape_trial, estimate_escape_paired, fixation_tail, DdSpec, EscapeSpec, FixationSpec, Model,
    Outcome, Start,
};
use arwlab::engine::arw::{simulate_ct, CtOptions, RateConvention, SiteConfig, SiteValue};
use arwlab::engine::df::{precedes, stabilize, InstructionTapes, TapeLaw};
use arwlab::engine::kernels::{heat_kernel_1d, DirectKernel, KernelTable1d};
use arwlab::engine::lattice::{kernel_triple, Site, SiteBox};
use arwlab::engine::multiscale::{
    decay_certificate, CertificateError, DensityLadder, Gamma, RecursionParams, Refusal, ScaleTable,
};
use arwlab::engine::order::OrderPolicy;
use arwlab::engine::rng::{derive_seed, stream, SimRng};
use arwlab::engine::slt::{couple_walks_to_cloud, soft_local_time_run, CouplingSpec, Density, PoissonCloud};
use arwlab::engine::ssm::{stabilize_ssm, toppling_f, MessageKind};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn site(c: &[i64]) -> Site {
    Site::new(c).unwrap()
}

fn policies(seed: u64) -> [OrderPolicy; 4] {
    [OrderPolicy::Fifo, OrderPolicy::SiteSweep, OrderPolicy::MaxOccupancy, OrderPolicy::RandomParticle { seed }]
}

fn random_box(rng: &mut SimRng, d: usize) -> SiteBox {
    match d {
        1 => SiteBox::cube(site(&[rng.random_range(-5..5)]), rng.random_range(1..=64)).unwrap(),
        _ => {
            let sides = [rng.random_range(1..=8), rng.random_range(1..=8)];
            SiteBox::new(site(&[rng.random_range(-3..3), rng.random_range(-3..3)]), &sides).unwrap()
        }
    }
}

fn random_site_in(rng: &mut SimRng, b: &SiteBox) -> Site {
    let c: Vec<i64> = (0..b.dim()).map(|a| b.lower().get(a) + rng.random_range(0..b.side(a)) as i64).collect();
    site(&c)
}

fn random_arw(rng: &mut SimRng, b: &SiteBox, allow_sleep: bool) -> SiteConfig {
    let mut c = SiteConfig::new();
    let n = rng.random_range(1..=2 * b.volume().min(40));
    for _ in 0..n {
        c.add_active(random_site_in(rng, b));
    }
    if allow_sleep {
        for _ in 0..rng.random_range(0..4) {
            let x = random_site_in(rng, b);
            if c.get(&x) == SiteValue::EMPTY {
                c.set(x, SiteValue::Sleeping);
            }
        }
    }
    c
}

fn abelian_invariance() -> Verdict {
    let mut checked = 0u64;
    let mut mismatches = Vec::new();
    for d in [1usize, 2] {
        let results: Vec<(u64, Option<String>)> = (0..200u64)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(0xabe1, &[d as u64, i]);
                let mut rng = stream(seed);
                let b = random_box(&mut rng, d);
                let lambda = rng.random_range(0.1..3.0);
                let kappa = rng.random_range(1..=6u64);
                let arw = random_arw(&mut rng, &b, true);
                let mut msgs: Vec<(Site, MessageKind)> =
                    (0..rng.random_range(1..=60)).map(|_| (random_site_in(&mut rng, &b), MessageKind::Ordinary)).collect();
                for _ in 0..rng.random_range(0..10) {
                    msgs.push((random_site_in(&mut rng, &b), MessageKind::Activation));
                }
                let mut count = 0;
                let mut reference = None;
                let mut ssm_reference = None;
                for p in policies(seed) {
                    let tapes = InstructionTapes::random(TapeLaw::Arw { lambda, d }, seed).unwrap();
                    let out = stabilize(&arw, tapes, p, Some(b), None).unwrap();
                    let key = (out.config, out.odometer);
                    match &reference {
                        None => reference = Some(key),
                        Some(r) if *r != key => return (count, Some(format!("walks d={d} instance {i} policy {p:?}"))),
                        _ => {}
                    }
                    let tapes = InstructionTapes::random(TapeLaw::Directions { d }, seed).unwrap();
                    let out = stabilize_ssm(&msgs, tapes, p, kappa, Some(b), None).unwrap();
                    match &ssm_reference {
                        None => ssm_reference = Some(out),
                        Some(r) if *r != out => return (count, Some(format!("sandpile d={d} instance {i} policy {p:?}"))),
                        _ => {}
                    }
                    count += 2;
                }
                (count, None)
            })
            .collect();
        for (c, m) in results {
            checked += c;
            mismatches.extend(m);
        }
    }
    verdict(
        mismatches.is_empty(),
        format!("{checked} runs over 400 instances x 2 engines x 4 policies; mismatches {mismatches:?}"),
    )
}

fn remove_one(rng: &mut SimRng, c: &SiteConfig) -> SiteConfig {
    let sites: Vec<(Site, SiteValue)> = c.iter().map(|(x, v)| (*x, *v)).collect();
    let (x, v) = sites[rng.random_range(0..sites.len())];
    let mut out = c.clone();
    match v {
        SiteValue::Sleeping | SiteValue::Active(1) => out.set(x, SiteValue::EMPTY),
        SiteValue::Active(n) => out.set(x, SiteValue::Active(n - 1)),
    }
    out
}

fn monotonicity() -> Verdict {
    let rows: Vec<(bool, bool, bool)> = (0..200u64)
        .into_par_iter()
        .map(|i| {
            let d = 1 + (i % 2) as usize;
            let seed = derive_seed(0x3070, &[i]);
            let mut rng = stream(seed);
            let b = random_box(&mut rng, d);
            let lambda = rng.random_range(0.1..3.0);
            let law = TapeLaw::Arw { lambda, d };
            let big = random_arw(&mut rng, &b, true);
            let small = remove_one(&mut rng, &big);
            let tapes = InstructionTapes::random(law, seed).unwrap();
            let ordered = precedes((&small, &tapes), (&big, &tapes));
            let j = stabilize(&big, tapes.clone(), OrderPolicy::Fifo, Some(b), None).unwrap().odometer;
            let j_small = stabilize(&small, tapes, OrderPolicy::Fifo, Some(b), None).unwrap().odometer;
            let dominated = j_small.dominated_by(&j);

            // escape indicators on a box with room around the start
            let eb = SiteBox::cube(Site::splat(d, -3), if d == 1 { 40 } else { 12 }).unwrap();
            let inner = eb.shrink(1).unwrap();
            let mut start: BTreeMap<Site, u32> = BTreeMap::new();
            for _ in 0..rng.random_range(1..=12) {
                *start.entry(random_site_in(&mut rng, &inner)).or_default() += 1;
            }
            let big_start: Vec<(Site, u32)> = start.iter().map(|(x, n)| (*x, *n)).collect();
            let mut small_start = big_start.clone();
            let k = rng.random_range(0..small_start.len());
            small_start[k].1 -= 1;
            let model = Model::Arw { lambda };
            let tape_seed = derive_seed(seed, &[1]);
            let e_big = escape_trial(model, &big_start, &eb, tape_seed, OrderPolicy::Fifo, None);
            let e_small = escape_trial(model, &small_start, &eb, tape_seed, OrderPolicy::Fifo, None);
            let escape_ok = !(e_small == Outcome::Escaped && e_big != Outcome::Escaped);
            (ordered, dominated, escape_ok)
        })
        .collect();
    let not_ordered = rows.iter().filter(|r| !r.0).count();
    let odometer_fail = rows.iter().filter(|r| !r.1).count();
    let escape_fail = rows.iter().filter(|r| !r.2).count();

    // nested kernel start against the full interior start, shared trials
    let kt = kernel_triple(10, 2, &Site::origin(2)).unwrap();
    let spec = EscapeSpec {
        model: Model::Arw { lambda: 0.5 },
        start: Start::Poisson { zeta: 0.6, region: kt.outer.shrink(1).unwrap() },
        escape_box: kt.outer,
        trials: 400,
        seed: 17,
        policy: OrderPolicy::Fifo,
        budget: None,
    };
    let paired = estimate_escape_paired(&spec, &Start::Poisson { zeta: 0.6, region: kt.inner }).unwrap();
    let pass = not_ordered == 0 && odometer_fail == 0 && escape_fail == 0 && paired.violations == 0;
    verdict(
        pass,
        format!(
            "200 pairs: unordered {not_ordered}, J' > J {odometer_fail}, escape inversions {escape_fail}; \
             C2 vs C0 interior: {:.3} <= {:.3}, {} inversions in 400 paired trials",
            paired.smaller.estimate, paired.larger.estimate, paired.violations
        ),
    )
}

/// `f(q, r)` for `kappa = 3`, rows `r = 7` down to `r = 0`, columns `q = 0..8`.
const FIGURE_KAPPA_3: [[u64; 8]; 8] = [
    [0, 1, 2, 3, 4, 5, 6, 7],
    [0, 1, 2, 3, 4, 5, 6, 6],
    [0, 1, 2, 3, 4, 5, 6, 6],
    [0, 1, 2, 3, 4, 4, 6, 6],
    [0, 1, 2, 3, 3, 3, 6, 6],
    [0, 1, 2, 3, 3, 3, 6, 6],
    [0, 1, 1, 3, 3, 3, 6, 6],
    [0, 0, 0, 3, 3, 3, 6, 6],
];

fn toppling_table() -> Verdict {
    let mut bad_cells = 0;
    for (row, vals) in FIGURE_KAPPA_3.iter().enumerate() {
        let r = 7 - row as u64;
        for (q, want) in vals.iter().enumerate() {
            if toppling_f(q as u64, r, 3).unwrap() != *want {
                bad_cells += 1;
            }
        }
    }
    let mut violations = 0;
    for kappa in 1..=8 {
        for q in 0..=64 {
            if toppling_f(q, q, kappa).unwrap() != q {
                violations += 1;
            }
            for r in 0..=64 {
                let f = toppling_f(q, r, kappa).unwrap();
                if q < 64 && toppling_f(q + 1, r, kappa).unwrap() < f {
                    violations += 1;
                }
                if r < 64 && toppling_f(q, r + 1, kappa).unwrap() < f {
                    violations += 1;
                }
            }
        }
    }
    verdict(
        bad_cells == 0 && violations == 0,
        format!("64 figure cells, {bad_cells} differ; diagonal and monotonicity over q,r <= 64, kappa <= 8: {violations} violations"),
    )
}

fn heat_kernels() -> Verdict {
    let eps = 1e-12;
    let mut worst_mass: f64 = 0.0;
    let mut monotone = true;
    for t in [0.0, 0.5, 1.0, 4.0, 25.0, 100.0, 400.0] {
        let table = KernelTable1d::new(t, eps);
        let r = table.radius() as i64;
        let mass: f64 = (-r..=r).map(|x| table.get(x)).sum();
        worst_mass = worst_mass.max((mass - 1.0).abs());
        for x in 0..r {
            monotone &= table.get(x) >= table.get(x + 1) && table.get(-x) >= table.get(-x - 1);
            monotone &= table.get(x) == table.get(-x);
        }
        if t > 0.0 {
            let plane = SiteBox::cube(Site::splat(2, -r), (2 * r + 1) as u64).unwrap();
            let mass2: f64 = plane.sites().map(|x| table.get_d(&x)).sum();
            worst_mass = worst_mass.max((mass2 - 1.0).abs());
        }
    }
    let mut worst_product: f64 = 0.0;
    for t in [0.5, 1.0, 3.0, 8.0] {
        let direct = DirectKernel::new(t, 2, eps);
        let table = KernelTable1d::new(t, eps);
        let r = direct.radius() as i64;
        for x in SiteBox::cube(Site::splat(2, -r), (2 * r + 1) as u64).unwrap().sites() {
            worst_product = worst_product.max((direct.get(&x) - table.get_d(&x)).abs());
        }
    }
    let p1 = heat_kernel_1d(1.0, 0, eps);
    let oracle = 0.465759607593640436501901529563;
    let pass = worst_mass <= 1e-8 && monotone && worst_product <= 1e-10 && (p1 - oracle).abs() <= 1e-10;
    verdict(
        pass,
        format!(
            "mass error {worst_mass:.2e}, monotone {monotone}, direct vs product {worst_product:.2e}, p_1(0,0) error {:.2e}",
            (p1 - oracle).abs()
        ),
    )
}

fn random_densities(rng: &mut SimRng, n: usize, count: usize) -> Vec<Density> {
    (0..count)
        .map(|_| {
            let c = rng.random_range(0..n);
            let mut w = vec![0.0; n];
            for k in 0..11 {
                w[(c + k) % n] = rng.random_range(0.05..1.0);
            }
            Density::normalized(w).unwrap()
        })
        .collect()
}

fn soft_local_times() -> Verdict {
    let runs = 20;
    let ground = 500;
    let per_run = 500;
    let band = 1.0;
    let outputs: Vec<(Vec<f64>, Vec<u64>, bool)> = (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(derive_seed(0x5170, &[i]));
            let dens = random_densities(&mut rng, ground, per_run);
            let mut cloud = PoissonCloud::sample(ground, 1.0, stream(derive_seed(0x5171, &[i])));
            let run = soft_local_time_run(&mut cloud, &dens).unwrap();
            // replay the curve, checking every pick against the whole cloud
            let pts = cloud.measure.points.clone();
            let mut picked = vec![false; pts.len()];
            let mut g = vec![0.0; ground];
            let mut exact = true;
            for (k, p) in run.picks.iter().enumerate() {
                exact &= !picked[p.point] && pts[p.point] == (p.z, p.v);
                picked[p.point] = true;
                for (z, gz) in g.iter_mut().enumerate() {
                    *gz += p.xi * dens[k].get(z);
                }
                g[p.z] = p.v;
                exact &= g[p.z] == p.v;
                exact &= pts.iter().enumerate().all(|(j, &(z, v))| picked[j] || v > g[z]);
            }
            exact &= g == run.g;
            let top = g.iter().cloned().fold(0.0, f64::max) + band;
            cloud.extend_to(top);
            let mut counts = vec![0u64; ground];
            for (j, &(z, v)) in cloud.measure.points.iter().enumerate() {
                let was_picked = j < picked.len() && picked[j];
                if !was_picked && v > g[z] && v <= g[z] + band {
                    counts[z] += 1;
                }
            }
            (run.picks.iter().map(|p| p.xi).collect(), counts, exact)
        })
        .collect();
    let mut xis: Vec<f64> = outputs.iter().flat_map(|o| o.0.iter().copied()).collect();
    let counts: Vec<u64> = outputs.iter().flat_map(|o| o.1.iter().copied()).collect();
    let exact = outputs.iter().all(|o| o.2);

    xis.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xis.len() as f64;
    let ks = xis
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let f = 1.0 - (-x).exp();
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    let ks_crit = 1.6276 / n.sqrt();

    // counts in the band above G are Poisson(band); bins 0..=4 and >= 5
    let bins = 6;
    let mut observed = vec![0u64; bins];
    for c in &counts {
        observed[(*c as usize).min(bins - 1)] += 1;
    }
    let total = counts.len() as f64;
    let mut pmf: Vec<f64> = (0..bins - 1)
        .map(|k| (-band).exp() * band.powi(k as i32) / (1..=k).map(|j| j as f64).product::<f64>())
        .collect();
    pmf.push(1.0 - pmf.iter().sum::<f64>());
    let chi2: f64 = observed.iter().zip(&pmf).map(|(o, p)| (*o as f64 - total * p).powi(2) / (total * p)).sum();
    let chi2_crit = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.99);

    // domination soundness
    let dom: Vec<(bool, bool)> = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(derive_seed(0xd0, &[i]));
            let starts: Vec<Site> = (0..rng.random_range(1..=6)).map(|_| site(&[rng.random_range(-12..=12)])).collect();
            let spec = CouplingSpec {
                starts,
                t: 100.0,
                zeta_prime: rng.random_range(0.02..0.6),
                domain: SiteBox::cube(site(&[-5]), 11).unwrap(),
                window: None,
                eps: 1e-12,
                scale: 10.0,
                guard: 1.0,
                cloud_height: 1.0,
                seed: derive_seed(0xd1, &[i]),
            };
            let rep = couple_walks_to_cloud(&spec).unwrap();
            (rep.g_max <= rep.zeta_prime, rep.dominated)
        })
        .collect();
    let premise = dom.iter().filter(|(p, _)| *p).count();
    let unsound = dom.iter().filter(|(p, d)| *p && !*d).count();

    let pass = ks <= ks_crit && chi2 <= chi2_crit && exact && unsound == 0;
    verdict(
        pass,
        format!(
            "KS {ks:.4} (crit {ks_crit:.4}, N={}), residual chi2 {chi2:.2} (crit {chi2_crit:.2}, {} sites), picks exact {exact}, \
             domination {unsound} failures among {premise}/100 instances with max G <= zeta'",
            xis.len(),
            counts.len()
        ),
    )
}

fn multiscale() -> Verdict {
    let table = ScaleTable::new(10_000, Gamma::default(), 20).unwrap();
    let l1 = table.length(1).to_string();
    let first = table.first_kernel_scale();
    let ladder = DensityLadder::new(num_rational::BigRational::new(1.into(), 100.into()), 20).unwrap();
    let ladder_ok = ladder.interleaving_holds() && ladder.above_half();
    let ln_p0 = -table.ln_length(0).powi(2);
    let demo = RecursionParams { d: 1, c3: 1.0, c4: 1000.0 };
    let granted = decay_certificate(0, ln_p0, &demo, &table, 20);
    // oracle loop values, ln p_k for k = 1, 2, 3, 20
    let oracle = [(1, -166.8881508130689551003044), (2, -331.0037129038981289629399), (3, -657.6129766531238191602987), (20, -981481.4752922287507964358)];
    let matches = match &granted {
        Ok(rows) => oracle.iter().all(|(k, v)| (rows[*k].ln_p - v).abs() <= 1e-9 * v.abs()),
        Err(_) => false,
    };
    let refused = decay_certificate(0, ln_p0, &RecursionParams { c4: 0.0, ..demo }, &table, 20);
    let refused_ok = matches!(refused, Err(CertificateError::Refused { k: 0, reason: Refusal::InductionCheck, .. }));
    let pass = l1 == "40000" && first == Some(5) && ladder_ok && granted.is_ok() && matches && refused_ok;
    verdict(
        pass,
        format!(
            "L_1 = {l1}, first 5R <= L at k = {first:?}, ladder exact {ladder_ok}, demo granted {} (oracle match {matches}), c4 = 0 refused {refused_ok}",
            granted.is_ok()
        ),
    )
}

fn driven() -> Verdict {
    let single = driven_dissipation(&DdSpec {
        n: 1,
        d: 1,
        model: Model::Ssm { kappa: 3 },
        insertions: 30,
        seed: 1,
        policy: OrderPolicy::Fifo,
        budget: None,
    })
    .unwrap();
    let single_ok = single.curve.iter().all(|p| p.remaining == p.inserted % 3);

    let runs: Vec<(f64, bool)> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let st = driven_dissipation(&DdSpec {
                n: 30,
                d: 2,
                model: Model::Ssm { kappa: 3 },
                insertions: 500,
                seed,
                policy: OrderPolicy::Fifo,
                budget: None,
            })
            .unwrap();
            let ledger = !st.aborted && st.curve.iter().all(|p| p.inserted == p.remaining + p.dissipated);
            let last = st.curve.last().unwrap();
            (last.dissipated as f64 / last.inserted as f64, ledger)
        })
        .collect();
    let walks = driven_dissipation(&DdSpec {
        n: 30,
        d: 2,
        model: Model::Arw { lambda: 1.0 },
        insertions: 500,
        seed: 3,
        policy: OrderPolicy::Fifo,
        budget: None,
    })
    .unwrap();
    let ledger = runs.iter().all(|r| r.1) && !walks.aborted && walks.curve.iter().all(|p| p.inserted == p.remaining + p.dissipated);
    let mean = runs.iter().map(|r| r.0).sum::<f64>() / runs.len() as f64;
    verdict(
        single_ok && ledger && mean < 0.05,
        format!("single site m mod 3 {single_ok}, ledger exact {ledger}, mean dissipated fraction {:.2}% over 10 seeds", 100.0 * mean),
    )
}

fn config_key(c: &SiteConfig) -> String {
    (0..3).map(|x| c.get(&site(&[x])).to_string()).collect::<Vec<_>>().join(",")
}

fn cross_validation() -> Verdict {
    let domain = SiteBox::cube(site(&[0]), 3).unwrap();
    let n = 10_000u64;
    let mut details = Vec::new();
    let mut pass = true;
    for (name, lambda, start) in [("both at 1", 1.0, [1, 1]), ("at 0 and 1", 0.5, [0, 1])] {
        let initial = SiteConfig::from_particles(&start.map(|x| site(&[x])));
        let pairs: Vec<(String, String)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(0xc8, &[start[0] as u64, i]);
                let timed = simulate_ct(&initial, lambda, f64::INFINITY, &[], Some(&domain), seed, &CtOptions {
                    rates: RateConvention::WalkRateOne,
                    ..CtOptions::default()
                })
                .unwrap();
                assert!(timed.absorbed);
                let tapes = InstructionTapes::random(TapeLaw::Arw { lambda, d: 1 }, derive_seed(seed, &[1])).unwrap();
                let policy = OrderPolicy::RandomParticle { seed: derive_seed(seed, &[2]) };
                let tape = stabilize(&initial, tapes, policy, Some(domain), None).unwrap();
                (config_key(&timed.final_config), config_key(&tape.config))
            })
            .collect();
        let mut table: BTreeMap<String, [f64; 2]> = BTreeMap::new();
        for (a, b) in &pairs {
            table.entry(a.clone()).or_default()[0] += 1.0;
            table.entry(b.clone()).or_default()[1] += 1.0;
        }
        // pool sparse outcomes so every expected count is at least 5
        let mut cells: Vec<[f64; 2]> = Vec::new();
        let mut pool = [0.0; 2];
        for v in table.values() {
            if v[0] + v[1] < 10.0 {
                pool[0] += v[0];
                pool[1] += v[1];
            } else {
                cells.push(*v);
            }
        }
        if pool[0] + pool[1] > 0.0 {
            cells.push(pool);
        }
        let chi2: f64 = cells
            .iter()
            .map(|c| {
                let e = (c[0] + c[1]) / 2.0;
                (c[0] - e).powi(2) / e + (c[1] - e).powi(2) / e
            })
            .sum();
        let df = (cells.len() - 1) as f64;
        let crit = ChiSquared::new(df).unwrap().inverse_cdf(0.99);
        pass &= chi2 <= crit;
        details.push(format!("{name}: chi2 {chi2:.2} on {df} df (crit {crit:.2})"));
    }
    verdict(pass, format!("N = {n} per engine; {}", details.join("; ")))
}

fn fixation() -> Verdict {
    let base = FixationSpec {
        d: 1,
        zeta: 0.0,
        lambda: 1.0,
        m_ladder: vec![2, 4, 8, 16],
        horizon: 10.0,
        l_grid: vec![1, 2, 3, 4, 6, 8, 12, 16, 24, 32],
        trials: 200,
        seed: 99,
        rates: RateConvention::WalkRateOne,
        budget: 10_000_000,
    };
    let zetas = [0.0, 0.25, 0.5, 0.9];
    let tables: Vec<_> = zetas.iter().map(|&zeta| fixation_tail(&FixationSpec { zeta, ..base.clone() }).unwrap()).collect();

    let mut l_monotone = true;
    for t in &tables {
        for &m in &base.m_ladder {
            let row: Vec<_> = base.l_grid.iter().map(|&l| t.cell(m, l).unwrap()).collect();
            l_monotone &= row.windows(2).all(|w| w[1].changes_tail <= w[0].changes_tail && w[1].activity_tail <= w[0].activity_tail);
        }
    }
    let zero = tables[0].cells.iter().all(|c| c.changes_tail == 0.0 && c.activity_tail == 0.0);

    let mut paired = true;
    let mut changes_inversions = 0;
    for w in tables.windows(2) {
        for (lo, hi) in w[0].samples.iter().zip(&w[1].samples) {
            assert_eq!((lo.m, lo.trial), (hi.m, hi.trial));
            paired &= match (lo.activity, hi.activity) {
                (Some(a), Some(b)) => a <= b,
                (Some(_), None) => true,
                (None, b) => b.is_none(),
            };
        }
        for (a, b) in w[0].cells.iter().zip(&w[1].cells) {
            paired &= a.activity_tail <= b.activity_tail;
            if a.changes_tail > b.changes_tail {
                changes_inversions += 1;
            }
        }
    }
    let flagged: u64 = tables.iter().map(|t| t.flagged).sum();
    verdict(
        l_monotone && zero && paired,
        format!(
            "non-increasing in l {l_monotone}, zeta = 0 all zero {zero}, paired activity monotone in zeta {paired} \
             ({flagged} budget flags); timed R_s tail cells decreasing in zeta: {changes_inversions} (not paired, informational)"
        ),
    )
}

fn main() {
    let criteria: [(&str, Option<u64>, fn() -> Verdict); 9] = [
        ("1 abelian invariance", Some(60), abelian_invariance),
        ("2 monotonicity", None, monotonicity),
        ("3 toppling table", None, toppling_table),
        ("4 heat kernels", Some(10), heat_kernels),
        ("5 soft local times", Some(120), soft_local_times),
        ("6 multiscale numerics", Some(5), multiscale),
        ("7 driven dissipation", Some(300), driven),
        ("8 engine cross-validation", Some(120), cross_validation),
        ("9 fixation tails", Some(60), fixation),
    ];
    let mut failed = 0;
    for (name, limit, run) in criteria {
        let t0 = Instant::now();
        let v = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            verdict(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let took = t0.elapsed();
        let in_time = limit.is_none_or(|s| took <= Duration::from_secs(s));
        let pass = v.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = limit.map_or_else(String::new, |s| format!(" / {s} s"));
        println!(
            "[{}] criterion {name}: {} ({:.1} s{budget})",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 9 acceptance criteria passed");
}
