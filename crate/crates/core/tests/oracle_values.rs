//! Values computed ahead of time by the arbitrary-precision script in
//! `tests/oracle/` and frozen here.

use arwlab_core::kernels::{heat_kernel_1d, DEFAULT_EPS};
use arwlab_core::multiscale::{
    decay_certificate, induction_ln_lhs, CertificateError, DensityLadder, Gamma, RecursionParams, Refusal, ScaleTable,
};
use num_bigint::BigUint;
use num_rational::BigRational;

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(1.0)
}

#[test]
fn bessel_kernel_values() {
    let cases = [
        (1.0, 0, 0.465759607593640436501901529563),
        (2.0, 1, 0.215269289248937659158505143255),
        (4.0, 3, 0.0611243380296662926254833170241),
        (16.0, 5, 0.0451785003146907082609731711368),
        (64.0, 0, 0.0499660533823573731243654487533),
    ];
    for (t, x, want) in cases {
        let got = heat_kernel_1d(t, x, DEFAULT_EPS);
        assert!((got - want).abs() < 1e-12, "p_{t}(0,{x}) = {got}, want {want}");
    }
}

#[test]
fn scale_sequence() {
    let t = ScaleTable::new(10_000, Gamma::default(), 20).unwrap();
    let l: Vec<u64> = (0..6).map(|k| t.length(k).try_into().unwrap()).collect();
    assert_eq!(l, [10_000, 40_000, 160_000, 1_440_000, 23_040_000, 576_000_000]);
    let r: Vec<Option<BigUint>> = (0..6).map(|k| t.ring(k).cloned()).collect();
    let want = [None, Some(20_000u64), Some(80_000), Some(480_000), Some(5_760_000), Some(115_200_000)];
    assert_eq!(r, want.map(|v| v.map(BigUint::from)));
    assert_eq!(t.first_kernel_scale(), Some(5));
    assert!(close(t.ln_length(20), 307.371615821106431369379506536, 1e-13));
}

#[test]
fn induction_left_side() {
    let t = ScaleTable::new(10_000, Gamma::default(), 20).unwrap();
    let p = RecursionParams { d: 1, c3: 1.0, c4: 1.0 };
    let lhs = induction_ln_lhs(0, &p, &t).unwrap().exp();
    assert!(close(lhs, 0.256826019340777658243531297638, 1e-12));
    assert!((0..=20).all(|k| induction_ln_lhs(k, &p, &t).unwrap() <= 0.0));
}

#[test]
fn replayed_recursion() {
    let t = ScaleTable::new(10_000, Gamma::default(), 20).unwrap();
    let ln_p0 = -t.ln_length(0).powi(2);

    let weak = RecursionParams { d: 1, c3: 1.0, c4: 1.0 };
    match decay_certificate(0, ln_p0, &weak, &t, 20) {
        Err(CertificateError::Refused { k: 1, reason: Refusal::Bound, rows }) => {
            assert!(close(rows[1].ln_p, -1.359356390878525622898598, 1e-12));
            assert!(close(rows[1].ln_threshold, -112.2886676666580897880439, 1e-12));
        }
        other => panic!("unexpected {other:?}"),
    }

    let demo = RecursionParams { d: 1, c3: 1.0, c4: 1000.0 };
    let rows = decay_certificate(0, ln_p0, &demo, &t, 20).unwrap();
    assert_eq!(rows.len(), 21);
    let frozen = [
        (1, -166.8881508130689551003044, -112.2886676666580897880439),
        (2, -331.0037129038981289629399, -143.5905896770074228044379),
        (3, -657.6129766531238191602987, -201.0767581488348659416721),
        (20, -981481.4752922287507964358, -94477.31021247784546800145),
    ];
    for (k, ln_p, thr) in frozen {
        assert!(close(rows[k].ln_p, ln_p, 1e-11), "k={k}: {}", rows[k].ln_p);
        assert!(close(rows[k].ln_threshold, thr, 1e-12));
        assert!(rows[k].margin > 0.0);
    }
    assert!(rows.iter().all(|r| r.ln_p <= r.ln_threshold));
}

#[test]
fn density_ladder_values() {
    let z0 = BigRational::new(1.into(), 100.into());
    let ladder = DensityLadder::new(z0, 3).unwrap();
    let want = [(1, 100), (3, 400), (11, 1600), (19, 2880)];
    for (k, (n, d)) in want.iter().enumerate() {
        assert_eq!(ladder.zeta[k], BigRational::new((*n).into(), (*d).into()));
    }
}
