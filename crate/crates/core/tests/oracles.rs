//! Reference values computed independently (40-digit mpmath, scipy 1.15)
//! and frozen here.

use ride_core::stats::special::{normal_two_sided, student_t_two_sided};
use ride_core::stats::{
    bh_fdr, correlation, paired_t, wilcoxon_signed_rank, CorrelationMethod, TestMethod,
};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn student_t_two_sided_reference() {
    let cases = [
        (3.4641016151377544, 2.0, 0.074179900227448538433),
        (1.0, 1.0, 0.5),
        (2.0, 5.0, 0.10193947882985835625),
        (0.5, 10.0, 0.62789360574297294271),
        (3.0, 30.0, 0.0053899640656519466128),
        (10.0, 3.0, 0.0021283990584141500574),
        (1.96, 1000.0, 0.050273184955748718435),
        (5.0, 999.0, 6.7683618958010971322e-7),
        (0.1, 2.0, 0.92946543841414016922),
    ];
    for (t, df, p) in cases {
        let got = student_t_two_sided(t, df);
        assert!(close(got, p, 1e-10), "t={t} df={df}: {got} vs {p}");
        assert!(close(student_t_two_sided(-t, df), p, 1e-10));
    }
}

#[test]
fn normal_two_sided_reference() {
    let cases = [
        (0.0, 1.0),
        (1.0, 0.31731050786291410283),
        (1.96, 0.049995790296440872426),
        (3.0, 0.0026997960632601890533),
        (6.0, 1.9731752900753962814e-9),
    ];
    for (z, p) in cases {
        assert!(close(normal_two_sided(z), p, 1e-10), "z={z}");
    }
}

#[test]
fn paired_t_matches_reference() {
    let x = [0.5, -1.25, 2.0, 3.5, -0.75, 1.0, 2.25, 4.0, -2.5, 1.5];
    let r = paired_t(&x).unwrap();
    assert!(close(r.statistic, 1.5634891440114287, 1e-12));
    assert!(close(r.p_value, 0.1523750409899628, 1e-10));
    assert_eq!(r.n, 10);
}

#[test]
fn paired_t_spec_example_p() {
    let r = paired_t(&[1.0, 2.0, 3.0]).unwrap();
    assert!(close(r.p_value, 0.074179900227448538433, 1e-10));
}

#[test]
fn wilcoxon_exact_reference() {
    let x = [0.5, -1.25, 2.0, 3.5, -0.75, 1.0, 2.25, 4.0, -2.5, 1.5];
    let r = wilcoxon_signed_rank(&x).unwrap();
    assert_eq!(r.method, TestMethod::WilcoxonExact);
    assert_eq!(r.statistic, 14.0);
    assert!(close(r.p_value, 0.193359375, 1e-12));
}

#[test]
fn wilcoxon_normal_reference() {
    let x: Vec<f64> = (1..=40).map(|i| ((i % 9) as f64 - 3.0) * 0.5).collect();
    let r = wilcoxon_signed_rank(&x).unwrap();
    assert_eq!(r.method, TestMethod::WilcoxonNormal);
    assert_eq!(r.n, 35);
    assert_eq!(r.statistic, 196.5);
    assert!(
        close(r.p_value, 0.05171846215936997, 1e-10),
        "{}",
        r.p_value
    );
}

#[test]
fn correlation_reference() {
    let a = [1.0, 2.0, 3.5, 4.0, 5.5, 7.0, 8.0];
    let b = [2.1, 1.9, 3.0, 5.2, 5.0, 7.7, 9.9];
    let p = correlation(&a, &b, CorrelationMethod::Pearson).unwrap();
    assert!(close(p.statistic, 0.9550643440641213, 1e-12));
    assert!(close(p.p_value, 0.0008024093396746171, 1e-10));
    assert!(p.ci_low.unwrap() <= p.statistic && p.statistic <= p.ci_high.unwrap());
    let s = correlation(&a, &b, CorrelationMethod::Spearman).unwrap();
    assert!(close(s.statistic, 0.9285714285714288, 1e-12));
    assert!(close(s.p_value, 0.0025194724037946874, 1e-10));
}

#[test]
fn bh_adjusted_reference() {
    // statsmodels multipletests(method="fdr_bh")
    let p = [0.041, 0.001, 0.205, 0.008, 0.074, 0.039, 0.06, 0.042];
    let out = bh_fdr(&p, 0.05).unwrap();
    let expect = [
        0.0672,
        0.008,
        0.205,
        0.032,
        0.08457142857142857,
        0.0672,
        0.08,
        0.0672,
    ];
    for (a, e) in out.adjusted.iter().zip(expect) {
        assert!(close(*a, e, 1e-12), "{a} vs {e}");
    }
    assert_eq!(
        out.reject,
        [false, true, false, true, false, false, false, false]
    );
}
