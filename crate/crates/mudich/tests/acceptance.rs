//! Acceptance suite: every headline guarantee of the library, run end to end
//! at desk scale. One test per criterion; each prints a PASS line on success
//! (visible with `cargo test --test acceptance -- --nocapture`).

use std::sync::Arc;
use std::time::Instant;

use mudich::cli::suites::{run_suite, SuiteReport};
use mudich::dichotomy;
use mudich::growth::GrowthRate;
use mudich::linearize;
use mudich::rescale;
use mudich::report::{strip_timestamp, Report};
use mudich::scenario::builtin;
use mudich::spectrum::{self, Interval, SpectrumOptions};
use mudich::system::{EvolutionFamily, NormFamily, OperatorSequence};

fn pass(criterion: u32, detail: &str) {
    println!("ACCEPTANCE {criterion:02}: PASS - {detail}");
}

fn assert_suite(report: &SuiteReport) {
    for check in &report.checks {
        assert!(
            check.passed,
            "[{}] {} failed: {}",
            report.suite, check.name, check.detail
        );
    }
    assert!(report.passed);
}

/// Criterion 1: with eta = mu the rescaled operators reproduce the base
/// sequence entrywise, with zero tolerance, on five bundled systems.
#[test]
fn criterion_01_rescaling_identity() {
    let poly = || Arc::new(GrowthRate::polynomial());
    let geo = |h: f64| Arc::new(GrowthRate::geometric(h).unwrap());
    let systems: Vec<(&str, Arc<GrowthRate>, Arc<OperatorSequence>)> = vec![
        {
            let rate = poly();
            let seq = Arc::new(OperatorSequence::diagonal_powers(rate.clone(), vec![-1.0, 2.0]));
            ("hyperbolic diagonal / polynomial", rate, seq)
        },
        {
            let rate = poly();
            let seq = Arc::new(OperatorSequence::diagonal_powers(rate.clone(), vec![0.0, 0.0]));
            ("identity / polynomial", rate, seq)
        },
        {
            let rate = poly();
            let seq = Arc::new(OperatorSequence::spiking_counterexample());
            ("spiking scalar / polynomial", rate, seq)
        },
        {
            let rate = geo(1.01);
            let seq = Arc::new(OperatorSequence::diagonal_powers(rate.clone(), vec![-0.5, 1.0]));
            ("diagonal / geometric(1.01)", rate, seq)
        },
        {
            let rate = geo(1.02);
            let seq = Arc::new(OperatorSequence::switched_dyadic(rate.clone(), vec![1.0, 2.0], 1));
            ("switched / geometric(1.02)", rate, seq)
        },
    ];
    let horizon = 1000usize;
    for (name, rate, seq) in systems {
        let fam = Arc::new(EvolutionFamily::new(seq.clone()));
        let dim = seq.dim();
        let rs = rescale::build(
            fam,
            rate.clone(),
            rate.clone(),
            NormFamily::euclidean(dim),
            None,
            horizon + 1,
            horizon,
        )
        .unwrap();
        for n in 1..=horizon {
            let q = rs.q(n).unwrap();
            let a = seq.operator(n).unwrap();
            assert_eq!(q, a, "Q_{n} != A_{n} on `{name}`");
        }
    }
    pass(1, "eta = mu reproduces the base sequence exactly on 5 systems, horizon 1000");
}

/// Criterion 2: the spiking counterexample - vanishing rescale certified
/// with N = 1, base certification failing at every rank, within 10 s.
#[test]
fn criterion_02_counterexample_suite() {
    let start = Instant::now();
    let report = run_suite("paper-example").unwrap();
    let elapsed = start.elapsed();
    assert_suite(&report);
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "counterexample suite took {:.1}s",
        elapsed.as_secs_f64()
    );
    pass(2, &format!("counterexample suite in {:.2}s", elapsed.as_secs_f64()));
}

/// Criterion 3: forward direction of the rescaling equivalence at desk scale.
#[test]
fn criterion_03_rescaling_forward() {
    let report = run_suite("teo-main-forward").unwrap();
    assert_suite(&report);
    pass(3, "base exponent transfers to the rescaled fit with bounded constant");
}

/// Criterion 4: reverse direction - ordinary + rescaled dichotomy
/// reconstruct the base dichotomy with bounded constant.
#[test]
fn criterion_04_rescaling_reverse() {
    let report = run_suite("teo-main-reverse").unwrap();
    assert_suite(&report);
    pass(4, "reconstructed base constant within K^2 N theta^(2 nu) * 1.1");
}

/// Criterion 5: pulled-back projections are invariant (<= 1e-8) and norm
/// bounded by K^2 L theta^(4a) * 1.1 on 1000 samples.
#[test]
fn criterion_05_projection_pull_back() {
    let report = run_suite("newthm-pullback").unwrap();
    assert_suite(&report);
    pass(5, "transported projections invariant and uniformly bounded");
}

/// Criterion 6: the two spectrum estimators agree within 2 grid steps on all
/// four bundled systems, with at most d intervals, under 2 minutes each.
#[test]
fn criterion_06_spectrum_equality() {
    let report = run_suite("dicspec-equality").unwrap();
    assert_suite(&report);
    pass(6, "mu-spectrum equals the rescaled exponential spectrum on 4 systems");
}

/// Criterion 7: growth and Gronwall audits - the partial-sum bound at every
/// tested window for 3 rates, the interpolant ratio bound on a 1000-point
/// grid, and the nonlinear Lipschitz envelope with 1.05 slack.
#[test]
fn criterion_07_growth_audits() {
    // partial-sum bound at every tested (n, m)
    for rate in [
        GrowthRate::polynomial(),
        GrowthRate::exponential(),
        GrowthRate::geometric(2.0).unwrap(),
    ] {
        for n in 1..=64usize {
            for m in n..=64 {
                let (sum, bound) = rate.log_sum_bound(n, m).unwrap();
                assert!(
                    sum <= bound + 1e-12,
                    "sum bound failed for {} at ({n},{m}): {sum} > {bound}",
                    rate.name()
                );
            }
        }
    }

    // interpolant ratio bound on a 1000+ point t-grid
    for rate in [GrowthRate::polynomial(), GrowthRate::exponential()] {
        let validation = rate.validate(256).unwrap();
        assert!(validation.ratio_within_theta, "{}", rate.name());
        assert!(validation.interp_within_theta_sq, "{}", rate.name());
    }

    // nonlinear Lipschitz envelope with exponent a + cK theta, slack 1.05
    let built = builtin("conjugacy-sincos").unwrap().build("conjugacy-sincos").unwrap();
    let perturbation = built.perturbation.clone().unwrap();
    let audit = dichotomy::check_bounded_growth(
        &built.family,
        &built.norms,
        &built.rate,
        4096,
    )
    .unwrap();
    let worst = linearize::gronwall_audit(
        &built.family,
        &perturbation,
        &built.rate,
        audit.k_hat,
        audit.a_hat,
        4096,
    )
    .unwrap();
    assert!(worst <= 1.05, "Gronwall envelope ratio {worst} exceeds 1.05");

    pass(7, "partial-sum, interpolant-ratio and Gronwall envelopes all hold");
}

/// Criterion 8: the conjugacy pipeline - residual <= 1e-6 on 1000 samples,
/// displacement stable within 5% under tail doubling, exact zero control.
#[test]
fn criterion_08_conjugacy_suite() {
    let report = run_suite("ntl-conjugacy").unwrap();
    assert_suite(&report);
    pass(8, "conjugacy residual <= 1e-6, displacement tail-stable, zero control exact");
}

/// Criterion 9: resonance and band/gap checkers reproduce their worked
/// examples exactly and match a brute-force oracle for r <= 3, t <= 6.
#[test]
fn criterion_09_resonance_bandgap() {
    fn estimate(intervals: Vec<Interval>) -> spectrum::SpectrumEstimate {
        let rate = Arc::new(GrowthRate::polynomial());
        let fam = Arc::new(EvolutionFamily::new(Arc::new(
            OperatorSequence::diagonal_powers(rate.clone(), vec![0.0]),
        )));
        let mut est = spectrum::mu_spectrum(&fam, &rate, 64, &SpectrumOptions::default()).unwrap();
        est.dim = intervals.len().max(1);
        est.intervals = intervals;
        est
    }

    // resonance worked examples
    let est = estimate(vec![Interval { lo: 2.0, hi: 2.0 }, Interval { lo: 4.0, hi: 4.0 }]);
    let violations = spectrum::check_resonance(&est, 2).unwrap();
    assert_eq!(violations.len(), 1);
    assert_eq!(violations[0].interval, 2);
    assert_eq!(violations[0].q, vec![2, 0]);

    let est = estimate(vec![Interval { lo: -3.0, hi: -2.5 }]);
    for t in 2..=10 {
        assert!(spectrum::check_resonance(&est, t).unwrap().is_empty());
    }
    let est = estimate(vec![Interval { lo: 1.0, hi: 1.0 }]);
    assert!(spectrum::check_resonance(&est, 5).unwrap().is_empty());

    // band/gap worked examples
    let est = estimate(vec![
        Interval { lo: -3.0, hi: -2.9 },
        Interval { lo: 2.0, hi: 2.05 },
    ]);
    let report = spectrum::check_band_gap(&est).unwrap();
    assert!(report.all_pass() && report.gap == 4.9 && report.gap_required == 3.0);

    let est = estimate(vec![
        Interval { lo: -1.0, hi: -0.5 },
        Interval { lo: 0.4, hi: 0.6 },
    ]);
    assert!(!spectrum::check_band_gap(&est).unwrap().gap_ok);

    let est = estimate(vec![
        Interval { lo: -1.0, hi: -1.0 },
        Interval { lo: 1.0, hi: 1.0 },
    ]);
    assert!(spectrum::check_band_gap(&est).unwrap().all_pass());

    // brute-force cross-check of the resonance enumeration, r <= 3, t <= 6
    let cases = vec![
        vec![Interval { lo: -1.5, hi: -1.0 }, Interval { lo: 0.5, hi: 0.75 }],
        vec![
            Interval { lo: -2.0, hi: -1.8 },
            Interval { lo: 0.9, hi: 1.1 },
            Interval { lo: 2.0, hi: 2.2 },
        ],
        vec![Interval { lo: 0.25, hi: 0.5 }],
        vec![Interval { lo: 1.0, hi: 2.0 }, Interval { lo: 3.0, hi: 3.5 }],
    ];
    for intervals in cases {
        let r = intervals.len();
        let est = estimate(intervals.clone());
        for t in 2..=6u32 {
            let mut got: Vec<(usize, Vec<u32>)> = spectrum::check_resonance(&est, t)
                .unwrap()
                .into_iter()
                .map(|v| (v.interval, v.q))
                .collect();
            got.sort();
            let mut expected = Vec::new();
            let mut q = vec![0u32; r];
            loop {
                let total: u32 = q.iter().sum();
                if (2..=t).contains(&total) {
                    let lo: f64 = q.iter().zip(&intervals).map(|(&qi, iv)| qi as f64 * iv.lo).sum();
                    let hi: f64 = q.iter().zip(&intervals).map(|(&qi, iv)| qi as f64 * iv.hi).sum();
                    for (i, iv) in intervals.iter().enumerate() {
                        if iv.lo.max(lo) <= iv.hi.min(hi) {
                            expected.push((i + 1, q.clone()));
                        }
                    }
                }
                // odometer over {0..t}^r
                let mut pos = 0;
                loop {
                    if pos == r {
                        break;
                    }
                    q[pos] += 1;
                    if q[pos] <= t {
                        break;
                    }
                    q[pos] = 0;
                    pos += 1;
                }
                if pos == r {
                    break;
                }
            }
            expected.sort();
            assert_eq!(got, expected, "resonance mismatch for r={r}, t={t}");
        }
    }

    pass(9, "worked examples exact; enumeration matches the brute-force oracle");
}

/// Criterion 10: determinism - reruns with the same seed produce
/// byte-identical reports once the timestamp header line is removed.
#[test]
fn criterion_10_determinism() {
    // suite report determinism
    let a = run_suite("paper-example").unwrap();
    let b = run_suite("paper-example").unwrap();
    let ja = Report::new("verify", "paper-example", 42, &a).to_json().unwrap();
    let jb = Report::new("verify", "paper-example", 42, &b).to_json().unwrap();
    assert_eq!(strip_timestamp(&ja), strip_timestamp(&jb));

    // spectrum estimate determinism (parallel scan included)
    let built = builtin("diag-poly").unwrap().build("diag-poly").unwrap();
    let opts = SpectrumOptions::default();
    let ea = spectrum::mu_spectrum(&built.family, &built.rate, built.horizon, &opts).unwrap();
    let eb = spectrum::mu_spectrum(&built.family, &built.rate, built.horizon, &opts).unwrap();
    assert_eq!(
        serde_json::to_string(&ea).unwrap(),
        serde_json::to_string(&eb).unwrap()
    );

    // certificate determinism across fresh caches
    let cert = |()| {
        let built = builtin("diag-poly").unwrap().build("diag-poly").unwrap();
        let cert = dichotomy::fit_mu(
            &built.family,
            built.projection.as_ref().unwrap(),
            &built.norms,
            &built.rate,
            built.horizon,
            &dichotomy::FitOptions {
                seed: built.seed,
                ..Default::default()
            },
        )
        .unwrap();
        serde_json::to_string(&cert).unwrap()
    };
    assert_eq!(cert(()), cert(()));

    pass(10, "suite, spectrum and certificate reports are byte-identical on rerun");
}
