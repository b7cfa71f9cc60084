//! End-to-end tests of the `mudich` binary: exit-code contract, report
//! round-trips, and byte-level determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn mudich(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mudich"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("mudich-cli-tests");
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

#[test]
fn validate_rate_passes_and_fails() {
    let out = tmp("rate.json");
    let ok = mudich(&[
        "validate-rate",
        "--rate",
        "polynomial",
        "--horizon",
        "200",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(ok.status.code(), Some(0));
    let report = read_json(&out);
    assert_eq!(report["body"]["max_ratio"], 2.0);

    let usage = mudich(&["validate-rate", "--rate", "sublinear", "--horizon", "10"]);
    assert_eq!(usage.status.code(), Some(1));
}

#[test]
fn dichotomy_exit_codes_match_certification() {
    // the spiking counterexample admits no mu-dichotomy: certified failure
    let out = tmp("mu-fail.json");
    let fail = mudich(&[
        "dichotomy",
        "--scenario",
        "paper-example",
        "--kind",
        "mu",
        "--horizon",
        "4096",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(fail.status.code(), Some(2));
    let cert = read_json(&out);
    assert_eq!(cert["body"]["verdict"], false);

    // its rescaling is hyperbolic: rescale, re-ingest, certify, exit 0
    let rescaled = tmp("rescaled.json");
    let rc = mudich(&[
        "rescale",
        "--scenario",
        "paper-example",
        "--out",
        rescaled.to_str().unwrap(),
    ]);
    assert_eq!(rc.status.code(), Some(0));
    let body = read_json(&rescaled);
    let q_scenario = tmp("rescaled-scenario.json");
    std::fs::write(
        &q_scenario,
        serde_json::to_string_pretty(&body["body"]["q_scenario"]).unwrap(),
    )
    .unwrap();
    let out2 = tmp("ed-pass.json");
    let pass = mudich(&[
        "dichotomy",
        "--scenario",
        q_scenario.to_str().unwrap(),
        "--kind",
        "exponential",
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_eq!(pass.status.code(), Some(0));
    let cert = read_json(&out2);
    assert_eq!(cert["body"]["verdict"], true);
    assert_eq!(cert["body"]["nilpotent_forward"], true);
}

#[test]
fn rescale_identity_emits_base_table() {
    // eta = mu: the emitted Q table equals the base operators
    let scenario = tmp("identity-rescale.json");
    std::fs::write(
        &scenario,
        r#"{
            "dim": 1,
            "system": { "kind": "diagonal", "exponents": ["1.5"] },
            "rate": { "kind": "polynomial", "theta": "2" },
            "horizon": 64,
            "seed": 1
        }"#,
    )
    .unwrap();
    let out = tmp("identity-rescale-out.json");
    let rc = mudich(&[
        "rescale",
        "--scenario",
        scenario.to_str().unwrap(),
        "--eta",
        "polynomial",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(rc.status.code(), Some(0));
    let body = read_json(&out);
    let q = body["body"]["q"].as_array().unwrap();
    for (i, qn) in q.iter().enumerate() {
        let n = i + 1;
        let expected = ((n + 2) as f64 / (n + 1) as f64).powf(1.5);
        let got = qn[0][0].as_f64().unwrap();
        // in-process Q_n == A_n is bit-exact (acceptance criterion); across
        // separately compiled processes powf may differ by an ulp
        assert!(
            (got - expected).abs() <= 4.0 * f64::EPSILON * expected,
            "Q_{n} = {got} differs from A_{n} = {expected}"
        );
    }
    // tau is the identity map
    let tau = body["body"]["tau"].as_array().unwrap();
    for (i, t) in tau.iter().enumerate() {
        assert_eq!(t.as_u64().unwrap() as usize, i + 1);
    }
}

#[test]
fn spectrum_both_methods_agree_and_feed_checkers() {
    let out = tmp("spectrum.json");
    let rc = mudich(&[
        "spectrum",
        "--scenario",
        "diag-poly",
        "--method",
        "both",
        "--step",
        "0.05",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(rc.status.code(), Some(0));
    let report = read_json(&out);
    let hausdorff = report["body"]["hausdorff"].as_f64().unwrap();
    assert!(hausdorff <= 0.1, "hausdorff {hausdorff}");
    assert!(out.with_extension("margins.csv").exists());
    let csv = std::fs::read_to_string(out.with_extension("margins.csv")).unwrap();
    assert!(csv.starts_with("method,lambda,resolvent,margin\n"));

    // spectrum JSON feeds the resonance checker; {-1, 2} is non-resonant
    // at low orders (2*2 = 4 and -1+2 = 1 miss both points) but
    // q = (2, 2) hits 2(-1) + 2(2) = 2: resonant at order 4
    let reso = mudich(&[
        "resonance",
        "--spec",
        out.to_str().unwrap(),
        "--order",
        "2",
    ]);
    assert_eq!(reso.status.code(), Some(0));
    let reso4 = mudich(&[
        "resonance",
        "--spec",
        out.to_str().unwrap(),
        "--order",
        "4",
    ]);
    assert_eq!(reso4.status.code(), Some(2));

    // band/gap hypothesis checker on the same estimate
    let bg_out = tmp("bandgap.json");
    let bg = mudich(&[
        "bandgap",
        "--spec",
        out.to_str().unwrap(),
        "--out",
        bg_out.to_str().unwrap(),
    ]);
    // gap = a_2 - b_1 ~ 3 > max(b_2, -a_1) = 2, bands are points: all pass
    assert_eq!(bg.status.code(), Some(0));
    let report = read_json(&bg_out);
    assert_eq!(report["body"]["k_split"], 1);
}

#[test]
fn malformed_scenarios_exit_one_with_diagnostic() {
    let bad = tmp("bad.json");
    std::fs::write(
        &bad,
        r#"{"dim": 2, "system": {"kind": "diagonal", "exponents": ["1"]},
            "rate": {"kind": "polynomial", "theta": "2"}, "horizon": 100}"#,
    )
    .unwrap();
    let rc = mudich(&[
        "spectrum",
        "--scenario",
        bad.to_str().unwrap(),
        "--out",
        tmp("never.json").to_str().unwrap(),
    ]);
    assert_eq!(rc.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&rc.stderr);
    assert!(
        stderr.contains("system.exponents"),
        "diagnostic should name the field, got: {stderr}"
    );

    let missing = mudich(&[
        "dichotomy",
        "--scenario",
        "no-such-builtin",
        "--kind",
        "mu",
        "--out",
        tmp("never2.json").to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn linearize_report_and_histogram() {
    let out = tmp("conj.json");
    let rc = mudich(&[
        "linearize",
        "--scenario",
        "conjugacy-sincos",
        "--tail",
        "16",
        "--samples",
        "150",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(rc.status.code(), Some(0));
    let report = read_json(&out);
    let residual = report["body"]["max_residual"].as_f64().unwrap();
    assert!(residual <= 1e-6);
    let hist = std::fs::read_to_string(out.with_extension("hist.csv")).unwrap();
    assert!(hist.starts_with("bin_hi,count\n"));
    assert!(hist.lines().count() > 1);
}

#[test]
fn verify_suite_exit_codes_and_determinism() {
    let out_a = tmp("suite-a.json");
    let out_b = tmp("suite-b.json");
    for out in [&out_a, &out_b] {
        let rc = mudich(&[
            "verify",
            "--suite",
            "paper-example",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(rc.status.code(), Some(0));
        let stdout = String::from_utf8_lossy(&rc.stdout);
        assert!(stdout.contains("PASS"));
    }
    let a = mudich::report::strip_timestamp(&std::fs::read_to_string(&out_a).unwrap());
    let b = mudich::report::strip_timestamp(&std::fs::read_to_string(&out_b).unwrap());
    assert_eq!(a, b, "suite reports differ across reruns");

    let unknown = mudich(&["verify", "--suite", "nope"]);
    assert_eq!(unknown.status.code(), Some(1));
}

#[test]
fn certificate_json_round_trips() {
    let out = tmp("cert-roundtrip.json");
    let rc = mudich(&[
        "dichotomy",
        "--scenario",
        "diag-poly",
        "--kind",
        "mu",
        "--horizon",
        "2000",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(rc.status.code(), Some(0));
    let text = std::fs::read_to_string(&out).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let cert: mudich::dichotomy::DichotomyCertificate =
        serde_json::from_value(value["body"].clone()).unwrap();
    assert!(cert.verdict);
    // re-serializing the ingested certificate reproduces the body
    let again = serde_json::to_value(&cert).unwrap();
    assert_eq!(again, value["body"]);
}
