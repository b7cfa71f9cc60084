//! The `mudich` command-line front end: scenario ingestion, certification and
//! scan commands, report emission, and bundled verification suites.
//!
//! Exit codes: 0 when the requested verdicts pass, 2 when a certification or
//! suite expectation fails, 1 on usage or validation errors.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::dichotomy::{self, FitOptions};
use crate::error::{Error, Result};
use crate::linearize::{ConjugacyPipeline, SampleSpec};
use crate::report::{write_csv, Report};
use crate::rescale;
use crate::scenario::{builtin, BuiltScenario, RateSpec, Scenario};
use crate::spectrum::{self, SpectrumEstimate, SpectrumOptions};

#[derive(Debug, Parser)]
#[command(
    name = "mudich",
    about = "dichotomy analysis for nonautonomous difference equations",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Ordinary,
    Mu,
    Exponential,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Mu,
    EdRescaled,
    Both,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Audit a growth rate's ratio bounds over a horizon
    ValidateRate {
        /// rate name (polynomial | exponential | geometric:H) or use --scenario
        #[arg(long)]
        rate: Option<String>,
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long, default_value_t = 1000)]
        horizon: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the rescaled system and emit its tau and Q tables
    Rescale {
        #[arg(long)]
        scenario: String,
        /// eta rate name; defaults to the scenario's eta or `exponential`
        #[arg(long)]
        eta: Option<String>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Certify a dichotomy of the scenario's system
    Dichotomy {
        #[arg(long)]
        scenario: String,
        /// rate override (polynomial | exponential | geometric:H)
        #[arg(long)]
        rate: Option<String>,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the dichotomy spectrum
    Spectrum {
        #[arg(long)]
        scenario: String,
        #[arg(long, value_enum, default_value = "both")]
        method: MethodArg,
        /// lambda range LO:HI; defaults to the growth-audit range
        #[arg(long)]
        range: Option<String>,
        #[arg(long, default_value_t = 0.05)]
        step: f64,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the non-resonance condition of a spectrum estimate
    Resonance {
        /// spectrum JSON produced by `mudich spectrum`
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        order: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the band/gap inequalities of a spectrum estimate
    Bandgap {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build and verify the conjugacy between the perturbed system and its
    /// linear part
    Linearize {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 16)]
        tail: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a bundled verification suite
    Verify {
        /// paper-example | teo-main-forward | teo-main-reverse |
        /// newthm-pullback | dicspec-equality | ntl-conjugacy
        #[arg(long)]
        suite: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Entry point used by the binary: configures the thread pool from
/// MUDICH_THREADS, runs the command and maps errors to exit code 1.
pub fn main_entry() -> i32 {
    if let Ok(threads) = std::env::var("MUDICH_THREADS") {
        if let Ok(n) = threads.trim().parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build_global();
        }
    }
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn load_scenario_full(spec: &str) -> Result<(Scenario, BuiltScenario)> {
    let path = Path::new(spec);
    if path.exists() {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        let raw = Scenario::from_file(path)?;
        let built = raw.build(&name)?;
        return Ok((raw, built));
    }
    let raw = builtin(spec)?;
    let built = raw.build(spec)?;
    Ok((raw, built))
}

fn load_scenario(spec: &str) -> Result<BuiltScenario> {
    Ok(load_scenario_full(spec)?.1)
}

fn parse_range(text: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 2 {
        return Err(Error::Domain(format!("bad range `{text}`, expected LO:HI")));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| Error::Domain(format!("bad range bound `{}`", parts[0])))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| Error::Domain(format!("bad range bound `{}`", parts[1])))?;
    Ok((lo, hi))
}

pub fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::ValidateRate {
            rate,
            scenario,
            horizon,
            out,
        } => {
            let (rate, name, seed) = match (&rate, &scenario) {
                (Some(r), _) => (RateSpec::parse_name(r)?.build()?, r.clone(), 0),
                (None, Some(s)) => {
                    let built = load_scenario(s)?;
                    (built.rate, built.name, built.seed)
                }
                (None, None) => {
                    return Err(Error::Domain(
                        "validate-rate needs --rate or --scenario".into(),
                    ))
                }
            };
            let validation = rate.validate(horizon)?;
            let passed = validation.passed();
            let report = Report::new("validate-rate", &name, seed, &validation);
            match out {
                Some(path) => report.write(&path)?,
                None => print!("{}", report.to_json()?),
            }
            Ok(if passed { 0 } else { 2 })
        }

        Command::Rescale {
            scenario,
            eta,
            horizon,
            out,
        } => {
            let (raw, built) = load_scenario_full(&scenario)?;
            let horizon = horizon.unwrap_or(built.horizon);
            let eta_rate = match &eta {
                Some(name) => RateSpec::parse_name(name)?.build()?,
                None => match &built.eta {
                    Some(e) => e.clone(),
                    None => Arc::new(crate::growth::GrowthRate::exponential()),
                },
            };
            let map = rescale::RescaleIndexMap::new(built.rate.clone(), eta_rate.clone())?;
            let usable = map.max_usable(horizon)?;
            if usable == 0 {
                return Err(Error::HorizonExhausted { max_usable: 0 });
            }
            let rs = rescale::build(
                built.family.clone(),
                built.rate.clone(),
                eta_rate.clone(),
                built.norms.clone(),
                built.projection.clone(),
                horizon,
                usable,
            )?;
            let mut tau = Vec::with_capacity(usable + 1);
            for k in 1..=usable + 1 {
                tau.push(rs.tau(k)?);
            }
            let mut q_tables = Vec::with_capacity(usable);
            for n in 1..=usable {
                let q = rs.q(n)?;
                let rows: Vec<Vec<f64>> = (0..q.nrows())
                    .map(|r| (0..q.ncols()).map(|c| q[(r, c)]).collect())
                    .collect();
                q_tables.push(rows);
            }
            #[derive(Serialize)]
            struct RescaleBody {
                eta: String,
                rescaled_horizon: usize,
                tau: Vec<usize>,
                q: Vec<Vec<Vec<f64>>>,
                /// scenario describing the rescaled system, ready to re-ingest
                q_scenario: serde_json::Value,
            }
            let mut q_scenario = serde_json::json!({
                "dim": built.dim,
                "system": {
                    "kind": "table",
                    "matrices": q_tables,
                    "invertible": built.system.invertible(),
                },
                "rate": { "kind": "exponential", "theta": std::f64::consts::E },
                "horizon": usable,
                "seed": built.seed,
            });
            if let Some(proj) = &raw.projection {
                q_scenario["projection"] = serde_json::to_value(proj)?;
            }
            let body = RescaleBody {
                eta: eta_rate.name().to_string(),
                rescaled_horizon: usable,
                tau,
                q: q_tables.clone(),
                q_scenario,
            };
            Report::new("rescale", &built.name, built.seed, &body).write(&out)?;
            Ok(0)
        }

        Command::Dichotomy {
            scenario,
            rate,
            kind,
            horizon,
            tol,
            out,
        } => {
            let built = load_scenario(&scenario)?;
            let horizon = horizon.unwrap_or(built.horizon);
            let rate_arc = match &rate {
                Some(name) => RateSpec::parse_name(name)?.build()?,
                None => built.rate.clone(),
            };
            let projection = built.projection.clone().ok_or_else(|| Error::Scenario {
                path: "projection".into(),
                reason: "dichotomy certification needs a projection spec".into(),
            })?;
            let opts = FitOptions {
                tolerance: tol.unwrap_or(built.tolerances.residual),
                nu_min: built.tolerances.nu_min,
                invariance_tolerance: built.tolerances.invariance,
                seed: built.seed,
                ..FitOptions::default()
            };
            let cert = match kind {
                KindArg::Ordinary => dichotomy::check_ordinary(
                    &built.family,
                    &projection,
                    &built.norms,
                    horizon,
                    &opts,
                )?,
                KindArg::Mu => dichotomy::fit_mu(
                    &built.family,
                    &projection,
                    &built.norms,
                    &rate_arc,
                    horizon,
                    &opts,
                )?,
                KindArg::Exponential => dichotomy::check_exponential(
                    &built.family,
                    &projection,
                    &built.norms,
                    horizon,
                    &opts,
                )?,
            };
            let verdict = cert.verdict;
            Report::new("dichotomy", &built.name, built.seed, &cert).write(&out)?;
            Ok(if verdict { 0 } else { 2 })
        }

        Command::Spectrum {
            scenario,
            method,
            range,
            step,
            horizon,
            out,
        } => {
            let built = load_scenario(&scenario)?;
            let horizon = horizon.unwrap_or(built.horizon);
            let mut opts = SpectrumOptions {
                grid_step: step,
                nu_min: built.tolerances.nu_min,
                ..SpectrumOptions::default()
            };
            if let Some(r) = &range {
                opts.lambda_range = Some(parse_range(r)?);
            }
            #[derive(Serialize)]
            struct SpectrumBody {
                mu: Option<SpectrumEstimate>,
                ed_rescaled: Option<SpectrumEstimate>,
                hausdorff: Option<f64>,
            }
            let mu_est = match method {
                MethodArg::Mu | MethodArg::Both => Some(spectrum::mu_spectrum(
                    &built.family,
                    &built.rate,
                    horizon,
                    &opts,
                )?),
                _ => None,
            };
            let ed_est = match method {
                MethodArg::EdRescaled | MethodArg::Both => Some(spectrum::ed_spectrum_rescaled(
                    &built.family,
                    &built.rate,
                    horizon,
                    &opts,
                )?),
                _ => None,
            };
            let hausdorff = match (&mu_est, &ed_est) {
                (Some(a), Some(b)) => {
                    Some(spectrum::hausdorff_distance(&a.intervals, &b.intervals))
                }
                _ => None,
            };
            // plot data: per-lambda margins
            let mut rows = Vec::new();
            for (label, est) in [("mu", &mu_est), ("ed-rescaled", &ed_est)] {
                if let Some(est) = est {
                    for v in &est.grid {
                        rows.push(vec![
                            label.to_string(),
                            format!("{}", v.lambda),
                            format!("{}", v.resolvent),
                            format!("{}", v.margin),
                        ]);
                    }
                }
            }
            write_csv(
                &out.with_extension("margins.csv"),
                &["method", "lambda", "resolvent", "margin"],
                &rows,
            )?;
            let body = SpectrumBody {
                mu: mu_est,
                ed_rescaled: ed_est,
                hausdorff,
            };
            Report::new("spectrum", &built.name, built.seed, &body).write(&out)?;
            Ok(0)
        }

        Command::Resonance { spec, order, out } => {
            let est = load_estimate(&spec)?;
            let violations = spectrum::check_resonance(&est, order)?;
            let clean = violations.is_empty();
            #[derive(Serialize)]
            struct ResonanceBody {
                order: u32,
                non_resonant: bool,
                violations: Vec<spectrum::ResonanceViolation>,
            }
            let body = ResonanceBody {
                order,
                non_resonant: clean,
                violations,
            };
            let report = Report::new("resonance", &spec.display().to_string(), 0, &body);
            match out {
                Some(path) => report.write(&path)?,
                None => print!("{}", report.to_json()?),
            }
            Ok(if clean { 0 } else { 2 })
        }

        Command::Bandgap { spec, out } => {
            let est = load_estimate(&spec)?;
            let band_gap = spectrum::check_band_gap(&est)?;
            let passed = band_gap.all_pass();
            let report = Report::new("bandgap", &spec.display().to_string(), 0, &band_gap);
            match out {
                Some(path) => report.write(&path)?,
                None => print!("{}", report.to_json()?),
            }
            Ok(if passed { 0 } else { 2 })
        }

        Command::Linearize {
            scenario,
            tail,
            tol,
            samples,
            out,
        } => {
            let built = load_scenario(&scenario)?;
            let projection = built.projection.clone().ok_or_else(|| Error::Scenario {
                path: "projection".into(),
                reason: "linearization needs a projection spec".into(),
            })?;
            let perturbation = built.perturbation.clone().ok_or_else(|| Error::Scenario {
                path: "perturbation".into(),
                reason: "linearization needs a perturbation spec".into(),
            })?;
            let pipeline = ConjugacyPipeline::new(
                built.family.clone(),
                built.rate.clone(),
                perturbation,
                projection,
                built.horizon,
                tail,
                tol,
            )?;
            let spec = SampleSpec {
                count: samples,
                radius: 1.0,
                holder_delta: 0.05,
                seed: built.seed,
            };
            let report_body = crate::linearize::verify_conjugacy(&pipeline, &spec)?;
            let rows: Vec<Vec<String>> = report_body
                .histogram
                .iter()
                .map(|(edge, count)| vec![format!("{edge}"), format!("{count}")])
                .collect();
            write_csv(&out.with_extension("hist.csv"), &["bin_hi", "count"], &rows)?;
            let passed = report_body.max_residual <= 1e-6;
            Report::new("linearize", &built.name, built.seed, &report_body).write(&out)?;
            Ok(if passed { 0 } else { 2 })
        }

        Command::Verify { suite, out } => {
            let outcome = suites::run_suite(&suite)?;
            for check in &outcome.checks {
                println!(
                    "[{}] {} - {}: {}",
                    outcome.suite,
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.detail
                );
            }
            let passed = outcome.passed;
            let report = Report::new("verify", &outcome.suite, 42, &outcome);
            match out {
                Some(path) => report.write(&path)?,
                None => print!("{}", report.to_json()?),
            }
            Ok(if passed { 0 } else { 2 })
        }
    }
}

/// Reads a spectrum estimate from either a bare estimate JSON or a full
/// spectrum report (preferring the mu estimate when both are present).
fn load_estimate(path: &Path) -> Result<SpectrumEstimate> {
    let text = std::fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let candidates = [
        value.pointer("/body/mu"),
        value.pointer("/body/ed_rescaled"),
        value.pointer("/body"),
        Some(&value),
    ];
    for candidate in candidates.into_iter().flatten() {
        if candidate.is_null() {
            continue;
        }
        if let Ok(est) = serde_json::from_value::<SpectrumEstimate>(candidate.clone()) {
            return Ok(est);
        }
    }
    Err(Error::Domain(format!(
        "no spectrum estimate found in {}",
        path.display()
    )))
}

pub mod suites {
    //! Bundled verification suites. Each suite re-runs one of the library's
    //! headline guarantees end to end on bundled scenarios and reports a
    //! pass/fail line per check.

    use super::*;
    use crate::dichotomy::Constants;
    use crate::linearize::{verify_conjugacy, NonlinearPerturbation};
    use crate::system::{log_indices, random_unit, ProjectionFamily};
    use nalgebra::DMatrix;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[derive(Debug, Clone, Serialize)]
    pub struct CheckOutcome {
        pub name: String,
        pub passed: bool,
        pub detail: String,
    }

    #[derive(Debug, Clone, Serialize)]
    pub struct SuiteReport {
        pub suite: String,
        /// what this suite demonstrates
        pub reproduces: String,
        pub passed: bool,
        pub checks: Vec<CheckOutcome>,
    }

    fn check(name: &str, passed: bool, detail: String) -> CheckOutcome {
        CheckOutcome {
            name: name.into(),
            passed,
            detail,
        }
    }

    fn finish(suite: &str, reproduces: &str, checks: Vec<CheckOutcome>) -> SuiteReport {
        SuiteReport {
            suite: suite.into(),
            reproduces: reproduces.into(),
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }

    pub fn suite_names() -> &'static [&'static str] {
        &[
            "paper-example",
            "teo-main-forward",
            "teo-main-reverse",
            "newthm-pullback",
            "dicspec-equality",
            "ntl-conjugacy",
        ]
    }

    pub fn run_suite(name: &str) -> Result<SuiteReport> {
        match name {
            "paper-example" => paper_example(),
            "teo-main-forward" => teo_main_forward(),
            "teo-main-reverse" => teo_main_reverse(),
            "newthm-pullback" => newthm_pullback(),
            "dicspec-equality" => dicspec_equality(),
            "ntl-conjugacy" => ntl_conjugacy(),
            other => Err(Error::Domain(format!(
                "unknown suite `{other}` (expected one of {:?})",
                suite_names()
            ))),
        }
    }

    /// The spiking scalar system: unbounded steps, yet a vanishing dyadic
    /// rescale. Its rescaled family admits an exponential dichotomy with
    /// N = 1 while every dichotomy fit on the base fails.
    fn paper_example() -> Result<SuiteReport> {
        let built = builtin("paper-example")?.build("paper-example")?;
        let eta = built.eta.clone().expect("bundled scenario has eta");
        let map = rescale::RescaleIndexMap::new(built.rate.clone(), eta.clone())?;
        let usable = map.max_usable(built.horizon)?;
        let rs = rescale::build(
            built.family.clone(),
            built.rate.clone(),
            eta.clone(),
            built.norms.clone(),
            built.projection.clone(),
            built.horizon,
            usable,
        )?;
        let mut checks = Vec::new();

        let mut all_zero = true;
        for n in 1..=usable {
            if rs.q(n)?.amax() != 0.0 {
                all_zero = false;
            }
        }
        checks.push(check(
            "rescaled sequence vanishes",
            all_zero,
            format!("Q_n == 0 for n = 1..={usable} (base horizon {})", built.horizon),
        ));

        let opts = FitOptions {
            seed: built.seed,
            ..FitOptions::default()
        };
        let qfam = Arc::new(rs.q_family());
        let p_full = ProjectionFamily::coordinate(1, 1);
        let ed = dichotomy::fit_mu(&qfam, &p_full, &built.norms, &eta, usable, &opts)?;
        let ed_ok = ed.verdict && ed.nilpotent_forward;
        let n_is_one = matches!(ed.constants, Constants::Mu { n, .. } if (n - 1.0).abs() <= 1e-12);
        checks.push(check(
            "rescaled dichotomy certificate",
            ed_ok && n_is_one,
            format!(
                "verdict {} with N = 1 and nilpotent forward maps (any exponent)",
                ed.verdict
            ),
        ));

        let base_full = dichotomy::fit_mu(
            &built.family,
            &p_full,
            &built.norms,
            &built.rate,
            built.horizon,
            &opts,
        )?;
        let p_zero = ProjectionFamily::coordinate(1, 0);
        let base_zero = dichotomy::fit_mu(
            &built.family,
            &p_zero,
            &built.norms,
            &built.rate,
            built.horizon,
            &opts,
        )?;
        checks.push(check(
            "base certification fails for every rank",
            !base_full.verdict && !base_zero.verdict,
            format!(
                "rank 1: {:?}; rank 0: {:?}",
                base_full.cause, base_zero.cause
            ),
        ));

        Ok(finish(
            "paper-example",
            "a system with unbounded steps whose dyadic time rescale is identically zero: \
             the rescaled family is hyperbolic, the base admits no dichotomy at any rank",
            checks,
        ))
    }

    fn fit_constants(cert: &crate::dichotomy::DichotomyCertificate) -> (f64, Option<f64>, Option<f64>, Option<f64>) {
        match &cert.constants {
            Constants::Mu {
                n,
                nu,
                nu_stable,
                nu_unstable,
            } => (*n, *nu, *nu_stable, *nu_unstable),
            Constants::Ordinary { k } => (*k, None, None, None),
            Constants::Strong { n, nu, .. } => (*n, Some(*nu), None, None),
        }
    }

    /// Forward direction of the rescaling equivalence: a mu-dichotomy fit on
    /// the base transfers to an eta-dichotomy fit on the rescaled system with
    /// the same exponent and constant at most N theta^{4 nu}.
    fn teo_main_forward() -> Result<SuiteReport> {
        let built = builtin("diag-poly")?.build("diag-poly")?;
        let eta = built.eta.clone().expect("bundled scenario has eta");
        let projection = built.projection.clone().expect("bundled scenario has projection");
        let opts = FitOptions {
            seed: built.seed,
            ..FitOptions::default()
        };
        let mut checks = Vec::new();

        let base = dichotomy::fit_mu(
            &built.family,
            &projection,
            &built.norms,
            &built.rate,
            built.horizon,
            &opts,
        )?;
        let (n_base, _, nu_stable, _) = fit_constants(&base);
        let nu_s = nu_stable.unwrap_or(f64::NAN);
        checks.push(check(
            "base fit",
            base.verdict && (nu_s - 1.0).abs() <= 0.05,
            format!("stable exponent {nu_s:.6} (target 1 within 5%), N = {n_base:.4}"),
        ));

        let map = rescale::RescaleIndexMap::new(built.rate.clone(), eta.clone())?;
        let usable = map.max_usable(built.horizon)?;
        let rs = rescale::build(
            built.family.clone(),
            built.rate.clone(),
            eta.clone(),
            built.norms.clone(),
            Some(projection),
            built.horizon,
            usable,
        )?;
        let qfam = Arc::new(rs.q_family());
        let theta = built.rate.theta().max(eta.theta());
        // the equivalence allows the rescaled constant to grow by theta^{4 nu},
        // so the rescaled fit tolerates exactly that much log scatter
        let rescale_opts = FitOptions {
            tolerance: 4.0 * nu_s * theta.ln() * 1.1,
            ..opts.clone()
        };
        let rescaled = dichotomy::fit_mu(
            &qfam,
            rs.projections().expect("projections carried"),
            rs.norms(),
            &eta,
            usable,
            &rescale_opts,
        )?;
        let (n_resc, _, nu_resc_stable, _) = fit_constants(&rescaled);
        let nu_rs = nu_resc_stable.unwrap_or(f64::NAN);
        let bound = n_base * theta.powf(4.0 * nu_s) * 1.1;
        checks.push(check(
            "rescaled fit",
            rescaled.verdict && (nu_rs - 1.0).abs() <= 0.05,
            format!("rescaled stable exponent {nu_rs:.6} (target 1 within 5%)"),
        ));
        checks.push(check(
            "constant propagation",
            n_resc <= bound,
            format!("rescaled N = {n_resc:.4} <= N theta^(4 nu) * 1.1 = {bound:.4}"),
        ));

        Ok(finish(
            "teo-main-forward",
            "rescaling a mu-dichotomy yields an exponential-rate dichotomy with the same \
             exponent and an explicitly bounded constant",
            checks,
        ))
    }

    /// Reverse direction: ordinary dichotomy on the base plus a dichotomy of
    /// the rescaled system reconstruct the base mu-dichotomy, with constant
    /// at most K^2 N theta^{2 nu}.
    fn teo_main_reverse() -> Result<SuiteReport> {
        let built = builtin("diag-poly")?.build("diag-poly")?;
        let eta = built.eta.clone().expect("bundled scenario has eta");
        let projection = built.projection.clone().expect("bundled scenario has projection");
        let opts = FitOptions {
            seed: built.seed,
            ..FitOptions::default()
        };
        let mut checks = Vec::new();

        let ordinary = dichotomy::check_ordinary(
            &built.family,
            &projection,
            &built.norms,
            built.horizon,
            &opts,
        )?;
        let k_hat = match ordinary.constants {
            Constants::Ordinary { k } => k,
            _ => f64::NAN,
        };
        checks.push(check(
            "ordinary dichotomy",
            ordinary.verdict,
            format!("K = {k_hat:.4}"),
        ));

        let map = rescale::RescaleIndexMap::new(built.rate.clone(), eta.clone())?;
        let usable = map.max_usable(built.horizon)?;
        let rs = rescale::build(
            built.family.clone(),
            built.rate.clone(),
            eta.clone(),
            built.norms.clone(),
            Some(projection.clone()),
            built.horizon,
            usable,
        )?;
        let qfam = Arc::new(rs.q_family());
        let theta = built.rate.theta().max(eta.theta());
        let rescale_opts = FitOptions {
            tolerance: 4.0 * theta.ln() * 1.1,
            ..opts.clone()
        };
        let rescaled = dichotomy::fit_mu(
            &qfam,
            rs.projections().expect("projections carried"),
            rs.norms(),
            &eta,
            usable,
            &rescale_opts,
        )?;
        let (n_resc, nu_resc, _, _) = fit_constants(&rescaled);
        let nu_r = nu_resc.unwrap_or(f64::NAN);
        checks.push(check(
            "rescaled dichotomy",
            rescaled.verdict,
            format!("N = {n_resc:.4}, exponent {nu_r:.6}"),
        ));

        let reconstructed = dichotomy::fit_mu(
            &built.family,
            &projection,
            &built.norms,
            &built.rate,
            built.horizon,
            &opts,
        )?;
        let (n_base, _, _, _) = fit_constants(&reconstructed);
        let bound = k_hat * k_hat * n_resc * theta.powf(2.0 * nu_r) * 1.1;
        checks.push(check(
            "reconstructed constant",
            reconstructed.verdict && n_base <= bound,
            format!("base N = {n_base:.4} <= K^2 N theta^(2 nu) * 1.1 = {bound:.4}"),
        ));

        Ok(finish(
            "teo-main-reverse",
            "an ordinary dichotomy plus a dichotomy of the rescaled system reconstruct the \
             base dichotomy with an explicitly bounded constant",
            checks,
        ))
    }

    /// Transporting the time-1 projection of the rescaled dichotomy along an
    /// invertible base flow yields an exactly invariant family with a
    /// bounded-norm projection.
    fn newthm_pullback() -> Result<SuiteReport> {
        let built = builtin("diag-poly")?.build("diag-poly")?;
        let eta = built.eta.clone().expect("bundled scenario has eta");
        let mut checks = Vec::new();

        let map = rescale::RescaleIndexMap::new(built.rate.clone(), eta.clone())?;
        let usable = map.max_usable(built.horizon)?;
        let rs = rescale::build(
            built.family.clone(),
            built.rate.clone(),
            eta.clone(),
            built.norms.clone(),
            None,
            built.horizon,
            usable,
        )?;
        // a non-orthogonal rank-1 projection at time 1
        let p1 = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]);
        let transported =
            dichotomy::pull_back_projections(&rs, &p1, built.horizon, 1e12)?;

        let invariance = built.family.check_invariance(&transported, built.horizon)?;
        checks.push(check(
            "invariance of transported projections",
            invariance <= 1e-8,
            format!("max residual {invariance:.3e} <= 1e-8"),
        ));

        // rescaled-time projections induced by the transport
        let rs_proj = {
            let t = transported.clone();
            let map = rs.index_map().clone();
            ProjectionFamily::from_fn(2, move |k| {
                t.projection(map.tau(k).expect("tau")).expect("projection")
            })
        };
        let theta_allowance = built.rate.theta().max(eta.theta()).ln() * 4.0 * 1.1;
        let opts = FitOptions {
            seed: built.seed,
            tolerance: theta_allowance,
            ..FitOptions::default()
        };
        let qfam = Arc::new(rs.q_family());
        let rescaled = dichotomy::fit_mu(&qfam, &rs_proj, rs.norms(), &eta, usable, &opts)?;
        let (l_const, _, _, _) = fit_constants(&rescaled);
        checks.push(check(
            "rescaled dichotomy with transported projections",
            rescaled.verdict,
            format!("L = {l_const:.4}"),
        ));

        let audit = dichotomy::check_bounded_growth(
            &built.family,
            &built.norms,
            &built.rate,
            built.horizon.min(4096),
        )?;
        let theta = built.rate.theta().max(eta.theta());
        let bound = audit.k_hat * audit.k_hat * l_const * theta.powf(4.0 * audit.a_hat) * 1.1;
        let mut worst: f64 = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(built.seed);
        let ks = log_indices(1, built.horizon, 40);
        let mut tested = 0usize;
        'outer: for &k in &ks {
            let pk = transported.projection(k)?;
            for _ in 0..25 {
                let x = random_unit(&mut rng, 2);
                let ratio = built.norms.vector_norm(k, &(&pk * &x))
                    / built.norms.vector_norm(k, &x);
                worst = worst.max(ratio);
                tested += 1;
                if tested >= 1000 {
                    break 'outer;
                }
            }
        }
        checks.push(check(
            "projection norm bound",
            worst <= bound,
            format!("sup ||P_k x||/||x|| = {worst:.4} <= K^2 L theta^(4a) * 1.1 = {bound:.4} on {tested} samples"),
        ));

        Ok(finish(
            "newthm-pullback",
            "projections pulled back along the flow from the rescaled dichotomy are exactly \
             invariant and uniformly bounded",
            checks,
        ))
    }

    /// The two spectrum estimators agree: the mu-spectrum of the base equals
    /// the exponential spectrum of the rescaled system on every bundled
    /// system, to within twice the grid step.
    fn dicspec_equality() -> Result<SuiteReport> {
        let mut checks = Vec::new();
        for name in ["diag-poly", "diag-exp", "switched-exp", "identity-poly"] {
            let built = builtin(name)?.build(name)?;
            let opts = SpectrumOptions::default();
            let start = std::time::Instant::now();
            let mu_est = spectrum::mu_spectrum(&built.family, &built.rate, built.horizon, &opts)?;
            let ed_est =
                spectrum::ed_spectrum_rescaled(&built.family, &built.rate, built.horizon, &opts)?;
            let elapsed = start.elapsed();
            let d = spectrum::hausdorff_distance(&mu_est.intervals, &ed_est.intervals);
            let count_ok =
                mu_est.intervals.len() <= built.dim && ed_est.intervals.len() <= built.dim;
            checks.push(check(
                &format!("spectrum equality on {name}"),
                d <= 2.0 * opts.grid_step && count_ok && elapsed.as_secs() < 120,
                format!(
                    "hausdorff {d:.4} <= {:.2}, intervals {} / {} (dim {}), {:.1}s",
                    2.0 * opts.grid_step,
                    mu_est.intervals.len(),
                    ed_est.intervals.len(),
                    built.dim,
                    elapsed.as_secs_f64()
                ),
            ));
        }
        Ok(finish(
            "dicspec-equality",
            "the dichotomy spectrum measured against the growth rate coincides with the \
             exponential spectrum of the rescaled system",
            checks,
        ))
    }

    /// The conjugacy pipeline on the bundled perturbed system: residual,
    /// displacement stability under tail doubling, and the zero-perturbation
    /// control.
    fn ntl_conjugacy() -> Result<SuiteReport> {
        let built = builtin("conjugacy-sincos")?.build("conjugacy-sincos")?;
        let projection = built.projection.clone().expect("bundled scenario has projection");
        let perturbation = built.perturbation.clone().expect("bundled scenario has perturbation");
        let mut checks = Vec::new();

        let spec = SampleSpec {
            count: 1000,
            radius: 1.0,
            holder_delta: 0.05,
            seed: built.seed,
        };
        let pipeline = ConjugacyPipeline::new(
            built.family.clone(),
            built.rate.clone(),
            perturbation.clone(),
            projection.clone(),
            built.horizon,
            16,
            1e-9,
        )?;
        let report = verify_conjugacy(&pipeline, &spec)?;
        checks.push(check(
            "conjugacy residual",
            report.max_residual <= 1e-6,
            format!(
                "max residual {:.3e} <= 1e-6 on {} samples",
                report.max_residual, report.samples
            ),
        ));
        checks.push(check(
            "round trip",
            report.max_round_trip <= 1e-6,
            format!("max inverse round-trip error {:.3e}", report.max_round_trip),
        ));

        let doubled = ConjugacyPipeline::new(
            built.family.clone(),
            built.rate.clone(),
            perturbation,
            projection.clone(),
            built.horizon,
            32,
            1e-9,
        )?;
        let report2 = verify_conjugacy(&doubled, &spec)?;
        let drift = (report2.d_hat - report.d_hat).abs() / report.d_hat.max(1e-300);
        checks.push(check(
            "displacement stable under tail doubling",
            report.d_hat.is_finite() && drift <= 0.05,
            format!(
                "D = {:.6e} vs {:.6e} (relative drift {:.2e} <= 5%)",
                report.d_hat, report2.d_hat, drift
            ),
        ));

        let zero = NonlinearPerturbation::zero(built.dim, built.rate.clone());
        let control = ConjugacyPipeline::new(
            built.family.clone(),
            built.rate.clone(),
            zero,
            projection,
            built.horizon,
            16,
            1e-9,
        )?;
        let creport = verify_conjugacy(&control, &spec)?;
        checks.push(check(
            "zero-perturbation control",
            creport.max_residual == 0.0 && creport.rho_hat == 1.0,
            format!(
                "residual {:.1e}, exponent {}",
                creport.max_residual, creport.rho_hat
            ),
        ));
        checks.push(check(
            "local regularity",
            report.rho_hat > 0.0 && report.rho_hat <= 1.0 + 1e-3 && report.r_squared >= 0.9,
            format!(
                "fitted exponent {:.6} with R^2 = {:.4}",
                report.rho_hat, report.r_squared
            ),
        ));

        Ok(finish(
            "ntl-conjugacy",
            "the Green-sum conjugacy intertwines the perturbed system with its linear part \
             at residual <= 1e-6, with displacement stable under tail doubling",
            checks,
        ))
    }
}
