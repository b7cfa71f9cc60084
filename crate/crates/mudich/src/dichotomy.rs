//! Numerical certification of ordinary, mu- and exponential dichotomies with
//! respect to norm families, bounded-growth audits, projection transport and
//! adapted (Lyapunov) norms.
//!
//! Certificates are finite-sample objects: they record the pair grid, seed,
//! horizon and tolerance that produced them, and the unboundedness of the
//! growth rate is carried as an untested assumption.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::growth::GrowthRate;
use crate::rescale::RescaledSystem;
use crate::system::{
    condition_number, kernel_basis, log_indices, log_offsets, random_unit, range_basis,
    stable_norm, EvolutionFamily, NormFamily, ProjectionFamily,
};

/// Sentinel residual for structurally failed certificates; kept finite so
/// certificates survive JSON round trips.
pub const INFEASIBLE: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DichotomyKind {
    Ordinary,
    Mu,
    Exponential,
    StrongNonuniformMu,
}

/// Fitted constants, per certificate kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "kebab-case")]
pub enum Constants {
    Ordinary {
        k: f64,
    },
    Mu {
        n: f64,
        /// min of the two one-sided exponents; None for nilpotent forward
        /// dynamics, where any exponent works.
        nu: Option<f64>,
        nu_stable: Option<f64>,
        nu_unstable: Option<f64>,
    },
    Strong {
        n: f64,
        nu: f64,
        nu_tilde: f64,
        eps: f64,
    },
}

/// Description of the finite test set behind a certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairGridSpec {
    pub k_values: usize,
    pub offsets: usize,
    pub pairs: usize,
    pub vectors_per_endpoint: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DichotomyCertificate {
    pub kind: DichotomyKind,
    pub rate: Option<String>,
    pub constants: Constants,
    pub horizon: usize,
    /// Effective residual: max relative violation of the defining
    /// inequalities over the tested pairs (infinite when a structural
    /// precondition fails). The verdict is exactly `residual <= tolerance`.
    pub residual: f64,
    pub tolerance: f64,
    pub verdict: bool,
    pub cause: Option<String>,
    pub pair_grid: PairGridSpec,
    pub seed: u64,
    /// All forward windows vanished; the contraction holds with any exponent.
    pub nilpotent_forward: bool,
    /// lim mu_n = +inf cannot be verified on a finite horizon.
    pub unbounded_assumed: bool,
}

/// Options shared by the certification scans.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Residual tolerance for the pass verdict (relative, log scale).
    pub tolerance: f64,
    /// Smallest acceptable fitted exponent.
    pub nu_min: f64,
    /// Cap on fitted constants (K or N).
    pub constant_cap: f64,
    /// Absolute tolerance for the projection-invariance precondition.
    pub invariance_tolerance: f64,
    pub seed: u64,
    pub max_pairs: usize,
    pub random_vectors: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            tolerance: 0.10,
            nu_min: 1e-3,
            constant_cap: 1e6,
            invariance_tolerance: 1e-8,
            seed: 0,
            max_pairs: 20_000,
            random_vectors: 8,
        }
    }
}

/// The (k, m) test pairs: k on a log ladder (plus a dense early segment so
/// isolated spikes are not missed), offsets m - k on a log ladder.
pub(crate) fn pair_grid(horizon: usize, max_pairs: usize) -> (Vec<usize>, Vec<usize>) {
    let mut ks = log_indices(2, horizon.max(2), 48);
    for k in 2..=horizon.min(65) {
        ks.push(k);
    }
    ks.sort_unstable();
    ks.dedup();
    let offsets = log_offsets(horizon.saturating_sub(1), 14);
    let mut pairs = ks.len() * offsets.len();
    while pairs > max_pairs && ks.len() > 8 {
        // thin the k ladder, keeping endpoints
        let thinned: Vec<usize> = ks.iter().copied().step_by(2).collect();
        ks = thinned;
        pairs = ks.len() * offsets.len();
    }
    (ks, offsets)
}

struct SideFit {
    nu_hat: Option<f64>,
    n_hat: f64,
    residual: f64,
    nilpotent: bool,
    vacuous: bool,
}

/// Least-squares fit of y = alpha - nu t over the finite points, with the
/// envelope constant N = exp(max(y + nu t)) and the residual equal to the
/// largest positive deviation above the fitted line.
fn fit_side(points: &[(f64, f64)], vacuous: bool) -> SideFit {
    if vacuous {
        return SideFit {
            nu_hat: None,
            n_hat: 1.0,
            residual: 0.0,
            nilpotent: false,
            vacuous: true,
        };
    }
    let finite: Vec<(f64, f64)> = points.iter().copied().filter(|p| p.1.is_finite()).collect();
    let with_steps = finite.iter().any(|p| p.0 > 0.0);
    if !with_steps {
        // every multi-step window vanished: nilpotent forward dynamics
        let n_hat = finite
            .iter()
            .map(|p| p.1.exp())
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        return SideFit {
            nu_hat: None,
            n_hat,
            residual: 0.0,
            nilpotent: true,
            vacuous: false,
        };
    }
    let n = finite.len() as f64;
    let mean_t = finite.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = finite.iter().map(|p| p.1).sum::<f64>() / n;
    let var_t = finite.iter().map(|p| (p.0 - mean_t).powi(2)).sum::<f64>();
    let cov = finite
        .iter()
        .map(|p| (p.0 - mean_t) * (p.1 - mean_y))
        .sum::<f64>();
    let slope = cov / var_t;
    let alpha = mean_y - slope * mean_t;
    let nu = -slope;
    let residual = finite
        .iter()
        .map(|p| p.1 - (alpha + slope * p.0))
        .fold(0.0f64, f64::max);
    let n_hat = finite
        .iter()
        .map(|p| p.1 + nu * p.0)
        .fold(f64::NEG_INFINITY, f64::max)
        .exp();
    SideFit {
        nu_hat: Some(nu),
        n_hat,
        residual,
        nilpotent: false,
        vacuous: false,
    }
}

/// Sample vectors at time k: an orthonormal basis of the relevant subspace
/// plus seeded random unit vectors.
fn sample_vectors(
    basis: &DMatrix<f64>,
    dim: usize,
    extra: usize,
    seed: u64,
    k: usize,
) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = (0..basis.ncols())
        .map(|j| basis.column(j).into_owned())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    for _ in 0..extra {
        out.push(random_unit(&mut rng, dim));
    }
    out
}

struct ScanData {
    stable: Vec<(f64, f64)>,
    unstable: Vec<(f64, f64)>,
    stable_vacuous: bool,
    unstable_vacuous: bool,
    grid: PairGridSpec,
}

/// Collects the forward/backward test ratios behind both check_ordinary and
/// fit_mu. `weight(m, k)` maps a window to the fit abscissa t.
fn scan_ratios<W: Fn(usize, usize) -> Result<f64>>(
    fam: &EvolutionFamily,
    p: &ProjectionFamily,
    norms: &NormFamily,
    horizon: usize,
    opts: &FitOptions,
    weight: W,
) -> Result<ScanData> {
    let dim = fam.dim();
    let rank = p.validate(horizon)?;
    let (ks, offsets) = pair_grid(horizon, opts.max_pairs);
    let mut stable = Vec::new();
    let mut unstable = Vec::new();
    let use_restriction = !fam.source().invertible();

    for &k in &ks {
        let pk = p.projection(k)?;
        let id = DMatrix::identity(dim, dim);
        let qk = &id - &pk;

        // forward, stable side: each tested pair contributes its worst-case
        // ratio max_x ||Phi(m,k) P_k x||_m / ||x||_k (the defining inequality
        // bounds exactly this envelope)
        if rank > 0 {
            let vectors = sample_vectors(&range_basis(&pk), dim, opts.random_vectors, opts.seed, k);
            for &off in &offsets {
                let m = k + off;
                if m > horizon {
                    continue;
                }
                let phi = fam.transition(m, k)?;
                let t = weight(m, k)?;
                let mut worst = f64::NEG_INFINITY;
                for x in &vectors {
                    let denom = norms.vector_norm(k, x);
                    if denom <= 0.0 {
                        continue;
                    }
                    let num = norms.vector_norm(m, &(&*phi * (&pk * x)));
                    if num > 0.0 {
                        worst = worst.max((num / denom).ln());
                    }
                }
                stable.push((t, worst));
            }
        }

        // backward, unstable side: worst-case ||Phi(m,k)(Id-P_k)x||_m / ||x||_k
        // over the kernel-restricted inverse, m <= k
        if rank < dim {
            let vectors = sample_vectors(&kernel_basis(&pk), dim, opts.random_vectors, opts.seed, !k);
            for &off in &offsets {
                if off >= k {
                    continue;
                }
                let m = k - off;
                let back = if use_restriction {
                    fam.backward_transition(m, k, Some(p))?
                } else {
                    fam.backward_transition(m, k, None)? * &qk
                };
                let t = weight(k, m)?;
                let mut worst = f64::NEG_INFINITY;
                for x in &vectors {
                    let denom = norms.vector_norm(k, x);
                    if denom <= 0.0 {
                        continue;
                    }
                    let num = norms.vector_norm(m, &(&back * x));
                    if num > 0.0 {
                        worst = worst.max((num / denom).ln());
                    }
                }
                unstable.push((t, worst));
            }
        }
    }

    Ok(ScanData {
        stable,
        unstable,
        stable_vacuous: rank == 0,
        unstable_vacuous: rank == dim,
        grid: PairGridSpec {
            k_values: ks.len(),
            offsets: offsets.len(),
            pairs: ks.len() * offsets.len(),
            vectors_per_endpoint: opts.random_vectors + rank.max(dim - rank),
        },
    })
}

fn failed_certificate(
    kind: DichotomyKind,
    rate: Option<String>,
    horizon: usize,
    opts: &FitOptions,
    cause: String,
) -> DichotomyCertificate {
    DichotomyCertificate {
        kind,
        rate,
        constants: Constants::Ordinary { k: INFEASIBLE },
        horizon,
        residual: INFEASIBLE,
        tolerance: opts.tolerance,
        verdict: false,
        cause: Some(cause),
        pair_grid: PairGridSpec {
            k_values: 0,
            offsets: 0,
            pairs: 0,
            vectors_per_endpoint: 0,
        },
        seed: opts.seed,
        nilpotent_forward: false,
        unbounded_assumed: true,
    }
}

/// Certifies an ordinary dichotomy: uniformly bounded forward stable and
/// backward unstable windows, constant K.
pub fn check_ordinary(
    fam: &EvolutionFamily,
    p: &ProjectionFamily,
    norms: &NormFamily,
    horizon: usize,
    opts: &FitOptions,
) -> Result<DichotomyCertificate> {
    let inv = fam.check_invariance(p, horizon)?;
    if inv > opts.invariance_tolerance {
        return Ok(failed_certificate(
            DichotomyKind::Ordinary,
            None,
            horizon,
            opts,
            format!("projections not invariant (residual {inv:.3e})"),
        ));
    }
    let data = match scan_ratios(fam, p, norms, horizon, opts, |_, _| Ok(0.0)) {
        Ok(d) => d,
        Err(Error::SingularRestriction { m, k }) => {
            return Ok(failed_certificate(
                DichotomyKind::Ordinary,
                None,
                horizon,
                opts,
                format!("kernel restriction singular over ({m},{k})"),
            ))
        }
        Err(e) => return Err(e),
    };
    let k_hat = data
        .stable
        .iter()
        .chain(data.unstable.iter())
        .map(|p| p.1)
        .filter(|y| y.is_finite())
        .fold(f64::NEG_INFINITY, f64::max)
        .exp()
        .max(1.0)
        .min(INFEASIBLE);
    let within_cap = k_hat <= opts.constant_cap;
    Ok(DichotomyCertificate {
        kind: DichotomyKind::Ordinary,
        rate: None,
        constants: Constants::Ordinary { k: k_hat },
        horizon,
        residual: if within_cap { 0.0 } else { INFEASIBLE },
        tolerance: opts.tolerance,
        verdict: within_cap,
        cause: if within_cap {
            None
        } else {
            Some(format!("K {k_hat:.3e} exceeds cap {:.1e}", opts.constant_cap))
        },
        pair_grid: data.grid,
        seed: opts.seed,
        nilpotent_forward: false,
        unbounded_assumed: true,
    })
}

/// Fits mu-dichotomy constants (N, nu) by least squares on logarithmic
/// window ratios, for both the stable and unstable side.
pub fn fit_mu(
    fam: &EvolutionFamily,
    p: &ProjectionFamily,
    norms: &NormFamily,
    rate: &Arc<GrowthRate>,
    horizon: usize,
    opts: &FitOptions,
) -> Result<DichotomyCertificate> {
    fit_with_kind(fam, p, norms, rate, horizon, opts, DichotomyKind::Mu)
}

/// Exponential-dichotomy fit: the mu fit specialized to mu_n = e^n.
pub fn check_exponential(
    fam: &EvolutionFamily,
    p: &ProjectionFamily,
    norms: &NormFamily,
    horizon: usize,
    opts: &FitOptions,
) -> Result<DichotomyCertificate> {
    let rate = Arc::new(GrowthRate::exponential());
    fit_with_kind(fam, p, norms, &rate, horizon, opts, DichotomyKind::Exponential)
}

fn fit_with_kind(
    fam: &EvolutionFamily,
    p: &ProjectionFamily,
    norms: &NormFamily,
    rate: &Arc<GrowthRate>,
    horizon: usize,
    opts: &FitOptions,
    kind: DichotomyKind,
) -> Result<DichotomyCertificate> {
    let rate_name = Some(rate.name().to_string());
    let inv = fam.check_invariance(p, horizon)?;
    if inv > opts.invariance_tolerance {
        return Ok(failed_certificate(
            kind,
            rate_name,
            horizon,
            opts,
            format!("projections not invariant (residual {inv:.3e})"),
        ));
    }
    let data = match scan_ratios(fam, p, norms, horizon, opts, |hi, lo| {
        Ok((rate.value(hi)? / rate.value(lo)?).ln())
    }) {
        Ok(d) => d,
        Err(Error::SingularRestriction { m, k }) => {
            return Ok(failed_certificate(
                kind,
                rate_name,
                horizon,
                opts,
                format!("kernel restriction singular over ({m},{k})"),
            ))
        }
        Err(e) => return Err(e),
    };

    let stable = fit_side(&data.stable, data.stable_vacuous);
    let unstable = fit_side(&data.unstable, data.unstable_vacuous);
    let n_hat = stable.n_hat.max(unstable.n_hat).max(1.0).min(INFEASIBLE);
    let residual = stable.residual.max(unstable.residual);
    let nilpotent = stable.nilpotent;

    let nu = match (stable.nu_hat, unstable.nu_hat) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (Some(a), None) => Some(a),
        (None, Some(b)) => Some(b),
        (None, None) => None,
    };
    let nu_ok = match nu {
        Some(v) => v >= opts.nu_min,
        // no slope anywhere: acceptable only for nilpotent/vacuous dynamics
        None => nilpotent || (stable.vacuous && unstable.vacuous),
    };
    let within_cap = n_hat.is_finite() && n_hat <= opts.constant_cap;
    let verdict = nu_ok && within_cap && residual <= opts.tolerance;
    let cause = if verdict {
        None
    } else if !nu_ok {
        Some(format!("fitted exponent {nu:?} below nu_min {}", opts.nu_min))
    } else if !within_cap {
        Some(format!("constant {n_hat:.3e} exceeds cap {:.1e}", opts.constant_cap))
    } else {
        Some(format!("residual {residual:.3e} exceeds tolerance {}", opts.tolerance))
    };

    Ok(DichotomyCertificate {
        kind,
        rate: rate_name,
        constants: Constants::Mu {
            n: n_hat,
            nu,
            nu_stable: stable.nu_hat,
            nu_unstable: unstable.nu_hat,
        },
        horizon,
        residual: if nu_ok && within_cap { residual.min(INFEASIBLE) } else { INFEASIBLE },
        tolerance: opts.tolerance,
        verdict,
        cause,
        pair_grid: data.grid,
        seed: opts.seed,
        nilpotent_forward: nilpotent,
        unbounded_assumed: true,
    })
}

/// Fitted bounded-growth constants for forward and backward windows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GrowthAudit {
    pub k_hat: f64,
    pub a_hat: f64,
    pub a_forward: f64,
    pub a_backward: Option<f64>,
    /// set when the sequence is not invertible and only forward windows
    /// could be audited
    pub forward_only: bool,
    pub horizon: usize,
}

/// Fits (K, a) with ||Phi(m,k)|| <= K (mu_max/mu_min)^a over both window
/// directions; the hypothesis gate for rescaling-based workflows.
pub fn check_bounded_growth(
    fam: &EvolutionFamily,
    norms: &NormFamily,
    rate: &Arc<GrowthRate>,
    horizon: usize,
) -> Result<GrowthAudit> {
    let (ks, offsets) = pair_grid(horizon, 20_000);
    let mut fwd: Vec<(f64, f64)> = Vec::new();
    let mut bwd: Vec<(f64, f64)> = Vec::new();
    let invertible = fam.source().invertible();
    for &k in &ks {
        for &off in &offsets {
            let m = k + off;
            if m <= horizon {
                let t = (rate.value(m)? / rate.value(k)?).ln();
                let phi = fam.transition(m, k)?;
                let y = norms.operator_norm(m, &phi, k).ln();
                if y.is_finite() {
                    fwd.push((t, y));
                }
            }
            if invertible && off < k {
                let m = k - off;
                let t = (rate.value(k)? / rate.value(m)?).ln();
                let back = fam.backward_transition(m, k, None)?;
                let y = norms.operator_norm(m, &back, k).ln();
                if y.is_finite() {
                    bwd.push((t, y));
                }
            }
        }
    }
    // envelope exponent: smallest a covering every window, estimated as the
    // max of y/t over windows of at least unit log length (shorter windows
    // are absorbed into the constant K)
    let envelope = |pts: &[(f64, f64)]| -> f64 {
        let t_floor = 0.5;
        let mut a = 0.0f64;
        let mut seen = false;
        for p in pts {
            if p.0 >= t_floor {
                seen = true;
                a = a.max(p.1 / p.0);
            }
        }
        if !seen {
            for p in pts {
                if p.0 > 0.0 {
                    a = a.max(p.1 / p.0);
                }
            }
        }
        a
    };
    let a_forward = envelope(&fwd);
    let a_backward = if invertible { Some(envelope(&bwd)) } else { None };
    let a_hat = a_forward.max(a_backward.unwrap_or(0.0));
    let k_hat = fwd
        .iter()
        .chain(bwd.iter())
        .map(|p| p.1 - a_hat * p.0)
        .fold(f64::NEG_INFINITY, f64::max)
        .exp()
        .max(1.0)
        .min(INFEASIBLE);
    Ok(GrowthAudit {
        k_hat,
        a_hat,
        a_forward,
        a_backward,
        forward_only: !invertible,
        horizon,
    })
}

/// Transports a time-1 projection along an invertible base flow:
/// P_k = Phi(k,1) P1 Phi(1,k). The result is exactly invariant by
/// construction and agrees with the rescaled projections at tau(k).
pub fn pull_back_projections(
    rs: &RescaledSystem,
    ptilde1: &DMatrix<f64>,
    horizon: usize,
    condition_cap: f64,
) -> Result<ProjectionFamily> {
    let base = rs.base().clone();
    if !base.source().invertible() {
        return Err(Error::MissingRestriction);
    }
    let p1 = ProjectionFamily::constant(ptilde1.clone());
    p1.projection(1)?; // validates idempotency
    for k in log_indices(1, horizon.max(1), 24) {
        let cond = condition_number(base.transition(k, 1)?.as_ref());
        if cond > condition_cap {
            return Err(Error::IllConditionedTransport {
                index: k,
                cond,
                cap: condition_cap,
            });
        }
    }
    let p = ptilde1.clone();
    Ok(ProjectionFamily::from_fn(base.dim(), move |k| {
        let fwd = base.transition(k, 1).expect("transition within validated horizon");
        let back = base
            .backward_transition(1, k, None)
            .expect("validated invertible sequence");
        &*fwd * &p * back
    }))
}

/// Constants of a strong nonuniform mu-dichotomy.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SndConstants {
    pub n: f64,
    pub nu: f64,
    pub nu_tilde: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct AdaptedNormReport {
    pub window: usize,
    pub horizon: usize,
    /// the supremum was still growing at the truncation boundary for some
    /// sampled point
    pub boundary_warning: bool,
    /// ||x|| <= ||x||_n held on every sample
    pub lower_bound_ok: bool,
    /// max over samples of ||x||_n / (4 N mu_n^eps ||x||)
    pub max_upper_ratio: f64,
    /// per-sample (mu_n, ||x||_n / ||x||) pairs for distortion fits
    pub distortion: Vec<(f64, f64)>,
}

pub struct AdaptedNorms {
    pub family: NormFamily,
    pub report: AdaptedNormReport,
}

/// Builds the adapted norms
/// ||x||_n = ||x||_n^s + ||x||_n^u
/// whose suprema run over windows truncated to [n-window, n+window] inside
/// the horizon, and audits the two-sided distortion bound
/// ||x|| <= ||x||_n <= 4 N mu_n^eps ||x||.
pub fn build_adapted_norms(
    fam: &Arc<EvolutionFamily>,
    p: &ProjectionFamily,
    rate: &Arc<GrowthRate>,
    constants: SndConstants,
    horizon: usize,
    window: usize,
) -> Result<AdaptedNorms> {
    if !fam.source().invertible() {
        return Err(Error::MissingRestriction);
    }
    let dim = fam.dim();
    let fam2 = fam.clone();
    let p2 = p.clone();
    let rate2 = rate.clone();
    let SndConstants { nu, nu_tilde, .. } = constants;

    let eval = move |n: usize, x: &DVector<f64>| -> f64 {
        let lo = n.saturating_sub(window).max(1);
        let hi = (n + window).min(horizon);
        let pn = p2.projection(n).expect("projection generation");
        let id = DMatrix::identity(dim, dim);
        let stable_part = &pn * x;
        let unstable_part = (&id - &pn) * x;
        let mu_n = rate2.value(n).expect("rate generation");
        let mut s_fwd: f64 = 0.0;
        let mut s_bwd: f64 = 0.0;
        let mut u_bwd: f64 = 0.0;
        let mut u_fwd: f64 = 0.0;
        for m in lo..=hi {
            let mu_m = rate2.value(m).expect("rate generation");
            if m >= n {
                let phi = fam2.transition(m, n).expect("transition");
                s_fwd = s_fwd.max(stable_norm(&(&*phi * &stable_part)) * (mu_m / mu_n).powf(nu));
                if m > n {
                    u_fwd = u_fwd.max(stable_norm(&(&*phi * &unstable_part)) * (mu_m / mu_n).powf(-nu_tilde));
                }
            }
            if m <= n {
                let back = fam2.backward_transition(m, n, None).expect("invertible");
                u_bwd = u_bwd.max(stable_norm(&(&back * &unstable_part)) * (mu_n / mu_m).powf(nu));
                if m < n {
                    s_bwd = s_bwd.max(stable_norm(&(&back * &stable_part)) * (mu_n / mu_m).powf(-nu_tilde));
                }
            }
        }
        (s_fwd + s_bwd) + (u_bwd + u_fwd)
    };
    let family = NormFamily::custom(dim, true, eval.clone());

    // audit on seeded samples
    let mut rng = ChaCha8Rng::seed_from_u64(0xadaF);
    let mut boundary_warning = false;
    let mut lower_ok = true;
    let mut max_upper = 0.0f64;
    let mut distortion = Vec::new();
    for n in log_indices(1, horizon, 16) {
        for _ in 0..4 {
            let x = random_unit(&mut rng, dim);
            let nx = eval(n, &x);
            let base = x.norm();
            if nx + 1e-12 < base {
                lower_ok = false;
            }
            let mu_n = rate.value(n)?;
            let upper = 4.0 * constants.n * mu_n.powf(constants.eps) * base;
            max_upper = max_upper.max(nx / upper);
            distortion.push((mu_n, nx / base));
            // boundary probe: compare against a slightly shorter window
            if window > 2 {
                let hi = (n + window).min(horizon);
                let hi_prev = (n + window - 1).min(horizon);
                if hi != hi_prev {
                    let pn = p.projection(n)?;
                    let stable_part = &pn * &x;
                    let mu_hi = rate.value(hi)?;
                    let mu_hi_prev = rate.value(hi_prev)?;
                    let phi_hi = fam.transition(hi, n)?;
                    let phi_prev = fam.transition(hi_prev, n)?;
                    let last = stable_norm(&(&*phi_hi * &stable_part)) * (mu_hi / mu_n).powf(nu);
                    let prev = stable_norm(&(&*phi_prev * &stable_part)) * (mu_hi_prev / mu_n).powf(nu);
                    if last > prev && (last - prev) > 1e-9 * nx.max(1.0) {
                        boundary_warning = true;
                    }
                }
            }
        }
    }

    Ok(AdaptedNorms {
        family,
        report: AdaptedNormReport {
            window,
            horizon,
            boundary_warning,
            lower_bound_ok: lower_ok,
            max_upper_ratio: max_upper,
            distortion,
        },
    })
}
