//! Generalized dichotomy spectra: the set of shifts lambda for which the
//! shifted system loses its dichotomy, estimated two ways (directly with the
//! rate mu, and as the exponential spectrum of the rescaled system), plus the
//! resonance and band/gap condition checkers consuming spectrum estimates.
//!
//! The per-lambda test is a labeled heuristic: finite-time window exponents
//! from singular values of Phi(k+W, k), split by sign with a margin, with
//! rank consistency required across windows. Shifting by lambda translates
//! every window exponent by exactly -lambda, which the scan exploits: window
//! data is computed once and each grid lambda is a pure arithmetic verdict.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dichotomy::{check_bounded_growth, GrowthAudit};
use crate::error::{Error, Result};
use crate::growth::GrowthRate;
use crate::rescale::{self, RescaledSystem};
use crate::system::{log_indices, EvolutionFamily, NormFamily, OperatorSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumMethod {
    MuDirect,
    EdRescaled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridVerdict {
    pub lambda: f64,
    pub resolvent: bool,
    /// distance of the nearest window exponent to the shift, in lambda units
    pub margin: f64,
    /// unstable rank when the splitting is coherent
    pub rank: Option<usize>,
    pub cause: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    pub method: SpectrumMethod,
    pub rate: String,
    pub dim: usize,
    pub intervals: Vec<Interval>,
    pub grid: Vec<GridVerdict>,
    /// grid step; endpoint bisection refines to well below this
    pub resolution: f64,
    pub lambda_range: (f64, f64),
    pub horizon: usize,
    pub window: usize,
    pub nu_min: f64,
    /// spectrum touched the scanned range boundary
    pub range_limited: bool,
    pub growth_audit: GrowthAudit,
}

/// Options for the spectrum scans.
#[derive(Debug, Clone)]
pub struct SpectrumOptions {
    /// margin below which a window exponent counts as neither stable nor
    /// unstable
    pub nu_min: f64,
    /// half-range override; default [-(a+1), a+1] from the growth audit
    pub lambda_range: Option<(f64, f64)>,
    pub grid_step: f64,
    pub refine_iterations: usize,
    /// cap on the fitted growth constant before refusing to scan
    pub growth_cap: f64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions {
            nu_min: 1e-3,
            lambda_range: None,
            grid_step: 0.05,
            refine_iterations: 12,
            growth_cap: 1e6,
        }
    }
}

/// The shifted sequence (mu_{n+1}/mu_n)^{-lambda} A_n. Its evolution family
/// telescopes: Phi_shifted(m,k) = (mu_m/mu_k)^{-lambda} Phi_A(m,k) up to
/// rounding, so shifts compose additively.
pub fn shift_system(
    seq: &OperatorSequence,
    rate: &Arc<GrowthRate>,
    lambda: f64,
) -> OperatorSequence {
    seq.shifted(rate.clone(), lambda)
}

/// Per-window normalized exponents: chi_i = ln sigma_i(Phi(m,k)) / L with L
/// the log rate ratio over the window, sorted descending.
struct WindowExponents {
    windows: Vec<Vec<f64>>,
}

impl WindowExponents {
    fn verdict(&self, lambda: f64, nu_min: f64, dim: usize) -> GridVerdict {
        let mut rank: Option<usize> = None;
        let mut margin = f64::INFINITY;
        for chis in &self.windows {
            let mut unstable = 0usize;
            let mut stable = 0usize;
            for &chi in chis {
                let delta = chi - lambda;
                margin = margin.min(delta.abs());
                if delta >= nu_min {
                    unstable += 1;
                } else if delta <= -nu_min {
                    stable += 1;
                }
            }
            if unstable + stable < dim {
                return GridVerdict {
                    lambda,
                    resolvent: false,
                    margin,
                    rank: None,
                    cause: Some("window exponent within nu_min of the shift".into()),
                };
            }
            match rank {
                None => rank = Some(unstable),
                Some(r) if r != unstable => {
                    return GridVerdict {
                        lambda,
                        resolvent: false,
                        margin,
                        rank: None,
                        cause: Some("in spectrum (no coherent splitting)".into()),
                    }
                }
                _ => {}
            }
        }
        GridVerdict {
            lambda,
            resolvent: true,
            margin,
            rank,
            cause: None,
        }
    }
}

/// chi vectors for windows (k, k+w) of `fam`, normalized by ln of the rate
/// ratio over the window. Vanishing singular values map to -infinity, which
/// stays on the stable side of every shift.
fn window_exponents(
    fam: &EvolutionFamily,
    k_values: &[usize],
    w: usize,
    log_ratio: impl Fn(usize, usize) -> Result<f64> + Sync,
) -> Result<WindowExponents> {
    let windows: Vec<Vec<f64>> = k_values
        .par_iter()
        .map(|&k| -> Result<Vec<f64>> {
            let m = k + w;
            let phi = fam.transition(m, k)?;
            let l = log_ratio(m, k)?;
            let svd = phi.as_ref().clone().svd(false, false);
            let mut chis: Vec<f64> = svd
                .singular_values
                .iter()
                .map(|&s| if s > 0.0 { s.ln() / l } else { f64::NEG_INFINITY })
                .collect();
            chis.sort_by(|a, b| b.partial_cmp(a).unwrap());
            Ok(chis)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowExponents { windows })
}

fn scan(
    exponents: &WindowExponents,
    dim: usize,
    range: (f64, f64),
    step: f64,
    nu_min: f64,
    refine: usize,
) -> (Vec<GridVerdict>, Vec<Interval>, bool) {
    let (lo, hi) = range;
    let count = ((hi - lo) / step).round() as usize;
    let grid: Vec<GridVerdict> = (0..=count)
        .map(|i| exponents.verdict(lo + i as f64 * step, nu_min, dim))
        .collect();

    // merge failing runs into intervals, refining endpoints by bisection
    let mut intervals = Vec::new();
    let mut range_limited = false;
    let mut i = 0usize;
    while i < grid.len() {
        if grid[i].resolvent {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < grid.len() && !grid[i + 1].resolvent {
            i += 1;
        }
        let end = i;
        let left = if start == 0 {
            range_limited = true;
            grid[0].lambda
        } else {
            bisect_edge(
                exponents,
                dim,
                nu_min,
                grid[start - 1].lambda,
                grid[start].lambda,
                refine,
                true,
            )
        };
        let right = if end == grid.len() - 1 {
            range_limited = true;
            grid[end].lambda
        } else {
            bisect_edge(
                exponents,
                dim,
                nu_min,
                grid[end + 1].lambda,
                grid[end].lambda,
                refine,
                false,
            )
        };
        intervals.push(Interval { lo: left, hi: right });
        i += 1;
    }
    (grid, intervals, range_limited)
}

/// Bisects between a passing and a failing shift; returns the edge estimate
/// on the failing side.
fn bisect_edge(
    exponents: &WindowExponents,
    dim: usize,
    nu_min: f64,
    passing: f64,
    failing: f64,
    iterations: usize,
    _left: bool,
) -> f64 {
    let mut pass = passing;
    let mut fail = failing;
    for _ in 0..iterations {
        let mid = 0.5 * (pass + fail);
        if exponents.verdict(mid, nu_min, dim).resolvent {
            pass = mid;
        } else {
            fail = mid;
        }
    }
    fail
}

fn audit_or_refuse(
    fam: &EvolutionFamily,
    rate: &Arc<GrowthRate>,
    horizon: usize,
    opts: &SpectrumOptions,
) -> Result<GrowthAudit> {
    let audit = check_bounded_growth(fam, &NormFamily::euclidean(fam.dim()), rate, horizon)?;
    if audit.forward_only {
        return Err(Error::GrowthAudit(
            "sequence is not invertible, backward growth bound unavailable".into(),
        ));
    }
    if audit.k_hat > opts.growth_cap || !audit.a_hat.is_finite() {
        return Err(Error::GrowthAudit(format!(
            "fitted growth constant {:.3e} exceeds cap {:.1e}",
            audit.k_hat, opts.growth_cap
        )));
    }
    Ok(audit)
}

fn finish(
    method: SpectrumMethod,
    rate_name: &str,
    dim: usize,
    exponents: &WindowExponents,
    audit: GrowthAudit,
    horizon: usize,
    window: usize,
    opts: &SpectrumOptions,
) -> Result<SpectrumEstimate> {
    let range = opts
        .lambda_range
        .unwrap_or((-(audit.a_hat + 1.0), audit.a_hat + 1.0));
    if range.1 <= range.0 {
        return Err(Error::Domain("empty lambda range".into()));
    }
    let (grid, intervals, range_limited) = scan(
        exponents,
        dim,
        range,
        opts.grid_step,
        opts.nu_min,
        opts.refine_iterations,
    );
    assert!(
        intervals.len() <= dim,
        "spectrum estimate produced {} intervals for dimension {dim}",
        intervals.len()
    );
    Ok(SpectrumEstimate {
        method,
        rate: rate_name.to_string(),
        dim,
        intervals,
        grid,
        resolution: opts.grid_step,
        lambda_range: range,
        horizon,
        window,
        nu_min: opts.nu_min,
        range_limited,
        growth_audit: audit,
    })
}

/// Estimates the mu-dichotomy spectrum of the base system: the shifts lambda
/// for which (mu_{n+1}/mu_n)^{-lambda} A_n loses its mu-dichotomy.
pub fn mu_spectrum(
    fam: &EvolutionFamily,
    rate: &Arc<GrowthRate>,
    horizon: usize,
    opts: &SpectrumOptions,
) -> Result<SpectrumEstimate> {
    if horizon < 2 {
        return Err(Error::Domain("spectrum scan needs horizon >= 2".into()));
    }
    let audit = audit_or_refuse(fam, rate, horizon, opts)?;
    let w = (horizon / 8).clamp(1, 64);
    let ks = log_indices(1, horizon - w, 48);
    let exponents = window_exponents(fam, &ks, w, |m, k| {
        Ok((rate.value(m)? / rate.value(k)?).ln())
    })?;
    finish(
        SpectrumMethod::MuDirect,
        rate.name(),
        fam.dim(),
        &exponents,
        audit,
        horizon,
        w,
        opts,
    )
}

/// Estimates the exponential-dichotomy spectrum of the rescaled system
/// e^{-lambda} Q_n with eta_n = e^n. Under the bounded-growth hypotheses the
/// two spectra coincide.
pub fn ed_spectrum_rescaled(
    fam: &Arc<EvolutionFamily>,
    rate: &Arc<GrowthRate>,
    horizon: usize,
    opts: &SpectrumOptions,
) -> Result<SpectrumEstimate> {
    let audit = audit_or_refuse(fam, rate, horizon, opts)?;
    let eta = Arc::new(GrowthRate::exponential());
    let rs = rescaled_for_spectrum(fam, rate, &eta, horizon)?;
    let hq = rs.horizon();
    if hq < 3 {
        return Err(Error::Domain(format!(
            "rescaled horizon {hq} too short for a spectrum scan; increase the base horizon"
        )));
    }
    let qfam = rs.q_family();
    let w = (hq / 8).clamp(1, 64);
    let k_hi = hq + 1 - w;
    // skip early rescaled indices where tau snaps too coarsely: a constant
    // offset in ln(mu_{tau(k)}/eta_{k-1}) cancels inside window exponents,
    // so what must be small is its variation over the sampled suffix
    let mu = rs.index_map().mu().clone();
    let errs: Vec<f64> = (2..=k_hi + w)
        .map(|k| -> Result<f64> { Ok((mu.value(rs.tau(k)?)? / eta.value(k - 1)?).ln()) })
        .collect::<Result<Vec<_>>>()?;
    let mut k_lo = k_hi;
    for start in 2..=k_hi {
        let tail = &errs[start - 2..];
        let max = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = tail.iter().cloned().fold(f64::INFINITY, f64::min);
        if max - min <= 0.02 {
            k_lo = start;
            break;
        }
    }
    let ks = log_indices(k_lo, k_hi, 48);
    let exponents = window_exponents(&qfam, &ks, w, |m, k| {
        Ok((eta.value(m)? / eta.value(k)?).ln())
    })?;
    finish(
        SpectrumMethod::EdRescaled,
        rate.name(),
        fam.dim(),
        &exponents,
        audit,
        horizon,
        w,
        opts,
    )
}

fn rescaled_for_spectrum(
    fam: &Arc<EvolutionFamily>,
    mu: &Arc<GrowthRate>,
    eta: &Arc<GrowthRate>,
    base_horizon: usize,
) -> Result<RescaledSystem> {
    let trial = rescale::build(
        fam.clone(),
        mu.clone(),
        eta.clone(),
        NormFamily::euclidean(fam.dim()),
        None,
        base_horizon,
        usize::MAX,
    );
    match trial {
        Err(Error::HorizonExhausted { max_usable }) => rescale::build(
            fam.clone(),
            mu.clone(),
            eta.clone(),
            NormFamily::euclidean(fam.dim()),
            None,
            base_horizon,
            max_usable,
        ),
        other => other,
    }
}

/// A violation of the non-resonance condition: spectral interval i meets the
/// order-|q| combination [<a,q>, <b,q>].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResonanceViolation {
    /// 1-based interval index
    pub interval: usize,
    pub q: Vec<u32>,
}

/// Enumerates q in N_0^r with 2 <= |q| <= t and reports every intersection
/// of [a_i, b_i] with [<a,q>, <b,q>]. Empty output means non-resonance up to
/// order t.
pub fn check_resonance(est: &SpectrumEstimate, t: u32) -> Result<Vec<ResonanceViolation>> {
    if est.intervals.is_empty() {
        return Err(Error::Domain("spectrum estimate has no intervals".into()));
    }
    if t < 2 {
        return Err(Error::Domain("resonance order must be at least 2".into()));
    }
    let r = est.intervals.len();
    let a: Vec<f64> = est.intervals.iter().map(|iv| iv.lo).collect();
    let b: Vec<f64> = est.intervals.iter().map(|iv| iv.hi).collect();
    let mut violations = Vec::new();
    let mut q = vec![0u32; r];
    let mut budget: usize = 1_000_000;
    enumerate_q(&mut q, 0, t, &mut |q| {
        let total: u32 = q.iter().sum();
        if total < 2 {
            return Ok(());
        }
        budget = budget.checked_sub(1).ok_or_else(|| {
            Error::Domain("resonance enumeration exceeds the 1e6 tuple cap".into())
        })?;
        let lo: f64 = q.iter().zip(&a).map(|(&qi, ai)| qi as f64 * ai).sum();
        let hi: f64 = q.iter().zip(&b).map(|(&qi, bi)| qi as f64 * bi).sum();
        for i in 0..r {
            if a[i].max(lo) <= b[i].min(hi) {
                violations.push(ResonanceViolation {
                    interval: i + 1,
                    q: q.to_vec(),
                });
            }
        }
        Ok(())
    })?;
    Ok(violations)
}

fn enumerate_q(
    q: &mut Vec<u32>,
    pos: usize,
    remaining: u32,
    f: &mut impl FnMut(&[u32]) -> Result<()>,
) -> Result<()> {
    if pos == q.len() {
        return f(q);
    }
    for v in 0..=remaining {
        q[pos] = v;
        enumerate_q(q, pos + 1, remaining - v, f)?;
    }
    q[pos] = 0;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BandGapReport {
    pub gap_ok: bool,
    pub band_ok_stable: bool,
    pub band_ok_unstable: bool,
    /// number of intervals strictly left of 0
    pub k_split: usize,
    pub gap: f64,
    pub gap_required: f64,
}

impl BandGapReport {
    pub fn all_pass(&self) -> bool {
        self.gap_ok && self.band_ok_stable && self.band_ok_unstable
    }
}

/// Evaluates the spectral gap and band-width inequalities around the origin:
/// a_{k+1} - b_k > max(b_r, -a_1), and every band no wider than the gap edge
/// on its side.
pub fn check_band_gap(est: &SpectrumEstimate) -> Result<BandGapReport> {
    let iv = &est.intervals;
    if iv.is_empty() {
        return Err(Error::NoSplitting("spectrum estimate has no intervals".into()));
    }
    if iv.iter().any(|i| i.lo <= 0.0 && 0.0 <= i.hi) {
        return Err(Error::NoSplitting("0 lies inside a spectral interval".into()));
    }
    let k = iv.iter().filter(|i| i.hi < 0.0).count();
    let r = iv.len();
    if k == 0 || k == r {
        return Err(Error::NoSplitting(
            "need some k with b_k < 0 < a_{k+1}".into(),
        ));
    }
    let gap = iv[k].lo - iv[k - 1].hi;
    let gap_required = iv[r - 1].hi.max(-iv[0].lo);
    let band_ok_stable = iv[..k].iter().all(|i| i.hi - i.lo <= -iv[k - 1].hi);
    let band_ok_unstable = iv[k..].iter().all(|i| i.hi - i.lo <= iv[k].lo);
    Ok(BandGapReport {
        gap_ok: gap > gap_required,
        band_ok_stable,
        band_ok_unstable,
        k_split: k,
        gap,
        gap_required,
    })
}

/// Hausdorff distance between two unions of closed intervals.
pub fn hausdorff_distance(a: &[Interval], b: &[Interval]) -> f64 {
    fn point_to_set(x: f64, set: &[Interval]) -> f64 {
        set.iter()
            .map(|iv| {
                if x < iv.lo {
                    iv.lo - x
                } else if x > iv.hi {
                    x - iv.hi
                } else {
                    0.0
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
    fn directed(from: &[Interval], to: &[Interval]) -> f64 {
        let mut worst = 0.0f64;
        for iv in from {
            worst = worst.max(point_to_set(iv.lo, to));
            worst = worst.max(point_to_set(iv.hi, to));
        }
        // interior candidates: midpoints of `to` gaps that land inside `from`
        for w in to.windows(2) {
            let mid = 0.5 * (w[0].hi + w[1].lo);
            if from.iter().any(|iv| iv.lo <= mid && mid <= iv.hi) {
                worst = worst.max(point_to_set(mid, to));
            }
        }
        worst
    }
    if a.is_empty() || b.is_empty() {
        return if a.is_empty() && b.is_empty() {
            0.0
        } else {
            f64::INFINITY
        };
    }
    directed(a, b).max(directed(b, a))
}
