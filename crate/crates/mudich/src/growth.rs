//! Discrete growth rates, their continuous interpolants and inverses.
//!
//! A growth rate is a positive, strictly increasing sequence `mu_0, mu_1, ...`
//! with `mu_0 = 1`. Values are generated lazily and memoized; the declared
//! ratio bound `theta` (so that `mu_{n+1}/mu_n <= theta`) is audited by
//! [`GrowthRate::validate`], never inferred.

use std::sync::{Arc, RwLock};

use serde::Serialize;

use crate::error::{Error, Result};

type RateGen = Arc<dyn Fn(usize) -> f64 + Send + Sync>;

/// A discrete growth rate with lazily generated, cached values.
pub struct GrowthRate {
    name: String,
    theta: f64,
    gen: RateGen,
    cache: RwLock<Vec<f64>>,
}

impl std::fmt::Debug for GrowthRate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GrowthRate")
            .field("name", &self.name)
            .field("theta", &self.theta)
            .finish()
    }
}

/// Audit report for a growth rate over a finite horizon.
#[derive(Debug, Clone, Serialize)]
pub struct RateValidation {
    pub name: String,
    pub theta: f64,
    pub horizon: usize,
    /// max over n < horizon of mu_{n+1}/mu_n
    pub max_ratio: f64,
    /// max over the sampled t-grid of interp(t+1)/interp(t)
    pub max_interp_ratio: f64,
    pub ratio_within_theta: bool,
    pub interp_within_theta_sq: bool,
    /// Unboundedness (lim mu_n = +inf) cannot be checked on a finite horizon;
    /// recorded here as an assumption carried by downstream certificates.
    pub unbounded_assumed: bool,
}

impl RateValidation {
    pub fn passed(&self) -> bool {
        self.ratio_within_theta && self.interp_within_theta_sq
    }
}

impl GrowthRate {
    /// Builds a rate from a generator. `gen(0)` must be exactly 1.
    pub fn from_fn<F>(name: &str, theta: f64, gen: F) -> Result<Self>
    where
        F: Fn(usize) -> f64 + Send + Sync + 'static,
    {
        if !(theta >= 1.0) || !theta.is_finite() {
            return Err(Error::Domain(format!(
                "theta must be a finite real >= 1, got {theta}"
            )));
        }
        let rate = GrowthRate {
            name: name.to_string(),
            theta,
            gen: Arc::new(gen),
            cache: RwLock::new(Vec::new()),
        };
        let mu0 = rate.value(0)?;
        if mu0 != 1.0 {
            return Err(Error::InvalidRate {
                index: 0,
                reason: format!("mu_0 must be exactly 1, got {mu0}"),
            });
        }
        Ok(rate)
    }

    /// Polynomial rate mu_n = n + 1, ratio bound 2 (attained at n = 0).
    pub fn polynomial() -> Self {
        Self::from_fn("polynomial", 2.0, |n| (n + 1) as f64).expect("valid by construction")
    }

    /// Exponential rate mu_n = e^n, ratio bound e.
    pub fn exponential() -> Self {
        Self::from_fn("exponential", std::f64::consts::E, |n| (n as f64).exp())
            .expect("valid by construction")
    }

    /// Geometric rate mu_n = h^n for h > 1, ratio bound h.
    pub fn geometric(h: f64) -> Result<Self> {
        if !(h > 1.0) || !h.is_finite() {
            return Err(Error::Domain(format!("geometric base must exceed 1, got {h}")));
        }
        Self::from_fn(&format!("geometric({h})"), h, move |n| h.powi(n as i32))
    }

    /// Rate given by an explicit table of values starting at mu_0.
    pub fn from_table(values: Vec<f64>, theta: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("rate table must be non-empty".into()));
        }
        let table = Arc::new(values);
        let t = table.clone();
        Self::from_fn("table", theta, move |n| {
            t.get(n).copied().unwrap_or(f64::NAN)
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The declared ratio bound.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// mu_n, generated and validated on first access.
    pub fn value(&self, n: usize) -> Result<f64> {
        {
            let cache = self.cache.read().unwrap();
            if let Some(&v) = cache.get(n) {
                return Ok(v);
            }
        }
        let mut cache = self.cache.write().unwrap();
        while cache.len() <= n {
            let i = cache.len();
            let v = (self.gen)(i);
            if v == f64::INFINITY {
                // unbounded rates legitimately outgrow f64; the index is
                // simply unusable as a number
                return Err(Error::RateOverflow { index: i });
            }
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::InvalidRate {
                    index: i,
                    reason: format!("generator produced non-positive or non-finite value {v}"),
                });
            }
            if let Some(&prev) = cache.last() {
                if v <= prev {
                    return Err(Error::InvalidRate {
                        index: i,
                        reason: format!("not strictly increasing: mu_{} = {v} <= mu_{} = {prev}", i, i - 1),
                    });
                }
            }
            cache.push(v);
        }
        Ok(cache[n])
    }

    /// mu_{n+1} - mu_n, the discrete derivative.
    pub fn step(&self, n: usize) -> Result<f64> {
        Ok(self.value(n + 1)? - self.value(n)?)
    }

    /// mu_{n+1} / mu_n.
    pub fn ratio(&self, n: usize) -> Result<f64> {
        Ok(self.value(n + 1)? / self.value(n)?)
    }

    /// Piecewise-linear interpolant: exact at integers,
    /// mu_n + (t - n)(mu_{n+1} - mu_n) in between.
    pub fn interp(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("interp requires t >= 0, got {t}")));
        }
        let n = t.floor() as usize;
        let mu_n = self.value(n)?;
        if t == n as f64 {
            return Ok(mu_n);
        }
        let mu_n1 = self.value(n + 1)?;
        Ok(mu_n + (t - n as f64) * (mu_n1 - mu_n))
    }

    /// Inverse of the interpolant. Exact at stored nodes; otherwise the
    /// closed form n + (s - mu_n)/(mu_{n+1} - mu_n) after a bracketing
    /// search for the node.
    pub fn interp_inv(&self, s: f64) -> Result<f64> {
        if !(s >= 1.0) || !s.is_finite() {
            return Err(Error::Domain(format!("interp_inv requires s >= 1, got {s}")));
        }
        // Gallop for an upper node with mu_hi >= s; nodes past the f64
        // range certainly lie above any finite s.
        let at_most = |rate: &GrowthRate, n: usize| -> Result<bool> {
            match rate.value(n) {
                Ok(v) => Ok(v <= s),
                Err(Error::RateOverflow { .. }) => Ok(false),
                Err(e) => Err(e),
            }
        };
        let mut hi = 1usize;
        while at_most(self, hi)? {
            if self.value(hi)? == s {
                return Ok(hi as f64);
            }
            hi = hi.saturating_mul(2);
        }
        let mut lo = hi / 2;
        // Binary search for the bracketing node: mu_lo <= s < mu_{lo+1}.
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if at_most(self, mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mu_lo = self.value(lo)?;
        if s == mu_lo {
            return Ok(lo as f64);
        }
        let mu_hi = self.value(lo + 1)?;
        if s == mu_hi {
            return Ok((lo + 1) as f64);
        }
        Ok(lo as f64 + (s - mu_lo) / (mu_hi - mu_lo))
    }

    /// Audits the declared ratio bound over an integer horizon and a sampled
    /// t-grid. Failures are reported, not thrown.
    pub fn validate(&self, horizon: usize) -> Result<RateValidation> {
        let mut max_ratio: f64 = 0.0;
        for n in 0..horizon {
            max_ratio = max_ratio.max(self.ratio(n)?);
        }
        // t-grid with 4 interior samples per unit interval
        let mut max_interp_ratio: f64 = 0.0;
        let samples = (horizon.saturating_sub(1)).max(1) * 4;
        for i in 0..=samples {
            let t = (horizon - 1) as f64 * i as f64 / samples as f64;
            let r = self.interp(t + 1.0)? / self.interp(t)?;
            max_interp_ratio = max_interp_ratio.max(r);
        }
        // Tiny relative slack so declared-equality cases (ratio == theta) pass.
        let slack = 1.0 + 1e-12;
        Ok(RateValidation {
            name: self.name.clone(),
            theta: self.theta,
            horizon,
            max_ratio,
            max_interp_ratio,
            ratio_within_theta: max_ratio <= self.theta * slack,
            interp_within_theta_sq: max_interp_ratio <= self.theta * self.theta * slack,
            unbounded_assumed: true,
        })
    }

    /// Both sides of the partial-sum bound
    /// `sum_{j=n}^{m-1} mu'_j/mu_j  <=  theta * log(mu_m/mu_n)`.
    pub fn log_sum_bound(&self, n: usize, m: usize) -> Result<(f64, f64)> {
        if n < 1 || m < n {
            return Err(Error::Domain(format!(
                "log_sum_bound requires 1 <= n <= m, got n={n}, m={m}"
            )));
        }
        let mut sum = 0.0;
        for j in n..m {
            sum += self.step(j)? / self.value(j)?;
        }
        let bound = self.theta * (self.value(m)? / self.value(n)?).ln();
        Ok((sum, bound))
    }
}
