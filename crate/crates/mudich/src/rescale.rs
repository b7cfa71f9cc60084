//! Time rescaling: given growth rates mu and eta, the derived system whose
//! step n is the base transition between consecutive rescaled indices
//! tau(n) = floor(mu~^{-1}(eta_{n-1})) + 1.

use std::sync::{Arc, RwLock};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::growth::GrowthRate;
use crate::system::{EvolutionFamily, NormFamily, OperatorSequence, ProjectionFamily};

/// The index map k -> tau(k) driving every rescaled quantity.
pub struct RescaleIndexMap {
    mu: Arc<GrowthRate>,
    eta: Arc<GrowthRate>,
    cache: RwLock<Vec<usize>>,
}

impl RescaleIndexMap {
    pub fn new(mu: Arc<GrowthRate>, eta: Arc<GrowthRate>) -> Result<Self> {
        // both rates carry mu_0 = 1 by construction; nothing else to check here
        Ok(RescaleIndexMap {
            mu,
            eta,
            cache: RwLock::new(Vec::new()),
        })
    }

    pub fn mu(&self) -> &Arc<GrowthRate> {
        &self.mu
    }

    pub fn eta(&self) -> &Arc<GrowthRate> {
        &self.eta
    }

    /// tau(k) = floor(mu~^{-1}(eta_{k-1})) + 1 for k >= 1, cached.
    pub fn tau(&self, k: usize) -> Result<usize> {
        if k < 1 {
            return Err(Error::Domain("tau indices start at 1".into()));
        }
        {
            let cache = self.cache.read().unwrap();
            if let Some(&v) = cache.get(k - 1) {
                return Ok(v);
            }
        }
        let mut cache = self.cache.write().unwrap();
        while cache.len() < k {
            let i = cache.len() + 1;
            let s = self.eta.value(i - 1)?;
            let t = self.mu.interp_inv(s)?;
            let v = t.floor() as usize + 1;
            if let Some(&prev) = cache.last() {
                debug_assert!(v >= prev, "tau must be nondecreasing");
            }
            cache.push(v);
        }
        Ok(cache[k - 1])
    }

    /// Largest rescaled index n such that tau(n + 1) <= base_horizon.
    pub fn max_usable(&self, base_horizon: usize) -> Result<usize> {
        let mut n = 0usize;
        while self.tau(n + 2)? <= base_horizon {
            n += 1;
        }
        Ok(n)
    }
}

/// The rescaled system: operators Q_n = Phi_A(tau(n+1), tau(n)), rescaled
/// norms ||.||_k^eta = ||.||_{tau(k)} and projections P_k^eta = P_{tau(k)}.
#[allow(missing_debug_implementations)]
pub struct RescaledSystem {
    base: Arc<EvolutionFamily>,
    index_map: Arc<RescaleIndexMap>,
    ops: Arc<OperatorSequence>,
    norms: NormFamily,
    projections: Option<ProjectionFamily>,
    horizon: usize,
}

/// Builds the rescaled system up to `rescaled_horizon`, requiring that every
/// needed base index stays within `base_horizon`.
pub fn build(
    base: Arc<EvolutionFamily>,
    mu: Arc<GrowthRate>,
    eta: Arc<GrowthRate>,
    norms: NormFamily,
    projections: Option<ProjectionFamily>,
    base_horizon: usize,
    rescaled_horizon: usize,
) -> Result<RescaledSystem> {
    if norms.dim() != base.dim() {
        return Err(Error::Domain("norm family dimension mismatch".into()));
    }
    if let Some(p) = &projections {
        if p.dim() != base.dim() {
            return Err(Error::Domain("projection family dimension mismatch".into()));
        }
    }
    let index_map = Arc::new(RescaleIndexMap::new(mu, eta)?);
    let max_usable = index_map.max_usable(base_horizon)?;
    if rescaled_horizon > max_usable {
        return Err(Error::HorizonExhausted { max_usable });
    }

    let ops = {
        let base = base.clone();
        let map = index_map.clone();
        Arc::new(OperatorSequence::from_fn(
            &format!("rescaled({})", base.source().name()),
            base.dim(),
            base.source().invertible(),
            move |n| {
                let hi = map.tau(n + 1).expect("tau generation failed");
                let lo = map.tau(n).expect("tau generation failed");
                base.transition(hi, lo)
                    .expect("base transition failed")
                    .as_ref()
                    .clone()
            },
        ))
    };

    let rescaled_norms = {
        let map = index_map.clone();
        match &norms {
            NormFamily::Uniform { dim } => NormFamily::euclidean(*dim),
            other => {
                let inner = other.clone();
                NormFamily::custom(norms.dim(), true, move |k, x| {
                    inner.vector_norm(map.tau(k).expect("tau generation failed"), x)
                })
            }
        }
    };

    let rescaled_projections = projections.map(|p| {
        let map = index_map.clone();
        ProjectionFamily::from_fn(p.dim(), move |k| {
            p.projection(map.tau(k).expect("tau generation failed"))
                .expect("projection generation failed")
        })
    });

    Ok(RescaledSystem {
        base,
        index_map,
        ops,
        norms: rescaled_norms,
        projections: rescaled_projections,
        horizon: rescaled_horizon,
    })
}

impl RescaledSystem {
    pub fn base(&self) -> &Arc<EvolutionFamily> {
        &self.base
    }

    pub fn index_map(&self) -> &Arc<RescaleIndexMap> {
        &self.index_map
    }

    pub fn tau(&self, k: usize) -> Result<usize> {
        self.index_map.tau(k)
    }

    /// The rescaled operator sequence Q.
    pub fn ops(&self) -> &Arc<OperatorSequence> {
        &self.ops
    }

    pub fn q(&self, n: usize) -> Result<DMatrix<f64>> {
        self.ops.operator(n)
    }

    pub fn norms(&self) -> &NormFamily {
        &self.norms
    }

    pub fn projections(&self) -> Option<&ProjectionFamily> {
        self.projections.as_ref()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn eta(&self) -> &Arc<GrowthRate> {
        self.index_map.eta()
    }

    /// Phi_Q(m, n) evaluated through the base family as
    /// Phi_A(tau(m), tau(n)); coincides with the Q-factor product.
    pub fn rescaled_transition(&self, m: usize, n: usize) -> Result<Arc<DMatrix<f64>>> {
        if m < n || n < 1 {
            return Err(Error::Domain(format!(
                "rescaled transition requires m >= n >= 1, got ({m},{n})"
            )));
        }
        if m > self.horizon + 1 {
            return Err(Error::HorizonExhausted {
                max_usable: self.horizon,
            });
        }
        self.base.transition(self.tau(m)?, self.tau(n)?)
    }

    /// A fresh evolution family over the Q operators (its cache is
    /// independent of the base family's).
    pub fn q_family(&self) -> EvolutionFamily {
        EvolutionFamily::new(self.ops.clone())
    }
}
