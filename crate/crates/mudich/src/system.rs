//! Matrix sequences, cached evolution families, and time-indexed norm and
//! projection families.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::growth::GrowthRate;

type MatrixGen = Arc<dyn Fn(usize) -> DMatrix<f64> + Send + Sync>;

/// A sequence of d x d operators `A_1, A_2, ...` driving `x_{n+1} = A_n x_n`.
pub struct OperatorSequence {
    name: String,
    dim: usize,
    invertible: bool,
    gen: MatrixGen,
    /// Accumulated spectral shift: each operator is scaled by
    /// (mu_{n+1}/mu_n)^{-lambda}. Shifts with the same rate compose by
    /// adding lambdas, so nested shifts stay entrywise identical to a
    /// single shift by the total.
    shift: Option<(Arc<GrowthRate>, f64)>,
}

impl std::fmt::Debug for OperatorSequence {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorSequence")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("invertible", &self.invertible)
            .finish()
    }
}

impl OperatorSequence {
    pub fn from_fn<F>(name: &str, dim: usize, invertible: bool, gen: F) -> Self
    where
        F: Fn(usize) -> DMatrix<f64> + Send + Sync + 'static,
    {
        OperatorSequence {
            name: name.to_string(),
            dim,
            invertible,
            gen: Arc::new(gen),
            shift: None,
        }
    }

    /// Diagonal sequence A_n = diag((mu_{n+1}/mu_n)^{c_i}).
    pub fn diagonal_powers(rate: Arc<GrowthRate>, exponents: Vec<f64>) -> Self {
        let dim = exponents.len();
        let name = format!("diagonal{exponents:?}");
        OperatorSequence::from_fn(&name, dim, true, move |n| {
            let r = rate.ratio(n).expect("rate generation failed");
            DMatrix::from_diagonal(&DVector::from_iterator(
                dim,
                exponents.iter().map(|&c| r.powf(c)),
            ))
        })
    }

    /// Piecewise-constant exponents on dyadic index blocks [2^j, 2^{j+1});
    /// the exponent list is cycled over blocks. Indices below 2 use block 0.
    pub fn switched_dyadic(rate: Arc<GrowthRate>, exponents: Vec<f64>, dim: usize) -> Self {
        let name = format!("switched{exponents:?}");
        OperatorSequence::from_fn(&name, dim, true, move |n| {
            let block = if n < 2 { 0 } else { n.ilog2() as usize };
            let c = exponents[block % exponents.len()];
            let r = rate.ratio(n).expect("rate generation failed");
            DMatrix::from_diagonal_element(dim, dim, r.powf(c))
        })
    }

    /// Constant sequence A_n = A.
    pub fn constant(name: &str, matrix: DMatrix<f64>, invertible: bool) -> Self {
        let dim = matrix.nrows();
        OperatorSequence::from_fn(name, dim, invertible, move |_| matrix.clone())
    }

    /// Explicit table A_1..A_N; indices beyond the table are an error.
    pub fn from_table(name: &str, mats: Vec<DMatrix<f64>>, invertible: bool) -> Result<Self> {
        if mats.is_empty() {
            return Err(Error::Domain("operator table must be non-empty".into()));
        }
        let dim = mats[0].nrows();
        if mats.iter().any(|m| m.nrows() != dim || m.ncols() != dim) {
            return Err(Error::Domain("operator table entries must share a square shape".into()));
        }
        let table = Arc::new(mats);
        Ok(OperatorSequence::from_fn(name, dim, invertible, move |n| {
            table
                .get(n - 1)
                .cloned()
                .unwrap_or_else(|| DMatrix::from_element(dim, dim, f64::NAN))
        }))
    }

    /// The scalar sequence with A_n = n at n = 2^k - 1 (k >= 2) and 0
    /// otherwise. Not invertible; its rescaling by eta_n = 2^n with the
    /// polynomial rate is identically zero.
    pub fn spiking_counterexample() -> Self {
        OperatorSequence::from_fn("paper-example", 1, false, |n| {
            let is_spike = n >= 3 && (n + 1).is_power_of_two();
            DMatrix::from_element(1, 1, if is_spike { n as f64 } else { 0.0 })
        })
    }

    /// Applies the spectral shift A_n -> (mu_{n+1}/mu_n)^{-lambda} A_n.
    /// Shifting an already shifted sequence with the same rate accumulates
    /// the exponent so transitions coincide entrywise with a single shift.
    pub fn shifted(&self, rate: Arc<GrowthRate>, lambda: f64) -> OperatorSequence {
        let (rate, lambda) = match &self.shift {
            Some((r, l)) if Arc::ptr_eq(r, &rate) || r.name() == rate.name() => {
                (r.clone(), l + lambda)
            }
            _ => (rate, lambda),
        };
        OperatorSequence {
            name: format!("{}<<shift {lambda}>>", self.name),
            dim: self.dim,
            invertible: self.invertible,
            gen: self.gen.clone(),
            shift: if lambda == 0.0 { None } else { Some((rate, lambda)) },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn invertible(&self) -> bool {
        self.invertible
    }

    /// A_n for n >= 1, validated to be d x d with finite entries.
    pub fn operator(&self, n: usize) -> Result<DMatrix<f64>> {
        if n == 0 {
            return Err(Error::Domain("operator indices start at 1".into()));
        }
        let mut a = (self.gen)(n);
        if a.nrows() != self.dim || a.ncols() != self.dim {
            return Err(Error::InvalidOperator {
                name: self.name.clone(),
                index: n,
                reason: format!("expected {0}x{0}, got {1}x{2}", self.dim, a.nrows(), a.ncols()),
            });
        }
        if let Some((rate, lambda)) = &self.shift {
            let factor = rate.ratio(n)?.powf(-lambda);
            a *= factor;
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidOperator {
                name: self.name.clone(),
                index: n,
                reason: "non-finite entries".into(),
            });
        }
        Ok(a)
    }
}

/// Largest dyadically aligned split point strictly inside (k, m).
fn dyadic_split(k: usize, m: usize) -> usize {
    debug_assert!(m > k + 1);
    for p in (0..usize::BITS).rev() {
        let step = 1usize << p;
        let j = (k / step + 1).saturating_mul(step);
        if j > k && j < m {
            return j;
        }
    }
    unreachable!("m > k + 1 guarantees a split at p = 0")
}

/// Cached transition operators Phi(m, k) = A_{m-1} ... A_k of a sequence.
///
/// Products are assembled by splitting windows at dyadic boundaries so that
/// overlapping queries share cached blocks; the factorization of each (m, k)
/// is a pure function of the indices, which keeps results reproducible under
/// concurrent use.
pub struct EvolutionFamily {
    source: Arc<OperatorSequence>,
    cache: RwLock<HashMap<(usize, usize), Arc<DMatrix<f64>>>>,
}

impl EvolutionFamily {
    pub fn new(source: Arc<OperatorSequence>) -> Self {
        EvolutionFamily {
            source,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn source(&self) -> &Arc<OperatorSequence> {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    /// Phi(m, k) for m >= k >= 1; Phi(k, k) = Id.
    pub fn transition(&self, m: usize, k: usize) -> Result<Arc<DMatrix<f64>>> {
        if m < k || k < 1 {
            return Err(Error::Domain(format!(
                "transition requires m >= k >= 1, got ({m},{k})"
            )));
        }
        if m == k {
            return Ok(Arc::new(DMatrix::identity(self.dim(), self.dim())));
        }
        if let Some(hit) = self.cache.read().unwrap().get(&(m, k)) {
            return Ok(hit.clone());
        }
        let product = if m == k + 1 {
            Arc::new(self.source.operator(k)?)
        } else {
            let j = dyadic_split(k, m);
            let right = self.transition(j, k)?;
            let left = self.transition(m, j)?;
            let prod = &*left * &*right;
            if prod.iter().any(|v| !v.is_finite()) {
                return Err(Error::TransitionOverflow { m, k });
            }
            Arc::new(prod)
        };
        let mut cache = self.cache.write().unwrap();
        Ok(cache.entry((m, k)).or_insert(product).clone())
    }

    /// Phi(m, k) x without exposing the matrix.
    pub fn apply(&self, m: usize, k: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&*self.transition(m, k)? * x)
    }

    /// Backward transition for m <= k: the inverse of Phi(k, m).
    ///
    /// For invertible sequences this is the full inverse. Otherwise a
    /// projection family must be supplied and the result is the inverse of
    /// the restriction Ker P_m -> Ker P_k, expressed as the ambient map
    /// x -> B_m C^{-1} B_k^T (Id - P_k) x with orthonormal kernel bases B.
    pub fn backward_transition(
        &self,
        m: usize,
        k: usize,
        restriction: Option<&ProjectionFamily>,
    ) -> Result<DMatrix<f64>> {
        if m > k || m < 1 {
            return Err(Error::Domain(format!(
                "backward transition requires 1 <= m <= k, got ({m},{k})"
            )));
        }
        match restriction {
            None => {
                if !self.source.invertible() {
                    return Err(Error::MissingRestriction);
                }
                let fwd = self.transition(k, m)?;
                fwd.clone_owned()
                    .try_inverse()
                    .ok_or(Error::SingularRestriction { m, k })
            }
            Some(p) => {
                let pk = p.projection(k)?;
                let pm = p.projection(m)?;
                let bk = kernel_basis(&pk);
                let bm = kernel_basis(&pm);
                if bk.ncols() != bm.ncols() {
                    return Err(Error::RankCollapse { index: k });
                }
                let d = self.dim();
                if bk.ncols() == 0 {
                    // trivial kernel: the restricted map is the zero-space identity
                    return Ok(DMatrix::zeros(d, d));
                }
                let fwd = self.transition(k, m)?;
                let restricted = bk.transpose() * &*fwd * &bm;
                let inv = restricted
                    .try_inverse()
                    .ok_or(Error::SingularRestriction { m, k })?;
                let id = DMatrix::identity(d, d);
                Ok(&bm * inv * bk.transpose() * (id - pk))
            }
        }
    }

    /// Max sampled residual of Phi(m,n) P_n = P_m Phi(m,n) in spectral norm.
    pub fn check_invariance(&self, p: &ProjectionFamily, horizon: usize) -> Result<f64> {
        if horizon < 2 {
            return Err(Error::Domain("invariance check needs horizon >= 2".into()));
        }
        let mut worst: f64 = 0.0;
        for n in log_indices(1, horizon - 1, 24) {
            for off in log_offsets(horizon - n, 12) {
                let m = n + off;
                let phi = self.transition(m, n)?;
                let res = &*phi * p.projection(n)? - p.projection(m)? * &*phi;
                worst = worst.max(spectral_norm(&res));
            }
        }
        Ok(worst)
    }
}

/// Orthonormal basis of Ker P = range(Id - P), as matrix columns.
pub(crate) fn kernel_basis(p: &DMatrix<f64>) -> DMatrix<f64> {
    let d = p.nrows();
    let complement = DMatrix::identity(d, d) - p;
    orthonormal_range(&complement)
}

/// Orthonormal basis of Im P, as matrix columns.
pub(crate) fn range_basis(p: &DMatrix<f64>) -> DMatrix<f64> {
    orthonormal_range(p)
}

fn orthonormal_range(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.nrows();
    let svd = m.clone().svd(true, false);
    let u = svd.u.as_ref().expect("svd with u requested");
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let cols: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-9 * smax.max(1.0))
        .collect();
    let mut basis = DMatrix::zeros(d, cols.len());
    for (j, &i) in cols.iter().enumerate() {
        basis.set_column(j, &u.column(i));
    }
    basis
}

/// Euclidean norm guarded against overflow of the squared entries.
pub fn stable_norm(v: &DVector<f64>) -> f64 {
    let m = v.amax();
    if m == 0.0 {
        return 0.0;
    }
    if !m.is_finite() {
        return f64::INFINITY;
    }
    if (1e-100..=1e100).contains(&m) {
        v.norm()
    } else {
        m * v.unscale(m).norm()
    }
}

/// Spectral (largest singular value) norm, scaled to avoid overflow.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    let a = m.amax();
    if a == 0.0 {
        return 0.0;
    }
    if !a.is_finite() {
        return f64::INFINITY;
    }
    a * m
        .unscale(a)
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
}

/// Condition number in the spectral norm; +inf for singular matrices.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let a = m.amax();
    if a == 0.0 || !a.is_finite() {
        return f64::INFINITY;
    }
    let sv = m.unscale(a).svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Deduplicated, sorted, roughly geometric index ladder in [lo, hi].
pub(crate) fn log_indices(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    if hi < lo {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(count + 1);
    let (flo, fhi) = (lo as f64, hi as f64);
    for i in 0..=count {
        let t = i as f64 / count.max(1) as f64;
        let v = (flo.ln() * (1.0 - t) + fhi.ln() * t).exp().round() as usize;
        out.push(v.clamp(lo, hi));
    }
    out.dedup();
    out
}

/// Offsets {0, 1, 2, 4, ...} up to max_off, geometric, deduplicated.
pub(crate) fn log_offsets(max_off: usize, count: usize) -> Vec<usize> {
    let mut out = vec![0, 1];
    let mut v = 2usize;
    while v <= max_off && out.len() < count + 2 {
        out.push(v);
        v = (v * 2).max(v + 1);
    }
    if *out.last().unwrap() < max_off {
        out.push(max_off);
    }
    out.retain(|&o| o <= max_off);
    out.dedup();
    out
}

type NormEval = Arc<dyn Fn(usize, &DVector<f64>) -> f64 + Send + Sync>;
type WeightGen = Arc<dyn Fn(usize) -> DMatrix<f64> + Send + Sync>;

/// Time-indexed norms on R^d.
#[derive(Clone)]
pub enum NormFamily {
    /// The Euclidean norm at every time.
    Uniform { dim: usize },
    /// Weighted norms |S_n x| with invertible weights S_n.
    Weighted { dim: usize, weights: WeightGen },
    /// Arbitrary norms given by an evaluator.
    Custom {
        dim: usize,
        eval: NormEval,
        equivalent_to_base: bool,
    },
}

impl std::fmt::Debug for NormFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NormFamily::Uniform { dim } => write!(f, "NormFamily::Uniform(dim={dim})"),
            NormFamily::Weighted { dim, .. } => write!(f, "NormFamily::Weighted(dim={dim})"),
            NormFamily::Custom { dim, .. } => write!(f, "NormFamily::Custom(dim={dim})"),
        }
    }
}

impl NormFamily {
    pub fn euclidean(dim: usize) -> Self {
        NormFamily::Uniform { dim }
    }

    pub fn weighted<F>(dim: usize, weights: F) -> Self
    where
        F: Fn(usize) -> DMatrix<f64> + Send + Sync + 'static,
    {
        NormFamily::Weighted {
            dim,
            weights: Arc::new(weights),
        }
    }

    pub fn custom<F>(dim: usize, equivalent_to_base: bool, eval: F) -> Self
    where
        F: Fn(usize, &DVector<f64>) -> f64 + Send + Sync + 'static,
    {
        NormFamily::Custom {
            dim,
            eval: Arc::new(eval),
            equivalent_to_base,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            NormFamily::Uniform { dim }
            | NormFamily::Weighted { dim, .. }
            | NormFamily::Custom { dim, .. } => *dim,
        }
    }

    pub fn is_uniform_euclidean(&self) -> bool {
        matches!(self, NormFamily::Uniform { .. })
    }

    /// ||x||_n.
    pub fn vector_norm(&self, n: usize, x: &DVector<f64>) -> f64 {
        match self {
            NormFamily::Uniform { .. } => stable_norm(x),
            NormFamily::Weighted { weights, .. } => stable_norm(&(weights(n) * x)),
            NormFamily::Custom { eval, .. } => eval(n, x),
        }
    }

    /// Operator norm of T as a map (X, ||.||_k) -> (X, ||.||_m).
    ///
    /// Exact for uniform and weighted families (|S_m T S_k^{-1}| in spectral
    /// norm); sampled over seeded unit vectors for custom families.
    pub fn operator_norm(&self, m: usize, t: &DMatrix<f64>, k: usize) -> f64 {
        match self {
            NormFamily::Uniform { .. } => spectral_norm(t),
            NormFamily::Weighted { weights, .. } => {
                let sk_inv = weights(k)
                    .try_inverse()
                    .expect("weight matrices must be invertible");
                spectral_norm(&(weights(m) * t * sk_inv))
            }
            NormFamily::Custom { dim, eval, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(0x6e6f726d);
                let mut sup: f64 = 0.0;
                for _ in 0..256 {
                    let x = random_unit(&mut rng, *dim);
                    let denom = eval(k, &x);
                    if denom > 0.0 {
                        sup = sup.max(eval(m, &(t * &x)) / denom);
                    }
                }
                sup
            }
        }
    }

    /// Spot-checks the norm axioms on seeded random triples.
    pub fn validate(&self, times: &[usize], trials: usize, seed: u64) -> Result<()> {
        let dim = self.dim();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &n in times {
            for _ in 0..trials {
                let x = random_unit(&mut rng, dim) * rng.gen_range(0.1..10.0);
                let y = random_unit(&mut rng, dim) * rng.gen_range(0.1..10.0);
                let a: f64 = rng.gen_range(-4.0..4.0);
                let nx = self.vector_norm(n, &x);
                let ny = self.vector_norm(n, &y);
                if !(nx > 0.0) {
                    return Err(Error::Domain(format!(
                        "norm at time {n} is not positive-definite on a sample"
                    )));
                }
                let hom = self.vector_norm(n, &(&x * a));
                if (hom - a.abs() * nx).abs() > 1e-9 * (1.0 + nx) {
                    return Err(Error::Domain(format!("norm at time {n} is not homogeneous")));
                }
                let tri = self.vector_norm(n, &(&x + &y));
                if tri > nx + ny + 1e-9 * (1.0 + nx + ny) {
                    return Err(Error::Domain(format!(
                        "triangle inequality fails at time {n}"
                    )));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 {
            return v / n;
        }
    }
}

type ProjGen = Arc<dyn Fn(usize) -> DMatrix<f64> + Send + Sync>;

/// Time-indexed projections P_n on R^d.
#[derive(Clone)]
pub struct ProjectionFamily {
    dim: usize,
    gen: ProjGen,
}

impl std::fmt::Debug for ProjectionFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ProjectionFamily(dim={})", self.dim)
    }
}

impl ProjectionFamily {
    pub fn from_fn<F>(dim: usize, gen: F) -> Self
    where
        F: Fn(usize) -> DMatrix<f64> + Send + Sync + 'static,
    {
        ProjectionFamily {
            dim,
            gen: Arc::new(gen),
        }
    }

    pub fn constant(p: DMatrix<f64>) -> Self {
        let dim = p.nrows();
        ProjectionFamily::from_fn(dim, move |_| p.clone())
    }

    /// diag(1,...,1,0,...,0) with the given rank.
    pub fn coordinate(dim: usize, rank: usize) -> Self {
        let p = DMatrix::from_fn(dim, dim, |i, j| if i == j && i < rank { 1.0 } else { 0.0 });
        ProjectionFamily::constant(p)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// P_n, validated as idempotent to 1e-10 per entry.
    pub fn projection(&self, n: usize) -> Result<DMatrix<f64>> {
        let p = (self.gen)(n);
        if p.nrows() != self.dim || p.ncols() != self.dim {
            return Err(Error::Domain(format!(
                "projection at {n} has wrong shape {}x{}",
                p.nrows(),
                p.ncols()
            )));
        }
        let residual = (&p * &p - &p).amax();
        let scale = p.amax().max(1.0);
        if residual > 1e-10 * scale.max(scale * scale) {
            return Err(Error::Domain(format!(
                "P_{n} is not idempotent (residual {residual:.3e})"
            )));
        }
        Ok(p)
    }

    pub fn rank(&self, n: usize) -> Result<usize> {
        Ok(range_basis(&self.projection(n)?).ncols())
    }

    /// Verifies idempotency and rank constancy over sampled times.
    pub fn validate(&self, horizon: usize) -> Result<usize> {
        let times = log_indices(1, horizon.max(1), 24);
        let r0 = self.rank(times[0])?;
        for &n in &times {
            if self.rank(n)? != r0 {
                return Err(Error::RankCollapse { index: n });
            }
        }
        Ok(r0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar_seq(v: f64) -> Arc<OperatorSequence> {
        Arc::new(OperatorSequence::constant(
            "scalar",
            DMatrix::from_element(1, 1, v),
            v != 0.0,
        ))
    }

    #[test]
    fn transition_identity_and_products() {
        let fam = EvolutionFamily::new(scalar_seq(2.0));
        assert_eq!(fam.transition(7, 7).unwrap()[(0, 0)], 1.0);
        assert_eq!(fam.transition(5, 2).unwrap()[(0, 0)], 8.0);
    }

    #[test]
    fn transition_counterexample_windows_vanish() {
        let fam = EvolutionFamily::new(Arc::new(OperatorSequence::spiking_counterexample()));
        for n in 1..=10u32 {
            let m = 2usize.pow(n);
            assert_eq!(fam.transition(m, m / 2).unwrap()[(0, 0)], 0.0);
        }
    }

    #[test]
    fn transition_overflow_names_window() {
        let fam = EvolutionFamily::new(scalar_seq(1e300));
        match fam.transition(8, 1) {
            Err(Error::TransitionOverflow { .. }) => {}
            other => panic!("expected overflow, got {other:?}"),
        }
    }

    #[test]
    fn backward_transition_invertible() {
        let fam = EvolutionFamily::new(scalar_seq(2.0));
        assert_relative_eq!(
            fam.backward_transition(2, 5, None).unwrap()[(0, 0)],
            1.0 / 8.0
        );
        let id = fam.backward_transition(3, 3, None).unwrap();
        assert_eq!(id[(0, 0)], 1.0);
    }

    #[test]
    fn backward_transition_restricted() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 3.0]));
        let fam = EvolutionFamily::new(Arc::new(OperatorSequence::constant("diag", a, true)));
        let p = ProjectionFamily::coordinate(2, 1);
        let b = fam.backward_transition(1, 3, Some(&p)).unwrap();
        // kernel direction e2: inverse of 3^2
        assert_relative_eq!(b[(1, 1)], 1.0 / 9.0, max_relative = 1e-12);
        assert_relative_eq!(b[(0, 0)], 0.0);
        assert_relative_eq!(b[(0, 1)], 0.0);
    }

    #[test]
    fn backward_transition_requires_restriction_or_invertibility() {
        let fam = EvolutionFamily::new(Arc::new(OperatorSequence::spiking_counterexample()));
        match fam.backward_transition(1, 4, None) {
            Err(Error::MissingRestriction) => {}
            other => panic!("unexpected {other:?}"),
        }
        // rank-0 projection: restriction runs through zero windows -> singular
        let p = ProjectionFamily::coordinate(1, 0);
        match fam.backward_transition(1, 4, Some(&p)) {
            Err(Error::SingularRestriction { .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn invariance_residuals() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        let fam = EvolutionFamily::new(Arc::new(OperatorSequence::constant("diag", a, true)));
        let aligned = ProjectionFamily::coordinate(2, 1);
        assert!(fam.check_invariance(&aligned, 64).unwrap() <= 1e-12);

        // a rotated rank-1 projection is not invariant under diag(1/2, 2)
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let v = DVector::from_vec(vec![c, c]);
        let rotated = ProjectionFamily::constant(&v * v.transpose());
        assert!(fam.check_invariance(&rotated, 64).unwrap() > 0.1);
    }

    #[test]
    fn cocycle_law_on_cached_triples() {
        let rate = Arc::new(GrowthRate::polynomial());
        let seq = Arc::new(OperatorSequence::diagonal_powers(rate, vec![-1.0, 2.0]));
        let fam = EvolutionFamily::new(seq);
        for (k, j, m) in [(1, 4, 9), (2, 8, 32), (5, 6, 7), (3, 3, 11)] {
            let whole = fam.transition(m, k).unwrap();
            let split = &*fam.transition(m, j).unwrap() * &*fam.transition(j, k).unwrap();
            let denom = spectral_norm(&whole).max(1e-300);
            assert!(spectral_norm(&(&*whole - split)) / denom <= 1e-10);
        }
    }

    #[test]
    fn forward_backward_round_trip() {
        let rate = Arc::new(GrowthRate::exponential());
        let seq = Arc::new(OperatorSequence::diagonal_powers(rate, vec![-0.5, 1.0]));
        let fam = EvolutionFamily::new(seq);
        let fwd = fam.transition(9, 3).unwrap();
        let bwd = fam.backward_transition(3, 9, None).unwrap();
        let prod = &*fwd * bwd;
        let err = (&prod - DMatrix::identity(2, 2)).amax();
        assert!(err <= 1e-8, "round trip error {err}");
    }

    #[test]
    fn weighted_operator_norm_is_exact() {
        let s = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let norms = NormFamily::weighted(2, move |_| s.clone());
        let t = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 5.0]));
        // |S T S^-1| = |T| for commuting diagonals
        assert_relative_eq!(norms.operator_norm(1, &t, 1), 5.0, max_relative = 1e-12);
        // submultiplicativity spot check across shared time indices
        let u = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 4.0]));
        let tu = &t * &u;
        assert!(
            norms.operator_norm(2, &tu, 1)
                <= norms.operator_norm(2, &t, 1) * norms.operator_norm(1, &u, 1) + 1e-12
        );
    }

    #[test]
    fn norm_axioms_spot_check() {
        NormFamily::euclidean(3).validate(&[1, 5, 9], 16, 7).unwrap();
        let w = NormFamily::weighted(2, |n| {
            DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 + n as f64, 1.0]))
        });
        w.validate(&[1, 2, 3], 16, 7).unwrap();
    }

    #[test]
    fn projection_validation() {
        let p = ProjectionFamily::coordinate(3, 2);
        assert_eq!(p.validate(100).unwrap(), 2);
        let bad = ProjectionFamily::constant(DMatrix::from_element(2, 2, 0.7));
        assert!(bad.projection(1).is_err());
    }

    #[test]
    fn dyadic_split_is_inside_and_aligned() {
        for (k, m) in [(1usize, 100usize), (7, 9), (5, 64), (1000, 1003)] {
            let j = dyadic_split(k, m);
            assert!(k < j && j < m);
        }
        assert_eq!(dyadic_split(5, 9), 8);
    }
}
