//! Scenario files: JSON descriptions of a system, growth rates, norms,
//! projections and perturbations, with exact-value fields (theta, exponents,
//! scales) accepted as decimal strings or numbers.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::growth::GrowthRate;
use crate::linearize::NonlinearPerturbation;
use crate::system::{EvolutionFamily, NormFamily, OperatorSequence, ProjectionFamily};

/// f64 that deserializes from either a JSON number or a decimal string.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Exact(pub f64);

impl<'de> Deserialize<'de> for Exact {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(v) => Ok(Exact(v)),
            Raw::Text(s) => s
                .trim()
                .parse::<f64>()
                .map(Exact)
                .map_err(|e| D::Error::custom(format!("bad decimal string `{s}`: {e}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum RateSpec {
    Polynomial { theta: Exact },
    Exponential { theta: Exact },
    Geometric { h: Exact, theta: Exact },
    Table { values: Vec<Exact>, theta: Exact },
}

impl RateSpec {
    pub fn build(&self) -> Result<Arc<GrowthRate>> {
        let rate = match self {
            RateSpec::Polynomial { theta } => {
                GrowthRate::from_fn("polynomial", theta.0, |n| (n + 1) as f64)?
            }
            RateSpec::Exponential { theta } => {
                GrowthRate::from_fn("exponential", theta.0, |n| (n as f64).exp())?
            }
            RateSpec::Geometric { h, theta } => {
                let base = h.0;
                if !(base > 1.0) {
                    return Err(Error::Scenario {
                        path: "rate.h".into(),
                        reason: format!("geometric base must exceed 1, got {base}"),
                    });
                }
                GrowthRate::from_fn(&format!("geometric({base})"), theta.0, move |n| {
                    base.powi(n as i32)
                })?
            }
            RateSpec::Table { values, theta } => {
                GrowthRate::from_table(values.iter().map(|v| v.0).collect(), theta.0)?
            }
        };
        Ok(Arc::new(rate))
    }

    /// Parses CLI shorthand: `polynomial`, `exponential`, `geometric:H`.
    pub fn parse_name(name: &str) -> Result<RateSpec> {
        let lower = name.trim().to_ascii_lowercase();
        if lower == "polynomial" {
            return Ok(RateSpec::Polynomial { theta: Exact(2.0) });
        }
        if lower == "exponential" {
            return Ok(RateSpec::Exponential {
                theta: Exact(std::f64::consts::E),
            });
        }
        if let Some(rest) = lower.strip_prefix("geometric:") {
            let h: f64 = rest.parse().map_err(|_| Error::Scenario {
                path: "rate".into(),
                reason: format!("bad geometric base `{rest}`"),
            })?;
            return Ok(RateSpec::Geometric {
                h: Exact(h),
                theta: Exact(h),
            });
        }
        Err(Error::Scenario {
            path: "rate".into(),
            reason: format!(
                "unknown rate `{name}` (expected polynomial, exponential or geometric:H)"
            ),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SystemSpec {
    /// A_n = diag((mu_{n+1}/mu_n)^{c_i})
    Diagonal { exponents: Vec<Exact> },
    /// explicit matrices A_1..A_N, row-major
    Table {
        matrices: Vec<Vec<Vec<Exact>>>,
        #[serde(default)]
        invertible: bool,
    },
    /// scalar exponent cycling over dyadic index blocks, embedded as c * Id
    Switched { exponents: Vec<Exact> },
    /// the spiking scalar sequence whose dyadic rescale vanishes
    PaperExample,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NormSpec {
    Euclidean,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProjectionSpec {
    /// diag(1..1, 0..0) with the given rank
    Coordinate { rank: usize },
    /// constant matrix, row-major
    Matrix { entries: Vec<Vec<Exact>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PerturbationSpec {
    Zero,
    /// scale * (mu'_n/mu_n) * (sin x_1, cos x_2 - 1, ...)
    SinCos { scale: Exact },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_residual")]
    pub residual: f64,
    #[serde(default = "default_nu_min")]
    pub nu_min: f64,
    #[serde(default = "default_invariance")]
    pub invariance: f64,
}

fn default_residual() -> f64 {
    0.10
}
fn default_nu_min() -> f64 {
    1e-3
}
fn default_invariance() -> f64 {
    1e-8
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            residual: default_residual(),
            nu_min: default_nu_min(),
            invariance: default_invariance(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub dim: usize,
    pub system: SystemSpec,
    pub rate: RateSpec,
    #[serde(default)]
    pub eta: Option<RateSpec>,
    #[serde(default)]
    pub norms: Option<NormSpec>,
    #[serde(default)]
    pub projection: Option<ProjectionSpec>,
    #[serde(default)]
    pub perturbation: Option<PerturbationSpec>,
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub tolerances: Option<Tolerances>,
}

/// A scenario resolved into live objects.
pub struct BuiltScenario {
    pub name: String,
    pub dim: usize,
    pub system: Arc<OperatorSequence>,
    pub family: Arc<EvolutionFamily>,
    pub rate: Arc<GrowthRate>,
    pub eta: Option<Arc<GrowthRate>>,
    pub norms: NormFamily,
    pub projection: Option<ProjectionFamily>,
    pub perturbation: Option<NonlinearPerturbation>,
    pub horizon: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Scenario> {
        let scenario: Scenario = serde_json::from_str(text).map_err(|e| Error::Scenario {
            path: format!("line {}, column {}", e.line(), e.column()),
            reason: e.to_string(),
        })?;
        Ok(scenario)
    }

    pub fn from_file(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_json(&text)
    }

    pub fn build(&self, name: &str) -> Result<BuiltScenario> {
        if self.dim < 1 {
            return Err(Error::Scenario {
                path: "dim".into(),
                reason: "dimension must be at least 1".into(),
            });
        }
        if self.horizon < 2 {
            return Err(Error::Scenario {
                path: "horizon".into(),
                reason: "horizon must be at least 2".into(),
            });
        }
        let rate = self.rate.build()?;
        let eta = self.eta.as_ref().map(|e| e.build()).transpose()?;

        let system: Arc<OperatorSequence> = match &self.system {
            SystemSpec::Diagonal { exponents } => {
                if exponents.len() != self.dim {
                    return Err(Error::Scenario {
                        path: "system.exponents".into(),
                        reason: format!(
                            "expected {} exponents, got {}",
                            self.dim,
                            exponents.len()
                        ),
                    });
                }
                Arc::new(OperatorSequence::diagonal_powers(
                    rate.clone(),
                    exponents.iter().map(|e| e.0).collect(),
                ))
            }
            SystemSpec::Table {
                matrices,
                invertible,
            } => {
                let mut mats = Vec::with_capacity(matrices.len());
                for (i, rows) in matrices.iter().enumerate() {
                    if rows.len() != self.dim || rows.iter().any(|r| r.len() != self.dim) {
                        return Err(Error::Scenario {
                            path: format!("system.matrices[{i}]"),
                            reason: format!("expected a {0}x{0} matrix", self.dim),
                        });
                    }
                    mats.push(DMatrix::from_fn(self.dim, self.dim, |r, c| rows[r][c].0));
                }
                Arc::new(OperatorSequence::from_table("table", mats, *invertible)?)
            }
            SystemSpec::Switched { exponents } => {
                if exponents.is_empty() {
                    return Err(Error::Scenario {
                        path: "system.exponents".into(),
                        reason: "switched systems need at least one exponent".into(),
                    });
                }
                Arc::new(OperatorSequence::switched_dyadic(
                    rate.clone(),
                    exponents.iter().map(|e| e.0).collect(),
                    self.dim,
                ))
            }
            SystemSpec::PaperExample => {
                if self.dim != 1 {
                    return Err(Error::Scenario {
                        path: "dim".into(),
                        reason: "the paper-example system is scalar (dim 1)".into(),
                    });
                }
                Arc::new(OperatorSequence::spiking_counterexample())
            }
        };

        let norms = match self.norms.as_ref().unwrap_or(&NormSpec::Euclidean) {
            NormSpec::Euclidean => NormFamily::euclidean(self.dim),
        };

        let projection = match &self.projection {
            None => None,
            Some(ProjectionSpec::Coordinate { rank }) => {
                if *rank > self.dim {
                    return Err(Error::Scenario {
                        path: "projection.rank".into(),
                        reason: format!("rank {rank} exceeds dimension {}", self.dim),
                    });
                }
                Some(ProjectionFamily::coordinate(self.dim, *rank))
            }
            Some(ProjectionSpec::Matrix { entries }) => {
                if entries.len() != self.dim || entries.iter().any(|r| r.len() != self.dim) {
                    return Err(Error::Scenario {
                        path: "projection.entries".into(),
                        reason: format!("expected a {0}x{0} matrix", self.dim),
                    });
                }
                let p = DMatrix::from_fn(self.dim, self.dim, |r, c| entries[r][c].0);
                let family = ProjectionFamily::constant(p);
                family.projection(1).map_err(|e| Error::Scenario {
                    path: "projection.entries".into(),
                    reason: e.to_string(),
                })?;
                Some(family)
            }
        };

        let perturbation = match &self.perturbation {
            None => None,
            Some(PerturbationSpec::Zero) => {
                Some(NonlinearPerturbation::zero(self.dim, rate.clone()))
            }
            Some(PerturbationSpec::SinCos { scale }) => Some(NonlinearPerturbation::sin_cos(
                self.dim,
                rate.clone(),
                scale.0,
            )),
        };

        Ok(BuiltScenario {
            name: name.to_string(),
            dim: self.dim,
            family: Arc::new(EvolutionFamily::new(system.clone())),
            system,
            rate,
            eta,
            norms,
            projection,
            perturbation,
            horizon: self.horizon,
            seed: self.seed,
            tolerances: self.tolerances.clone().unwrap_or_default(),
        })
    }
}

/// Bundled scenarios shipped with the crate, addressable by name.
pub fn builtin(name: &str) -> Result<Scenario> {
    let text = match name {
        "diag-poly" => include_str!("../scenarios/diag_poly.json"),
        "diag-exp" => include_str!("../scenarios/diag_exp.json"),
        "switched-exp" => include_str!("../scenarios/switched_exp.json"),
        "identity-poly" => include_str!("../scenarios/identity_poly.json"),
        "paper-example" => include_str!("../scenarios/paper_example.json"),
        "conjugacy-sincos" => include_str!("../scenarios/conjugacy_sincos.json"),
        other => {
            return Err(Error::Scenario {
                path: "scenario".into(),
                reason: format!("unknown builtin scenario `{other}`"),
            })
        }
    };
    Scenario::from_json(text)
}

pub fn builtin_names() -> &'static [&'static str] {
    &[
        "diag-poly",
        "diag-exp",
        "switched-exp",
        "identity-poly",
        "paper-example",
        "conjugacy-sincos",
    ]
}
