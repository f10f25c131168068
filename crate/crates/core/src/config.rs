//! JSON experiment configuration and the built-in presets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::DEFAULT_REFINEMENT;
use crate::kernels::CovarianceKernel;
use crate::mean_models::{BasisFunction, MeanModel, ParamBox};
use crate::sampling::DEFAULT_JITTER_REL;
use crate::timegrid::{CellQuadrature, TimeGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Wiener,
    BrownianBridge,
    Ou { eta: f64, sigma: f64 },
    Fbm { hurst: f64 },
}

impl KernelSpec {
    pub fn build(&self) -> Result<CovarianceKernel> {
        match *self {
            KernelSpec::Wiener => Ok(CovarianceKernel::wiener()),
            KernelSpec::BrownianBridge => Ok(CovarianceKernel::brownian_bridge()),
            KernelSpec::Ou { eta, sigma } => CovarianceKernel::ornstein_uhlenbeck(eta, sigma),
            KernelSpec::Fbm { hurst } => CovarianceKernel::fractional_brownian(hurst),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    LinearDensity {
        basis: Vec<BasisFunction>,
        #[serde(rename = "box")]
        bounds: ParamBox,
    },
    Dirac {
        sites: Vec<f64>,
        #[serde(rename = "box")]
        bounds: ParamBox,
    },
}

impl ModelSpec {
    pub fn build(&self, domain: (f64, f64)) -> Result<MeanModel> {
        match self {
            ModelSpec::LinearDensity { basis, bounds } => {
                MeanModel::from_basis(basis.clone(), bounds.clone(), domain)
            }
            ModelSpec::Dirac { sites, bounds } => {
                MeanModel::dirac(sites.clone(), bounds.clone(), domain)
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::LinearDensity { bounds, .. } | ModelSpec::Dirac { bounds, .. } => bounds.dim(),
        }
    }
}

/// One `(n, epsilon)` design point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub n: usize,
    pub epsilon: f64,
}

fn default_order() -> usize {
    CellQuadrature::DEFAULT_ORDER
}

fn default_refinement() -> usize {
    DEFAULT_REFINEMENT
}

fn default_interval() -> [f64; 2] {
    [0.0, 1.0]
}

fn default_jitter() -> f64 {
    DEFAULT_JITTER_REL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kernel: KernelSpec,
    pub model: ModelSpec,
    pub theta0: Vec<f64>,
    pub cases: Vec<Case>,
    pub replications: usize,
    pub master_seed: u64,
    #[serde(default = "default_order")]
    pub quadrature_order: usize,
    #[serde(default = "default_refinement")]
    pub refinement: usize,
    #[serde(default = "default_interval")]
    pub interval: [f64; 2],
    #[serde(default = "default_jitter")]
    pub jitter_rel: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&s).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.interval[0], self.interval[1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        for c in &self.cases {
            if c.n == 0 {
                return Err(Error::Config("every case needs n >= 1".into()));
            }
            if !(c.epsilon >= 0.0) || !c.epsilon.is_finite() {
                return Err(Error::Config(format!(
                    "noise level must be nonnegative, got {}",
                    c.epsilon
                )));
            }
        }
        if self.quadrature_order == 0 || self.refinement == 0 {
            return Err(Error::Config("quadrature order and refinement must be positive".into()));
        }
        let model = self.model.build(self.domain()).map_err(|e| Error::Config(e.to_string()))?;
        self.kernel.build().map_err(|e| Error::Config(e.to_string()))?;
        if !model.bounds().contains_interior(&self.theta0) {
            return Err(Error::Config(format!(
                "theta0 {:?} must lie in the interior of the parameter box",
                self.theta0
            )));
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<CovarianceKernel> {
        self.kernel.build()
    }

    pub fn mean_model(&self) -> Result<MeanModel> {
        self.model.build(self.domain())
    }

    pub fn quadrature(&self) -> Result<CellQuadrature> {
        CellQuadrature::new(self.quadrature_order)
    }

    pub fn grid(&self, case: &Case) -> Result<TimeGrid> {
        TimeGrid::uniform(case.n, self.interval[0], self.interval[1])
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper42" => Ok(Self::paper42()),
            "paper42-p2" => Ok(Self::paper42_two_basis()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?} (available: paper42, paper42-p2)"
            ))),
        }
    }

    /// OU noise (eta = 1/2, sigma = 1) on [0, 1], density `theta 6 sin(-7.9 s)`,
    /// `theta0 = -4`, four `(n, eps)` cases with 1000 replications each.
    pub fn paper42() -> Self {
        Self {
            kernel: KernelSpec::Ou { eta: 0.5, sigma: 1.0 },
            model: ModelSpec::LinearDensity {
                basis: vec![BasisFunction::Sine {
                    amp: 6.0,
                    freq: -7.9,
                    phase: 0.0,
                }],
                bounds: ParamBox::cube(1, -10.0, 10.0).expect("valid box"),
            },
            theta0: vec![-4.0],
            cases: vec![
                Case { n: 100, epsilon: 0.1 },
                Case { n: 1000, epsilon: 0.1 },
                Case { n: 100, epsilon: 0.01 },
                Case { n: 1000, epsilon: 0.01 },
            ],
            replications: 1000,
            master_seed: 42,
            quadrature_order: CellQuadrature::DEFAULT_ORDER,
            refinement: DEFAULT_REFINEMENT,
            interval: [0.0, 1.0],
            jitter_rel: DEFAULT_JITTER_REL,
            output_dir: None,
        }
    }

    /// The same design with a second sine basis `6 sin(3 s)` whose true
    /// coefficient is zero.
    pub fn paper42_two_basis() -> Self {
        let mut cfg = Self::paper42();
        cfg.model = ModelSpec::LinearDensity {
            basis: vec![
                BasisFunction::Sine {
                    amp: 6.0,
                    freq: -7.9,
                    phase: 0.0,
                },
                BasisFunction::Sine {
                    amp: 6.0,
                    freq: 3.0,
                    phase: 0.0,
                },
            ],
            bounds: ParamBox::cube(2, -10.0, 10.0).expect("valid box"),
        };
        cfg.theta0 = vec![-4.0, 0.0];
        cfg.cases = vec![Case { n: 1000, epsilon: 0.1 }];
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_shapes() {
        let k: KernelSpec = serde_json::from_str(r#"{"kind": "ou", "eta": 0.5, "sigma": 1.0}"#).unwrap();
        assert_eq!(k, KernelSpec::Ou { eta: 0.5, sigma: 1.0 });
        let m: ModelSpec = serde_json::from_str(
            r#"{"kind":"linear_density","basis":[{"kind":"sine","amp":6.0,"freq":-7.9}], "box":{"lower":[-10],"upper":[10]}}"#,
        )
        .unwrap();
        assert_eq!(m.dim(), 1);
        assert!(serde_json::from_str::<KernelSpec>(r#"{"kind":"custom"}"#).is_err());
    }

    #[test]
    fn preset_round_trips_and_validates() {
        let cfg = ExperimentConfig::paper42();
        cfg.validate().unwrap();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&s).unwrap(), cfg);
        ExperimentConfig::paper42_two_basis().validate().unwrap();
        assert!(ExperimentConfig::preset("nope").is_err());
    }

    #[test]
    fn validation_failures() {
        let mut cfg = ExperimentConfig::paper42();
        cfg.replications = 0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = ExperimentConfig::paper42();
        cfg.theta0 = vec![10.0];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::paper42();
        cfg.cases.push(Case { n: 0, epsilon: 0.1 });
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::paper42();
        cfg.kernel = KernelSpec::Fbm { hurst: 1.5 };
        assert!(cfg.validate().is_err());
    }
}
