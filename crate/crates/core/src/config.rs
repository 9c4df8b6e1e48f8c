//! Run configuration: one JSON document, unknown keys rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{FeatureRegistry, FeatureSpec, StandardizeMode};
use crate::fem::solver::SOLVER_NAMES;
use crate::fem::{StructuredGrid, DEFAULT_TOLERANCE};
use crate::media::{CutPolicy, GrfSpec, PhaseSpec, SAMPLER_NAMES};
use crate::model::{LinkFunction, PosteriorMode};
use crate::training::TrainingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridsConfig {
    /// Elements per axis: `[nx]` or `[nx, ny]`.
    pub fine: Vec<usize>,
    pub coarse: Vec<usize>,
}

impl GridsConfig {
    pub fn fine_grid(&self) -> Result<StructuredGrid> {
        StructuredGrid::from_nel(&self.fine).map_err(|e| Error::config(format!("grids.fine: {e}")))
    }

    pub fn coarse_grid(&self) -> Result<StructuredGrid> {
        StructuredGrid::from_nel(&self.coarse)
            .map_err(|e| Error::config(format!("grids.coarse: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrfConfig {
    pub length_scale: f64,
    /// `cholesky`, `dense-cholesky` or `spectral`.
    pub sampler: String,
    /// Random Fourier features of the spectral sampler.
    pub n_rff: usize,
    pub cut: CutPolicy,
}

impl Default for GrfConfig {
    fn default() -> Self {
        Self {
            length_scale: 0.01,
            sampler: "cholesky".into(),
            n_rff: 5000,
            cut: CutPolicy::Random,
        }
    }
}

/// Boundary data `û = a0 + a1 x + a2 y + a3 xy`: fixed, or drawn per
/// sample from `a ~ N(0, diag σ_a²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BcConfig {
    Fixed { a: [f64; 4] },
    Random { sigma_a_sq: [f64; 4] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub name: String,
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            name: "auto".into(),
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistryChoice {
    Named(String),
    Custom(Vec<FeatureSpec>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkChoice {
    /// Sigmoid onto the phase range widened by `link_margin`.
    Sigmoid,
    Log,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeaturesConfig {
    pub registry: RegistryChoice,
    pub standardize: StandardizeMode,
    /// Unlabelled microstructures used to fit PCA bases.
    pub pca_fit_samples: usize,
    pub link: LinkChoice,
    pub link_margin: f64,
}

impl Default for FeaturesConfig {
    fn default() -> Self {
        Self {
            registry: RegistryChoice::Named("default-2d".into()),
            standardize: StandardizeMode::Affine,
            pca_fit_samples: 1024,
            link: LinkChoice::Sigmoid,
            link_margin: 0.01,
        }
    }
}

impl FeaturesConfig {
    pub fn registry(&self) -> Result<FeatureRegistry> {
        match &self.registry {
            RegistryChoice::Named(n) => FeatureRegistry::by_name(n),
            RegistryChoice::Custom(specs) => FeatureRegistry::new(specs.clone()),
        }
    }

    pub fn link(&self, phases: PhaseSpec) -> LinkFunction {
        match self.link {
            LinkChoice::Sigmoid => LinkFunction::sigmoid_with_margin(phases, self.link_margin),
            LinkChoice::Log => LinkFunction::Log,
            LinkChoice::Identity => LinkFunction::Identity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            n_train: 16,
            n_test: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictionConfig {
    pub n_mc: usize,
    pub mode: PosteriorMode,
    /// FOM draws behind `var(u_f)`.
    pub var_uf_samples: usize,
}

impl Default for PredictionConfig {
    fn default() -> Self {
        Self {
            n_mc: 100,
            mode: PosteriorMode::Laplace,
            var_uf_samples: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grids: GridsConfig,
    pub phases: PhaseSpec,
    #[serde(default)]
    pub grf: GrfConfig,
    pub bc: BcConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub features: FeaturesConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub prediction: PredictionConfig,
    #[serde(default)]
    pub seed: u64,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self =
            serde_json::from_str(text).map_err(|e| Error::config(format!("config: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    /// Checks every referenced value; all failures are configuration errors.
    pub fn validate(&self) -> Result<()> {
        let fine = self.grids.fine_grid()?;
        let coarse = self.grids.coarse_grid()?;
        if !coarse.is_refined_by(&fine) {
            return Err(Error::config(format!(
                "coarse grid {:?} does not divide fine grid {:?}",
                self.grids.coarse, self.grids.fine
            )));
        }
        self.phases
            .validate()
            .map_err(|e| Error::config(format!("phases: {e}")))?;
        GrfSpec::new(self.grf.length_scale).map_err(|e| Error::config(format!("grf: {e}")))?;
        if !SAMPLER_NAMES.contains(&self.grf.sampler.as_str()) {
            return Err(Error::config(format!(
                "grf.sampler '{}' is not one of {SAMPLER_NAMES:?}",
                self.grf.sampler
            )));
        }
        if self.grf.n_rff == 0 {
            return Err(Error::config("grf.n_rff must be at least 1"));
        }
        if let BcConfig::Random { sigma_a_sq } = &self.bc {
            if sigma_a_sq.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::config(
                    "bc.sigma_a_sq must be finite and non-negative",
                ));
            }
        }
        if let BcConfig::Fixed { a } = &self.bc {
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("bc.a must be finite"));
            }
        }
        if !SOLVER_NAMES.contains(&self.solver.name.as_str()) || !(self.solver.tolerance > 0.0) {
            return Err(Error::config(format!(
                "solver needs a name in {SOLVER_NAMES:?} and a positive tolerance"
            )));
        }
        self.features.registry()?;
        if !(self.features.link_margin >= 0.0) {
            return Err(Error::config("features.link_margin must be non-negative"));
        }
        self.features.link(self.phases).validate()?;
        self.training.validate()?;
        if self.prediction.n_mc == 0 {
            return Err(Error::config("prediction.n_mc must be at least 1"));
        }
        if self.prediction.var_uf_samples < 2 {
            return Err(Error::config(
                "prediction.var_uf_samples must be at least 2",
            ));
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
