//! End-to-end workflow: data generation, fitting and evaluation of a
//! surrogate from a [`RunConfig`].

use std::collections::HashMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use nalgebra_sparse::CsrMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{BcConfig, RunConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureRegistry, MacroCellPartition, PcaBases, Standardizer};
use crate::fem::{
    interpolation_matrix, solver_by_name, BoundaryCondition, FemProblem, LinearSolver,
    StructuredGrid,
};
use crate::media::{sampler_by_name, GrfSpec, MicrostructureGenerator};
use crate::model::{DecoderParams, EncoderParams, LinkFunction, PosteriorMode, Surrogate};
use crate::prediction::{self, DataBaseline, EvaluationReport, PredictiveSummary, TestCase};
use crate::rng::{self, tag};
use crate::training::{self, TrainingOutcome, TrainingSample};

/// Attempts per sample before a failing FOM solve is fatal.
const MAX_ATTEMPTS: u64 = 8;

/// Which stream of the run seed a dataset is drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    /// Draws behind `var(u_f)`.
    Variance,
}

impl Split {
    pub fn seed(self, run_seed: u64) -> u64 {
        match self {
            Split::Train => rng::derive_seed(run_seed, &[tag::DATASET, 0]),
            Split::Test => rng::derive_seed(run_seed, &[tag::DATASET, 1]),
            Split::Variance => rng::derive_seed(run_seed, &[tag::VAR_UF]),
        }
    }
}

/// One full-order observation.
#[derive(Debug, Clone, PartialEq)]
pub struct FomSample {
    pub id: u64,
    pub lam_f: Vec<f64>,
    pub u_f: Vec<f64>,
    pub a: [f64; 4],
    pub f_cut: f64,
    pub volume_fraction_hi: f64,
}

fn fixed_key(a: &[f64; 4]) -> [u64; 4] {
    a.map(f64::to_bits)
}

/// Problems on one grid, shared between samples with equal boundary data.
struct ProblemCache {
    grid: StructuredGrid,
    solver: Arc<dyn LinearSolver>,
    tolerance: f64,
    map: std::sync::Mutex<HashMap<[u64; 4], Arc<FemProblem>>>,
}

impl ProblemCache {
    fn new(grid: StructuredGrid, solver: Arc<dyn LinearSolver>, tolerance: f64) -> Self {
        Self {
            grid,
            solver,
            tolerance,
            map: Default::default(),
        }
    }

    fn get(&self, a: &[f64; 4]) -> Result<Arc<FemProblem>> {
        if let Some(p) = self.map.lock().expect("cache lock").get(&fixed_key(a)) {
            return Ok(p.clone());
        }
        let p = Arc::new(
            FemProblem::new(
                self.grid.clone(),
                BoundaryCondition::corner(*a),
                self.solver.clone(),
            )?
            .with_tolerance(self.tolerance),
        );
        self.map
            .lock()
            .expect("cache lock")
            .insert(fixed_key(a), p.clone());
        Ok(p)
    }
}

fn solver(cfg: &RunConfig) -> Result<Arc<dyn LinearSolver>> {
    Ok(Arc::from(solver_by_name(
        &cfg.solver.name,
        cfg.solver.tolerance,
    )?))
}

/// Microstructures, boundary data and FOM solutions for one seed.
pub struct DataGenerator {
    micro: MicrostructureGenerator,
    bc: BcConfig,
    problems: ProblemCache,
    seed: u64,
}

impl DataGenerator {
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        let fine = cfg.grids.fine_grid()?;
        let sampler = sampler_by_name(
            &cfg.grf.sampler,
            &fine,
            GrfSpec::new(cfg.grf.length_scale)?,
            cfg.grf.n_rff,
            seed,
        )?;
        Ok(Self {
            micro: MicrostructureGenerator {
                sampler,
                phases: cfg.phases,
                cut: cfg.grf.cut,
                seed,
            },
            bc: cfg.bc.clone(),
            problems: ProblemCache::new(fine, solver(cfg)?, cfg.solver.tolerance),
            seed,
        })
    }

    fn boundary(&self, id: u64, attempt: u64) -> [f64; 4] {
        match &self.bc {
            BcConfig::Fixed { a } => *a,
            BcConfig::Random { sigma_a_sq } => {
                let mut r = rng::stream(self.seed, &[tag::BOUNDARY, id, attempt]);
                sigma_a_sq.map(|v| {
                    let e: f64 = StandardNormal.sample(&mut r);
                    v.sqrt() * e
                })
            }
        }
    }

    /// Sample `id`; a failed solve is retried with the next microstructure
    /// stream of the same id.
    pub fn sample(&self, id: u64) -> Result<FomSample> {
        let mut last = None;
        for attempt in 0..MAX_ATTEMPTS {
            let m = self.micro.sample(id + (attempt << 40));
            let a = self.boundary(id, attempt);
            let solved = self.problems.get(&a).and_then(|p| p.solve(&m.lam_f));
            match solved {
                Ok(u) => {
                    return Ok(FomSample {
                        id,
                        lam_f: m.lam_f,
                        u_f: u.u.as_slice().to_vec(),
                        a,
                        f_cut: m.f_cut,
                        volume_fraction_hi: m.volume_fraction_hi,
                    })
                }
                Err(e) if e.is_numerical() => {
                    log::warn!("sample {id}: FOM solve failed ({e}), regenerating");
                    last = Some(e);
                }
                Err(e) => return Err(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    /// Samples `first_id .. first_id + n`, generated in parallel.
    pub fn generate(&self, first_id: u64, n: usize) -> Result<Vec<FomSample>> {
        (0..n as u64)
            .into_par_iter()
            .map(|i| self.sample(first_id + i))
            .collect()
    }

    pub fn microstructure(&self, id: u64) -> Vec<f64> {
        self.micro.sample(id).lam_f
    }
}

/// Unbiased per-dof variance of `u_f` over `n` fresh draws.
pub fn estimate_var_uf(cfg: &RunConfig, n: usize, run_seed: u64) -> Result<Vec<f64>> {
    let g = DataGenerator::new(cfg, Split::Variance.seed(run_seed))?;
    let u: Vec<Vec<f64>> = g.generate(0, n)?.into_iter().map(|s| s.u_f).collect();
    prediction::per_dof_variance(&u)
}

/// Everything needed to predict from a fine-scale input.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub config: RunConfig,
    pub registry: FeatureRegistry,
    pub pca: PcaBases,
    pub standardizer: Standardizer,
    pub surrogate: Surrogate,
    pub baseline: DataBaseline,
    partition: MacroCellPartition,
    coarse: Arc<ProblemCacheHandle>,
}

/// Cheaply clonable handle so that [`TrainedModel`] stays `Clone`.
struct ProblemCacheHandle(ProblemCache);

impl std::fmt::Debug for ProblemCacheHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "ProblemCache({:?})", self.0.grid.nel_per_axis())
    }
}

/// Surviving feature with its coefficient(s) and prior variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveFeature {
    pub id: String,
    /// Coefficients on the standardized features, one per column.
    pub theta: Vec<f64>,
    /// Coefficients on the raw features (shared mode only).
    pub theta_raw: Option<f64>,
    pub gamma: f64,
}

impl TrainedModel {
    pub fn from_parts(
        config: RunConfig,
        registry: FeatureRegistry,
        pca: PcaBases,
        standardizer: Standardizer,
        enc: EncoderParams,
        b: Vec<f64>,
        s: Vec<f64>,
        baseline: DataBaseline,
    ) -> Result<Self> {
        config.validate()?;
        let fine = config.grids.fine_grid()?;
        let coarse = config.grids.coarse_grid()?;
        let w = interpolation_matrix(&coarse, &fine)?;
        if enc.n_features() != registry.len() || enc.n_cells() != coarse.n_elements() {
            return Err(Error::invalid(
                "encoder does not match the registry or coarse grid",
            ));
        }
        if b.len() != w.nrows() || s.len() != w.nrows() {
            return Err(Error::invalid("decoder does not match the fine grid"));
        }
        enc.validate()?;
        let link = config.features.link(config.phases);
        let mut dec = DecoderParams::new(w);
        dec.b = b;
        dec.s = s;
        dec.validate()?;
        let partition = MacroCellPartition::new(&coarse, &fine)?;
        let cache = ProblemCache::new(coarse, solver(&config)?, config.solver.tolerance);
        Ok(Self {
            config,
            registry,
            pca,
            standardizer,
            surrogate: Surrogate { enc, dec, link },
            baseline,
            partition,
            coarse: Arc::new(ProblemCacheHandle(cache)),
        })
    }

    pub fn link(&self) -> &LinkFunction {
        &self.surrogate.link
    }

    /// Standardized design matrix of one fine-scale input.
    pub fn design(&self, lam_f: &[f64]) -> Result<DMatrix<f64>> {
        let mut phi = self.registry.evaluate(
            &self.partition,
            lam_f,
            &self.pca,
            self.config.phases,
            self.link(),
        )?;
        self.standardizer.apply(&mut phi);
        Ok(phi)
    }

    pub fn coarse_problem(&self, a: &[f64; 4]) -> Result<Arc<FemProblem>> {
        self.coarse.0.get(a)
    }

    pub fn predict(
        &self,
        lam_f: &[f64],
        a: &[f64; 4],
        id: u64,
        n_mc: usize,
        mode: PosteriorMode,
        seed: u64,
    ) -> Result<PredictiveSummary> {
        let phi = self.design(lam_f)?;
        let coarse = self.coarse_problem(a)?;
        prediction::predict(&self.surrogate, &phi, &coarse, n_mc, mode, seed, id)
    }

    pub fn active_features(&self) -> Vec<ActiveFeature> {
        let enc = &self.surrogate.enc;
        let raw = (enc.theta.ncols() == 1).then(|| {
            let col: Vec<f64> = enc.theta.column(0).iter().copied().collect();
            let c = self.registry.constant_mask().iter().position(|c| *c);
            self.standardizer.to_raw_coefficients(&col, c)
        });
        let ids = self.registry.ids();
        enc.active_indices()
            .into_iter()
            .map(|j| ActiveFeature {
                id: ids[j].to_string(),
                theta: enc.theta.row(j).iter().copied().collect(),
                theta_raw: raw.as_ref().map(|r| r[j]),
                gamma: enc.gamma[j],
            })
            .collect()
    }

    /// `e` and `L` over `test`, normalized by `var_uf`.
    pub fn evaluate(
        &self,
        test: &[FomSample],
        var_uf: &[f64],
        var_uf_samples: usize,
        n_mc: usize,
        mode: PosteriorMode,
        seed: u64,
    ) -> Result<EvaluationReport> {
        let prepared: Vec<(DMatrix<f64>, Arc<FemProblem>)> = test
            .par_iter()
            .map(|s| Ok((self.design(&s.lam_f)?, self.coarse_problem(&s.a)?)))
            .collect::<Result<_>>()?;
        let cases: Vec<TestCase> = test
            .iter()
            .zip(&prepared)
            .map(|(s, (phi, p))| TestCase {
                id: s.id,
                phi: phi.clone(),
                coarse: p.as_ref(),
                u_f: &s.u_f,
            })
            .collect();
        prediction::evaluate(
            &self.surrogate,
            &cases,
            var_uf,
            var_uf_samples,
            &self.baseline,
            n_mc,
            mode,
            seed,
        )
    }
}

/// Fits PCA bases on unlabelled microstructures when the registry needs them.
pub fn fit_pca(
    cfg: &RunConfig,
    registry: &FeatureRegistry,
    partition: &MacroCellPartition,
    run_seed: u64,
) -> Result<PcaBases> {
    use crate::features::Scope;
    if registry.pca_components(Scope::Cell) == 0 && registry.pca_components(Scope::Global) == 0 {
        return Ok(PcaBases::default());
    }
    let g = DataGenerator::new(cfg, rng::derive_seed(run_seed, &[tag::PCA]))?;
    let fields: Vec<Vec<f64>> = (0..cfg.features.pca_fit_samples as u64)
        .into_par_iter()
        .map(|i| g.microstructure(i))
        .collect();
    PcaBases::fit(registry, partition, &fields)
}

/// Unstandardized design matrices of `samples` under the registry of `cfg`.
pub fn raw_designs(
    cfg: &RunConfig,
    samples: &[FomSample],
) -> Result<(FeatureRegistry, Vec<DMatrix<f64>>)> {
    cfg.validate()?;
    let fine = cfg.grids.fine_grid()?;
    let partition = MacroCellPartition::new(&cfg.grids.coarse_grid()?, &fine)?;
    let registry = cfg.features.registry()?;
    let pca = fit_pca(cfg, &registry, &partition, cfg.seed)?;
    let fields: Vec<Vec<f64>> = samples.iter().map(|s| s.lam_f.clone()).collect();
    let phis = registry.evaluate_many(
        &partition,
        &fields,
        &pca,
        cfg.phases,
        &cfg.features.link(cfg.phases),
    )?;
    Ok((registry, phis))
}

/// Trains a surrogate on `train` with the configuration and seed of `cfg`.
pub fn fit(
    cfg: &RunConfig,
    train: &[FomSample],
    on_epoch: impl FnMut(&training::TraceRecord),
) -> Result<(TrainedModel, TrainingOutcome)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let fine = cfg.grids.fine_grid()?;
    let coarse = cfg.grids.coarse_grid()?;
    let partition = MacroCellPartition::new(&coarse, &fine)?;
    for s in train {
        if s.lam_f.len() != fine.n_elements() || s.u_f.len() != fine.n_nodes() {
            return Err(Error::config(format!(
                "sample {} does not live on the configured fine grid {:?}",
                s.id, cfg.grids.fine
            )));
        }
    }
    let registry = cfg.features.registry()?;
    let link = cfg.features.link(cfg.phases);
    let pca = fit_pca(cfg, &registry, &partition, cfg.seed)?;
    let fields: Vec<Vec<f64>> = train.iter().map(|s| s.lam_f.clone()).collect();
    let mut phis = registry.evaluate_many(&partition, &fields, &pca, cfg.phases, &link)?;
    let constant = registry.constant_mask();
    let standardizer = Standardizer::fit(cfg.features.standardize, &phis, &constant)?;
    phis.iter_mut().for_each(|p| standardizer.apply(p));

    let cache = ProblemCache::new(coarse.clone(), solver(cfg)?, cfg.solver.tolerance);
    let samples: Vec<TrainingSample> = train
        .iter()
        .zip(phis)
        .map(|(s, phi)| {
            Ok(TrainingSample {
                id: s.id,
                phi,
                u_f: s.u_f.clone(),
                coarse: cache.get(&s.a)?,
            })
        })
        .collect::<Result<_>>()?;
    let w: CsrMatrix<f64> = interpolation_matrix(&coarse, &fine)?;
    let init = training::initial_model(
        &samples,
        constant.iter().position(|c| *c),
        link.inverse_clamped(cfg.phases.midpoint()),
        link,
        w,
        &cfg.training,
    )?;
    let outcome = training::train(
        &samples,
        init,
        &cfg.training,
        rng::derive_seed(cfg.seed, &[tag::TRAIN]),
        on_epoch,
    )?;
    let u: Vec<Vec<f64>> = train.iter().map(|s| s.u_f.clone()).collect();
    let baseline = DataBaseline::fit(&u, cfg.training.variance_floor)?;
    let m = &outcome.model;
    let model = TrainedModel::from_parts(
        cfg.clone(),
        registry,
        pca,
        standardizer,
        m.enc.clone(),
        m.dec.b.clone(),
        m.dec.s.clone(),
        baseline,
    )?;
    Ok((model, outcome))
}

/// Seed of the prediction streams of a run.
pub fn prediction_seed(run_seed: u64) -> u64 {
    rng::derive_seed(run_seed, &[tag::PREDICT])
}
