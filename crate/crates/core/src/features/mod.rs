//! Feature functions of microstructure images and the design matrix `Φ`.
//!
//! A [`FeatureSpec`] names one feature: a family with its parameters, a
//! scope (macro-cell or whole image) and an optional output transform. The
//! family resolves to a [`Feature`] trait object through
//! [`FeatureFamily::feature`], so the registry is plain data that can be
//! stored next to a trained model.

pub mod effective;
pub mod image;
pub mod morphology;
pub mod pca;

use std::collections::HashSet;
use std::fmt::Debug;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::media::PhaseSpec;
use crate::model::LinkFunction;

pub use image::{Axis, CellImage, MacroCellPartition, Mask, Phase};
pub use morphology::{Metric, Statistic};
pub use pca::PcaBasis;

/// Everything a feature may read besides the image itself.
#[derive(Debug, Clone, Copy)]
pub struct FeatureContext<'a> {
    pub phases: PhaseSpec,
    pub local_pca: Option<&'a PcaBasis>,
    pub global_pca: Option<&'a PcaBasis>,
    pub scope: Scope,
}

pub trait Feature: Send + Sync + Debug {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64>;

    fn validate(&self) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Cell,
    Global,
}

/// Map applied to the raw feature value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    #[default]
    None,
    /// Inverse of the model's link, clamped into its range; puts
    /// conductivity-valued features on the latent scale.
    LinkInverse,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub id: String,
    pub scope: Scope,
    #[serde(default)]
    pub transform: Transform,
    pub family: FeatureFamily,
}

impl FeatureSpec {
    pub fn cell(id: impl Into<String>, family: FeatureFamily) -> Self {
        Self {
            id: id.into(),
            scope: Scope::Cell,
            transform: Transform::None,
            family,
        }
    }

    pub fn global(id: impl Into<String>, family: FeatureFamily) -> Self {
        Self {
            scope: Scope::Global,
            ..Self::cell(id, family)
        }
    }

    pub fn with_transform(mut self, t: Transform) -> Self {
        self.transform = t;
        self
    }

    pub fn is_constant(&self) -> bool {
        matches!(self.family, FeatureFamily::Constant(_))
    }
}

macro_rules! families {
    ($($variant:ident),* $(,)?) => {
        /// Feature family with its parameters.
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(tag = "kind", rename_all = "snake_case")]
        pub enum FeatureFamily {
            $($variant($variant),)*
        }

        impl FeatureFamily {
            pub fn feature(&self) -> &dyn Feature {
                match self {
                    $(FeatureFamily::$variant(f) => f,)*
                }
            }
        }
    };
}

families!(
    Constant,
    GeneralizedMean,
    Sca,
    MaxwellGarnett,
    Dem,
    LinealPath,
    LinealPathFit,
    BlobCount,
    PixelCross,
    MaxExtent,
    ConvexArea,
    ConnectedPath,
    SpecificSurface,
    GaussFilter,
    StdDev,
    LogStd,
    IsingEnergy,
    TwoPoint,
    DistanceTransform,
    Pca,
);

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Constant {}

impl Feature for Constant {
    fn eval(&self, _: &CellImage, _: &FeatureContext) -> Result<f64> {
        Ok(1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneralizedMean {
    pub q: f64,
}

impl Feature for GeneralizedMean {
    fn eval(&self, img: &CellImage, _: &FeatureContext) -> Result<f64> {
        Ok(effective::generalized_mean(&img.values, self.q))
    }

    fn validate(&self) -> Result<()> {
        finite("q", self.q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sca {}

impl Feature for Sca {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64> {
        let p = ctx.phases;
        Ok(effective::sca(
            p.lam_lo,
            p.lam_hi,
            img.fraction(Phase::Lo, p),
        ))
    }
}

/// Maxwell-Garnett estimate with the named phase as inclusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxwellGarnett {
    pub inclusion: Phase,
}

impl Feature for MaxwellGarnett {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64> {
        let mat = self.inclusion.other().value(ctx.phases);
        Ok(effective::maxwell_garnett(
            mat,
            img.fraction(self.inclusion, ctx.phases),
        ))
    }
}

/// Differential effective-medium estimate with the named phase as inclusion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dem {
    pub inclusion: Phase,
}

impl Feature for Dem {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64> {
        let inc = self.inclusion.value(ctx.phases);
        let mat = self.inclusion.other().value(ctx.phases);
        effective::dem(mat, inc, img.fraction(self.inclusion, ctx.phases))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinealPath {
    pub d: usize,
    pub phase: Phase,
}

impl Feature for LinealPath {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64> {
        Ok(morphology::lineal_path(
            &img.mask(self.phase, ctx.phases),
            self.d,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitParam {
    A,
    B,
}

/// One parameter of the `a e^{-b d}` fit to the lineal path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinealPathFit {
    pub distances: Vec<usize>,
    pub phase: Phase,
    pub param: FitParam,
}

impl Feature for LinealPathFit {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64> {
        let (a, b) =
            morphology::lineal_path_fit(&img.mask(self.phase, ctx.phases), &self.distances)?;
        Ok(match self.param {
            FitParam::A => a,
            FitParam::B => b,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.distances.is_empty() {
            return Err(Error::config("lineal path fit needs at least one distance"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlobCount {
    pub phase: Phase,
}

impl Feature for BlobCount {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64> {
        Ok(morphology::blobs(&img.mask(self.phase, ctx.phases)).len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PixelCross {
    pub phase: Phase,
    pub axis: Axis,
}

impl Feature for PixelCross {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64> {
        Ok(morphology::pixel_cross(
            &img.mask(self.phase, ctx.phases),
            self.axis,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaxExtent {
    pub phase: Phase,
    pub axis: Axis,
}

impl Feature for MaxExtent {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64> {
        Ok(morphology::max_extent(
            &img.mask(self.phase, ctx.phases),
            self.axis,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexArea {
    pub phase: Phase,
    pub stat: Statistic,
}

impl Feature for ConvexArea {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64> {
        Ok(morphology::convex_area(
            &img.mask(self.phase, ctx.phases),
            self.stat,
        ))
    }
}

/// Inverse length of the shortest phase path across the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConnectedPath {
    pub phase: Phase,
    pub axis: Axis,
}

impl Feature for ConnectedPath {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64> {
        Ok(morphology::connected_path_invdist(
            &img.mask(self.phase, ctx.phases),
            self.axis,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecificSurface {
    pub phase: Phase,
}

impl Feature for SpecificSurface {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64> {
        Ok(morphology::specific_surface(
            &img.mask(self.phase, ctx.phases),
        ))
    }
}

/// Weighted mean under a normalized isotropic Gaussian at the image center.
///
/// The variance is `a · L` in squared pixel units, `L` being the image side
/// length in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussFilter {
    pub a: f64,
}

impl Feature for GaussFilter {
    fn eval(&self, img: &CellImage, _: &FeatureContext) -> Result<f64> {
        let side = img.nx.max(img.ny) as f64;
        let var = self.a * side;
        let (cx, cy) = (img.nx as f64 / 2.0, img.ny as f64 / 2.0);
        let mut num = 0.0;
        let mut den = 0.0;
        for iy in 0..img.ny {
            for ix in 0..img.nx {
                let dx = ix as f64 + 0.5 - cx;
                let dy = iy as f64 + 0.5 - cy;
                let w = (-(dx * dx + dy * dy) / (2.0 * var)).exp();
                num += w * img.at(ix, iy);
                den += w;
            }
        }
        Ok(num / den)
    }

    fn validate(&self) -> Result<()> {
        positive("a", self.a)
    }
}

fn population_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StdDev {}

impl Feature for StdDev {
    fn eval(&self, img: &CellImage, _: &FeatureContext) -> Result<f64> {
        Ok(population_std(&img.values))
    }
}

pub const DEFAULT_LOG_CUTOFF: f64 = 1e-5;

/// `log(std + cutoff)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogStd {
    pub cutoff: f64,
}

impl Feature for LogStd {
    fn eval(&self, img: &CellImage, _: &FeatureContext) -> Result<f64> {
        Ok((population_std(&img.values) + self.cutoff).ln())
    }

    fn validate(&self) -> Result<()> {
        positive("cutoff", self.cutoff)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IsingEnergy {}

impl Feature for IsingEnergy {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64> {
        Ok(morphology::ising_energy(&img.mask(Phase::Hi, ctx.phases)))
    }
}

/// Two-point probability `S₂(d)` of the phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoPoint {
    pub d: usize,
    pub phase: Phase,
}

impl Feature for TwoPoint {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64> {
        morphology::two_point(&img.mask(self.phase, ctx.phases), self.d)
    }

    fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("two-point offset must be at least 1"));
        }
        Ok(())
    }
}

/// Statistic of the distance to the nearest phase pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceTransform {
    pub phase: Phase,
    pub metric: Metric,
    pub stat: Statistic,
}

impl Feature for DistanceTransform {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64> {
        let d = morphology::distance_transform(&img.mask(self.phase, ctx.phases), self.metric);
        Ok(self.stat.apply(&d))
    }
}

/// Projection on a principal component (local basis for cell scope,
/// global basis for global scope). `component` counts from 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pca {
    pub component: usize,
}

impl Feature for Pca {
    fn eval(&self, img: &CellImage, ctx: &FeatureContext) -> Result<f64> {
        let basis = match ctx.scope {
            Scope::Cell => ctx.local_pca,
            Scope::Global => ctx.global_pca,
        };
        basis
            .ok_or_else(|| Error::config("PCA feature used without a fitted basis"))?
            .project(&img.values, self.component)
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::config(format!(
            "feature parameter {name} must be finite, got {v}"
        )));
    }
    Ok(())
}

fn positive(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::config(format!(
            "feature parameter {name} must be positive, got {v}"
        )));
    }
    Ok(())
}

/// Ordered, validated list of feature specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureRegistry {
    specs: Vec<FeatureSpec>,
}

pub const REGISTRY_NAMES: &[&str] = &["default-2d", "default-1d"];

impl FeatureRegistry {
    pub fn new(specs: Vec<FeatureSpec>) -> Result<Self> {
        let r = Self { specs };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.specs.is_empty() {
            return Err(Error::config("feature registry is empty"));
        }
        let mut seen = HashSet::new();
        for s in &self.specs {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::config(format!("duplicate feature id '{}'", s.id)));
            }
            s.family.feature().validate()?;
        }
        Ok(())
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "default-2d" => Ok(Self::default_2d()),
            "default-1d" => Ok(Self::default_1d()),
            other => Err(Error::config(format!(
                "unknown feature registry '{other}', expected one of {REGISTRY_NAMES:?}"
            ))),
        }
    }

    pub fn specs(&self) -> &[FeatureSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.specs.iter().map(|s| s.id.as_str()).collect()
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.id == id)
    }

    /// Subset keeping the first `n` specs.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        Self::new(self.specs.iter().take(n).cloned().collect())
    }

    /// Number of PCA components the registry reads in the given scope.
    pub fn pca_components(&self, scope: Scope) -> usize {
        self.specs
            .iter()
            .filter(|s| s.scope == scope)
            .filter_map(|s| match &s.family {
                FeatureFamily::Pca(p) => Some(p.component + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn constant_mask(&self) -> Vec<bool> {
        self.specs.iter().map(|s| s.is_constant()).collect()
    }

    /// Raw (unstandardized) design matrix, one row per macro-cell.
    pub fn evaluate(
        &self,
        partition: &MacroCellPartition,
        lam_f: &[f64],
        bases: &PcaBases,
        phases: PhaseSpec,
        link: &LinkFunction,
    ) -> Result<DMatrix<f64>> {
        if lam_f.len() != partition.fine().n_elements() {
            return Err(Error::invalid(format!(
                "field has {} entries, fine grid has {} elements",
                lam_f.len(),
                partition.fine().n_elements()
            )));
        }
        let n_cells = partition.n_cells();
        let mut phi = DMatrix::zeros(n_cells, self.specs.len());
        let ctx = |scope| FeatureContext {
            phases,
            local_pca: bases.local.as_ref(),
            global_pca: bases.global.as_ref(),
            scope,
        };
        let transform = |s: &FeatureSpec, v: f64| match s.transform {
            Transform::None => v,
            Transform::LinkInverse => link.inverse_clamped(v),
            Transform::Log => v.max(f64::MIN_POSITIVE).ln(),
        };
        let global_ctx = ctx(Scope::Global);
        let cell_ctx = ctx(Scope::Cell);
        let mut global_img = None;
        for (j, s) in self.specs.iter().enumerate() {
            if s.scope == Scope::Global {
                let img = global_img.get_or_insert_with(|| partition.global_image(lam_f));
                let v = transform(s, s.family.feature().eval(img, &global_ctx)?);
                phi.column_mut(j).fill(v);
            }
        }
        for k in 0..n_cells {
            let img = partition.cell_image(k, lam_f);
            for (j, s) in self.specs.iter().enumerate() {
                if s.scope == Scope::Cell {
                    phi[(k, j)] = transform(s, s.family.feature().eval(&img, &cell_ctx)?);
                }
            }
        }
        if let Some((i, j)) = phi
            .iter()
            .position(|v| !v.is_finite())
            .map(|p| (p % n_cells, p / n_cells))
        {
            return Err(Error::Numerical(format!(
                "feature '{}' is not finite in cell {i}",
                self.specs[j].id
            )));
        }
        Ok(phi)
    }

    /// Raw design matrices for many samples, in parallel.
    pub fn evaluate_many(
        &self,
        partition: &MacroCellPartition,
        fields: &[Vec<f64>],
        bases: &PcaBases,
        phases: PhaseSpec,
        link: &LinkFunction,
    ) -> Result<Vec<DMatrix<f64>>> {
        fields
            .par_iter()
            .map(|f| self.evaluate(partition, f, bases, phases, link))
            .collect()
    }
}

/// Fitted PCA bases the registry may need.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PcaBases {
    pub local: Option<PcaBasis>,
    pub global: Option<PcaBasis>,
}

impl PcaBases {
    /// Fits whatever bases `registry` reads from unlabelled fields.
    pub fn fit(
        registry: &FeatureRegistry,
        partition: &MacroCellPartition,
        fields: &[Vec<f64>],
    ) -> Result<Self> {
        let n_local = registry.pca_components(Scope::Cell);
        let n_global = registry.pca_components(Scope::Global);
        let local = if n_local > 0 {
            let cells: Vec<Vec<f64>> = fields
                .iter()
                .flat_map(|f| {
                    (0..partition.n_cells()).map(move |k| partition.cell_image(k, f).values)
                })
                .collect();
            Some(PcaBasis::fit(&cells, n_local)?)
        } else {
            None
        };
        let global = if n_global > 0 {
            Some(PcaBasis::fit(fields, n_global)?)
        } else {
            None
        };
        Ok(Self { local, global })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandardizeMode {
    None,
    /// Divide each non-constant column by its standard deviation.
    Scale,
    /// Zero mean and unit variance for each non-constant column.
    #[default]
    Affine,
}

/// Per-column map `(φ - shift) / scale`, fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mode: StandardizeMode,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn identity(n: usize) -> Self {
        Self {
            mode: StandardizeMode::None,
            shift: vec![0.0; n],
            scale: vec![1.0; n],
        }
    }

    /// Statistics pool all rows of all matrices. The constant feature and
    /// columns without spread are left unscaled.
    pub fn fit(mode: StandardizeMode, mats: &[DMatrix<f64>], constant: &[bool]) -> Result<Self> {
        let n = constant.len();
        if mats.is_empty() {
            return Err(Error::invalid("cannot fit a standardizer on no data"));
        }
        let mut s = Self::identity(n);
        s.mode = mode;
        if mode == StandardizeMode::None {
            return Ok(s);
        }
        let rows: usize = mats.iter().map(|m| m.nrows()).sum();
        for j in 0..n {
            if constant[j] {
                continue;
            }
            let mean = mats.iter().map(|m| m.column(j).sum()).sum::<f64>() / rows as f64;
            let var = mats
                .iter()
                .map(|m| {
                    m.column(j)
                        .iter()
                        .map(|v| (v - mean) * (v - mean))
                        .sum::<f64>()
                })
                .sum::<f64>()
                / rows as f64;
            let sd = var.sqrt();
            if sd > 1e-12 * mean.abs().max(1e-300) {
                s.scale[j] = sd;
            }
            if mode == StandardizeMode::Affine {
                s.shift[j] = mean;
            }
        }
        Ok(s)
    }

    pub fn apply(&self, phi: &mut DMatrix<f64>) {
        for j in 0..phi.ncols() {
            let (a, b) = (self.shift[j], self.scale[j]);
            phi.column_mut(j).apply(|v| *v = (*v - a) / b);
        }
    }

    /// Coefficients expressed on raw features: `Φ_std θ = Φ_raw θ_raw + c`,
    /// returning `θ_raw` (the offset `c` is folded into the constant column
    /// when `constant_col` is given).
    pub fn to_raw_coefficients(&self, theta: &[f64], constant_col: Option<usize>) -> Vec<f64> {
        let mut raw: Vec<f64> = theta.iter().zip(&self.scale).map(|(t, s)| t / s).collect();
        if let Some(c) = constant_col {
            let offset: f64 = raw.iter().zip(&self.shift).map(|(r, m)| r * m).sum();
            raw[c] -= offset;
        }
        raw
    }
}

mod defaults;
