//! Built-in registries.

use super::*;

const HI: Phase = Phase::Hi;
const LO: Phase = Phase::Lo;

fn fam_id(f: &FeatureFamily) -> String {
    use FeatureFamily as F;
    match f {
        F::Constant(_) => "const".into(),
        F::GeneralizedMean(g) => format!("gmean_{}", g.q),
        F::Sca(_) => "sca".into(),
        F::MaxwellGarnett(m) => format!("mg_{}", m.inclusion.as_str()),
        F::Dem(d) => format!("dem_{}", d.inclusion.as_str()),
        F::LinealPath(l) => format!("lineal_{}_{}", l.d, l.phase.as_str()),
        F::LinealPathFit(l) => format!(
            "lineal_fit_{}_{}",
            l.phase.as_str(),
            if l.param == FitParam::A { "a" } else { "b" }
        ),
        F::BlobCount(b) => format!("blobs_{}", b.phase.as_str()),
        F::PixelCross(p) => format!("cross_{}_{}", p.axis.as_str(), p.phase.as_str()),
        F::MaxExtent(m) => format!("extent_{}_{}", m.phase.as_str(), m.axis.as_str()),
        F::ConvexArea(c) => format!("convex_{}_{}", c.phase.as_str(), c.stat.as_str()),
        F::ConnectedPath(c) => format!("path_{}_{}", c.phase.as_str(), c.axis.as_str()),
        F::SpecificSurface(s) => format!("surface_{}", s.phase.as_str()),
        F::GaussFilter(g) => format!("gauss_{}", g.a),
        F::StdDev(_) => "std".into(),
        F::LogStd(_) => "log_std".into(),
        F::IsingEnergy(_) => "ising".into(),
        F::TwoPoint(t) => format!("s2_{}_{}", t.d, t.phase.as_str()),
        F::DistanceTransform(d) => format!(
            "dist_{}_{}_{}",
            d.phase.as_str(),
            d.metric.as_str(),
            d.stat.as_str()
        ),
        F::Pca(p) => format!("pca_{}", p.component + 1),
    }
}

fn cell(f: FeatureFamily) -> FeatureSpec {
    FeatureSpec::cell(fam_id(&f), f)
}

fn global(f: FeatureFamily) -> FeatureSpec {
    FeatureSpec::global(format!("global_{}", fam_id(&f)), f)
}

use FeatureFamily as F;

fn mg(inclusion: Phase) -> FeatureFamily {
    F::MaxwellGarnett(MaxwellGarnett { inclusion })
}

fn dem(inclusion: Phase) -> FeatureFamily {
    F::Dem(Dem { inclusion })
}

fn gmean(q: f64) -> FeatureFamily {
    F::GeneralizedMean(GeneralizedMean { q })
}

fn extent(phase: Phase, axis: Axis) -> FeatureFamily {
    F::MaxExtent(MaxExtent { phase, axis })
}

impl FeatureRegistry {
    /// The 100-feature catalogue for 2D problems: features 1-88 act on
    /// macro-cells, 89-100 on the whole image.
    pub fn default_2d() -> Self {
        let mut s = vec![
            cell(F::Constant(Constant {})),
            cell(F::Sca(Sca {})),
            cell(mg(LO)),
            cell(mg(HI)),
            cell(dem(LO)),
            cell(dem(HI)),
        ];
        for d in [4, 7, 10] {
            for phase in [HI, LO] {
                s.push(cell(F::LinealPath(LinealPath { d, phase })));
            }
        }
        for phase in [LO, HI] {
            for param in [FitParam::A, FitParam::B] {
                s.push(cell(F::LinealPathFit(LinealPathFit {
                    distances: vec![2, 4, 6, 8],
                    phase,
                    param,
                })));
            }
        }
        for phase in [HI, LO] {
            s.push(cell(F::BlobCount(BlobCount { phase })));
        }
        for (axis, phase) in [(Axis::Y, LO), (Axis::X, LO), (Axis::Y, HI), (Axis::X, HI)] {
            s.push(cell(F::PixelCross(PixelCross { phase, axis })));
        }
        for (phase, axis) in [(HI, Axis::Y), (HI, Axis::X), (LO, Axis::Y), (LO, Axis::X)] {
            s.push(cell(extent(phase, axis)));
        }
        for q in [-1.0, -0.5, 0.0, 0.5, 1.0] {
            s.push(cell(gmean(q)));
        }
        for stat in [Statistic::Max, Statistic::Var, Statistic::Mean] {
            for phase in [HI, LO] {
                s.push(cell(F::ConvexArea(ConvexArea { phase, stat })));
            }
        }
        for (phase, axis) in [(LO, Axis::X), (LO, Axis::Y), (HI, Axis::X), (HI, Axis::Y)] {
            s.push(cell(F::ConnectedPath(ConnectedPath { phase, axis })));
        }
        for phase in [LO, HI] {
            s.push(cell(F::SpecificSurface(SpecificSurface { phase })));
        }
        for a in [1.0, 2.0, 4.0, 8.0, 16.0] {
            s.push(cell(F::GaussFilter(GaussFilter { a })));
        }
        s.push(cell(F::StdDev(StdDev {})));
        s.push(cell(F::LogStd(LogStd {
            cutoff: DEFAULT_LOG_CUTOFF,
        })));
        s.push(cell(F::IsingEnergy(IsingEnergy {})));
        for d in [3, 5, 7, 9, 11, 13] {
            for phase in [HI, LO] {
                s.push(cell(F::TwoPoint(TwoPoint { d, phase })));
            }
        }
        for phase in [HI, LO] {
            for metric in [Metric::Euclidean, Metric::Cityblock, Metric::Chessboard] {
                for stat in [Statistic::Mean, Statistic::Var, Statistic::Max] {
                    s.push(cell(F::DistanceTransform(DistanceTransform {
                        phase,
                        metric,
                        stat,
                    })));
                }
            }
        }
        for component in 0..7 {
            s.push(cell(F::Pca(Pca { component })));
        }
        for (phase, axis) in [(HI, Axis::X), (HI, Axis::Y), (LO, Axis::X), (LO, Axis::Y)] {
            s.push(global(extent(phase, axis)));
        }
        s.push(global(F::Sca(Sca {})));
        s.push(global(mg(LO)));
        s.push(global(mg(HI)));
        s.push(global(dem(LO)));
        s.push(global(dem(HI)));
        for component in 0..3 {
            s.push(global(F::Pca(Pca { component })));
        }
        Self::new(s).expect("built-in registry is valid")
    }

    /// Features meaningful on 1D macro-cells (at least 16 pixels long).
    ///
    /// Conductivity-valued estimates bounded by the phase values (means,
    /// SCA, DEM) are mapped through the inverse link so that they live on
    /// the latent scale; `harmonic_mean` is the exact 1D effective property.
    pub fn default_1d() -> Self {
        let link = |f: FeatureFamily| cell(f).with_transform(Transform::LinkInverse);
        let mut s = vec![
            cell(F::Constant(Constant {})),
            FeatureSpec::cell("harmonic_mean", gmean(-1.0)).with_transform(Transform::LinkInverse),
        ];
        for q in [-0.5, 0.0, 0.5, 1.0] {
            s.push(link(gmean(q)));
        }
        s.push(link(F::Sca(Sca {})));
        s.push(link(dem(LO)));
        s.push(link(dem(HI)));
        s.push(cell(mg(LO)));
        s.push(cell(mg(HI)));
        for d in [2, 4, 7] {
            for phase in [HI, LO] {
                s.push(cell(F::LinealPath(LinealPath { d, phase })));
            }
        }
        for d in [3, 7] {
            for phase in [HI, LO] {
                s.push(cell(F::TwoPoint(TwoPoint { d, phase })));
            }
        }
        for phase in [LO, HI] {
            s.push(cell(F::SpecificSurface(SpecificSurface { phase })));
            s.push(cell(F::BlobCount(BlobCount { phase })));
            s.push(cell(extent(phase, Axis::X)));
            s.push(cell(F::DistanceTransform(DistanceTransform {
                phase,
                metric: Metric::Euclidean,
                stat: Statistic::Mean,
            })));
        }
        s.push(cell(F::StdDev(StdDev {})));
        s.push(cell(F::LogStd(LogStd {
            cutoff: DEFAULT_LOG_CUTOFF,
        })));
        s.push(cell(F::IsingEnergy(IsingEnergy {})));
        s.push(cell(F::GaussFilter(GaussFilter { a: 4.0 })));
        Self::new(s).expect("built-in registry is valid")
    }
}
