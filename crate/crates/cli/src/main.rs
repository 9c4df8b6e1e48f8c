use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cgrom_core::config::RunConfig;
use cgrom_core::io::{self, Dataset, TraceWriter};
use cgrom_core::pipeline::{self, DataGenerator, Split, TrainedModel};
use cgrom_core::prediction::EvaluationReport;
use cgrom_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cgrom",
    version,
    about = "Coarse-grained probabilistic surrogates for random-media diffusion"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only report errors.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training and test datasets (`<out>/train`, `<out>/test`).
    GenData,
    /// Train a surrogate on a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
    },
    /// Predictive mean and standard deviation for every sample of a dataset.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Error measures of every model on every dataset.
    Evaluate {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long, required = true)]
        data: Vec<PathBuf>,
    },
    /// Unstandardized design matrices, one CSV per sample.
    DumpFeatures {
        #[arg(long)]
        data: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.common.quiet { "error" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            log::error!("cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn config(c: &Common) -> Result<RunConfig> {
    let path = c
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = io::read_config(path)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn out_dir(c: &Common) -> Result<&Path> {
    c.out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required".into()))
}

fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::GenData => gen_data(&config(c)?, out_dir(c)?),
        Command::Train { data } => train(&config(c)?, data, out_dir(c)?),
        Command::Predict { model, data } => predict(c, model, data, out_dir(c)?),
        Command::Evaluate { model, data } => evaluate(c, model, data, out_dir(c)?),
        Command::DumpFeatures { data } => dump_features(&config(c)?, data, out_dir(c)?),
    }
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    for (split, n, name) in [
        (Split::Train, cfg.data.n_train, "train"),
        (Split::Test, cfg.data.n_test, "test"),
    ] {
        let g = DataGenerator::new(cfg, split.seed(cfg.seed))?;
        let samples = g.generate(0, n)?;
        Dataset::new(cfg, split, samples).write(&out.join(name))?;
        log::info!("wrote {n} {name} samples to {}", out.join(name).display());
    }
    Ok(())
}

fn read_dataset(cfg: &RunConfig, dir: &Path) -> Result<Dataset> {
    let d = Dataset::read(dir)?;
    let m = &d.manifest;
    if m.grids != cfg.grids || m.phases != cfg.phases {
        return Err(Error::Config(format!(
            "dataset {} was generated on grids {:?} with phases {:?}, the configuration has {:?} and {:?}",
            dir.display(),
            m.grids,
            m.phases,
            cfg.grids,
            cfg.phases
        )));
    }
    Ok(d)
}

fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let d = read_dataset(cfg, data)?;
    let mut trace = TraceWriter::new(&out.join("trace.jsonl"), &cfg.hash());
    let mut trace_err = None;
    let (model, outcome) = pipeline::fit(cfg, &d.samples, |r| {
        log::info!(
            "epoch {:>4}  elbo {:.6e} ± {:.1e}  active {}",
            r.epoch,
            r.elbo,
            r.elbo_se,
            r.n_active
        );
        if let Err(e) = trace.push(r) {
            trace_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = trace_err {
        return Err(e);
    }
    io::write_model(out, &model)?;
    io::write_report(
        &out.join("active_features.json"),
        &ActiveSummary {
            converged: outcome.converged,
            epochs: outcome.trace.len(),
            features: model.active_features(),
        },
        &cfg.hash(),
    )?;
    log::info!(
        "trained on {} samples; {} active features",
        d.samples.len(),
        model.active_features().len()
    );
    Ok(())
}

#[derive(Serialize)]
struct ActiveSummary {
    converged: bool,
    epochs: usize,
    features: Vec<pipeline::ActiveFeature>,
}

/// The model's configuration, with the prediction section (and seed) taken
/// from `--config`/`--seed` when given.
fn prediction_config(c: &Common, model: &TrainedModel) -> Result<RunConfig> {
    let mut cfg = model.config.clone();
    if c.config.is_some() {
        let given = config(c)?;
        cfg.prediction = given.prediction;
        cfg.seed = given.seed;
    } else if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn check_grid(model: &TrainedModel, d: &Dataset, dir: &Path) -> Result<()> {
    if d.manifest.grids.fine != model.config.grids.fine {
        return Err(Error::InvalidInput(format!(
            "dataset {} has fine grid {:?}, the model expects {:?}",
            dir.display(),
            d.manifest.grids.fine,
            model.config.grids.fine
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct PredictionRecord {
    id: u64,
    file: String,
    n_mc: usize,
    n_failed: usize,
}

fn predict(c: &Common, model_dir: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = io::read_model(model_dir)?;
    let cfg = prediction_config(c, &model)?;
    let d = Dataset::read(data)?;
    check_grid(&model, &d, data)?;
    let fine = cfg.grids.fine_grid()?;
    let hash = model.config.hash();
    let seed = pipeline::prediction_seed(cfg.seed);
    let mut records = Vec::new();
    for s in &d.samples {
        let p = model.predict(
            &s.lam_f,
            &s.a,
            s.id,
            cfg.prediction.n_mc,
            cfg.prediction.mode,
            seed,
        )?;
        let rows: Vec<Vec<f64>> = (0..fine.n_nodes())
            .map(|i| {
                let [x, y] = fine.node_coords(i);
                vec![x, y, p.mu_pred[i], p.sigma_pred_sq[i].sqrt(), s.u_f[i]]
            })
            .collect();
        let file = format!("pred_{}.csv", s.id);
        io::write_csv(
            &out.join(&file),
            &["x", "y", "mu_pred", "sigma_pred", "u_true"],
            &rows,
            &hash,
        )?;
        records.push(PredictionRecord {
            id: s.id,
            file,
            n_mc: p.n_mc,
            n_failed: p.n_failed,
        });
    }
    io::write_report(
        &out.join("summary.json"),
        &serde_json::json!({
            "mode": cfg.prediction.mode,
            "seed": cfg.seed,
            "samples": records,
        }),
        &hash,
    )?;
    log::info!("wrote {} predictions to {}", records.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct EvaluationEntry {
    model: String,
    data: String,
    report: EvaluationReport,
}

fn evaluate(c: &Common, model_dirs: &[PathBuf], data: &[PathBuf], out: &Path) -> Result<()> {
    let models: Vec<TrainedModel> = model_dirs
        .iter()
        .map(|m| io::read_model(m))
        .collect::<Result<_>>()?;
    let sets: Vec<Dataset> = data
        .iter()
        .map(|d| Dataset::read(d))
        .collect::<Result<_>>()?;
    let base = prediction_config(c, &models[0])?;
    // var(u_f) belongs to the test distribution, so it is estimated once per dataset
    let var_uf: Vec<Vec<f64>> = sets
        .iter()
        .map(|d| {
            let g = d.generating_config(&base);
            pipeline::estimate_var_uf(&g, base.prediction.var_uf_samples, g.seed)
        })
        .collect::<Result<_>>()?;
    let mut entries = Vec::new();
    let mut e_matrix = vec![vec![0.0; sets.len()]; models.len()];
    let mut l_matrix = e_matrix.clone();
    for (i, (m, mdir)) in models.iter().zip(model_dirs).enumerate() {
        let cfg = prediction_config(c, m)?;
        for (j, d) in sets.iter().enumerate() {
            check_grid(m, d, &data[j])?;
            let r = m.evaluate(
                &d.samples,
                &var_uf[j],
                cfg.prediction.var_uf_samples,
                cfg.prediction.n_mc,
                cfg.prediction.mode,
                pipeline::prediction_seed(cfg.seed),
            )?;
            log::info!(
                "model {i} on {}: e = {:.4e} ± {:.1e}, L = {:.4} (L_data {:.4})",
                data[j].display(),
                r.e_mean,
                r.e_se,
                r.l_mean,
                r.l_data
            );
            e_matrix[i][j] = r.e_mean;
            l_matrix[i][j] = r.l_mean;
            entries.push(EvaluationEntry {
                model: mdir.display().to_string(),
                data: data[j].display().to_string(),
                report: r,
            });
        }
    }
    let hash = models[0].config.hash();
    io::write_report(
        &out.join("report.json"),
        &serde_json::json!({
            "e_matrix": e_matrix,
            "l_matrix": l_matrix,
            "entries": entries,
        }),
        &hash,
    )?;
    Ok(())
}

fn dump_features(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let d = read_dataset(cfg, data)?;
    let (registry, phis) = pipeline::raw_designs(cfg, &d.samples)?;
    let ids = registry.ids();
    let hash = cfg.hash();
    for (s, phi) in d.samples.iter().zip(&phis) {
        let rows: Vec<Vec<f64>> = phi
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        io::write_csv(
            &out.join(format!("features_{}.csv", s.id)),
            &ids,
            &rows,
            &hash,
        )?;
    }
    log::info!("wrote {} design matrices to {}", phis.len(), out.display());
    Ok(())
}
