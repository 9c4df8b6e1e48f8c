//! On-disk formats. Arrays are raw little-endian `f64` in row-major order
//! next to a JSON sidecar; every file carries the format version and the
//! hash of the configuration that produced it. Writes go through a
//! temporary file in the target directory followed by a rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{BcConfig, GrfConfig, GridsConfig, RunConfig, SolverConfig};
use crate::error::{Error, Result};
use crate::features::{FeatureRegistry, PcaBases, Standardizer};
use crate::fem::interpolation_matrix;
use crate::media::PhaseSpec;
use crate::model::{CoefficientMode, EncoderParams, LinkFunction};
use crate::pipeline::{ActiveFeature, FomSample, Split, TrainedModel};
use crate::prediction::DataBaseline;
use crate::training::TraceRecord;

pub const FORMAT_VERSION: u32 = 1;

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}

fn check_version(found: u32) -> Result<()> {
    if found != FORMAT_VERSION {
        return Err(Error::Version {
            found,
            expected: FORMAT_VERSION,
        });
    }
    Ok(())
}

/// Loads a [`RunConfig`] from a JSON file.
pub fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
    RunConfig::from_json(&text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArraySidecar {
    pub dtype: String,
    pub shape: Vec<usize>,
    pub order: String,
    pub format_version: u32,
    pub config_hash: String,
}

fn sidecar_path(bin: &Path) -> PathBuf {
    let mut p = bin.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Writes `data` with logical `shape` to `path` and its sidecar to `path.json`.
pub fn write_array(path: &Path, data: &[f64], shape: &[usize], config_hash: &str) -> Result<()> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::invalid(format!(
            "array of length {} does not have shape {shape:?}",
            data.len()
        )));
    }
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_atomic(path, &bytes)?;
    write_json(
        &sidecar_path(path),
        &ArraySidecar {
            dtype: "<f8".into(),
            shape: shape.to_vec(),
            order: "C".into(),
            format_version: FORMAT_VERSION,
            config_hash: config_hash.into(),
        },
    )
}

/// Reads an array and its sidecar, checking the byte count against the shape.
pub fn read_array(path: &Path) -> Result<(Vec<f64>, ArraySidecar)> {
    let meta: ArraySidecar = read_json(&sidecar_path(path))?;
    check_version(meta.format_version)?;
    if meta.dtype != "<f8" || meta.order != "C" {
        return Err(Error::invalid(format!(
            "{}: unsupported dtype {} / order {}",
            path.display(),
            meta.dtype,
            meta.order
        )));
    }
    let bytes = fs::read(path)
        .map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
    let n: usize = meta.shape.iter().product();
    if bytes.len() != 8 * n {
        return Err(Error::invalid(format!(
            "{}: {} bytes do not match shape {:?}",
            path.display(),
            bytes.len(),
            meta.shape
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((data, meta))
}

fn read_shaped(path: &Path, shape: &[usize]) -> Result<Vec<f64>> {
    let (data, meta) = read_array(path)?;
    if meta.shape != shape {
        return Err(Error::invalid(format!(
            "{}: shape {:?}, expected {shape:?}",
            path.display(),
            meta.shape
        )));
    }
    Ok(data)
}

/// CSV text: a `# format_version=.. config_hash=..` line, a header row and
/// one row per record with shortest round-trip floats.
pub fn csv_string(header: &[&str], rows: &[Vec<f64>], config_hash: &str) -> String {
    let mut s = format!("# format_version={FORMAT_VERSION} config_hash={config_hash}\n");
    s.push_str(&header.join(","));
    s.push('\n');
    for r in rows {
        let line: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(","));
        s.push('\n');
    }
    s
}

pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>], config_hash: &str) -> Result<()> {
    write_atomic(path, csv_string(header, rows, config_hash).as_bytes())
}

/// Appends records to a JSONL trace; each line carries version and hash.
pub struct TraceWriter {
    path: PathBuf,
    config_hash: String,
    text: String,
}

#[derive(Serialize, Deserialize)]
struct TraceLine<T> {
    format_version: u32,
    config_hash: String,
    #[serde(flatten)]
    record: T,
}

impl TraceWriter {
    pub fn new(path: &Path, config_hash: &str) -> Self {
        Self {
            path: path.to_owned(),
            config_hash: config_hash.into(),
            text: String::new(),
        }
    }

    /// Adds a record and rewrites the file so that it is complete after
    /// every epoch.
    pub fn push(&mut self, r: &TraceRecord) -> Result<()> {
        let line = TraceLine {
            format_version: FORMAT_VERSION,
            config_hash: self.config_hash.clone(),
            record: r,
        };
        self.text.push_str(&serde_json::to_string(&line)?);
        self.text.push('\n');
        write_atomic(&self.path, self.text.as_bytes())
    }
}

/// Records of a written trace, version-checked.
pub fn read_trace(path: &Path) -> Result<Vec<serde_json::Value>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l)?;
            check_version(v["format_version"].as_u64().unwrap_or(0) as u32)?;
            Ok(v)
        })
        .collect()
}

/// Dataset manifest. Per-sample arrays are stacked row-wise in
/// `lam_f.bin` (`n × n_elements`) and `u_f.bin` (`n × n_nodes`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub split: Split,
    pub n_samples: usize,
    pub grids: GridsConfig,
    pub phases: PhaseSpec,
    pub bc: BcConfig,
    pub grf: GrfConfig,
    pub solver: SolverConfig,
    pub run_seed: u64,
    pub generator_seed: u64,
    pub ids: Vec<u64>,
    pub a: Vec<[f64; 4]>,
    pub f_cut: Vec<f64>,
    pub volume_fraction_hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<FomSample>,
}

impl Dataset {
    pub fn new(cfg: &RunConfig, split: Split, samples: Vec<FomSample>) -> Self {
        Self {
            manifest: DatasetManifest {
                format_version: FORMAT_VERSION,
                config_hash: cfg.hash(),
                split,
                n_samples: samples.len(),
                grids: cfg.grids.clone(),
                phases: cfg.phases,
                bc: cfg.bc.clone(),
                grf: cfg.grf.clone(),
                solver: cfg.solver.clone(),
                run_seed: cfg.seed,
                generator_seed: split.seed(cfg.seed),
                ids: samples.iter().map(|s| s.id).collect(),
                a: samples.iter().map(|s| s.a).collect(),
                f_cut: samples.iter().map(|s| s.f_cut).collect(),
                volume_fraction_hi: samples.iter().map(|s| s.volume_fraction_hi).collect(),
            },
            samples,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let m = &self.manifest;
        let n = self.samples.len();
        let ne = self.samples.first().map_or(0, |s| s.lam_f.len());
        let nn = self.samples.first().map_or(0, |s| s.u_f.len());
        let lam: Vec<f64> = self
            .samples
            .iter()
            .flat_map(|s| s.lam_f.iter().copied())
            .collect();
        let u: Vec<f64> = self
            .samples
            .iter()
            .flat_map(|s| s.u_f.iter().copied())
            .collect();
        write_array(&dir.join("lam_f.bin"), &lam, &[n, ne], &m.config_hash)?;
        write_array(&dir.join("u_f.bin"), &u, &[n, nn], &m.config_hash)?;
        // manifest last: its presence marks a complete dataset
        write_json(&dir.join("manifest.json"), m)
    }

    /// `base` with the generation settings of this dataset, as needed to
    /// draw further samples from the same distribution.
    pub fn generating_config(&self, base: &RunConfig) -> RunConfig {
        let m = &self.manifest;
        let mut c = base.clone();
        c.grids = m.grids.clone();
        c.phases = m.phases;
        c.bc = m.bc.clone();
        c.grf = m.grf.clone();
        c.solver = m.solver.clone();
        c.seed = m.run_seed;
        c
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let m: DatasetManifest = read_json(&dir.join("manifest.json"))?;
        check_version(m.format_version)?;
        let fine = m.grids.fine_grid()?;
        let n = m.n_samples;
        if [
            m.ids.len(),
            m.a.len(),
            m.f_cut.len(),
            m.volume_fraction_hi.len(),
        ]
        .iter()
        .any(|&k| k != n)
        {
            return Err(Error::invalid(format!(
                "{}: per-sample lists do not have {n} entries",
                dir.display()
            )));
        }
        let (ne, nn) = (fine.n_elements(), fine.n_nodes());
        let lam = read_shaped(&dir.join("lam_f.bin"), &[n, ne])?;
        let u = read_shaped(&dir.join("u_f.bin"), &[n, nn])?;
        let samples = (0..n)
            .map(|i| FomSample {
                id: m.ids[i],
                lam_f: lam[i * ne..(i + 1) * ne].to_vec(),
                u_f: u[i * nn..(i + 1) * nn].to_vec(),
                a: m.a[i],
                f_cut: m.f_cut[i],
                volume_fraction_hi: m.volume_fraction_hi[i],
            })
            .collect();
        Ok(Self {
            manifest: m,
            samples,
        })
    }
}

/// Model manifest. Arrays live next to it:
/// `theta.bin` (`n_features × n_cols`), `theta_cov.bin`
/// (`n_cols × n_active × n_active`), `sigma_c_sq.bin`, `s.bin`, `b.bin`,
/// `w.bin` (`n_fine_nodes × n_coarse_nodes`), `baseline_mean.bin`,
/// `baseline_var.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelManifest {
    pub format_version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub link: LinkFunction,
    pub coefficient_mode: CoefficientMode,
    pub registry: FeatureRegistry,
    pub standardizer: Standardizer,
    pub pca: PcaBases,
    pub gamma: Vec<f64>,
    pub active: Vec<bool>,
    pub active_features: Vec<ActiveFeature>,
}

pub fn write_model(dir: &Path, model: &TrainedModel) -> Result<()> {
    fs::create_dir_all(dir)?;
    let h = model.config.hash();
    let enc = &model.surrogate.enc;
    let dec = &model.surrogate.dec;
    let (nf, nc) = enc.theta.shape();
    write_array(
        &dir.join("theta.bin"),
        &row_major(&enc.theta),
        &[nf, nc],
        &h,
    )?;
    let na = enc.active_indices().len();
    let cov: Vec<f64> = enc.theta_cov.iter().flat_map(row_major).collect();
    write_array(
        &dir.join("theta_cov.bin"),
        &cov,
        &[enc.theta_cov.len(), na, na],
        &h,
    )?;
    write_array(
        &dir.join("sigma_c_sq.bin"),
        &enc.sigma_c_sq,
        &[enc.sigma_c_sq.len()],
        &h,
    )?;
    write_array(&dir.join("s.bin"), &dec.s, &[dec.s.len()], &h)?;
    write_array(&dir.join("b.bin"), &dec.b, &[dec.b.len()], &h)?;
    let w = DMatrix::from(&dec.w);
    write_array(
        &dir.join("w.bin"),
        &row_major(&w),
        &[w.nrows(), w.ncols()],
        &h,
    )?;
    let bl = &model.baseline;
    write_array(
        &dir.join("baseline_mean.bin"),
        &bl.mean,
        &[bl.mean.len()],
        &h,
    )?;
    write_array(&dir.join("baseline_var.bin"), &bl.var, &[bl.var.len()], &h)?;
    write_json(
        &dir.join("model.json"),
        &ModelManifest {
            format_version: FORMAT_VERSION,
            config_hash: h,
            config: model.config.clone(),
            link: *model.link(),
            coefficient_mode: enc.mode,
            registry: model.registry.clone(),
            standardizer: model.standardizer.clone(),
            pca: model.pca.clone(),
            gamma: enc.gamma.clone(),
            active: enc.active.clone(),
            active_features: model.active_features(),
        },
    )
}

pub fn read_model(dir: &Path) -> Result<TrainedModel> {
    let m: ModelManifest = read_json(&dir.join("model.json"))?;
    check_version(m.format_version)?;
    let cfg = &m.config;
    cfg.validate()?;
    let fine = cfg.grids.fine_grid()?;
    let coarse = cfg.grids.coarse_grid()?;
    let nf = m.registry.len();
    let ncells = coarse.n_elements();
    let ncols = match m.coefficient_mode {
        CoefficientMode::Shared => 1,
        CoefficientMode::PerCell => ncells,
    };
    if m.gamma.len() != nf || m.active.len() != nf {
        return Err(Error::invalid(
            "model.json: gamma/active do not match the registry",
        ));
    }
    let na = m.active.iter().filter(|a| **a).count();
    let theta = DMatrix::from_row_slice(
        nf,
        ncols,
        &read_shaped(&dir.join("theta.bin"), &[nf, ncols])?,
    );
    let cov = read_shaped(&dir.join("theta_cov.bin"), &[ncols, na, na])?;
    let theta_cov = (0..ncols)
        .map(|c| DMatrix::from_row_slice(na, na, &cov[c * na * na..(c + 1) * na * na]))
        .collect();
    let enc = EncoderParams {
        mode: m.coefficient_mode,
        theta,
        sigma_c_sq: read_shaped(&dir.join("sigma_c_sq.bin"), &[ncells])?,
        gamma: m.gamma.clone(),
        active: m.active.clone(),
        theta_cov,
    };
    let nn = fine.n_nodes();
    let s = read_shaped(&dir.join("s.bin"), &[nn])?;
    let b = read_shaped(&dir.join("b.bin"), &[nn])?;
    let w = read_shaped(&dir.join("w.bin"), &[nn, coarse.n_nodes()])?;
    if w != row_major(&DMatrix::from(&interpolation_matrix(&coarse, &fine)?)) {
        return Err(Error::invalid(
            "w.bin does not match the interpolation between the configured grids",
        ));
    }
    let baseline = DataBaseline {
        mean: read_shaped(&dir.join("baseline_mean.bin"), &[nn])?,
        var: read_shaped(&dir.join("baseline_var.bin"), &[nn])?,
    };
    let model = TrainedModel::from_parts(
        m.config.clone(),
        m.registry,
        m.pca,
        m.standardizer,
        enc,
        b,
        s,
        baseline,
    )?;
    if *model.link() != m.link {
        return Err(Error::invalid(
            "model.json: link does not match the configuration",
        ));
    }
    Ok(model)
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

/// Writes `value` as pretty JSON with version and hash fields in front.
pub fn write_report<T: Serialize>(path: &Path, value: &T, config_hash: &str) -> Result<()> {
    let mut v = serde_json::to_value(value)?;
    let mut out = serde_json::Map::new();
    out.insert("format_version".into(), FORMAT_VERSION.into());
    out.insert("config_hash".into(), config_hash.into());
    if let serde_json::Value::Object(map) = &mut v {
        out.append(map);
    } else {
        out.insert("value".into(), v);
    }
    write_json(path, &serde_json::Value::Object(out))
}
