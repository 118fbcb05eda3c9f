use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pfsgld::data::SegmentedSeries;
use pfsgld::sgld::ClockMode;
use pfsgld::{Error, ModelKind, ModelParams, Result};

use crate::config::{params_map, resolve_params, Common, ConfigFile};

pub mod bias;
pub mod evaluate;
pub mod generate;
pub mod ingest;
pub mod ksd;
pub mod reference;
pub mod sgld;

/// Global settings plus the options shared by every command.
pub struct Ctx {
    pub file: ConfigFile,
    pub common: Common,
    pub threads: usize,
    pub clock: ClockMode,
}

impl Ctx {
    pub fn model(&self) -> Result<ModelKind> {
        self.common
            .model
            .or(self.file.model)
            .ok_or_else(|| Error::Config("no model given (--model lgssm|svm|garch)".into()))
    }

    pub fn seed(&self) -> u64 {
        self.common.seed.or(self.file.seed).unwrap_or(0)
    }

    /// Named parameter overrides from the file, then the flags.
    pub fn param_overrides(&self) -> BTreeMap<String, f64> {
        let mut m = self.file.params.clone();
        for p in &self.common.params {
            m.insert(p.0.clone(), p.1);
        }
        m
    }

    pub fn params(&self, kind: ModelKind) -> Result<ModelParams> {
        resolve_params(kind, &self.param_overrides())
    }

    /// Config snapshot with the global keys filled in.
    pub fn snapshot(&self, kind: Option<ModelKind>, params: Option<&ModelParams>) -> ConfigFile {
        ConfigFile {
            model: kind,
            seed: Some(self.seed()),
            threads: Some(self.threads),
            clock: Some(self.clock),
            params: params.map(params_map).unwrap_or_default(),
            ..Default::default()
        }
    }
}

pub fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing required option {flag}")))
}

/// Creates the parent directory of `path` if needed.
pub fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => std::fs::create_dir_all(d).map_err(|e| Error::io(d, e)),
        _ => Ok(()),
    }
}

pub fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    ensure_parent(path)?;
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(f))
}

/// A single observation sequence; segmented files are rejected.
pub fn single_sequence(series: &SegmentedSeries, path: &Path) -> Result<Vec<f64>> {
    if series.segments.len() != 1 {
        return Err(Error::data(
            None,
            format!("{} has {} segments; this command needs one sequence", path.display(), series.segments.len()),
        ));
    }
    Ok(series.segments[0].clone())
}

pub fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let ext = path.extension().map(|e| format!(".{}", e.to_string_lossy())).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}{ext}"))
}
