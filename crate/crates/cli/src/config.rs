//! Config files and flag layering.
//!
//! A config file is TOML (or JSON, including a run manifest whose `config`
//! member is used). Top-level keys apply to every command; each command reads
//! its own table. Flags given on the command line win over the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use pfsgld::model::Garch;
use pfsgld::particle::ProposalKind;
use pfsgld::sgld::{ClockMode, StepScaling};
use pfsgld::{Error, EstimatorKind, ModelKind, ModelParams, ResamplingKind, Result, SubsequenceScheme};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

/// Parses any snake_case serde enum from a flag value.
pub fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    let key = s.trim().to_ascii_lowercase().replace('-', "_");
    serde_json::from_value(Value::String(key)).map_err(|e| e.to_string())
}

/// Particle count, or `inf` for the exact (Kalman) computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Particles(pub Option<usize>);

impl FromStr for Particles {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "exact" => Ok(Particles(None)),
            t => t
                .replace('_', "")
                .parse::<f64>()
                .ok()
                .filter(|v| v.fract() == 0.0 && *v >= 1.0 && *v < 1e12)
                .map(|v| Particles(Some(v as usize)))
                .ok_or_else(|| format!("'{s}' is neither a particle count nor 'inf'")),
        }
    }
}

impl fmt::Display for Particles {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(n) => write!(f, "{n}"),
            None => f.write_str("inf"),
        }
    }
}

impl Serialize for Particles {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(n) => s.serialize_u64(n as u64),
            None => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Particles {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            N(u64),
            F(f64),
            S(String),
        }
        match Raw::deserialize(d)? {
            Raw::N(n) => Ok(Particles(Some(n as usize))),
            Raw::F(v) => v.to_string().parse().map_err(serde::de::Error::custom),
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// `NAME=VALUE` model parameter override.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamOverride(pub String, pub f64);

impl FromStr for ParamOverride {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (k, v) = s.split_once('=').ok_or_else(|| format!("expected NAME=VALUE, got '{s}'"))?;
        let v: f64 = v.trim().parse().map_err(|_| format!("'{v}' is not a number"))?;
        Ok(ParamOverride(k.trim().to_ascii_lowercase(), v))
    }
}

/// Options every command accepts.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// lgssm, svm or garch.
    #[arg(long, value_parser = parse_enum::<ModelKind>)]
    pub model: Option<ModelKind>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model parameter, e.g. `--param phi=0.9`. GARCH also takes alpha, beta, gamma.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    pub params: Vec<ParamOverride>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateArgs {
    /// Number of observations.
    #[arg(long = "t-len")]
    pub t_len: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceArgs {
    /// Observation file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub particles: Option<usize>,
    /// Independent filter runs averaged.
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_parser = parse_enum::<ProposalKind>)]
    pub proposal: Option<ProposalKind>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasArgs {
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Reference gradient from `make-reference` (required unless lgssm).
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Subsequence lengths.
    #[arg(long = "s", value_delimiter = ',', num_args = 0..)]
    pub s: Option<Vec<usize>>,
    /// Buffer sizes.
    #[arg(long = "b", value_delimiter = ',', num_args = 0..)]
    pub b: Option<Vec<usize>>,
    /// Particle counts; `inf` for exact cells (lgssm).
    #[arg(long = "n", value_delimiter = ',', num_args = 0..)]
    pub n: Option<Vec<Particles>>,
    #[arg(long, value_parser = parse_enum::<SubsequenceScheme>)]
    pub scheme: Option<SubsequenceScheme>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_parser = parse_enum::<ProposalKind>)]
    pub proposal: Option<ProposalKind>,
    #[arg(long, value_parser = parse_enum::<ResamplingKind>)]
    pub resampling: Option<ResamplingKind>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgldArgs {
    /// Training observations (trajectory or segmented file).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// no_buffer, buffered, fully_buffered, full or weekly.
    #[arg(long, value_parser = parse_enum::<EstimatorKind>)]
    pub estimator: Option<EstimatorKind>,
    /// Stepsizes; one chain per value.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub eps: Option<Vec<f64>>,
    /// Shorthand for `--eps 1,0.1,0.01,0.001`.
    #[arg(long = "eps-grid", num_args = 0..=1, default_missing_value = "true")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<bool>,
    #[arg(long = "eps-scaling", value_parser = parse_enum::<StepScaling>)]
    pub eps_scaling: Option<StepScaling>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    /// Subsequence length S.
    #[arg(long)]
    pub subsequence: Option<usize>,
    /// Buffer size B.
    #[arg(long)]
    pub buffer: Option<usize>,
    #[arg(long)]
    pub particles: Option<Particles>,
    #[arg(long, value_parser = parse_enum::<SubsequenceScheme>)]
    pub scheme: Option<SubsequenceScheme>,
    #[arg(long, value_parser = parse_enum::<ProposalKind>)]
    pub proposal: Option<ProposalKind>,
    #[arg(long, value_parser = parse_enum::<ResamplingKind>)]
    pub resampling: Option<ResamplingKind>,
    /// Independent chains per stepsize.
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long = "max-degenerate")]
    pub max_degenerate: Option<usize>,
    /// Optional test file for periodic evaluation.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long = "eval-every")]
    pub eval_every: Option<usize>,
    /// Predictive horizons r.
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub horizons: Option<Vec<usize>>,
    #[arg(long = "eval-particles")]
    pub eval_particles: Option<usize>,
    #[arg(long = "out-dir")]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateArgs {
    /// Chain files.
    #[arg(long = "chain", num_args = 1..)]
    pub chains: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', num_args = 1..)]
    pub horizons: Option<Vec<usize>>,
    #[arg(long)]
    pub particles: Option<usize>,
    /// Evaluate every k-th step.
    #[arg(long)]
    pub every: Option<usize>,
    /// Steps dropped before the running mean for the MSE columns.
    #[arg(long)]
    pub burnin: Option<usize>,
    /// Report MSE of the running mean against the model parameters.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<bool>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KsdArgs {
    /// `METHOD=PATH`, or a path whose stem up to `_eps` names the method.
    #[arg(long = "chain", num_args = 1..)]
    pub chains: Option<Vec<String>>,
    /// Training observations the chains were fitted to.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Estimator for the scores, shared by every chain.
    #[arg(long, value_parser = parse_enum::<EstimatorKind>)]
    pub estimator: Option<EstimatorKind>,
    #[arg(long)]
    pub particles: Option<Particles>,
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long)]
    pub thin: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestArgs {
    /// Price file (`timestamp,price`) or `segment_key,value` file.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Split off the first K segments for training.
    #[arg(long = "train-segments")]
    pub train_segments: Option<usize>,
    #[arg(long = "train-out")]
    pub train_out: Option<PathBuf>,
    #[arg(long = "test-out")]
    pub test_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clock: Option<ClockMode>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_bias: Option<BiasArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sgld: Option<SgldArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub evaluate: Option<EvaluateArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ksd: Option<KsdArgs>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ingest: Option<IngestArgs>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            let mut v: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            // a run manifest carries the resolved config
            if let Some(c) = v.get_mut("config") {
                v = c.take();
            }
            serde_json::from_value(v).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        }
    }
}

/// Flags over file values, key by key.
pub fn layer<T: Serialize + DeserializeOwned>(file: Option<&T>, flags: &T) -> Result<T> {
    let json = |e: serde_json::Error| Error::Config(e.to_string());
    let mut base = match file {
        Some(f) => serde_json::to_value(f).map_err(json)?,
        None => Value::Object(Default::default()),
    };
    if let (Value::Object(b), Value::Object(top)) = (&mut base, serde_json::to_value(flags).map_err(json)?) {
        for (k, v) in top {
            if !v.is_null() {
                b.insert(k, v);
            }
        }
    }
    serde_json::from_value(base).map_err(json)
}

/// Reference parameters with named overrides applied. GARCH accepts either
/// its sampler coordinates (mu, phi, lambda, tau) or alpha, beta, gamma, tau.
pub fn resolve_params(kind: ModelKind, overrides: &BTreeMap<String, f64>) -> Result<ModelParams> {
    let base = kind.reference_params();
    let names = kind.natural_names();
    let bad = |e: Error| Error::Config(format!("invalid {kind} parameters: {e}"));
    let abg_keys = ["alpha", "beta", "gamma"];
    let uses_abg = overrides.keys().any(|k| abg_keys.contains(&k.as_str()));
    for k in overrides.keys() {
        let known = names.contains(&k.as_str()) || (kind == ModelKind::Garch && abg_keys.contains(&k.as_str()));
        if !known {
            return Err(Error::Config(format!("{kind} has no parameter '{k}'")));
        }
    }
    if let (ModelParams::Garch(g), true) = (base, uses_abg) {
        if overrides.keys().any(|k| ["mu", "phi", "lambda"].contains(&k.as_str())) {
            return Err(Error::Config("give GARCH parameters as alpha/beta/gamma or mu/phi/lambda, not both".into()));
        }
        let (a, b, c) = g.abg();
        let get = |k: &str, d: f64| overrides.get(k).copied().unwrap_or(d);
        let g = Garch::from_abg(get("alpha", a), get("beta", b), get("gamma", c), get("tau", g.tau)).map_err(bad)?;
        return Ok(ModelParams::Garch(g));
    }
    let mut v = base.natural();
    for (i, n) in names.iter().enumerate() {
        if let Some(x) = overrides.get(*n) {
            v[i] = *x;
        }
    }
    let p = ModelParams::from_natural(kind, &v).map_err(bad)?;
    p.check_stationary().map_err(bad)?;
    Ok(p)
}

/// Natural-coordinate map of `params`, as written to manifests.
pub fn params_map(params: &ModelParams) -> BTreeMap<String, f64> {
    params
        .kind()
        .natural_names()
        .iter()
        .zip(params.natural())
        .map(|(n, v)| (n.to_string(), v))
        .collect()
}
