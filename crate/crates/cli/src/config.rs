//! Run configuration: defaults, overlaid by a JSON config section, overlaid
//! by command-line flags. The fully resolved result is written next to the
//! outputs of every run.

use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use qpflow::dataset::{GenerateOptions, ScalerKind};
use qpflow::nn::{Hyperparams, OptimizerKind, Preset};
use qpflow::powerflow::SolveOptions;
use qpflow::qsim::{PropagatorMode, Spin};
use qpflow::Error;

pub const DEFAULT_OUT_DIR: &str = "out";
pub const DEFAULT_SEED: u64 = 0;

/// Invalid combination of arguments not caught by the parser.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    if err.downcast_ref::<std::io::Error>().is_some() {
        return 3;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Io { .. }) => 3,
        Some(
            Error::Parse(_)
            | Error::Validation(_)
            | Error::DimensionMismatch { .. }
            | Error::ShapeMismatch(_)
            | Error::InvalidSpin(_)
            | Error::UnknownSpin(_)
            | Error::VersionMismatch { .. }
            | Error::DegenerateCurve(_)
            | Error::NoCoupling,
        ) => 4,
        Some(Error::NotConverged { .. }) => 5,
        Some(Error::SingularJacobian { .. }) => 6,
        _ => 7,
    }
}

/// Raw contents of `--config`.
#[derive(Debug, Default)]
pub struct FileConfig {
    root: Value,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let root: Value = serde_json::from_str(&text)
            .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        if !root.is_object() {
            return Err(
                Error::Parse(format!("{}: config must be a JSON object", path.display())).into(),
            );
        }
        Ok(Self { root })
    }

    pub fn seed(&self) -> anyhow::Result<Option<u64>> {
        match self.root.get("seed") {
            None | Some(Value::Null) => Ok(None),
            Some(v) => Ok(Some(v.as_u64().ok_or_else(|| {
                Error::Parse(format!("seed must be a non-negative integer, got {v}"))
            })?)),
        }
    }

    pub fn out_dir(&self) -> Option<PathBuf> {
        self.root
            .get("out_dir")
            .and_then(Value::as_str)
            .map(PathBuf::from)
    }

    /// Default settings with the `key` section of the file laid over them.
    pub fn section<T: Serialize + DeserializeOwned + Default>(
        &self,
        key: &str,
    ) -> anyhow::Result<T> {
        let mut base = serde_json::to_value(T::default()).expect("settings serialize");
        if let Some(patch) = self.root.get(key) {
            overlay(&mut base, patch);
        }
        serde_json::from_value(base)
            .map_err(|e| Error::Parse(format!("config section `{key}`: {e}")).into())
    }
}

fn overlay(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, p) => *b = p.clone(),
    }
}

pub fn parse_scaler(s: &str) -> anyhow::Result<ScalerKind> {
    Ok(s.parse::<ScalerKind>()?)
}

pub fn parse_mode(s: &str) -> anyhow::Result<PropagatorMode> {
    match s.to_ascii_lowercase().as_str() {
        "exact" | "exactexponential" => Ok(PropagatorMode::ExactExponential),
        "second-order" | "second_order" | "secondordertruncation" => {
            Ok(PropagatorMode::SecondOrderTruncation)
        }
        other => Err(Error::Parse(format!("unknown propagator mode `{other}`")).into()),
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveSettings {
    pub network: Option<PathBuf>,
    #[serde(flatten)]
    pub options: SolveOptions,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetSettings {
    pub network: Option<PathBuf>,
    pub n: usize,
    pub scaler: ScalerKind,
    #[serde(flatten)]
    pub generate: GenerateOptions,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self {
            network: None,
            n: 3000,
            scaler: ScalerKind::Standard,
            generate: GenerateOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ActivationSettings {
    pub spins: Vec<Spin>,
    pub g: f64,
    pub tau: f64,
    pub gamma: f64,
    pub n_points: usize,
    pub n_collisions: usize,
    pub mode: PropagatorMode,
    pub random_schedule: bool,
}

impl Default for ActivationSettings {
    fn default() -> Self {
        let t = qpflow::qsim::TransferConfig::default();
        Self {
            spins: vec![Spin::FIVE_HALVES],
            g: t.g,
            tau: t.params.tau,
            gamma: t.params.gamma,
            n_points: t.n_points,
            n_collisions: t.params.n_collisions,
            mode: t.params.mode,
            random_schedule: false,
        }
    }
}

/// Hyperparameter selection shared by `train` and `sweep`: a preset plus
/// per-field overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct HyperSettings {
    pub preset: Preset,
    /// Partial `Hyperparams` object laid over the preset.
    pub hyper: Value,
    pub scaler: Option<ScalerKind>,
}

impl Default for HyperSettings {
    fn default() -> Self {
        Self {
            preset: Preset::Table3,
            hyper: Value::Object(Default::default()),
            scaler: None,
        }
    }
}

impl HyperSettings {
    pub fn apply_args(&mut self, a: &crate::HyperArgs) -> anyhow::Result<()> {
        if let Some(p) = &a.preset {
            self.preset = p.parse()?;
        }
        let mut set = |k: &str, v: Value| {
            if let Value::Object(m) = &mut self.hyper {
                m.insert(k.to_string(), v);
            }
        };
        if let Some(o) = &a.optimizer {
            let kind: OptimizerKind = o.parse()?;
            set(
                "optimizer",
                serde_json::to_value(kind).expect("optimizer serializes"),
            );
        }
        if let Some(v) = a.learning_rate {
            set("learning_rate", v.into());
        }
        if let Some(v) = a.epochs {
            set("epochs", v.into());
        }
        if let Some(v) = a.batch_size {
            set("batch_size", v.into());
        }
        if let Some(v) = a.hidden_layers {
            set("hidden_layers", v.into());
        }
        if let Some(v) = a.hidden_size {
            set("hidden_size", v.into());
        }
        if let Some(v) = a.l1 {
            set("l1", v.into());
        }
        if let Some(v) = a.l2 {
            set("l2", v.into());
        }
        if a.no_bias {
            set("use_bias", false.into());
        }
        if let Some(s) = &a.scaler {
            self.scaler = Some(parse_scaler(s)?);
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, v: Value) {
        if let Value::Object(m) = &mut self.hyper {
            m.insert(key.to_string(), v);
        }
    }

    pub fn resolve(&self, seed: u64) -> anyhow::Result<Hyperparams> {
        let mut base =
            serde_json::to_value(Hyperparams::preset(self.preset)).expect("hyperparams serialize");
        if !self.hyper.is_object() {
            return Err(Error::Parse("`hyper` must be an object".into()).into());
        }
        let mut patch = self.hyper.clone();
        if let Some(Value::String(name)) = patch.get("optimizer") {
            let kind: OptimizerKind = name.parse()?;
            patch["optimizer"] = serde_json::to_value(kind).expect("optimizer serializes");
        }
        overlay(&mut base, &patch);
        let mut h: Hyperparams = serde_json::from_value(base)
            .map_err(|e| Error::Parse(format!("hyperparameters: {e}")))?;
        h.seed = seed;
        h.learning_rate = Some(h.learning_rate());
        h.validate()?;
        Ok(h)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub dataset: Option<PathBuf>,
    pub beta: Option<f64>,
    pub spin: Option<Spin>,
    #[serde(flatten)]
    pub hyper: HyperSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluateSettings {
    pub model: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub split: String,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        Self {
            model: None,
            dataset: None,
            split: "test".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSettings {
    pub dataset: Option<PathBuf>,
    pub betas: Vec<f64>,
    pub optimizers: Vec<String>,
    pub seeds: Vec<u64>,
    #[serde(flatten)]
    pub hyper: HyperSettings,
}

impl Default for SweepSettings {
    fn default() -> Self {
        Self {
            dataset: None,
            betas: vec![2.22, 2.78, 3.33, 4.1],
            optimizers: vec!["adam".into()],
            seeds: (0..5).collect(),
            hyper: HyperSettings::default(),
        }
    }
}

/// Snapshot written as `resolved_<command>.json`.
#[derive(Debug, Serialize)]
pub struct Resolved<'a, T: Serialize> {
    pub command: &'a str,
    pub seed: u64,
    pub out_dir: &'a Path,
    pub settings: &'a T,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hyperparams: Option<&'a Hyperparams>,
}
