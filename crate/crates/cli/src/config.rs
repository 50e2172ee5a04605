use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use tdm::datasets::{GeneratorSpec, GENERATORS};
use tdm::dynamics::{DiffusionConfig, SampleMode};
use tdm::lie::GroupKind;
use tdm::losses::Objective;
use tdm::net::NetConfig;

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetSource {
    File { file: PathBuf },
    Generator(GeneratorSpec),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiffusionSection {
    pub gamma: f64,
    pub horizon: f64,
    pub steps: usize,
    pub eps: Option<f64>,
    pub reorth_every: Option<usize>,
}

impl Default for DiffusionSection {
    fn default() -> Self {
        Self { gamma: 1.0, horizon: 10.0, steps: 1000, eps: None, reorth_every: Some(100) }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub hidden: Option<usize>,
    pub depth: Option<usize>,
    pub time_scale: Option<f64>,
    pub gn_eps: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iters: u64,
    pub batch: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip: Option<f64>,
    pub objective: Objective,
    pub probes: usize,
    pub force_hutchinson: bool,
    pub pairs_per_path: usize,
    pub sim_steps: Option<usize>,
    pub checkpoint_every: u64,
    pub log_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            iters: 20_000,
            batch: 1024,
            lr: 5e-4,
            weight_decay: 0.01,
            clip: None,
            objective: Objective::Auto,
            probes: 4,
            force_hutchinson: false,
            pairs_per_path: 8,
            sim_steps: None,
            checkpoint_every: 1000,
            log_every: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub n: usize,
    pub mode: SampleMode,
    pub early_stop: bool,
}

impl Default for SampleSection {
    fn default() -> Self {
        Self { n: 10_000, mode: SampleMode::Sde, early_stop: false }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NllSection {
    pub samples: usize,
    pub fixed_point_iters: usize,
    /// ODE grid for likelihood evaluation; the diffusion grid when unset.
    pub steps: Option<usize>,
    pub probes: usize,
    /// Evaluate on at most this many test points.
    pub max_points: Option<usize>,
}

impl Default for NllSection {
    fn default() -> Self {
        Self { samples: 16, fixed_point_iters: 3, steps: None, probes: 4, max_points: None }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub permutations: usize,
    pub max_points: usize,
    pub bins: usize,
    pub pairs: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { permutations: 200, max_points: 2000, bins: 50, pairs: 4 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub kind: Option<GroupKind>,
    #[serde(default = "default_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub diffusion: DiffusionSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sample: SampleSection,
    #[serde(default)]
    pub nll: NllSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
}

fn default_ratio() -> f64 {
    0.9
}

/// Sets `a.b.c = value` in a JSON object tree, creating objects as needed.
/// The value is parsed as JSON when possible and kept as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override {assignment:?} is not of the form key=value")))?;
    let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("bad override key {key:?}")));
    }
    let mut cur = root;
    for p in &parts[..parts.len() - 1] {
        if !cur.is_object() {
            return Err(CliError::Config(format!("override {key:?} descends into a non-object")));
        }
        cur = cur.as_object_mut().unwrap().entry(p.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    match cur.as_object_mut() {
        Some(obj) => {
            obj.insert(parts[parts.len() - 1].to_string(), value);
            Ok(())
        }
        None => Err(CliError::Config(format!("override {key:?} descends into a non-object"))),
    }
}

impl RunConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<(Self, Value), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut v: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        if let Some(name) = v.pointer("/dataset/name").and_then(Value::as_str) {
            if !GENERATORS.contains(&name) {
                return Err(CliError::Config(format!("unknown generator {name:?}; valid generators: {}", GENERATORS.join(", "))));
            }
        }
        let cfg: RunConfig = serde_json::from_value(v.clone()).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok((cfg, v))
    }

    pub fn kind(&self) -> Result<GroupKind, CliError> {
        match (&self.dataset, &self.kind) {
            (DatasetSource::Generator(g), Some(k)) if &g.kind() != k => {
                Err(CliError::Config(format!("kind {k} does not match generator {} ({})", g.name(), g.kind())))
            }
            (DatasetSource::Generator(g), _) => Ok(g.kind()),
            (DatasetSource::File { .. }, Some(k)) => Ok(k.clone()),
            (DatasetSource::File { .. }, None) => Err(CliError::Config("\"kind\" is required when the dataset is a file".into())),
        }
    }

    pub fn diffusion(&self) -> Result<DiffusionConfig, CliError> {
        let d = &self.diffusion;
        let c = DiffusionConfig {
            kind: self.kind()?,
            gamma: d.gamma,
            horizon: d.horizon,
            steps: d.steps,
            eps: d.eps.unwrap_or(1e-3 * d.horizon),
            reorth_every: d.reorth_every,
        };
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn net(&self) -> Result<NetConfig, CliError> {
        let base = NetConfig::for_kind(&self.kind()?);
        let m = &self.model;
        let c = NetConfig {
            hidden: m.hidden.unwrap_or(base.hidden),
            depth: m.depth.unwrap_or(base.depth),
            time_scale: m.time_scale.unwrap_or(base.time_scale),
            gn_eps: m.gn_eps.unwrap_or(base.gn_eps),
        };
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let kind = self.kind()?;
        kind.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.diffusion()?;
        self.net()?;
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(CliError::Config(format!("split_ratio must lie in (0, 1), got {}", self.split_ratio)));
        }
        let t = &self.train;
        if t.batch == 0 || t.probes == 0 || t.pairs_per_path == 0 {
            return Err(CliError::Config("train.batch, train.probes and train.pairs_per_path must be >= 1".into()));
        }
        if !(t.lr > 0.0 && t.lr.is_finite()) || !(t.weight_decay >= 0.0) {
            return Err(CliError::Config("train.lr must be positive and train.weight_decay non-negative".into()));
        }
        if matches!(t.objective, Objective::Dsm) && !kind.is_abelian() {
            return Err(CliError::Config(format!("the dsm objective needs a torus kind, got {kind}")));
        }
        if self.nll.samples == 0 || self.nll.probes == 0 {
            return Err(CliError::Config("nll.samples and nll.probes must be >= 1".into()));
        }
        if self.eval.max_points < 2 {
            return Err(CliError::Config("eval.max_points must be >= 2".into()));
        }
        match &self.dataset {
            DatasetSource::File { file } if !file.exists() => {
                return Err(CliError::Config(format!("dataset file {} does not exist", file.display())));
            }
            DatasetSource::Generator(GeneratorSpec::Maze { path, .. } | GeneratorSpec::AnglesCsv { path, .. }) if !path.exists() => {
                return Err(CliError::Config(format!("input file {} does not exist", path.display())));
            }
            _ => {}
        }
        Ok(())
    }
}
