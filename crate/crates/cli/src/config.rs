//! Flat `key=value` run configuration with dotted section prefixes.
//!
//! Blank lines and lines starting with `#` are ignored. Relative paths in a
//! file resolve against that file's directory; relative paths given as
//! overrides resolve against the working directory.

use std::path::{Path, PathBuf};

use trajformer::context::{PolarGridConfig, SemanticConfig};
use trajformer::dataset::{Adapter, WindowConfig};
use trajformer::evaluation::{CvKalmanConfig, EvalOptions, HorizonMode, RmseMode};
use trajformer::model::ModelConfig;
use trajformer::training::TrainConfig;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterKind {
    Canonical,
    Dut,
    Ind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub name: String,
    pub root: PathBuf,
    pub adapter: AdapterKind,
    /// Source frame rate for the DUT and inD adapters.
    pub frame_rate: f64,
    /// Pixel scale for adapters whose files carry meters only.
    pub meters_per_pixel: f64,
}

impl DatasetSpec {
    pub fn adapter(&self) -> Adapter {
        match self.adapter {
            AdapterKind::Canonical => Adapter::Canonical,
            AdapterKind::Dut => Adapter::Dut {
                frame_rate: self.frame_rate,
                meters_per_pixel: self.meters_per_pixel,
            },
            AdapterKind::Ind => Adapter::Ind {
                frame_rate: self.frame_rate,
                meters_per_pixel: self.meters_per_pixel,
            },
        }
    }
}

/// Hyper-parameters of the transformer apart from its input width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelShape {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: Option<usize>,
    pub dropout: f64,
}

impl ModelShape {
    pub fn with_features(&self, feature_dim: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ff: self.d_ff.unwrap_or(4 * self.d_model),
            feature_dim,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSettings {
    pub pedestrians_per_scene: usize,
    pub meters_per_pixel: f64,
    pub width_px: usize,
    pub height_px: usize,
}

impl Default for SynthSettings {
    fn default() -> Self {
        Self {
            pedestrians_per_scene: 1,
            meters_per_pixel: 0.1,
            width_px: 400,
            height_px: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub datasets: Vec<DatasetSpec>,
    pub window: WindowConfig,
    pub grid: PolarGridConfig,
    pub semantic: SemanticConfig,
    pub model: ModelShape,
    pub train: TrainConfig,
    pub horizons_s: Vec<f64>,
    pub horizon_mode: HorizonMode,
    pub rmse_mode: RmseMode,
    pub kalman: CvKalmanConfig,
    pub synth: SynthSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelConfig::desk(2);
        Self {
            output_dir: PathBuf::from("out"),
            seed: 0,
            datasets: Vec::new(),
            window: WindowConfig::default(),
            grid: PolarGridConfig::default(),
            semantic: SemanticConfig::default(),
            model: ModelShape {
                d_model: m.d_model,
                n_heads: m.n_heads,
                n_layers: m.n_layers,
                d_ff: None,
                dropout: m.dropout,
            },
            train: TrainConfig::default(),
            horizons_s: vec![1.0, 2.0, 3.0, 4.0, 5.0],
            horizon_mode: HorizonMode::Cumulative,
            rmse_mode: RmseMode::Pooled,
            kalman: CvKalmanConfig::default(),
            synth: SynthSettings::default(),
        }
    }
}

/// Parses `key=value` lines into `(line, key, value)` triples.
pub fn parse_lines(text: &str) -> Result<Vec<(usize, String, String)>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse {v:?}")))
}

fn resolve(base: &Path, v: &str) -> PathBuf {
    let p = PathBuf::from(v);
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::default();
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.apply_text(&text, &base)
            .map_err(|e| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, base: &Path) -> Result<(), CliError> {
        for (line, k, v) in parse_lines(text)? {
            self.set(&k, &v, base)
                .map_err(|e| CliError::Config(format!("line {line}: {}", e.message())))?;
        }
        Ok(())
    }

    fn dataset_mut(&mut self, name: &str) -> &mut DatasetSpec {
        if let Some(i) = self.datasets.iter().position(|d| d.name == name) {
            return &mut self.datasets[i];
        }
        self.datasets.push(DatasetSpec {
            name: name.to_string(),
            root: PathBuf::new(),
            adapter: AdapterKind::Canonical,
            frame_rate: 25.0,
            meters_per_pixel: 0.1,
        });
        self.datasets.last_mut().unwrap()
    }

    /// Applies one setting.
    pub fn set(&mut self, key: &str, v: &str, base: &Path) -> Result<(), CliError> {
        if let Some(rest) = key.strip_prefix("dataset.") {
            let (name, field) = rest
                .rsplit_once('.')
                .ok_or_else(|| CliError::Config(format!("{key}: expected dataset.<name>.<field>")))?;
            if name.is_empty() || name.contains(['/', '\\', ',', ':']) {
                return Err(CliError::Config(format!("{key}: invalid dataset name {name:?}")));
            }
            let d = self.dataset_mut(name);
            match field {
                "root" => d.root = resolve(base, v),
                "adapter" => {
                    d.adapter = match v {
                        "canonical" => AdapterKind::Canonical,
                        "dut" => AdapterKind::Dut,
                        "ind" => AdapterKind::Ind,
                        _ => return Err(CliError::Config(format!("{key}: unknown adapter {v:?} (canonical, dut, ind)"))),
                    }
                }
                "frame_rate" => d.frame_rate = num(key, v)?,
                "meters_per_pixel" => d.meters_per_pixel = num(key, v)?,
                _ => return Err(CliError::Config(format!("unknown key {key}"))),
            }
            return Ok(());
        }
        match key {
            "output_dir" => self.output_dir = resolve(base, v),
            "seed" => {
                self.seed = num(key, v)?;
                self.train.seed = self.seed;
            }
            "window.delta" => self.window.delta = num(key, v)?,
            "window.kappa" => self.window.kappa = num(key, v)?,
            "window.stride" => self.window.stride = num(key, v)?,
            "window.rate_hz" => self.window.rate_hz = num(key, v)?,
            "grid.th" => self.grid.th = num(key, v)?,
            "grid.radial_bins" => self.grid.radial_bins = num(key, v)?,
            "grid.angular_bins" => self.grid.angular_bins = num(key, v)?,
            "grid.type_channels" => self.grid.type_channels = num(key, v)?,
            "semantic.k" => self.semantic.k = num(key, v)?,
            "semantic.d_max" => self.semantic.d_max = num(key, v)?,
            "model.d_model" => self.model.d_model = num(key, v)?,
            "model.n_heads" => self.model.n_heads = num(key, v)?,
            "model.n_layers" => self.model.n_layers = num(key, v)?,
            "model.d_ff" => self.model.d_ff = Some(num(key, v)?),
            "model.dropout" => self.model.dropout = num(key, v)?,
            "train.epochs" => self.train.epochs = num(key, v)?,
            "train.learning_rate" => self.train.learning_rate = num(key, v)?,
            "train.beta1" => self.train.beta1 = num(key, v)?,
            "train.beta2" => self.train.beta2 = num(key, v)?,
            "train.epsilon" => self.train.epsilon = num(key, v)?,
            "train.batch_size" => self.train.batch_size = num(key, v)?,
            "train.grad_clip" => {
                self.train.grad_clip = match v {
                    "none" | "off" => None,
                    _ => Some(num(key, v)?),
                }
            }
            "train.warmup_steps" => self.train.warmup_steps = num(key, v)?,
            "train.val_fraction" => self.train.val_fraction = num(key, v)?,
            "train.checkpoint_every" => self.train.checkpoint_every = num(key, v)?,
            "eval.horizons" => {
                self.horizons_s = v.split(',').map(|h| num(key, h.trim())).collect::<Result<_, _>>()?;
            }
            "eval.horizon_mode" => {
                self.horizon_mode = match v {
                    "cumulative" => HorizonMode::Cumulative,
                    "at_step" => HorizonMode::AtStep,
                    _ => return Err(CliError::Config(format!("{key}: expected cumulative or at_step"))),
                }
            }
            "eval.rmse_mode" => {
                self.rmse_mode = match v {
                    "pooled" => RmseMode::Pooled,
                    "per_window" => RmseMode::PerWindow,
                    _ => return Err(CliError::Config(format!("{key}: expected pooled or per_window"))),
                }
            }
            "kalman.accel_noise" => self.kalman.accel_noise = num(key, v)?,
            "kalman.measurement_noise" => self.kalman.measurement_noise = num(key, v)?,
            "synth.pedestrians_per_scene" => self.synth.pedestrians_per_scene = num(key, v)?,
            "synth.meters_per_pixel" => self.synth.meters_per_pixel = num(key, v)?,
            "synth.width_px" => self.synth.width_px = num(key, v)?,
            "synth.height_px" => self.synth.height_px = num(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Applies `key=value` overrides from the command line.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), CliError> {
        let cwd = std::env::current_dir().unwrap_or_default();
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got {o:?}")))?;
            self.set(k.trim(), v.trim(), &cwd)?;
        }
        Ok(())
    }

    pub fn dataset(&self, name: &str) -> Result<&DatasetSpec, CliError> {
        self.datasets.iter().find(|d| d.name == name).ok_or_else(|| {
            let known: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
            CliError::Config(format!("dataset {name:?} is not configured (known: {})", known.join(", ")))
        })
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            horizons_s: self.horizons_s.clone(),
            rate_hz: self.window.rate_hz,
            horizon_mode: self.horizon_mode,
            rmse_mode: self.rmse_mode,
        }
    }

    /// Checks every nested invariant, plus that the named datasets' roots exist.
    pub fn validate(&self, datasets_used: &[&str]) -> Result<(), CliError> {
        let cfg = |e: String| CliError::Config(e);
        self.window.validate().map_err(|e| cfg(e.to_string()))?;
        self.grid.validate().map_err(|e| cfg(e.to_string()))?;
        self.semantic.validate().map_err(|e| cfg(e.to_string()))?;
        self.model
            .with_features(2)
            .validate()
            .map_err(|e| cfg(e.to_string()))?;
        self.train.validate().map_err(|e| cfg(e.to_string()))?;
        self.kalman.validate().map_err(|e| cfg(e.to_string()))?;
        self.eval_options()
            .horizon_steps(self.window.kappa)
            .map_err(|e| cfg(e.to_string()))?;
        if self.output_dir.as_os_str().is_empty() {
            return Err(cfg("output_dir is empty".into()));
        }
        let s = &self.synth;
        if s.pedestrians_per_scene == 0 || !(s.meters_per_pixel > 0.0) || s.width_px < 16 || s.height_px < 16 {
            return Err(cfg("synth settings need >= 1 pedestrian, positive scale and at least 16x16 px".into()));
        }
        for d in &self.datasets {
            if d.root.as_os_str().is_empty() {
                return Err(cfg(format!("dataset.{}.root is not set", d.name)));
            }
            if !(d.frame_rate > 0.0) || !(d.meters_per_pixel > 0.0) {
                return Err(cfg(format!("dataset.{}: frame_rate and meters_per_pixel must be positive", d.name)));
            }
        }
        for name in datasets_used {
            let d = self.dataset(name)?;
            if !d.root.is_dir() {
                return Err(cfg(format!("dataset.{}.root {} does not exist", d.name, d.root.display())));
            }
        }
        Ok(())
    }
}
