//! Command implementations. Every entry point validates the whole
//! configuration before it touches the file system.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use trajformer::context::{
    build_features, read_cache, write_cache, CacheEntry, CacheMeta, FeatureCache, FeatureLayout, FeatureStats, SceneAgents,
};
use trajformer::dataset::{extract_scene_windows, load_scene_metadata, load_tracks, resample, write_tracks, SceneMap};
use trajformer::evaluation::{
    emit_report, evaluate, write_predictions_csv, CvKalmanPredictor, MetricsTable, ModelPredictor, OraclePredictor, Predictor, ReportFormat,
    WindowPrediction,
};
use trajformer::model::{load_checkpoint, save_checkpoint, Checkpoint, EpochLog, Provenance, TrajectoryModel, Transformer};
use trajformer::training::{split_validation, TrainConfig, TrainError, Trainer, TrainingExample};

use crate::config::RunConfig;
use crate::synth::{self, Scenario};
use crate::{CliError, OutputLock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    ContextTf,
    VanillaTf,
    CvKalman,
    Oracle,
}

impl Method {
    pub const DEFAULT_EVAL: [Method; 3] = [Method::ContextTf, Method::VanillaTf, Method::CvKalman];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ContextTf => "context_tf",
            Method::VanillaTf => "vanilla_tf",
            Method::CvKalman => "cv_kalman",
            Method::Oracle => "oracle",
        }
    }

    pub fn is_trained(self) -> bool {
        matches!(self, Method::ContextTf | Method::VanillaTf)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        [Method::ContextTf, Method::VanillaTf, Method::CvKalman, Method::Oracle]
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| CliError::Usage(format!("unknown method {s:?}; valid methods: context_tf, vanilla_tf, cv_kalman, oracle")))
    }
}

/// Where each artifact lives under the output directory.
#[derive(Debug, Clone)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            root: cfg.output_dir.clone(),
        }
    }

    pub fn data_dir(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }

    pub fn canonical_dir(&self, dataset: &str) -> PathBuf {
        self.root.join("canonical").join(dataset)
    }

    pub fn cache_dir(&self, dataset: &str) -> PathBuf {
        self.root.join("cache").join(dataset)
    }

    pub fn checkpoint(&self, dataset: &str, method: Method) -> PathBuf {
        self.root.join("models").join(format!("{dataset}_{method}.ckpt"))
    }

    pub fn train_log(&self, dataset: &str, method: Method) -> PathBuf {
        self.root.join("logs").join(format!("{dataset}_{method}.csv"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn predictions(&self, dataset: &str, method: Method) -> PathBuf {
        self.root.join("predictions").join(format!("{dataset}_{method}.csv"))
    }

    pub fn plots_dir(&self, dataset: &str, method: Method) -> PathBuf {
        self.root.join("plots").join(format!("{dataset}_{method}"))
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn remove_dir(path: &Path) -> Result<(), CliError> {
    match std::fs::remove_dir_all(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(CliError::io(path, e)),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

#[derive(Debug, Clone)]
pub struct SynthReport {
    pub root: PathBuf,
    pub scenes: usize,
    pub tracks: usize,
}

/// Writes a synthetic dataset to `<output_dir>/data/<name>`.
pub fn cmd_synth(cfg: &RunConfig, scenario: Scenario, n: usize, seed: u64, name: &str) -> Result<SynthReport, CliError> {
    cfg.validate(&[])?;
    if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
        return Err(CliError::Usage(format!("invalid dataset name {name:?}")));
    }
    let scenes = synth::generate(scenario, n, seed, &cfg.synth)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let root = OutputLayout::new(cfg).data_dir(name);
    remove_dir(&root)?;
    synth::write_dataset(&root, &scenes)?;
    Ok(SynthReport {
        root,
        scenes: scenes.len(),
        tracks: scenes.iter().map(|s| s.tracks.len()).sum(),
    })
}

/// Track files of a dataset root: `tracks/*.csv` when that directory
/// exists, otherwise `*.csv` directly under the root, in name order.
pub fn track_files(root: &Path) -> Result<Vec<PathBuf>, CliError> {
    let dir = if root.join("tracks").is_dir() { root.join("tracks") } else { root.to_path_buf() };
    let mut files = Vec::new();
    for entry in std::fs::read_dir(&dir).map_err(|e| CliError::io(&dir, e))? {
        let path = entry.map_err(|e| CliError::io(&dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x.eq_ignore_ascii_case("csv")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Metadata file of a scene: `<root>/scenes/<scene_id>.scene`.
pub fn scene_metadata_path(root: &Path, scene_id: &str) -> PathBuf {
    root.join("scenes").join(format!("{scene_id}.scene"))
}

pub fn load_scene(root: &Path, scene_id: &str) -> Result<SceneMap, CliError> {
    let path = scene_metadata_path(root, scene_id);
    if !path.is_file() {
        return Err(CliError::Data(format!("no scene map for scene {scene_id}: {} is missing", path.display())));
    }
    Ok(load_scene_metadata(&path)?.load_map()?)
}

#[derive(Debug, Clone, Default)]
pub struct PreprocessReport {
    /// Window count per scene, in file order.
    pub scenes: Vec<(String, usize)>,
    pub warnings: Vec<String>,
    pub cache_dir: PathBuf,
}

impl PreprocessReport {
    pub fn total_windows(&self) -> usize {
        self.scenes.iter().map(|(_, n)| n).sum()
    }
}

/// Resamples every track, writes canonical CSVs and caches the full
/// context features of every window.
pub fn cmd_preprocess(cfg: &RunConfig, dataset: &str) -> Result<PreprocessReport, CliError> {
    cfg.validate(&[dataset])?;
    let spec = cfg.dataset(dataset)?;
    let files = track_files(&spec.root)?;
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let layout = OutputLayout::new(cfg);
    let canonical = layout.canonical_dir(dataset);
    let cache_dir = layout.cache_dir(dataset);
    remove_dir(&canonical)?;
    remove_dir(&cache_dir)?;
    create_dir(&canonical)?;

    let mut report = PreprocessReport {
        cache_dir: cache_dir.clone(),
        ..Default::default()
    };
    if files.is_empty() {
        report.warnings.push(format!("no track files under {}", spec.root.display()));
    }
    let rate = cfg.window.rate_hz;
    let mut entries = Vec::new();
    let mut seen = BTreeMap::new();
    for file in &files {
        let loaded = load_tracks(file, spec.adapter())?;
        if let Some(prev) = seen.insert(loaded.scene_id.clone(), file.clone()) {
            return Err(CliError::Data(format!(
                "scene {} appears in both {} and {}",
                loaded.scene_id,
                prev.display(),
                file.display()
            )));
        }
        let mut tracks = Vec::with_capacity(loaded.tracks.len());
        for t in &loaded.tracks {
            if t.samples.len() < 2 {
                report
                    .warnings
                    .push(format!("{}: skipping agent {} with a single sample", file.display(), t.agent_id));
                continue;
            }
            tracks.push(resample(t, rate)?);
        }
        let scene_id = loaded.scene_id;
        write_tracks(&canonical.join(format!("{scene_id}.csv")), &scene_id, &tracks)?;
        let windows = extract_scene_windows(&scene_id, &tracks, &cfg.window);
        if !windows.is_empty() {
            let map = load_scene(&spec.root, &scene_id)?;
            let agents = SceneAgents::new(&tracks, rate);
            let features = windows
                .par_iter()
                .map(|w| build_features(w, Some(&map), &agents, &cfg.grid, &cfg.semantic, true))
                .collect::<Result<Vec<_>, _>>()?;
            entries.extend(windows.into_iter().zip(features).map(|(window, features)| CacheEntry { window, features }));
        }
        report.scenes.push((scene_id, entries.len() - report.total_windows()));
    }
    let cache = FeatureCache {
        meta: CacheMeta {
            dataset: dataset.to_string(),
            context: true,
            feature_dim: FeatureLayout::full(&cfg.grid).dim(),
            window: cfg.window,
            grid: cfg.grid,
            semantic: cfg.semantic,
        },
        entries,
    };
    write_cache(&cache_dir, &cache)?;
    if report.total_windows() == 0 {
        report.warnings.push(format!("dataset {dataset} produced 0 windows"));
    }
    Ok(report)
}

/// Reads a dataset's cache and checks it was built with the current settings.
pub fn load_cache(cfg: &RunConfig, dataset: &str) -> Result<FeatureCache, CliError> {
    let dir = OutputLayout::new(cfg).cache_dir(dataset);
    if !dir.join("meta.txt").is_file() {
        return Err(CliError::Data(format!(
            "no feature cache for dataset {dataset} at {}; run preprocess first",
            dir.display()
        )));
    }
    let cache = read_cache(&dir)?;
    let m = &cache.meta;
    if m.window != cfg.window || m.grid != cfg.grid || m.semantic != cfg.semantic {
        return Err(CliError::Config(format!(
            "feature cache for {dataset} was built with different window, grid or semantic settings; rerun preprocess"
        )));
    }
    Ok(cache)
}

fn entries_for(method: Method, entries: &[CacheEntry]) -> Result<Vec<CacheEntry>, CliError> {
    match method {
        Method::VanillaTf => entries
            .iter()
            .map(|e| {
                Ok(CacheEntry {
                    window: e.window.clone(),
                    features: e.features.truncate(2)?,
                })
            })
            .collect(),
        _ => Ok(entries.to_vec()),
    }
}

fn provenance(cfg: &RunConfig, dataset: &str, method: Method) -> Provenance {
    Provenance {
        method: method.to_string(),
        train_dataset: dataset.to_string(),
        context: method == Method::ContextTf,
        window: cfg.window,
        grid: cfg.grid,
        semantic: cfg.semantic,
    }
}

pub const TRAIN_LOG_HEADER: &str = "epoch,train_loss,val_loss,wall_seconds";

fn log_line(log: &EpochLog) -> String {
    let val = log.val_loss.map(|v| v.to_string()).unwrap_or_default();
    format!("{},{},{val},{}\n", log.epoch, log.train_loss, log.wall_seconds)
}

/// Keeps the header and the first `epochs` rows of an existing log.
fn truncated_log(path: &Path, epochs: usize) -> Result<String, CliError> {
    let mut out = format!("{TRAIN_LOG_HEADER}\n");
    let Ok(text) = std::fs::read_to_string(path) else {
        return Ok(out);
    };
    for line in text.lines().skip(1) {
        let epoch: usize = line.split(',').next().and_then(|e| e.parse().ok()).unwrap_or(usize::MAX);
        if epoch <= epochs {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub train_windows: usize,
    pub val_windows: usize,
    pub history: Vec<EpochLog>,
}

/// Fits one method on one dataset and writes its checkpoint and epoch log.
pub fn cmd_train(cfg: &RunConfig, dataset: &str, method: Method, resume: bool, mut on_epoch: impl FnMut(&EpochLog)) -> Result<TrainReport, CliError> {
    cfg.validate(&[dataset])?;
    if !method.is_trained() {
        return Err(CliError::Usage(format!("{method} has nothing to train; use context_tf or vanilla_tf")));
    }
    let layout = OutputLayout::new(cfg);
    let ckpt_path = layout.checkpoint(dataset, method);
    let log_path = layout.train_log(dataset, method);
    if resume && !ckpt_path.is_file() {
        return Err(CliError::Usage(format!("nothing to resume: {} does not exist", ckpt_path.display())));
    }
    let cache = load_cache(cfg, dataset)?;
    if cache.entries.is_empty() {
        return Err(CliError::Data(format!("dataset {dataset} has no windows to train on")));
    }
    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let entries = entries_for(method, &cache.entries)?;
    let dim = entries[0].features.dim;
    let model_cfg = cfg.model.with_features(dim);
    let prov = provenance(cfg, dataset, method);
    let (train_idx, val_idx) = split_validation(entries.len(), cfg.train.val_fraction, cfg.train.seed);

    let (mut trainer, stats) = if resume {
        let ck = load_checkpoint(&ckpt_path)?;
        if ck.provenance != prov || ck.model.transformer.config() != &model_cfg {
            return Err(CliError::Config(format!(
                "{} was trained with different data or model settings",
                ckpt_path.display()
            )));
        }
        let state = ck
            .training
            .ok_or_else(|| CliError::Config(format!("{} has no optimizer state to resume from", ckpt_path.display())))?;
        let stored: TrainConfig = serde_json::from_value(state.train_config.clone())
            .map_err(|e| CliError::Data(format!("{}: unreadable training settings: {e}", ckpt_path.display())))?;
        if (TrainConfig { epochs: cfg.train.epochs, ..stored }) != cfg.train {
            return Err(CliError::Config("training settings other than train.epochs changed since the checkpoint".into()));
        }
        (Trainer::resume(ck.model.transformer, cfg.train.clone(), state)?, ck.model.stats)
    } else {
        let seqs: Vec<_> = train_idx.iter().map(|&i| &entries[i].features).collect();
        let stats = FeatureStats::fit_sequences(&seqs)?;
        (Trainer::new(Transformer::new(model_cfg, cfg.seed)?, cfg.train.clone())?, stats)
    };

    let view = TrajectoryModel::new(trainer.model.clone(), stats.clone())?;
    let prepare = |idx: &[usize]| -> Result<Vec<TrainingExample>, CliError> {
        idx.iter().map(|&i| Ok(TrainingExample::from_entry(&view, &entries[i])?)).collect()
    };
    let train_set = prepare(&train_idx)?;
    let val_set = prepare(&val_idx)?;

    let mut log = if resume {
        truncated_log(&log_path, trainer.epochs_done())?
    } else {
        format!("{TRAIN_LOG_HEADER}\n")
    };
    write_file(&log_path, &log)?;
    let save = |trainer: &Trainer| -> Result<(), CliError> {
        create_dir(ckpt_path.parent().expect("checkpoint path has a parent"))?;
        let ck = Checkpoint {
            model: TrajectoryModel::new(trainer.model.clone(), stats.clone())?,
            provenance: prov.clone(),
            training: Some(trainer.training_state()),
        };
        Ok(save_checkpoint(&ckpt_path, &ck)?)
    };
    let every = cfg.train.checkpoint_every;
    let mut side_error: Option<CliError> = None;
    let fitted = trainer.fit(&train_set, &val_set, |t, epoch_log| {
        on_epoch(epoch_log);
        log.push_str(&log_line(epoch_log));
        let mut step = write_file(&log_path, &log);
        if step.is_ok() && every > 0 && epoch_log.epoch % every == 0 {
            step = save(t);
        }
        step.map_err(|e| {
            side_error = Some(e);
            TrainError::Config("interrupted".into())
        })
    });
    if let Some(e) = side_error {
        return Err(e);
    }
    fitted?;
    save(&trainer)?;
    Ok(TrainReport {
        checkpoint: ckpt_path,
        log: log_path,
        train_windows: train_set.len(),
        val_windows: val_set.len(),
        history: trainer.history,
    })
}

#[derive(Debug, Clone, Default)]
pub struct EvaluateOptions {
    /// Test datasets; all configured datasets when empty.
    pub tests: Vec<String>,
    /// Dataset the models were trained on; the other configured dataset by default.
    pub train: Option<String>,
    pub methods: Vec<Method>,
    pub oracle: bool,
    pub allow_same_dataset: bool,
    pub dump_predictions: bool,
}

#[derive(Debug, Clone)]
pub struct EvaluateReport {
    pub table: MetricsTable,
    pub csv: PathBuf,
    pub markdown: PathBuf,
    pub dumps: Vec<PathBuf>,
}

fn training_dataset_for(cfg: &RunConfig, test: &str, explicit: Option<&str>) -> Result<String, CliError> {
    if let Some(t) = explicit {
        return Ok(t.to_string());
    }
    let others: Vec<&str> = cfg.datasets.iter().map(|d| d.name.as_str()).filter(|n| *n != test).collect();
    match others.as_slice() {
        [one] => Ok(one.to_string()),
        _ => Err(CliError::Usage(format!(
            "cannot infer the training dataset for {test} among {} other datasets; pass --train",
            others.len()
        ))),
    }
}

/// Loads a trained model and checks it against the test cache.
fn load_model(path: &Path, method: Option<Method>, cache: &FeatureCache) -> Result<(Checkpoint, Method), CliError> {
    if !path.is_file() {
        return Err(CliError::Data(format!("checkpoint {} not found; run train first", path.display())));
    }
    let ck = load_checkpoint(path)?;
    let stored: Method = ck
        .provenance
        .method
        .parse()
        .map_err(|_| CliError::Data(format!("{}: unknown method {:?}", path.display(), ck.provenance.method)))?;
    if method.is_some_and(|m| m != stored) || !stored.is_trained() {
        return Err(CliError::Data(format!("{} holds a {stored} model", path.display())));
    }
    let (p, m) = (&ck.provenance, &cache.meta);
    if p.window != m.window || p.grid != m.grid || p.semantic != m.semantic {
        return Err(CliError::Config(format!(
            "{} was trained with window, grid or semantic settings that differ from the {} features",
            path.display(),
            m.dataset
        )));
    }
    let dim = ck.model.feature_dim();
    if dim != m.feature_dim && dim != 2 {
        return Err(CliError::Config(format!(
            "{} expects {dim} features but dataset {} provides {}",
            path.display(),
            m.dataset,
            m.feature_dim
        )));
    }
    Ok((ck, stored))
}

/// Scores every method on every test dataset and writes the report files.
pub fn cmd_evaluate(cfg: &RunConfig, opts: &EvaluateOptions) -> Result<EvaluateReport, CliError> {
    let tests: Vec<String> = if opts.tests.is_empty() {
        cfg.datasets.iter().map(|d| d.name.clone()).collect()
    } else {
        opts.tests.clone()
    };
    if tests.is_empty() {
        return Err(CliError::Usage("no test dataset given and none configured".into()));
    }
    let mut methods = if opts.methods.is_empty() { Method::DEFAULT_EVAL.to_vec() } else { opts.methods.clone() };
    if opts.oracle && !methods.contains(&Method::Oracle) {
        methods.push(Method::Oracle);
    }
    let needs_models = methods.iter().any(|m| m.is_trained());
    let mut pairs = Vec::new();
    for t in &tests {
        let train = if needs_models { Some(training_dataset_for(cfg, t, opts.train.as_deref())?) } else { None };
        if train.as_deref() == Some(t.as_str()) && !opts.allow_same_dataset {
            return Err(CliError::Usage(format!(
                "models trained on {t} would be tested on {t}; the cross-dataset protocol forbids this (override with --allow-same-dataset)"
            )));
        }
        pairs.push((t.clone(), train));
    }
    let mut used: Vec<&str> = tests.iter().map(String::as_str).collect();
    used.extend(pairs.iter().filter_map(|(_, tr)| tr.as_deref()));
    cfg.validate(&used)?;

    let layout = OutputLayout::new(cfg);
    let eval_opts = cfg.eval_options();
    let mut table = MetricsTable::default();
    let mut all_predictions: Vec<(String, Method, Vec<WindowPrediction>)> = Vec::new();
    for (test, train) in &pairs {
        let cache = load_cache(cfg, test)?;
        for &method in &methods {
            let predictor: Box<dyn Predictor> = match method {
                Method::CvKalman => Box::new(CvKalmanPredictor {
                    config: cfg.kalman,
                    rate_hz: cfg.window.rate_hz,
                }),
                Method::Oracle => Box::new(OraclePredictor),
                _ => {
                    let train = train.as_deref().expect("trained methods have a training dataset");
                    let (ck, _) = load_model(&layout.checkpoint(train, method), Some(method), &cache)?;
                    if ck.provenance.train_dataset == *test && !opts.allow_same_dataset {
                        return Err(CliError::Usage(format!(
                            "the {method} checkpoint was trained on {test}; pass --allow-same-dataset to test on it anyway"
                        )));
                    }
                    Box::new(ModelPredictor {
                        name: method.to_string(),
                        model: ck.model,
                    })
                }
            };
            let result = evaluate(predictor.as_ref(), test, &cache.entries, &eval_opts)?;
            table.extend(result.rows);
            if opts.dump_predictions {
                all_predictions.push((test.clone(), method, result.predictions));
            }
        }
    }

    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let reports = layout.reports_dir();
    create_dir(&reports)?;
    let csv = reports.join("metrics.csv");
    let markdown = reports.join("metrics.md");
    emit_report(&table, ReportFormat::Csv, &csv)?;
    emit_report(&table, ReportFormat::Markdown, &markdown)?;
    let mut dumps = Vec::new();
    for (test, method, preds) in &all_predictions {
        let path = layout.predictions(test, *method);
        create_dir(path.parent().expect("predictions path has a parent"))?;
        write_predictions_csv(&path, method.as_str(), preds)?;
        dumps.push(path);
    }
    Ok(EvaluateReport {
        table,
        csv,
        markdown,
        dumps,
    })
}

#[derive(Debug, Clone, Default)]
pub struct PredictOptions {
    pub test: String,
    pub checkpoint: Option<PathBuf>,
    pub train: Option<String>,
    pub method: Option<Method>,
    /// Only the first `limit` windows.
    pub limit: Option<usize>,
    pub plot: bool,
}

#[derive(Debug, Clone)]
pub struct PredictReport {
    pub method: Method,
    pub windows: usize,
    pub dump: PathBuf,
    pub plots: Vec<PathBuf>,
}

fn file_stem_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Runs one trained model on a dataset's windows, dumps the predictions and
/// optionally draws one SVG per window.
pub fn cmd_predict(cfg: &RunConfig, opts: &PredictOptions) -> Result<PredictReport, CliError> {
    let layout = OutputLayout::new(cfg);
    let ckpt_path = match (&opts.checkpoint, &opts.train, opts.method) {
        (Some(p), _, _) => p.clone(),
        (None, Some(train), Some(m)) => layout.checkpoint(train, m),
        _ => return Err(CliError::Usage("predict needs --checkpoint, or --train together with --method".into())),
    };
    let mut used = vec![opts.test.as_str()];
    used.extend(opts.train.as_deref());
    cfg.validate(&used)?;
    let root = cfg.dataset(&opts.test)?.root.clone();
    let cache = load_cache(cfg, &opts.test)?;
    let (ck, method) = load_model(&ckpt_path, opts.method, &cache)?;
    let entries: Vec<CacheEntry> = cache.entries.iter().take(opts.limit.unwrap_or(usize::MAX)).cloned().collect();
    if entries.is_empty() {
        return Err(CliError::Data(format!("dataset {} has no windows", opts.test)));
    }
    let maps: BTreeMap<String, SceneMap> = if opts.plot {
        let mut maps = BTreeMap::new();
        for e in &entries {
            if !maps.contains_key(&e.window.scene_id) {
                maps.insert(e.window.scene_id.clone(), load_scene(&root, &e.window.scene_id)?);
            }
        }
        maps
    } else {
        BTreeMap::new()
    };
    let kappa = cfg.window.kappa;
    let predictor = ModelPredictor {
        name: method.to_string(),
        model: ck.model,
    };
    let predictions = entries
        .par_iter()
        .map(|e| {
            Ok(WindowPrediction {
                scene_id: e.window.scene_id.clone(),
                ego_id: e.window.ego_id.clone(),
                start_index: e.window.start_index,
                predicted: predictor.predict(e, kappa)?,
                truth: e.window.future_meters(),
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let _lock = OutputLock::acquire(&cfg.output_dir)?;
    let dump = layout.predictions(&opts.test, method);
    create_dir(dump.parent().expect("predictions path has a parent"))?;
    write_predictions_csv(&dump, method.as_str(), &predictions)?;
    let mut plots = Vec::new();
    if opts.plot {
        let dir = layout.plots_dir(&opts.test, method);
        remove_dir(&dir)?;
        create_dir(&dir)?;
        for (e, p) in entries.iter().zip(&predictions) {
            let map = &maps[&e.window.scene_id];
            let observed: Vec<[f64; 2]> = e.window.observed.iter().map(|s| s.meters()).collect();
            let title = format!("{method} {} {} from sample {}", p.scene_id, p.ego_id, p.start_index);
            let svg = crate::svg::render_window(map, &title, &observed, &p.predicted, &p.truth)?;
            let path = dir.join(format!("{}_{}_{}.svg", file_stem_safe(&p.scene_id), file_stem_safe(&p.ego_id), p.start_index));
            write_file(&path, &svg)?;
            plots.push(path);
        }
    }
    Ok(PredictReport {
        method,
        windows: predictions.len(),
        dump,
        plots,
    })
}
