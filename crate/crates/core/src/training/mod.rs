//! Teacher-forced L2 training with Adam.

mod adam;
mod gradcheck;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{relative_error, verify_gradients, GradientCheckReport, GradientSample, FINITE_DIFFERENCE_STEP, RELATIVE_ERROR_FLOOR};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::{future_offsets, CacheEntry};
use crate::model::{EpochLog, ModelError, TrainingState, TrajectoryModel, Transformer};
use crate::numerics::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite gradient for {0}")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: {detail}")]
    Divergence { epoch: usize, batch: usize, detail: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm clip.
    pub grad_clip: Option<f64>,
    /// Linear learning-rate ramp over this many optimizer steps.
    pub warmup_steps: u64,
    pub val_fraction: f64,
    /// Checkpoint cadence in epochs; 0 disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
            batch_size: 32,
            seed: 0,
            grad_clip: None,
            warmup_steps: 0,
            val_fraction: 0.1,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip must be positive, got {c}"));
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.learning_rate
        } else {
            self.learning_rate * step as f64 / self.warmup_steps as f64
        }
    }
}

/// A window prepared for the model: standardized features and standardized
/// target offsets `o_1..o_κ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub features: Tensor,
    pub targets: Vec<[f64; 2]>,
}

impl TrainingExample {
    pub fn from_entry(model: &TrajectoryModel, entry: &CacheEntry) -> Result<Self, ModelError> {
        Ok(Self {
            features: model.standardized_features(&entry.features)?,
            targets: model.standardize_offsets(&future_offsets(&entry.window)),
        })
    }
}

/// Mean of all squared differences.
pub fn l2_loss(pred: &Tensor, target: &Tensor) -> Result<f64, TrainError> {
    if pred.shape() != target.shape() {
        return Err(TrainError::Shape(format!("prediction {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    if pred.is_empty() {
        return Err(TrainError::Shape("empty sequences".into()));
    }
    let sum: f64 = pred.data().iter().zip(target.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sum / pred.len() as f64)
}

fn example_loss_and_gradients(model: &Transformer, ex: &TrainingExample, dropout_seed: Option<u64>) -> Result<(f64, Vec<Tensor>), TrainError> {
    let mut fwd = match dropout_seed {
        Some(s) => model.forward_train(s),
        None => model.forward(),
    };
    let pred = fwd.teacher_forced(&ex.features, &ex.targets)?;
    let target = fwd.graph.leaf(Tensor::from_rows(&ex.targets).map_err(ModelError::from)?);
    let loss = fwd.graph.mse(pred, target).map_err(ModelError::from)?;
    let value = fwd.graph.value(loss).data()[0];
    let grads = fwd.param_gradients(loss)?;
    Ok((value, grads))
}

/// Mean teacher-forced loss over `batch` and its parameter gradients.
///
/// Per-window passes run in parallel; the reduction is sequential in batch
/// order, so the result does not depend on the thread count.
pub fn batch_loss_and_gradients(model: &Transformer, batch: &[TrainingExample], dropout_seed: Option<u64>) -> Result<(f64, Vec<Tensor>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::Shape("empty batch".into()));
    }
    let parts: Vec<(f64, Vec<Tensor>)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, ex)| example_loss_and_gradients(model, ex, dropout_seed.map(|s| mix(s, i as u64))))
        .collect::<Result<_, _>>()?;
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grads: Vec<Tensor> = model.params().tensors().map(|t| Tensor::zeros(t.shape())).collect();
    for (l, g) in &parts {
        loss += l;
        for (acc, part) in grads.iter_mut().zip(g) {
            for (a, b) in acc.data_mut().iter_mut().zip(part.data()) {
                *a += b;
            }
        }
    }
    for g in &mut grads {
        g.data_mut().iter_mut().for_each(|v| *v /= n);
    }
    Ok((loss / n, grads))
}

/// Mean teacher-forced loss without gradients.
pub fn evaluate_loss(model: &Transformer, examples: &[TrainingExample]) -> Result<f64, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::Shape("no examples".into()));
    }
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| {
            let mut fwd = model.forward();
            let pred = fwd.teacher_forced(&ex.features, &ex.targets)?;
            let target = Tensor::from_rows(&ex.targets).map_err(ModelError::from)?;
            l2_loss(fwd.graph.value(pred), &target)
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(losses.iter().sum::<f64>() / examples.len() as f64)
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic train/validation split of `n` windows.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let n_val = if n < 2 { 0 } else { ((n as f64 * fraction).round() as usize).min(n - 1) };
    if n_val == 0 {
        return (idx, Vec::new());
    }
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, u64::MAX)));
    let val = {
        let mut v = idx[..n_val].to_vec();
        v.sort_unstable();
        v
    };
    let mut train = idx[n_val..].to_vec();
    train.sort_unstable();
    (train, val)
}

fn clip_gradients(grads: &mut [Tensor], max_norm: f64) {
    let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| g.data_mut().iter_mut().for_each(|v| *v *= s));
    }
}

/// Optimizer loop state; resumable from a [`TrainingState`].
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Transformer,
    pub adam: AdamState,
    pub history: Vec<EpochLog>,
}

impl Trainer {
    pub fn new(model: Transformer, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let adam = AdamState::new(model.params());
        Ok(Self {
            config,
            model,
            adam,
            history: Vec::new(),
        })
    }

    pub fn resume(model: Transformer, config: TrainConfig, state: TrainingState) -> Result<Self, TrainError> {
        config.validate()?;
        let adam = AdamState {
            step: state.step,
            m: state.first_moment,
            v: state.second_moment,
        };
        if !adam.matches(model.params()) {
            return Err(TrainError::Shape("stored optimizer state does not match the model".into()));
        }
        if state.history.len() != state.epochs_done {
            return Err(TrainError::Config("stored history length differs from completed epochs".into()));
        }
        Ok(Self {
            config,
            model,
            adam,
            history: state.history,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn is_finished(&self) -> bool {
        self.epochs_done() >= self.config.epochs
    }

    pub fn training_state(&self) -> TrainingState {
        TrainingState {
            epochs_done: self.epochs_done(),
            step: self.adam.step,
            first_moment: self.adam.m.clone(),
            second_moment: self.adam.v.clone(),
            history: self.history.clone(),
            train_config: serde_json::to_value(&self.config).expect("config serializes"),
        }
    }

    /// Runs one shuffled pass over `train`, then scores `val`.
    pub fn run_epoch(&mut self, train: &[TrainingExample], val: &[TrainingExample]) -> Result<EpochLog, TrainError> {
        if train.is_empty() {
            return Err(TrainError::Config("no training windows".into()));
        }
        let started = Instant::now();
        let epoch = self.epochs_done() + 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(self.config.seed, epoch as u64)));
        let dropout = self.model.config().dropout > 0.0;
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<TrainingExample> = chunk.iter().map(|&i| train[i].clone()).collect();
            let seed = dropout.then(|| mix(self.config.seed ^ 0xD5A6_1266_F0C9_392C, self.adam.step));
            let (loss, mut grads) = batch_loss_and_gradients(&self.model, &batch, seed).map_err(|e| divergence(e, epoch, b))?;
            if !loss.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: b,
                    detail: format!("loss is {loss}"),
                });
            }
            if let Some(c) = self.config.grad_clip {
                clip_gradients(&mut grads, c);
            }
            adam_step(self.model.params_mut(), &grads, &mut self.adam, &self.config).map_err(|e| divergence(e, epoch, b))?;
            loss_sum += loss * chunk.len() as f64;
        }
        let val_loss = if val.is_empty() { None } else { Some(evaluate_loss(&self.model, val)?) };
        let log = EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            val_loss,
            wall_seconds: started.elapsed().as_secs_f64(),
        };
        self.history.push(log.clone());
        Ok(log)
    }

    /// Runs the remaining epochs, calling `after_epoch` after each one.
    pub fn fit<F>(&mut self, train: &[TrainingExample], val: &[TrainingExample], mut after_epoch: F) -> Result<(), TrainError>
    where
        F: FnMut(&Trainer, &EpochLog) -> Result<(), TrainError>,
    {
        while !self.is_finished() {
            let log = self.run_epoch(train, val)?;
            after_epoch(self, &log)?;
        }
        Ok(())
    }
}

fn divergence(e: TrainError, epoch: usize, batch: usize) -> TrainError {
    match e {
        TrainError::NonFiniteGradient(p) => TrainError::Divergence {
            epoch,
            batch,
            detail: format!("non-finite gradient for {p}"),
        },
        TrainError::Model(ModelError::Divergence(what)) => TrainError::Divergence { epoch, batch, detail: what },
        other => other,
    }
}

/// Trains from scratch for `cfg.epochs` epochs and returns the per-epoch log.
pub fn train(model: Transformer, train_set: &[TrainingExample], val_set: &[TrainingExample], cfg: TrainConfig) -> Result<(Transformer, Vec<EpochLog>), TrainError> {
    let mut trainer = Trainer::new(model, cfg)?;
    trainer.fit(train_set, val_set, |_, _| Ok(()))?;
    Ok((trainer.model, trainer.history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use rand::Rng;

    fn tiny(feature_dim: usize) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 1,
            n_layers: 1,
            d_ff: 32,
            feature_dim,
            dropout: 0.0,
        }
    }

    fn examples(n: usize, steps: usize, kappa: usize, dim: usize, seed: u64) -> Vec<TrainingExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                let mut data = Vec::new();
                for _ in 0..steps {
                    data.extend([v[0], v[1]]);
                    data.extend((2..dim).map(|_| rng.random_range(-1.0..1.0)));
                }
                TrainingExample {
                    features: Tensor::matrix(steps, dim, data).unwrap(),
                    targets: vec![v; kappa],
                }
            })
            .collect()
    }

    #[test]
    fn l2_loss_examples() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(l2_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(l2_loss(&a, &a.map(|v| v + 1.0)).unwrap(), 1.0);
        assert!(l2_loss(&a, &Tensor::zeros(&[1, 2])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let k = 17;
        let p: Vec<[f64; 2]> = (0..k).map(|_| [rng.random(), rng.random()]).collect();
        let t: Vec<[f64; 2]> = (0..k).map(|_| [rng.random(), rng.random()]).collect();
        let mut oracle = 0.0;
        for i in 0..k {
            for c in 0..2 {
                oracle += (p[i][c] - t[i][c]).powi(2);
            }
        }
        oracle /= 2.0 * k as f64;
        let got = l2_loss(&Tensor::from_rows(&p).unwrap(), &Tensor::from_rows(&t).unwrap()).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { learning_rate: 0.0, ..Default::default() },
            TrainConfig { beta1: 1.0, ..Default::default() },
            TrainConfig { beta2: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
            TrainConfig { grad_clip: Some(-1.0), ..Default::default() },
        ] {
            assert!(matches!(Trainer::new(Transformer::new(tiny(2), 0).unwrap(), bad), Err(TrainError::Config(_))));
        }
    }

    #[test]
    fn warmup_ramps_linearly() {
        let cfg = TrainConfig { warmup_steps: 4, learning_rate: 1.0, ..Default::default() };
        assert_eq!(cfg.learning_rate_at(1), 0.25);
        assert_eq!(cfg.learning_rate_at(4), 1.0);
        assert_eq!(cfg.learning_rate_at(100), 1.0);
    }

    #[test]
    fn validation_split_is_deterministic_and_disjoint() {
        let (t1, v1) = split_validation(50, 0.1, 3);
        let (t2, v2) = split_validation(50, 0.1, 3);
        assert_eq!((t1.clone(), v1.clone()), (t2, v2));
        assert_eq!(v1.len(), 5);
        assert_eq!(t1.len(), 45);
        assert!(v1.iter().all(|i| !t1.contains(i)));
        assert_eq!(split_validation(1, 0.5, 0).1.len(), 0);
    }

    #[test]
    fn same_seed_gives_identical_curves_and_weights() {
        let data = examples(6, 4, 3, 4, 2);
        let cfg = TrainConfig { epochs: 3, batch_size: 4, learning_rate: 1e-3, ..Default::default() };
        let run = || train(Transformer::new(tiny(4), 5).unwrap(), &data[..5], &data[5..], cfg.clone()).unwrap();
        let (m1, h1) = run();
        let (m2, h2) = run();
        assert_eq!(m1.params(), m2.params());
        let losses = |h: &[EpochLog]| h.iter().map(|e| (e.train_loss.to_bits(), e.val_loss.map(f64::to_bits))).collect::<Vec<_>>();
        assert_eq!(losses(&h1), losses(&h2));
        assert_eq!(h1.iter().map(|e| e.epoch).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn resuming_matches_uninterrupted_run() {
        let data = examples(5, 4, 3, 4, 4);
        let cfg = TrainConfig { epochs: 4, batch_size: 2, learning_rate: 1e-3, ..Default::default() };
        let (full, _) = train(Transformer::new(tiny(4), 1).unwrap(), &data, &[], cfg.clone()).unwrap();

        let mut first = Trainer::new(Transformer::new(tiny(4), 1).unwrap(), cfg.clone()).unwrap();
        first.run_epoch(&data, &[]).unwrap();
        first.run_epoch(&data, &[]).unwrap();
        let state = first.training_state();
        let mut second = Trainer::resume(first.model.clone(), cfg, state).unwrap();
        second.fit(&data, &[], |_, _| Ok(())).unwrap();
        assert_eq!(second.model.params(), full.params());
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let data = examples(7, 4, 3, 4, 6);
        let model = Transformer::new(tiny(4), 2).unwrap();
        let (l1, g1) = batch_loss_and_gradients(&model, &data, None).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (l2, g2) = pool.install(|| batch_loss_and_gradients(&model, &data, None)).unwrap();
        assert_eq!(l1.to_bits(), l2.to_bits());
        assert_eq!(g1, g2);
    }

    #[test]
    fn training_reduces_loss() {
        let data = examples(8, 5, 4, 2, 8);
        let cfg = TrainConfig { epochs: 30, batch_size: 8, learning_rate: 3e-3, ..Default::default() };
        let (_, history) = train(Transformer::new(tiny(2), 3).unwrap(), &data, &[], cfg).unwrap();
        assert!(history.last().unwrap().train_loss < 0.5 * history[0].train_loss);
    }

    #[test]
    fn divergence_reports_epoch_and_batch() {
        let mut data = examples(4, 3, 2, 2, 9);
        data[3].targets[0][0] = f64::NAN;
        let cfg = TrainConfig { epochs: 1, batch_size: 2, ..Default::default() };
        let err = train(Transformer::new(tiny(2), 0).unwrap(), &data, &[], cfg).unwrap_err();
        assert!(matches!(err, TrainError::Divergence { epoch: 1, .. }), "{err}");
    }

    #[test]
    fn gradient_check_on_tiny_model() {
        let data = examples(2, 4, 3, 10, 10);
        let model = Transformer::new(tiny(10), 12).unwrap();
        let report = verify_gradients(&model, &data, None, 20, 1).unwrap();
        assert_eq!(report.samples.len(), 20);
        assert!(report.max_rel_error() < 1e-4, "{:?}", report.worst());
    }

    #[test]
    fn detached_parameters_have_zero_gradient() {
        let data = examples(2, 4, 3, 2, 11);
        let mut model = Transformer::new(tiny(2), 13).unwrap();
        let out_w = model.params().index_of("out.w").unwrap();
        model.params_mut().get_mut(out_w).data_mut().fill(0.0);
        let (_, grads) = batch_loss_and_gradients(&model, &data, None).unwrap();
        for (i, g) in grads.iter().enumerate() {
            let name = model.params().name(i);
            if name.starts_with("encoder.") || name.starts_with("decoder.") || name.starts_with("src_embed") {
                assert!(g.data().iter().all(|v| v.abs() < 1e-10), "{name}");
            }
        }
    }

    #[test]
    fn scaling_the_loss_scales_gradients() {
        let data = examples(1, 4, 3, 2, 12);
        let model = Transformer::new(tiny(2), 14).unwrap();
        let ex = &data[0];
        let run = |scale: f64| {
            let mut fwd = model.forward();
            let pred = fwd.teacher_forced(&ex.features, &ex.targets).unwrap();
            let t = fwd.graph.leaf(Tensor::from_rows(&ex.targets).unwrap());
            let l = fwd.graph.mse(pred, t).unwrap();
            let l = fwd.graph.scale(l, scale);
            fwd.param_gradients(l).unwrap()
        };
        let (g1, g2) = (run(1.0), run(2.0));
        for (a, b) in g1.iter().zip(&g2) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((y - 2.0 * x).abs() <= 1e-10 * (2.0 * x).abs().max(1e-300));
            }
        }
    }
}
