//! Displacement metrics, the evaluation loop, baselines and reports.

mod kalman;
mod report;

pub use kalman::{cv_kalman_predict, CvKalmanConfig, CvKalmanState};
pub use report::{emit_report, format_csv, format_markdown, parse_csv, write_predictions_csv, ReportFormat, REPORT_HEADER};

use rayon::prelude::*;

use crate::context::CacheEntry;
use crate::model::{ModelError, TrajectoryModel};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid evaluation setting: {0}")]
    Config(String),
    #[error("no windows to evaluate")]
    Empty,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Context(#[from] crate::context::ContextError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("report line {line}: {message}")]
    Parse { line: usize, message: String },
}

fn distances<'a>(pred: &'a [[f64; 2]], gt: &'a [[f64; 2]], upto: usize) -> Result<impl Iterator<Item = f64> + 'a, EvalError> {
    if pred.len() != gt.len() {
        return Err(EvalError::Shape(format!("{} predicted vs {} ground-truth steps", pred.len(), gt.len())));
    }
    if upto == 0 || upto > pred.len() {
        return Err(EvalError::Shape(format!("upto_step {upto} outside 1..={}", pred.len())));
    }
    Ok(pred[..upto].iter().zip(gt).map(|(p, g)| (p[0] - g[0]).hypot(p[1] - g[1])))
}

/// Mean Euclidean distance over steps `1..=upto`.
pub fn ade(pred: &[[f64; 2]], gt: &[[f64; 2]], upto: usize) -> Result<f64, EvalError> {
    Ok(distances(pred, gt, upto)?.sum::<f64>() / upto as f64)
}

/// Root of the mean squared Euclidean distance over steps `1..=upto`.
pub fn rmse(pred: &[[f64; 2]], gt: &[[f64; 2]], upto: usize) -> Result<f64, EvalError> {
    Ok((distances(pred, gt, upto)?.map(|d| d * d).sum::<f64>() / upto as f64).sqrt())
}

/// Which steps a horizon's score covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HorizonMode {
    /// All steps from 1 up to the horizon.
    #[default]
    Cumulative,
    /// Only the horizon step itself.
    AtStep,
}

/// How RMSE combines windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RmseMode {
    /// Root of the mean over every (window, step) squared error.
    #[default]
    Pooled,
    /// Mean of per-window RMSE values.
    PerWindow,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub horizons_s: Vec<f64>,
    pub rate_hz: f64,
    pub horizon_mode: HorizonMode,
    pub rmse_mode: RmseMode,
}

impl EvalOptions {
    pub fn new(horizons_s: Vec<f64>, rate_hz: f64) -> Self {
        Self {
            horizons_s,
            rate_hz,
            horizon_mode: HorizonMode::default(),
            rmse_mode: RmseMode::default(),
        }
    }

    /// Step count of each horizon at the sampling rate.
    pub fn horizon_steps(&self, kappa: usize) -> Result<Vec<usize>, EvalError> {
        if self.horizons_s.is_empty() {
            return Err(EvalError::Config("no horizons given".into()));
        }
        self.horizons_s
            .iter()
            .map(|&h| {
                let steps = (h * self.rate_hz).round();
                if !(steps >= 1.0 && steps <= kappa as f64) {
                    Err(EvalError::Config(format!("horizon {h} s is {steps} steps, outside 1..={kappa}")))
                } else {
                    Ok(steps as usize)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub dataset: String,
    pub method: String,
    pub horizon_s: f64,
    pub ade_m: f64,
    pub rmse_m: f64,
    pub n_windows: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn extend(&mut self, rows: impl IntoIterator<Item = MetricsRow>) {
        self.rows.extend(rows);
    }

    pub fn get(&self, dataset: &str, method: &str, horizon_s: f64) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.dataset == dataset && r.method == method && r.horizon_s == horizon_s)
    }
}

/// Anything that turns a prepared window into `kappa` absolute positions.
pub trait Predictor: Sync {
    fn name(&self) -> &str;
    fn predict(&self, entry: &CacheEntry, kappa: usize) -> Result<Vec<[f64; 2]>, EvalError>;
}

/// The transformer, fed context features or offsets only.
pub struct ModelPredictor {
    pub name: String,
    pub model: TrajectoryModel,
}

impl Predictor for ModelPredictor {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, entry: &CacheEntry, kappa: usize) -> Result<Vec<[f64; 2]>, EvalError> {
        let dim = self.model.feature_dim();
        let truncated;
        let features = if entry.features.dim != dim && dim == 2 {
            truncated = entry.features.truncate(2)?;
            &truncated
        } else {
            &entry.features
        };
        Ok(self.model.predict_autoregressive(features, entry.window.last_observed(), kappa)?)
    }
}

pub struct CvKalmanPredictor {
    pub config: CvKalmanConfig,
    pub rate_hz: f64,
}

impl Predictor for CvKalmanPredictor {
    fn name(&self) -> &str {
        "cv_kalman"
    }

    fn predict(&self, entry: &CacheEntry, kappa: usize) -> Result<Vec<[f64; 2]>, EvalError> {
        let observed: Vec<[f64; 2]> = entry.window.observed.iter().map(|s| s.meters()).collect();
        cv_kalman_predict(&observed, kappa, 1.0 / self.rate_hz, &self.config)
    }
}

/// Returns the ground truth; a self-test of the evaluation pipeline.
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn name(&self) -> &str {
        "oracle"
    }

    fn predict(&self, entry: &CacheEntry, kappa: usize) -> Result<Vec<[f64; 2]>, EvalError> {
        Ok(entry.window.future_meters().into_iter().take(kappa).collect())
    }
}

/// Predicted and true future of one window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPrediction {
    pub scene_id: String,
    pub ego_id: String,
    pub start_index: usize,
    pub predicted: Vec<[f64; 2]>,
    pub truth: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub rows: Vec<MetricsRow>,
    pub predictions: Vec<WindowPrediction>,
}

/// Scores `predictor` on every entry at every horizon.
pub fn evaluate(predictor: &dyn Predictor, dataset: &str, entries: &[CacheEntry], opts: &EvalOptions) -> Result<Evaluation, EvalError> {
    let first = entries.first().ok_or(EvalError::Empty)?;
    let kappa = first.window.future.len();
    let steps = opts.horizon_steps(kappa)?;
    let predictions: Vec<WindowPrediction> = entries
        .par_iter()
        .map(|e| {
            let truth = e.window.future_meters();
            if truth.len() != kappa {
                return Err(EvalError::Shape(format!("window has {} future steps, expected {kappa}", truth.len())));
            }
            let predicted = predictor.predict(e, kappa)?;
            if predicted.len() != kappa {
                return Err(EvalError::Shape(format!("{} returned {} steps for kappa {kappa}", predictor.name(), predicted.len())));
            }
            if predicted.iter().flatten().any(|v| !v.is_finite()) {
                return Err(EvalError::NonFinite(format!("{} prediction", predictor.name())));
            }
            Ok(WindowPrediction {
                scene_id: e.window.scene_id.clone(),
                ego_id: e.window.ego_id.clone(),
                start_index: e.window.start_index,
                predicted,
                truth,
            })
        })
        .collect::<Result<_, _>>()?;

    let n = predictions.len() as f64;
    let mut rows = Vec::with_capacity(steps.len());
    for (&h, &s) in opts.horizons_s.iter().zip(&steps) {
        let (lo, count) = match opts.horizon_mode {
            HorizonMode::Cumulative => (0, s),
            HorizonMode::AtStep => (s - 1, 1),
        };
        let mut ade_sum = 0.0;
        let mut sq_sum = 0.0;
        let mut rmse_sum = 0.0;
        for p in &predictions {
            let (pred, gt) = (&p.predicted[lo..lo + count], &p.truth[lo..lo + count]);
            ade_sum += ade(pred, gt, count)?;
            let r = rmse(pred, gt, count)?;
            sq_sum += r * r * count as f64;
            rmse_sum += r;
        }
        let rmse_m = match opts.rmse_mode {
            RmseMode::Pooled => (sq_sum / (n * count as f64)).sqrt(),
            RmseMode::PerWindow => rmse_sum / n,
        };
        rows.push(MetricsRow {
            dataset: dataset.to_string(),
            method: predictor.name().to_string(),
            horizon_s: h,
            ade_m: ade_sum / n,
            rmse_m,
            n_windows: predictions.len(),
        });
    }
    Ok(Evaluation { rows, predictions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::ContextFeatureSequence;
    use crate::dataset::{Sample, TrajectoryWindow};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(rng: &mut ChaCha8Rng, n: usize) -> (Vec<[f64; 2]>, Vec<[f64; 2]>) {
        let mut draw = || (0..n).map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)]).collect::<Vec<_>>();
        (draw(), draw())
    }

    #[test]
    fn metric_examples() {
        let gt = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert_eq!(ade(&gt, &gt, 3).unwrap(), 0.0);
        assert_eq!(rmse(&gt, &gt, 3).unwrap(), 0.0);
        let shifted: Vec<[f64; 2]> = gt.iter().map(|p| [p[0] + 1.0, p[1]]).collect();
        assert_eq!(ade(&shifted, &gt, 3).unwrap(), 1.0);
        assert_eq!(rmse(&[[3.0, 4.0]], &[[0.0, 0.0]], 1).unwrap(), 5.0);
        assert!(ade(&gt, &gt[..2], 2).is_err());
        assert!(ade(&gt, &gt, 0).is_err());
        assert!(rmse(&gt, &gt, 4).is_err());
    }

    #[test]
    fn metrics_match_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let n = rng.random_range(1..60);
            let (p, g) = random_pair(&mut rng, n);
            let upto = rng.random_range(1..=n);
            let mut d = 0.0;
            let mut d2 = 0.0;
            for i in 0..upto {
                let e = ((p[i][0] - g[i][0]).powi(2) + (p[i][1] - g[i][1]).powi(2)).sqrt();
                d += e;
                d2 += e * e;
            }
            let a = ade(&p, &g, upto).unwrap();
            let r = rmse(&p, &g, upto).unwrap();
            assert!((a - d / upto as f64).abs() < 1e-12);
            assert!((r - (d2 / upto as f64).sqrt()).abs() < 1e-12);
            assert!(r >= a - 1e-12);
        }
    }

    proptest! {
        #[test]
        fn metrics_are_translation_invariant(
            pts in prop::collection::vec((-50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0, -50.0f64..50.0), 1..40),
            shift in (-100.0f64..100.0, -100.0f64..100.0),
        ) {
            let p: Vec<[f64; 2]> = pts.iter().map(|t| [t.0, t.1]).collect();
            let g: Vec<[f64; 2]> = pts.iter().map(|t| [t.2, t.3]).collect();
            let ps: Vec<[f64; 2]> = p.iter().map(|v| [v[0] + shift.0, v[1] + shift.1]).collect();
            let gs: Vec<[f64; 2]> = g.iter().map(|v| [v[0] + shift.0, v[1] + shift.1]).collect();
            let n = p.len();
            prop_assert!((ade(&p, &g, n).unwrap() - ade(&ps, &gs, n).unwrap()).abs() < 1e-12);
            prop_assert!((rmse(&p, &g, n).unwrap() - rmse(&ps, &gs, n).unwrap()).abs() < 1e-12);
        }
    }

    fn entry(id: usize, velocity: [f64; 2], turn: f64) -> CacheEntry {
        let rate = 10.0;
        let mut heading = velocity[1].atan2(velocity[0]);
        let speed = velocity[0].hypot(velocity[1]);
        let mut pos = [id as f64, 0.0];
        let mut samples = Vec::new();
        for k in 0..60 {
            samples.push(Sample::from_meters(k as f64 / rate, pos[0], pos[1], 0.1));
            if k >= 9 {
                heading += turn;
            }
            pos = [pos[0] + speed * heading.cos() / rate, pos[1] + speed * heading.sin() / rate];
        }
        let future = samples.split_off(10);
        CacheEntry {
            window: TrajectoryWindow {
                scene_id: "s".into(),
                ego_id: format!("p{id}"),
                start_index: 0,
                start_frame: 0,
                observed: samples,
                future,
                neighbor_refs: Vec::new(),
            },
            features: ContextFeatureSequence::new(9, 2, vec![0.0; 18]).unwrap(),
        }
    }

    #[test]
    fn oracle_scores_zero_and_table_has_one_row_per_horizon() {
        let entries: Vec<CacheEntry> = (0..4).map(|i| entry(i, [1.0, 0.5], 0.0)).collect();
        let opts = EvalOptions::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], 10.0);
        assert_eq!(opts.horizon_steps(50).unwrap(), vec![10, 20, 30, 40, 50]);
        let eval = evaluate(&OraclePredictor, "synth", &entries, &opts).unwrap();
        assert_eq!(eval.rows.len(), 5);
        assert!(eval.rows.iter().all(|r| r.ade_m == 0.0 && r.rmse_m == 0.0 && r.n_windows == 4));
        assert!(matches!(evaluate(&OraclePredictor, "synth", &[], &opts), Err(EvalError::Empty)));
        assert!(EvalOptions::new(vec![6.0], 10.0).horizon_steps(50).is_err());
    }

    #[test]
    fn kalman_errors_grow_with_horizon_on_turning_tracks() {
        let entries: Vec<CacheEntry> = (0..5).map(|i| entry(i, [1.2, 0.0], 0.03 + 0.01 * i as f64)).collect();
        let opts = EvalOptions::new(vec![1.0, 2.0, 3.0, 4.0, 5.0], 10.0);
        let cv = CvKalmanPredictor {
            config: CvKalmanConfig::default(),
            rate_hz: 10.0,
        };
        for mode in [HorizonMode::Cumulative, HorizonMode::AtStep] {
            let eval = evaluate(&cv, "synth", &entries, &EvalOptions { horizon_mode: mode, ..opts.clone() }).unwrap();
            for w in eval.rows.windows(2) {
                assert!(w[1].ade_m >= w[0].ade_m && w[1].rmse_m >= w[0].rmse_m, "{mode:?}");
            }
        }
    }

    #[test]
    fn rmse_modes_agree_for_identical_windows() {
        let entries: Vec<CacheEntry> = (0..3).map(|_| entry(0, [1.0, 0.0], 0.05)).collect();
        let cv = CvKalmanPredictor {
            config: CvKalmanConfig::default(),
            rate_hz: 10.0,
        };
        let opts = EvalOptions::new(vec![2.0, 5.0], 10.0);
        let pooled = evaluate(&cv, "d", &entries, &opts).unwrap();
        let per = evaluate(&cv, "d", &entries, &EvalOptions { rmse_mode: RmseMode::PerWindow, ..opts }).unwrap();
        for (a, b) in pooled.rows.iter().zip(&per.rows) {
            assert!((a.rmse_m - b.rmse_m).abs() < 1e-12);
            assert!(a.rmse_m >= a.ade_m);
        }
    }
}
