use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{batch_loss_and_gradients, TrainError, TrainingExample};
use crate::model::Transformer;

/// Denominator floor of the relative error. Parameters whose true gradient
/// is exactly zero (attention key biases) would otherwise be judged on
/// pure finite-difference noise.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

pub const FINITE_DIFFERENCE_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    pub samples: Vec<GradientSample>,
}

impl GradientCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.samples.iter().map(|s| s.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&GradientSample> {
        self.samples.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

/// Compares analytic batch-loss gradients against central differences at
/// `count` randomly drawn coordinates (or at `params`' coordinates when given).
pub fn verify_gradients(
    model: &Transformer,
    batch: &[TrainingExample],
    params: Option<&[usize]>,
    count: usize,
    seed: u64,
) -> Result<GradientCheckReport, TrainError> {
    let (_, grads) = batch_loss_and_gradients(model, batch, None)?;
    let pool: Vec<usize> = match params {
        Some(p) => p.to_vec(),
        None => (0..model.params().len()).collect(),
    };
    if pool.is_empty() {
        return Ok(GradientCheckReport { samples: Vec::new() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = FINITE_DIFFERENCE_STEP;
    let mut probe = model.clone();
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let p = pool[rng.random_range(0..pool.len())];
        let index = rng.random_range(0..model.params().get(p).len());
        let original = model.params().get(p).data()[index];
        probe.params_mut().get_mut(p).data_mut()[index] = original + h;
        let plus = batch_loss_and_gradients(&probe, batch, None)?.0;
        probe.params_mut().get_mut(p).data_mut()[index] = original - h;
        let minus = batch_loss_and_gradients(&probe, batch, None)?.0;
        probe.params_mut().get_mut(p).data_mut()[index] = original;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads[p].data()[index];
        samples.push(GradientSample {
            param: model.params().name(p).to_string(),
            index,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    Ok(GradientCheckReport { samples })
}
