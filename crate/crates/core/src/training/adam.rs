use super::{TrainConfig, TrainError};
use crate::model::ModelParams;
use crate::numerics::Tensor;

/// Per-parameter Adam moments and the shared step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            step: 0,
            m: params.tensors().map(|t| Tensor::zeros(t.shape())).collect(),
            v: params.tensors().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn matches(&self, params: &ModelParams) -> bool {
        self.m.len() == params.len()
            && self.v.len() == params.len()
            && params
                .tensors()
                .zip(self.m.iter().zip(&self.v))
                .all(|(p, (m, v))| p.shape() == m.shape() && p.shape() == v.shape())
    }
}

/// One bias-corrected Adam update. The step counter advances before the
/// correction terms are computed.
pub fn adam_step(params: &mut ModelParams, grads: &[Tensor], state: &mut AdamState, cfg: &TrainConfig) -> Result<(), TrainError> {
    if grads.len() != params.len() || !state.matches(params) {
        return Err(TrainError::Shape("gradient or optimizer state does not match parameters".into()));
    }
    for (i, g) in grads.iter().enumerate() {
        if g.shape() != params.get(i).shape() {
            return Err(TrainError::Shape(format!("gradient shape {:?} for {}", g.shape(), params.name(i))));
        }
        if !g.is_finite() {
            return Err(TrainError::NonFiniteGradient(params.name(i).to_string()));
        }
    }
    state.step += 1;
    let lr = cfg.learning_rate_at(state.step);
    let (b1, b2, eps) = (cfg.beta1, cfg.beta2, cfg.epsilon);
    let c1 = 1.0 - b1.powf(state.step as f64);
    let c2 = 1.0 - b2.powf(state.step as f64);
    for (i, g) in grads.iter().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params.get_mut(i).data_mut();
        for (((p, m), v), g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
