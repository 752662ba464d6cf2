use super::{ModelError, Transformer};
use crate::context::{accumulate_offsets, ContextFeatureSequence, FeatureStats};
use crate::numerics::Tensor;

/// A transformer together with the standardization it was trained under.
///
/// The first two feature dimensions are the step offsets, so their
/// statistics also standardize the decoder's offset inputs and outputs.
#[derive(Debug, Clone)]
pub struct TrajectoryModel {
    pub transformer: Transformer,
    pub stats: FeatureStats,
}

impl TrajectoryModel {
    pub fn new(transformer: Transformer, stats: FeatureStats) -> Result<Self, ModelError> {
        let expected = transformer.config().feature_dim;
        if stats.dim() != expected {
            return Err(ModelError::Dimension {
                expected,
                got: stats.dim(),
            });
        }
        Ok(Self { transformer, stats })
    }

    pub fn feature_dim(&self) -> usize {
        self.transformer.config().feature_dim
    }

    pub fn standardized_features(&self, seq: &ContextFeatureSequence) -> Result<Tensor, ModelError> {
        if seq.dim != self.feature_dim() {
            return Err(ModelError::Dimension {
                expected: self.feature_dim(),
                got: seq.dim,
            });
        }
        let s = self.stats.standardize(seq)?;
        Ok(Tensor::matrix(s.steps, s.dim, s.data)?)
    }

    pub fn standardize_offsets(&self, offsets: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let (m, s) = (&self.stats.mean, &self.stats.std);
        offsets.iter().map(|o| [(o[0] - m[0]) / s[0], (o[1] - m[1]) / s[1]]).collect()
    }

    pub fn destandardize_offsets(&self, offsets: &[[f64; 2]]) -> Vec<[f64; 2]> {
        let (m, s) = (&self.stats.mean, &self.stats.std);
        offsets.iter().map(|o| [o[0] * s[0] + m[0], o[1] * s[1] + m[1]]).collect()
    }

    /// Predicted future offsets in meters.
    pub fn predict_offsets(&self, seq: &ContextFeatureSequence, kappa: usize) -> Result<Vec<[f64; 2]>, ModelError> {
        let feats = self.standardized_features(seq)?;
        let raw = self.transformer.predict_autoregressive(&feats, kappa)?;
        Ok(self.destandardize_offsets(&raw))
    }

    /// Absolute future positions, accumulated from `last_observed`.
    pub fn predict_autoregressive(
        &self,
        seq: &ContextFeatureSequence,
        last_observed: [f64; 2],
        kappa: usize,
    ) -> Result<Vec<[f64; 2]>, ModelError> {
        let offsets = self.predict_offsets(seq, kappa)?;
        Ok(accumulate_offsets(last_observed, &offsets))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    fn model() -> TrajectoryModel {
        let cfg = ModelConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 32,
            feature_dim: 3,
            dropout: 0.0,
        };
        let stats = FeatureStats {
            mean: vec![0.1, -0.2, 1.0],
            std: vec![0.5, 0.25, 2.0],
        };
        TrajectoryModel::new(Transformer::new(cfg, 3).unwrap(), stats).unwrap()
    }

    fn seq() -> ContextFeatureSequence {
        ContextFeatureSequence::new(3, 3, vec![0.1, 0.0, 1.0, 0.2, 0.1, 0.0, 0.15, -0.05, 3.0]).unwrap()
    }

    #[test]
    fn positions_are_cumulative_offsets_from_anchor() {
        let m = model();
        let anchor = [12.5, -3.25];
        let offsets = m.predict_offsets(&seq(), 6).unwrap();
        let positions = m.predict_autoregressive(&seq(), anchor, 6).unwrap();
        assert_eq!(positions.len(), 6);
        let mut acc = anchor;
        for (p, o) in positions.iter().zip(&offsets) {
            acc = [acc[0] + o[0], acc[1] + o[1]];
            assert!((p[0] - acc[0]).abs() < 1e-12 && (p[1] - acc[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn offset_standardization_round_trips() {
        let m = model();
        let o = [[0.3, -0.7], [1.0, 2.0]];
        let back = m.destandardize_offsets(&m.standardize_offsets(&o));
        for (a, b) in back.iter().zip(&o) {
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn stats_width_must_match() {
        let m = model();
        assert!(TrajectoryModel::new(m.transformer.clone(), FeatureStats::identity(2)).is_err());
        let narrow = ContextFeatureSequence::new(1, 2, vec![0.0, 0.0]).unwrap();
        assert!(m.predict_offsets(&narrow, 2).is_err());
    }
}
