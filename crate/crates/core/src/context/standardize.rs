use super::{ContextError, ContextFeatureSequence};

const STD_FLOOR: f64 = 1e-8;

/// Per-dimension mean and (population) standard deviation, floored at 1e-8.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FeatureStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fits statistics over rows of equal length.
    pub fn fit<'a, I>(rows: I, dim: usize) -> Result<Self, ContextError>
    where
        I: IntoIterator<Item = &'a [f64]> + Clone,
    {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        for row in rows.clone() {
            if row.len() != dim {
                return Err(ContextError::Dimension {
                    expected: dim,
                    got: row.len(),
                });
            }
            for (s, v) in sum.iter_mut().zip(row) {
                *s += v;
            }
            n += 1;
        }
        if n == 0 {
            return Err(ContextError::Config("cannot fit statistics on zero rows".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; dim];
        for row in rows {
            for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|v| (v / n as f64).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn fit_sequences(seqs: &[&ContextFeatureSequence]) -> Result<Self, ContextError> {
        let dim = seqs.first().map(|s| s.dim).unwrap_or(0);
        let rows: Vec<&[f64]> = seqs.iter().flat_map(|s| (0..s.steps).map(move |i| s.row(i))).collect();
        Self::fit(rows.iter().copied(), dim)
    }

    fn check(&self, dim: usize) -> Result<(), ContextError> {
        if dim != self.dim() {
            return Err(ContextError::Dimension {
                expected: self.dim(),
                got: dim,
            });
        }
        Ok(())
    }

    pub fn apply_row(&self, row: &[f64]) -> Result<Vec<f64>, ContextError> {
        self.check(row.len())?;
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect())
    }

    pub fn invert_row(&self, row: &[f64]) -> Result<Vec<f64>, ContextError> {
        self.check(row.len())?;
        Ok(row
            .iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(v, (m, s))| v * s + m)
            .collect())
    }

    /// `(x - mean) / std` on every step.
    pub fn standardize(&self, seq: &ContextFeatureSequence) -> Result<ContextFeatureSequence, ContextError> {
        self.check(seq.dim)?;
        let mut data = Vec::with_capacity(seq.data.len());
        for i in 0..seq.steps {
            data.extend(self.apply_row(seq.row(i))?);
        }
        ContextFeatureSequence::new(seq.steps, seq.dim, data)
    }

    pub fn destandardize(&self, seq: &ContextFeatureSequence) -> Result<ContextFeatureSequence, ContextError> {
        self.check(seq.dim)?;
        let mut data = Vec::with_capacity(seq.data.len());
        for i in 0..seq.steps {
            data.extend(self.invert_row(seq.row(i))?);
        }
        ContextFeatureSequence::new(seq.steps, seq.dim, data)
    }
}
