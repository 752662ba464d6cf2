use super::ModelError;
use crate::numerics::Tensor;

/// Sinusoidal position table: `PE[p, 2k] = sin(p / 10000^(2k/d))`,
/// `PE[p, 2k+1] = cos(p / 10000^(2k/d))`.
pub fn positional_encoding(seq_len: usize, d_model: usize) -> Result<Tensor, ModelError> {
    if seq_len == 0 {
        return Err(ModelError::Config("positional encoding needs seq_len >= 1".into()));
    }
    if d_model == 0 || d_model % 2 != 0 {
        return Err(ModelError::Config(format!("positional encoding needs an even d_model, got {d_model}")));
    }
    let mut data = vec![0.0; seq_len * d_model];
    for p in 0..seq_len {
        for k in 0..d_model / 2 {
            let angle = p as f64 / 10000f64.powf((2 * k) as f64 / d_model as f64);
            data[p * d_model + 2 * k] = angle.sin();
            data[p * d_model + 2 * k + 1] = angle.cos();
        }
    }
    Ok(Tensor::matrix(seq_len, d_model, data)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_row_alternates_zero_one() {
        let pe = positional_encoding(3, 8).unwrap();
        for j in 0..8 {
            assert_eq!(pe.get(0, j), if j % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn first_column_is_sin_p() {
        let pe = positional_encoding(50, 16).unwrap();
        for p in 0..50 {
            assert_eq!(pe.get(p, 0), (p as f64).sin());
        }
    }

    #[test]
    fn odd_width_is_rejected() {
        assert!(positional_encoding(4, 7).is_err());
        assert!(positional_encoding(0, 8).is_err());
    }

    #[test]
    fn bounded_and_rows_distinct() {
        let pe = positional_encoding(200, 16).unwrap();
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        for a in 0..200 {
            for b in a + 1..200 {
                assert_ne!(pe.row(a), pe.row(b), "rows {a} and {b} coincide");
            }
        }
    }
}
