use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricError {
    #[error("prediction and truth lengths differ ({pred} vs {truth})")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("no values to score")]
    Empty,
}

fn check(pred: &[f64], truth: &[f64]) -> Result<(), MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

/// Mean absolute error.
pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check(pred, truth)?;
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// Mean squared error.
pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check(pred, truth)?;
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert_eq!(mae(&[4.0, 3.0], &[5.0, 1.0]), Ok(1.5));
        assert_eq!(mse(&[4.0, 3.0], &[5.0, 1.0]), Ok(2.5));
        assert_eq!(mae(&[2.0], &[5.0]), Ok(3.0));
        assert_eq!(mse(&[1.0], &[5.0]), Ok(16.0));
        assert_eq!(mae(&[3.5, 2.0], &[3.5, 2.0]), Ok(0.0));
        assert_eq!(mse(&[3.5, 2.0], &[3.5, 2.0]), Ok(0.0));
    }

    #[test]
    fn errors() {
        assert_eq!(mae(&[], &[]), Err(MetricError::Empty));
        assert_eq!(mse(&[1.0], &[1.0, 2.0]), Err(MetricError::LengthMismatch { pred: 1, truth: 2 }));
    }
}
