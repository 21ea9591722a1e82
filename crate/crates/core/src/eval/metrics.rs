//! Accuracy and macro-averaged F1.

use crate::error::{Error, Result};

fn check(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<()> {
    if y_true.is_empty() {
        return Err(Error::InvalidArgument("metrics need at least one sample".into()));
    }
    if y_true.len() != y_pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels but {} predictions",
            y_true.len(),
            y_pred.len()
        )));
    }
    if let Some(&bad) = y_true.iter().chain(y_pred).find(|&&y| y >= classes) {
        return Err(Error::InvalidArgument(format!("label {bad} outside [0, {classes})")));
    }
    Ok(())
}

/// `m[true][pred]` counts.
pub fn confusion_matrix(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<Vec<Vec<usize>>> {
    check(y_true, y_pred, classes)?;
    let mut m = vec![vec![0; classes]; classes];
    for (&t, &p) in y_true.iter().zip(y_pred) {
        m[t][p] += 1;
    }
    Ok(m)
}

pub fn accuracy(y_true: &[usize], y_pred: &[usize]) -> Result<f64> {
    let classes = y_true.iter().chain(y_pred).max().map_or(0, |m| m + 1);
    check(y_true, y_pred, classes)?;
    let hits = y_true.iter().zip(y_pred).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / y_true.len() as f64)
}

/// Unweighted mean of per-class F1 over all `classes`; a class with no true
/// and no predicted samples scores 0.
pub fn macro_f1(y_true: &[usize], y_pred: &[usize], classes: usize) -> Result<f64> {
    let m = confusion_matrix(y_true, y_pred, classes)?;
    let mut total = 0.0;
    for c in 0..classes {
        let tp = m[c][c] as f64;
        let actual: usize = m[c].iter().sum();
        let predicted: usize = m.iter().map(|row| row[c]).sum();
        let denom = (actual + predicted) as f64;
        if denom > 0.0 {
            total += 2.0 * tp / denom;
        }
    }
    Ok(total / classes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_cases() {
        assert_eq!(macro_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap(), 1.0);
        assert_eq!(macro_f1(&[0, 0, 1, 1], &[0, 1, 0, 1], 2).unwrap(), 0.5);
        assert!((macro_f1(&[0, 0, 1, 1], &[0, 0, 0, 0], 2).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(accuracy(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.5);
    }

    #[test]
    fn absent_class_scores_zero() {
        assert_eq!(macro_f1(&[0, 1], &[0, 1], 3).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn invalid_inputs() {
        assert!(macro_f1(&[], &[], 2).is_err());
        assert!(accuracy(&[0], &[0, 1]).is_err());
        assert!(macro_f1(&[0, 2], &[0, 1], 2).is_err());
    }
}
