use crate::error::{Error, Result};

/// Mean absolute error and its subgradient with respect to `pred`.
///
/// The subgradient at a zero residual is taken as 0.
pub fn mae_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.is_empty() {
        return Err(Error::InvalidInput("mae_loss on empty vectors".into()));
    }
    if pred.len() != target.len() {
        return Err(Error::InvalidInput(format!(
            "prediction has {} entries, target has {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let dpred = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let r = p - t;
            loss += r.abs();
            if r > 0.0 {
                1.0 / n
            } else if r < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss / n, dpred))
}
