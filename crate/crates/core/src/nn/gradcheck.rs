use super::Mlp;
use crate::error::{Error, Result};

/// Smallest magnitude used as the relative-error denominator.
const DENOM_FLOOR: f64 = 1e-6;

/// Compares backpropagated gradients against central finite differences over
/// every parameter and returns the worst relative error.
///
/// Parameters whose `±eps` perturbation flips the sign of any hidden
/// pre-activation are skipped, since the network is not differentiable there.
pub fn grad_check(mlp: &Mlp, x: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("eps must be positive, got {eps}")));
    }
    let (_, cache) = mlp.forward(x)?;
    let (grads, _) = mlp.backward(&cache, 1.0)?;
    let analytic = grads.flatten();
    let base_mask = cache.relu_mask();

    let mut probe = mlp.clone();
    let params = mlp.parameters();
    let mut shifted = params.clone();
    let mut worst: f64 = 0.0;
    for (k, &a) in analytic.iter().enumerate() {
        shifted[k] = params[k] + eps;
        probe.set_parameters(&shifted)?;
        let (plus, c_plus) = probe.forward(x)?;
        shifted[k] = params[k] - eps;
        probe.set_parameters(&shifted)?;
        let (minus, c_minus) = probe.forward(x)?;
        shifted[k] = params[k];
        if c_plus.relu_mask() != base_mask || c_minus.relu_mask() != base_mask {
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let denom = a.abs().max(numeric.abs()).max(DENOM_FLOOR);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
