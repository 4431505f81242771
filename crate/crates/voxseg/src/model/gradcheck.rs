//! Finite-difference validation of tape gradients on the full model.

use std::collections::BTreeMap;

use ndarray::Array2;

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Central-difference step, scaled to the parameter's magnitude.
fn fd_step(theta: f64) -> f64 {
    1e-5 * theta.abs().max(1.0)
}

/// Compare analytic gradients against central finite differences of `eval`,
/// probing `samples_per_tensor` random elements of each tensor present in
/// `analytic`. `eval` must recompute the scalar loss from a perturbed
/// parameter store.
pub fn compare_grads<F>(
    params: &ParamStore,
    analytic: &BTreeMap<String, Array2<f64>>,
    mut eval: F,
    samples_per_tensor: usize,
    tol: f64,
    seed: u64,
) -> Result<()>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let mut rng = Rng::from_tags(seed, &[0x6D4C]);
    for (name, grad) in analytic {
        let (rows, cols) = grad.dim();
        for _ in 0..samples_per_tensor {
            let r = rng.below(rows);
            let c = rng.below(cols);
            let theta = params.get(name)[[r, c]];
            let h = fd_step(theta);
            let mut plus = params.clone();
            plus.get_mut(name)[[r, c]] = theta + h;
            let mut minus = params.clone();
            minus.get_mut(name)[[r, c]] = theta - h;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let a = grad[[r, c]];
            let abs = (a - fd).abs();
            let rel = abs / a.abs().max(fd.abs()).max(1e-300);
            if abs > 1e-8 && rel > tol {
                return Err(Error::GradCheckFailure(
                    format!("{name}[{r},{c}]: analytic {a:.6e}, fd {fd:.6e}"),
                    rel,
                ));
            }
        }
    }
    Ok(())
}
