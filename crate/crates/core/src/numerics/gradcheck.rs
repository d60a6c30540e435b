//! Central finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::numerics::ParameterSet;

/// Compares the gradients currently stored in `params` against central finite
/// differences of `f`, returning the worst relative error
/// |analytic - fd| / max(1, |fd|) over every parameter element.
///
/// `f` must be a pure function of the parameter values.
pub fn grad_check<F>(mut f: F, params: &mut ParameterSet, h: f64) -> Result<f64>
where
    F: FnMut(&ParameterSet) -> Result<f64>,
{
    if h <= 0.0 {
        return Err(Error::invalid("grad_check step h must be positive".to_string()));
    }
    let names: Vec<String> = params.names().cloned().collect();
    let mut worst: f64 = 0.0;
    for name in &names {
        let numel = params.value(name).numel();
        for i in 0..numel {
            let original = params.value(name).data[i];
            params.value_mut(name).data[i] = original + h;
            let f_plus = f(params)?;
            params.value_mut(name).data[i] = original - h;
            let f_minus = f(params)?;
            params.value_mut(name).data[i] = original;
            if !f_plus.is_finite() || !f_minus.is_finite() {
                return Err(Error::numeric(format!(
                    "objective non-finite while perturbing {name}[{i}]"
                )));
            }
            let fd = (f_plus - f_minus) / (2.0 * h);
            let analytic = params.grad(name).data[i];
            let err = (analytic - fd).abs() / fd.abs().max(1.0);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}
