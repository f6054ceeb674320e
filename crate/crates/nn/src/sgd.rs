use crate::error::{NnError, Result};
use crate::param::ParamSet;

/// Plain gradient descent, `w -= lr·g`, then clears the gradients.
///
/// Like [`crate::Adam::step`], a non-finite gradient rejects the whole
/// update and leaves parameters and gradients as they were.
pub fn sgd_step<P: ParamSet + ?Sized>(set: &mut P, lr: f64) -> Result<()> {
    let mut params = set.params_mut();
    for (i, p) in params.iter().enumerate() {
        if p.grad.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGrad { index: i });
        }
    }
    for p in params.iter_mut() {
        let p = &mut **p;
        for (w, g) in p.values.iter_mut().zip(p.grad.iter_mut()) {
            *w -= lr * *g;
            *g = 0.0;
        }
    }
    Ok(())
}
