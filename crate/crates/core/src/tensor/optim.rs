use super::ParamStore;
use crate::error::{Result, VinetError};

/// Plain SGD: `w <- w - lr * grad` for every trainable parameter, then the
/// gradients are cleared. Every trainable parameter must have a gradient.
pub fn sgd_step(store: &mut ParamStore, lr: f64) -> Result<()> {
    if let Some(p) = store.iter().find(|p| p.trainable && p.grad.is_none()) {
        return Err(VinetError::contract("sgd_step", format!("no gradient for {}", p.name)));
    }
    for p in store.iter_mut().filter(|p| p.trainable) {
        let grad = p.grad.take().expect("checked above");
        for (w, g) in p.value.data_mut().iter_mut().zip(grad.data()) {
            *w -= lr * g;
        }
    }
    Ok(())
}
