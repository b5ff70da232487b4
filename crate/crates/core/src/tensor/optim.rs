use super::tape::{Gradients, ParamStore};
use crate::error::{Error, Result};

/// One plain SGD update with L2 decay: `p <- p - lr * (g + wd * p)`.
pub fn sgd_step(params: &mut [f32], grads: &[f32], lr: f32, weight_decay: f32) {
    debug_assert_eq!(params.len(), grads.len());
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * (g + weight_decay * *p);
    }
}

/// Applies [`sgd_step`] to every parameter in the store.
pub fn sgd_update(
    params: &mut ParamStore,
    grads: &Gradients,
    lr: f32,
    weight_decay: f32,
) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Domain(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    for (id, g) in grads.iter() {
        let p = params.get_mut(id);
        p.check_same_shape("sgd", g)?;
        sgd_step(p.data_mut(), g.data(), lr, weight_decay);
    }
    Ok(())
}

/// SGD with heavy-ball momentum: `v <- mu * v + g + wd * p`, `p <- p - lr * v`.
/// With `momentum = 0` this is [`sgd_update`].
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(params: &ParamStore, momentum: f32, weight_decay: f32) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: params.iter().map(|(_, _, t)| vec![0.0; t.len()]).collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients, lr: f32) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::Domain(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        for (id, g) in grads.iter() {
            let p = params.get_mut(id);
            p.check_same_shape("sgd", g)?;
            let v = self.velocity.get_mut(id.0).ok_or_else(|| {
                Error::State(format!("no optimiser state for parameter {}", id.0))
            })?;
            for ((p, g), v) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *v = self.momentum * *v + g + self.weight_decay * *p;
                *p -= lr * *v;
            }
        }
        Ok(())
    }
}
