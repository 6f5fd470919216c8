use super::model::{ModelState, Params};
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64, momentum: f64 },
    Adam(AdamConfig),
}

impl Optimizer {
    pub fn step<T: Real>(&self, state: &mut ModelState<T>, grads: &Params<T>) -> Result<()> {
        match *self {
            Optimizer::Sgd { lr, momentum } => sgd_step(state, grads, lr, momentum),
            Optimizer::Adam(cfg) => adam_step(state, grads, &cfg),
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr, .. } => *lr,
            Optimizer::Adam(c) => c.lr,
        }
    }
}

fn check_shapes<T: Real>(state: &ModelState<T>, grads: &Params<T>) -> Result<()> {
    if state.params.shapes() != grads.shapes() {
        return Err(Error::Shape("gradient blocks do not match parameter blocks".into()));
    }
    Ok(())
}

/// `v <- momentum * v + g; w <- w - lr * v`.
pub fn sgd_step<T: Real>(state: &mut ModelState<T>, grads: &Params<T>, lr: f64, momentum: f64) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) || !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!("sgd lr={lr} momentum={momentum}")));
    }
    check_shapes(state, grads)?;
    let (lr, mu) = (T::from_f64(lr), T::from_f64(momentum));
    for ((w, v), g) in state
        .params
        .tensors_mut()
        .into_iter()
        .zip(state.moment1.tensors_mut())
        .zip(grads.tensors())
    {
        for ((w, v), &g) in w.iter_mut().zip(v.iter_mut()).zip(g) {
            *v = mu * *v + g;
            *w -= lr * *v;
        }
    }
    state.step += 1;
    Ok(())
}

/// Bias-corrected Adam update.
pub fn adam_step<T: Real>(state: &mut ModelState<T>, grads: &Params<T>, cfg: &AdamConfig) -> Result<()> {
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite())
        || !(0.0..1.0).contains(&cfg.beta1)
        || !(0.0..1.0).contains(&cfg.beta2)
        || !(cfg.eps > 0.0)
    {
        return Err(Error::InvalidArgument(format!("adam hyperparameters {cfg:?}")));
    }
    check_shapes(state, grads)?;
    let t = (state.step + 1) as i32;
    let c1 = T::from_f64(1.0 - cfg.beta1.powi(t));
    let c2 = T::from_f64(1.0 - cfg.beta2.powi(t));
    let (lr, b1, b2, eps) = (
        T::from_f64(cfg.lr),
        T::from_f64(cfg.beta1),
        T::from_f64(cfg.beta2),
        T::from_f64(cfg.eps),
    );
    for (((w, m), v), g) in state
        .params
        .tensors_mut()
        .into_iter()
        .zip(state.moment1.tensors_mut())
        .zip(state.moment2.tensors_mut())
        .zip(grads.tensors())
    {
        for (((w, m), v), &g) in w.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    state.step += 1;
    Ok(())
}
