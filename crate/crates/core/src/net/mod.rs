//! Layer stack, loss and optimizers built around the pointwise convolution.

mod loss;
mod model;
mod optim;
mod spec;

pub use loss::{predict, softmax_xent};
pub use model::{
    check_params, init_model, net_backward, net_forward, DenseParams, LayerCache, LayerParams,
    ModelState, Params, PreparedCloud,
};
pub use optim::{adam_step, sgd_step, AdamConfig, Optimizer};
pub use spec::{featurize, InputMode, LayerSpec, NetworkSpec};

use crate::cloud::FeatureMap;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::pointconv::relative_error;

/// Forward, loss and backward for one cloud. Returns the loss, the parameter
/// gradients and the logits.
pub fn loss_and_grads<T: crate::Real>(
    spec: &NetworkSpec,
    state: &ModelState<T>,
    input: &PreparedCloud,
    feats: &FeatureMap<T>,
    targets: &[u32],
    exec: &Exec,
) -> Result<(T, Params<T>, FeatureMap<T>)> {
    let (logits, caches) = net_forward(spec, state, input, feats, exec)?;
    let (loss, grad) = softmax_xent(&logits, targets)?;
    let (grads, _) = net_backward(spec, state, &caches, &grad, exec)?;
    Ok((loss, grads, logits))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetGradCheck {
    pub params: f64,
    pub inputs: f64,
}

impl NetGradCheck {
    pub fn max_rel_err(&self) -> f64 {
        self.params.max(self.inputs)
    }
}

/// End-to-end central-difference check of the softmax cross-entropy loss
/// with respect to every parameter and every input feature.
pub fn net_grad_check(
    spec: &NetworkSpec,
    state: &ModelState<f64>,
    input: &PreparedCloud,
    feats: &FeatureMap<f64>,
    targets: &[u32],
    step: f64,
) -> Result<NetGradCheck> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!("step {step} must be > 0")));
    }
    let exec = Exec::sequential();
    let loss = |st: &ModelState<f64>, f: &FeatureMap<f64>| -> Result<f64> {
        let (logits, _) = net_forward(spec, st, input, f, &exec)?;
        Ok(softmax_xent(&logits, targets)?.0)
    };
    let (logits, caches) = net_forward(spec, state, input, feats, &exec)?;
    let (_, g) = softmax_xent(&logits, targets)?;
    let (grads, grad_in) = net_backward(spec, state, &caches, &g, &exec)?;

    let mut st = state.clone();
    let mut worst_p = 0.0f64;
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let shapes = st.params.shapes();
    for (ti, &len) in shapes.iter().enumerate() {
        for at in 0..len {
            let orig = st.params.tensors()[ti][at];
            st.params.tensors_mut()[ti][at] = orig + step;
            let plus = loss(&st, feats)?;
            st.params.tensors_mut()[ti][at] = orig - step;
            let minus = loss(&st, feats)?;
            st.params.tensors_mut()[ti][at] = orig;
            let mut numeric = (plus - minus) / (2.0 * step);
            // Tensors alternate weight, bias; a frozen bias reports zero gradient.
            if !spec.bias && ti % 2 == 1 {
                numeric = 0.0;
            }
            worst_p = worst_p.max(relative_error(analytic[ti][at], numeric));
        }
    }
    let mut f = feats.clone();
    let mut worst_i = 0.0f64;
    for at in 0..f.as_slice().len() {
        let orig = f.as_slice()[at];
        f.as_mut_slice()[at] = orig + step;
        let plus = loss(state, &f)?;
        f.as_mut_slice()[at] = orig - step;
        let minus = loss(state, &f)?;
        f.as_mut_slice()[at] = orig;
        worst_i = worst_i.max(relative_error(grad_in.as_slice()[at], (plus - minus) / (2.0 * step)));
    }
    Ok(NetGradCheck {
        params: worst_p,
        inputs: worst_i,
    })
}

/// Replaces every bias with a uniform draw from `[-scale, scale]`.
pub fn jitter_biases<T: crate::Real>(params: &mut Params<T>, seed: u64, scale: f64) {
    let mut rng = crate::rng::XorShift64::new(seed);
    for (ti, t) in params.tensors_mut().into_iter().enumerate() {
        if ti % 2 == 1 {
            t.iter_mut().for_each(|b| *b = T::from_f64(rng.uniform(-scale, scale)));
        }
    }
}
