use super::{TrainConfig, TrainError};
use crate::autodiff::Tensor;

/// First and second moment estimates, one tensor per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros_like<'a>(params: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let m: Vec<Tensor> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { v: m.clone(), m, t: 0 }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut AdamState, cfg: &TrainConfig) -> Result<(), TrainError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} params, {} grads, {} moment tensors",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() {
            return Err(TrainError::ShapeMismatch(format!(
                "param {i}: {:?} vs gradient {:?} vs moment {:?}",
                p.shape(),
                g.shape(),
                state.m[i].shape()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
        for ((theta, &grad), (mi, vi)) in it {
            *mi = b1 * *mi + (1.0 - b1) * grad;
            *vi = b2 * *vi + (1.0 - b2) * grad * grad;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *theta -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}
