use super::{DiffError, NumArray};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Moment estimates for Adam with bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<NumArray>,
    second: Vec<NumArray>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[NumArray]) -> Self {
        Self {
            config,
            first: params.iter().map(|p| NumArray::zeros(p.shape())).collect(),
            second: params.iter().map(|p| NumArray::zeros(p.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One Adam update of `params` from `grads`; `grads` are zeroed afterwards.
/// Weight decay is the coupled L2 form (added to the gradient).
pub fn adam_step(params: &mut [NumArray], grads: &mut [NumArray], state: &mut AdamState) -> Result<(), DiffError> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(DiffError::Dimension {
            op: "adam_step",
            detail: format!("{} params, {} grads, {} moments", params.len(), grads.len(), state.first.len()),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads.iter()).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first[i].shape() {
            return Err(DiffError::Dimension {
                op: "adam_step",
                detail: format!("param {i}: {:?} vs grad {:?}", p.shape(), g.shape()),
            });
        }
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps, weight_decay } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads.iter_mut()).enumerate() {
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (k, (theta, grad)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            let grad = grad + weight_decay * *theta;
            m[k] = beta1 * m[k] + (1.0 - beta1) * grad;
            v[k] = beta2 * v[k] + (1.0 - beta2) * grad * grad;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        g.fill(0.0);
    }
    Ok(())
}
