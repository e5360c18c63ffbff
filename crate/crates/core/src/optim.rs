use crate::error::{Error, Result};
use crate::params::ParamStore;

/// Bias-corrected Adam moments for one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    step: u64,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        Self::with_hyper(store, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyper(store: &ParamStore, beta1: f32, beta2: f32, epsilon: f32) -> Self {
        let zeros: Vec<Vec<f32>> = store.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            beta1,
            beta2,
            epsilon,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, index: usize) -> &[f32] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f32] {
        &self.v[index]
    }
}

/// One Adam update over every parameter in `store`.
///
/// Decoupled weight decay `θ ← θ − lr·λ·θ` is applied before the moment
/// update. Fails without touching anything if a parameter has no gradient.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f32, weight_decay: f32) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::invalid("adam_step", format!("learning rate {lr} must be positive")));
    }
    if state.m.len() != store.len() {
        return Err(Error::invalid("adam_step", "optimizer state does not match parameter store"));
    }
    if let Some((name, _, _)) = store.entries_mut().find(|(_, _, g)| g.is_none()) {
        return Err(Error::MissingGrad(name.to_string()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    for (i, (_, value, grad)) in store.entries_mut().enumerate() {
        let grad = grad.expect("checked above");
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, theta) in value.data_mut().iter_mut().enumerate() {
            if weight_decay != 0.0 {
                *theta -= lr * weight_decay * *theta;
            }
            let g = grad[j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
