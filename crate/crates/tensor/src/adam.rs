use crate::error::{Result, TensorError};
use crate::params::{Gradients, ParamStore};
use crate::tensor::Tensor;

/// Bias-corrected Adam with decoupled weight decay.
///
/// Decay is applied to the parameters directly (`p -= lr * wd * p`) before the
/// moment update, so it never enters the moment accumulators.
#[derive(Clone, Debug)]
pub struct AdamState {
    step: u64,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParamStore, learning_rate: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, _, t)| Tensor::zeros(t.shape()[0], t.shape()[1]))
            .collect();
        AdamState {
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One optimizer step over every parameter in the store.
pub fn adam_step(params: &mut ParamStore, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if state.first_moment.len() != params.len() {
        return Err(TensorError::Invalid(
            "optimizer state does not match parameter store".into(),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - state.beta1.powi(t);
    let bias2 = 1.0 - state.beta2.powi(t);
    let lr = state.learning_rate;
    let wd = state.weight_decay;

    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let grad = grads.get(id, params);
        let param = params.get_mut(id);
        if !param.same_shape(&grad) {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: param.shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        let m = &mut state.first_moment[id.index()];
        let v = &mut state.second_moment[id.index()];
        for (((p, &g), m), v) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *p -= lr * wd * *p;
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamStore;

    #[test]
    fn single_step_matches_hand_computation() {
        let mut store = ParamStore::new();
        let id = store.register("w", Tensor::scalar(0.0));
        let mut state = AdamState::new(&store, 1e-3, 0.0);

        let mut grads = Gradients::new(1);
        grads.accumulate(id, &Tensor::scalar(1.0));
        adam_step(&mut store, &grads, &mut state).unwrap();

        // m_hat = v_hat = 1 after one unit-gradient step, so the update is
        // lr / (1 + eps).
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((store.get(id).item() - expected).abs() < 1e-12);
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_grad_zero_decay_leaves_param_unchanged() {
        let mut store = ParamStore::new();
        let id = store.register("w", Tensor::scalar(3.5));
        let mut state = AdamState::new(&store, 1e-3, 0.0);
        let grads = Gradients::new(1);
        adam_step(&mut store, &grads, &mut state).unwrap();
        assert_eq!(store.get(id).item(), 3.5);
    }

    #[test]
    fn trajectories_are_reproducible() {
        let run = || {
            let mut store = ParamStore::new();
            let id = store.register("w", Tensor::from_rows(&[vec![0.3, -0.7]]).unwrap());
            let mut state = AdamState::new(&store, 1e-2, 1e-4);
            for step in 0..25 {
                let mut grads = Gradients::new(1);
                let g = Tensor::from_rows(&[vec![(step as f64).sin(), 0.5]]).unwrap();
                grads.accumulate(id, &g);
                adam_step(&mut store, &grads, &mut state).unwrap();
            }
            store.get(id).data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
