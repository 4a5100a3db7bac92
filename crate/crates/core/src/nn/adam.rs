use crate::scalar::Scalar;

use super::config::TrainConfig;

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(params: &mut [T], grads: &[T], state: &mut AdamState<T>, tc: &TrainConfig) {
    assert_eq!(params.len(), grads.len(), "parameter and gradient lengths differ");
    assert_eq!(params.len(), state.m.len(), "optimizer state sized for another model");
    state.t += 1;
    let b1 = T::lit(tc.beta1);
    let b2 = T::lit(tc.beta2);
    let c1 = T::lit(1.0 - tc.beta1.powi(state.t.min(i32::MAX as u64) as i32));
    let c2 = T::lit(1.0 - tc.beta2.powi(state.t.min(i32::MAX as u64) as i32));
    let lr = T::lit(tc.learning_rate);
    let eps = T::lit(tc.epsilon);
    let one = T::one();
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
