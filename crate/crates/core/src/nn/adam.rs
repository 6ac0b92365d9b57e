use crate::nn::params::ParameterSet;
use crate::scalar::Scalar;

/// First/second moment estimates for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: ParameterSet<T>,
    pub v: ParameterSet<T>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParameterSet<T>) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

impl Adam {
    pub fn update<T: Scalar>(
        &self,
        params: &mut ParameterSet<T>,
        grads: &ParameterSet<T>,
        state: &mut AdamState<T>,
        lr: f64,
    ) {
        state.step += 1;
        let t = state.step as i32;
        let b1 = T::lit(self.beta1);
        let b2 = T::lit(self.beta2);
        let one = T::one();
        let bc1 = T::lit(1.0 - self.beta1.powi(t));
        let bc2 = T::lit(1.0 - self.beta2.powi(t));
        let lr = T::lit(lr);
        let eps = T::lit(self.eps);

        for i in 0..params.len() {
            let g = grads.by_index(i).data();
            let m = state.m.by_index_mut(i).data_mut();
            for (mi, &gi) in m.iter_mut().zip(g) {
                *mi = b1 * *mi + (one - b1) * gi;
            }
            let v = state.v.by_index_mut(i).data_mut();
            for (vi, &gi) in v.iter_mut().zip(g) {
                *vi = b2 * *vi + (one - b2) * gi * gi;
            }
            let m = state.m.by_index(i).data();
            let v = state.v.by_index(i).data();
            let p = params.by_index_mut(i).data_mut();
            for ((pi, &mi), &vi) in p.iter_mut().zip(m).zip(v) {
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                *pi = *pi - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
