use ndarray::ArrayD;

use crate::autodiff::ParamStore;
use crate::scalar::Scalar;

/// Adam with bias correction; no weight decay, no learning-rate decay.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<ArrayD<T>>,
    v: Vec<ArrayD<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: f64, params: &ParamStore<T>) -> Self {
        let m = params.params().iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        let v = params.params().iter().map(|p| ArrayD::zeros(p.value.raw_dim())).collect();
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, m, v }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update from the gradients currently held in `params`.
    pub fn step(&mut self, params: &mut ParamStore<T>) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let lr = T::of(self.learning_rate);
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let (ib1, ib2) = (T::of(1.0 - self.beta1), T::of(1.0 - self.beta2));
        let (c1, c2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
        let eps = T::of(self.epsilon);

        for (i, entry) in params.params_mut().iter_mut().enumerate() {
            let m = self.m[i].as_slice_mut().unwrap();
            let v = self.v[i].as_slice_mut().unwrap();
            let g = entry.grad.as_slice().unwrap();
            let w = entry.value.as_slice_mut().unwrap();
            for j in 0..w.len() {
                m[j] = b1 * m[j] + ib1 * g[j];
                v[j] = b2 * v[j] + ib2 * g[j] * g[j];
                let m_hat = m[j] * c1;
                let v_hat = v[j] * c2;
                w[j] = w[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }

    /// Flattened state tensors for checkpointing, prefixed `optim.`.
    pub fn export_state(&self, params: &ParamStore<T>) -> Vec<(String, Vec<usize>, Vec<T>)> {
        let mut out = Vec::new();
        for (i, p) in params.params().iter().enumerate() {
            out.push((format!("optim.m.{}", p.name), p.value.shape().to_vec(), self.m[i].iter().copied().collect()));
            out.push((format!("optim.v.{}", p.name), p.value.shape().to_vec(), self.v[i].iter().copied().collect()));
        }
        out
    }

    /// Restores state exported by [`Adam::export_state`].
    pub fn import_state(
        &mut self,
        params: &ParamStore<T>,
        tensors: &std::collections::HashMap<String, (Vec<usize>, Vec<T>)>,
        step: u64,
    ) -> crate::Result<()> {
        for (i, p) in params.params().iter().enumerate() {
            for (slot, key) in [(&mut self.m[i], format!("optim.m.{}", p.name)), (&mut self.v[i], format!("optim.v.{}", p.name))]
            {
                let (shape, values) = tensors
                    .get(&key)
                    .ok_or_else(|| crate::Error::Checkpoint(format!("missing optimizer tensor {key}")))?;
                if shape != p.value.shape() {
                    return Err(crate::Error::Checkpoint(format!("optimizer tensor {key} shape mismatch")));
                }
                slot.as_slice_mut().unwrap().copy_from_slice(values);
            }
        }
        self.step = step;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize f(w) = 0.5 * w^2 elementwise; gradient = w.
        let mut params = ParamStore::<f64>::new();
        let id = params.add_param("w", ArrayD::from_elem(IxDyn(&[4]), 3.0));
        let mut adam = Adam::new(0.05, &params);
        for _ in 0..400 {
            let w = params.value(id).clone();
            params.grad_mut(id).assign(&w);
            adam.step(&mut params);
            params.zero_grads();
        }
        assert!(params.value(id).iter().all(|v| v.abs() < 1e-2));
        assert_eq!(adam.step_count(), 400);
    }

    #[test]
    fn state_round_trip_resumes_identically() {
        let make = || {
            let mut params = ParamStore::<f32>::new();
            params.add_param("w", ArrayD::from_elem(IxDyn(&[3]), 1.0f32));
            params
        };
        let grad = [0.3f32, -0.2, 0.9];
        let run = |steps: usize, params: &mut ParamStore<f32>, adam: &mut Adam<f32>| {
            for _ in 0..steps {
                params.grad_mut(crate::autodiff::ParamId(0)).as_slice_mut().unwrap().copy_from_slice(&grad);
                adam.step(params);
                params.zero_grads();
            }
        };

        let mut p1 = make();
        let mut a1 = Adam::new(0.01, &p1);
        run(10, &mut p1, &mut a1);

        // Split run: 5 steps, export/import, 5 more.
        let mut p2 = make();
        let mut a2 = Adam::new(0.01, &p2);
        run(5, &mut p2, &mut a2);
        let state: std::collections::HashMap<_, _> =
            a2.export_state(&p2).into_iter().map(|(k, s, v)| (k, (s, v))).collect();
        let mut a3 = Adam::new(0.01, &p2);
        a3.import_state(&p2, &state, a2.step_count()).unwrap();
        run(5, &mut p2, &mut a3);

        assert_eq!(p1.value(crate::autodiff::ParamId(0)), p2.value(crate::autodiff::ParamId(0)));
    }
}
