use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::{ParamStore, Tensor};

#[derive(Debug, Clone, Copy)]
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

/// Adam moments for every parameter of one store.
#[derive(Debug, Clone)]
pub struct OptimState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape().to_vec()))
                .collect::<Vec<_>>()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected Adam update from the gradients in `Parameter::grad`.
pub fn adam_step<T: Scalar>(store: &mut ParamStore<T>, state: &mut OptimState<T>) -> Result<()> {
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let corr1 = T::one() - T::of(c.beta1.powi(t));
    let corr2 = T::one() - T::of(c.beta2.powi(t));
    let (lr, eps) = (T::of(c.lr), T::of(c.eps));
    for ((p, m), v) in store.params_mut().zip(&mut state.m).zip(&mut state.v) {
        p.value.expect_same_shape("adam_step", m)?;
        let g = p.grad.data();
        for (((x, mm), vv), &gi) in p.value.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).zip(g) {
            *mm = b1 * *mm + (T::one() - b1) * gi;
            *vv = b2 * *vv + (T::one() - b2) * gi * gi;
            let mhat = *mm / corr1;
            let vhat = *vv / corr2;
            *x -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(vals: &[f64], grads: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let id = s.register("x", Tensor::new([vals.len()], vals.to_vec()).unwrap());
        s.get_mut(id).grad = Tensor::new([grads.len()], grads.to_vec()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut s = store_with(&[1.0, -2.0, 0.5], &[3.0, -0.01, 1e3]);
        let mut st = OptimState::new(&s, AdamConfig::default());
        adam_step(&mut s, &mut st).unwrap();
        let x = s.get(crate::tensor::ParamId(0)).value.data().to_vec();
        assert!((x[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((x[1] - (-2.0 + 1e-3)).abs() < 1e-6);
        assert!((x[2] - (0.5 - 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_is_noop() {
        let mut s = store_with(&[1.0, 2.0], &[0.0, 0.0]);
        let mut st = OptimState::new(&s, AdamConfig::default());
        adam_step(&mut s, &mut st).unwrap();
        assert_eq!(s.get(crate::tensor::ParamId(0)).value.data(), &[1.0, 2.0]);
    }

    #[test]
    fn quadratic_distance_shrinks() {
        // f(x) = (x − 3)², x₀ = 0; two steps of lr 0.1 move x to ≈ 0.2.
        let mut s = store_with(&[0.0], &[0.0]);
        let mut st = OptimState::new(
            &s,
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
        );
        let id = crate::tensor::ParamId(0);
        let mut dist = vec![3.0];
        for _ in 0..2 {
            let x = s.get(id).value.data()[0];
            s.get_mut(id).grad.data_mut()[0] = 2.0 * (x - 3.0);
            adam_step(&mut s, &mut st).unwrap();
            dist.push((s.get(id).value.data()[0] - 3.0f64).abs());
        }
        assert!(dist[1] < dist[0] && dist[2] < dist[1]);

        // scalar re-simulation of the same two steps
        let (mut x, mut m, mut v) = (0.0f64, 0.0, 0.0);
        for t in 1..=2 {
            let g = 2.0 * (x - 3.0);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            x -= 0.1 * (m / (1.0 - 0.9f64.powi(t))) / ((v / (1.0 - 0.999f64.powi(t))).sqrt() + 1e-8);
        }
        assert!((dist[2] - (x - 3.0).abs()).abs() < 1e-12);
    }
}
