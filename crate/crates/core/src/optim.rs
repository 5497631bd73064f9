//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::weights::WeightStore;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
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

/// First/second moment estimates per parameter, plus the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    step: u64,
    first: BTreeMap<String, Tensor<T>>,
    second: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new() -> Self {
        Self {
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.first.get(name)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.second.get(name)
    }
}

/// One Adam update of every entry in `params` that has a gradient.
///
/// Parameters without a gradient entry are left untouched; a gradient
/// without a matching parameter, or of a different shape, is an error.
pub fn adam_step<T: Scalar>(
    params: &mut WeightStore<T>,
    grads: &WeightStore<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads.iter() {
        let p = params
            .get(name)
            .ok_or_else(|| Error::shape(format!("gradient for unknown parameter '{name}'")))?;
        p.expect_same_shape(g, name)?;
        for moments in [&state.first, &state.second] {
            if let Some(m) = moments.get(name) {
                m.expect_same_shape(g, name)?;
            }
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let c1 = T::from_f64_lossy(1.0 - cfg.beta1.powi(t));
    let c2 = T::from_f64_lossy(1.0 - cfg.beta2.powi(t));
    let lr = T::from_f64_lossy(cfg.lr);
    let eps = T::from_f64_lossy(cfg.eps);
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);

    for (name, g) in grads.iter() {
        let m = state
            .first
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let v = state
            .second
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(g.shape()));
        let p = params.get_mut(name).expect("checked above");
        for (((pi, mi), vi), &gi) in p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data())
        {
            *mi = b1 * *mi + one_b1 * gi;
            *vi = b2 * *vi + one_b2 * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *pi -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(v: f64) -> WeightStore<f64> {
        let mut w = WeightStore::new();
        w.insert("head.conv9.bias", Tensor::new(vec![1], vec![v]).unwrap())
            .unwrap();
        w
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = single(1.0);
        let mut st = AdamState::new();
        adam_step(&mut p, &single(0.0), &mut st, &AdamConfig::default()).unwrap();
        assert_eq!(p, single(1.0));

        // nonzero moments decay under a zero gradient
        adam_step(&mut p, &single(0.5), &mut st, &AdamConfig::default()).unwrap();
        let m_before = st.first_moment("head.conv9.bias").unwrap().data()[0];
        adam_step(&mut p, &single(0.0), &mut st, &AdamConfig::default()).unwrap();
        let m_after = st.first_moment("head.conv9.bias").unwrap().data()[0];
        assert!((m_after - 0.9 * m_before).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = single(1.0);
        let mut st = AdamState::new();
        adam_step(&mut p, &single(0.5), &mut st, &AdamConfig::default()).unwrap();
        let got = p.get("head.conv9.bias").unwrap().data()[0];
        // m_hat = g, v_hat = g², so the update is lr·g/(|g| + eps)
        let want = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.999).abs() < 1e-7);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut p = single(1.0);
        let mut g = WeightStore::new();
        g.insert("head.conv9.bias", Tensor::zeros(&[2])).unwrap();
        let mut st = AdamState::new();
        assert!(adam_step(&mut p, &g, &mut st, &AdamConfig::default()).is_err());
        assert_eq!(st.step(), 0);
    }
}
