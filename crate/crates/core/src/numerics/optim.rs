//! Named parameter store and the Adam update.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::RealArray;

/// One named tensor with its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: RealArray,
    pub grad: RealArray,
}

/// Named parameters with matching gradient buffers. Iteration order is the
/// lexicographic name order, which keeps every downstream consumer
/// (optimizer, checkpoints, finite differences) deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: BTreeMap<String, Param>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: RealArray) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::invalid(format!("duplicate parameter name {name}")));
        }
        let grad = RealArray::zeros(&value.shape);
        self.entries.insert(name.to_string(), Param { value, grad });
        Ok(())
    }

    /// Uniform init in +-1/sqrt(fan_in), seeded.
    pub fn insert_uniform(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let numel: usize = shape.iter().product();
        let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-bound..bound)).collect();
        self.insert(name, RealArray::new(shape.to_vec(), data)?)
    }

    pub fn value(&self, name: &str) -> &RealArray {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut RealArray {
        &mut self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .value
    }

    pub fn grad(&self, name: &str) -> &RealArray {
        &self
            .entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
            .grad
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn add_to_grad(&mut self, name: &str, delta: &RealArray) {
        let p = self
            .entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        p.grad.axpy(1.0, delta);
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            for g in &mut p.grad.data {
                *g = 0.0;
            }
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Adam accumulators plus hyperparameters.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerState {
    pub fn new(learning_rate: f64) -> Self {
        OptimizerState {
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam step over every parameter. Gradients are read,
/// never modified.
pub fn adam_step(params: &mut ParameterSet, state: &mut OptimizerState) -> Result<()> {
    adam_step_filtered(params, state, |_| true)
}

/// Adam step restricted to parameters for which `update` returns true.
/// Skipped parameters keep both their value and their optimizer moments.
pub fn adam_step_filtered(
    params: &mut ParameterSet,
    state: &mut OptimizerState,
    update: impl Fn(&str) -> bool,
) -> Result<()> {
    for (name, p) in &params.entries {
        for (i, g) in p.grad.data.iter().enumerate() {
            if !g.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite gradient for parameter {name} at flat index {i}"
                )));
            }
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (name, p) in params.entries.iter_mut() {
        if !update(name) {
            continue;
        }
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; p.value.numel()]);
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; p.value.numel()]);
        for i in 0..p.value.numel() {
            let g = p.grad.data[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p.value.data[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameter_unchanged() {
        let mut params = ParameterSet::new();
        params
            .insert("w", RealArray::from_vec(vec![1.5, -0.5]))
            .unwrap();
        let mut state = OptimizerState::new(0.1);
        adam_step(&mut params, &mut state).unwrap();
        assert_eq!(params.value("w").data, vec![1.5, -0.5]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = ParameterSet::new();
        params.insert("w", RealArray::from_vec(vec![1.0])).unwrap();
        params.add_to_grad("w", &RealArray::from_vec(vec![1.0]));
        let mut state = OptimizerState::new(0.1);
        adam_step(&mut params, &mut state).unwrap();
        // first step: m_hat/sqrt(v_hat) = sign(g), so w ~ 1 - lr
        assert!((params.value("w").data[0] - 0.9).abs() < 1e-6);
        // gradients untouched
        assert_eq!(params.grad("w").data, vec![1.0]);
    }

    #[test]
    fn converges_on_quadratic() {
        // f(w) = (w - 3)^2, df/dw = 2(w - 3)
        let mut params = ParameterSet::new();
        params.insert("w", RealArray::from_vec(vec![0.0])).unwrap();
        let mut state = OptimizerState::new(0.1);
        for _ in 0..100 {
            params.zero_grads();
            let w = params.value("w").data[0];
            params.add_to_grad("w", &RealArray::from_vec(vec![2.0 * (w - 3.0)]));
            adam_step(&mut params, &mut state).unwrap();
        }
        assert!((params.value("w").data[0] - 3.0).abs() < 0.1);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut params = ParameterSet::new();
        params.insert("fine", RealArray::from_vec(vec![0.0])).unwrap();
        params.insert("broken", RealArray::from_vec(vec![0.0])).unwrap();
        params.add_to_grad("broken", &RealArray::from_vec(vec![f64::NAN]));
        let mut state = OptimizerState::new(0.1);
        let err = adam_step(&mut params, &mut state).unwrap_err();
        assert!(err.to_string().contains("broken"));
    }

    #[test]
    fn deterministic_given_same_inputs() {
        let run = || {
            let mut params = ParameterSet::new();
            params
                .insert("w", RealArray::from_vec(vec![0.3, -0.7, 2.0]))
                .unwrap();
            let mut state = OptimizerState::new(0.05);
            for step in 0..20 {
                params.zero_grads();
                let g: Vec<f64> = params
                    .value("w")
                    .data
                    .iter()
                    .map(|w| w.sin() + step as f64 * 0.01)
                    .collect();
                params.add_to_grad("w", &RealArray::from_vec(g));
                adam_step(&mut params, &mut state).unwrap();
            }
            params.value("w").data.clone()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "adam must be bit-for-bit deterministic");
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut params = ParameterSet::new();
        params.insert("a", RealArray::from_vec(vec![1.0])).unwrap();
        params.insert("b", RealArray::from_vec(vec![1.0])).unwrap();
        let mut state = OptimizerState::new(0.1);
        // build up momentum on both
        for _ in 0..3 {
            params.zero_grads();
            params.add_to_grad("a", &RealArray::from_vec(vec![1.0]));
            params.add_to_grad("b", &RealArray::from_vec(vec![1.0]));
            adam_step(&mut params, &mut state).unwrap();
        }
        let frozen_before = params.value("b").data[0];
        params.zero_grads();
        params.add_to_grad("a", &RealArray::from_vec(vec![1.0]));
        adam_step_filtered(&mut params, &mut state, |n| n != "b").unwrap();
        assert_eq!(params.value("b").data[0], frozen_before);
    }
}
