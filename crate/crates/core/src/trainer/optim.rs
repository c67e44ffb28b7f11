//! RMSProp: `s ← ρ s + (1 − ρ) g²`, `θ ← θ − η g / √(s + ε)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub rho: f64,
    /// Added to the running average inside the square root.
    pub epsilon: f64,
}

impl Default for RmsPropConfig {
    fn default() -> Self {
        RmsPropConfig {
            learning_rate: 0.0005,
            rho: 0.9,
            epsilon: 1e-8,
        }
    }
}

impl RmsPropConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.rho) {
            return Err(Error::Config(format!("decay {} outside [0, 1)", self.rho)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }
}

/// In-place update of one parameter block and its running average.
pub fn rmsprop_update(config: &RmsPropConfig, value: &mut [f64], grad: &[f64], avg: &mut [f64]) {
    for ((theta, g), s) in value.iter_mut().zip(grad).zip(avg.iter_mut()) {
        *s = config.rho * *s + (1.0 - config.rho) * g * g;
        *theta -= config.learning_rate * g / (*s + config.epsilon).sqrt();
    }
}

/// Running averages of squared gradients, one slot per parameter.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OptimizerState {
    slots: Vec<Option<Tensor>>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.slots.get(id.index()).and_then(Option::as_ref)
    }

    pub fn set(&mut self, id: ParamId, avg: Tensor) {
        if self.slots.len() <= id.index() {
            self.slots.resize(id.index() + 1, None);
        }
        self.slots[id.index()] = Some(avg);
    }

    /// Slots in parameter order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.as_ref().map(|t| (ParamId(i), t)))
    }
}

/// One step over `ids` using the gradients accumulated in `store`.
///
/// Every gradient is checked before anything is written, so a non-finite
/// gradient leaves the parameters untouched. Gradients of `ids` are zeroed
/// afterwards.
pub fn rmsprop_step(
    store: &mut ParamStore,
    ids: &[ParamId],
    state: &mut OptimizerState,
    config: &RmsPropConfig,
) -> Result<()> {
    for &id in ids {
        if !store.grad(id).is_finite() {
            return Err(Error::NonFiniteGradient(store.name(id).to_string()));
        }
    }
    for &id in ids {
        if state.get(id).is_none() {
            state.set(id, Tensor::zeros(store.value(id).shape()));
        }
        let avg = state.slots[id.index()].as_mut().expect("slot created above");
        let (value, grad) = store.value_and_grad_mut(id);
        rmsprop_update(config, value.data_mut(), grad.data(), avg.data_mut());
        grad.data_mut().fill(0.0);
    }
    Ok(())
}
