//! RMSprop.

use super::network::Params;

/// One RMSprop update on a flat tensor:
/// `s ← ρ·s + (1-ρ)·g²`, `p ← p - η·g / (sqrt(s) + ε)`.
pub fn rmsprop_update(param: &mut [f64], grad: &[f64], accum: &mut [f64], lr: f64, decay: f64, eps: f64) {
    for ((p, &g), s) in param.iter_mut().zip(grad).zip(accum.iter_mut()) {
        *s = decay * *s + (1.0 - decay) * g * g;
        *p -= lr * g / (s.sqrt() + eps);
    }
}

#[derive(Debug, Clone)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    accum: Params,
}

impl RmsProp {
    /// Accumulators start at zero with the layout of `params`.
    pub fn new(params: &Params, learning_rate: f64, decay: f64, epsilon: f64) -> Self {
        RmsProp {
            learning_rate,
            decay,
            epsilon,
            accum: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut Params, grads: &Params) {
        let (lr, decay, eps) = (self.learning_rate, self.decay, self.epsilon);
        for ((p, (_, g)), s) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.accum.tensors_mut())
        {
            rmsprop_update(p, g, s, lr, decay, eps);
        }
    }
}
