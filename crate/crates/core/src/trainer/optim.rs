use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::Param;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Cosine annealing from the base rate to 0 over the run.
    Cosine,
}

impl Schedule {
    /// Learning rate for `step` (0-based) out of `total` steps.
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            Schedule::Constant => base,
            Schedule::Cosine => {
                let t = step as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t.min(1.0)).cos())
            }
        }
    }
}

/// `p ← p - lr (g + weight_decay p)`.
pub fn sgd_step(param: &mut Param, lr: f64, weight_decay: f64) {
    for (p, g) in param.value.data_mut().iter_mut().zip(param.grad.data()) {
        *p -= lr * (g + weight_decay * *p);
    }
}

/// Plain SGD with coupled weight decay and optional heavy-ball momentum.
#[derive(Clone, Debug, Default)]
pub struct Sgd {
    pub weight_decay: f64,
    pub momentum: Option<f64>,
    velocity: Vec<Vec<f64>>,
}

impl Sgd {
    pub fn new(weight_decay: f64, momentum: Option<f64>) -> Result<Self> {
        if weight_decay < 0.0 || !weight_decay.is_finite() {
            return Err(Error::contract(format!(
                "weight decay must be >= 0, got {weight_decay}"
            )));
        }
        if let Some(m) = momentum {
            if !(0.0..1.0).contains(&m) {
                return Err(Error::contract(format!(
                    "momentum must lie in [0, 1), got {m}"
                )));
            }
        }
        Ok(Sgd {
            weight_decay,
            momentum,
            velocity: Vec::new(),
        })
    }

    pub fn step(&mut self, params: Vec<&mut Param>, lr: f64) {
        let Some(m) = self.momentum else {
            for p in params {
                sgd_step(p, lr, self.weight_decay);
            }
            return;
        };
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        }
        for (p, v) in params.into_iter().zip(&mut self.velocity) {
            let grad = p.grad.data();
            for ((w, vi), g) in p.value.data_mut().iter_mut().zip(v.iter_mut()).zip(grad) {
                *vi = m * *vi + g + self.weight_decay * *w;
                *w -= lr * *vi;
            }
        }
    }
}
