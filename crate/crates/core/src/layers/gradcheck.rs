//! Central finite-difference checks for layer and loss gradients.
//!
//! The probe loss is `L(x) = <f(x), r>` for a fixed random `r`, so the
//! analytic input gradient is `backward(r)`.

use crate::error::Result;
use crate::layers::{Layer, Mode};
use crate::linalg::{SeededRng, Tensor};

pub const DEFAULT_STEP: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Relative error of the input gradient.
    pub input: f64,
    /// Relative error per parameter, by name.
    pub params: Vec<(String, f64)>,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.params.iter().map(|p| p.1).fold(self.input, f64::max)
    }
}

/// `‖a - b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compare `layer`'s backward against central differences at `x`.
///
/// Every probe re-runs `forward` in `mode`, so layers whose forward has side
/// effects (running statistics) should be checked with fixed statistics.
pub fn check_layer(
    layer: &mut dyn Layer,
    x: &Tensor,
    mode: Mode,
    h: f64,
    seed: u64,
) -> Result<GradCheck> {
    let y = layer.forward(x, mode)?;
    let r = SeededRng::new(seed).gaussian_tensor(y.shape());
    let gx = layer.backward(&r)?;
    let analytic_params: Vec<(String, Tensor)> = layer
        .params()
        .iter()
        .map(|p| (p.name.to_string(), p.grad.clone()))
        .collect();

    let probe =
        |layer: &mut dyn Layer, x: &Tensor| -> Result<f64> { Ok(layer.forward(x, mode)?.dot(&r)) };

    let mut numeric = vec![0.0; x.len()];
    let mut xp = x.clone();
    for i in 0..x.len() {
        let v = xp.data()[i];
        xp.data_mut()[i] = v + h;
        let up = probe(layer, &xp)?;
        xp.data_mut()[i] = v - h;
        let down = probe(layer, &xp)?;
        xp.data_mut()[i] = v;
        numeric[i] = (up - down) / (2.0 * h);
    }
    let input = relative_error(&numeric, gx.data());

    let mut params = Vec::new();
    for (pi, (name, analytic)) in analytic_params.iter().enumerate() {
        let mut numeric = vec![0.0; analytic.len()];
        for i in 0..analytic.len() {
            let v = layer.params()[pi].value.data()[i];
            layer.params_mut()[pi].value.data_mut()[i] = v + h;
            let up = probe(layer, x)?;
            layer.params_mut()[pi].value.data_mut()[i] = v - h;
            let down = probe(layer, x)?;
            layer.params_mut()[pi].value.data_mut()[i] = v;
            numeric[i] = (up - down) / (2.0 * h);
        }
        params.push((name.clone(), relative_error(&numeric, analytic.data())));
    }
    Ok(GradCheck { input, params })
}

/// Same check for a loss `f(pred) -> (value, ∂value/∂pred)`.
pub fn check_loss(
    f: impl Fn(&Tensor) -> Result<(f64, Tensor)>,
    pred: &Tensor,
    h: f64,
) -> Result<f64> {
    let (_, analytic) = f(pred)?;
    let mut p = pred.clone();
    let mut numeric = vec![0.0; pred.len()];
    for i in 0..pred.len() {
        let v = p.data()[i];
        p.data_mut()[i] = v + h;
        let up = f(&p)?.0;
        p.data_mut()[i] = v - h;
        let down = f(&p)?.0;
        p.data_mut()[i] = v;
        numeric[i] = (up - down) / (2.0 * h);
    }
    Ok(relative_error(&numeric, analytic.data()))
}
