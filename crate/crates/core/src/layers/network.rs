use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{Deconv, Layer, LayerSpec, Mode, Param};
use crate::linalg::{Matrix, SeededRng, Tensor};
use crate::ndcv;

/// An ordered stack of layers.
#[derive(Default)]
pub struct Network {
    layers: Vec<Box<dyn Layer>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    layers: Vec<LayerSpec>,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    layer: usize,
    name: String,
    shape: Vec<usize>,
}

const CHECKPOINT_FORMAT: &str = "netdeconv-checkpoint";

impl Network {
    pub fn new(layers: Vec<Box<dyn Layer>>) -> Self {
        Network { layers }
    }

    pub fn from_specs(specs: &[LayerSpec], rng: &mut SeededRng) -> Result<Self> {
        let layers = specs
            .iter()
            .map(|s| s.build(&mut rng.fork()))
            .collect::<Result<_>>()?;
        Ok(Network { layers })
    }

    pub fn push(&mut self, layer: Box<dyn Layer>) {
        self.layers.push(layer);
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layers(&self) -> &[Box<dyn Layer>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Box<dyn Layer>] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec()).collect()
    }

    /// Errors carry the index of the failing layer.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            h = layer.forward(&h, mode).map_err(|e| e.in_layer(i))?;
        }
        Ok(h)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for (i, layer) in self.layers.iter_mut().enumerate().rev() {
            g = layer.backward(&g).map_err(|e| e.in_layer(i))?;
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    /// One value per deconvolution layer: the largest last-step Newton–Schulz
    /// residual over its groups.
    pub fn diagnostics(&self) -> Vec<f64> {
        self.layers.iter().filter_map(|l| l.diagnostic()).collect()
    }

    pub fn deconv_layers(&self) -> Vec<&Deconv> {
        self.layers.iter().filter_map(|l| l.as_deconv()).collect()
    }

    pub fn deconv_layers_mut(&mut self) -> Vec<&mut Deconv> {
        self.layers
            .iter_mut()
            .filter_map(|l| l.as_deconv_mut())
            .collect()
    }

    /// Inference copy with every deconvolution folded into a plain layer.
    pub fn folded(&self) -> Result<Network> {
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            match layer.as_deconv() {
                Some(d) => out.push(d.to_plain().map_err(|e| e.in_layer(i))?),
                None => {
                    let mut fresh = layer.spec().build(&mut SeededRng::new(0))?;
                    let tensors: Vec<Tensor> = layer.state().into_iter().map(|(_, t)| t).collect();
                    fresh.load_state(&tensors)?;
                    out.push(fresh);
                }
            }
        }
        Ok(Network { layers: out })
    }

    /// Write `<stem>.ndcv` (tensors) and `<stem>.json` (manifest).
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        let mut entries = Vec::new();
        let mut mats = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, t) in layer.state() {
                entries.push(TensorEntry {
                    layer: i,
                    name,
                    shape: t.shape().to_vec(),
                });
                mats.push(as_matrix(t)?);
            }
        }
        let refs: Vec<&Matrix> = mats.iter().collect();
        ndcv::save(stem.with_extension("ndcv"), &refs)?;
        let manifest = Manifest {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            layers: self.specs(),
            tensors: entries,
        };
        let json_path = stem.with_extension("json");
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<Network> {
        let stem = stem.as_ref();
        let json_path = stem.with_extension("json");
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(Error::State(format!(
                "{} is not a checkpoint manifest",
                json_path.display()
            )));
        }
        let mats = ndcv::load(stem.with_extension("ndcv"))?;
        if mats.len() != manifest.tensors.len() {
            return Err(Error::State(format!(
                "manifest lists {} tensors, container holds {}",
                manifest.tensors.len(),
                mats.len()
            )));
        }
        let mut net = Network::from_specs(&manifest.layers, &mut SeededRng::new(0))?;
        let mut per_layer: Vec<Vec<Tensor>> = vec![Vec::new(); net.len()];
        for (entry, m) in manifest.tensors.iter().zip(mats) {
            let t = Tensor::new(entry.shape.clone(), m.into_vec())?;
            per_layer
                .get_mut(entry.layer)
                .ok_or_else(|| Error::State(format!("tensor for missing layer {}", entry.layer)))?
                .push(t);
        }
        for (i, (layer, tensors)) in net.layers.iter_mut().zip(per_layer).enumerate() {
            layer.load_state(&tensors).map_err(|e| e.in_layer(i))?;
        }
        Ok(net)
    }
}

fn as_matrix(t: Tensor) -> Result<Matrix> {
    match t.ndim() {
        0 | 1 => {
            let n = t.len();
            Matrix::from_vec(1, n, t.into_data())
        }
        _ => t.into_batch_matrix(),
    }
}
