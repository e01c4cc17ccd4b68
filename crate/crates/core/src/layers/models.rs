//! The two architecture families used by the experiments.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::layers::{
    BatchNorm, Conv2d, Deconv, GlobalAvgPool, Layer, Linear, MaxPool2d, Network, Relu, Sigmoid,
};
use crate::linalg::SeededRng;
use crate::patches::PatchSpec;
use crate::whitening::WhiteningConfig;

/// Whitening settings for a deconvolution network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeconvPlan {
    /// The layer that sees raw pixels.
    pub input: WhiteningConfig,
    pub hidden: WhiteningConfig,
    /// Block size for fully connected layers (conv layers use `block_size`
    /// of their config).
    pub fc_block_size: usize,
}

impl Default for DeconvPlan {
    fn default() -> Self {
        DeconvPlan {
            input: WhiteningConfig::input_layer(),
            hidden: WhiteningConfig::default(),
            fc_block_size: 512,
        }
    }
}

impl DeconvPlan {
    fn conv_config(&self, first: bool) -> WhiteningConfig {
        if first {
            self.input.clone()
        } else {
            self.hidden.clone()
        }
    }

    fn fc_config(&self, first: bool) -> WhiteningConfig {
        WhiteningConfig {
            block_size: self.fc_block_size,
            ..self.conv_config(first)
        }
    }

    /// Apply one setting change to both configs.
    pub fn map(mut self, f: impl Fn(&mut WhiteningConfig)) -> Self {
        f(&mut self.input);
        f(&mut self.hidden);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Norm {
    Plain,
    BatchNorm,
    Deconv(DeconvPlan),
}

impl Norm {
    pub fn label(&self) -> &'static str {
        match self {
            Norm::Plain => "plain",
            Norm::BatchNorm => "batchnorm",
            Norm::Deconv(_) => "deconv",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
}

fn activation(a: Activation) -> Box<dyn Layer> {
    match a {
        Activation::Relu => Box::new(Relu::default()),
        Activation::Sigmoid => Box::new(Sigmoid::default()),
    }
}

/// Fully connected net with sigmoid activations. Deconvolution sits in front
/// of every linear layer, including the classifier; batch norm follows every
/// hidden linear layer.
pub fn mlp(
    inputs: usize,
    hidden: &[usize],
    classes: usize,
    norm: &Norm,
    rng: &mut SeededRng,
) -> Result<Network> {
    let mut net = Network::default();
    let mut width = inputs;
    let sizes: Vec<usize> = hidden.iter().copied().chain([classes]).collect();
    for (i, &out) in sizes.iter().enumerate() {
        let last = i + 1 == sizes.len();
        let mut r = rng.fork();
        match norm {
            Norm::Deconv(plan) => {
                net.push(Box::new(Deconv::linear(
                    width,
                    out,
                    plan.fc_config(i == 0),
                    &mut r,
                )?));
            }
            _ => net.push(Box::new(Linear::new(width, out, &mut r))),
        }
        if !last {
            if *norm == Norm::BatchNorm {
                net.push(Box::new(BatchNorm::new(out)));
            }
            net.push(activation(Activation::Sigmoid));
        }
        width = out;
    }
    Ok(net)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VggItem {
    /// 3x3 same-padded convolution to this many channels, then ReLU.
    Conv(usize),
    /// 2x2 max pooling.
    Pool,
}

/// VGG-style stack ending in global average pooling and a linear classifier.
pub fn vgg_like(
    in_channels: usize,
    items: &[VggItem],
    classes: usize,
    norm: &Norm,
    rng: &mut SeededRng,
) -> Result<Network> {
    let mut net = Network::default();
    let mut c = in_channels;
    let mut first = true;
    for item in items {
        match *item {
            VggItem::Conv(out) => {
                let mut r = rng.fork();
                let patch = PatchSpec::same(3);
                match norm {
                    Norm::Deconv(plan) => net.push(Box::new(Deconv::conv(
                        c,
                        out,
                        patch,
                        plan.conv_config(first),
                        &mut r,
                    )?)),
                    _ => net.push(Box::new(Conv2d::new(c, out, patch, &mut r)?)),
                }
                if *norm == Norm::BatchNorm {
                    net.push(Box::new(BatchNorm::new(out)));
                }
                net.push(activation(Activation::Relu));
                c = out;
                first = false;
            }
            VggItem::Pool => net.push(Box::new(MaxPool2d::new(2)?)),
        }
    }
    net.push(Box::new(GlobalAvgPool::default()));
    let mut r = rng.fork();
    match norm {
        Norm::Deconv(plan) => net.push(Box::new(Deconv::linear(
            c,
            classes,
            plan.fc_config(first),
            &mut r,
        )?)),
        _ => net.push(Box::new(Linear::new(c, classes, &mut r))),
    }
    Ok(net)
}
