//! Declarative network specs and their parameterized instances.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::params::ParamSet;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

/// One layer of a sequential network.
///
/// `DownBlock` is two 3x3 convs with a stride-2 first conv and a 1x1
/// stride-2 projection skip. `UpBlock` is nearest x2 upsampling followed by
/// two 3x3 convs with a 1x1 projection skip.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSpec {
    Conv { in_c: usize, out_c: usize, kernel: usize, stride: usize },
    Relu,
    Sigmoid,
    MaxPool2,
    DownBlock { in_c: usize, out_c: usize },
    UpBlock { in_c: usize, out_c: usize },
    SoftmaxChannels,
    GlobalAvgPoolLinear { in_c: usize, out: usize },
    /// Saves the current activation on a stack for a later `PopConcat`.
    PushSkip,
    /// Pops the most recent saved activation and concatenates it along the
    /// channel axis (same spatial size required).
    PopConcat,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl NetworkSpec {
    /// Checks channel chaining through the layer sequence and returns the
    /// output channel count.
    pub fn validate(&self) -> Result<usize> {
        let mut c = self.input_channels;
        let mut skips: Vec<usize> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            c = match *layer {
                LayerSpec::Conv { in_c, out_c, kernel, stride } => {
                    if in_c != c {
                        return Err(NnError::Shape(format!(
                            "layer {i}: conv expects {in_c} channels, gets {c}"
                        )));
                    }
                    if kernel % 2 == 0 || stride == 0 {
                        return Err(NnError::Shape(format!(
                            "layer {i}: conv kernel must be odd, stride nonzero"
                        )));
                    }
                    out_c
                }
                LayerSpec::DownBlock { in_c, out_c } | LayerSpec::UpBlock { in_c, out_c } => {
                    if in_c != c {
                        return Err(NnError::Shape(format!(
                            "layer {i}: block expects {in_c} channels, gets {c}"
                        )));
                    }
                    out_c
                }
                LayerSpec::GlobalAvgPoolLinear { in_c, out } => {
                    if in_c != c {
                        return Err(NnError::Shape(format!(
                            "layer {i}: head expects {in_c} channels, gets {c}"
                        )));
                    }
                    out
                }
                LayerSpec::PushSkip => {
                    skips.push(c);
                    c
                }
                LayerSpec::PopConcat => match skips.pop() {
                    Some(s) => c + s,
                    None => {
                        return Err(NnError::Shape(format!(
                            "layer {i}: concat without a saved skip"
                        )))
                    }
                },
                LayerSpec::Relu
                | LayerSpec::Sigmoid
                | LayerSpec::MaxPool2
                | LayerSpec::SoftmaxChannels => c,
            };
        }
        if !skips.is_empty() {
            return Err(NnError::Shape(format!("{} saved skips never consumed", skips.len())));
        }
        Ok(c)
    }

    /// U-Net-style encoder-decoder used by the completion, confidence and Q
    /// networks: input conv, maxpool, one down block per width step, then
    /// mirrored up blocks (one extra to undo the pool) with long skip
    /// concatenations at each resolution, and a 1x1 head conv.
    pub fn encoder_decoder(input_channels: usize, widths: &[usize], head_out: usize) -> NetworkSpec {
        assert!(!widths.is_empty());
        let mut layers = vec![
            LayerSpec::Conv { in_c: input_channels, out_c: widths[0], kernel: 3, stride: 1 },
            LayerSpec::Relu,
            LayerSpec::PushSkip,
            LayerSpec::MaxPool2,
        ];
        for i in 1..widths.len() {
            layers.push(LayerSpec::PushSkip);
            layers.push(LayerSpec::DownBlock { in_c: widths[i - 1], out_c: widths[i] });
        }
        for i in (1..widths.len()).rev() {
            layers.push(LayerSpec::UpBlock { in_c: widths[i], out_c: widths[i - 1] });
            layers.push(LayerSpec::PopConcat);
            layers.push(LayerSpec::Conv {
                in_c: 2 * widths[i - 1],
                out_c: widths[i - 1],
                kernel: 3,
                stride: 1,
            });
            layers.push(LayerSpec::Relu);
        }
        layers.push(LayerSpec::UpBlock { in_c: widths[0], out_c: widths[0] });
        layers.push(LayerSpec::PopConcat);
        layers.push(LayerSpec::Conv { in_c: 2 * widths[0], out_c: head_out, kernel: 1, stride: 1 });
        NetworkSpec { input_channels, layers }
    }

    /// Spatial downsampling factor the input must be divisible by.
    pub fn spatial_divisor(&self) -> usize {
        let mut d = 1usize;
        for layer in &self.layers {
            match layer {
                LayerSpec::MaxPool2 | LayerSpec::DownBlock { .. } => d *= 2,
                _ => {}
            }
        }
        d
    }
}

#[derive(Debug, Clone)]
enum LayerParams {
    None,
    Conv { w: usize, b: usize },
    Block { c1w: usize, c1b: usize, c2w: usize, c2b: usize, skw: usize, skb: usize },
    Linear { w: usize, b: usize },
}

/// A spec plus its parameters. Immutable during inference; training mutates
/// `params` through the optimizer only.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    pub params: ParamSet,
    layer_params: Vec<LayerParams>,
}

fn he_conv(rng: &mut ChaCha8Rng, out_c: usize, in_c: usize, k: usize) -> Tensor {
    let fan_in = (in_c * k * k) as f32;
    let std = (2.0 / fan_in).sqrt();
    let n = out_c * in_c * k * k;
    let data = (0..n).map(|_| gaussian(rng) * std).collect();
    Tensor::from_vec(&[out_c, in_c, k, k], data).unwrap()
}

// Box-Muller; two uniforms per sample keeps the stream layout simple.
fn gaussian(rng: &mut ChaCha8Rng) -> f32 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}

impl Network {
    /// He fan-in initialization, deterministic in `seed`.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Network> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let mut layer_params = Vec::with_capacity(spec.layers.len());
        for (i, layer) in spec.layers.iter().enumerate() {
            let lp = match *layer {
                LayerSpec::Conv { in_c, out_c, kernel, .. } => {
                    let w = params.add(format!("layer{i}.conv.weight"), he_conv(&mut rng, out_c, in_c, kernel));
                    let b = params.add(format!("layer{i}.conv.bias"), Tensor::zeros(&[out_c]));
                    LayerParams::Conv { w, b }
                }
                LayerSpec::DownBlock { in_c, out_c } | LayerSpec::UpBlock { in_c, out_c } => {
                    let c1w = params.add(format!("layer{i}.conv1.weight"), he_conv(&mut rng, out_c, in_c, 3));
                    let c1b = params.add(format!("layer{i}.conv1.bias"), Tensor::zeros(&[out_c]));
                    let c2w = params.add(format!("layer{i}.conv2.weight"), he_conv(&mut rng, out_c, out_c, 3));
                    let c2b = params.add(format!("layer{i}.conv2.bias"), Tensor::zeros(&[out_c]));
                    let skw = params.add(format!("layer{i}.skip.weight"), he_conv(&mut rng, out_c, in_c, 1));
                    let skb = params.add(format!("layer{i}.skip.bias"), Tensor::zeros(&[out_c]));
                    LayerParams::Block { c1w, c1b, c2w, c2b, skw, skb }
                }
                LayerSpec::GlobalAvgPoolLinear { in_c, out } => {
                    let std = (2.0 / in_c as f32).sqrt();
                    let data = (0..out * in_c).map(|_| gaussian(&mut rng) * std).collect();
                    let w = params.add(
                        format!("layer{i}.linear.weight"),
                        Tensor::from_vec(&[out, in_c], data)?,
                    );
                    let b = params.add(format!("layer{i}.linear.bias"), Tensor::zeros(&[out]));
                    LayerParams::Linear { w, b }
                }
                _ => LayerParams::None,
            };
            layer_params.push(lp);
        }
        Ok(Network { spec, params, layer_params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    /// Runs the network on an existing tape node, recording the graph.
    pub fn forward(&self, tape: &mut Tape, input: NodeId) -> Result<NodeId> {
        let mut x = input;
        let mut skips: Vec<NodeId> = Vec::new();
        for (layer, lp) in self.spec.layers.iter().zip(&self.layer_params) {
            x = match (layer, lp) {
                (LayerSpec::PushSkip, _) => {
                    skips.push(x);
                    x
                }
                (LayerSpec::PopConcat, _) => {
                    let s = skips.pop().ok_or_else(|| {
                        NnError::Usage("concat without a saved skip".into())
                    })?;
                    tape.concat_channels(x, s)?
                }
                (LayerSpec::Conv { stride, .. }, LayerParams::Conv { w, b }) => {
                    tape.conv2d(&self.params, x, *w, *b, *stride)?
                }
                (LayerSpec::Relu, _) => tape.relu(x),
                (LayerSpec::Sigmoid, _) => tape.sigmoid(x),
                (LayerSpec::MaxPool2, _) => tape.max_pool2(x)?,
                (LayerSpec::SoftmaxChannels, _) => tape.softmax_channels(x)?,
                (
                    LayerSpec::DownBlock { .. },
                    LayerParams::Block { c1w, c1b, c2w, c2b, skw, skb },
                ) => {
                    let h = tape.conv2d(&self.params, x, *c1w, *c1b, 2)?;
                    let h = tape.relu(h);
                    let h = tape.conv2d(&self.params, h, *c2w, *c2b, 1)?;
                    let s = tape.conv2d(&self.params, x, *skw, *skb, 2)?;
                    let y = tape.add(h, s)?;
                    tape.relu(y)
                }
                (
                    LayerSpec::UpBlock { .. },
                    LayerParams::Block { c1w, c1b, c2w, c2b, skw, skb },
                ) => {
                    let u = tape.upsample2(x)?;
                    let h = tape.conv2d(&self.params, u, *c1w, *c1b, 1)?;
                    let h = tape.relu(h);
                    let h = tape.conv2d(&self.params, h, *c2w, *c2b, 1)?;
                    let s = tape.conv2d(&self.params, u, *skw, *skb, 1)?;
                    let y = tape.add(h, s)?;
                    tape.relu(y)
                }
                (LayerSpec::GlobalAvgPoolLinear { .. }, LayerParams::Linear { w, b }) => {
                    let p = tape.global_avg_pool(x)?;
                    tape.linear(&self.params, p, *w, *b)?
                }
                _ => return Err(NnError::Usage("layer/params mismatch".into())),
            };
        }
        Ok(x)
    }

    /// Inference convenience: fresh tape, returns the output tensor.
    pub fn infer(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.input(input.clone());
        let out = self.forward(&mut tape, x)?;
        Ok(tape.value(out).clone())
    }
}
