//! Straight-loop f64 reference implementations, for test oracles only.
//!
//! These mirror the layer semantics of [`crate::net`] but share no code with
//! the production kernels: plain loop nests, f64 end to end. Finite-difference
//! gradient checks evaluate this path so that f32 rounding in the fast
//! kernels does not drown the comparison.

use crate::net::{LayerSpec, NetworkSpec};
use crate::params::ParamSet;

#[derive(Debug, Clone)]
pub struct RefTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl RefTensor {
    pub fn from_f32(shape: &[usize], data: &[f32]) -> RefTensor {
        RefTensor {
            shape: shape.to_vec(),
            data: data.iter().map(|v| *v as f64).collect(),
        }
    }
}

fn chw(t: &RefTensor) -> (usize, usize, usize) {
    (t.shape[0], t.shape[1], t.shape[2])
}

pub fn conv2d(x: &RefTensor, w: &RefTensor, b: &[f64], stride: usize) -> RefTensor {
    let (in_c, ih, iw) = chw(x);
    let (out_c, k) = (w.shape[0], w.shape[2]);
    let pad = (k - 1) / 2;
    let oh = (ih + 2 * pad - k) / stride + 1;
    let ow = (iw + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0f64; out_c * oh * ow];
    for oc in 0..out_c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = b[oc];
                for ic in 0..in_c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy >= 0 && (iy as usize) < ih && ix >= 0 && (ix as usize) < iw {
                                acc += w.data[((oc * in_c + ic) * k + ky) * k + kx]
                                    * x.data[(ic * ih + iy as usize) * iw + ix as usize];
                            }
                        }
                    }
                }
                out[(oc * oh + oy) * ow + ox] = acc;
            }
        }
    }
    RefTensor { shape: vec![out_c, oh, ow], data: out }
}

pub fn relu(x: &RefTensor) -> RefTensor {
    RefTensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|v| v.max(0.0)).collect(),
    }
}

pub fn sigmoid(x: &RefTensor) -> RefTensor {
    RefTensor {
        shape: x.shape.clone(),
        data: x.data.iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
    }
}

pub fn add(a: &RefTensor, b: &RefTensor) -> RefTensor {
    RefTensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    }
}

pub fn max_pool2(x: &RefTensor) -> RefTensor {
    let (c, h, w) = chw(x);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f64; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        best = best.max(x.data[(ch * h + oy * 2 + dy) * w + ox * 2 + dx]);
                    }
                }
                out[(ch * oh + oy) * ow + ox] = best;
            }
        }
    }
    RefTensor { shape: vec![c, oh, ow], data: out }
}

pub fn upsample2(x: &RefTensor) -> RefTensor {
    let (c, h, w) = chw(x);
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![0.0f64; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                out[(ch * oh + oy) * ow + ox] = x.data[(ch * h + oy / 2) * w + ox / 2];
            }
        }
    }
    RefTensor { shape: vec![c, oh, ow], data: out }
}

pub fn concat_channels(a: &RefTensor, b: &RefTensor) -> RefTensor {
    let mut data = a.data.clone();
    data.extend_from_slice(&b.data);
    RefTensor {
        shape: vec![a.shape[0] + b.shape[0], a.shape[1], a.shape[2]],
        data,
    }
}

pub fn softmax_channels(x: &RefTensor) -> RefTensor {
    let (c, h, w) = chw(x);
    let hw = h * w;
    let mut out = vec![0.0f64; c * hw];
    for px in 0..hw {
        let m = (0..c).map(|ch| x.data[ch * hw + px]).fold(f64::MIN, f64::max);
        let z: f64 = (0..c).map(|ch| (x.data[ch * hw + px] - m).exp()).sum();
        for ch in 0..c {
            out[ch * hw + px] = (x.data[ch * hw + px] - m).exp() / z;
        }
    }
    RefTensor { shape: x.shape.clone(), data: out }
}

pub fn global_avg_pool(x: &RefTensor) -> RefTensor {
    let (c, h, w) = chw(x);
    let data = (0..c)
        .map(|ch| x.data[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
        .collect();
    RefTensor { shape: vec![c], data }
}

pub fn linear(x: &RefTensor, w: &RefTensor, b: &[f64]) -> RefTensor {
    let (out_n, in_n) = (w.shape[0], w.shape[1]);
    let data = (0..out_n)
        .map(|o| {
            b[o] + (0..in_n)
                .map(|j| w.data[o * in_n + j] * x.data[j])
                .sum::<f64>()
        })
        .collect();
    RefTensor { shape: vec![out_n], data }
}

pub fn cross_entropy_masked(logits: &RefTensor, target: &[u16], mask: &[bool]) -> f64 {
    let (c, h, w) = chw(logits);
    let hw = h * w;
    let mut acc = 0.0;
    let mut count = 0usize;
    for px in 0..hw {
        if !mask[px] {
            continue;
        }
        let m = (0..c).map(|ch| logits.data[ch * hw + px]).fold(f64::MIN, f64::max);
        let z: f64 = (0..c).map(|ch| (logits.data[ch * hw + px] - m).exp()).sum();
        acc += z.ln() - (logits.data[target[px] as usize * hw + px] - m);
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        acc / count as f64
    }
}

pub fn mse_masked(pred: &[f64], target: &[f32], mask: &[bool]) -> f64 {
    let mut acc = 0.0;
    let mut count = 0usize;
    for i in 0..pred.len() {
        if mask[i] {
            let d = pred[i] - target[i] as f64;
            acc += d * d;
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        acc / count as f64
    }
}

/// Evaluates a whole [`NetworkSpec`] with parameters taken from `params`
/// (cast to f64), optionally with one parameter element perturbed.
pub fn forward_spec(
    spec: &NetworkSpec,
    params: &ParamSet,
    input: &RefTensor,
    perturb: Option<(usize, usize, f64)>,
) -> RefTensor {
    let fetch = |idx: usize| -> RefTensor {
        let p = params.get(idx);
        let mut t = RefTensor::from_f32(p.value.shape(), p.value.data());
        if let Some((pi, pj, delta)) = perturb {
            if pi == idx {
                t.data[pj] += delta;
            }
        }
        t
    };
    let fetch_vec = |idx: usize| fetch(idx).data;

    let mut x = input.clone();
    let mut pi = 0usize; // parameter cursor, mirrors Network::new ordering
    let mut skips: Vec<RefTensor> = Vec::new();
    for layer in &spec.layers {
        x = match *layer {
            LayerSpec::PushSkip => {
                skips.push(x.clone());
                x
            }
            LayerSpec::PopConcat => {
                let s = skips.pop().expect("validated spec");
                concat_channels(&x, &s)
            }
            LayerSpec::Conv { stride, .. } => {
                let (w, b) = (fetch(pi), fetch_vec(pi + 1));
                pi += 2;
                conv2d(&x, &w, &b, stride)
            }
            LayerSpec::Relu => relu(&x),
            LayerSpec::Sigmoid => sigmoid(&x),
            LayerSpec::MaxPool2 => max_pool2(&x),
            LayerSpec::SoftmaxChannels => softmax_channels(&x),
            LayerSpec::DownBlock { .. } => {
                let (c1w, c1b) = (fetch(pi), fetch_vec(pi + 1));
                let (c2w, c2b) = (fetch(pi + 2), fetch_vec(pi + 3));
                let (skw, skb) = (fetch(pi + 4), fetch_vec(pi + 5));
                pi += 6;
                let h = conv2d(&x, &c1w, &c1b, 2);
                let h = relu(&h);
                let h = conv2d(&h, &c2w, &c2b, 1);
                let s = conv2d(&x, &skw, &skb, 2);
                relu(&add(&h, &s))
            }
            LayerSpec::UpBlock { .. } => {
                let (c1w, c1b) = (fetch(pi), fetch_vec(pi + 1));
                let (c2w, c2b) = (fetch(pi + 2), fetch_vec(pi + 3));
                let (skw, skb) = (fetch(pi + 4), fetch_vec(pi + 5));
                pi += 6;
                let u = upsample2(&x);
                let h = conv2d(&u, &c1w, &c1b, 1);
                let h = relu(&h);
                let h = conv2d(&h, &c2w, &c2b, 1);
                let s = conv2d(&u, &skw, &skb, 1);
                relu(&add(&h, &s))
            }
            LayerSpec::GlobalAvgPoolLinear { .. } => {
                let (w, b) = (fetch(pi), fetch_vec(pi + 1));
                pi += 2;
                let p = global_avg_pool(&x);
                linear(&p, &w, &b)
            }
        };
    }
    x
}
