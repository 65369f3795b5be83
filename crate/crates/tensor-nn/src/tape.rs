//! Reverse-mode autodiff over a flat tape of tensor ops.
//!
//! A forward pass appends nodes; `backward` walks the tape once in reverse
//! and accumulates parameter gradients into the supplied [`ParamSet`].
//! Parameters are referenced by index rather than copied onto the tape.

use crate::error::{NnError, Result};
use crate::kernels;
use crate::params::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Conv {
        input: NodeId,
        weight: usize,
        bias: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Linear {
        input: NodeId,
        weight: usize,
        bias: usize,
    },
    Relu {
        input: NodeId,
    },
    Sigmoid {
        input: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    MaxPool2 {
        input: NodeId,
        argmax: Vec<u32>,
    },
    Upsample2 {
        input: NodeId,
    },
    ConcatChannels {
        a: NodeId,
        b: NodeId,
    },
    SoftmaxChannels {
        input: NodeId,
    },
    GlobalAvgPool {
        input: NodeId,
    },
    Sum {
        input: NodeId,
    },
    SelectPixel {
        input: NodeId,
        index: usize,
    },
    CrossEntropyMasked {
        logits: NodeId,
        target: Vec<u16>,
        mask: Vec<bool>,
        count: usize,
    },
    MseMasked {
        pred: NodeId,
        target: Vec<f32>,
        mask: Vec<bool>,
        count: usize,
    },
    L1ToConst {
        input: NodeId,
        target: f32,
    },
}

struct Node {
    value: Tensor,
    // f64 view of scalar reductions, for high-precision readout
    value_f64: Option<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f32>>>,
    spent: bool,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            value_f64: None,
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_scalar(&mut self, value: f64, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value: Tensor::scalar(value as f32),
            value_f64: Some(value),
            op,
            needs_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Scalar value of a rank-1 single-element node.
    pub fn scalar(&self, id: NodeId) -> f32 {
        self.nodes[id.0].value.data()[0]
    }

    /// Scalar value at full accumulation precision where available.
    pub fn scalar_f64(&self, id: NodeId) -> f64 {
        self.nodes[id.0]
            .value_f64
            .unwrap_or_else(|| self.nodes[id.0].value.data()[0] as f64)
    }

    /// Gradient of a node after `backward`; `None` for detached nodes.
    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Leaf tensor that does not require gradients.
    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Input, false)
    }

    /// Leaf tensor whose gradient is wanted (inspect via [`Tape::grad`]).
    pub fn input_grad(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Input, true)
    }

    pub fn conv2d(
        &mut self,
        params: &ParamSet,
        input: NodeId,
        weight: usize,
        bias: usize,
        stride: usize,
    ) -> Result<NodeId> {
        let (in_c, ih, iw) = self.node(input).value.chw()?;
        let w = &params.get(weight).value;
        let b = &params.get(bias).value;
        let ws = w.shape();
        if ws.len() != 4 || ws[1] != in_c {
            return Err(NnError::Shape(format!(
                "conv weight {:?} incompatible with input channels {}",
                ws, in_c
            )));
        }
        let (out_c, k) = (ws[0], ws[2]);
        if ws[3] != k || b.shape() != [out_c] {
            return Err(NnError::Shape(format!(
                "conv weight {:?} / bias {:?} malformed",
                ws,
                b.shape()
            )));
        }
        let pad = (k - 1) / 2;
        let out = kernels::conv2d_forward(
            self.node(input).value.data(),
            in_c,
            ih,
            iw,
            w.data(),
            b.data(),
            out_c,
            k,
            stride,
            pad,
        );
        let oh = kernels::conv_out_size(ih, k, stride, pad);
        let ow = kernels::conv_out_size(iw, k, stride, pad);
        let value = Tensor::from_vec(&[out_c, oh, ow], out)?;
        Ok(self.push(
            value,
            Op::Conv {
                input,
                weight,
                bias,
                kernel: k,
                stride,
                pad,
            },
            true,
        ))
    }

    pub fn linear(
        &mut self,
        params: &ParamSet,
        input: NodeId,
        weight: usize,
        bias: usize,
    ) -> Result<NodeId> {
        let x = &self.node(input).value;
        let w = &params.get(weight).value;
        let b = &params.get(bias).value;
        let ws = w.shape();
        if ws.len() != 2 || ws[1] != x.len() || b.shape() != [ws[0]] {
            return Err(NnError::Shape(format!(
                "linear weight {:?} / bias {:?} vs input len {}",
                ws,
                b.shape(),
                x.len()
            )));
        }
        let (out_n, in_n) = (ws[0], ws[1]);
        let mut out = vec![0.0f32; out_n];
        for (o, (wrow, bv)) in out
            .iter_mut()
            .zip(w.data().chunks(in_n).zip(b.data().iter()))
        {
            let mut acc = *bv as f64;
            for (wv, xv) in wrow.iter().zip(x.data().iter()) {
                acc += (*wv as f64) * (*xv as f64);
            }
            *o = acc as f32;
        }
        let value = Tensor::from_vec(&[out_n], out)?;
        Ok(self.push(value, Op::Linear { input, weight, bias }, true))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let n = self.node(input);
        let data = n.value.data().iter().map(|v| v.max(0.0)).collect();
        let value = Tensor::from_vec(n.value.shape(), data).unwrap();
        let ng = n.needs_grad;
        self.push(value, Op::Relu { input }, ng)
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let n = self.node(input);
        let data = n.value.data().iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect();
        let value = Tensor::from_vec(n.value.shape(), data).unwrap();
        let ng = n.needs_grad;
        self.push(value, Op::Sigmoid { input }, ng)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.node(a).value.shape() != self.node(b).value.shape() {
            return Err(NnError::Shape(format!(
                "add {:?} vs {:?}",
                self.node(a).value.shape(),
                self.node(b).value.shape()
            )));
        }
        let data = self
            .node(a)
            .value
            .data()
            .iter()
            .zip(self.node(b).value.data())
            .map(|(x, y)| x + y)
            .collect();
        let value = Tensor::from_vec(self.node(a).value.shape(), data)?;
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(value, Op::Add { a, b }, ng))
    }

    pub fn max_pool2(&mut self, input: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.node(input).value.chw()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(NnError::Shape(format!("max_pool2 needs even spatial size, got {h}x{w}")));
        }
        let (out, argmax) = kernels::max_pool2_forward(self.node(input).value.data(), c, h, w);
        let value = Tensor::from_vec(&[c, h / 2, w / 2], out)?;
        let ng = self.node(input).needs_grad;
        Ok(self.push(value, Op::MaxPool2 { input, argmax }, ng))
    }

    pub fn upsample2(&mut self, input: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.node(input).value.chw()?;
        let out = kernels::upsample2_forward(self.node(input).value.data(), c, h, w);
        let value = Tensor::from_vec(&[c, h * 2, w * 2], out)?;
        let ng = self.node(input).needs_grad;
        Ok(self.push(value, Op::Upsample2 { input }, ng))
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ca, ha, wa) = self.node(a).value.chw()?;
        let (cb, hb, wb) = self.node(b).value.chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(NnError::Shape(format!(
                "concat spatial mismatch {ha}x{wa} vs {hb}x{wb}"
            )));
        }
        let mut data = Vec::with_capacity((ca + cb) * ha * wa);
        data.extend_from_slice(self.node(a).value.data());
        data.extend_from_slice(self.node(b).value.data());
        let value = Tensor::from_vec(&[ca + cb, ha, wa], data)?;
        let ng = self.node(a).needs_grad || self.node(b).needs_grad;
        Ok(self.push(value, Op::ConcatChannels { a, b }, ng))
    }

    /// Per-pixel softmax across the channel dimension.
    pub fn softmax_channels(&mut self, input: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.node(input).value.chw()?;
        let inp = self.node(input).value.data();
        let hw = h * w;
        let mut out = vec![0.0f32; c * hw];
        for px in 0..hw {
            let mut m = f32::NEG_INFINITY;
            for ch in 0..c {
                m = m.max(inp[ch * hw + px]);
            }
            let mut z = 0.0f64;
            for ch in 0..c {
                z += ((inp[ch * hw + px] - m) as f64).exp();
            }
            for ch in 0..c {
                out[ch * hw + px] = (((inp[ch * hw + px] - m) as f64).exp() / z) as f32;
            }
        }
        let value = Tensor::from_vec(&[c, h, w], out)?;
        let ng = self.node(input).needs_grad;
        Ok(self.push(value, Op::SoftmaxChannels { input }, ng))
    }

    pub fn global_avg_pool(&mut self, input: NodeId) -> Result<NodeId> {
        let (c, h, w) = self.node(input).value.chw()?;
        let inp = self.node(input).value.data();
        let hw = (h * w) as f64;
        let out: Vec<f32> = (0..c)
            .map(|ch| {
                let s: f64 = inp[ch * h * w..(ch + 1) * h * w]
                    .iter()
                    .map(|v| *v as f64)
                    .sum();
                (s / hw) as f32
            })
            .collect();
        let value = Tensor::from_vec(&[c], out)?;
        let ng = self.node(input).needs_grad;
        Ok(self.push(value, Op::GlobalAvgPool { input }, ng))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let s: f64 = self.node(input).value.data().iter().map(|v| *v as f64).sum();
        let ng = self.node(input).needs_grad;
        self.push_scalar(s, Op::Sum { input }, ng)
    }

    /// Single element of a tensor by flat index, as a scalar node.
    pub fn select_pixel(&mut self, input: NodeId, index: usize) -> Result<NodeId> {
        let n = self.node(input);
        if index >= n.value.len() {
            return Err(NnError::Shape(format!(
                "select index {} out of range {}",
                index,
                n.value.len()
            )));
        }
        let v = n.value.data()[index];
        let ng = n.needs_grad;
        Ok(self.push(Tensor::scalar(v), Op::SelectPixel { input, index }, ng))
    }

    /// Mean cross-entropy over mask-true pixels; an empty mask yields 0.
    pub fn cross_entropy_masked(
        &mut self,
        logits: NodeId,
        target: &[u16],
        mask: &[bool],
    ) -> Result<NodeId> {
        let (c, h, w) = self.node(logits).value.chw()?;
        let hw = h * w;
        if target.len() != hw || mask.len() != hw {
            return Err(NnError::Shape(format!(
                "cross_entropy target/mask len {}/{} vs {} pixels",
                target.len(),
                mask.len(),
                hw
            )));
        }
        let data = self.node(logits).value.data();
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for px in 0..hw {
            if !mask[px] {
                continue;
            }
            let t = target[px] as usize;
            if t >= c {
                return Err(NnError::Data(format!(
                    "target label {} out of range for {} channels",
                    t, c
                )));
            }
            let mut m = f32::NEG_INFINITY;
            for ch in 0..c {
                m = m.max(data[ch * hw + px]);
            }
            let mut z = 0.0f64;
            for ch in 0..c {
                z += ((data[ch * hw + px] - m) as f64).exp();
            }
            acc += z.ln() - (data[t * hw + px] - m) as f64;
            count += 1;
        }
        let loss = if count == 0 { 0.0 } else { acc / count as f64 };
        let ng = self.node(logits).needs_grad;
        Ok(self.push_scalar(
            loss,
            Op::CrossEntropyMasked {
                logits,
                target: target.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            ng,
        ))
    }

    /// Mean squared error over mask-true pixels; an empty mask yields 0.
    pub fn mse_masked(&mut self, pred: NodeId, target: &[f32], mask: &[bool]) -> Result<NodeId> {
        let n = self.node(pred).value.len();
        if target.len() != n || mask.len() != n {
            return Err(NnError::Shape(format!(
                "mse target/mask len {}/{} vs {} elements",
                target.len(),
                mask.len(),
                n
            )));
        }
        let data = self.node(pred).value.data();
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for i in 0..n {
            if mask[i] {
                let d = (data[i] - target[i]) as f64;
                acc += d * d;
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { acc / count as f64 };
        let ng = self.node(pred).needs_grad;
        Ok(self.push_scalar(
            loss,
            Op::MseMasked {
                pred,
                target: target.to_vec(),
                mask: mask.to_vec(),
                count,
            },
            ng,
        ))
    }

    /// |x - target| of a scalar node (the double-DQN per-sample loss).
    pub fn l1_to_const(&mut self, input: NodeId, target: f32) -> Result<NodeId> {
        if self.node(input).value.len() != 1 {
            return Err(NnError::Shape("l1_to_const expects a scalar node".into()));
        }
        let v = (self.scalar_f64(input) - target as f64).abs();
        let ng = self.node(input).needs_grad;
        Ok(self.push_scalar(v, Op::L1ToConst { input, target }, ng))
    }

    /// Backpropagate from a scalar loss node, accumulating parameter
    /// gradients into `params.grad`. A tape can only be walked once.
    pub fn backward(&mut self, loss: NodeId, params: &mut ParamSet) -> Result<()> {
        if self.spent {
            return Err(NnError::Usage(
                "backward called twice on the same tape; re-run forward first".into(),
            ));
        }
        self.spent = true;
        if self.nodes[loss.0].value.len() != 1 {
            return Err(NnError::Usage("backward needs a scalar loss node".into()));
        }
        self.grads = self.nodes.iter().map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            if self.grads[i].is_none() || !self.nodes[i].needs_grad {
                continue;
            }
            let g = self.grads[i].take().unwrap();
            self.backprop_node(i, &g, params)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn add_grad(&mut self, id: NodeId, contribution: impl FnOnce(&mut [f32])) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        if self.grads[id.0].is_none() {
            self.grads[id.0] = Some(vec![0.0; self.nodes[id.0].value.len()]);
        }
        contribution(self.grads[id.0].as_mut().unwrap());
    }

    fn backprop_node(&mut self, i: usize, g: &[f32], params: &mut ParamSet) -> Result<()> {
        // Ops are split out of self.nodes temporarily to appease the borrow
        // checker without cloning payloads.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Input);
        match &op {
            Op::Input => {}
            Op::Conv {
                input,
                weight,
                bias,
                kernel,
                stride,
                pad,
            } => {
                let (in_c, ih, iw) = self.node(*input).value.chw()?;
                let out_c = self.nodes[i].value.shape()[0];
                {
                    let inp = self.nodes[input.0].value.data();
                    let (gw, gb) = params.two_grads_mut(*weight, *bias);
                    kernels::conv2d_backward_params(
                        inp,
                        in_c,
                        ih,
                        iw,
                        g,
                        out_c,
                        *kernel,
                        *stride,
                        *pad,
                        gw.data_mut(),
                        gb.data_mut(),
                    );
                }
                if self.nodes[input.0].needs_grad {
                    let ginp = kernels::conv2d_backward_input(
                        params.get(*weight).value.data(),
                        in_c,
                        ih,
                        iw,
                        g,
                        out_c,
                        *kernel,
                        *stride,
                        *pad,
                    );
                    self.add_grad(*input, |acc| {
                        for (a, v) in acc.iter_mut().zip(&ginp) {
                            *a += v;
                        }
                    });
                }
            }
            Op::Linear { input, weight, bias } => {
                let x: Vec<f32> = self.nodes[input.0].value.data().to_vec();
                let in_n = x.len();
                {
                    let gw = params.get_mut(*weight).grad.data_mut();
                    for (o, gv) in g.iter().enumerate() {
                        for (j, xv) in x.iter().enumerate() {
                            gw[o * in_n + j] += gv * xv;
                        }
                    }
                }
                {
                    let gb = params.get_mut(*bias).grad.data_mut();
                    for (o, gv) in g.iter().enumerate() {
                        gb[o] += gv;
                    }
                }
                if self.nodes[input.0].needs_grad {
                    let w = params.get(*weight).value.data().to_vec();
                    self.add_grad(*input, |acc| {
                        for (o, gv) in g.iter().enumerate() {
                            for (j, a) in acc.iter_mut().enumerate() {
                                *a += gv * w[o * in_n + j];
                            }
                        }
                    });
                }
            }
            Op::Relu { input } => {
                let act: Vec<f32> = self.nodes[i].value.data().to_vec();
                self.add_grad(*input, |acc| {
                    for ((a, gv), av) in acc.iter_mut().zip(g).zip(&act) {
                        if *av > 0.0 {
                            *a += gv;
                        }
                    }
                });
            }
            Op::Sigmoid { input } => {
                let act: Vec<f32> = self.nodes[i].value.data().to_vec();
                self.add_grad(*input, |acc| {
                    for ((a, gv), s) in acc.iter_mut().zip(g).zip(&act) {
                        *a += gv * s * (1.0 - s);
                    }
                });
            }
            Op::Add { a, b } => {
                self.add_grad(*a, |acc| {
                    for (x, gv) in acc.iter_mut().zip(g) {
                        *x += gv;
                    }
                });
                self.add_grad(*b, |acc| {
                    for (x, gv) in acc.iter_mut().zip(g) {
                        *x += gv;
                    }
                });
            }
            Op::MaxPool2 { input, argmax } => {
                let argmax = argmax.clone();
                self.add_grad(*input, |acc| {
                    for (o, src) in argmax.iter().enumerate() {
                        acc[*src as usize] += g[o];
                    }
                });
            }
            Op::Upsample2 { input } => {
                let (c, h, w) = self.nodes[input.0].value.chw()?;
                let (oh, ow) = (h * 2, w * 2);
                self.add_grad(*input, |acc| {
                    for ch in 0..c {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                acc[(ch * h + oy / 2) * w + ox / 2] +=
                                    g[(ch * oh + oy) * ow + ox];
                            }
                        }
                    }
                });
            }
            Op::ConcatChannels { a, b } => {
                let na = self.nodes[a.0].value.len();
                self.add_grad(*a, |acc| {
                    for (x, gv) in acc.iter_mut().zip(&g[..na]) {
                        *x += gv;
                    }
                });
                self.add_grad(*b, |acc| {
                    for (x, gv) in acc.iter_mut().zip(&g[na..]) {
                        *x += gv;
                    }
                });
            }
            Op::SoftmaxChannels { input } => {
                let (c, h, w) = self.nodes[i].value.chw()?;
                let hw = h * w;
                let s: Vec<f32> = self.nodes[i].value.data().to_vec();
                self.add_grad(*input, |acc| {
                    for px in 0..hw {
                        let mut dot = 0.0f64;
                        for ch in 0..c {
                            dot += (g[ch * hw + px] as f64) * (s[ch * hw + px] as f64);
                        }
                        for ch in 0..c {
                            acc[ch * hw + px] +=
                                s[ch * hw + px] * (g[ch * hw + px] - dot as f32);
                        }
                    }
                });
            }
            Op::GlobalAvgPool { input } => {
                let (c, h, w) = self.nodes[input.0].value.chw()?;
                let scale = 1.0 / (h * w) as f32;
                self.add_grad(*input, |acc| {
                    for ch in 0..c {
                        let gv = g[ch] * scale;
                        for a in &mut acc[ch * h * w..(ch + 1) * h * w] {
                            *a += gv;
                        }
                    }
                });
            }
            Op::Sum { input } => {
                self.add_grad(*input, |acc| {
                    for a in acc.iter_mut() {
                        *a += g[0];
                    }
                });
            }
            Op::SelectPixel { input, index } => {
                let index = *index;
                self.add_grad(*input, |acc| {
                    acc[index] += g[0];
                });
            }
            Op::CrossEntropyMasked {
                logits,
                target,
                mask,
                count,
            } => {
                if *count > 0 {
                    let (c, h, w) = self.nodes[logits.0].value.chw()?;
                    let hw = h * w;
                    let data: Vec<f32> = self.nodes[logits.0].value.data().to_vec();
                    let scale = g[0] / *count as f32;
                    let target = target.clone();
                    let mask = mask.clone();
                    self.add_grad(*logits, |acc| {
                        for px in 0..hw {
                            if !mask[px] {
                                continue;
                            }
                            let mut m = f32::NEG_INFINITY;
                            for ch in 0..c {
                                m = m.max(data[ch * hw + px]);
                            }
                            let mut z = 0.0f64;
                            for ch in 0..c {
                                z += ((data[ch * hw + px] - m) as f64).exp();
                            }
                            for ch in 0..c {
                                let p = (((data[ch * hw + px] - m) as f64).exp() / z) as f32;
                                let y = if target[px] as usize == ch { 1.0 } else { 0.0 };
                                acc[ch * hw + px] += scale * (p - y);
                            }
                        }
                    });
                }
            }
            Op::MseMasked {
                pred,
                target,
                mask,
                count,
            } => {
                if *count > 0 {
                    let data: Vec<f32> = self.nodes[pred.0].value.data().to_vec();
                    let scale = 2.0 * g[0] / *count as f32;
                    let target = target.clone();
                    let mask = mask.clone();
                    self.add_grad(*pred, |acc| {
                        for i in 0..data.len() {
                            if mask[i] {
                                acc[i] += scale * (data[i] - target[i]);
                            }
                        }
                    });
                }
            }
            Op::L1ToConst { input, target } => {
                let d = self.nodes[input.0].value.data()[0] - target;
                let sign = if d > 0.0 {
                    1.0
                } else if d < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                self.add_grad(*input, |acc| {
                    acc[0] += g[0] * sign;
                });
            }
        }
        self.nodes[i].op = op;
        Ok(())
    }
}
