//! Raw convolution / pooling loops. Parallelism is over disjoint output
//! planes only, so results are bit-deterministic regardless of thread count.

use rayon::prelude::*;

pub fn conv_out_size(i: usize, k: usize, stride: usize, pad: usize) -> usize {
    (i + 2 * pad - k) / stride + 1
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_forward(
    inp: &[f32],
    in_c: usize,
    ih: usize,
    iw: usize,
    weight: &[f32],
    bias: &[f32],
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f32> {
    let oh = conv_out_size(ih, k, stride, pad);
    let ow = conv_out_size(iw, k, stride, pad);
    let mut out = vec![0.0f32; out_c * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(oc, oplane)| {
        oplane.fill(bias[oc]);
        for ic in 0..in_c {
            let iplane = &inp[ic * ih * iw..(ic + 1) * ih * iw];
            let wbase = (oc * in_c + ic) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[wbase + ky * k + kx];
                    for oy in 0..oh {
                        let iy = (oy * stride + ky).wrapping_sub(pad);
                        if iy >= ih {
                            continue;
                        }
                        let irow = &iplane[iy * iw..(iy + 1) * iw];
                        let orow = &mut oplane[oy * ow..(oy + 1) * ow];
                        if stride == 1 {
                            // ix = ox + kx - pad; clip ox so ix stays in [0, iw)
                            let ox_lo = pad.saturating_sub(kx);
                            let ox_hi = (iw + pad - kx).min(ow);
                            for ox in ox_lo..ox_hi {
                                orow[ox] += wv * irow[ox + kx - pad];
                            }
                        } else {
                            for (ox, o) in orow.iter_mut().enumerate() {
                                let ix = (ox * stride + kx).wrapping_sub(pad);
                                if ix < iw {
                                    *o += wv * irow[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

/// Gradients w.r.t. weight and bias. Parallel over output channels.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_params(
    inp: &[f32],
    in_c: usize,
    ih: usize,
    iw: usize,
    gout: &[f32],
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    gweight: &mut [f32],
    gbias: &mut [f32],
) {
    let oh = conv_out_size(ih, k, stride, pad);
    let ow = conv_out_size(iw, k, stride, pad);
    debug_assert_eq!(gout.len(), out_c * oh * ow);
    gweight
        .par_chunks_mut(in_c * k * k)
        .zip(gbias.par_iter_mut())
        .enumerate()
        .for_each(|(oc, (gw_oc, gb_oc))| {
            let gplane = &gout[oc * oh * ow..(oc + 1) * oh * ow];
            *gb_oc += gplane.iter().sum::<f32>();
            for ic in 0..in_c {
                let iplane = &inp[ic * ih * iw..(ic + 1) * ih * iw];
                for ky in 0..k {
                    for kx in 0..k {
                        let mut acc = 0.0f32;
                        for oy in 0..oh {
                            let iy = (oy * stride + ky).wrapping_sub(pad);
                            if iy >= ih {
                                continue;
                            }
                            let irow = &iplane[iy * iw..(iy + 1) * iw];
                            let grow = &gplane[oy * ow..(oy + 1) * ow];
                            for (ox, g) in grow.iter().enumerate() {
                                let ix = (ox * stride + kx).wrapping_sub(pad);
                                if ix < iw {
                                    acc += g * irow[ix];
                                }
                            }
                        }
                        gw_oc[ic * k * k + ky * k + kx] += acc;
                    }
                }
            }
        });
}

/// Gradient w.r.t. the input. Parallel over input channels.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward_input(
    weight: &[f32],
    in_c: usize,
    ih: usize,
    iw: usize,
    gout: &[f32],
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> Vec<f32> {
    let oh = conv_out_size(ih, k, stride, pad);
    let ow = conv_out_size(iw, k, stride, pad);
    let mut ginp = vec![0.0f32; in_c * ih * iw];
    ginp.par_chunks_mut(ih * iw).enumerate().for_each(|(ic, gplane)| {
        for oc in 0..out_c {
            let goplane = &gout[oc * oh * ow..(oc + 1) * oh * ow];
            let wbase = (oc * in_c + ic) * k * k;
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[wbase + ky * k + kx];
                    for oy in 0..oh {
                        let iy = (oy * stride + ky).wrapping_sub(pad);
                        if iy >= ih {
                            continue;
                        }
                        let grow = &goplane[oy * ow..(oy + 1) * ow];
                        let girow = &mut gplane[iy * iw..(iy + 1) * iw];
                        for (ox, g) in grow.iter().enumerate() {
                            let ix = (ox * stride + kx).wrapping_sub(pad);
                            if ix < iw {
                                girow[ix] += wv * g;
                            }
                        }
                    }
                }
            }
        }
    });
    ginp
}

/// 2x2 max pooling with stride 2. Returns (output, argmax of flat input index).
pub fn max_pool2_forward(inp: &[f32], c: usize, h: usize, w: usize) -> (Vec<f32>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; c * oh * ow];
    let mut arg = vec![0u32; c * oh * ow];
    for ch in 0..c {
        let iplane = &inp[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f32::NEG_INFINITY;
                let mut best_i = 0usize;
                for dy in 0..2 {
                    for dx in 0..2 {
                        let i = (oy * 2 + dy) * w + ox * 2 + dx;
                        if iplane[i] > best {
                            best = iplane[i];
                            best_i = i;
                        }
                    }
                }
                out[(ch * oh + oy) * ow + ox] = best;
                arg[(ch * oh + oy) * ow + ox] = (ch * h * w + best_i) as u32;
            }
        }
    }
    (out, arg)
}

/// Nearest-neighbor x2 upsampling.
pub fn upsample2_forward(inp: &[f32], c: usize, h: usize, w: usize) -> Vec<f32> {
    let (oh, ow) = (h * 2, w * 2);
    let mut out = vec![0.0f32; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            let irow = &inp[(ch * h + oy / 2) * w..(ch * h + oy / 2) * w + w];
            let orow = &mut out[(ch * oh + oy) * ow..(ch * oh + oy) * ow + ow];
            for (ox, o) in orow.iter_mut().enumerate() {
                *o = irow[ox / 2];
            }
        }
    }
    out
}
