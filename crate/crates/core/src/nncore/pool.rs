//! 2×2/stride-2 max pooling, ReLU and global average pooling.

use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Forward max pool. Returns the output and, for each output element, the
/// flat input index that won. Ties go to the first maximum in row-major order.
pub fn maxpool2_forward(x: &Tensor4) -> Result<(Tensor4, Vec<usize>)> {
    let [n, c, h, w] = x.shape();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!("maxpool2 needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor4::zeros([n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let top = base + 2 * y * w + 2 * xx;
                let candidates = [top, top + 1, top + w, top + w + 1];
                let mut best = candidates[0];
                for &idx in &candidates[1..] {
                    if src[idx] > src[best] {
                        best = idx;
                    }
                }
                let o = plane * oh * ow + y * ow + xx;
                dst[o] = src[best];
                argmax[o] = best;
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool2_backward(input_shape: [usize; 4], argmax: &[usize], dy: &Tensor4) -> Tensor4 {
    let mut dx = Tensor4::zeros(input_shape);
    let d = dx.data_mut();
    for (&idx, &g) in argmax.iter().zip(dy.data()) {
        d[idx] += g;
    }
    dx
}

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = v.max(0.0);
    }
    y
}

/// Gradient through ReLU given the forward input; zero at the kink.
pub fn relu_backward(x: &Tensor4, dy: &Tensor4) -> Tensor4 {
    let mut dx = dy.clone();
    for (g, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
        *g = if xv > 0.0 { *g } else { 0.0 };
    }
    dx
}

/// Averages each channel plane to a single value: (n, c, h, w) → (n, c, 1, 1).
pub fn global_avg_pool_forward(x: &Tensor4) -> Tensor4 {
    let [n, c, h, w] = x.shape();
    let hw = h * w;
    let mut out = Tensor4::zeros([n, c, 1, 1]);
    for (o, plane) in out.data_mut().iter_mut().zip(x.data().chunks_exact(hw)) {
        *o = plane.iter().sum::<f64>() / hw as f64;
    }
    out
}

pub fn global_avg_pool_backward(input_shape: [usize; 4], dy: &Tensor4) -> Tensor4 {
    let [_, _, h, w] = input_shape;
    let hw = h * w;
    let mut dx = Tensor4::zeros(input_shape);
    for (plane, &g) in dx.data_mut().chunks_exact_mut(hw).zip(dy.data()) {
        plane.fill(g / hw as f64);
    }
    dx
}
