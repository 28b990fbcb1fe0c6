//! 2-D cross-correlation (no kernel flip) lowered to GEMM via im2col.

use serde::{Deserialize, Serialize};

use super::tensor::Tensor4;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    /// 3×3, stride 1, "same" padding.
    pub fn same3(in_ch: usize, out_ch: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel: 3,
            stride: 1,
            padding: 1,
        }
    }

    pub fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel * self.kernel
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }

    pub fn fan_out(&self) -> usize {
        self.out_ch * self.kernel * self.kernel
    }

    /// `floor((h + 2·pad − k)/stride) + 1` along each axis.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::Shape("conv stride must be at least 1".into()));
        }
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            return Err(Error::Shape(format!(
                "kernel {} larger than padded input {}x{} (pad {})",
                self.kernel, h, w, self.padding
            )));
        }
        Ok((
            (h + 2 * self.padding - self.kernel) / self.stride + 1,
            (w + 2 * self.padding - self.kernel) / self.stride + 1,
        ))
    }

    fn check_input(&self, x: &Tensor4) -> Result<(usize, usize)> {
        if x.c() != self.in_ch {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_ch,
                x.c()
            )));
        }
        self.output_hw(x.h(), x.w())
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub dx: Tensor4,
    pub dw: Vec<f64>,
    pub db: Option<Vec<f64>>,
}

/// `c = a·b + beta·c` for row-major `a` (m×k) and `b` (k×n), with optional
/// transposed reads of either operand.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches given
    // these strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn im2col(sample: &[f64], h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize, cols: &mut [f64]) {
    let k = g.kernel;
    let p = oh * ow;
    let pad = g.padding as isize;
    for ci in 0..g.in_ch {
        let plane = &sample[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let row = &mut cols[((ci * k + kh) * k + kw) * p..][..p];
                for y in 0..oh {
                    let iy = (y * g.stride + kh) as isize - pad;
                    let dst = &mut row[y * ow..(y + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (x, d) in dst.iter_mut().enumerate() {
                        let ix = (x * g.stride + kw) as isize - pad;
                        *d = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

fn col2im(cols: &[f64], h: usize, w: usize, g: &ConvGeometry, oh: usize, ow: usize, sample: &mut [f64]) {
    let k = g.kernel;
    let p = oh * ow;
    let pad = g.padding as isize;
    for ci in 0..g.in_ch {
        let plane = &mut sample[ci * h * w..(ci + 1) * h * w];
        for kh in 0..k {
            for kw in 0..k {
                let row = &cols[((ci * k + kh) * k + kw) * p..][..p];
                for y in 0..oh {
                    let iy = (y * g.stride + kh) as isize - pad;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for (x, &v) in row[y * ow..(y + 1) * ow].iter().enumerate() {
                        let ix = (x * g.stride + kw) as isize - pad;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward(x: &Tensor4, weight: &[f64], bias: Option<&[f64]>, g: &ConvGeometry) -> Result<Tensor4> {
    let (oh, ow) = g.check_input(x)?;
    if weight.len() != g.weight_len() {
        return Err(Error::Shape(format!(
            "conv weight has {} values, geometry needs {}",
            weight.len(),
            g.weight_len()
        )));
    }
    if let Some(b) = bias {
        if b.len() != g.out_ch {
            return Err(Error::Shape(format!("conv bias has {} values, expected {}", b.len(), g.out_ch)));
        }
    }
    let (n, kdim, p) = (x.n(), g.fan_in(), oh * ow);
    let mut out = Tensor4::zeros([n, g.out_ch, oh, ow]);
    let chunk = chunk_len(p, n);
    for start in (0..n).step_by(chunk) {
        let m = chunk.min(n - start);
        let mp = m * p;
        let cols = chunk_im2col(x, start, m, g, oh, ow);
        let mut y_mat = vec![0.0; g.out_ch * mp];
        gemm(g.out_ch, kdim, mp, weight, false, &cols, false, 0.0, &mut y_mat);
        for j in 0..m {
            let y = out.sample_mut(start + j);
            for co in 0..g.out_ch {
                let src = &y_mat[co * mp + j * p..][..p];
                let dst = &mut y[co * p..(co + 1) * p];
                match bias {
                    Some(b) => dst.iter_mut().zip(src).for_each(|(d, s)| *d = s + b[co]),
                    None => dst.copy_from_slice(src),
                }
            }
        }
    }
    Ok(out)
}

/// Samples per GEMM: enough to give each product roughly `TARGET` columns
/// without building one huge column buffer for large feature maps.
fn chunk_len(p: usize, n: usize) -> usize {
    const TARGET: usize = 1024;
    (TARGET / p).clamp(1, n.max(1))
}

/// Column matrix K × (m·P) for samples `start..start + m`, sample-major columns.
fn chunk_im2col(x: &Tensor4, start: usize, m: usize, g: &ConvGeometry, oh: usize, ow: usize) -> Vec<f64> {
    let (kdim, p) = (g.fan_in(), oh * ow);
    if m == 1 {
        let mut cols = vec![0.0; kdim * p];
        im2col(x.sample(start), x.h(), x.w(), g, oh, ow, &mut cols);
        return cols;
    }
    let mp = m * p;
    let mut cols = vec![0.0; kdim * mp];
    let mut sample_cols = vec![0.0; kdim * p];
    for j in 0..m {
        im2col(x.sample(start + j), x.h(), x.w(), g, oh, ow, &mut sample_cols);
        for r in 0..kdim {
            cols[r * mp + j * p..][..p].copy_from_slice(&sample_cols[r * p..(r + 1) * p]);
        }
    }
    cols
}

/// Gradients of a conv given the forward input `x` and upstream `dy`.
pub fn conv2d_backward(x: &Tensor4, weight: &[f64], with_bias: bool, g: &ConvGeometry, dy: &Tensor4) -> Result<ConvGrads> {
    let (oh, ow) = g.check_input(x)?;
    if dy.shape() != [x.n(), g.out_ch, oh, ow] {
        return Err(Error::Shape(format!(
            "conv upstream gradient {:?} does not match output {:?}",
            dy.shape(),
            [x.n(), g.out_ch, oh, ow]
        )));
    }
    let (n, kdim, p) = (x.n(), g.fan_in(), oh * ow);
    let mut dw = vec![0.0; g.weight_len()];
    let mut db = with_bias.then(|| vec![0.0; g.out_ch]);
    let mut dx = Tensor4::zeros(x.shape());
    let chunk = chunk_len(p, n);
    let mut sample_cols = vec![0.0; kdim * p];
    for start in (0..n).step_by(chunk) {
        let m = chunk.min(n - start);
        let mp = m * p;
        let mut dy_mat = vec![0.0; g.out_ch * mp];
        for j in 0..m {
            let dyj = dy.sample(start + j);
            for co in 0..g.out_ch {
                dy_mat[co * mp + j * p..][..p].copy_from_slice(&dyj[co * p..(co + 1) * p]);
            }
        }
        let cols = chunk_im2col(x, start, m, g, oh, ow);
        // dW += dY · colsᵀ
        gemm(g.out_ch, mp, kdim, &dy_mat, false, &cols, true, 1.0, &mut dw);
        drop(cols);
        // dcols = Wᵀ · dY
        let mut dcols = vec![0.0; kdim * mp];
        gemm(kdim, g.out_ch, mp, weight, true, &dy_mat, false, 0.0, &mut dcols);
        for j in 0..m {
            let cols_j: &[f64] = if m == 1 {
                &dcols
            } else {
                for r in 0..kdim {
                    sample_cols[r * p..(r + 1) * p].copy_from_slice(&dcols[r * mp + j * p..][..p]);
                }
                &sample_cols
            };
            col2im(cols_j, x.h(), x.w(), g, oh, ow, dx.sample_mut(start + j));
        }
        if let Some(db) = db.as_mut() {
            for (co, d) in db.iter_mut().enumerate() {
                *d += dy_mat[co * mp..(co + 1) * mp].iter().sum::<f64>();
            }
        }
    }
    Ok(ConvGrads { dx, dw, db })
}
