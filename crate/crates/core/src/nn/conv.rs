//! im2col convolution with optional crossbar row blocking.

use super::{quantize_in_place, Tensor};
use crate::par;
use crate::topology::ConvLayerSpec;
use crate::{invalid, Result};

/// Samples per parallel work item.
const SAMPLE_CHUNK: usize = 4;

/// Splits the unrolled rows into crossbar-height blocks; each block's
/// partial sums may be quantized by an ADC before they are added up.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockMode {
    pub rows: usize,
    /// (bits, range); `None` records ranges without quantizing.
    pub adc: Option<(u32, f64)>,
}

pub struct ConvOutput {
    pub y: Tensor,
    /// Largest |partial sum| seen in any row block (0 without blocking).
    pub partial_max: f64,
}

fn check_shapes(x: &Tensor, w: &[f64], spec: &ConvLayerSpec) -> Result<(usize, usize, usize, usize, usize, usize)> {
    spec.validate()?;
    let (n, c, h, wd) = x.dims4()?;
    if c != spec.in_channels {
        return invalid(format!("input has {c} channels, layer expects {}", spec.in_channels));
    }
    if w.len() != spec.weight_len() {
        return invalid(format!(
            "weight has {} values, layer needs {}",
            w.len(),
            spec.weight_len()
        ));
    }
    let (oh, ow) = spec.output_hw(h, wd)?;
    Ok((n, c, h, wd, oh, ow))
}

/// Unroll one sample to a [k·k·C, OH·OW] matrix, row order (c, ky, kx).
fn im2col(x: &[f64], c: usize, h: usize, w: usize, s: &ConvLayerSpec, oh: usize, ow: usize, col: &mut [f64]) {
    let k = s.kernel;
    let p = oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                    for ox in 0..ow {
                        let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                        dst[oy * ow + ox] = if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                            x[(ci * h + iy as usize) * w + ix as usize]
                        } else {
                            0.0
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add(col: &[f64], c: usize, h: usize, w: usize, s: &ConvLayerSpec, oh: usize, ow: usize, dx: &mut [f64]) {
    let k = s.kernel;
    let p = oh * ow;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &col[row * p..(row + 1) * p];
                for oy in 0..oh {
                    let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                    if iy < 0 || iy as usize >= h {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                        if ix >= 0 && (ix as usize) < w {
                            dx[(ci * h + iy as usize) * w + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Row-major C[m×n] = beta·C + A·B with explicit strides for A and B.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(c.len() >= m * n);
    if k > 0 {
        assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
        assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    }
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Cross-correlation of `x` [N, C_in, H, W] with `w` [C_out, C_in, k, k].
pub fn conv2d_forward(x: &Tensor, w: &[f64], spec: &ConvLayerSpec, blocks: Option<&BlockMode>) -> Result<ConvOutput> {
    let (n, c, h, wd, oh, ow) = check_shapes(x, w, spec)?;
    if let Some(b) = blocks {
        if b.rows == 0 {
            return invalid("row block height must be positive");
        }
    }
    let kk = spec.unrolled_rows();
    let co = spec.out_channels;
    let p = oh * ow;
    let in_len = c * h * wd;
    let out_len = co * p;
    let mut y = vec![0.0; n * out_len];
    let maxes = par::map_chunks_mut(&mut y, SAMPLE_CHUNK * out_len.max(1), |ci, out| {
        let mut col = vec![0.0; kk * p];
        let mut part = vec![0.0; if blocks.is_some() { out_len } else { 0 }];
        let mut max_abs = 0.0f64;
        for (j, out_s) in out.chunks_mut(out_len.max(1)).enumerate() {
            let s = ci * SAMPLE_CHUNK + j;
            im2col(&x.data[s * in_len..(s + 1) * in_len], c, h, wd, spec, oh, ow, &mut col);
            match blocks {
                None => gemm(co, kk, p, w, kk, 1, &col, p, 1, 0.0, out_s),
                Some(b) => {
                    let mut r0 = 0;
                    while r0 < kk {
                        let r1 = (r0 + b.rows).min(kk);
                        gemm(co, r1 - r0, p, &w[r0..], kk, 1, &col[r0 * p..], p, 1, 0.0, &mut part);
                        max_abs = part.iter().fold(max_abs, |m, v| m.max(v.abs()));
                        if let Some((bits, range)) = b.adc {
                            quantize_in_place(&mut part, bits, range);
                        }
                        out_s.iter_mut().zip(&part).for_each(|(o, v)| *o += v);
                        r0 = r1;
                    }
                }
            }
        }
        max_abs
    });
    Ok(ConvOutput {
        y: Tensor::new(vec![n, co, oh, ow], y),
        partial_max: maxes.into_iter().fold(0.0, f64::max),
    })
}

/// Gradients of a convolution: returns (dx, dw). Quantizers in the forward
/// pass are treated as identity. `need_dw = false` skips the weight gradient.
pub fn conv2d_backward(
    x: &Tensor,
    w: &[f64],
    dy: &Tensor,
    spec: &ConvLayerSpec,
    need_dw: bool,
) -> Result<(Tensor, Option<Vec<f64>>)> {
    let (n, c, h, wd, oh, ow) = check_shapes(x, w, spec)?;
    let co = spec.out_channels;
    if dy.shape != [n, co, oh, ow] {
        return invalid(format!("output gradient shape {:?} does not match", dy.shape));
    }
    let kk = spec.unrolled_rows();
    let p = oh * ow;
    let in_len = c * h * wd;
    let out_len = co * p;
    let mut dx = vec![0.0; n * in_len];
    let partial_dw = par::map_chunks_mut(&mut dx, SAMPLE_CHUNK * in_len, |ci, dx_chunk| {
        let mut col = vec![0.0; kk * p];
        let mut dcol = vec![0.0; kk * p];
        let mut dw = if need_dw { vec![0.0; co * kk] } else { Vec::new() };
        for (j, dx_s) in dx_chunk.chunks_mut(in_len).enumerate() {
            let s = ci * SAMPLE_CHUNK + j;
            let dy_s = &dy.data[s * out_len..(s + 1) * out_len];
            // dcol[K,P] = Wᵀ[K,Co] · dy[Co,P]
            gemm(kk, co, p, w, 1, kk, dy_s, p, 1, 0.0, &mut dcol);
            col2im_add(&dcol, c, h, wd, spec, oh, ow, dx_s);
            if need_dw {
                im2col(&x.data[s * in_len..(s + 1) * in_len], c, h, wd, spec, oh, ow, &mut col);
                // dw[Co,K] += dy[Co,P] · colᵀ[P,K]
                gemm(co, p, kk, dy_s, p, 1, &col, 1, p, 1.0, &mut dw);
            }
        }
        dw
    });
    let dw = need_dw.then(|| {
        let mut total = vec![0.0; co * kk];
        for part in &partial_dw {
            total.iter_mut().zip(part).for_each(|(t, v)| *t += v);
        }
        total
    });
    Ok((Tensor::new(x.shape.clone(), dx), dw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn brute(x: &Tensor, w: &[f64], s: &ConvLayerSpec) -> Vec<f64> {
        let (n, c, h, wd) = x.dims4().unwrap();
        let (oh, ow) = s.output_hw(h, wd).unwrap();
        let k = s.kernel;
        let mut out = vec![0.0; n * s.out_channels * oh * ow];
        for b in 0..n {
            for o in 0..s.out_channels {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s.stride + ky) as isize - s.padding as isize;
                                    let ix = (ox * s.stride + kx) as isize - s.padding as isize;
                                    if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= wd {
                                        continue;
                                    }
                                    acc += x.data[((b * c + ci) * h + iy as usize) * wd + ix as usize]
                                        * w[((o * c + ci) * k + ky) * k + kx];
                                }
                            }
                        }
                        out[((b * s.out_channels + o) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn unit_kernel_is_identity() {
        let s = ConvLayerSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: 1,
            stride: 1,
            padding: 0,
        };
        let x = Tensor::new(vec![1, 1, 1, 1], vec![0.37]);
        assert_eq!(conv2d_forward(&x, &[1.0], &s, None).unwrap().y.data, vec![0.37]);
    }

    #[test]
    fn ones_sum_to_nine() {
        let s = ConvLayerSpec {
            in_channels: 1,
            out_channels: 1,
            kernel: 3,
            stride: 1,
            padding: 0,
        };
        let x = Tensor::new(vec![1, 1, 3, 3], vec![1.0; 9]);
        assert_eq!(conv2d_forward(&x, &[1.0; 9], &s, None).unwrap().y.data, vec![9.0]);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = crate::rng::seeded(1, "conv-test");
        for (stride, padding, k) in [(1, 1, 3), (2, 0, 3), (1, 2, 5), (2, 1, 1)] {
            let s = ConvLayerSpec {
                in_channels: 2,
                out_channels: 3,
                kernel: k,
                stride,
                padding,
            };
            let x = Tensor::new(vec![5, 2, 5, 5], (0..250).map(|_| rng.random_range(-1.0..1.0)).collect());
            let w: Vec<f64> = (0..s.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = conv2d_forward(&x, &w, &s, None).unwrap().y;
            for (a, b) in got.data.iter().zip(brute(&x, &w, &s)) {
                assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
            }
            // Blocking without an ADC only reorders the sum.
            let blocked = conv2d_forward(&x, &w, &s, Some(&BlockMode { rows: 4, adc: None })).unwrap();
            for (a, b) in blocked.y.data.iter().zip(&got.data) {
                assert!((a - b).abs() <= 1e-12);
            }
            assert!(blocked.partial_max > 0.0);
        }
    }

    #[test]
    fn shape_errors() {
        let s = ConvLayerSpec::same3(2, 1);
        let x = Tensor::zeros(vec![1, 3, 4, 4]);
        assert!(conv2d_forward(&x, &[0.0; 18], &s, None).is_err());
        let x = Tensor::zeros(vec![1, 2, 4, 4]);
        assert!(conv2d_forward(&x, &[0.0; 17], &s, None).is_err());
        assert!(conv2d_forward(&Tensor::zeros(vec![2, 4, 4]), &[0.0; 18], &s, None).is_err());
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let mut rng = crate::rng::seeded(2, "conv-par");
        let s = ConvLayerSpec::same3(3, 4);
        let x = Tensor::new(vec![9, 3, 6, 6], (0..972).map(|_| rng.random_range(-1.0..1.0)).collect());
        let w: Vec<f64> = (0..s.weight_len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dy = Tensor::new(vec![9, 4, 6, 6], (0..1296).map(|_| rng.random_range(-1.0..1.0)).collect());
        let f1 = conv2d_forward(&x, &w, &s, None).unwrap().y;
        let b1 = conv2d_backward(&x, &w, &dy, &s, true).unwrap();
        crate::par::set_sequential(true);
        let f2 = conv2d_forward(&x, &w, &s, None).unwrap().y;
        let b2 = conv2d_backward(&x, &w, &dy, &s, true).unwrap();
        crate::par::set_sequential(false);
        assert_eq!(f1, f2);
        assert_eq!(b1.0, b2.0);
        assert_eq!(b1.1, b2.1);
    }
}
