use super::conv::gemm;
use super::Tensor;
use crate::{invalid, Result};

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::new(x.shape.clone(), x.data.iter().map(|v| v.max(0.0)).collect())
}

/// 2×2 max-pool with stride 2 (odd trailing rows/cols are dropped).
/// Returns the output and the flat input index chosen for every output.
pub fn maxpool2_forward(x: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (n, c, h, w) = x.dims4()?;
    let (oh, ow) = (h / 2, w / 2);
    if oh == 0 || ow == 0 {
        return invalid(format!("cannot pool a {h}x{w} map"));
    }
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut idx = Vec::with_capacity(out.capacity());
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = base + 2 * oy * w + 2 * ox;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let j = base + (2 * oy + dy) * w + 2 * ox + dx;
                    if x.data[j] > x.data[best] {
                        best = j;
                    }
                }
                out.push(x.data[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out), idx))
}

pub fn maxpool2_backward(in_shape: &[usize], argmax: &[usize], dy: &Tensor) -> Tensor {
    let mut dx = Tensor::zeros(in_shape.to_vec());
    for (&i, g) in argmax.iter().zip(&dy.data) {
        dx.data[i] += g;
    }
    dx
}

/// y[N, O] = x[N, F]·Wᵀ + b with W stored [O, F].
pub fn linear_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (o, f) = (w.shape[0], w.shape[1]);
    let n = x.shape[0];
    if x.len() != n * f || b.len() != o {
        return invalid(format!(
            "linear layer {o}x{f} cannot take input {:?}",
            x.shape
        ));
    }
    let mut y = vec![0.0; n * o];
    for row in y.chunks_mut(o.max(1)) {
        row.copy_from_slice(&b.data);
    }
    gemm(n, f, o, &x.data, f, 1, &w.data, 1, f, 1.0, &mut y);
    Ok(Tensor::new(vec![n, o], y))
}

/// Returns (dx, dW, db) for [`linear_forward`].
pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> (Tensor, Vec<f64>, Vec<f64>) {
    let (o, f) = (w.shape[0], w.shape[1]);
    let n = x.shape[0];
    let mut dx = vec![0.0; n * f];
    gemm(n, o, f, &dy.data, o, 1, &w.data, f, 1, 0.0, &mut dx);
    let mut dw = vec![0.0; o * f];
    gemm(o, n, f, &dy.data, 1, o, &x.data, f, 1, 0.0, &mut dw);
    let mut db = vec![0.0; o];
    for row in dy.data.chunks(o.max(1)) {
        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
    }
    (Tensor::new(x.shape.clone(), dx), dw, db)
}
