use super::Tensor;
use crate::error::{Error, Result};

pub fn relu_forward(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Gradient of ReLU given the forward *input*; zero at the kink.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    if grad_out.shape() != input.shape() {
        return Err(Error::Config(format!(
            "relu backward: grad shape {:?}, input shape {:?}",
            grad_out.shape(),
            input.shape()
        )));
    }
    let data = grad_out
        .data()
        .iter()
        .zip(input.data())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}

#[derive(Debug, Clone)]
pub struct AffineGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

/// `y = x W^T + b` with `x: [B, in]`, `W: [out, in]`, `b: [out]`.
pub fn affine_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [b, n_in] = input.dims2("affine input")?;
    let [n_out, w_in] = weights.dims2("affine weights")?;
    if w_in != n_in || bias.shape() != [n_out] {
        return Err(Error::Config(format!(
            "affine: input {:?}, weights {:?}, bias {:?} are inconsistent",
            input.shape(),
            weights.shape(),
            bias.shape()
        )));
    }
    let x = input.data();
    let w = weights.data();
    let mut out = Tensor::zeros(&[b, n_out]);
    let y = out.data_mut();
    for bi in 0..b {
        let xr = &x[bi * n_in..(bi + 1) * n_in];
        for o in 0..n_out {
            let wr = &w[o * n_in..(o + 1) * n_in];
            y[bi * n_out + o] = bias.data()[o] + xr.iter().zip(wr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(out)
}

/// Propagate `grad_out: [B, out]` to the input through a feedback matrix
/// `feedback: [in, out]`, i.e. `grad_out · feedback^T`. With
/// `feedback = W^T` this is the exact affine input gradient.
pub fn affine_transport(grad_out: &Tensor, feedback: &Tensor) -> Result<Tensor> {
    let [b, n_out] = grad_out.dims2("affine grad_out")?;
    let [n_in, f_out] = feedback.dims2("affine feedback")?;
    if f_out != n_out {
        return Err(Error::Config(format!(
            "affine transport: grad_out {:?} incompatible with feedback {:?}",
            grad_out.shape(),
            feedback.shape()
        )));
    }
    let g = grad_out.data();
    let f = feedback.data();
    let mut out = Tensor::zeros(&[b, n_in]);
    let dx = out.data_mut();
    for bi in 0..b {
        let gr = &g[bi * n_out..(bi + 1) * n_out];
        for i in 0..n_in {
            let fr = &f[i * n_out..(i + 1) * n_out];
            dx[bi * n_in + i] = gr.iter().zip(fr).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(out)
}

pub fn affine_backward(grad_out: &Tensor, input: &Tensor, weights: &Tensor) -> Result<AffineGrads> {
    let [b, n_in] = input.dims2("affine input")?;
    let [n_out, w_in] = weights.dims2("affine weights")?;
    if w_in != n_in || grad_out.shape() != [b, n_out] {
        return Err(Error::Config(format!(
            "affine backward: grad_out {:?}, input {:?}, weights {:?} are inconsistent",
            grad_out.shape(),
            input.shape(),
            weights.shape()
        )));
    }
    let dinput = affine_transport(grad_out, &weights.transpose2()?)?;
    let g = grad_out.data();
    let x = input.data();
    let mut dw = Tensor::zeros(&[n_out, n_in]);
    let mut db = Tensor::zeros(&[n_out]);
    for bi in 0..b {
        let xr = &x[bi * n_in..(bi + 1) * n_in];
        for o in 0..n_out {
            let go = g[bi * n_out + o];
            db.data_mut()[o] += go;
            let row = &mut dw.data_mut()[o * n_in..(o + 1) * n_in];
            for (d, xv) in row.iter_mut().zip(xr) {
                *d += go * xv;
            }
        }
    }
    Ok(AffineGrads {
        input: dinput,
        weights: dw,
        bias: db,
    })
}

/// Spatial mean of `[B, C, H, W]`, giving `[B, C]`.
pub fn global_avg_pool_forward(input: &Tensor) -> Result<Tensor> {
    let [b, c, h, w] = input.dims4("global average pool input")?;
    let sp = h * w;
    let data = input
        .data()
        .chunks(sp)
        .map(|plane| plane.iter().sum::<f64>() / sp as f64)
        .collect();
    Tensor::from_vec(&[b, c], data)
}

pub fn global_avg_pool_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    let (b, c) = (input_shape[0], input_shape[1]);
    if grad_out.shape() != [b, c] {
        return Err(Error::Config(format!(
            "global average pool backward: grad {:?} vs input {:?}",
            grad_out.shape(),
            input_shape
        )));
    }
    let sp: usize = input_shape[2..].iter().product();
    let mut out = Tensor::zeros(input_shape);
    for (plane, &g) in out.data_mut().chunks_mut(sp).zip(grad_out.data()) {
        plane.fill(g / sp as f64);
    }
    Ok(out)
}

/// Mean softmax cross-entropy over the batch and its gradient
/// `(softmax - onehot) / B` with respect to the logits.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [b, k] = logits.dims2("logits")?;
    if labels.len() != b {
        return Err(Error::Input(format!("{} labels for a batch of {}", labels.len(), b)));
    }
    if let Some((i, l)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
        return Err(Error::Input(format!("label {l} at index {i} outside [0, {k})")));
    }
    let mut grad = Tensor::zeros(&[b, k]);
    let mut loss = 0.0;
    for (bi, &label) in labels.iter().enumerate() {
        let row = &logits.data()[bi * k..(bi + 1) * k];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum_exp: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        loss += log_z - row[label];
        let g = &mut grad.data_mut()[bi * k..(bi + 1) * k];
        for (j, gj) in g.iter_mut().enumerate() {
            let p = (row[j] - log_z).exp();
            *gj = (p - if j == label { 1.0 } else { 0.0 }) / b as f64;
        }
    }
    Ok((loss / b as f64, grad))
}
