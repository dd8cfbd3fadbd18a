use super::Tensor;
use crate::error::Result;

/// Flat input offsets of the winning element of every pooling window, plus
/// the input shape needed to scatter gradients back.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolIndices {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

/// Non-overlapping 2x2 max pooling. A trailing odd row/column is dropped;
/// ties go to the first element in row-major scan order.
pub fn maxpool2x2_forward(input: &Tensor) -> Result<(Tensor, PoolIndices)> {
    let [b, c, h, w] = input.dims4("maxpool input")?;
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[b, c, oh, ow]);
    let mut argmax = Vec::with_capacity(b * c * oh * ow);
    let x = input.data();
    let y = out.data_mut();
    let mut yi = 0;
    for plane in 0..b * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let top = base + 2 * oy * w + 2 * ox;
                let mut best = top;
                for cand in [top + 1, top + w, top + w + 1] {
                    if x[cand] > x[best] {
                        best = cand;
                    }
                }
                y[yi] = x[best];
                argmax.push(best);
                yi += 1;
            }
        }
    }
    Ok((
        out,
        PoolIndices {
            input_shape: input.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool2x2_backward(grad_out: &Tensor, indices: &PoolIndices) -> Result<Tensor> {
    if grad_out.len() != indices.argmax.len() {
        return Err(crate::Error::Config(format!(
            "maxpool backward: grad_out shape {:?} does not match {} pooled outputs",
            grad_out.shape(),
            indices.argmax.len()
        )));
    }
    let mut gin = Tensor::zeros(&indices.input_shape);
    let gx = gin.data_mut();
    for (&idx, &g) in indices.argmax.iter().zip(grad_out.data()) {
        gx[idx] += g;
    }
    Ok(gin)
}
