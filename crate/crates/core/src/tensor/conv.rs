use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Geometry of a square-kernel 2-d convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel_size: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_size,
            stride,
            padding,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "conv spec needs kernel_size >= 1 and stride >= 1, got {:?}",
                self
            )));
        }
        Ok(())
    }

    /// `floor((in + 2p - k) / s) + 1`, which must be strictly positive.
    pub fn output_size(&self, input: usize) -> Result<usize> {
        self.validate()?;
        let padded = input + 2 * self.padding;
        if padded < self.kernel_size {
            return Err(Error::Config(format!(
                "input size {input} too small for kernel {} with padding {}",
                self.kernel_size, self.padding
            )));
        }
        Ok((padded - self.kernel_size) / self.stride + 1)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_size, self.kernel_size]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel_size * self.kernel_size
    }

    /// Output columns `ox` whose tap `kx` lands inside `0..width`.
    fn valid_range(&self, kx: usize, width: usize, out_width: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if p > kx { (p - kx).div_ceil(s) } else { 0 };
        let hi = if width + p > kx {
            ((width - 1 + p - kx) / s + 1).min(out_width)
        } else {
            0
        };
        (lo, hi.max(lo))
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

fn check_weights(weights: &Tensor, spec: &ConvSpec) -> Result<()> {
    spec.validate()?;
    if weights.shape() != spec.weight_shape() {
        return Err(Error::Config(format!(
            "conv weights have shape {:?}, spec expects {:?}",
            weights.shape(),
            spec.weight_shape()
        )));
    }
    Ok(())
}

/// Batched cross-correlation (no kernel flip).
pub fn conv2d_forward(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let [b, c, h, w] = input.dims4("conv2d_forward input")?;
    check_weights(weights, spec)?;
    if c != spec.in_channels {
        return Err(Error::Config(format!(
            "conv2d_forward: input shape {:?} does not match weight shape {:?}",
            input.shape(),
            weights.shape()
        )));
    }
    if bias.shape() != [spec.out_channels] {
        return Err(Error::Config(format!(
            "conv2d_forward: bias shape {:?}, expected [{}]",
            bias.shape(),
            spec.out_channels
        )));
    }
    let (oh, ow) = (spec.output_size(h)?, spec.output_size(w)?);
    let (o_ch, k, s, p) = (spec.out_channels, spec.kernel_size, spec.stride, spec.padding);
    let mut out = Tensor::zeros(&[b, o_ch, oh, ow]);
    let x = input.data();
    let wt = weights.data();
    let y = out.data_mut();
    for bi in 0..b {
        for o in 0..o_ch {
            let ybase = (bi * o_ch + o) * oh * ow;
            y[ybase..ybase + oh * ow].fill(bias.data()[o]);
            for ci in 0..c {
                let xbase = (bi * c + ci) * h * w;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wt[((o * c + ci) * k + ky) * k + kx];
                        let (lo, hi) = spec.valid_range(kx, w, ow);
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * w;
                            let yrow = ybase + oy * ow;
                            for ox in lo..hi {
                                y[yrow + ox] += wv * x[xrow + ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

fn check_grad_out(grad_out: &Tensor, spec: &ConvSpec, b: usize, h: usize, w: usize) -> Result<(usize, usize)> {
    let (oh, ow) = (spec.output_size(h)?, spec.output_size(w)?);
    let expected = [b, spec.out_channels, oh, ow];
    if grad_out.shape() != expected {
        return Err(Error::Config(format!(
            "conv backward: grad_out shape {:?}, forward output shape {:?}",
            grad_out.shape(),
            expected
        )));
    }
    Ok((oh, ow))
}

/// Gradient with respect to the conv input for an input of spatial size
/// `in_h x in_w`. Used directly as a transposed convolution.
pub fn conv2d_backward_input(
    grad_out: &Tensor,
    weights: &Tensor,
    spec: &ConvSpec,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor> {
    check_weights(weights, spec)?;
    let b = grad_out.shape().first().copied().unwrap_or(0);
    let (oh, ow) = check_grad_out(grad_out, spec, b, in_h, in_w)?;
    let (o_ch, c, k, s, p) = (spec.out_channels, spec.in_channels, spec.kernel_size, spec.stride, spec.padding);
    let mut gin = Tensor::zeros(&[b, c, in_h, in_w]);
    let g = grad_out.data();
    let wt = weights.data();
    let gx = gin.data_mut();
    for bi in 0..b {
        for o in 0..o_ch {
            let gbase = (bi * o_ch + o) * oh * ow;
            for ci in 0..c {
                let xbase = (bi * c + ci) * in_h * in_w;
                for ky in 0..k {
                    for kx in 0..k {
                        let wv = wt[((o * c + ci) * k + ky) * k + kx];
                        let (lo, hi) = spec.valid_range(kx, in_w, ow);
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * in_w;
                            let grow = gbase + oy * ow;
                            for ox in lo..hi {
                                gx[xrow + ox * s + kx - p] += wv * g[grow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(gin)
}

/// Gradients with respect to weights and bias.
pub fn conv2d_backward_weights(grad_out: &Tensor, input: &Tensor, spec: &ConvSpec) -> Result<(Tensor, Tensor)> {
    let [b, c, h, w] = input.dims4("conv backward input")?;
    spec.validate()?;
    if c != spec.in_channels {
        return Err(Error::Config(format!(
            "conv backward: input shape {:?} does not match spec {:?}",
            input.shape(),
            spec
        )));
    }
    let (oh, ow) = check_grad_out(grad_out, spec, b, h, w)?;
    let (o_ch, k, s, p) = (spec.out_channels, spec.kernel_size, spec.stride, spec.padding);
    let mut gw = Tensor::zeros(&spec.weight_shape());
    let mut gb = Tensor::zeros(&[o_ch]);
    let g = grad_out.data();
    let x = input.data();
    for bi in 0..b {
        for o in 0..o_ch {
            let gbase = (bi * o_ch + o) * oh * ow;
            gb.data_mut()[o] += g[gbase..gbase + oh * ow].iter().sum::<f64>();
            for ci in 0..c {
                let xbase = (bi * c + ci) * h * w;
                for ky in 0..k {
                    for kx in 0..k {
                        let (lo, hi) = spec.valid_range(kx, w, ow);
                        let mut acc = 0.0;
                        for oy in 0..oh {
                            let iy = (oy * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let xrow = xbase + iy as usize * w;
                            let grow = gbase + oy * ow;
                            for ox in lo..hi {
                                acc += g[grow + ox] * x[xrow + ox * s + kx - p];
                            }
                        }
                        gw.data_mut()[((o * c + ci) * k + ky) * k + kx] += acc;
                    }
                }
            }
        }
    }
    Ok((gw, gb))
}

pub fn conv2d_backward(grad_out: &Tensor, cached_input: &Tensor, weights: &Tensor, spec: &ConvSpec) -> Result<ConvGrads> {
    let [_, _, h, w] = cached_input.dims4("conv backward input")?;
    let input = conv2d_backward_input(grad_out, weights, spec, h, w)?;
    let (weights, bias) = conv2d_backward_weights(grad_out, cached_input, spec)?;
    Ok(ConvGrads { input, weights, bias })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{rand_tensor, rel_err};

    #[test]
    fn unit_kernel_scales_input() {
        let x = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let w = Tensor::filled(&[1, 1, 1, 1], 2.0);
        let y = conv2d_forward(&x, &w, &Tensor::zeros(&[1]), &ConvSpec::new(1, 1, 1, 1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn diagonal_kernel_hand_value() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let w = Tensor::from_vec(&[1, 1, 2, 2], vec![1., 0., 0., 1.]).unwrap();
        let y = conv2d_forward(&x, &w, &Tensor::zeros(&[1]), &ConvSpec::new(1, 1, 2, 1, 0)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn zero_input_gives_bias() {
        let spec = ConvSpec::new(2, 3, 3, 1, 1);
        let w = rand_tensor(&spec.weight_shape(), 1);
        let bias = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = conv2d_forward(&Tensor::zeros(&[2, 2, 4, 4]), &w, &bias, &spec).unwrap();
        for (i, v) in y.data().iter().enumerate() {
            assert_eq!(*v, bias.data()[(i / 16) % 3]);
        }
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let spec = ConvSpec::new(3, 2, 3, 1, 1);
        let err = conv2d_forward(
            &Tensor::zeros(&[1, 2, 4, 4]),
            &Tensor::zeros(&spec.weight_shape()),
            &Tensor::zeros(&[2]),
            &spec,
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("[1, 2, 4, 4]") && err.contains("[2, 3, 3, 3]"), "{err}");
    }

    #[test]
    fn output_size_formula() {
        let s = ConvSpec::new(1, 1, 3, 2, 1);
        assert_eq!(s.output_size(7).unwrap(), 4);
        assert_eq!(ConvSpec::new(1, 1, 2, 2, 0).output_size(4).unwrap(), 2);
        assert!(ConvSpec::new(1, 1, 5, 1, 0).output_size(3).is_err());
        assert!(ConvSpec::new(1, 1, 0, 1, 0).validate().is_err());
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let spec = ConvSpec::new(2, 3, 3, 1, 1);
        let x = rand_tensor(&[2, 2, 5, 5], 3);
        let w = rand_tensor(&spec.weight_shape(), 4);
        let g = conv2d_backward(&Tensor::zeros(&[2, 3, 5, 5]), &x, &w, &spec).unwrap();
        assert!(g.input.data().iter().chain(g.weights.data()).chain(g.bias.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_weight_grad_is_product() {
        let spec = ConvSpec::new(1, 1, 1, 1, 0);
        let x = Tensor::filled(&[1, 1, 1, 1], 3.0);
        let w = Tensor::filled(&[1, 1, 1, 1], 0.7);
        let g = conv2d_backward(&Tensor::filled(&[1, 1, 1, 1], 2.0), &x, &w, &spec).unwrap();
        assert_eq!(g.weights.data(), &[6.0]);
        assert_eq!(g.bias.data(), &[2.0]);
        assert!((g.input.data()[0] - 1.4).abs() < 1e-15);
    }

    fn fd_check(spec: ConvSpec, xshape: [usize; 4], seed: u64) {
        let x = rand_tensor(&xshape, seed);
        let w = rand_tensor(&spec.weight_shape(), seed + 1);
        let b = rand_tensor(&[spec.out_channels], seed + 2);
        let y = conv2d_forward(&x, &w, &b, &spec).unwrap();
        let r = rand_tensor(y.shape(), seed + 3);
        // loss = <r, conv(x)>
        let loss = |x: &Tensor, w: &Tensor, b: &Tensor| conv2d_forward(x, w, b, &spec).unwrap().dot(&r).unwrap();
        let g = conv2d_backward(&r, &x, &w, &spec).unwrap();
        let h = 1e-5;
        for (which, analytic) in [(0, &g.input), (1, &g.weights), (2, &g.bias)] {
            let base = [&x, &w, &b][which];
            let mut num = Tensor::zeros(base.shape());
            for i in 0..base.len() {
                let mut p = [x.clone(), w.clone(), b.clone()];
                p[which].data_mut()[i] += h;
                let lp = loss(&p[0], &p[1], &p[2]);
                p[which].data_mut()[i] -= 2.0 * h;
                let lm = loss(&p[0], &p[1], &p[2]);
                num.data_mut()[i] = (lp - lm) / (2.0 * h);
            }
            assert!(rel_err(analytic, &num) < 1e-4, "param {which}: rel err {}", rel_err(analytic, &num));
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        fd_check(ConvSpec::new(4, 3, 3, 1, 1), [2, 4, 5, 5], 10);
        fd_check(ConvSpec::new(2, 3, 3, 2, 1), [1, 2, 6, 5], 20);
        fd_check(ConvSpec::new(2, 2, 2, 2, 0), [2, 2, 4, 4], 30);
    }
}
