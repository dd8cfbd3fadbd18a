//! Predictive coding on the conv hierarchy.
//!
//! Representations `r_1..r_3` live at the pooled conv outputs; `r_0` is the
//! clamped image. Prediction weights `P_l` are stride-2 transposed
//! convolutions mapping `r_{l+1}` back onto the grid of `r_l`, so pooling is
//! part of the prediction path:
//!
//! ```text
//! eps_l = r_l - convT(r_{l+1}, P_l)        l = 0, 1, 2
//! F     = sum_l ||eps_l||^2
//! ```
//!
//! After `T_inf` gradient steps on `F` (input clamped), the prediction
//! weights move along `eps_l r_{l+1}^T` and each conv layer moves along
//! `e_l x_{l-1}^T`, where `e_l = r_l(T) - r_l(0)` is the correction
//! inference applied to that layer's feedforward output. Both are averaged
//! over the batch and scaled by `eta_w`. The FC readout is trained by BP on
//! the settled `r_3`.

use super::{count_correct, PcParams, StepStats};
use crate::error::{Error, Result};
use crate::network::{
    apply_sgd, block_local_backward, forward, he_normal, head_backward, head_forward, Architecture, Gradients,
    NetworkState,
};
use crate::rng;
use crate::tensor::{
    conv2d_backward_input, conv2d_backward_weights, conv2d_forward, softmax_xent, BnMode, ConvSpec, Tensor,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PcState {
    /// `P_l` in conv layout `[C_{l+1}, C_l, 2, 2]`, predicting layer `l` from `l+1`.
    pub prediction: [Tensor; 3],
    /// `r_1..r_3` of the last processed batch.
    pub reps: Vec<Tensor>,
    /// `eps_0..eps_2` of the last processed batch.
    pub errors: Vec<Tensor>,
}

fn prediction_spec(arch: &Architecture, level: usize) -> ConvSpec {
    let lower = if level == 0 {
        arch.in_channels
    } else {
        arch.conv_widths[level - 1]
    };
    ConvSpec::new(lower, arch.conv_widths[level], 2, 2, 0)
}

impl PcState {
    pub fn new(arch: &Architecture, seed: u64) -> Self {
        let mut r = rng::stream(seed, "pc-prediction");
        let mut p = |l: usize| {
            let spec = prediction_spec(arch, l);
            he_normal(&spec.weight_shape(), spec.fan_in(), &mut r)
        };
        PcState {
            prediction: [p(0), p(1), p(2)],
            reps: Vec::new(),
            errors: Vec::new(),
        }
    }
}

fn spec_of(p: &Tensor) -> ConvSpec {
    let s = p.shape();
    ConvSpec::new(s[1], s[0], s[2], 2, 0)
}

fn predict(p: &Tensor, upper: &Tensor, lower_shape: &[usize]) -> Result<Tensor> {
    conv2d_backward_input(upper, p, &spec_of(p), lower_shape[2], lower_shape[3])
}

/// Prediction errors `eps_0..eps_2` and energy for input `x` and reps `r_1..r_3`.
pub fn pc_energy(prediction: &[Tensor; 3], x: &Tensor, reps: &[Tensor]) -> Result<(Vec<Tensor>, f64)> {
    let mut errors = Vec::with_capacity(3);
    let mut energy = 0.0;
    for l in 0..3 {
        let lower = if l == 0 { x } else { &reps[l - 1] };
        let eps = lower.sub(&predict(&prediction[l], &reps[l], lower.shape())?)?;
        energy += eps.sum_sq();
        errors.push(eps);
    }
    Ok((errors, energy))
}

/// `dF/dr_l` for `l = 1..3`.
fn energy_grads(prediction: &[Tensor; 3], errors: &[Tensor]) -> Result<Vec<Tensor>> {
    (0..3)
        .map(|l| {
            let p = &prediction[l];
            let spec = spec_of(p);
            let mut g = conv2d_forward(&errors[l], p, &Tensor::zeros(&[spec.out_channels]), &spec)?;
            g.scale(-2.0);
            if l + 1 < 3 {
                g.axpy(2.0, &errors[l + 1])?;
            }
            Ok(g)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PcStepReport {
    pub step: StepStats,
    /// Energy before inference and after each of the `t_inf` steps.
    pub energies: Vec<f64>,
}

/// Gradient descent on `F` over `r_1..r_3` with the input clamped.
pub fn pc_infer(pc: &mut PcState, x: &Tensor, init: Vec<Tensor>, params: &PcParams) -> Result<Vec<f64>> {
    if params.t_inf < 1 {
        return Err(Error::Config("pc inference needs t_inf >= 1".into()));
    }
    let mut reps = init;
    let (mut errors, e0) = pc_energy(&pc.prediction, x, &reps)?;
    let mut energies = vec![e0];
    for _ in 0..params.t_inf {
        let grads = energy_grads(&pc.prediction, &errors)?;
        for (r, g) in reps.iter_mut().zip(&grads) {
            r.axpy(-params.alpha, g)?;
        }
        let (e, f) = pc_energy(&pc.prediction, x, &reps)?;
        if !f.is_finite() {
            return Err(Error::Numerical(format!("predictive coding energy became {f} during inference")));
        }
        errors = e;
        energies.push(f);
    }
    pc.reps = reps;
    pc.errors = errors;
    Ok(energies)
}

/// Feedforward init, `t_inf` inference steps, local weight updates, BP readout.
pub fn pc_infer_and_learn(
    state: &mut NetworkState,
    pc: &mut PcState,
    images: &Tensor,
    labels: &[usize],
    params: &PcParams,
    readout_lr: f64,
) -> Result<PcStepReport> {
    let (_, cache) = forward(state, images, BnMode::Train)?;
    let init: Vec<Tensor> = cache.blocks.iter().map(|b| b.output.clone()).collect();
    let energies = pc_infer(pc, images, init, params)?;
    let batch = images.shape()[0] as f64;
    let scale = params.eta_w / batch;

    for l in 0..3 {
        let spec = spec_of(&pc.prediction[l]);
        let (dp, _) = conv2d_backward_weights(&pc.reps[l], &pc.errors[l], &spec)?;
        pc.prediction[l].axpy(scale, &dp)?;
    }
    for (l, block) in state.convs.iter_mut().enumerate() {
        let bc = &cache.blocks[l];
        let correction = pc.reps[l].sub(&bc.output)?;
        let (dz, _, _) = block_local_backward(block, bc, &correction)?;
        let (dw, _) = conv2d_backward_weights(&dz, &bc.input, &block.spec)?;
        block.weight.axpy(scale, &dw)?;
    }

    let (logits, head) = head_forward(state, &pc.reps[2])?;
    let (loss, grad) = softmax_xent(&logits, labels)?;
    let (fc1, fc2, _) = head_backward(state, &head, &grad, None)?;
    apply_sgd(
        state,
        &Gradients {
            convs: Vec::new(),
            fc1,
            fc2,
        },
        readout_lr,
    )?;
    Ok(PcStepReport {
        step: StepStats {
            loss,
            correct: count_correct(&logits, labels),
        },
        energies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_he_normal;
    use crate::testutil::rand_tensor;

    fn arch() -> Architecture {
        Architecture {
            in_channels: 3,
            conv_widths: [4, 6, 8],
            fc_width: 8,
            num_classes: 10,
        }
    }

    #[test]
    fn energy_gradient_matches_finite_differences() {
        let a = arch();
        let pc = PcState::new(&a, 1);
        let x = rand_tensor(&[2, 3, 8, 8], 2);
        let reps = vec![
            rand_tensor(&[2, 4, 4, 4], 3),
            rand_tensor(&[2, 6, 2, 2], 4),
            rand_tensor(&[2, 8, 1, 1], 5),
        ];
        let (errors, _) = pc_energy(&pc.prediction, &x, &reps).unwrap();
        let grads = energy_grads(&pc.prediction, &errors).unwrap();
        let h = 1e-5;
        for l in 0..3 {
            for i in (0..reps[l].len()).step_by(3) {
                let mut p = reps.clone();
                p[l].data_mut()[i] += h;
                let mut m = reps.clone();
                m[l].data_mut()[i] -= h;
                let num = (pc_energy(&pc.prediction, &x, &p).unwrap().1 - pc_energy(&pc.prediction, &x, &m).unwrap().1)
                    / (2.0 * h);
                let ana = grads[l].data()[i];
                assert!((num - ana).abs() < 1e-6 * (1.0 + ana.abs()), "l{l} i{i}: {num} vs {ana}");
            }
        }
    }

    #[test]
    fn energy_non_increasing_at_default_rate() {
        let mut s = init_he_normal(&arch(), 6).unwrap();
        let mut pc = PcState::new(&arch(), 6);
        let x = rand_tensor(&[4, 3, 32, 32], 7).map(|v| v.abs());
        let (_, cache) = forward(&mut s, &x, BnMode::Train).unwrap();
        let init = cache.blocks.iter().map(|b| b.output.clone()).collect();
        let e = pc_infer(&mut pc, &x, init, &PcParams::default()).unwrap();
        assert_eq!(e.len(), 11);
        assert!(e.windows(2).all(|w| w[1] <= w[0]), "{e:?}");
        assert!(e[10] < e[0]);
    }

    #[test]
    fn zero_error_means_no_conv_update() {
        // zero prediction weights and an all-zero input and representation
        // stack give eps = 0 everywhere
        let a = arch();
        let mut s = init_he_normal(&a, 8).unwrap();
        let mut pc = PcState::new(&a, 8);
        for p in pc.prediction.iter_mut() {
            *p = Tensor::zeros(p.shape());
        }
        let x = Tensor::zeros(&[2, 3, 32, 32]);
        let before: Vec<Tensor> = s.convs.iter().map(|b| b.weight.clone()).collect();
        let report = pc_infer_and_learn(&mut s, &mut pc, &x, &[0, 1], &PcParams::default(), 0.01).unwrap();
        assert!(report.energies.iter().all(|&e| e == 0.0));
        for (b, w) in s.convs.iter().zip(&before) {
            assert_eq!(&b.weight, w);
        }
        assert!(pc.prediction.iter().all(|p| p.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn scalar_inference_step_by_hand() {
        let a = Architecture {
            in_channels: 1,
            conv_widths: [1, 1, 1],
            fc_width: 2,
            num_classes: 2,
        };
        let mut pc = PcState::new(&a, 0);
        pc.prediction[0] = Tensor::filled(&[1, 1, 2, 2], 0.5);
        pc.prediction[1] = Tensor::zeros(&[1, 1, 2, 2]);
        pc.prediction[2] = Tensor::zeros(&[1, 1, 2, 2]);
        let x = Tensor::filled(&[1, 1, 8, 8], 3.0);
        let reps = vec![
            Tensor::filled(&[1, 1, 4, 4], 2.0),
            Tensor::zeros(&[1, 1, 2, 2]),
            Tensor::zeros(&[1, 1, 1, 1]),
        ];
        // eps_0 = 3 - 0.5 * 2 = 2 on 64 pixels, eps_1 = 2 on 16, eps_2 = 0
        let (errors, f) = pc_energy(&pc.prediction, &x, &reps).unwrap();
        assert_eq!(f, 64.0 * 4.0 + 16.0 * 4.0);
        // dF/dr_1 = 2 eps_1 - 2 P_0^T eps_0 = 4 - 2 * (4 * 0.5 * 2) = -4
        let g = energy_grads(&pc.prediction, &errors).unwrap();
        assert!(g[0].data().iter().all(|&v| v == -4.0));
        let mut pc2 = pc.clone();
        let p = PcParams {
            t_inf: 1,
            ..PcParams::default()
        };
        pc_infer(&mut pc2, &x, reps, &p).unwrap();
        assert!(pc2.reps[0].data().iter().all(|&v| (v - 2.08).abs() < 1e-15));
    }
}
