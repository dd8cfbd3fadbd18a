use super::{count_correct, StepStats};
use crate::error::{Error, Result};
use crate::network::{apply_sgd, backward, forward, he_normal, Architecture, NetworkState};
use crate::rng;
use crate::tensor::{softmax_xent, BnMode, Tensor};

/// Fixed random matrices that replace `W^T` in the backward pass.
///
/// Each has the transposed shape of the forward weight it stands in for:
/// conv feedback is `[C_in, C_out, k, k]`, FC feedback is `[in, out]`.
/// Conv1 needs none since nothing is transported into the image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackWeights {
    pub conv2: Tensor,
    pub conv3: Tensor,
    pub fc1: Tensor,
    pub fc2: Tensor,
}

impl FeedbackWeights {
    /// Drawn once per run, scaled like the He init of the forward layer.
    pub fn random(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut r = rng::stream(seed, "feedback");
        let [c1, c2, c3] = arch.conv_widths;
        let (s2, s3) = (arch.conv_spec(1), arch.conv_spec(2));
        Ok(FeedbackWeights {
            conv2: he_normal(&[c1, c2, 3, 3], s2.fan_in(), &mut r),
            conv3: he_normal(&[c2, c3, 3, 3], s3.fan_in(), &mut r),
            fc1: he_normal(&[c3, arch.fc_width], c3, &mut r),
            fc2: he_normal(&[arch.fc_width, arch.num_classes], arch.fc_width, &mut r),
        })
    }

    /// Feedback equal to the transposed forward weights, which turns FA into BP.
    pub fn transposed_from(state: &NetworkState) -> Result<Self> {
        Ok(FeedbackWeights {
            conv2: state.convs[1].weight.transpose01()?,
            conv3: state.convs[2].weight.transpose01()?,
            fc1: state.fc1.weight.transpose2()?,
            fc2: state.fc2.weight.transpose2()?,
        })
    }

    /// Conv feedback for block `i` (1 or 2) rearranged to forward weight
    /// layout, ready for a transposed convolution.
    pub fn conv_forward_shaped(&self, block: usize) -> Result<Tensor> {
        match block {
            1 => self.conv2.transpose01(),
            2 => self.conv3.transpose01(),
            _ => Err(Error::Config(format!("no conv feedback for block {block}"))),
        }
    }

    pub fn check_shapes(&self, state: &NetworkState) -> Result<()> {
        let pairs = [
            ("conv2", &self.conv2, state.convs[1].weight.transpose01()?),
            ("conv3", &self.conv3, state.convs[2].weight.transpose01()?),
            ("fc1", &self.fc1, state.fc1.weight.transpose2()?),
            ("fc2", &self.fc2, state.fc2.weight.transpose2()?),
        ];
        for (name, fb, wt) in pairs {
            if fb.shape() != wt.shape() {
                return Err(Error::Config(format!(
                    "feedback {name} has shape {:?}, forward weight transposed is {:?}",
                    fb.shape(),
                    wt.shape()
                )));
            }
        }
        Ok(())
    }
}

/// One SGD step where errors travel backward through `feedback` instead of
/// the forward weights. The output delta and all local gradients
/// (including BatchNorm parameters) are unchanged from BP.
pub fn fa_step(
    state: &mut NetworkState,
    feedback: &FeedbackWeights,
    images: &Tensor,
    labels: &[usize],
    lr: f64,
) -> Result<StepStats> {
    feedback.check_shapes(state)?;
    let (logits, cache) = forward(state, images, BnMode::Train)?;
    let (loss, grad) = softmax_xent(&logits, labels)?;
    let grads = backward(state, &cache, &grad, Some(feedback))?;
    apply_sgd(state, &grads, lr)?;
    Ok(StepStats {
        loss,
        correct: count_correct(&logits, labels),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{head_backward, head_forward, init_he_normal};
    use crate::rules::bp_step;
    use crate::tensor::{affine_forward, affine_transport, relu_backward, relu_forward};
    use crate::testutil::rand_tensor;

    fn arch() -> Architecture {
        Architecture {
            in_channels: 3,
            conv_widths: [3, 4, 5],
            fc_width: 6,
            num_classes: 10,
        }
    }

    #[test]
    fn transposed_feedback_reproduces_bp() {
        let x = rand_tensor(&[4, 3, 32, 32], 1);
        let labels = [1, 2, 3, 9];
        let mut a = init_he_normal(&arch(), 2).unwrap();
        let mut b = a.clone();
        bp_step(&mut a, &x, &labels, 0.05).unwrap();
        let fb = FeedbackWeights::transposed_from(&b).unwrap();
        fa_step(&mut b, &fb, &x, &labels, 0.05).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_feedback_rejected() {
        let s = init_he_normal(&arch(), 2).unwrap();
        let mut fb = FeedbackWeights::random(&arch(), 2).unwrap();
        fb.fc1 = Tensor::zeros(&[3, 3]);
        assert!(matches!(fb.check_shapes(&s), Err(Error::Config(_))));
    }

    #[test]
    fn output_delta_is_unchanged_and_transport_uses_feedback() {
        let s = init_he_normal(&arch(), 3).unwrap();
        let fb = FeedbackWeights::random(&arch(), 4).unwrap();
        let conv3 = rand_tensor(&[2, 5, 4, 4], 5);
        let (logits, head) = head_forward(&s, &conv3).unwrap();
        let (_, grad) = softmax_xent(&logits, &[0, 7]).unwrap();
        let (fc1_bp, fc2_bp, _) = head_backward(&s, &head, &grad, None).unwrap();
        let (fc1_fa, fc2_fa, _) = head_backward(&s, &head, &grad, Some(&fb)).unwrap();
        // last layer update depends only on the output delta
        assert_eq!(fc2_bp, fc2_fa);
        assert_ne!(fc1_bp, fc1_fa);
        // hand transport: delta_fc1 = f'(z1) * (B2 delta2)
        let d1 = relu_backward(&affine_transport(&grad, &fb.fc2).unwrap(), &head.fc1_pre).unwrap();
        let mut expect = Tensor::zeros(&[6, 5]);
        for o in 0..6 {
            for i in 0..5 {
                expect.data_mut()[o * 5 + i] =
                    (0..2).map(|b| d1.data()[b * 6 + o] * head.gap.data()[b * 5 + i]).sum();
            }
        }
        assert!(fc1_fa.weight.max_abs_diff(&expect) < 1e-14);
    }

    #[test]
    fn two_layer_linear_toy_matches_hand_arithmetic() {
        // x -> W1 -> h -> W2 -> y, linear, loss gradient at y is g.
        let w2 = Tensor::from_vec(&[1, 2], vec![0.5, -1.0]).unwrap();
        let b2 = Tensor::from_vec(&[2, 1], vec![2.0, 3.0]).unwrap();
        let g = Tensor::from_vec(&[1, 1], vec![0.25]).unwrap();
        // FA: delta_h = B2 g = [0.5, 0.75]; BP would give W2^T g = [0.125, -0.25]
        let d_fa = affine_transport(&g, &b2).unwrap();
        assert_eq!(d_fa.data(), &[0.5, 0.75]);
        let d_bp = affine_transport(&g, &w2.transpose2().unwrap()).unwrap();
        assert_eq!(d_bp.data(), &[0.125, -0.25]);
        let h = relu_forward(&affine_forward(&Tensor::filled(&[1, 2], 1.0), &Tensor::filled(&[2, 2], 1.0), &Tensor::zeros(&[2])).unwrap());
        assert_eq!(h.data(), &[2.0, 2.0]);
    }
}
