use super::{count_correct, StepStats};
use crate::error::Result;
use crate::network::{apply_sgd, backward, forward, NetworkState};
use crate::tensor::{softmax_xent, BnMode, Tensor};

/// One SGD step on mean softmax cross-entropy with exact gradients.
pub fn bp_step(state: &mut NetworkState, images: &Tensor, labels: &[usize], lr: f64) -> Result<StepStats> {
    let (logits, cache) = forward(state, images, BnMode::Train)?;
    let (loss, grad) = softmax_xent(&logits, labels)?;
    let grads = backward(state, &cache, &grad, None)?;
    apply_sgd(state, &grads, lr)?;
    Ok(StepStats {
        loss,
        correct: count_correct(&logits, labels),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{init_he_normal, Architecture};
    use crate::testutil::rand_tensor;

    fn arch() -> Architecture {
        Architecture {
            in_channels: 3,
            conv_widths: [3, 4, 4],
            fc_width: 8,
            num_classes: 10,
        }
    }

    #[test]
    fn zero_rate_changes_only_bn_stats() {
        let mut s = init_he_normal(&arch(), 1).unwrap();
        let before = s.clone();
        bp_step(&mut s, &rand_tensor(&[4, 3, 32, 32], 2), &[0, 1, 2, 3], 0.0).unwrap();
        let mut expect = before.clone();
        for (e, b) in expect.convs.iter_mut().zip(&s.convs) {
            e.stats = b.stats.clone();
        }
        assert_eq!(s, expect);
    }

    #[test]
    fn small_step_descends() {
        let x = rand_tensor(&[6, 3, 32, 32], 4);
        let labels = [0, 1, 2, 3, 4, 5];
        let s0 = init_he_normal(&arch(), 3).unwrap();
        let loss_of = |s: &NetworkState| {
            let (l, _) = forward(&mut s.clone(), &x, BnMode::Train).unwrap();
            softmax_xent(&l, &labels).unwrap().0
        };
        let before = loss_of(&s0);
        for lr in [1e-1, 1e-2, 1e-3] {
            let mut s = s0.clone();
            bp_step(&mut s, &x, &labels, lr).unwrap();
            assert!(loss_of(&s) < before, "lr {lr}");
        }
    }
}
