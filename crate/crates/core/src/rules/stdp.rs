//! Pair-based STDP on first-spike times of rate-coded activations.

use rand::Rng;

use super::{count_correct, StdpParams, StepStats};
use crate::error::Result;
use crate::network::{apply_sgd, forward, head_backward, Gradients, NetworkState};
use crate::rng::StreamRng;
use crate::tensor::{softmax_xent, BnMode, ConvSpec, Tensor};

/// Marker for a neuron that stayed silent for the whole window.
pub const NO_SPIKE: i16 = -1;

/// Weight change for a post-minus-pre spike delay in milliseconds:
/// `A+ exp(-dt/tau+)` for `dt > 0`, `-A- exp(dt/tau-)` for `dt < 0`, 0 at `dt = 0`.
pub fn stdp_kernel(dt_ms: f64, p: &StdpParams) -> f64 {
    if dt_ms > 0.0 {
        p.a_plus * (-dt_ms / p.tau_plus_ms).exp()
    } else if dt_ms < 0.0 {
        -p.a_minus * (dt_ms / p.tau_minus_ms).exp()
    } else {
        0.0
    }
}

/// Bernoulli spike trains over `timesteps` steps with per-step probability
/// `activation / max(activation)`; returns the first spike step per neuron
/// or [`NO_SPIKE`].
pub fn first_spike_times(act: &[f64], timesteps: usize, rng: &mut StreamRng) -> Vec<i16> {
    let max = act.iter().cloned().fold(0.0, f64::max).max(1e-8);
    act.iter()
        .map(|&a| {
            let p = (a / max).clamp(0.0, 1.0);
            if p <= 0.0 {
                return NO_SPIKE;
            }
            for t in 0..timesteps {
                if rng.random::<f64>() < p {
                    return t as i16;
                }
            }
            NO_SPIKE
        })
        .collect()
}

/// Mean kernel value per synapse of a conv layer, averaged over batch items
/// and output positions. Pairs where either side never spiked (including
/// zero-padding) contribute zero.
pub fn stdp_weight_update(
    pre: &[i16],
    pre_shape: [usize; 4],
    post: &[i16],
    post_shape: [usize; 4],
    spec: &ConvSpec,
    params: &StdpParams,
) -> Tensor {
    let [b, c, h, w] = pre_shape;
    let [_, o_ch, oh, ow] = post_shape;
    let (k, s, pad) = (spec.kernel_size, spec.stride, spec.padding);
    let t = params.timesteps as i16;
    // kernel indexed by (t_post - t_pre) + (T - 1)
    let table: Vec<f64> = (-(t - 1)..t)
        .map(|d| stdp_kernel(d as f64 * params.timestep_ms, params))
        .collect();
    let mut dw = Tensor::zeros(&spec.weight_shape());
    let acc = dw.data_mut();
    for bi in 0..b {
        for o in 0..o_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let tp = post[((bi * o_ch + o) * oh + oy) * ow + ox];
                    if tp == NO_SPIKE {
                        continue;
                    }
                    for ci in 0..c {
                        let pbase = (bi * c + ci) * h * w;
                        let wbase = (o * c + ci) * k * k;
                        for ky in 0..k {
                            let iy = (oy * s + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..k {
                                let ix = (ox * s + kx) as isize - pad as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let tq = pre[pbase + iy as usize * w + ix as usize];
                                if tq != NO_SPIKE {
                                    acc[wbase + ky * k + kx] += table[(tp - tq + t - 1) as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    dw.scale(1.0 / (b * oh * ow) as f64);
    dw
}

/// STDP on Conv1-3 (pre = block input, post = post-ReLU conv output), then
/// a BP step on the FC readout using the feedforward features.
pub fn stdp_step(
    state: &mut NetworkState,
    images: &Tensor,
    labels: &[usize],
    params: &StdpParams,
    readout_lr: f64,
    rng: &mut StreamRng,
) -> Result<StepStats> {
    let (logits, cache) = forward(state, images, BnMode::Train)?;
    for (block, bc) in state.convs.iter_mut().zip(&cache.blocks) {
        let pre_shape = bc.input.dims4("stdp pre")?;
        let post_shape = bc.post_relu.dims4("stdp post")?;
        let pre = first_spike_times(bc.input.data(), params.timesteps, rng);
        let post = first_spike_times(bc.post_relu.data(), params.timesteps, rng);
        let dw = stdp_weight_update(&pre, pre_shape, &post, post_shape, &block.spec, params);
        block.weight.axpy(params.lr, &dw)?;
    }
    let (loss, grad) = softmax_xent(&logits, labels)?;
    let (fc1, fc2, _) = head_backward(state, &cache.head, &grad, None)?;
    apply_sgd(
        state,
        &Gradients {
            convs: Vec::new(),
            fc1,
            fc2,
        },
        readout_lr,
    )?;
    Ok(StepStats {
        loss,
        correct: count_correct(&logits, labels),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn kernel_values() {
        let p = StdpParams::default();
        let e = 0.003 * (-1f64).exp();
        assert!((stdp_kernel(20.0, &p) - e).abs() < 1e-15);
        assert!((stdp_kernel(-20.0, &p) + e).abs() < 1e-15);
        assert!((stdp_kernel(20.0, &p) - 0.0011036).abs() < 1e-7);
        assert_eq!(stdp_kernel(0.0, &p), 0.0);
        assert!((stdp_kernel(1e-9, &p) - 0.003).abs() < 1e-12);
    }

    #[test]
    fn kernel_is_odd() {
        let p = StdpParams::default();
        for i in 1..200 {
            let dt = i as f64 * 0.37;
            assert_eq!(stdp_kernel(dt, &p), -stdp_kernel(-dt, &p));
        }
    }

    #[test]
    fn silent_neurons_never_spike() {
        let mut r = rng::stream(0, "t");
        let t = first_spike_times(&[0.0, 1.0, 0.0], 10, &mut r);
        assert_eq!(t[0], NO_SPIKE);
        assert_eq!(t[2], NO_SPIKE);
        // probability 1 fires at the first step
        assert_eq!(t[1], 0);
    }

    #[test]
    fn single_synapse_pairing() {
        let p = StdpParams::default();
        let spec = ConvSpec::new(1, 1, 1, 1, 0);
        // pre at step 0, post at step 10 -> dt = 20 ms with 2 ms steps
        let p10 = StdpParams {
            timesteps: 11,
            ..p
        };
        let dw = stdp_weight_update(&[0], [1, 1, 1, 1], &[10], [1, 1, 1, 1], &spec, &p10);
        assert!((dw.data()[0] - 0.003 * (-1f64).exp()).abs() < 1e-15);
        let dw = stdp_weight_update(&[10], [1, 1, 1, 1], &[0], [1, 1, 1, 1], &spec, &p10);
        assert!((dw.data()[0] + 0.003 * (-1f64).exp()).abs() < 1e-15);
        let dw = stdp_weight_update(&[NO_SPIKE], [1, 1, 1, 1], &[3], [1, 1, 1, 1], &spec, &p10);
        assert_eq!(dw.data()[0], 0.0);
    }

    #[test]
    fn update_averages_over_positions() {
        let p = StdpParams::default();
        let spec = ConvSpec::new(1, 1, 1, 1, 0);
        // two positions: one LTP pairing at dt=+1 step, one silent post
        let dw = stdp_weight_update(&[0, 0], [1, 1, 1, 2], &[1, NO_SPIKE], [1, 1, 1, 2], &spec, &p);
        assert!((dw.data()[0] - stdp_kernel(2.0, &p) / 2.0).abs() < 1e-18);
    }
}
